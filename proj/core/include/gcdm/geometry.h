/*
 * Copyright 2026 The GCDM-CPP Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef GCDM_GEOMETRY_H_
#define GCDM_GEOMETRY_H_

#include <cstdint>

#include <Eigen/Core>

namespace gcdm::geometry {

// Proper rigid motion x -> rotation * x + translation.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  // Throws InvalidArgument unless rotation is orthonormal with det +1
  // (both within 1e-10).
  void Validate() const;
};

// Per-edge local frame. `a` follows the displacement, `b` the cross product
// of the two positions, `c = a x b`. Degenerate axes are zero vectors.
struct FrameTriple {
  Eigen::Vector3d a = Eigen::Vector3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
};

inline constexpr double kDefaultFrameEps = 1e-8;

struct Centralized {
  Eigen::MatrixX3d centered;
  Eigen::Vector3d cog;
};

Centralized Centralize(const Eigen::MatrixX3d& coords);

// Frames are origin dependent; callers pass centralized coordinates.
FrameTriple ComputeFrames(const Eigen::Vector3d& x_i, const Eigen::Vector3d& x_j,
                          double eps = kDefaultFrameEps);

Eigen::MatrixX3d ApplyTransform(const RigidTransform& t,
                                const Eigen::MatrixX3d& coords);

// Rotation uniform over SO(3) (unit quaternion from four normal draws);
// translation uniform in [-translation_box, translation_box]^3.
RigidTransform RandomRotation(std::uint64_t seed, double translation_box = 0.0);

// Largest absolute column mean; zero for centered input.
double MaxAbsCog(const Eigen::MatrixX3d& coords);

}  // namespace gcdm::geometry

#endif  // GCDM_GEOMETRY_H_
