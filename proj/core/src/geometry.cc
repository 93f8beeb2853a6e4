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

#include "gcdm/geometry.h"

#include <random>

#include <Eigen/Geometry>

#include "gcdm/errors.h"

namespace gcdm::geometry {

void RigidTransform::Validate() const {
  const double orth =
      (rotation.transpose() * rotation - Eigen::Matrix3d::Identity())
          .cwiseAbs()
          .maxCoeff();
  if (!(orth <= 1e-10) || !(std::abs(rotation.determinant() - 1.0) <= 1e-10) ||
      !translation.allFinite()) {
    throw InvalidArgument("rotation is not a proper orthonormal matrix");
  }
}

Centralized Centralize(const Eigen::MatrixX3d& coords) {
  Centralized out;
  out.cog = coords.colwise().mean().transpose();
  out.centered = coords.rowwise() - out.cog.transpose();
  return out;
}

FrameTriple ComputeFrames(const Eigen::Vector3d& x_i, const Eigen::Vector3d& x_j,
                          double eps) {
  FrameTriple f;
  const Eigen::Vector3d d = x_i - x_j;
  const double d_norm = d.norm();
  if (d_norm >= eps) f.a = d / d_norm;
  const Eigen::Vector3d cross = x_i.cross(x_j);
  const double cross_norm = cross.norm();
  if (cross_norm >= eps) f.b = cross / cross_norm;
  f.c = f.a.cross(f.b);
  return f;
}

Eigen::MatrixX3d ApplyTransform(const RigidTransform& t,
                                const Eigen::MatrixX3d& coords) {
  return (coords * t.rotation.transpose()).rowwise() + t.translation.transpose();
}

RigidTransform RandomRotation(std::uint64_t seed, double translation_box) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::Quaterniond q;
  do {
    q = Eigen::Quaterniond(normal(rng), normal(rng), normal(rng), normal(rng));
  } while (q.norm() < 1e-12);
  q.normalize();
  RigidTransform t;
  t.rotation = q.toRotationMatrix();
  std::uniform_real_distribution<double> box(-translation_box, translation_box);
  if (translation_box > 0.0) {
    t.translation = Eigen::Vector3d(box(rng), box(rng), box(rng));
  }
  return t;
}

double MaxAbsCog(const Eigen::MatrixX3d& coords) {
  return coords.colwise().mean().cwiseAbs().maxCoeff();
}

}  // namespace gcdm::geometry
