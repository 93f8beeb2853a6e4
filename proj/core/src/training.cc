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

#include "gcdm/training.h"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>
#include <map>
#include <sstream>
#include <thread>

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

#include "gcdm/errors.h"
#include "gcdm/hash.h"

namespace gcdm::training {

using diffusion::LatentState;
using diffusion::NoisedExample;
using diffusion::Noise;

int NumThreads() {
  if (const char* env = std::getenv("GCDM_NUM_THREADS"); env != nullptr && *env) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n >= 1 && n <= 1024) return static_cast<int>(n);
    throw ConfigError("GCDM_NUM_THREADS must be an integer in [1, 1024]");
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp<unsigned>(hw, 1, 8));
}

void AdamWConfig::Validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer.beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("optimizer.epsilon must be > 0");
}

OptimizerState InitOptimizer(const ParameterSet& params, const AdamWConfig& config,
                             int batch_size) {
  config.Validate();
  if (batch_size < 1) throw ConfigError("optimizer.batch_size must be >= 1");
  OptimizerState s;
  s.config = config;
  s.batch_size = batch_size;
  s.m = params.ZerosLike();
  s.v = params.ZerosLike();
  return s;
}

void AdamWUpdate(ParameterSet& params, const ParameterSet& grads,
                 OptimizerState& state) {
  params.CheckCompatible(grads);
  params.CheckCompatible(state.m);
  if (const std::string bad = grads.FirstNonFinite(); !bad.empty()) {
    throw NumericalError("non-finite gradient in parameter " + bad +
                         "; step rejected");
  }
  const AdamWConfig& c = state.config;
  ++state.step;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - c.learning_rate * c.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Eigen::MatrixXd& p = params.at(i);
    const Eigen::MatrixXd& g = grads.at(i);
    Eigen::MatrixXd& m = state.m.at(i);
    Eigen::MatrixXd& v = state.v.at(i);
    p *= decay;
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.array() -= c.learning_rate * (m.array() / bias1) /
                 ((v.array() / bias2).sqrt() + c.epsilon);
  }
}

namespace {

// Flushes subnormal results to zero on the calling thread while in scope.
// Far-apart atoms push activations through the subnormal range, where x86
// arithmetic slows down several fold.
class FlushSubnormals {
 public:
#if defined(__SSE2__)
  FlushSubnormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040); }
  ~FlushSubnormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

struct StackedBatch {
  gcpnet::GraphBatch graph;
  Eigen::MatrixXd z_x;
  Eigen::MatrixXd z_h;
  Eigen::VectorXd time;
};

StackedBatch Stack(std::span<const LatentState> latents, const Model& model, int T) {
  std::vector<int> sizes;
  int total = 0;
  for (const auto& z : latents) {
    sizes.push_back(static_cast<int>(z.z_x.rows()));
    total += sizes.back();
  }
  StackedBatch b;
  b.z_x.resize(3 * total, 1);
  b.z_h.resize(total, model.config.feature_dim);
  b.time.resize(total);
  Eigen::MatrixX3d all_coords(total, 3);
  int offset = 0;
  for (const auto& z : latents) {
    const auto n = z.z_x.rows();
    all_coords.middleRows(offset, n) = z.z_x;
    b.z_h.middleRows(offset, n) = z.z_h;
    b.time.segment(offset, n).setConstant(static_cast<double>(z.t) / T);
    offset += static_cast<int>(n);
  }
  b.z_x = gcpnet::ToVectors(all_coords);
  b.graph = model.config.cutoff
                ? gcpnet::GraphBatch::WithCutoff(sizes, all_coords, *model.config.cutoff)
                : gcpnet::GraphBatch::FullyConnected(sizes);
  return b;
}

std::vector<Noise> Unstack(const Eigen::MatrixXd& eps_x, const Eigen::MatrixXd& eps_h,
                           const gcpnet::GraphBatch& graph) {
  const Eigen::MatrixX3d x = gcpnet::FromVectors(eps_x);
  std::vector<Noise> out;
  for (int g = 0; g < graph.num_graphs(); ++g) {
    const auto gi = static_cast<std::size_t>(g);
    out.push_back(Noise{x.middleRows(graph.offsets[gi], graph.sizes[gi]),
                        eps_h.middleRows(graph.offsets[gi], graph.sizes[gi])});
  }
  return out;
}

struct ChunkResult {
  std::vector<Noise> predictions;
  ParameterSet grads;
  double lt_sum = 0.0;
};

// Forward (and backward when `with_grads`) on one chunk; the loss is scaled
// by 1/`batch_total` so chunk gradients add up to the batch gradient.
ChunkResult RunChunk(std::span<const NoisedExample> chunk, const Model& model, int T,
                     bool with_grads, double batch_total) {
  const FlushSubnormals flush;
  std::vector<LatentState> latents;
  Eigen::Index total = 0;
  for (const auto& ex : chunk) {
    latents.push_back(ex.z);
    total += ex.x.rows();
  }
  const StackedBatch b = Stack(latents, model, T);
  ChunkResult r;
  if (with_grads) r.grads = model.params.ZerosLike();
  ad::Tape tape;
  gcpnet::ParamBinder binder(tape, model.params, with_grads ? &r.grads : nullptr);
  const gcpnet::DenoiserVars out =
      gcpnet::DenoiserForwardBatch(binder, b.graph, b.z_x, b.z_h, b.time, model.config);

  Eigen::MatrixX3d target_x(total, 3);
  Eigen::MatrixXd target_h(total, model.config.feature_dim);
  Eigen::Index offset = 0;
  for (const auto& ex : chunk) {
    target_x.middleRows(offset, ex.x.rows()) = ex.noise.eps_x;
    target_h.middleRows(offset, ex.x.rows()) = ex.noise.eps_h;
    offset += ex.x.rows();
  }
  ad::Var loss = ad::Scale(
      ad::Add(ad::SquaredNorm(ad::Sub(out.eps_x, tape.Constant(gcpnet::ToVectors(target_x)))),
              ad::SquaredNorm(ad::Sub(out.eps_h, tape.Constant(target_h)))),
      0.5 / batch_total);
  r.lt_sum = loss.value()(0, 0) * batch_total;
  if (with_grads) tape.Backward(loss);
  r.predictions = Unstack(out.eps_x.value(), out.eps_h.value(), b.graph);
  return r;
}

std::vector<std::span<const NoisedExample>> SplitChunks(
    std::span<const NoisedExample> examples, int parts) {
  std::vector<std::span<const NoisedExample>> chunks;
  const std::size_t n = examples.size();
  const std::size_t p = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, parts)));
  for (std::size_t k = 0; k < p; ++k) {
    const std::size_t begin = k * n / p;
    const std::size_t end = (k + 1) * n / p;
    if (end > begin) chunks.push_back(examples.subspan(begin, end - begin));
  }
  return chunks;
}

std::vector<ChunkResult> RunChunks(std::span<const NoisedExample> examples,
                                   const Model& model, int T, bool with_grads,
                                   int num_threads) {
  const auto chunks = SplitChunks(examples, num_threads);
  const double total = static_cast<double>(examples.size());
  std::vector<ChunkResult> results(chunks.size());
  if (chunks.size() == 1) {
    results[0] = RunChunk(chunks[0], model, T, with_grads, total);
    return results;
  }
  std::vector<std::future<ChunkResult>> futures;
  for (const auto& chunk : chunks) {
    futures.push_back(std::async(std::launch::async, [&model, chunk, T, with_grads, total] {
      return RunChunk(chunk, model, T, with_grads, total);
    }));
  }
  for (std::size_t k = 0; k < futures.size(); ++k) results[k] = futures[k].get();
  return results;
}

}  // namespace

GcpDenoiser::GcpDenoiser(const Model& model, int T, int max_batch)
    : model_(model), T_(T), max_batch_(std::max(1, max_batch)) {}

std::vector<Noise> GcpDenoiser::Predict(std::span<const LatentState> batch) const {
  std::vector<std::span<const LatentState>> chunks;
  for (std::size_t begin = 0; begin < batch.size();
       begin += static_cast<std::size_t>(max_batch_)) {
    const std::size_t len =
        std::min(batch.size() - begin, static_cast<std::size_t>(max_batch_));
    chunks.push_back(batch.subspan(begin, len));
  }
  auto run = [this](std::span<const LatentState> chunk) {
    const FlushSubnormals flush;
    const StackedBatch b = Stack(chunk, model_, T_);
    ad::Tape tape;
    gcpnet::ParamBinder binder(tape, model_.params);
    const gcpnet::DenoiserVars out = gcpnet::DenoiserForwardBatch(
        binder, b.graph, b.z_x, b.z_h, b.time, model_.config);
    return Unstack(out.eps_x.value(), out.eps_h.value(), b.graph);
  };
  std::vector<std::vector<Noise>> parts(chunks.size());
  const std::size_t workers = static_cast<std::size_t>(NumThreads());
  for (std::size_t start = 0; start < chunks.size(); start += workers) {
    std::vector<std::future<std::vector<Noise>>> futures;
    const std::size_t stop = std::min(chunks.size(), start + workers);
    if (stop - start == 1) {
      parts[start] = run(chunks[start]);
      continue;
    }
    for (std::size_t k = start; k < stop; ++k) {
      futures.push_back(std::async(std::launch::async, run, chunks[k]));
    }
    for (std::size_t k = start; k < stop; ++k) parts[k] = futures[k - start].get();
  }
  std::vector<Noise> out;
  out.reserve(batch.size());
  for (auto& p : parts) {
    for (auto& n : p) out.push_back(std::move(n));
  }
  return out;
}

GradientResult ComputeGradients(std::span<const NoisedExample> examples,
                                const Model& model,
                                const diffusion::NoiseSchedule& schedule,
                                const moldata::FeatureScaler& scaler,
                                int num_threads) {
  if (examples.empty()) throw InvalidArgument("empty batch");
  if (num_threads <= 0) num_threads = NumThreads();
  std::vector<ChunkResult> chunks =
      RunChunks(examples, model, schedule.T(), true, num_threads);
  GradientResult r;
  r.grads = std::move(chunks[0].grads);
  for (std::size_t k = 1; k < chunks.size(); ++k) {
    for (std::size_t i = 0; i < r.grads.size(); ++i) r.grads.at(i) += chunks[k].grads.at(i);
  }
  for (auto& c : chunks) {
    for (auto& p : c.predictions) r.predictions.push_back(std::move(p));
  }
  r.loss = diffusion::BreakdownFromPredictions(examples, r.predictions, schedule, scaler);
  return r;
}

double EvaluateLt(std::span<const NoisedExample> examples, const Model& model, int T) {
  if (examples.empty()) throw InvalidArgument("empty batch");
  return RunChunk(examples, model, T, false, static_cast<double>(examples.size())).lt_sum /
         static_cast<double>(examples.size());
}

diffusion::LossBreakdown TrainStep(std::span<const moldata::MoleculeGraph> batch,
                                   Model& model, OptimizerState& opt,
                                   const diffusion::NoiseSchedule& schedule,
                                   const moldata::FeatureScaler& scaler, Rng& rng) {
  if (batch.empty()) throw InvalidArgument("empty training batch");
  if (const std::string bad = model.params.FirstNonFinite(); !bad.empty()) {
    throw NumericalError("non-finite parameter " + bad);
  }
  const auto examples = diffusion::DrawTrainingExamples(batch, schedule, scaler, rng);
  GradientResult g = ComputeGradients(examples, model, schedule, scaler);
  AdamWUpdate(model.params, g.grads, opt);
  return g.loss;
}

std::vector<moldata::MoleculeGraph> DrawBatch(
    std::span<const moldata::MoleculeGraph> data, int batch_size, Rng& rng) {
  if (data.empty()) throw InvalidArgument("cannot draw a batch from no data");
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<moldata::MoleculeGraph> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) out.push_back(data[pick(rng)]);
  return out;
}

double ValidationLoss(std::span<const moldata::MoleculeGraph> molecules,
                      const Model& model, const diffusion::NoiseSchedule& schedule,
                      const moldata::FeatureScaler& scaler, std::uint64_t seed,
                      int batch_size) {
  if (molecules.empty()) throw InvalidArgument("empty validation set");
  Rng rng(seed);
  const auto examples = diffusion::DrawTrainingExamples(molecules, schedule, scaler, rng);
  double total = 0.0;
  const std::span<const NoisedExample> all(examples);
  const int threads = NumThreads();
  for (std::size_t begin = 0; begin < all.size(); begin += static_cast<std::size_t>(batch_size)) {
    const auto chunk = all.subspan(begin, std::min(all.size() - begin,
                                                   static_cast<std::size_t>(batch_size)));
    for (const auto& r : RunChunks(chunk, model, schedule.T(), false, threads)) {
      total += r.lt_sum;
    }
  }
  return total / static_cast<double>(examples.size());
}

GradientCheckReport CheckGradients(const Model& model,
                                   std::span<const NoisedExample> instance,
                                   const diffusion::NoiseSchedule& schedule,
                                   const GradientCheckOptions& options) {
  const moldata::FeatureScaler scaler;
  const GradientResult analytic = ComputeGradients(instance, model, schedule, scaler, 1);
  Model probe = model;
  GradientCheckReport report;
  for (std::size_t i = 0; i < probe.params.size(); ++i) {
    GradientCheckEntry entry;
    entry.path = probe.params.name(i);
    Eigen::MatrixXd& p = probe.params.at(i);
    const Eigen::MatrixXd& g = analytic.grads.at(i);
    if (!g.allFinite()) {
      throw NumericalError("non-finite analytic gradient in " + entry.path);
    }
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const double saved = p(k);
      p(k) = saved + options.step;
      const double up = EvaluateLt(instance, probe, schedule.T());
      p(k) = saved - options.step;
      const double down = EvaluateLt(instance, probe, schedule.T());
      p(k) = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double abs_err = std::abs(numeric - g(k));
      const double denom = std::max({std::abs(numeric), std::abs(g(k)), options.floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, abs_err / denom);
    }
    if (entry.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = entry.max_rel_error;
      report.worst_path = entry.path;
    }
    report.entries.push_back(entry);
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

diffusion::NoiseSchedule ScheduleDescriptor::Build() const {
  return diffusion::NoiseSchedule::Build(T, kind, precision);
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'G', 'C', 'D', 'M', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void Bytes(std::string_view s) { out_.append(s); }
  void U32(std::uint32_t v) { Uint(v, 4); }
  void U64(std::uint64_t v) { Uint(v, 8); }
  void I32(std::int32_t v) { U32(static_cast<std::uint32_t>(v)); }
  void F64(double v) { U64(std::bit_cast<std::uint64_t>(v)); }
  void Str(std::string_view s) {
    U32(static_cast<std::uint32_t>(s.size()));
    Bytes(s);
  }
  std::string& data() { return out_; }

 private:
  void Uint(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::string_view Bytes(std::size_t n) {
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint is truncated");
    std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t U32() { return static_cast<std::uint32_t>(Uint(4)); }
  std::uint64_t U64() { return Uint(8); }
  std::int32_t I32() { return static_cast<std::int32_t>(U32()); }
  double F64() { return std::bit_cast<double>(U64()); }
  std::string Str() { return std::string(Bytes(U32())); }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::uint64_t Uint(int n) {
    const std::string_view b = Bytes(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[static_cast<std::size_t>(i)]))
           << (8 * i);
    }
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string FormatDouble(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string ConfigBlock(const Checkpoint& c) {
  const gcpnet::GCPNetConfig& m = c.model.config;
  std::ostringstream out;
  out << "model.num_layers=" << m.num_layers << '\n'
      << "model.message_passes=" << m.message_passes << '\n'
      << "model.node_scalars=" << m.node_scalars << '\n'
      << "model.node_vectors=" << m.node_vectors << '\n'
      << "model.edge_scalars=" << m.edge_scalars << '\n'
      << "model.edge_vectors=" << m.edge_vectors << '\n'
      << "model.aggregation=" << (m.aggregation == gcpnet::Aggregation::kSum ? "sum" : "mean") << '\n'
      << "model.use_frames=" << (m.use_frames ? 1 : 0) << '\n'
      << "model.use_sma=" << (m.use_sma ? 1 : 0) << '\n'
      << "model.zero_init_heads=" << (m.zero_init_heads ? 1 : 0) << '\n'
      << "model.rbf_max=" << FormatDouble(m.rbf_max) << '\n'
      << "model.cutoff=" << (m.cutoff ? FormatDouble(*m.cutoff) : "none") << '\n'
      << "model.frame_eps=" << FormatDouble(m.frame_eps) << '\n'
      << "model.feature_dim=" << m.feature_dim << '\n'
      << "schedule.kind=" << diffusion::ScheduleKindName(c.schedule.kind) << '\n'
      << "schedule.T=" << c.schedule.T << '\n'
      << "schedule.precision=" << FormatDouble(c.schedule.precision) << '\n'
      << "scaler.categorical_scale=" << FormatDouble(c.scaler.categorical_scale) << '\n'
      << "scaler.integer_scale=" << FormatDouble(c.scaler.integer_scale) << '\n'
      << "optimizer.learning_rate=" << FormatDouble(c.optimizer.config.learning_rate) << '\n'
      << "optimizer.weight_decay=" << FormatDouble(c.optimizer.config.weight_decay) << '\n'
      << "optimizer.beta1=" << FormatDouble(c.optimizer.config.beta1) << '\n'
      << "optimizer.beta2=" << FormatDouble(c.optimizer.config.beta2) << '\n'
      << "optimizer.epsilon=" << FormatDouble(c.optimizer.config.epsilon) << '\n'
      << "optimizer.batch_size=" << c.optimizer.batch_size << '\n'
      << "optimizer.step=" << c.optimizer.step << '\n';
  return out.str();
}

class ConfigMap {
 public:
  explicit ConfigMap(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw CheckpointError("malformed config line: " + line);
      values_[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  const std::string& Get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw CheckpointError("config block lacks " + key);
    return it->second;
  }
  double Double(const std::string& key) const {
    const std::string& s = Get(key);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw CheckpointError("bad number for " + key);
    }
    return v;
  }
  std::int64_t Int(const std::string& key) const {
    const std::string& s = Get(key);
    std::int64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw CheckpointError("bad integer for " + key);
    }
    return v;
  }

 private:
  std::map<std::string, std::string> values_;
};

void WriteTensors(Writer& w, const ParameterSet& set, const std::string& prefix) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Eigen::MatrixXd& m = set.at(i);
    w.Str(prefix + set.name(i));
    w.U64(static_cast<std::uint64_t>(m.rows()));
    w.U64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.size(); ++k) w.F64(m(k));
  }
}

}  // namespace

std::string RngState(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void RestoreRng(Rng& rng, const std::string& state) {
  std::istringstream in(state);
  in >> rng;
  if (in.fail()) throw CheckpointError("invalid rng state");
}

std::string SerializeCheckpoint(const Checkpoint& ckpt) {
  ckpt.model.params.CheckCompatible(ckpt.optimizer.m);
  ckpt.model.params.CheckCompatible(ckpt.optimizer.v);
  Writer w;
  w.Bytes(std::string_view(kMagic, sizeof(kMagic)));
  w.U32(ckpt.version);
  w.Str(ConfigBlock(ckpt));
  w.U64(3 * ckpt.model.params.size());
  WriteTensors(w, ckpt.model.params, "");
  WriteTensors(w, ckpt.optimizer.m, "adam_m/");
  WriteTensors(w, ckpt.optimizer.v, "adam_v/");
  w.U32(static_cast<std::uint32_t>(ckpt.size_counts.size()));
  for (const auto& [n, count] : ckpt.size_counts) {
    w.I32(n);
    w.U64(static_cast<std::uint64_t>(count));
  }
  w.Str(ckpt.rng_state);
  const std::uint64_t digest = Fnv1a(w.data());
  w.U64(digest);
  return std::move(w.data());
}

Checkpoint DeserializeCheckpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 12) throw CheckpointError("checkpoint is truncated");
  if (bytes.compare(0, sizeof(kMagic), std::string_view(kMagic, sizeof(kMagic))) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  {
    Reader trailer(std::string_view(bytes).substr(bytes.size() - 8));
    if (trailer.U64() != Fnv1a(std::string_view(bytes).substr(0, bytes.size() - 8))) {
      Reader probe(bytes);
      probe.Bytes(sizeof(kMagic));
      const std::uint32_t version = probe.U32();
      if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
      }
      throw CheckpointError("checkpoint is corrupt or truncated (digest mismatch)");
    }
  }
  Reader r(std::string_view(bytes).substr(0, bytes.size() - 8));
  r.Bytes(sizeof(kMagic));
  Checkpoint c;
  c.version = r.U32();
  if (c.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const ConfigMap cfg(r.Str());
  gcpnet::GCPNetConfig& m = c.model.config;
  m.num_layers = static_cast<int>(cfg.Int("model.num_layers"));
  m.message_passes = static_cast<int>(cfg.Int("model.message_passes"));
  m.node_scalars = static_cast<int>(cfg.Int("model.node_scalars"));
  m.node_vectors = static_cast<int>(cfg.Int("model.node_vectors"));
  m.edge_scalars = static_cast<int>(cfg.Int("model.edge_scalars"));
  m.edge_vectors = static_cast<int>(cfg.Int("model.edge_vectors"));
  m.aggregation = cfg.Get("model.aggregation") == "sum" ? gcpnet::Aggregation::kSum
                                                       : gcpnet::Aggregation::kMean;
  m.use_frames = cfg.Int("model.use_frames") != 0;
  m.use_sma = cfg.Int("model.use_sma") != 0;
  m.zero_init_heads = cfg.Int("model.zero_init_heads") != 0;
  m.rbf_max = cfg.Double("model.rbf_max");
  if (cfg.Get("model.cutoff") != "none") m.cutoff = cfg.Double("model.cutoff");
  m.frame_eps = cfg.Double("model.frame_eps");
  m.feature_dim = static_cast<int>(cfg.Int("model.feature_dim"));
  try {
    m.Validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("invalid model config: ") + e.what());
  }
  auto kind = diffusion::ParseScheduleKind(cfg.Get("schedule.kind"));
  if (!kind) throw CheckpointError("unknown schedule kind");
  c.schedule.kind = *kind;
  c.schedule.T = static_cast<int>(cfg.Int("schedule.T"));
  c.schedule.precision = cfg.Double("schedule.precision");
  c.scaler.categorical_scale = cfg.Double("scaler.categorical_scale");
  c.scaler.integer_scale = cfg.Double("scaler.integer_scale");
  c.optimizer.config.learning_rate = cfg.Double("optimizer.learning_rate");
  c.optimizer.config.weight_decay = cfg.Double("optimizer.weight_decay");
  c.optimizer.config.beta1 = cfg.Double("optimizer.beta1");
  c.optimizer.config.beta2 = cfg.Double("optimizer.beta2");
  c.optimizer.config.epsilon = cfg.Double("optimizer.epsilon");
  c.optimizer.batch_size = static_cast<int>(cfg.Int("optimizer.batch_size"));
  c.optimizer.step = cfg.Int("optimizer.step");

  const ParameterSet expected = gcpnet::InitParameters(m, 0);
  const std::uint64_t count = r.U64();
  if (count != 3 * expected.size()) {
    throw CheckpointError("tensor count " + std::to_string(count) +
                          " does not match the model config (" +
                          std::to_string(3 * expected.size()) + ")");
  }
  ParameterSet* targets[] = {&c.model.params, &c.optimizer.m, &c.optimizer.v};
  const char* prefixes[] = {"", "adam_m/", "adam_v/"};
  for (int part = 0; part < 3; ++part) {
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const std::string name = r.Str();
      const std::uint64_t rows = r.U64();
      const std::uint64_t cols = r.U64();
      const std::string want = prefixes[part] + expected.name(i);
      if (name != want || rows != static_cast<std::uint64_t>(expected.at(i).rows()) ||
          cols != static_cast<std::uint64_t>(expected.at(i).cols())) {
        throw CheckpointError("tensor '" + name + "' (" + std::to_string(rows) + "x" +
                              std::to_string(cols) + ") does not match config, expected '" +
                              want + "'");
      }
      Eigen::MatrixXd value(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      for (Eigen::Index k = 0; k < value.size(); ++k) value(k) = r.F64();
      targets[part]->Add(expected.name(i), std::move(value));
    }
  }
  const std::uint32_t sizes = r.U32();
  for (std::uint32_t k = 0; k < sizes; ++k) {
    const int n = r.I32();
    c.size_counts[n] = static_cast<std::int64_t>(r.U64());
  }
  c.rng_state = r.Str();
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
  return c;
}

void SaveCheckpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = SerializeCheckpoint(ckpt);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {
std::string ReadBinary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
}  // namespace

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  return DeserializeCheckpoint(ReadBinary(path));
}

std::string CheckpointHash(const std::filesystem::path& path) {
  return HexDigest(Fnv1a(ReadBinary(path)));
}

moldata::SizeDistribution SizesFromCounts(const std::map<int, std::int64_t>& counts) {
  moldata::SizeDistribution d;
  std::int64_t total = 0;
  for (const auto& [n, c] : counts) total += c;
  if (total <= 0) throw InvalidArgument("empty size distribution");
  for (const auto& [n, c] : counts) {
    if (c <= 0) continue;
    d.counts[n] = static_cast<std::size_t>(c);
    d.probs[n] = static_cast<double>(c) / static_cast<double>(total);
  }
  return d;
}

}  // namespace gcdm::training
