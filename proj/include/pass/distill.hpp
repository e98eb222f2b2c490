// Copyright 2026 The pass-reid Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "pass/multicrop.hpp"
#include "pass/ops.hpp"
#include "pass/params.hpp"
#include "pass/vit.hpp"

namespace pass {

struct Temperatures {
  double student = 0.1;
  double teacher = 0.04;

  void validate() const {
    if (!(student > 0.0) || !(teacher > 0.0))
      throw std::invalid_argument("temperatures must be positive");
    if (teacher > student) throw std::invalid_argument("teacher temperature must not exceed student's");
  }
};

/// Probability vector produced by a temperature softmax.
struct ProbDist {
  std::vector<double> p;
};

/// softmax((logits - center) / tau); `center` may be empty.
inline ProbDist sharpen(std::span<const double> logits, double tau, std::span<const double> center = {}) {
  if (!(tau > 0.0)) throw std::invalid_argument("sharpen: tau must be positive");
  if (!center.empty() && center.size() != logits.size())
    throw ShapeError("sharpen: center has " + std::to_string(center.size()) + " entries, logits " +
                     std::to_string(logits.size()));
  ProbDist out;
  out.p.resize(logits.size());
  double mx = -INFINITY;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (!std::isfinite(logits[k])) throw std::domain_error("sharpen: non-finite logit");
    out.p[k] = (logits[k] - (center.empty() ? 0.0 : center[k])) / tau;
    mx = std::max(mx, out.p[k]);
  }
  double s = 0.0;
  for (double& v : out.p) s += (v = std::exp(v - mx));
  for (double& v : out.p) v /= s;
  return out;
}

inline double entropy(const ProbDist& d) {
  double h = 0.0;
  for (double v : d.p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

/// Running mean of teacher logits, one K-vector per head role:
/// role 0 is the [CLS] head, roles 1.. are the part head(s).
struct CenterState {
  std::vector<Tensor> centers;
  double momentum = 0.9;

  CenterState() = default;
  CenterState(std::size_t roles, std::size_t k, double m) : centers(roles, Tensor(Shape{k}, 0.0)), momentum(m) {}
};

/// center <- m * center + (1 - m) * mean over rows of `batch` (n x K).
inline Tensor update_center(const Tensor& center, const Tensor& batch, double momentum) {
  if (batch.rows() == 0) throw std::invalid_argument("update_center: empty batch");
  if (batch.cols() != center.numel()) throw shape_error("update_center", center.shape(), batch.shape());
  Tensor out(center.shape());
  const std::size_t n = batch.rows(), k = batch.cols();
  for (std::size_t j = 0; j < k; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += batch[i * k + j];
    out[j] = momentum * center[j] + (1.0 - momentum) * (mu / static_cast<double>(n));
  }
  return out;
}

/// Cosine momentum schedule for the teacher, lambda(0) = start, lambda(total) = end.
struct EmaSchedule {
  double start = 0.996;
  double end = 1.0;
  std::size_t total_steps = 1;

  double at(std::size_t step) const { return cosine_schedule(start, end, step, total_steps); }
};

/// theta_t <- lambda * theta_t + (1 - lambda) * theta_s for every parameter.
inline void ema_update(const ParamStore& student, ParamStore& teacher, double lambda) {
  if (!student.same_layout(teacher)) throw std::invalid_argument("ema_update: parameter layouts differ");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("ema_update: lambda outside [0, 1]");
  for (std::size_t i = 0; i < student.size(); ++i) {
    const Tensor& s = student.items()[i].value;
    Tensor& t = teacher.items()[i].value;
    for (std::size_t k = 0; k < s.numel(); ++k) t[k] = lambda * t[k] + (1.0 - lambda) * s[k];
  }
}

// ---------------------------------------------------------------------------
// Loss structure

/// A student-side prediction: global view m, or local j of area i.
struct ViewRef {
  bool global = true;
  int index = 0;  // m (global) or j (local), 0-based
  int area = 0;   // 1-based for locals
  friend bool operator==(const ViewRef&, const ViewRef&) = default;
};

/// One cross-entropy H(P_t(token, global m), P_s(token, view)).
struct LossTerm {
  int teacher_global = 0;
  int teacher_token = 0;  // 0 = [CLS], i = [PART]_i
  ViewRef student;
  int student_token = 0;
};

/// Terms of the [PART]_i objective: locals of area i and the other globals.
inline std::vector<LossTerm> part_loss_terms(int M, int J, int part) {
  std::vector<LossTerm> terms;
  for (int m = 0; m < M; ++m)
    for (int j = 0; j < J; ++j) terms.push_back({m, part, ViewRef{false, j, part}, part});
  for (int m1 = 0; m1 < M; ++m1)
    for (int m2 = 0; m2 < M; ++m2)
      if (m1 != m2) terms.push_back({m1, part, ViewRef{true, m2, 0}, part});
  return terms;
}

/// Terms of the [CLS] objective: every local of every area and the other globals.
inline std::vector<LossTerm> cls_loss_terms(int M, int L, int J) {
  std::vector<LossTerm> terms;
  for (int m = 0; m < M; ++m)
    for (int i = 1; i <= L; ++i)
      for (int j = 0; j < J; ++j) terms.push_back({m, 0, ViewRef{false, j, i}, 0});
  for (int m1 = 0; m1 < M; ++m1)
    for (int m2 = 0; m2 < M; ++m2)
      if (m1 != m2) terms.push_back({m1, 0, ViewRef{true, m2, 0}, 0});
  return terms;
}

/// Teacher probabilities (constants) and student log-probabilities (on tape)
/// for one image's view set.
struct DistillOutputs {
  int M = 0, L = 0, J = 0;
  std::vector<Tensor> teacher_cls;                // [m] -> K
  std::vector<std::vector<Tensor>> teacher_part;  // [m][i-1] -> K
  std::vector<Var> student_global_cls;            // [m] -> 1 x K log-probs
  std::vector<std::vector<Var>> student_global_part;  // [m][i-1]
  std::vector<std::vector<Var>> student_local_cls;    // [i-1][j]
  std::vector<std::vector<Var>> student_local_part;   // [i-1][j]

  const Tensor& teacher(int m, int token) const {
    if (m < 0 || m >= static_cast<int>(teacher_cls.size()))
      throw std::out_of_range("missing teacher output for global " + std::to_string(m));
    if (token == 0) return teacher_cls[static_cast<std::size_t>(m)];
    const auto& row = teacher_part[static_cast<std::size_t>(m)];
    if (token < 1 || token > static_cast<int>(row.size()))
      throw std::out_of_range("missing teacher [PART]_" + std::to_string(token) + " output");
    return row[static_cast<std::size_t>(token - 1)];
  }

  const Var& student(const ViewRef& v, int token) const {
    auto pick = [&](const std::vector<Var>& row, int k, const char* what) -> const Var& {
      if (k < 0 || k >= static_cast<int>(row.size()) || !row[static_cast<std::size_t>(k)].valid())
        throw std::out_of_range(std::string("missing student output: ") + what);
      return row[static_cast<std::size_t>(k)];
    };
    if (v.global) {
      if (token == 0) return pick(student_global_cls, v.index, "global [CLS]");
      if (v.index < 0 || v.index >= static_cast<int>(student_global_part.size()))
        throw std::out_of_range("missing student output: global view");
      return pick(student_global_part[static_cast<std::size_t>(v.index)], token - 1, "global [PART]");
    }
    if (v.area < 1 || v.area > static_cast<int>(student_local_cls.size()))
      throw std::out_of_range("missing student output: local area " + std::to_string(v.area));
    const auto a = static_cast<std::size_t>(v.area - 1);
    if (token == 0) return pick(student_local_cls[a], v.index, "local [CLS]");
    if (token != v.area) throw std::logic_error("local view of area " + std::to_string(v.area) +
                                                " carries no [PART]_" + std::to_string(token));
    return pick(student_local_part[a], v.index, "local [PART]");
  }
};

/// H(a, b) = -sum_t a_t log b_t with b given as log-probabilities.
inline Var cross_entropy(const Tensor& target, const Var& log_probs) {
  if (target.numel() != log_probs.value().numel())
    throw shape_error("cross_entropy", target.shape(), log_probs.shape());
  Var t = log_probs.tape()->constant(target.reshaped(log_probs.shape()));
  return neg(sum(mul(log_probs, t)));
}

inline Var sum_terms(const DistillOutputs& out, const std::vector<LossTerm>& terms) {
  if (terms.empty()) throw std::invalid_argument("loss has no terms");
  std::vector<Var> parts;
  parts.reserve(terms.size());
  for (const LossTerm& t : terms) {
    if (t.teacher_token != t.student_token) throw std::logic_error("loss term compares different tokens");
    parts.push_back(reshape(cross_entropy(out.teacher(t.teacher_global, t.teacher_token),
                                          out.student(t.student, t.student_token)),
                            Shape{1, 1}));
  }
  return sum(concat_rows(parts));
}

/// Raw sum of the [PART]_i cross-entropies.
inline Var part_loss(const DistillOutputs& out, int part) {
  if (part < 1 || part > out.L) throw std::out_of_range("part_loss: part index out of range");
  return sum_terms(out, part_loss_terms(out.M, out.J, part));
}

/// Raw sum of the [CLS] cross-entropies.
inline Var cls_loss(const DistillOutputs& out) { return sum_terms(out, cls_loss_terms(out.M, out.L, out.J)); }

struct LossBreakdown {
  Var total;
  double cls = 0.0;
  std::vector<double> parts;
};

/// cls/|cls terms| + (1/L) sum_i part_i/|part terms|, or the plain sum of all
/// raw terms when `raw_sums` is set.
inline LossBreakdown total_loss(const DistillOutputs& out, bool raw_sums = false) {
  LossBreakdown b;
  const double n_cls = static_cast<double>(cls_loss_terms(out.M, out.L, out.J).size());
  const double n_part = static_cast<double>(out.M * out.J + out.M * (out.M - 1));
  Var c = cls_loss(out);
  Var total = raw_sums ? c : scale(c, 1.0 / n_cls);
  b.cls = total.value().item();
  for (int i = 1; i <= out.L; ++i) {
    Var p = part_loss(out, i);
    Var term = raw_sums ? p : scale(p, 1.0 / (n_part * out.L));
    b.parts.push_back(raw_sums ? p.value().item() : p.value().item() / n_part);
    total = add(total, term);
  }
  b.total = total;
  return b;
}

// ---------------------------------------------------------------------------
// Training

struct DistillConfig {
  Temperatures temps;
  double teacher_temp_final = 0.04;
  double teacher_temp_warmup_frac = 0.1;
  bool centering = true;
  double center_momentum = 0.9;
  double ema_start = 0.996;
  double ema_end = 1.0;
  bool ema_per_epoch = false;  // teacher frozen within an epoch, EMA at epoch end
  std::size_t steps_per_epoch = 100;
  bool raw_sums = false;
  double lr = 5e-4;
  double min_lr = 1e-6;
  double warmup_frac = 0.1;
  double weight_decay = 0.04;
  double clip_norm = 3.0;
  std::size_t total_steps = 1000;
  int batch_size = 8;
};

/// Teacher temperature at `step`: linear warmup from the base value over the
/// first warmup fraction of training, then constant.
inline double teacher_temperature(const DistillConfig& cfg, std::size_t step) {
  const double warm = cfg.teacher_temp_warmup_frac * static_cast<double>(cfg.total_steps);
  if (warm <= 0.0 || static_cast<double>(step) >= warm) return cfg.teacher_temp_final;
  const double f = static_cast<double>(step) / warm;
  return cfg.temps.teacher + f * (cfg.teacher_temp_final - cfg.temps.teacher);
}

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double cls_loss = 0.0;
  std::vector<double> part_losses;
  double lambda = 0.0;
  double tau_t = 0.0;
  double teacher_entropy = 0.0;
  double lr = 0.0;

  std::string to_text() const {
    std::ostringstream os;
    char buf[64];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    os << "step=" << step << " loss=" << num(loss) << " cls_loss=" << num(cls_loss) << " part_loss=";
    for (std::size_t i = 0; i < part_losses.size(); ++i) os << (i ? "," : "") << num(part_losses[i]);
    os << " lambda=" << num(lambda) << " tau_t=" << num(tau_t) << " teacher_entropy=" << num(teacher_entropy)
       << " lr=" << num(lr);
    return os.str();
  }
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Worker count from PASS_NUM_THREADS (default 1).
inline int worker_threads() {
  if (const char* env = std::getenv("PASS_NUM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = static_cast<std::size_t>(t); i < n; i += static_cast<std::size_t>(threads)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::size_t center_roles(const BackboneConfig& cfg) { return 1 + static_cast<std::size_t>(cfg.num_parts); }
inline std::size_t part_center_role(const BackboneConfig&, int part) { return static_cast<std::size_t>(part); }

/// Everything the pre-training loop owns.
class PretrainState {
 public:
  PretrainState(const BackboneConfig& backbone, const MultiCropConfig& crops, const DistillConfig& distill,
                std::uint64_t seed)
      : backbone_(backbone),
        crops_(crops),
        distill_(distill),
        seed_(seed),
        student_(backbone, mix_seed(seed, 1)),
        teacher_(student_),
        centers_(center_roles(backbone), static_cast<std::size_t>(backbone.proj_dim), distill.center_momentum),
        optimizer_(AdamWConfig{0.9, 0.999, 1e-8, distill.weight_decay, distill.clip_norm}) {
    distill_.temps.validate();
    if (crops_.num_parts != backbone_.num_parts)
      throw std::invalid_argument("multicrop L=" + std::to_string(crops_.num_parts) + " but backbone L=" +
                                  std::to_string(backbone_.num_parts));
    if (crops_.global_height % backbone_.patch_size || crops_.global_width % backbone_.patch_size ||
        crops_.local_height % backbone_.patch_size || crops_.local_width % backbone_.patch_size)
      throw std::invalid_argument("view sizes must be divisible by the patch size");
  }

  const BackboneConfig& backbone() const { return backbone_; }
  const MultiCropConfig& crops() const { return crops_; }
  const DistillConfig& distill() const { return distill_; }
  std::uint64_t seed() const { return seed_; }
  NetworkParams& student() { return student_; }
  NetworkParams& teacher() { return teacher_; }
  const NetworkParams& student() const { return student_; }
  const NetworkParams& teacher() const { return teacher_; }
  CenterState& centers() { return centers_; }
  const CenterState& centers() const { return centers_; }
  AdamW& optimizer() { return optimizer_; }
  const AdamW& optimizer() const { return optimizer_; }
  std::size_t step() const { return step_; }
  void set_step(std::size_t s) { step_ = s; }

  std::size_t teacher_forwards = 0;
  std::size_t student_forwards = 0;

 private:
  BackboneConfig backbone_;
  MultiCropConfig crops_;
  DistillConfig distill_;
  std::uint64_t seed_;
  NetworkParams student_;
  NetworkParams teacher_;
  CenterState centers_;
  AdamW optimizer_;
  std::size_t step_ = 0;
};

namespace detail {

struct TeacherGlobal {
  Tensor cls_logits;               // K
  std::vector<Tensor> part_logits;  // L x K
};

inline std::vector<double> row_of(const Var& v) {
  return std::vector<double>(v.value().data().begin(), v.value().data().end());
}

inline TeacherGlobal teacher_forward(const BoundParams& p, const BackboneConfig& cfg, const Image& view) {
  ViewLogits lg = project_view(p, cfg, forward_features(p, cfg, view, TokenLayout::global(cfg.num_parts)));
  TeacherGlobal out;
  out.cls_logits = Tensor::vector(row_of(lg.cls));
  for (const Var& v : lg.parts) out.part_logits.push_back(Tensor::vector(row_of(v)));
  return out;
}

inline Var student_log_probs(const Var& logits, double tau) { return log_softmax(scale(logits, 1.0 / tau)); }

}  // namespace detail

/// Student log-probabilities for every view of a view set (all on one tape).
inline void forward_student(const BoundParams& p, const BackboneConfig& cfg, const ViewSet& vs, double tau_s,
                            DistillOutputs& out) {
  const int M = static_cast<int>(vs.globals.size());
  const int L = cfg.num_parts;
  out.M = M;
  out.L = L;
  out.student_global_cls.clear();
  out.student_global_part.assign(static_cast<std::size_t>(M), {});
  out.student_local_cls.assign(static_cast<std::size_t>(L), {});
  out.student_local_part.assign(static_cast<std::size_t>(L), {});
  for (int m = 0; m < M; ++m) {
    ViewLogits lg = project_view(p, cfg, forward_features(p, cfg, vs.globals[static_cast<std::size_t>(m)],
                                                          vs.global_layouts[static_cast<std::size_t>(m)]));
    out.student_global_cls.push_back(detail::student_log_probs(lg.cls, tau_s));
    for (int i = 1; i <= L; ++i)
      out.student_global_part[static_cast<std::size_t>(m)].push_back(detail::student_log_probs(lg.part(i), tau_s));
  }
  for (std::size_t v = 0; v < vs.locals.size(); ++v) {
    const int area = vs.local_area[v];
    ViewLogits lg = project_view(p, cfg, forward_features(p, cfg, vs.locals[v], vs.local_layouts[v]));
    out.student_local_cls[static_cast<std::size_t>(area - 1)].push_back(detail::student_log_probs(lg.cls, tau_s));
    out.student_local_part[static_cast<std::size_t>(area - 1)].push_back(
        detail::student_log_probs(lg.part(area), tau_s));
  }
  out.J = L > 0 ? static_cast<int>(out.student_local_cls.front().size()) : 0;
  for (const auto& row : out.student_local_cls)
    if (static_cast<int>(row.size()) != out.J) throw std::logic_error("unequal local views per area");
}

inline std::uint64_t view_seed(const PretrainState& s, std::size_t image_in_batch) {
  return mix_seed(s.seed(), (static_cast<std::uint64_t>(s.step()) << 20) + image_in_batch);
}

/// One optimization step on a batch of images. All views go through the
/// student; only the global views go through the teacher, without gradients.
inline StepRecord pretrain_step(PretrainState& state, std::span<const Image> batch) {
  if (batch.empty()) throw std::invalid_argument("pretrain_step: empty batch");
  const BackboneConfig& cfg = state.backbone();
  const DistillConfig& dc = state.distill();
  const MultiCropConfig& mc = state.crops();
  const std::size_t B = batch.size();
  const int M = mc.num_globals, L = cfg.num_parts;
  const std::size_t step = state.step();
  const double tau_t = teacher_temperature(dc, step);
  const double tau_s = dc.temps.student;

  std::vector<ViewSet> views(B);
  for (std::size_t b = 0; b < B; ++b) views[b] = build_view_set(batch[b], mc, view_seed(state, b));

  // Teacher: globals only, no tape gradients.
  std::vector<std::vector<detail::TeacherGlobal>> teacher(B);
  parallel_for(B, worker_threads(), [&](std::size_t b) {
    Tape tape;
    BoundParams tp(tape, state.teacher().store(), false);
    for (const Image& g : views[b].globals) teacher[b].push_back(detail::teacher_forward(tp, cfg, g));
  });
  state.teacher_forwards += B * static_cast<std::size_t>(M);

  CenterState& centers = state.centers();
  auto center_of = [&](std::size_t role) -> std::span<const double> {
    if (!dc.centering) return {};
    return centers.centers[role].data();
  };
  double entropy_sum = 0.0;
  std::vector<DistillOutputs> outputs(B);
  for (std::size_t b = 0; b < B; ++b) {
    DistillOutputs& o = outputs[b];
    for (const auto& tg : teacher[b]) {
      ProbDist pc = sharpen(tg.cls_logits.data(), tau_t, center_of(0));
      entropy_sum += entropy(pc);
      o.teacher_cls.push_back(Tensor::vector(pc.p));
      std::vector<Tensor> parts;
      for (int i = 1; i <= L; ++i)
        parts.push_back(Tensor::vector(
            sharpen(tg.part_logits[static_cast<std::size_t>(i - 1)].data(), tau_t,
                    center_of(part_center_role(cfg, i)))
                .p));
      o.teacher_part.push_back(std::move(parts));
    }
  }

  // Student: one tape per image; gradients of the batch-mean loss.
  struct ImageResult {
    std::vector<Tensor> grads;
    double loss = 0.0, cls = 0.0;
    std::vector<double> parts;
  };
  std::vector<ImageResult> results(B);
  parallel_for(B, worker_threads(), [&](std::size_t b) {
    Tape tape;
    BoundParams sp(tape, state.student().store(), true);
    forward_student(sp, cfg, views[b], tau_s, outputs[b]);
    LossBreakdown lb = total_loss(outputs[b], dc.raw_sums);
    Var loss = scale(lb.total, 1.0 / static_cast<double>(B));
    tape.backward(loss);
    ImageResult& r = results[b];
    r.loss = lb.total.value().item();
    r.cls = lb.cls;
    r.parts = lb.parts;
    for (std::size_t i = 0; i < state.student().store().size(); ++i) r.grads.push_back(tape.grad(sp[i]));
    outputs[b].student_global_cls.clear();
    outputs[b].student_global_part.clear();
    outputs[b].student_local_cls.clear();
    outputs[b].student_local_part.clear();
  });
  state.student_forwards += B * static_cast<std::size_t>(M + L * mc.locals());

  StepRecord rec;
  rec.step = step;
  rec.tau_t = tau_t;
  rec.part_losses.assign(static_cast<std::size_t>(L), 0.0);
  ParamStore& ss = state.student().store();
  ss.zero_grad();
  for (std::size_t b = 0; b < B; ++b) {
    const ImageResult& r = results[b];
    rec.loss += r.loss / static_cast<double>(B);
    rec.cls_loss += r.cls / static_cast<double>(B);
    for (int i = 0; i < L; ++i) rec.part_losses[static_cast<std::size_t>(i)] += r.parts[static_cast<std::size_t>(i)] / static_cast<double>(B);
    for (std::size_t i = 0; i < ss.size(); ++i) {
      Tensor& g = ss.items()[i].grad;
      for (std::size_t k = 0; k < g.numel(); ++k) g[k] += r.grads[i][k];
    }
  }
  rec.teacher_entropy = entropy_sum / static_cast<double>(B * static_cast<std::size_t>(M));

  const EmaSchedule ema{dc.ema_start, dc.ema_end, dc.total_steps};
  rec.lambda = ema.at(step);
  if (!std::isfinite(rec.loss)) {
    double cn = 0.0;
    for (double v : centers.centers[0].data()) cn += v * v;
    std::ostringstream os;
    os << "pre-training diverged at step " << step << ": loss=" << rec.loss << " lambda=" << rec.lambda
       << " tau_s=" << tau_s << " tau_t=" << tau_t << " center_norm=" << std::sqrt(cn);
    throw TrainingDiverged(os.str());
  }

  const std::size_t warmup = static_cast<std::size_t>(dc.warmup_frac * static_cast<double>(dc.total_steps));
  rec.lr = warmup_cosine(dc.lr, dc.min_lr, warmup, step, dc.total_steps);
  state.optimizer().step(ss, rec.lr);

  if (!dc.ema_per_epoch) {
    ema_update(ss, state.teacher().store(), rec.lambda);
  } else if ((step + 1) % std::max<std::size_t>(dc.steps_per_epoch, 1) == 0) {
    ema_update(ss, state.teacher().store(), rec.lambda);
  }

  if (dc.centering) {
    const std::size_t K = static_cast<std::size_t>(cfg.proj_dim);
    std::vector<std::vector<double>> rows(centers.centers.size());
    for (const auto& img : teacher)
      for (const auto& tg : img) {
        rows[0].insert(rows[0].end(), tg.cls_logits.data().begin(), tg.cls_logits.data().end());
        for (int i = 1; i <= L; ++i) {
          const auto& pl = tg.part_logits[static_cast<std::size_t>(i - 1)];
          auto& dst = rows[part_center_role(cfg, i)];
          dst.insert(dst.end(), pl.data().begin(), pl.data().end());
        }
      }
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t n = rows[r].size() / K;
      centers.centers[r] = update_center(centers.centers[r], Tensor(Shape{n, K}, std::move(rows[r])),
                                         centers.momentum);
    }
  }
  state.set_step(step + 1);
  return rec;
}

}  // namespace pass
