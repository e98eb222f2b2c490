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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "pass/finetune.hpp"
#include "pass/multicrop.hpp"

namespace pass {

struct PseudoLabeling {
  std::vector<int> assignments;  // -1 = outlier
  int num_clusters = 0;
  int epoch = -1;

  std::size_t outliers() const {
    return static_cast<std::size_t>(std::count(assignments.begin(), assignments.end(), -1));
  }
  void validate() const {
    for (int a : assignments)
      if (a < -1 || a >= num_clusters)
        throw std::logic_error("pseudo label " + std::to_string(a) + " outside [0," + std::to_string(num_clusters) +
                               ")");
  }
};

struct ClusterConfig {
  std::string algorithm = "dbscan";  // dbscan | kmeans
  double eps = 0.5;                  // on L2-normalized features
  int min_points = 4;
  int kmeans_k = 0;                  // used by kmeans and by the small-set fallback
  int kmeans_iters = 50;
  std::size_t kmeans_fallback_below = 0;  // fewer images than this -> kmeans
  bool outliers_as_singletons = false;
  double temperature = 0.05;
  double momentum = 0.2;
  double norm_floor = 1e-6;
};

/// Row-wise L2 normalization of an n x D matrix.
inline Tensor normalize_rows(const Tensor& x, double floor = 1e-12) {
  Tensor out = x;
  const std::size_t n = x.rows(), d = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += x[i * d + k] * x[i * d + k];
    const double inv = 1.0 / std::max(std::sqrt(s), floor);
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] *= inv;
  }
  return out;
}

namespace detail {

inline double row_dist2(const Tensor& x, std::size_t i, std::size_t j) {
  const std::size_t d = x.cols();
  double s = 0;
  for (std::size_t k = 0; k < d; ++k) {
    const double t = x[i * d + k] - x[j * d + k];
    s += t * t;
  }
  return s;
}

inline void singletons(PseudoLabeling& lab) {
  for (int& a : lab.assignments)
    if (a < 0) a = lab.num_clusters++;
}

}  // namespace detail

/// DBSCAN on L2-normalized rows, Euclidean distance. Cluster ids follow the
/// index of each cluster's first core point.
inline PseudoLabeling dbscan(const Tensor& features, double eps, int min_points) {
  const std::size_t n = features.rows();
  if (n < 2) throw std::invalid_argument("cluster: need at least 2 features");
  if (eps < 0 || min_points < 1) throw std::invalid_argument("dbscan: eps must be >= 0 and min_points >= 1");
  const Tensor x = normalize_rows(features);
  const double e2 = eps * eps;
  std::vector<std::vector<std::size_t>> nbr(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (detail::row_dist2(x, i, j) <= e2) nbr[i].push_back(j);
  auto core = [&](std::size_t i) { return nbr[i].size() >= static_cast<std::size_t>(min_points); };
  PseudoLabeling lab;
  lab.assignments.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (lab.assignments[i] >= 0 || !core(i)) continue;
    const int id = lab.num_clusters++;
    std::vector<std::size_t> stack{i};
    lab.assignments[i] = id;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      if (!core(p)) continue;
      for (std::size_t q : nbr[p]) {
        if (lab.assignments[q] >= 0) continue;
        lab.assignments[q] = id;
        stack.push_back(q);
      }
    }
  }
  if (lab.num_clusters == 0)
    throw std::runtime_error("cluster: every point is an outlier at eps=" + std::to_string(eps) +
                             "; increase eps or lower min_points");
  return lab;
}

/// Lloyd's k-means with k-means++ seeding on L2-normalized rows.
inline PseudoLabeling kmeans(const Tensor& features, int k, int iters, std::uint64_t seed) {
  const std::size_t n = features.rows(), d = features.cols();
  if (n < 2) throw std::invalid_argument("cluster: need at least 2 features");
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw std::invalid_argument("kmeans: k=" + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
  const Tensor x = normalize_rows(features);
  Rng rng(seed);
  std::vector<std::size_t> centers{static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n))};
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  while (centers.size() < static_cast<std::size_t>(k)) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], detail::row_dist2(x, i, centers.back()));
      total += best[i];
    }
    std::size_t pick = 0;
    if (total <= 0) {
      pick = centers.size();  // all points coincide with centers; take any
    } else {
      double r = uniform01(rng) * total;
      for (pick = 0; pick + 1 < n && r >= best[pick]; ++pick) r -= best[pick];
    }
    centers.push_back(pick);
  }
  Tensor c(Shape{static_cast<std::size_t>(k), d});
  for (std::size_t j = 0; j < centers.size(); ++j)
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(centers[j] * d), d,
                c.data().begin() + static_cast<std::ptrdiff_t>(j * d));
  PseudoLabeling lab;
  lab.assignments.assign(n, 0);
  lab.num_clusters = k;
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int arg = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        double s = 0;
        for (std::size_t t = 0; t < d; ++t) {
          const double diff = x[i * d + t] - c[static_cast<std::size_t>(j) * d + t];
          s += diff * diff;
        }
        if (s < bd) bd = s, arg = j;
      }
      changed = changed || lab.assignments[i] != arg || it == 0;
      lab.assignments[i] = arg;
    }
    if (!changed) break;
    Tensor sum(c.shape(), 0.0);
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = static_cast<std::size_t>(lab.assignments[i]);
      ++count[a];
      for (std::size_t t = 0; t < d; ++t) sum[a * d + t] += x[i * d + t];
    }
    for (std::size_t j = 0; j < static_cast<std::size_t>(k); ++j)
      if (count[j] > 0)
        for (std::size_t t = 0; t < d; ++t) c[j * d + t] = sum[j * d + t] / count[j];
  }
  // Drop empty clusters so ids stay dense.
  std::vector<int> remap(static_cast<std::size_t>(k), -1);
  int next = 0;
  for (int& a : lab.assignments) {
    if (remap[static_cast<std::size_t>(a)] < 0) remap[static_cast<std::size_t>(a)] = next++;
    a = remap[static_cast<std::size_t>(a)];
  }
  lab.num_clusters = next;
  return lab;
}

inline PseudoLabeling cluster(const Tensor& features, const ClusterConfig& cfg, std::uint64_t seed = 0) {
  PseudoLabeling lab;
  const bool small = features.rows() < cfg.kmeans_fallback_below;
  if (cfg.algorithm == "kmeans" || small) {
    lab = kmeans(features, cfg.kmeans_k, cfg.kmeans_iters, seed);
  } else if (cfg.algorithm == "dbscan") {
    lab = dbscan(features, cfg.eps, cfg.min_points);
  } else {
    throw std::invalid_argument("unknown clustering algorithm '" + cfg.algorithm + "'");
  }
  if (cfg.outliers_as_singletons) detail::singletons(lab);
  return lab;
}

struct PrototypeBank {
  Tensor prototypes;  // num_clusters x D, unit rows
  double momentum = 0.2;

  std::size_t size() const { return prototypes.rank() == 2 ? prototypes.rows() : 0; }
};

inline PrototypeBank build_prototypes(const Tensor& features, const PseudoLabeling& lab, double momentum = 0.2,
                                      double norm_floor = 1e-6) {
  lab.validate();
  const std::size_t n = features.rows(), d = features.cols();
  if (lab.assignments.size() != n)
    throw std::invalid_argument("build_prototypes: " + std::to_string(lab.assignments.size()) + " labels for " +
                                std::to_string(n) + " features");
  const auto k = static_cast<std::size_t>(lab.num_clusters);
  Tensor sum(Shape{k, d}, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (lab.assignments[i] < 0) continue;
    const auto a = static_cast<std::size_t>(lab.assignments[i]);
    ++count[a];
    for (std::size_t t = 0; t < d; ++t) sum[a * d + t] += features[i * d + t];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c] == 0) throw std::invalid_argument("build_prototypes: cluster " + std::to_string(c) + " is empty");
    double s = 0;
    for (std::size_t t = 0; t < d; ++t) {
      sum[c * d + t] /= static_cast<double>(count[c]);
      s += sum[c * d + t] * sum[c * d + t];
    }
    const double norm = std::sqrt(s);
    if (norm < norm_floor)
      throw std::runtime_error("build_prototypes: cluster " + std::to_string(c) + " mean has norm " +
                               std::to_string(norm) + " below floor");
    for (std::size_t t = 0; t < d; ++t) sum[c * d + t] /= norm;
  }
  return PrototypeBank{std::move(sum), momentum};
}

/// Mean over rows with label >= 0 of -log softmax(f_hat . P^T / tau)[label].
/// Returns a zero scalar (no graph) when every row is an outlier.
inline Var prototype_contrastive_loss(const Var& features, const std::vector<int>& labels, const PrototypeBank& bank,
                                      double temperature) {
  if (temperature <= 0) throw std::invalid_argument("prototype_contrastive_loss: temperature must be > 0");
  const std::size_t n = features.value().rows(), k = bank.size();
  if (labels.size() != n) throw std::invalid_argument("prototype_contrastive_loss: label count mismatch");
  if (features.value().cols() != bank.prototypes.cols())
    throw shape_error("prototype_contrastive_loss", features.shape(), bank.prototypes.shape());
  std::vector<std::size_t> rows, picks;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0) continue;
    if (static_cast<std::size_t>(labels[i]) >= k)
      throw std::out_of_range("prototype_contrastive_loss: label " + std::to_string(labels[i]) + " >= " +
                              std::to_string(k));
    picks.push_back(rows.size() * k + static_cast<std::size_t>(labels[i]));
    rows.push_back(i);
  }
  Tape& tape = *features.tape();
  if (rows.empty()) return tape.constant(Tensor::scalar(0.0));
  std::vector<Var> kept;
  for (std::size_t i : rows) kept.push_back(slice_rows(features, i, i + 1));
  Var f = l2_normalize(concat_rows(kept));
  Var sims = scale(matmul(f, transpose(tape.constant(bank.prototypes))), 1.0 / temperature);
  return neg(mean(gather(log_softmax(sims), std::move(picks))));
}

/// p_label <- normalize(m p_label + (1-m) f_hat) for each non-outlier row.
inline void update_prototypes(PrototypeBank& bank, const Tensor& features, const std::vector<int>& labels) {
  const std::size_t d = bank.prototypes.cols();
  const Tensor f = normalize_rows(features);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const auto c = static_cast<std::size_t>(labels[i]);
    double s = 0;
    for (std::size_t t = 0; t < d; ++t) {
      double& p = bank.prototypes[c * d + t];
      p = bank.momentum * p + (1 - bank.momentum) * f[i * d + t];
      s += p * p;
    }
    const double inv = 1.0 / std::max(std::sqrt(s), 1e-12);
    for (std::size_t t = 0; t < d; ++t) bank.prototypes[c * d + t] *= inv;
  }
}

/// Fraction of clustered points whose cluster's majority identity matches
/// their own. Outliers count as impure unless `ignore_outliers`.
inline double cluster_purity(const PseudoLabeling& lab, const std::vector<int>& truth, bool ignore_outliers = false) {
  if (lab.assignments.size() != truth.size()) throw std::invalid_argument("cluster_purity: size mismatch");
  std::map<int, std::map<int, std::size_t>> votes;
  std::size_t considered = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (lab.assignments[i] < 0) {
      if (!ignore_outliers) ++considered;
      continue;
    }
    ++votes[lab.assignments[i]][truth[i]];
    ++considered;
  }
  std::size_t hit = 0;
  for (const auto& [c, v] : votes) {
    std::size_t best = 0;
    for (const auto& [id, cnt] : v) best = std::max(best, cnt);
    hit += best;
  }
  return considered == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(considered);
}

inline void write_pseudo_labels(const std::string& path, const std::vector<std::string>& image_ids,
                                const PseudoLabeling& lab) {
  if (image_ids.size() != lab.assignments.size()) throw std::invalid_argument("write_pseudo_labels: size mismatch");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# epoch=" << lab.epoch << " clusters=" << lab.num_clusters << " outliers=" << lab.outliers() << '\n';
  for (std::size_t i = 0; i < image_ids.size(); ++i) os << image_ids[i] << ' ' << lab.assignments[i] << '\n';
}

struct AdaptConfig {
  ClusterConfig cluster;
  FusionStrategy fusion = FusionStrategy::kMeanAll;
  std::size_t batch_size = 16;
  double lr = 3.5e-4;
  double lr_decay = 0.1;
  int lr_decay_every = 20;  // epochs
  double weight_decay = 5e-4;
  double flip_prob = 0.5;
};

/// Network adapted on an unlabeled image set via pseudo labels. Holds no
/// identity labels of any kind.
struct AdaptState {
  NetworkParams net;
  AdamW opt;
  int epoch = 0;
  std::uint64_t seed = 0;
  PseudoLabeling last_labels;

  AdaptState(NetworkParams n, const AdaptConfig& cfg, std::uint64_t s)
      : net(std::move(n)), opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay, 0.0}), seed(s) {}
};

struct EpochReport {
  int epoch = 0;
  int clusters = 0;
  std::size_t outliers = 0;
  std::size_t steps = 0;
  double mean_loss = 0.0;
  PseudoLabeling labels;
};

/// extract -> cluster -> prototypes -> one pass of minibatch contrastive
/// optimization over the clustered images.
inline EpochReport uda_usl_epoch(AdaptState& state, std::span<const Image> images, const AdaptConfig& cfg) {
  const Tensor feats = extract_fused(state.net, images, cfg.fusion);
  PseudoLabeling lab = cluster(feats, cfg.cluster, mix_seed(state.seed, 100 + static_cast<std::uint64_t>(state.epoch)));
  lab.epoch = state.epoch;
  if (state.last_labels.epoch >= 0 && state.last_labels.epoch == lab.epoch)
    throw std::logic_error("uda_usl_epoch: stale pseudo labels reused");
  PrototypeBank bank = build_prototypes(normalize_rows(feats), lab, cfg.cluster.momentum, cfg.cluster.norm_floor);

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < images.size(); ++i)
    if (lab.assignments[i] >= 0) order.push_back(i);
  Rng rng(mix_seed(state.seed, 1000 + static_cast<std::uint64_t>(state.epoch)));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i))]);

  const double lr = cfg.lr * std::pow(cfg.lr_decay, state.epoch / std::max(1, cfg.lr_decay_every));
  EpochReport rep;
  rep.epoch = state.epoch;
  rep.clusters = lab.num_clusters;
  rep.outliers = lab.outliers();
  double total = 0;
  for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
    const std::size_t e = std::min(order.size(), b + cfg.batch_size);
    std::vector<Image> batch;
    std::vector<int> labels;
    for (std::size_t i = b; i < e; ++i) {
      const Image& img = images[order[i]];
      batch.push_back(img);
      if (uniform01(rng) < cfg.flip_prob) flip_horizontal(batch.back());
      labels.push_back(lab.assignments[order[i]]);
    }
    Tape tape;
    BoundParams p(tape, state.net.store(), true);
    Var f = fused_features(p, state.net.config(), batch, cfg.fusion);
    Var loss = prototype_contrastive_loss(f, labels, bank, cfg.cluster.temperature);
    const double lv = loss.value().item();
    if (!std::isfinite(lv))
      throw TrainingDiverged("contrastive loss diverged at epoch " + std::to_string(state.epoch) + " batch " +
                             std::to_string(b / cfg.batch_size));
    tape.backward(loss);
    state.net.store().zero_grad();
    p.accumulate_grads(tape, state.net.store());
    state.opt.step(state.net.store(), lr);
    update_prototypes(bank, f.value(), labels);
    total += lv;
    ++rep.steps;
  }
  rep.mean_loss = rep.steps ? total / static_cast<double>(rep.steps) : 0.0;
  rep.labels = lab;
  state.last_labels = std::move(lab);
  ++state.epoch;
  return rep;
}

}  // namespace pass
