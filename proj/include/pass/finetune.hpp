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
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pass/distill.hpp"
#include "pass/ops.hpp"
#include "pass/params.hpp"
#include "pass/vit.hpp"

namespace pass {

enum class FusionStrategy { kConcatAll, kMeanAll, kConcatClsMeanPart };

inline std::string to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kConcatAll: return "concat_all";
    case FusionStrategy::kMeanAll: return "mean_all";
    case FusionStrategy::kConcatClsMeanPart: return "concat_cls_meanpart";
  }
  return "?";
}

inline FusionStrategy parse_fusion(const std::string& name) {
  if (name == "concat_all") return FusionStrategy::kConcatAll;
  if (name == "mean_all") return FusionStrategy::kMeanAll;
  if (name == "concat_cls_meanpart") return FusionStrategy::kConcatClsMeanPart;
  throw std::invalid_argument("unknown fusion strategy '" + name +
                              "' (expected concat_all, mean_all or concat_cls_meanpart)");
}

/// (L+1)C, C or 2C.
inline std::size_t fusion_dim(FusionStrategy s, std::size_t num_parts, std::size_t channels) {
  switch (s) {
    case FusionStrategy::kConcatAll: return (num_parts + 1) * channels;
    case FusionStrategy::kMeanAll: return channels;
    case FusionStrategy::kConcatClsMeanPart: return 2 * channels;
  }
  throw std::invalid_argument("unknown fusion strategy");
}

/// Fuses [CLS] (n x C) with the [PART] outputs (L of n x C) row-wise.
inline Var fuse(const Var& cls, const std::vector<Var>& parts, FusionStrategy s) {
  if (parts.empty()) throw std::invalid_argument("fuse: need at least one [PART] output");
  const double inv_l = 1.0 / static_cast<double>(parts.size());
  auto part_mean = [&] {
    Var acc = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
    return scale(acc, inv_l);
  };
  switch (s) {
    case FusionStrategy::kConcatAll: {
      std::vector<Var> cols{cls};
      for (const Var& p : parts) cols.push_back(scale(p, inv_l));
      return concat_cols(cols);
    }
    case FusionStrategy::kMeanAll: return scale(add(cls, part_mean()), 0.5);
    case FusionStrategy::kConcatClsMeanPart: return concat_cols({cls, part_mean()});
  }
  throw std::invalid_argument("fuse: unknown strategy");
}

/// Fused backbone features for a batch of full images: n x D.
inline Var fused_features(const BoundParams& p, const BackboneConfig& cfg, std::span<const Image> images,
                          FusionStrategy s) {
  std::vector<Var> cls;
  std::vector<std::vector<Var>> parts(static_cast<std::size_t>(cfg.num_parts));
  const TokenLayout layout = TokenLayout::global(cfg.num_parts);
  for (const Image& img : images) {
    ViewFeatures f = forward_features(p, cfg, img, layout);
    cls.push_back(f.cls());
    for (int i = 1; i <= cfg.num_parts; ++i) parts[static_cast<std::size_t>(i - 1)].push_back(f.part(i));
  }
  std::vector<Var> stacked;
  for (auto& col : parts) stacked.push_back(concat_rows(col));
  return fuse(concat_rows(cls), stacked, s);
}

/// -mean_n log softmax(logits)[label_n].
inline Var id_loss_from_logits(const Var& logits, const std::vector<int>& labels) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.rows() != labels.size())
    throw ShapeError("id_loss: logits " + shape_str(lv.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  const std::size_t k = lv.cols();
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw std::out_of_range("id_loss: label " + std::to_string(labels[i]) + " outside [0," +
                              std::to_string(k) + ")");
    idx.push_back(i * k + static_cast<std::size_t>(labels[i]));
  }
  return neg(mean(gather(log_softmax(logits), std::move(idx))));
}

struct TripletConfig {
  double margin = 0.3;
};

/// Checks the batch has >= 2 identities and >= 2 samples of some identity.
inline void check_triplet_batch(const std::vector<int>& labels) {
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw std::invalid_argument("batch_hard_triplet: batch needs at least 2 identities");
  bool pair = false;
  for (const auto& [id, c] : counts) pair = pair || c >= 2;
  if (!pair) throw std::invalid_argument("batch_hard_triplet: no identity has 2 or more samples");
}

/// Mean over anchors with a positive of [max_p d(a,p) - min_n d(a,n) + margin]_+,
/// Euclidean distances on the given (unnormalized) embeddings.
inline Var batch_hard_triplet(const Var& embeddings, const std::vector<int>& labels, const TripletConfig& cfg) {
  if (cfg.margin < 0.0) throw std::invalid_argument("batch_hard_triplet: margin must be >= 0");
  const std::size_t n = labels.size();
  if (embeddings.value().rank() != 2 || embeddings.value().rows() != n)
    throw ShapeError("batch_hard_triplet: embeddings " + shape_str(embeddings.shape()) + " vs " +
                     std::to_string(n) + " labels");
  check_triplet_batch(labels);
  Var dist = pairwise_euclidean(embeddings);
  const Tensor& d = dist.value();
  std::vector<std::size_t> pos, negs;
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t bp = n, bn = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (bp == n || d[a * n + j] > d[a * n + bp]) bp = j;
      } else if (bn == n || d[a * n + j] < d[a * n + bn]) {
        bn = j;
      }
    }
    if (bp == n || bn == n) continue;
    pos.push_back(a * n + bp);
    negs.push_back(a * n + bn);
  }
  Var dp = gather(dist, std::move(pos));
  Var dn = gather(dist, std::move(negs));
  return mean(relu(add_scalar(sub(dp, dn), cfg.margin)));
}

/// BN-neck followed by a bias-free identity classifier.
struct ReidHead {
  ParamStore params;  // "bnneck.weight" {D}, "classifier.weight" {D, ids}
  Tensor running_mean;
  Tensor running_var;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  ReidHead() = default;
  ReidHead(std::size_t dim, std::size_t num_ids, std::uint64_t seed)
      : running_mean(Shape{dim}, 0.0), running_var(Shape{dim}, 1.0) {
    Rng rng(seed);
    params.add("bnneck.weight", Tensor(Shape{dim}, 1.0), false);
    params.add("classifier.weight", trunc_normal({dim, num_ids}, 0.001 * 10.0, rng));
  }

  std::size_t dim() const { return running_mean.numel(); }
  std::size_t num_ids() const { return params.at("classifier.weight").value.cols(); }
};

/// Batch-normalized features using batch statistics (training) and updating
/// the running estimates.
inline Var bnneck_train(const BoundParams& hp, ReidHead& head, const Var& feats) {
  Var mu = mean_rows(feats);
  Var xc = sub(feats, mu);
  Var var = mean_rows(square(xc));
  Var xhat = div(xc, sqrt(add_scalar(var, head.bn_eps)));
  const double n = static_cast<double>(feats.value().rows());
  for (std::size_t k = 0; k < head.dim(); ++k) {
    head.running_mean[k] = (1 - head.bn_momentum) * head.running_mean[k] + head.bn_momentum * mu.value()[k];
    const double unbiased = n > 1 ? var.value()[k] * n / (n - 1) : var.value()[k];
    head.running_var[k] = (1 - head.bn_momentum) * head.running_var[k] + head.bn_momentum * unbiased;
  }
  return mul(xhat, hp["bnneck.weight"]);
}

/// Inference-time embedding: running-statistics BN of the fused feature.
/// Never reads the classifier.
inline Tensor bnneck_eval(const ReidHead& head, const Tensor& feats) {
  const Tensor& gamma = head.params.at("bnneck.weight").value;
  const std::size_t n = feats.rows(), d = feats.cols();
  if (d != head.dim()) throw shape_error("bnneck_eval", feats.shape(), head.running_mean.shape());
  Tensor out(feats.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k)
      out[i * d + k] = (feats[i * d + k] - head.running_mean[k]) / std::sqrt(head.running_var[k] + head.bn_eps) *
                       gamma[k];
  return out;
}

/// Cross-entropy through the head's classifier: -log P(label | embedding).
inline Var id_loss(const BoundParams& hp, ReidHead& head, const Var& embedding, const std::vector<int>& labels) {
  return id_loss_from_logits(matmul(bnneck_train(hp, head, embedding), hp["classifier.weight"]), labels);
}

struct FinetuneConfig {
  FusionStrategy fusion = FusionStrategy::kConcatClsMeanPart;
  TripletConfig triplet;
  int ids_per_batch = 4;        // P
  int instances_per_id = 4;     // S
  double base_lr = 0.0004;      // per 64 images
  double lr_scale = 1.0;        // toy-scale multiplier on the rule above
  double warmup_frac = 0.1;
  double weight_decay = 1e-4;
  double flip_prob = 0.5;
  std::size_t total_steps = 300;

  int batch_size() const { return ids_per_batch * instances_per_id; }
  double lr() const { return base_lr * batch_size() / 64.0 * lr_scale; }
};

/// Backbone plus ReID head being fine-tuned.
struct FinetuneModel {
  NetworkParams backbone;
  ReidHead head;
  FusionStrategy fusion = FusionStrategy::kConcatClsMeanPart;
  AdamW backbone_opt;
  AdamW head_opt;
  std::size_t step = 0;

  FinetuneModel(NetworkParams net, std::size_t num_ids, const FinetuneConfig& cfg, std::uint64_t seed)
      : backbone(std::move(net)),
        head(fusion_dim(cfg.fusion, static_cast<std::size_t>(backbone.config().num_parts),
                        static_cast<std::size_t>(backbone.config().embed_dim)),
             num_ids, seed),
        fusion(cfg.fusion),
        backbone_opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay, 0.0}),
        head_opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay, 0.0}) {}
};

struct FinetuneRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double id_loss = 0.0;
  double triplet_loss = 0.0;
  double lr = 0.0;
  double part_token_grad_norm = 0.0;
};

/// L = L_id + L_tri on one P x S batch, then an optimizer step on both the
/// backbone (including [CLS]/[PART] tokens) and the head.
inline FinetuneRecord finetune_step(FinetuneModel& model, std::span<const Image> images,
                                    const std::vector<int>& labels, const FinetuneConfig& cfg) {
  if (images.size() != labels.size()) throw std::invalid_argument("finetune_step: images/labels size mismatch");
  Tape tape;
  BoundParams bp(tape, model.backbone.store(), true);
  BoundParams hp(tape, model.head.params, true);
  Var feats = fused_features(bp, model.backbone.config(), images, model.fusion);
  Var tri = batch_hard_triplet(feats, labels, cfg.triplet);
  Var ce = id_loss(hp, model.head, feats, labels);
  Var loss = add(ce, tri);
  FinetuneRecord rec;
  rec.step = model.step;
  rec.loss = loss.value().item();
  rec.id_loss = ce.value().item();
  rec.triplet_loss = tri.value().item();
  if (!std::isfinite(rec.loss)) {
    std::ostringstream os;
    os << "fine-tuning diverged at step " << model.step << ": id_loss=" << rec.id_loss
       << " triplet=" << rec.triplet_loss;
    throw TrainingDiverged(os.str());
  }
  tape.backward(loss);
  model.backbone.store().zero_grad();
  model.head.params.zero_grad();
  bp.accumulate_grads(tape, model.backbone.store());
  hp.accumulate_grads(tape, model.head.params);
  double gn = 0.0;
  for (double g : model.backbone.store().at("part_tokens").grad.data()) gn += g * g;
  rec.part_token_grad_norm = std::sqrt(gn);
  const std::size_t warmup = static_cast<std::size_t>(cfg.warmup_frac * static_cast<double>(cfg.total_steps));
  rec.lr = warmup_cosine(cfg.lr(), cfg.lr() * 0.01, warmup, model.step, cfg.total_steps);
  model.backbone_opt.step(model.backbone.store(), rec.lr);
  model.head_opt.step(model.head.params, rec.lr);
  ++model.step;
  return rec;
}

/// Raw fused backbone features (no BN) for a list of images, in chunks.
inline Tensor extract_fused(const NetworkParams& net, std::span<const Image> images, FusionStrategy s,
                            std::size_t chunk = 32) {
  const std::size_t D = fusion_dim(s, static_cast<std::size_t>(net.config().num_parts),
                                   static_cast<std::size_t>(net.config().embed_dim));
  Tensor out(Shape{images.size(), D});
  for (std::size_t b = 0; b < images.size(); b += chunk) {
    const std::size_t e = std::min(images.size(), b + chunk);
    Tape tape;
    BoundParams p(tape, net.store(), false);
    Var f = fused_features(p, net.config(), images.subspan(b, e - b), s);
    std::copy(f.value().data().begin(), f.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(b * D));
  }
  return out;
}

/// Test-time embeddings: fused feature through the BN-neck.
inline Tensor extract_embeddings(const FinetuneModel& model, std::span<const Image> images) {
  return bnneck_eval(model.head, extract_fused(model.backbone, images, model.fusion));
}

/// P identities x S instances, sampled with replacement when an identity has
/// fewer than S images.
inline std::vector<std::size_t> sample_pk_batch(const std::vector<int>& labels, int P, int S, Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) by_id[labels[i]].push_back(i);
  std::vector<int> ids;
  for (const auto& [id, v] : by_id) ids.push_back(id);
  if (ids.size() < 2) throw std::invalid_argument("sample_pk_batch: need at least 2 identities");
  const std::size_t p = std::min<std::size_t>(static_cast<std::size_t>(P), ids.size());
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(ids.size() - i));
    std::swap(ids[i], ids[j]);
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p; ++i) {
    std::vector<std::size_t> pool = by_id[ids[i]];
    for (int s = 0; s < S; ++s) {
      if (static_cast<std::size_t>(s) < pool.size()) {
        const std::size_t j = static_cast<std::size_t>(s) +
                              static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size() - s));
        std::swap(pool[static_cast<std::size_t>(s)], pool[j]);
        out.push_back(pool[static_cast<std::size_t>(s)]);
      } else {
        out.push_back(pool[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size()))]);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding dump: "# pass-embeddings v1 dim=D count=N", then one line per
// image: "<image_id> <identity> <camera> v_1 ... v_D" with %.17g values.

struct EmbeddingRecord {
  std::string image_id;
  int identity = 0;
  int camera = 0;
  std::vector<double> vector;
  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

inline void write_embeddings(const std::string& path, const std::vector<EmbeddingRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  const std::size_t dim = records.empty() ? 0 : records.front().vector.size();
  os << "# pass-embeddings v1 dim=" << dim << " count=" << records.size() << '\n';
  char buf[40];
  for (const auto& r : records) {
    if (r.vector.size() != dim) throw std::invalid_argument("write_embeddings: ragged vectors");
    if (r.image_id.empty() || r.image_id.find_first_of(" \t\n") != std::string::npos)
      throw std::invalid_argument("write_embeddings: image id must be a non-empty token");
    os << r.image_id << ' ' << r.identity << ' ' << r.camera;
    for (double v : r.vector) {
      std::snprintf(buf, sizeof buf, " %.17g", v);
      os << buf;
    }
    os << '\n';
  }
}

inline std::vector<EmbeddingRecord> read_embeddings(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string header;
  std::getline(is, header);
  std::size_t dim = 0, count = 0;
  if (std::sscanf(header.c_str(), "# pass-embeddings v1 dim=%zu count=%zu", &dim, &count) != 2)
    throw std::runtime_error(path + ": not a pass-embeddings v1 file");
  std::vector<EmbeddingRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    EmbeddingRecord r;
    if (!(ls >> r.image_id >> r.identity >> r.camera)) throw std::runtime_error(path + ": bad record");
    std::string tok;
    while (ls >> tok) r.vector.push_back(std::strtod(tok.c_str(), nullptr));
    if (r.vector.size() != dim) throw std::runtime_error(path + ": record has wrong dimension");
    out.push_back(std::move(r));
  }
  if (out.size() != count) throw std::runtime_error(path + ": record count mismatch");
  return out;
}

}  // namespace pass
