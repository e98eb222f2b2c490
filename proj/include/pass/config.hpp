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

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "pass/checkpoint.hpp"
#include "pass/cluster.hpp"
#include "pass/distill.hpp"
#include "pass/finetune.hpp"
#include "pass/multicrop.hpp"
#include "pass/synthetic.hpp"
#include "pass/vit.hpp"

namespace pass {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run needs. Flat "section.key = value" text on disk.
struct RunConfig {
  std::string mode = "pretrain";
  std::uint64_t seed = 0;
  std::string out = "runs/default";

  BackboneConfig backbone;
  MultiCropConfig crops;
  bool override_locals = false;
  DistillConfig distill;
  std::size_t log_every = 1;
  std::size_t checkpoint_every = 0;  // 0: only at the end

  std::string finetune_init = "random";
  std::string finetune_fusion = "concat_cls_meanpart";
  FinetuneConfig finetune;

  std::string adapt_init = "random";
  std::string adapt_fusion = "mean_all";
  AdaptConfig adapt;
  int adapt_epochs = 3;

  std::string data_path;  // empty: generate synthetic data
  SyntheticSpec data;
  std::uint64_t data_seed = 1;
  int test_identities = 20;

  std::string eval_query;
  std::string eval_gallery;
  std::size_t eval_top_k = 10;
  std::size_t eval_reports = 3;

  std::string visualize_checkpoint;
  int visualize_images = 4;
  int visualize_layer = -1;

  std::string ablation_axis = "num_parts";
  std::size_t ablation_pretrain_steps = 200;
  std::size_t ablation_finetune_steps = 150;
};

/// Visits every user-settable field as (key, reference, comment). Section
/// headers are announced with an empty key and the section name as comment.
template <class Config, class V>
void visit_fields(Config& c, V&& v) {
  v("", c.mode, "run");
  v("run.mode", c.mode, "pretrain | finetune | uda | usl | eval | visualize | ablation | synth");
  v("run.seed", c.seed, "base seed for every random stream");
  v("run.out", c.out, "output root; each mode writes only under <out>/<mode>");

  v("", c.mode, "backbone");
  v("backbone.image_height", c.backbone.image_height, "canonical (global view) height");
  v("backbone.image_width", c.backbone.image_width, "canonical (global view) width");
  v("backbone.patch_size", c.backbone.patch_size, "N, patch side in pixels");
  v("backbone.embed_dim", c.backbone.embed_dim, "C, token width");
  v("backbone.depth", c.backbone.depth, "encoder blocks");
  v("backbone.heads", c.backbone.heads, "attention heads; must divide embed_dim");
  v("backbone.mlp_ratio", c.backbone.mlp_ratio, "block MLP width / C");
  v("backbone.num_parts", c.backbone.num_parts, "L, number of [PART] tokens and local areas");
  v("backbone.proj_dim", c.backbone.proj_dim, "K, projection head output size");
  v("backbone.head_hidden", c.backbone.head_hidden, "projection MLP width; 0 = 4C");
  v("backbone.head_bottleneck", c.backbone.head_bottleneck, "projection bottleneck; 0 = C");
  v("backbone.separate_part_heads", c.backbone.separate_part_heads, "one projection head per [PART] token");

  v("", c.mode, "multicrop");
  v("multicrop.num_globals", c.crops.num_globals, "M, global views per image");
  v("multicrop.locals_per_area", c.crops.locals_per_area,
    "J; 0 = derived as ceil(9/L), nonzero needs multicrop.override_locals");
  v("multicrop.override_locals", c.override_locals, "allow an explicit J");
  v("multicrop.local_height", c.crops.local_height, "local view height");
  v("multicrop.local_width", c.crops.local_width, "local view width");
  v("multicrop.global_scale_min", c.crops.global_scale_min, "global crop area fraction range");
  v("multicrop.global_scale_max", c.crops.global_scale_max, "");
  v("multicrop.global_aspect_max", c.crops.global_aspect_max, "aspect jitter, log-uniform in [1/a, a]");
  v("multicrop.local_scale_min", c.crops.local_scale_min, "local crop area fraction range");
  v("multicrop.local_scale_max", c.crops.local_scale_max, "");
  v("multicrop.local_stretch_max", c.crops.local_stretch_max, "local crop height stretch upper bound");
  v("multicrop.flip_prob", c.crops.flip_prob, "");
  v("multicrop.brightness", c.crops.brightness, "max relative brightness jitter");
  v("multicrop.contrast", c.crops.contrast, "max relative contrast jitter");
  v("multicrop.grayscale_prob", c.crops.grayscale_prob, "");
  v("multicrop.global_solarize_prob", c.crops.global_solarize_prob, "");
  v("multicrop.local_solarize_prob", c.crops.local_solarize_prob, "");
  v("multicrop.global_blur_prob", c.crops.global_blur_prob, "");
  v("multicrop.local_blur_prob", c.crops.local_blur_prob, "");

  v("", c.mode, "distill");
  v("distill.student_temp", c.distill.temps.student, "tau_s");
  v("distill.teacher_temp", c.distill.temps.teacher, "tau_t at step 0");
  v("distill.teacher_temp_final", c.distill.teacher_temp_final, "tau_t after warmup");
  v("distill.teacher_temp_warmup_frac", c.distill.teacher_temp_warmup_frac, "");
  v("distill.centering", c.distill.centering, "subtract the teacher output center");
  v("distill.center_momentum", c.distill.center_momentum, "");
  v("distill.ema_start", c.distill.ema_start, "teacher momentum lambda, cosine from start to end");
  v("distill.ema_end", c.distill.ema_end, "");
  v("distill.ema_per_epoch", c.distill.ema_per_epoch, "update the teacher once per epoch instead of per step");
  v("distill.steps_per_epoch", c.distill.steps_per_epoch, "");
  v("distill.raw_sums", c.distill.raw_sums, "sum loss terms without per-group normalization");
  v("distill.lr", c.distill.lr, "peak learning rate");
  v("distill.min_lr", c.distill.min_lr, "");
  v("distill.warmup_frac", c.distill.warmup_frac, "");
  v("distill.weight_decay", c.distill.weight_decay, "");
  v("distill.clip_norm", c.distill.clip_norm, "global gradient norm clip; 0 disables");
  v("distill.total_steps", c.distill.total_steps, "");
  v("distill.batch_size", c.distill.batch_size, "");
  v("distill.log_every", c.log_every, "");
  v("distill.checkpoint_every", c.checkpoint_every, "0 = final checkpoint only");

  v("", c.mode, "finetune");
  v("finetune.init", c.finetune_init, "pre-training checkpoint path, or 'random'");
  v("finetune.fusion", c.finetune_fusion, "concat_all | mean_all | concat_cls_meanpart");
  v("finetune.margin", c.finetune.triplet.margin, "triplet margin alpha");
  v("finetune.ids_per_batch", c.finetune.ids_per_batch, "P");
  v("finetune.instances_per_id", c.finetune.instances_per_id, "S");
  v("finetune.base_lr", c.finetune.base_lr, "learning rate per 64 images");
  v("finetune.lr_scale", c.finetune.lr_scale, "multiplier on base_lr * batch / 64");
  v("finetune.warmup_frac", c.finetune.warmup_frac, "");
  v("finetune.weight_decay", c.finetune.weight_decay, "");
  v("finetune.total_steps", c.finetune.total_steps, "");

  v("", c.mode, "cluster");
  v("cluster.algorithm", c.adapt.cluster.algorithm, "dbscan | kmeans");
  v("cluster.eps", c.adapt.cluster.eps, "dbscan radius on L2-normalized features");
  v("cluster.min_points", c.adapt.cluster.min_points, "");
  v("cluster.kmeans_k", c.adapt.cluster.kmeans_k, "");
  v("cluster.kmeans_fallback_below", c.adapt.cluster.kmeans_fallback_below, "use kmeans for smaller image sets");
  v("cluster.outliers_as_singletons", c.adapt.cluster.outliers_as_singletons, "");
  v("cluster.temperature", c.adapt.cluster.temperature, "contrastive temperature tau_c");
  v("cluster.momentum", c.adapt.cluster.momentum, "prototype momentum m");

  v("", c.mode, "adapt");
  v("adapt.init", c.adapt_init, "uda: fine-tuned checkpoint; usl: pre-training checkpoint or 'random'");
  v("adapt.fusion", c.adapt_fusion, "feature used for clustering and the contrastive loss");
  v("adapt.epochs", c.adapt_epochs, "");
  v("adapt.batch_size", c.adapt.batch_size, "");
  v("adapt.lr", c.adapt.lr, "");
  v("adapt.lr_decay", c.adapt.lr_decay, "step decay factor");
  v("adapt.lr_decay_every", c.adapt.lr_decay_every, "epochs between decays");
  v("adapt.weight_decay", c.adapt.weight_decay, "");

  v("", c.mode, "data");
  v("data.path", c.data_path, "dataset directory with manifest.csv; empty = synthetic");
  v("data.seed", c.data_seed, "");
  v("data.num_identities", c.data.num_identities, "training identities");
  v("data.test_identities", c.test_identities, "held-out identities for query/gallery");
  v("data.images_per_identity", c.data.images_per_identity, "");
  v("data.cameras", c.data.cameras, "");
  v("data.noise", c.data.noise, "");
  v("data.background_jitter", c.data.background_jitter, "per-image background color spread around mid-gray");
  v("data.texture_strength", c.data.texture_strength, "");
  v("data.camera_brightness", c.data.camera_brightness, "");
  v("data.camera_hue", c.data.camera_hue, "");
  v("data.occlusion_prob", c.data.occlusion_prob, "");

  v("", c.mode, "eval");
  v("eval.query", c.eval_query, "query embedding dump");
  v("eval.gallery", c.eval_gallery, "gallery embedding dump");
  v("eval.top_k", c.eval_top_k, "ranking report length");
  v("eval.reports", c.eval_reports, "number of queries with ranking reports");

  v("", c.mode, "visualize");
  v("visualize.checkpoint", c.visualize_checkpoint, "checkpoint to inspect");
  v("visualize.images", c.visualize_images, "");
  v("visualize.layer", c.visualize_layer, "attention layer; negative counts from the end");

  v("", c.mode, "ablation");
  v("ablation.axis", c.ablation_axis, "num_parts | fusion");
  v("ablation.pretrain_steps", c.ablation_pretrain_steps, "");
  v("ablation.finetune_steps", c.ablation_finetune_steps, "");
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, double>) {
    // Shortest text that parses back to the same double.
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else {
    return std::to_string(v);
  }
}

template <class T>
void parse_value(const std::string& key, const std::string& text, T& out) {
  auto bad = [&](const char* what) {
    throw ConfigError("config key '" + key + "': '" + text + "' is not " + what);
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") out = true;
    else if (text == "false" || text == "0") out = false;
    else bad("a boolean (true/false)");
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = text;
  } else {
    std::istringstream is(text);
    if constexpr (std::is_unsigned_v<T>) {
      if (!text.empty() && text.front() == '-') bad("a non-negative integer");
      unsigned long long v = 0;
      if (!(is >> v)) bad("a non-negative integer");
      out = static_cast<T>(v);
    } else if constexpr (std::is_integral_v<T>) {
      long long v = 0;
      if (!(is >> v)) bad("an integer");
      out = static_cast<T>(v);
    } else {
      double v = 0;
      if (!(is >> v)) bad("a number");
      out = v;
    }
    std::string rest;
    if (is >> rest) bad(std::is_floating_point_v<T> ? "a number" : "an integer");
  }
}

}  // namespace detail

/// Sets one dotted key; unknown keys are errors.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  bool found = false;
  visit_fields(cfg, [&](const std::string& k, auto& ref, const char*) {
    if (!k.empty() && k == key) {
      detail::parse_value(k, value, ref);
      found = true;
    }
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

/// Applies "key = value" lines (with # comments) on top of `cfg`.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config") {
  std::istringstream is(text);
  std::string line;
  for (int no = 1; std::getline(is, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty() || (line.front() == '[' && line.back() == ']')) continue;  // section headers are cosmetic
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(no) + ": expected 'key = value', got '" + line + "'");
    try {
      set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(no) + ": " + e.what());
    }
  }
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  apply_config_text(base, ss.str(), path);
  return base;
}

/// Syncs fields shared between sections (L, global view size).
inline RunConfig resolved(RunConfig cfg) {
  cfg.crops.num_parts = cfg.backbone.num_parts;
  cfg.crops.global_height = cfg.backbone.image_height;
  cfg.crops.global_width = cfg.backbone.image_width;
  cfg.data.height = cfg.backbone.image_height;
  cfg.data.width = cfg.backbone.image_width;
  return cfg;
}

/// Field-level validation; throws ConfigError naming the offending key.
inline void validate(const RunConfig& raw) {
  const RunConfig c = resolved(raw);
  auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError(key + ": " + msg); };
  static const std::vector<std::string> modes{"pretrain", "finetune", "uda", "usl", "eval", "visualize", "ablation", "synth"};
  if (std::find(modes.begin(), modes.end(), c.mode) == modes.end())
    fail("run.mode", "unknown mode '" + c.mode + "'");
  if (c.out.empty()) fail("run.out", "must not be empty");
  try {
    c.backbone.validate();
  } catch (const std::invalid_argument& e) {
    fail("backbone", e.what());
  }
  try {
    define_areas(c.backbone.num_parts);
  } catch (const std::invalid_argument& e) {
    fail("backbone.num_parts", e.what());
  }
  if (c.crops.locals_per_area < 0) fail("multicrop.locals_per_area", "must be >= 0");
  if (c.crops.locals_per_area != 0 && !c.override_locals)
    fail("multicrop.locals_per_area",
         "J is derived from L; set multicrop.override_locals = true to choose it explicitly");
  if (c.crops.num_globals < 1) fail("multicrop.num_globals", "must be >= 1");
  if (c.crops.local_height % c.backbone.patch_size || c.crops.local_width % c.backbone.patch_size)
    fail("multicrop.local_height", "local view size must be divisible by backbone.patch_size");
  if (!(0 < c.crops.local_scale_min && c.crops.local_scale_min <= c.crops.local_scale_max &&
        c.crops.local_scale_max <= 1))
    fail("multicrop.local_scale_min", "need 0 < local_scale_min <= local_scale_max <= 1");
  if (!(0 < c.crops.global_scale_min && c.crops.global_scale_min <= c.crops.global_scale_max &&
        c.crops.global_scale_max <= 1))
    fail("multicrop.global_scale_min", "need 0 < global_scale_min <= global_scale_max <= 1");
  if (c.distill.temps.student <= 0) fail("distill.student_temp", "must be > 0");
  if (c.distill.temps.teacher <= 0) fail("distill.teacher_temp", "must be > 0");
  if (c.distill.teacher_temp_final <= 0) fail("distill.teacher_temp_final", "must be > 0");
  if (c.distill.center_momentum < 0 || c.distill.center_momentum >= 1)
    fail("distill.center_momentum", "must be in [0, 1)");
  if (!(0 <= c.distill.ema_start && c.distill.ema_start <= c.distill.ema_end && c.distill.ema_end <= 1))
    fail("distill.ema_start", "need 0 <= ema_start <= ema_end <= 1");
  if (c.distill.lr <= 0) fail("distill.lr", "must be > 0");
  if (c.distill.total_steps == 0) fail("distill.total_steps", "must be > 0");
  if (c.distill.batch_size < 1) fail("distill.batch_size", "must be >= 1");
  try {
    parse_fusion(c.finetune_fusion);
  } catch (const std::invalid_argument& e) {
    fail("finetune.fusion", e.what());
  }
  try {
    parse_fusion(c.adapt_fusion);
  } catch (const std::invalid_argument& e) {
    fail("adapt.fusion", e.what());
  }
  if (c.finetune.triplet.margin < 0) fail("finetune.margin", "must be >= 0");
  if (c.finetune.ids_per_batch < 2) fail("finetune.ids_per_batch", "must be >= 2");
  if (c.finetune.instances_per_id < 2) fail("finetune.instances_per_id", "must be >= 2");
  if (c.finetune.total_steps == 0) fail("finetune.total_steps", "must be > 0");
  if (c.adapt.cluster.algorithm != "dbscan" && c.adapt.cluster.algorithm != "kmeans")
    fail("cluster.algorithm", "must be dbscan or kmeans");
  if (c.adapt.cluster.eps < 0) fail("cluster.eps", "must be >= 0");
  if (c.adapt.cluster.min_points < 1) fail("cluster.min_points", "must be >= 1");
  if (c.adapt.cluster.temperature <= 0) fail("cluster.temperature", "must be > 0");
  if (c.adapt.cluster.momentum < 0 || c.adapt.cluster.momentum > 1) fail("cluster.momentum", "must be in [0, 1]");
  if (c.adapt.batch_size == 0) fail("adapt.batch_size", "must be > 0");
  if (c.adapt_epochs < 1) fail("adapt.epochs", "must be >= 1");
  if (c.test_identities < 1) fail("data.test_identities", "must be >= 1");
  try {
    c.data.validate();
  } catch (const std::invalid_argument& e) {
    fail("data", e.what());
  }
  if (c.ablation_axis != "num_parts" && c.ablation_axis != "fusion")
    fail("ablation.axis", "must be num_parts or fusion");
}

/// Full resolved config text; parses back to an identical config.
inline std::string config_text(const RunConfig& cfg) {
  RunConfig c = cfg;
  std::ostringstream os;
  os << "# pass-reid run configuration\n";
  visit_fields(c, [&](const std::string& key, auto& ref, const char* comment) {
    if (key.empty()) {
      os << "\n[" << comment << "]\n";
      return;
    }
    os << key << " = " << detail::format_value(ref);
    if (comment && *comment) os << "  # " << comment;
    os << '\n';
  });
  os << "\n# derived: J = " << c.crops.locals() << " local views per area, "
     << resolved(c).crops.total_views() << " views per image\n";
  return os.str();
}

inline void write_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << config_text(cfg);
}

// Backbone and multicrop geometry travel inside checkpoints so later stages
// cannot silently run with a different L or token layout.
inline void put_model_meta(Checkpoint& ck, const RunConfig& cfg) {
  RunConfig c = cfg;
  visit_fields(c, [&](const std::string& key, auto& ref, const char*) {
    if (key.rfind("backbone.", 0) == 0 || key.rfind("multicrop.", 0) == 0) ck.meta[key] = detail::format_value(ref);
  });
}

inline RunConfig model_meta(const Checkpoint& ck, RunConfig base = {}) {
  for (const auto& [k, v] : ck.meta)
    if (k.rfind("backbone.", 0) == 0 || k.rfind("multicrop.", 0) == 0) set_config_value(base, k, v);
  return resolved(base);
}

}  // namespace pass
