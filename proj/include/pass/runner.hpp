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

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pass/checkpoint.hpp"
#include "pass/cluster.hpp"
#include "pass/config.hpp"
#include "pass/distill.hpp"
#include "pass/finetune.hpp"
#include "pass/retrieval.hpp"
#include "pass/synthetic.hpp"

namespace pass {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2 };

struct RunOptions {
  std::string resume;  // checkpoint to resume pre-training from
};

struct RunData {
  SyntheticSet train;
  SyntheticSet test;
};

/// Synthetic train/test identities, or <data.path>/{train,test}/manifest.csv.
inline RunData load_data(const RunConfig& raw) {
  const RunConfig cfg = resolved(raw);
  RunData d;
  if (!cfg.data_path.empty()) {
    d.train = read_dataset(fs::path(cfg.data_path) / "train");
    d.test = read_dataset(fs::path(cfg.data_path) / "test");
    return d;
  }
  SyntheticSpec train = cfg.data;
  train.identity_offset = 0;
  SyntheticSpec test = cfg.data;
  test.identity_offset = cfg.data.num_identities;
  test.num_identities = cfg.test_identities;
  d.train = generate(train, cfg.data_seed);
  d.test = generate(test, cfg.data_seed);
  return d;
}

inline fs::path mode_dir(const RunConfig& cfg, const std::string& mode) {
  fs::path dir = fs::path(cfg.out) / mode;
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// Pre-training

inline Checkpoint pretrain_checkpoint(const PretrainState& st, const RunConfig& cfg) {
  Checkpoint ck;
  ck.meta["kind"] = "pretrain";
  ck.meta["step"] = std::to_string(st.step());
  ck.meta["seed"] = std::to_string(cfg.seed);
  put_model_meta(ck, cfg);
  ck.put_store("student/", st.student().store());
  ck.put_store("teacher/", st.teacher().store());
  for (std::size_t r = 0; r < st.centers().centers.size(); ++r) ck.add("center." + std::to_string(r), st.centers().centers[r]);
  put_optimizer(ck, "opt.", st.optimizer());
  return ck;
}

inline void check_model_meta(const Checkpoint& ck, const RunConfig& cfg, const std::string& path) {
  Checkpoint mine;
  put_model_meta(mine, cfg);
  for (const auto& [k, v] : mine.meta) {
    auto it = ck.meta.find(k);
    if (it == ck.meta.end()) throw std::runtime_error(path + ": checkpoint lacks '" + k + "'");
    if (k.rfind("backbone.", 0) == 0 && it->second != v)
      throw std::runtime_error(path + ": checkpoint has " + k + " = " + it->second + " but the config has " + v);
  }
}

inline void restore_pretrain(PretrainState& st, const Checkpoint& ck, const RunConfig& cfg, const std::string& path) {
  if (ck.get("kind") != "pretrain") throw std::runtime_error(path + ": not a pre-training checkpoint");
  check_model_meta(ck, cfg, path);
  ck.get_store("student/", st.student().store());
  ck.get_store("teacher/", st.teacher().store());
  for (std::size_t r = 0; r < st.centers().centers.size(); ++r) st.centers().centers[r] = ck.tensor("center." + std::to_string(r));
  get_optimizer(ck, "opt.", st.optimizer());
  st.set_step(std::stoull(ck.get("step")));
}

inline std::vector<Image> pretrain_batch(const RunConfig& cfg, const SyntheticSet& data, std::size_t step) {
  Rng rng(mix_seed(cfg.seed, 0xba7c0000ull + step));
  std::vector<Image> batch;
  for (int b = 0; b < cfg.distill.batch_size; ++b)
    batch.push_back(data.images[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(data.size()))]);
  return batch;
}

/// Returns the checkpoint path.
inline fs::path run_pretrain(const RunConfig& raw, const RunData& data, const RunOptions& opt, std::ostream& log) {
  const RunConfig cfg = resolved(raw);
  const fs::path dir = mode_dir(cfg, "pretrain");
  write_config((dir / "config.txt").string(), raw);
  PretrainState st(cfg.backbone, cfg.crops, cfg.distill, cfg.seed);
  if (!opt.resume.empty()) {
    restore_pretrain(st, load_checkpoint(opt.resume), cfg, opt.resume);
    log << "resumed from " << opt.resume << " at step " << st.step() << '\n';
  }
  log << "pretrain: L=" << cfg.backbone.num_parts << " M=" << cfg.crops.num_globals << " J=" << cfg.crops.locals()
      << " steps=" << cfg.distill.total_steps << " batch=" << cfg.distill.batch_size << '\n';
  std::ofstream loss(dir / "loss.log", opt.resume.empty() ? std::ios::trunc : std::ios::app);
  const fs::path ckpt = dir / "checkpoint.bin";
  while (st.step() < cfg.distill.total_steps) {
    const StepRecord rec = pretrain_step(st, pretrain_batch(cfg, data.train, st.step()));
    loss << rec.to_text() << '\n';
    if (cfg.log_every && (rec.step + 1) % cfg.log_every == 0)
      log << "step " << rec.step + 1 << "/" << cfg.distill.total_steps << " loss " << rec.loss << " teacher_entropy "
          << rec.teacher_entropy << '\n';
    if (cfg.checkpoint_every && st.step() % cfg.checkpoint_every == 0) save_checkpoint(ckpt.string(), pretrain_checkpoint(st, cfg));
  }
  loss.flush();
  save_checkpoint(ckpt.string(), pretrain_checkpoint(st, cfg));
  log << "wrote " << ckpt.string() << '\n';
  return ckpt;
}

// ---------------------------------------------------------------------------
// Backbone loading shared by the later stages

/// Backbone weights from any checkpoint kind: the teacher of a pre-training
/// run, or the fine-tuned / adapted backbone.
inline NetworkParams load_backbone(const std::string& path, const RunConfig& cfg) {
  const Checkpoint ck = load_checkpoint(path);
  check_model_meta(ck, cfg, path);
  NetworkParams net(cfg.backbone, 0);
  const std::string kind = ck.get("kind");
  ck.get_store(kind == "pretrain" ? "teacher/" : "backbone/", net.store());
  return net;
}

inline std::string checkpoint_kind(const std::string& path) { return load_checkpoint(path).get("kind"); }

inline std::vector<EmbeddingRecord> embedding_records(const SyntheticSet& set, const std::vector<std::size_t>& rows,
                                                      const Tensor& emb) {
  std::vector<EmbeddingRecord> out;
  const std::size_t d = emb.cols();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t i = rows[r];
    EmbeddingRecord e{set.image_ids[i], set.identities[i], set.cameras[i], {}};
    e.vector.assign(emb.data().begin() + static_cast<std::ptrdiff_t>(r * d),
                    emb.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    out.push_back(std::move(e));
  }
  return out;
}

inline RetrievalIndex index_from_records(const std::vector<EmbeddingRecord>& q, const std::vector<EmbeddingRecord>& g) {
  auto fill = [](const std::vector<EmbeddingRecord>& recs, Tensor& m, std::vector<int>& ids, std::vector<int>& cams,
                 std::vector<std::string>* names) {
    if (recs.empty()) throw std::runtime_error("empty embedding set");
    const std::size_t d = recs.front().vector.size();
    m = Tensor(Shape{recs.size(), d});
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (recs[i].vector.size() != d) throw std::runtime_error("embedding dimension mismatch");
      std::copy(recs[i].vector.begin(), recs[i].vector.end(), m.data().begin() + static_cast<std::ptrdiff_t>(i * d));
      ids.push_back(recs[i].identity);
      cams.push_back(recs[i].camera);
      if (names) names->push_back(recs[i].image_id);
    }
  };
  RetrievalIndex idx;
  fill(q, idx.query, idx.query_ids, idx.query_cams, nullptr);
  fill(g, idx.gallery, idx.gallery_ids, idx.gallery_cams, &idx.gallery_names);
  return idx;
}

/// Embeds the test split, writes query/gallery dumps and metrics.txt.
template <class EmbedFn>
RetrievalMetrics dump_and_evaluate(const fs::path& dir, const SyntheticSet& test, EmbedFn&& embed) {
  const QueryGallerySplit split = split_query_gallery(test.identities, test.cameras);
  auto pick = [&](const std::vector<std::size_t>& rows) {
    std::vector<Image> imgs;
    for (std::size_t i : rows) imgs.push_back(test.images[i]);
    return imgs;
  };
  const auto q = embedding_records(test, split.query, embed(pick(split.query)));
  const auto g = embedding_records(test, split.gallery, embed(pick(split.gallery)));
  write_embeddings((dir / "query_embeddings.txt").string(), q);
  write_embeddings((dir / "gallery_embeddings.txt").string(), g);
  const RetrievalMetrics m = evaluate(index_from_records(q, g));
  std::ofstream(dir / "metrics.txt") << metrics_text(m);
  return m;
}

// ---------------------------------------------------------------------------
// Supervised fine-tuning

inline Checkpoint finetune_checkpoint(const FinetuneModel& model, const RunConfig& cfg) {
  Checkpoint ck;
  ck.meta["kind"] = "finetune";
  ck.meta["step"] = std::to_string(model.step);
  ck.meta["fusion"] = to_string(model.fusion);
  put_model_meta(ck, cfg);
  ck.put_store("backbone/", model.backbone.store());
  ck.put_store("head/", model.head.params);
  ck.add("head/running_mean", model.head.running_mean);
  ck.add("head/running_var", model.head.running_var);
  return ck;
}

/// Dense 0..n-1 labels in order of first appearance.
inline std::vector<int> dense_labels(const std::vector<int>& ids) {
  std::map<int, int> m;
  std::vector<int> out;
  for (int id : ids) {
    auto it = m.find(id);
    if (it == m.end()) it = m.emplace(id, static_cast<int>(m.size())).first;
    out.push_back(it->second);
  }
  return out;
}

struct FinetuneResult {
  RetrievalMetrics metrics;
  std::vector<FinetuneRecord> records;
  fs::path checkpoint;
};

/// Trains `net` on the labeled train split; writes checkpoint, dumps and metrics under `dir`.
inline FinetuneResult finetune_network(NetworkParams net, const RunConfig& raw, const RunData& data,
                                       const fs::path& dir, std::ostream& log) {
  const RunConfig cfg = resolved(raw);
  FinetuneConfig fc = cfg.finetune;
  fc.fusion = parse_fusion(cfg.finetune_fusion);
  const std::vector<int> labels = dense_labels(data.train.identities);
  const int num_ids = *std::max_element(labels.begin(), labels.end()) + 1;
  FinetuneModel model(std::move(net), static_cast<std::size_t>(num_ids), fc, mix_seed(cfg.seed, 3));
  FinetuneResult res;
  std::ofstream loss(dir / "loss.log");
  for (std::size_t step = 0; step < fc.total_steps; ++step) {
    Rng rng(mix_seed(cfg.seed, 0xf17e0000ull + step));
    const auto rows = sample_pk_batch(labels, fc.ids_per_batch, fc.instances_per_id, rng);
    std::vector<Image> batch;
    std::vector<int> y;
    for (std::size_t i : rows) {
      batch.push_back(data.train.images[i]);
      if (uniform01(rng) < fc.flip_prob) flip_horizontal(batch.back());
      y.push_back(labels[i]);
    }
    const FinetuneRecord rec = finetune_step(model, batch, y, fc);
    char buf[160];
    std::snprintf(buf, sizeof buf, "step=%zu loss=%.17g id=%.17g triplet=%.17g lr=%.17g", rec.step, rec.loss,
                  rec.id_loss, rec.triplet_loss, rec.lr);
    loss << buf << '\n';
    if (cfg.log_every && (step + 1) % cfg.log_every == 0) log << buf << '\n';
    res.records.push_back(rec);
  }
  res.checkpoint = dir / "checkpoint.bin";
  save_checkpoint(res.checkpoint.string(), finetune_checkpoint(model, cfg));
  res.metrics = dump_and_evaluate(dir, data.test, [&](const std::vector<Image>& imgs) {
    return extract_embeddings(model, imgs);
  });
  log << "finetune: mAP " << res.metrics.mAP << " rank1 " << res.metrics.rank(1) << '\n';
  return res;
}

inline FinetuneResult run_finetune(const RunConfig& raw, const RunData& data, std::ostream& log) {
  const RunConfig cfg = resolved(raw);
  const fs::path dir = mode_dir(cfg, "finetune");
  write_config((dir / "config.txt").string(), raw);
  NetworkParams net = cfg.finetune_init == "random" ? NetworkParams(cfg.backbone, mix_seed(cfg.seed, 1))
                                                    : load_backbone(cfg.finetune_init, cfg);
  log << "finetune: init " << cfg.finetune_init << ", fusion " << cfg.finetune_fusion << " (dim "
      << fusion_dim(parse_fusion(cfg.finetune_fusion), static_cast<std::size_t>(cfg.backbone.num_parts),
                    static_cast<std::size_t>(cfg.backbone.embed_dim))
      << ")\n";
  return finetune_network(std::move(net), raw, data, dir, log);
}

// ---------------------------------------------------------------------------
// UDA / USL

struct AdaptResult {
  std::vector<EpochReport> epochs;
  std::vector<double> purity;  // diagnostic, against target identities
  RetrievalMetrics before;
  RetrievalMetrics after;
};

inline AdaptResult run_adapt(const RunConfig& raw, const RunData& data, std::ostream& log) {
  const RunConfig cfg = resolved(raw);
  const std::string mode = cfg.mode == "uda" ? "uda" : "usl";
  const fs::path dir = mode_dir(cfg, mode);
  write_config((dir / "config.txt").string(), raw);
  NetworkParams net(cfg.backbone, mix_seed(cfg.seed, 1));
  if (cfg.adapt_init != "random") {
    const std::string kind = checkpoint_kind(cfg.adapt_init);
    if (mode == "uda" && kind != "finetune")
      throw std::runtime_error("uda needs a fine-tuned (source-supervised) checkpoint; " + cfg.adapt_init + " is '" +
                               kind + "'");
    if (mode == "usl" && kind != "pretrain")
      throw std::runtime_error("usl starts from a pre-training checkpoint; " + cfg.adapt_init + " is '" + kind + "'");
    net = load_backbone(cfg.adapt_init, cfg);
  } else if (mode == "uda") {
    throw std::runtime_error("uda needs adapt.init pointing at a fine-tuned checkpoint");
  }
  AdaptConfig ac = cfg.adapt;
  ac.fusion = parse_fusion(cfg.adapt_fusion);
  AdaptResult res;
  const fs::path before = dir / "epoch0";
  fs::create_directories(before);
  res.before = dump_and_evaluate(before, data.test, [&](const std::vector<Image>& imgs) {
    return extract_fused(net, imgs, ac.fusion);
  });
  AdaptState st(std::move(net), ac, mix_seed(cfg.seed, 4));
  for (int e = 0; e < cfg.adapt_epochs; ++e) {
    EpochReport rep = uda_usl_epoch(st, data.train.images, ac);
    write_pseudo_labels((dir / ("pseudo_labels_epoch" + std::to_string(e) + ".txt")).string(), data.train.image_ids,
                        rep.labels);
    res.purity.push_back(cluster_purity(rep.labels, data.train.identities));
    log << mode << " epoch " << e << ": clusters " << rep.clusters << " outliers " << rep.outliers << " loss "
        << rep.mean_loss << " purity " << res.purity.back() << '\n';
    res.epochs.push_back(std::move(rep));
  }
  Checkpoint ck;
  ck.meta["kind"] = mode;
  ck.meta["epoch"] = std::to_string(st.epoch);
  put_model_meta(ck, cfg);
  ck.put_store("backbone/", st.net.store());
  save_checkpoint((dir / "checkpoint.bin").string(), ck);
  res.after = dump_and_evaluate(dir, data.test, [&](const std::vector<Image>& imgs) {
    return extract_fused(st.net, imgs, ac.fusion);
  });
  log << mode << ": mAP " << res.before.mAP << " -> " << res.after.mAP << '\n';
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation of embedding dumps

inline RetrievalMetrics run_eval(const RunConfig& cfg, std::ostream& log) {
  if (cfg.eval_query.empty() || cfg.eval_gallery.empty())
    throw ConfigError("eval.query / eval.gallery: both embedding dumps are required");
  const fs::path dir = mode_dir(cfg, "eval");
  write_config((dir / "config.txt").string(), cfg);
  const auto q = read_embeddings(cfg.eval_query);
  const auto g = read_embeddings(cfg.eval_gallery);
  const RetrievalIndex idx = index_from_records(q, g);
  const RetrievalMetrics m = evaluate(idx);
  std::ofstream(dir / "metrics.txt") << metrics_text(m);
  for (std::size_t i = 0; i < std::min(cfg.eval_reports, q.size()); ++i) {
    const auto list = ranking_list(idx, i, cfg.eval_top_k);
    std::ofstream(dir / ("ranking_" + q[i].image_id + ".txt")) << ranking_text(list);
    std::ofstream(dir / ("ranking_" + q[i].image_id + ".html")) << ranking_html(q[i].image_id, list);
  }
  log << metrics_text(m);
  return m;
}

// ---------------------------------------------------------------------------
// Attention visualization

/// Mass of a patch-attention map inside pixel rows [top, bottom).
inline double attention_mass_in_rows(const AttentionMap& m, int patch, int top, int bottom) {
  double mass = 0;
  for (int y = 0; y < m.grid_h; ++y) {
    const int lo = std::max(top, y * patch), hi = std::min(bottom, (y + 1) * patch);
    if (hi <= lo) continue;
    double row = 0;
    for (int x = 0; x < m.grid_w; ++x) row += m.over_patches[static_cast<std::size_t>(y * m.grid_w + x)];
    mass += row * (hi - lo) / patch;
  }
  return mass;
}

inline Image attention_heatmap(const AttentionMap& m, int patch) {
  double peak = 0;
  for (double v : m.over_patches) peak = std::max(peak, v);
  Image out(m.grid_h * patch, m.grid_w * patch, 1);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(y, x, 0) = peak > 0 ? m.over_patches[static_cast<std::size_t>((y / patch) * m.grid_w + x / patch)] / peak : 0;
  return out;
}

inline void run_visualize(const RunConfig& raw, const RunData& data, std::ostream& log) {
  const RunConfig cfg = resolved(raw);
  if (cfg.visualize_checkpoint.empty()) throw ConfigError("visualize.checkpoint: a checkpoint path is required");
  const fs::path dir = mode_dir(cfg, "visualize");
  write_config((dir / "config.txt").string(), raw);
  const NetworkParams net = load_backbone(cfg.visualize_checkpoint, cfg);
  const auto bands = band_rows(data.test.spec);
  std::ofstream summary(dir / "attention.txt");
  summary << "image token band_mass_head band_mass_torso band_mass_legs\n";
  const int n = std::min<int>(cfg.visualize_images, static_cast<int>(data.test.size()));
  for (int k = 0; k < n; ++k) {
    const std::size_t i = static_cast<std::size_t>(k) * data.test.size() / static_cast<std::size_t>(std::max(n, 1));
    const Image& img = data.test.images[i];
    write_pnm((dir / (data.test.image_ids[i] + ".ppm")).string(), img);
    for (int t = 0; t <= cfg.backbone.num_parts; ++t) {
      const AttentionMap m = attention_map(net, img, t, cfg.visualize_layer);
      const std::string name = t == 0 ? "cls" : "part" + std::to_string(t);
      write_pnm((dir / (data.test.image_ids[i] + "_" + name + ".pgm")).string(),
                attention_heatmap(m, cfg.backbone.patch_size));
      summary << data.test.image_ids[i] << ' ' << name;
      for (const auto& [top, bottom] : bands)
        summary << ' ' << std::setprecision(6) << attention_mass_in_rows(m, cfg.backbone.patch_size, top, bottom);
      summary << '\n';
    }
  }
  log << "visualize: wrote attention maps for " << n << " images to " << dir.string() << '\n';
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationRow {
  std::string variant;
  std::size_t dim = 0;
  RetrievalMetrics metrics;
};

inline std::string ablation_table(const std::string& axis, const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << (axis == "fusion" ? "| Fusion | Dim | toy-mAP | Rank-1 |\n|---|---|---|---|\n"
                          : "| L | J | Dim | toy-mAP | Rank-1 |\n|---|---|---|---|---|\n");
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu | %.4f | %.4f |", r.dim, r.metrics.mAP, r.metrics.rank(1));
    os << "| " << r.variant << " | " << buf << '\n';
  }
  return os.str();
}

inline std::vector<AblationRow> run_ablation(const RunConfig& raw, const RunData& data, std::ostream& log) {
  const RunConfig base = resolved(raw);
  const fs::path dir = mode_dir(base, "ablation");
  write_config((dir / "config.txt").string(), raw);
  std::vector<AblationRow> rows;
  auto variant_cfg = [&](const std::string& name) {
    RunConfig c = raw;
    c.out = (dir / name).string();
    c.distill.total_steps = base.ablation_pretrain_steps;
    c.finetune.total_steps = base.ablation_finetune_steps;
    return c;
  };
  auto pretrain_then = [&](RunConfig c) {
    c.mode = "pretrain";
    const fs::path ck = run_pretrain(c, data, {}, log);
    c.mode = "finetune";
    c.finetune_init = ck.string();
    return c;
  };
  if (base.ablation_axis == "num_parts") {
    for (int L : {2, 3, 4, 5}) {
      RunConfig c = variant_cfg("L" + std::to_string(L));
      c.backbone.num_parts = L;
      c = pretrain_then(c);
      AblationRow row;
      row.variant = std::to_string(L) + " | " + std::to_string(views_per_area(L));
      row.dim = fusion_dim(parse_fusion(c.finetune_fusion), static_cast<std::size_t>(L),
                           static_cast<std::size_t>(c.backbone.embed_dim));
      row.metrics = run_finetune(c, data, log).metrics;
      rows.push_back(row);
    }
  } else {
    RunConfig c = pretrain_then(variant_cfg("shared"));
    for (FusionStrategy s :
         {FusionStrategy::kConcatAll, FusionStrategy::kMeanAll, FusionStrategy::kConcatClsMeanPart}) {
      RunConfig v = c;
      v.finetune_fusion = to_string(s);
      v.out = (dir / to_string(s)).string();
      AblationRow row;
      row.variant = to_string(s);
      row.dim = fusion_dim(s, static_cast<std::size_t>(c.backbone.num_parts),
                           static_cast<std::size_t>(c.backbone.embed_dim));
      row.metrics = run_finetune(v, data, log).metrics;
      rows.push_back(row);
    }
  }
  const std::string table = ablation_table(base.ablation_axis, rows);
  std::ofstream(dir / "report.md") << table;
  log << table;
  return rows;
}

// ---------------------------------------------------------------------------

/// Writes the synthetic train/test splits as image files plus manifests.
inline void run_synth(const RunConfig& cfg, const RunData& data, std::ostream& log) {
  const fs::path dir = mode_dir(cfg, "synth");
  write_config((dir / "config.txt").string(), cfg);
  write_dataset(dir / "train", data.train);
  write_dataset(dir / "test", data.test);
  log << "synth: wrote " << data.train.size() << " train and " << data.test.size() << " test images to "
      << dir.string() << '\n';
}

/// Runs one mode; maps config errors to exit 1 and runtime errors to exit 2.
inline int run(const RunConfig& cfg, const RunOptions& opt = {}, std::ostream& log = std::cout,
               std::ostream& err = std::cerr) {
  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    if (cfg.mode == "eval") {
      run_eval(cfg, log);
      return kExitOk;
    }
    const RunData data = load_data(cfg);
    if (cfg.mode == "pretrain") run_pretrain(cfg, data, opt, log);
    else if (cfg.mode == "finetune") run_finetune(cfg, data, log);
    else if (cfg.mode == "uda" || cfg.mode == "usl") run_adapt(cfg, data, log);
    else if (cfg.mode == "visualize") run_visualize(cfg, data, log);
    else if (cfg.mode == "ablation") run_ablation(cfg, data, log);
    else if (cfg.mode == "synth") run_synth(cfg, data, log);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace pass
