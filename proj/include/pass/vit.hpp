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
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pass/image.hpp"
#include "pass/ops.hpp"
#include "pass/params.hpp"

namespace pass {

/// Geometry and widths of the backbone and its projection heads.
struct BackboneConfig {
  int image_height = 64;  // canonical (global view) resolution
  int image_width = 32;
  int channels = 3;
  int patch_size = 4;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int num_parts = 3;
  int proj_dim = 256;
  int head_hidden = 0;      // 0: 4 * embed_dim
  int head_bottleneck = 0;  // 0: embed_dim
  bool separate_part_heads = false;

  int grid_h() const { return image_height / patch_size; }
  int grid_w() const { return image_width / patch_size; }
  int num_patches() const { return grid_h() * grid_w(); }
  int hidden_width() const { return head_hidden > 0 ? head_hidden : 4 * embed_dim; }
  int bottleneck_width() const { return head_bottleneck > 0 ? head_bottleneck : embed_dim; }

  void validate() const {
    if (patch_size <= 0 || image_height % patch_size || image_width % patch_size)
      throw std::invalid_argument("backbone: image " + std::to_string(image_height) + "x" +
                                  std::to_string(image_width) + " not divisible by patch size " +
                                  std::to_string(patch_size));
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads)
      throw std::invalid_argument("backbone: embed_dim must be a positive multiple of heads");
    if (depth < 0) throw std::invalid_argument("backbone: depth must be >= 0");
    if (num_parts < 1) throw std::invalid_argument("backbone: num_parts must be >= 1");
    if (proj_dim < 2) throw std::invalid_argument("backbone: proj_dim must be >= 2");
    if (channels <= 0 || mlp_ratio <= 0) throw std::invalid_argument("backbone: bad channels/mlp_ratio");
  }
};

/// Which special tokens are prepended to a view. Part indices are 1-based.
struct TokenLayout {
  bool include_cls = true;
  std::vector<int> part_indices;

  static TokenLayout global(int num_parts) {
    TokenLayout t;
    for (int i = 1; i <= num_parts; ++i) t.part_indices.push_back(i);
    return t;
  }
  static TokenLayout local(int area) { return TokenLayout{true, {area}}; }

  std::size_t special_count() const { return (include_cls ? 1 : 0) + part_indices.size(); }
  /// Row of part token `i` in the assembled sequence, or -1 when absent.
  int part_row(int part) const {
    for (std::size_t k = 0; k < part_indices.size(); ++k)
      if (part_indices[k] == part) return static_cast<int>(k + (include_cls ? 1 : 0));
    return -1;
  }
  friend bool operator==(const TokenLayout&, const TokenLayout&) = default;
};

inline std::string part_head_name(const BackboneConfig& cfg, int part) {
  return cfg.separate_part_heads ? "head.part" + std::to_string(part) : std::string("head.part");
}

/// All learnable weights of one network (student or teacher).
class NetworkParams {
 public:
  NetworkParams() = default;

  NetworkParams(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const auto C = static_cast<std::size_t>(cfg_.embed_dim);
    const auto N = static_cast<std::size_t>(cfg_.patch_size);
    const auto Ch = static_cast<std::size_t>(cfg_.channels);
    const auto P = static_cast<std::size_t>(cfg_.num_patches());
    const auto L = static_cast<std::size_t>(cfg_.num_parts);
    const auto M = C * static_cast<std::size_t>(cfg_.mlp_ratio);
    constexpr double kStd = 0.02;

    store_.add("patch_embed.weight", trunc_normal({N * N * Ch, C}, kStd, rng));
    store_.add("patch_embed.bias", Tensor({C}), false);
    store_.add("pos_embed", trunc_normal({P, C}, kStd, rng), false);
    store_.add("cls_token", trunc_normal({1, C}, kStd, rng), false);
    store_.add("part_tokens", trunc_normal({L, C}, kStd, rng), false);
    for (int b = 0; b < cfg_.depth; ++b) {
      const std::string pre = "blocks." + std::to_string(b) + ".";
      store_.add(pre + "norm1.weight", Tensor({C}, 1.0), false);
      store_.add(pre + "norm1.bias", Tensor({C}), false);
      store_.add(pre + "attn.qkv.weight", trunc_normal({C, 3 * C}, kStd, rng));
      store_.add(pre + "attn.qkv.bias", Tensor({3 * C}), false);
      store_.add(pre + "attn.proj.weight", trunc_normal({C, C}, kStd, rng));
      store_.add(pre + "attn.proj.bias", Tensor({C}), false);
      store_.add(pre + "norm2.weight", Tensor({C}, 1.0), false);
      store_.add(pre + "norm2.bias", Tensor({C}), false);
      store_.add(pre + "mlp.fc1.weight", trunc_normal({C, M}, kStd, rng));
      store_.add(pre + "mlp.fc1.bias", Tensor({M}), false);
      store_.add(pre + "mlp.fc2.weight", trunc_normal({M, C}, kStd, rng));
      store_.add(pre + "mlp.fc2.bias", Tensor({C}), false);
    }
    store_.add("norm.weight", Tensor({C}, 1.0), false);
    store_.add("norm.bias", Tensor({C}), false);
    add_head("head.cls", rng);
    if (cfg_.separate_part_heads) {
      for (int i = 1; i <= cfg_.num_parts; ++i) add_head(part_head_name(cfg_, i), rng);
    } else {
      add_head("head.part", rng);
    }
  }

  NetworkParams(const BackboneConfig& cfg, ParamStore store) : cfg_(cfg), store_(std::move(store)) {
    cfg_.validate();
    NetworkParams reference(cfg, 0);
    if (!store_.same_layout(reference.store()))
      throw std::invalid_argument("NetworkParams: stored tensors do not match the backbone config");
  }

  const BackboneConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

 private:
  void add_head(const std::string& name, Rng& rng) {
    const auto C = static_cast<std::size_t>(cfg_.embed_dim);
    const auto H = static_cast<std::size_t>(cfg_.hidden_width());
    const auto B = static_cast<std::size_t>(cfg_.bottleneck_width());
    const auto K = static_cast<std::size_t>(cfg_.proj_dim);
    constexpr double kStd = 0.02;
    store_.add(name + ".fc1.weight", trunc_normal({C, H}, kStd, rng));
    store_.add(name + ".fc1.bias", Tensor({H}), false);
    store_.add(name + ".fc2.weight", trunc_normal({H, H}, kStd, rng));
    store_.add(name + ".fc2.bias", Tensor({H}), false);
    store_.add(name + ".fc3.weight", trunc_normal({H, B}, kStd, rng));
    store_.add(name + ".fc3.bias", Tensor({B}), false);
    // Unit-norm columns: on the normalized bottleneck the initial logits are
    // cosine similarities, as with a weight-normalized last layer.
    Tensor last = trunc_normal({B, K}, 1.0, rng);
    for (std::size_t k = 0; k < K; ++k) {
      double sq = 0.0;
      for (std::size_t b = 0; b < B; ++b) sq += last[b * K + k] * last[b * K + k];
      const double inv = 1.0 / std::sqrt(sq);
      for (std::size_t b = 0; b < B; ++b) last[b * K + k] *= inv;
    }
    store_.add(name + ".last.weight", std::move(last));
    store_.add(name + ".last.bias", Tensor({K}), false);
  }

  BackboneConfig cfg_;
  ParamStore store_;
};

/// Flattens non-overlapping N x N patches into rows of (N*N*channels) values,
/// patch order row-major over the grid, pixel order (dy, dx, channel).
/// Pixels are standardized with mean 0.5 and std 0.25.
inline Tensor patchify(const Image& img, int patch) {
  if (patch <= 0 || img.height % patch || img.width % patch)
    throw std::invalid_argument("patchify: " + std::to_string(img.height) + "x" +
                                std::to_string(img.width) + " image not divisible by patch size " +
                                std::to_string(patch));
  const int gh = img.height / patch, gw = img.width / patch;
  const std::size_t dim = static_cast<std::size_t>(patch) * patch * img.channels;
  Tensor out(Shape{static_cast<std::size_t>(gh * gw), dim});
  std::size_t k = 0;
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx)
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx)
          for (int c = 0; c < img.channels; ++c)
            out[k++] = (img.at(gy * patch + dy, gx * patch + dx, c) - 0.5) / 0.25;
  return out;
}

/// Bilinear resampling matrix (dst_h*dst_w) x (src_h*src_w) over token grids,
/// half-pixel centers with edge clamping. Equal grids give the identity.
inline Tensor grid_interpolation(int src_h, int src_w, int dst_h, int dst_w) {
  Tensor m(Shape{static_cast<std::size_t>(dst_h * dst_w), static_cast<std::size_t>(src_h * src_w)});
  auto taps = [](int dst, int src, int i) {
    double f = (i + 0.5) * static_cast<double>(src) / dst - 0.5;
    f = std::clamp(f, 0.0, static_cast<double>(src - 1));
    const int i0 = static_cast<int>(std::floor(f));
    const int i1 = std::min(i0 + 1, src - 1);
    return std::tuple<int, int, double>{i0, i1, f - i0};
  };
  for (int y = 0; y < dst_h; ++y) {
    const auto [y0, y1, wy] = taps(dst_h, src_h, y);
    for (int x = 0; x < dst_w; ++x) {
      const auto [x0, x1, wx] = taps(dst_w, src_w, x);
      const std::size_t row = static_cast<std::size_t>(y * dst_w + x);
      auto put = [&](int sy, int sx, double w) { m.at(row, static_cast<std::size_t>(sy * src_w + sx)) += w; };
      put(y0, x0, (1 - wy) * (1 - wx));
      put(y0, x1, (1 - wy) * wx);
      put(y1, x0, wy * (1 - wx));
      put(y1, x1, wy * wx);
    }
  }
  return m;
}

/// Positional embeddings for a grid of gh x gw patches.
inline Var positional_embedding(const BoundParams& p, const BackboneConfig& cfg, int gh, int gw) {
  const Var& pos = p["pos_embed"];
  if (gh == cfg.grid_h() && gw == cfg.grid_w()) return pos;
  return matmul(p.tape().constant(grid_interpolation(cfg.grid_h(), cfg.grid_w(), gh, gw)), pos);
}

/// Linear patch projection plus (interpolated) positional embedding: P x C.
inline Var embed_patches(const BoundParams& p, const BackboneConfig& cfg, const Image& img) {
  if (img.channels != cfg.channels)
    throw std::invalid_argument("embed_patches: image has " + std::to_string(img.channels) +
                                " channels, backbone expects " + std::to_string(cfg.channels));
  Tape& tape = p.tape();
  Var x = tape.constant(patchify(img, cfg.patch_size));
  Var e = add(matmul(x, p["patch_embed.weight"]), p["patch_embed.bias"]);
  return add(e, positional_embedding(p, cfg, img.height / cfg.patch_size, img.width / cfg.patch_size));
}

/// [CLS] (if requested) ++ selected [PART]s ++ patch embeddings.
inline Var assemble_tokens(const BoundParams& p, const BackboneConfig& cfg, const Var& patches,
                           const TokenLayout& layout) {
  std::vector<Var> rows;
  if (layout.include_cls) rows.push_back(p["cls_token"]);
  const Var& parts = p["part_tokens"];
  for (int i : layout.part_indices) {
    if (i < 1 || i > cfg.num_parts)
      throw std::out_of_range("assemble_tokens: part index " + std::to_string(i) + " outside 1.." +
                              std::to_string(cfg.num_parts));
    rows.push_back(slice_rows(parts, static_cast<std::size_t>(i - 1), static_cast<std::size_t>(i)));
  }
  rows.push_back(patches);
  return concat_rows(rows);
}

/// Per-layer, per-head attention probabilities captured during encode().
struct AttentionProbe {
  std::vector<std::vector<Tensor>> layers;  // [layer][head] -> S x S
};

inline Var linear(const BoundParams& p, const std::string& name, const Var& x) {
  return add(matmul(x, p[name + ".weight"]), p[name + ".bias"]);
}

inline Var attention(const BoundParams& p, const BackboneConfig& cfg, const std::string& pre,
                     const Var& x, std::vector<Tensor>* probe) {
  const auto C = static_cast<std::size_t>(cfg.embed_dim);
  const auto H = static_cast<std::size_t>(cfg.heads);
  const std::size_t d = C / H;
  const double scl = 1.0 / std::sqrt(static_cast<double>(d));
  Var qkv = linear(p, pre + "attn.qkv", x);
  std::vector<Var> heads;
  heads.reserve(H);
  for (std::size_t h = 0; h < H; ++h) {
    Var q = slice_cols(qkv, h * d, (h + 1) * d);
    Var k = slice_cols(qkv, C + h * d, C + (h + 1) * d);
    Var v = slice_cols(qkv, 2 * C + h * d, 2 * C + (h + 1) * d);
    Var a = softmax(scale(matmul(q, transpose(k)), scl));
    if (probe) probe->push_back(a.value());
    heads.push_back(matmul(a, v));
  }
  return linear(p, pre + "attn.proj", H == 1 ? heads.front() : concat_cols(heads));
}

/// Pre-norm transformer blocks; preserves sequence length and width.
inline Var encode(const BoundParams& p, const BackboneConfig& cfg, const Var& seq,
                  AttentionProbe* probe = nullptr) {
  if (seq.value().rank() != 2 || seq.value().cols() != static_cast<std::size_t>(cfg.embed_dim))
    throw ShapeError("encode: expected S x " + std::to_string(cfg.embed_dim) + " tokens, got " +
                     shape_str(seq.shape()));
  Var x = seq;
  for (int b = 0; b < cfg.depth; ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    std::vector<Tensor>* slot = nullptr;
    if (probe) {
      probe->layers.emplace_back();
      slot = &probe->layers.back();
    }
    Var h = layer_norm(x, p[pre + "norm1.weight"], p[pre + "norm1.bias"]);
    x = add(x, attention(p, cfg, pre, h, slot));
    h = layer_norm(x, p[pre + "norm2.weight"], p[pre + "norm2.bias"]);
    h = linear(p, pre + "mlp.fc2", gelu(linear(p, pre + "mlp.fc1", h)));
    x = add(x, h);
  }
  return x;
}

/// Head MLP up to the bottleneck (before L2 normalization): n x B.
inline Var head_bottleneck(const BoundParams& p, const std::string& head, const Var& tokens) {
  Var h = gelu(linear(p, head + ".fc1", tokens));
  h = gelu(linear(p, head + ".fc2", h));
  return linear(p, head + ".fc3", h);
}

/// L2-normalize then final linear: n x K logits.
inline Var head_output(const BoundParams& p, const std::string& head, const Var& bottleneck) {
  return linear(p, head + ".last", l2_normalize(bottleneck));
}

/// Projection head: MLP -> L2-normalize -> linear to K logits, applied row-wise.
inline Var project(const BoundParams& p, const std::string& head, const Var& tokens) {
  return head_output(p, head, head_bottleneck(p, head, tokens));
}

/// Encoder outputs of one view after the final norm.
struct ViewFeatures {
  Var tokens;  // S x C
  TokenLayout layout;

  Var cls() const {
    if (!layout.include_cls) throw std::logic_error("view has no [CLS] token");
    return slice_rows(tokens, 0, 1);
  }
  Var part(int i) const {
    const int r = layout.part_row(i);
    if (r < 0) throw std::out_of_range("view has no [PART]_" + std::to_string(i));
    return slice_rows(tokens, static_cast<std::size_t>(r), static_cast<std::size_t>(r) + 1);
  }
};

inline ViewFeatures forward_features(const BoundParams& p, const BackboneConfig& cfg, const Image& img,
                                     const TokenLayout& layout, AttentionProbe* probe = nullptr) {
  Var seq = assemble_tokens(p, cfg, embed_patches(p, cfg, img), layout);
  Var out = encode(p, cfg, seq, probe);
  out = layer_norm(out, p["norm.weight"], p["norm.bias"]);
  return ViewFeatures{out, layout};
}

/// Projection-head logits of the special tokens of one view.
struct ViewLogits {
  Var cls;                   // 1 x K, invalid when the layout has no [CLS]
  std::vector<int> part_ids;  // 1-based, aligned with `parts`
  std::vector<Var> parts;     // each 1 x K

  const Var& part(int i) const {
    for (std::size_t k = 0; k < part_ids.size(); ++k)
      if (part_ids[k] == i) return parts[k];
    throw std::out_of_range("missing [PART]_" + std::to_string(i) + " output");
  }
};

inline ViewLogits project_view(const BoundParams& p, const BackboneConfig& cfg, const ViewFeatures& f) {
  ViewLogits out;
  const std::size_t off = f.layout.include_cls ? 1 : 0;
  if (f.layout.include_cls) out.cls = project(p, "head.cls", f.cls());
  const std::size_t n = f.layout.part_indices.size();
  if (n == 0) return out;
  out.part_ids = f.layout.part_indices;
  if (cfg.separate_part_heads) {
    for (int i : f.layout.part_indices) out.parts.push_back(project(p, part_head_name(cfg, i), f.part(i)));
  } else {
    Var all = project(p, "head.part", slice_rows(f.tokens, off, off + n));
    for (std::size_t k = 0; k < n; ++k) out.parts.push_back(slice_rows(all, k, k + 1));
  }
  return out;
}

/// Head-averaged attention of one special token in one layer.
struct AttentionMap {
  std::vector<double> over_tokens;   // length S, sums to 1
  std::vector<double> over_patches;  // length P, patch entries renormalized to sum to 1
  int grid_h = 0;
  int grid_w = 0;
};

/// `token` is 0 for [CLS] or a 1-based part index; layer < 0 counts from the end.
inline AttentionMap attention_map(const NetworkParams& net, const Image& img, int token, int layer = -1) {
  const BackboneConfig& cfg = net.config();
  if (cfg.depth == 0) throw std::out_of_range("attention_map: backbone has no attention layers");
  const int li = layer < 0 ? cfg.depth + layer : layer;
  if (li < 0 || li >= cfg.depth)
    throw std::out_of_range("attention_map: layer " + std::to_string(layer) + " out of range for depth " +
                            std::to_string(cfg.depth));
  if (token < 0 || token > cfg.num_parts)
    throw std::out_of_range("attention_map: token " + std::to_string(token) + " out of range");
  Tape tape;
  BoundParams p(tape, net.store(), false);
  AttentionProbe probe;
  const TokenLayout layout = TokenLayout::global(cfg.num_parts);
  forward_features(p, cfg, img, layout, &probe);
  const auto& heads = probe.layers[static_cast<std::size_t>(li)];
  const std::size_t S = heads.front().cols();
  const std::size_t row = token == 0 ? 0 : static_cast<std::size_t>(layout.part_row(token));
  AttentionMap m;
  m.grid_h = img.height / cfg.patch_size;
  m.grid_w = img.width / cfg.patch_size;
  m.over_tokens.assign(S, 0.0);
  for (const Tensor& a : heads)
    for (std::size_t j = 0; j < S; ++j) m.over_tokens[j] += a.at(row, j) / static_cast<double>(heads.size());
  const std::size_t special = layout.special_count();
  m.over_patches.assign(S - special, 0.0);
  for (const Tensor& a : heads) {
    double mass = 0.0;
    for (std::size_t j = special; j < S; ++j) mass += a.at(row, j);
    for (std::size_t j = special; j < S; ++j)
      m.over_patches[j - special] += a.at(row, j) / mass / static_cast<double>(heads.size());
  }
  return m;
}

}  // namespace pass
