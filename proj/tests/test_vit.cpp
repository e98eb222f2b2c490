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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "pass/gradcheck.hpp"
#include "pass/vit.hpp"

namespace pass {
namespace {

BackboneConfig tiny_config() {
  BackboneConfig c;
  c.image_height = 8;
  c.image_width = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.depth = 2;
  c.heads = 2;
  c.num_parts = 2;
  c.proj_dim = 6;
  c.head_hidden = 8;
  return c;
}

Image random_image(int h, int w, std::uint64_t seed) {
  Image img(h, w, 3);
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : img.pixels) v = u(rng);
  return img;
}

// Adds noise so attention is far from uniform and gradients are generic.
void perturb(ParamStore& s, double amount, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-amount, amount);
  for (auto& p : s.items())
    for (double& v : p.value.data()) v += u(rng);
}

TEST(Patchify, CountsPatches) {
  EXPECT_EQ(patchify(Image(8, 4, 3), 4).rows(), 2u);
  EXPECT_EQ(patchify(Image(64, 32, 3), 4).rows(), 128u);
  EXPECT_EQ(patchify(Image(256, 128, 3), 16).rows(), 128u);
  EXPECT_EQ(patchify(Image(8, 4, 3), 4).cols(), 48u);
}

TEST(Patchify, NonDivisibleRaises) {
  EXPECT_THROW(patchify(Image(10, 8, 3), 4), std::invalid_argument);
  BackboneConfig c;
  c.image_height = 62;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = BackboneConfig{};
  c.heads = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(PositionalEmbedding, IdentityOnCanonicalGrid) {
  const Tensor m = grid_interpolation(4, 3, 4, 3);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) EXPECT_EQ(m.at(r, c), r == c ? 1.0 : 0.0);
  BackboneConfig cfg = tiny_config();
  NetworkParams net(cfg, 1);
  Tape tape;
  BoundParams p(tape, net.store(), false);
  EXPECT_EQ(positional_embedding(p, cfg, 2, 2).value(), net.store().at("pos_embed").value);
}

TEST(PositionalEmbedding, InterpolationRowsSumToOne) {
  const Tensor m = grid_interpolation(16, 8, 6, 3);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0;
    for (std::size_t c = 0; c < m.cols(); ++c) s += m.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Assemble, LayoutsAndLengths) {
  BackboneConfig cfg = tiny_config();
  cfg.num_parts = 3;
  NetworkParams net(cfg, 1);
  Tape tape;
  BoundParams p(tape, net.store(), false);
  Var patches = embed_patches(p, cfg, random_image(8, 8, 2));
  EXPECT_EQ(assemble_tokens(p, cfg, patches, TokenLayout::global(3)).value().rows(), 3u + 1u + 4u);
  EXPECT_EQ(assemble_tokens(p, cfg, patches, TokenLayout::local(2)).value().rows(), 1u + 1u + 4u);
  EXPECT_THROW(assemble_tokens(p, cfg, patches, TokenLayout{true, {5}}), std::out_of_range);
  Var seq = assemble_tokens(p, cfg, patches, TokenLayout::local(2));
  // Row 1 is [PART]_2.
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(seq.value().at(1, c), net.store().at("part_tokens").value.at(1, c));
}

TEST(Encode, DepthZeroIsIdentity) {
  BackboneConfig cfg = tiny_config();
  cfg.depth = 0;
  NetworkParams net(cfg, 1);
  Tape tape;
  BoundParams p(tape, net.store(), false);
  Var seq = assemble_tokens(p, cfg, embed_patches(p, cfg, random_image(8, 8, 3)), TokenLayout::global(2));
  EXPECT_EQ(encode(p, cfg, seq).value(), seq.value());
}

TEST(Encode, PreservesShapeForEveryLayout) {
  BackboneConfig cfg = tiny_config();
  NetworkParams net(cfg, 1);
  Tape tape;
  BoundParams p(tape, net.store(), false);
  Var patches = embed_patches(p, cfg, random_image(8, 8, 3));
  for (const TokenLayout& l : {TokenLayout::global(2), TokenLayout::local(1), TokenLayout{false, {}}}) {
    Var seq = assemble_tokens(p, cfg, patches, l);
    const Shape expected = seq.shape();
    const Shape got = encode(p, cfg, seq).shape();
    EXPECT_EQ(got, expected);
  }
}

TEST(Encode, PermutingPatchesPermutesOutputs) {
  BackboneConfig cfg = tiny_config();
  NetworkParams net(cfg, 1);
  perturb(net.store(), 0.3, 9);
  Tape tape;
  BoundParams p(tape, net.store(), false);
  Var patches = embed_patches(p, cfg, random_image(8, 8, 4));
  const TokenLayout layout = TokenLayout::global(2);
  Var a = encode(p, cfg, assemble_tokens(p, cfg, patches, layout));
  // Swap patch rows 0 and 3 (positional embeddings travel with them).
  Var swapped = concat_rows({slice_rows(patches, 3, 4), slice_rows(patches, 1, 3), slice_rows(patches, 0, 1)});
  Var b = encode(p, cfg, assemble_tokens(p, cfg, swapped, layout));
  const std::size_t C = 8, sp = 3;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t s = 0; s < sp; ++s) EXPECT_NEAR(a.value().at(s, c), b.value().at(s, c), 1e-12);
    EXPECT_NEAR(a.value().at(sp + 0, c), b.value().at(sp + 3, c), 1e-12);
    EXPECT_NEAR(a.value().at(sp + 3, c), b.value().at(sp + 0, c), 1e-12);
    EXPECT_NEAR(a.value().at(sp + 1, c), b.value().at(sp + 1, c), 1e-12);
  }
}

TEST(Attention, SingleHeadTwoTokensByHand) {
  BackboneConfig cfg;
  cfg.embed_dim = 2;
  cfg.heads = 1;
  ParamStore s;
  // qkv = x * W with W = [I | 2I | I]; proj = identity.
  Tensor w({2, 6}, 0.0);
  w.at(0, 0) = w.at(1, 1) = 1;
  w.at(0, 2) = w.at(1, 3) = 2;
  w.at(0, 4) = w.at(1, 5) = 1;
  s.add("a.attn.qkv.weight", w);
  s.add("a.attn.qkv.bias", Tensor({6}));
  Tensor eye({2, 2}, 0.0);
  eye.at(0, 0) = eye.at(1, 1) = 1;
  s.add("a.attn.proj.weight", eye);
  s.add("a.attn.proj.bias", Tensor({2}));
  Tape tape;
  BoundParams p(tape, s, false);
  Var x = tape.constant(Tensor({2, 2}, std::vector<double>{1, 0, 0, 1}));
  const Tensor out = attention(p, cfg, "a.", x, nullptr).value();
  // scores = q k^T / sqrt(2) = 2 I / sqrt(2); softmax rows: [e^a, 1] / (e^a + 1), a = sqrt(2).
  const double a = std::sqrt(2.0);
  const double p0 = std::exp(a) / (std::exp(a) + 1);
  EXPECT_NEAR(out.at(0, 0), p0, 1e-14);
  EXPECT_NEAR(out.at(0, 1), 1 - p0, 1e-14);
  EXPECT_NEAR(out.at(1, 0), 1 - p0, 1e-14);
  EXPECT_NEAR(out.at(1, 1), p0, 1e-14);
}

TEST(Project, OutputsKLogitsPerToken) {
  BackboneConfig cfg = tiny_config();
  NetworkParams net(cfg, 1);
  Tape tape;
  BoundParams p(tape, net.store(), false);
  ViewFeatures f = forward_features(p, cfg, random_image(8, 8, 5), TokenLayout::global(2));
  ViewLogits lg = project_view(p, cfg, f);
  EXPECT_EQ(lg.cls.shape(), (Shape{1, 6}));
  ASSERT_EQ(lg.parts.size(), 2u);
  EXPECT_EQ(lg.part(2).shape(), (Shape{1, 6}));
}

TEST(Project, SeparatePartHeadsSwitch) {
  BackboneConfig cfg = tiny_config();
  cfg.separate_part_heads = true;
  NetworkParams net(cfg, 1);
  EXPECT_TRUE(net.store().contains("head.part1.last.weight"));
  EXPECT_TRUE(net.store().contains("head.part2.last.weight"));
  EXPECT_FALSE(net.store().contains("head.part.last.weight"));
  cfg.separate_part_heads = false;
  NetworkParams shared(cfg, 1);
  EXPECT_TRUE(shared.store().contains("head.part.last.weight"));
}

TEST(Project, LastLayerColumnsStartUnitNorm) {
  BackboneConfig cfg = tiny_config();
  NetworkParams net(cfg, 1);
  const Tensor& w = net.store().at("head.cls.last.weight").value;
  for (std::size_t k = 0; k < w.cols(); ++k) {
    double s = 0;
    for (std::size_t b = 0; b < w.rows(); ++b) s += w.at(b, k) * w.at(b, k);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(NetworkParams, SpecialTokensAreDistinct) {
  BackboneConfig cfg = tiny_config();
  cfg.num_parts = 3;
  NetworkParams net(cfg, 1);
  const Tensor& cls = net.store().at("cls_token").value;
  const Tensor& parts = net.store().at("part_tokens").value;
  EXPECT_EQ(cls.shape(), (Shape{1, 8}));
  EXPECT_EQ(parts.shape(), (Shape{3, 8}));
  for (std::size_t i = 0; i < 3; ++i) {
    bool differs_from_cls = false;
    for (std::size_t c = 0; c < 8; ++c) differs_from_cls |= parts.at(i, c) != cls.at(0, c);
    EXPECT_TRUE(differs_from_cls);
  }
}

TEST(NetworkParams, SameSeedSameWeights) {
  EXPECT_TRUE(NetworkParams(tiny_config(), 3).store().items()[5].value ==
              NetworkParams(tiny_config(), 3).store().items()[5].value);
  EXPECT_THROW(NetworkParams(tiny_config(), NetworkParams(BackboneConfig{}, 0).store()), std::invalid_argument);
}

TEST(Backbone, GradientCheckThroughWholeNetwork) {
  BackboneConfig cfg = tiny_config();
  NetworkParams net(cfg, 2);
  perturb(net.store(), 0.3, 7);
  const Image img = random_image(8, 8, 6);
  Rng rng(3);
  Tensor w({1, 6});
  for (double& v : w.data()) v = uniform01(rng);
  auto loss = [&](const BoundParams& p) {
    ViewLogits lg = project_view(p, cfg, forward_features(p, cfg, img, TokenLayout::global(2)));
    Tape& t = p.tape();
    return add(sum(mul(log_softmax(lg.cls), t.constant(w))), sum(mul(softmax(lg.part(2)), t.constant(w))));
  };
  EXPECT_LT(finite_diff_check_store(loss, net.store(), 1e-6, 3), 1e-6);
}

TEST(Backbone, PartTokenGradientOnlyWhenPresent) {
  BackboneConfig cfg = tiny_config();
  cfg.num_parts = 3;
  NetworkParams net(cfg, 2);
  Tape tape;
  BoundParams p(tape, net.store(), true);
  ViewLogits lg = project_view(p, cfg, forward_features(p, cfg, random_image(8, 8, 1), TokenLayout::local(2)));
  tape.backward(add(sum(square(lg.cls)), sum(square(lg.part(2)))));
  const Tensor g = tape.grad(p["part_tokens"]);
  double row[3] = {0, 0, 0};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 8; ++c) row[i] += std::abs(g.at(i, c));
  EXPECT_EQ(row[0], 0.0);
  EXPECT_GT(row[1], 0.0);
  EXPECT_EQ(row[2], 0.0);
}

TEST(AttentionMap, NormalizedAndRangeChecked) {
  BackboneConfig cfg = tiny_config();
  NetworkParams net(cfg, 2);
  perturb(net.store(), 0.3, 4);
  const Image img = random_image(8, 8, 9);
  for (int t = 0; t <= 2; ++t) {
    const AttentionMap m = attention_map(net, img, t);
    EXPECT_EQ(m.grid_h, 2);
    EXPECT_EQ(m.grid_w, 2);
    EXPECT_NEAR(std::accumulate(m.over_tokens.begin(), m.over_tokens.end(), 0.0), 1.0, 1e-12);
    EXPECT_NEAR(std::accumulate(m.over_patches.begin(), m.over_patches.end(), 0.0), 1.0, 1e-12);
  }
  EXPECT_THROW(attention_map(net, img, 3), std::out_of_range);
  EXPECT_THROW(attention_map(net, img, 0, 2), std::out_of_range);
  EXPECT_NO_THROW(attention_map(net, img, 0, 0));
}

TEST(AttentionMap, UniformWhenQueriesAreZero) {
  BackboneConfig cfg = tiny_config();
  NetworkParams net(cfg, 2);
  for (const char* name : {"blocks.1.attn.qkv.weight", "blocks.1.attn.qkv.bias"}) net.store().at(name).value.fill(0.0);
  const AttentionMap m = attention_map(net, random_image(8, 8, 2), 1);
  for (double v : m.over_patches) EXPECT_NEAR(v, 0.25, 1e-12);
}

}  // namespace
}  // namespace pass
