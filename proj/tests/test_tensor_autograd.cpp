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
#include <vector>

#include "pass/gradcheck.hpp"
#include "pass/ops.hpp"
#include "pass/params.hpp"

namespace pass {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Runs the finite-difference check of `fn` over freshly drawn inputs.
template <class Fn>
double check(Fn fn, std::vector<Tensor> inputs, double eps = 1e-6) {
  std::vector<Tensor*> ptrs;
  for (Tensor& t : inputs) ptrs.push_back(&t);
  return finite_diff_check(fn, std::span<Tensor* const>(ptrs), eps);
}

TEST(Tensor, ShapeAndStorage) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 1.5);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_EQ(Tensor::scalar(4.0).item(), 4.0);
}

TEST(Autograd, AddBackwardIsOnes) {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 2}, 1.0));
  Var b = tape.leaf(Tensor({2, 2}, 2.0));
  tape.backward(sum(add(a, b)));
  {
    const Tensor grad = tape.grad(a);
    for (double g : grad.data()) EXPECT_EQ(g, 1.0);
  }
  {
    const Tensor grad = tape.grad(b);
    for (double g : grad.data()) EXPECT_EQ(g, 1.0);
  }
}

TEST(Autograd, ShapeMismatchRaises) {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}));
  Var b = tape.leaf(Tensor({3, 2}));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(a, tape.leaf(Tensor({2, 2}))), ShapeError);
}

TEST(Autograd, BackwardNeedsScalar) {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 2}, 1.0));
  EXPECT_THROW(tape.backward(scale(a, 2.0)), ShapeError);
}

TEST(Autograd, UnreachableLeafHasZeroGrad) {
  Tape tape;
  Var a = tape.leaf(Tensor({3}, 1.0));
  Var b = tape.leaf(Tensor({3}, 2.0));
  tape.backward(sum(square(a)));
  {
    const Tensor grad = tape.grad(b);
    for (double g : grad.data()) EXPECT_EQ(g, 0.0);
  }
}

TEST(Autograd, DetachStopsGradient) {
  Tape tape;
  Var a = tape.leaf(Tensor({3}, 2.0));
  Var y = add(mul(detach(a), a), detach(square(a)));
  tape.backward(sum(y));
  // d/da [c * a] with c = a detached = c = 2.
  {
    const Tensor grad = tape.grad(a);
    for (double g : grad.data()) EXPECT_DOUBLE_EQ(g, 2.0);
  }
}

TEST(Autograd, ReusedNodeAccumulates) {
  Tape tape;
  Var a = tape.leaf(Tensor::vector({3.0}));
  Var y = mul(a, a);  // a used twice
  tape.backward(sum(add(y, a)));
  EXPECT_DOUBLE_EQ(tape.grad(a)[0], 7.0);
}

TEST(Autograd, BroadcastBiasGradientSumsRows) {
  Tape tape;
  Var x = tape.leaf(Tensor({4, 3}, 1.0));
  Var b = tape.leaf(Tensor({3}, 0.0));
  tape.backward(sum(add(x, b)));
  {
    const Tensor grad = tape.grad(b);
    for (double g : grad.data()) EXPECT_DOUBLE_EQ(g, 4.0);
  }
}

TEST(GradCheck, ElementwiseOps) {
  Rng rng(1);
  auto unary = [&](auto op, double lo, double hi) {
    return check([op](Tape&, std::span<const Var> v) { return sum(op(v[0])); },
                 {random_tensor({3, 4}, rng, lo, hi)});
  };
  EXPECT_LT(unary([](const Var& x) { return exp(x); }, -1, 1), 1e-7);
  EXPECT_LT(unary([](const Var& x) { return log(x); }, 0.5, 2), 1e-7);
  EXPECT_LT(unary([](const Var& x) { return sqrt(x); }, 0.5, 2), 1e-7);
  EXPECT_LT(unary([](const Var& x) { return square(x); }, -1, 1), 1e-7);
  EXPECT_LT(unary([](const Var& x) { return gelu(x); }, -2, 2), 1e-7);
  EXPECT_LT(unary([](const Var& x) { return relu(x); }, 0.1, 2), 1e-7);
  EXPECT_LT(unary([](const Var& x) { return clamp_min(x, 0.0); }, 0.1, 2), 1e-7);
  EXPECT_LT(unary([](const Var& x) { return scale(add_scalar(x, 2.0), -3.0); }, -1, 1), 1e-7);
}

TEST(GradCheck, BinaryOpsWithBroadcast) {
  Rng rng(2);
  auto w = random_tensor({3, 4}, rng);
  auto fn = [](auto op) {
    return [op](Tape&, std::span<const Var> v) { return sum(square(op(v[0], v[1]))); };
  };
  EXPECT_LT(check(fn([](const Var& a, const Var& b) { return add(a, b); }),
                  {random_tensor({3, 4}, rng), random_tensor({4}, rng)}), 1e-7);
  EXPECT_LT(check(fn([](const Var& a, const Var& b) { return sub(a, b); }),
                  {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}), 1e-7);
  EXPECT_LT(check(fn([](const Var& a, const Var& b) { return mul(a, b); }),
                  {random_tensor({3, 4}, rng), random_tensor({4}, rng)}), 1e-7);
  EXPECT_LT(check(fn([](const Var& a, const Var& b) { return div(a, b); }),
                  {random_tensor({3, 4}, rng), random_tensor({4}, rng, 0.5, 2.0)}), 1e-7);
}

TEST(GradCheck, MatrixOps) {
  Rng rng(3);
  EXPECT_LT(check([](Tape&, std::span<const Var> v) { return sum(square(matmul(v[0], v[1]))); },
                  {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}), 1e-7);
  EXPECT_LT(check([](Tape& t, std::span<const Var> v) {
                    Tensor w({4, 3});
                    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = 0.1 * static_cast<double>(i);
                    return sum(mul(transpose(v[0]), t.constant(w)));
                  },
                  {random_tensor({3, 4}, rng)}), 1e-7);
  EXPECT_LT(check([](Tape&, std::span<const Var> v) { return sum(square(reshape(v[0], {2, 6}))); },
                  {random_tensor({3, 4}, rng)}), 1e-7);
}

TEST(GradCheck, SoftmaxFamily) {
  Rng rng(4);
  Tensor w = random_tensor({3, 5}, rng);
  auto weighted = [w](auto op) {
    return [w, op](Tape& t, std::span<const Var> v) { return sum(mul(op(v[0]), t.constant(w))); };
  };
  EXPECT_LT(check(weighted([](const Var& x) { return softmax(x); }), {random_tensor({3, 5}, rng)}), 1e-7);
  EXPECT_LT(check(weighted([](const Var& x) { return log_softmax(x); }), {random_tensor({3, 5}, rng)}), 1e-7);
  EXPECT_LT(check(weighted([](const Var& x) { return l2_normalize(x); }), {random_tensor({3, 5}, rng)}), 1e-7);
}

TEST(GradCheck, Reductions) {
  Rng rng(5);
  Tensor w = random_tensor({4}, rng);
  EXPECT_LT(check([w](Tape& t, std::span<const Var> v) { return sum(mul(sum_rows(v[0]), t.constant(w))); },
                  {random_tensor({3, 4}, rng)}), 1e-7);
  EXPECT_LT(check([w](Tape& t, std::span<const Var> v) { return sum(mul(mean_rows(v[0]), t.constant(w))); },
                  {random_tensor({3, 4}, rng)}), 1e-7);
  EXPECT_LT(check([](Tape&, std::span<const Var> v) { return sum(square(sum_last(v[0]))); },
                  {random_tensor({3, 4}, rng)}), 1e-7);
  EXPECT_LT(check([](Tape&, std::span<const Var> v) { return square(mean(v[0])); }, {random_tensor({3, 4}, rng)}),
            1e-7);
}

TEST(GradCheck, LayerNorm) {
  Rng rng(6);
  Tensor w = random_tensor({3, 6}, rng);
  EXPECT_LT(check([w](Tape& t, std::span<const Var> v) {
                    return sum(mul(layer_norm(v[0], v[1], v[2]), t.constant(w)));
                  },
                  {random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)}), 1e-6);
}

TEST(GradCheck, ConcatSliceGather) {
  Rng rng(7);
  EXPECT_LT(check([](Tape&, std::span<const Var> v) {
                    Var c = concat_rows({v[0], v[1]});
                    Var d = concat_cols({slice_cols(c, 0, 2), slice_cols(c, 1, 3)});
                    return sum(square(slice_rows(d, 1, 4)));
                  },
                  {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}), 1e-7);
  EXPECT_LT(check([](Tape&, std::span<const Var> v) { return sum(square(gather(v[0], {0, 5, 5, 2}))); },
                  {random_tensor({2, 3}, rng)}), 1e-7);
}

TEST(GradCheck, PairwiseEuclidean) {
  Rng rng(8);
  Tensor w = random_tensor({4, 4}, rng);
  EXPECT_LT(check([w](Tape& t, std::span<const Var> v) { return sum(mul(pairwise_euclidean(v[0]), t.constant(w))); },
                  {random_tensor({4, 3}, rng)}), 1e-6);
}

TEST(PairwiseEuclidean, MatchesDirectDistances) {
  Tape tape;
  Var x = tape.leaf(Tensor({3, 2}, std::vector<double>{0, 0, 3, 4, 3, 4}));
  Tensor d = pairwise_euclidean(x).value();
  EXPECT_DOUBLE_EQ(d.at(0, 1), 5.0);
  EXPECT_DOUBLE_EQ(d.at(1, 0), 5.0);
  EXPECT_DOUBLE_EQ(d.at(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(d.at(0, 0), 0.0);
  tape.backward(sum(pairwise_euclidean(x)));
  {
    const Tensor grad = tape.grad(x);
    for (double g : grad.data()) EXPECT_TRUE(std::isfinite(g));
  }
}

TEST(GradCheck, RejectsBadEpsilon) {
  Tensor t({1}, 1.0);
  std::vector<Tensor*> p{&t};
  auto fn = [](Tape&, std::span<const Var> v) { return sum(v[0]); };
  EXPECT_THROW(finite_diff_check(fn, std::span<Tensor* const>(p), 0.0), std::invalid_argument);
}

TEST(Schedules, CosineEndpoints) {
  EXPECT_DOUBLE_EQ(cosine_schedule(0.996, 1.0, 0, 100), 0.996);
  EXPECT_DOUBLE_EQ(cosine_schedule(0.996, 1.0, 100, 100), 1.0);
  EXPECT_NEAR(cosine_schedule(0.0, 1.0, 50, 100), 0.5, 1e-12);
  // Linear warmup starts at base/warmup so the first step already moves.
  EXPECT_DOUBLE_EQ(warmup_cosine(1.0, 0.0, 10, 0, 100), 0.1);
  EXPECT_NEAR(warmup_cosine(1.0, 0.0, 10, 9, 100), 1.0, 1e-12);
  EXPECT_NEAR(warmup_cosine(1.0, 0.0, 10, 10, 100), 1.0, 1e-12);
}

TEST(AdamW, DecayOnlyOnFlaggedParams) {
  ParamStore s;
  s.add("w", Tensor({2}, 1.0), true);
  s.add("b", Tensor({2}, 1.0), false);
  AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, 0.5, 0.0});
  opt.step(s, 0.1);  // zero gradients: only decay moves values
  EXPECT_DOUBLE_EQ(s.at("w").value[0], 1.0 - 0.1 * 0.5);
  EXPECT_DOUBLE_EQ(s.at("b").value[0], 1.0);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ParamStore s;
  s.add("w", Tensor::vector({0.0, 0.0}), false);
  s.at("w").grad = Tensor::vector({3.0, -0.5});
  AdamW opt(AdamWConfig{0.9, 0.999, 0.0, 0.0, 0.0});
  opt.step(s, 0.01);
  EXPECT_NEAR(s.at("w").value[0], -0.01, 1e-12);
  EXPECT_NEAR(s.at("w").value[1], 0.01, 1e-12);
}

TEST(AdamW, ClipsGlobalNorm) {
  ParamStore a, b;
  a.add("w", Tensor::vector({0.0}), false);
  b.add("w", Tensor::vector({0.0}), false);
  a.at("w").grad = Tensor::vector({10.0});
  b.at("w").grad = Tensor::vector({10.0});
  AdamW clipped(AdamWConfig{0.9, 0.999, 1e-8, 0.0, 1.0});
  clipped.step(a, 0.1);
  EXPECT_NEAR(clipped.first_moments()[0][0], 0.1 * 1.0, 1e-12);
  AdamW plain(AdamWConfig{0.9, 0.999, 1e-8, 0.0, 0.0});
  plain.step(b, 0.1);
  EXPECT_NEAR(plain.first_moments()[0][0], 0.1 * 10.0, 1e-12);
}

}  // namespace
}  // namespace pass
