/*
 * Copyright 2026 The CapsAcc Simulator Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "capsacc/capsnet.hpp"

using namespace capsacc;

namespace {

RealTensor random_tensor(Shape shape, double lo, double hi, std::mt19937_64& gen) {
  RealTensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values) v = u(gen);
  return t;
}

// Random weights drawn on the weight grid so the fixed and real models see
// identical parameters.
WeightSet grid_weights(const NetworkConfig& cfg, const QuantConfig& q, double bound, uint64_t seed) {
  std::mt19937_64 gen(seed);
  WeightSet w = WeightSet::zeros(cfg);
  int64_t r = static_cast<int64_t>(bound / q.weight.lsb());
  for (RealTensor* t : {&w.conv1_kernels, &w.conv1_biases, &w.primary_kernels, &w.primary_biases, &w.classcaps_w}) {
    for (auto& v : t->values) v = q.weight.value_of(static_cast<int64_t>(gen() % (2 * r + 1)) - r);
  }
  return w;
}

double norm(std::span<const double> v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

}  // namespace

TEST_CASE("network shapes") {
  NetworkConfig cfg;
  CHECK(cfg.conv1_out_h() == 20);
  CHECK(cfg.conv1_out_w() == 20);
  CHECK(cfg.conv1_out_h() * cfg.conv1_out_w() * cfg.conv1.channels == 102400);
  CHECK(cfg.primary_out_h() == 6);
  CHECK(cfg.primary_out_w() == 6);
  CHECK(cfg.num_primary_capsules() == 1152);
  CHECK(cfg.primary_reduction() == 81 * 256);

  NetworkConfig bad = cfg;
  bad.routing_iterations = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = cfg;
  bad.conv1.kernel = 29;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  CHECK_NOTHROW(toy_network().validate());
}

TEST_CASE("parameter counts and memory") {
  NetworkConfig cfg;
  auto c = count_parameters(cfg);
  CHECK(c.conv1 == 20992);
  CHECK(c.primarycaps == 5308672);
  CHECK(c.classcaps == 1474560);
  CHECK(c.coupling_coefficients == 11520);
  CHECK(c.trainable_total() == 6804224);
  CHECK(estimate_memory(cfg, 8) == 6804224);
  CHECK(estimate_memory(cfg, 8) <= 8u << 20);
  CHECK(estimate_memory(cfg, 32) == 4 * estimate_memory(cfg, 8));
  CHECK(estimate_memory(cfg, 16) == 2 * estimate_memory(cfg, 8));
  CHECK_THROWS_AS(estimate_memory(cfg, 12), InvalidArgument);

  // Brute-force count from the zero-filled tensors.
  auto w = WeightSet::zeros(cfg);
  CHECK(w.conv1_kernels.size() + w.conv1_biases.size() == c.conv1);
  CHECK(w.primary_kernels.size() + w.primary_biases.size() == c.primarycaps);
  CHECK(w.classcaps_w.size() == c.classcaps);
}

TEST_CASE("real conv2d") {
  std::mt19937_64 gen(3);
  auto in = random_tensor({5, 5, 2}, -1, 1, gen);
  // 1x1 identity kernel, zero bias.
  RealTensor k({1, 1, 2, 2});
  k.values = {1, 0, 0, 1};
  auto out = real::conv2d(in, k, RealTensor({2}), 1);
  CHECK(out.shape == Shape{5, 5, 2});
  CHECK(out.values == in.values);

  auto k3 = random_tensor({3, 3, 2, 4}, -1, 1, gen);
  auto b = random_tensor({4}, -1, 1, gen);
  auto o2 = real::conv2d(in, k3, b, 2);
  CHECK(o2.shape == Shape{2, 2, 4});
  // Direct sum for one output.
  double want = b[3];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 2; ++i) want += in[((2 + r) * 5 + (0 + c)) * 2 + i] * k3[((r * 3 + c) * 2 + i) * 4 + 3];
  CHECK(o2[(1 * 2 + 0) * 4 + 3] == doctest::Approx(want).epsilon(1e-12));

  CHECK_THROWS_AS(real::conv2d(in, random_tensor({3, 3, 3, 4}, 0, 1, gen), b, 1), InvalidArgument);
}

TEST_CASE("real squash examples") {
  std::vector<double> z(8, 0.0);
  CHECK(real::squash(z) == z);
  std::vector<double> s = {0.6, 0.8};
  auto v = real::squash(s);
  CHECK(v[0] == doctest::Approx(0.3));
  CHECK(v[1] == doctest::Approx(0.4));
}

TEST_CASE("real squash derivative peak") {
  auto f = [](double x) { return real::squash(std::vector<double>{x})[0]; };
  const double h = 1e-6;
  double best_x = 0, best_d = -1;
  for (double x = 0.0; x <= 2.0; x += 1e-4) {
    double d = (f(x + h) - f(x - h)) / (2 * h);
    if (d > best_d) best_d = d, best_x = x;
  }
  // d/dx x^2/(1+x^2) = 2x/(1+x^2)^2 peaks at 1/sqrt(3) with 3*sqrt(3)/8.
  CHECK(std::fabs(best_x - 1.0 / std::sqrt(3.0)) <= 1e-4);
  CHECK(std::fabs(best_d - 3.0 * std::sqrt(3.0) / 8.0) <= 1e-6);
  CHECK(std::fabs(best_d - 0.6495) <= 5e-4);
}

TEST_CASE("real squash properties") {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int t = 0; t < 10000; ++t) {
    std::vector<double> s(1 + gen() % 16);
    for (auto& x : s) x = u(gen) * std::pow(10.0, static_cast<double>(gen() % 5) - 2.0);
    auto v = real::squash(s);
    double ns = norm(s), nv = norm(v);
    REQUIRE(nv < 1.0);
    // Same direction.
    if (ns > 0) {
      double dot = std::inner_product(s.begin(), s.end(), v.begin(), 0.0);
      REQUIRE(dot == doctest::Approx(ns * nv).epsilon(1e-9));
    }
    // Norm is monotone in the input norm.
    std::vector<double> s2 = s;
    for (auto& x : s2) x *= 1.1;
    REQUIRE(norm(real::squash(s2)) >= nv);
  }
}

TEST_CASE("real softmax") {
  auto p = real::softmax(std::vector<double>(10, 0.0));
  for (double x : p) CHECK(x == doctest::Approx(0.1));
  auto q = real::softmax(std::vector<double>{std::log(1.0), std::log(3.0)});
  CHECK(q[0] == doctest::Approx(0.25));
  CHECK(q[1] == doctest::Approx(0.75));

  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-20, 20);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> b(1 + gen() % 12);
    for (auto& x : b) x = u(gen);
    auto a = real::softmax(b);
    REQUIRE(std::accumulate(a.begin(), a.end(), 0.0) == doctest::Approx(1.0));
    auto shifted = b;
    for (auto& x : shifted) x += 123.0;
    auto c = real::softmax(shifted);
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(c[i] == doctest::Approx(a[i]).epsilon(1e-12));
  }
}

TEST_CASE("real classcaps predictions") {
  // E = D: identity matrices reproduce u.
  const size_t n = 3, j = 2, e = 4;
  std::mt19937_64 gen(9);
  auto u = random_tensor({n, e}, -1, 1, gen);
  RealTensor w({n, j, e, e});
  for (size_t i = 0; i < n; ++i)
    for (size_t jj = 0; jj < j; ++jj)
      for (size_t k = 0; k < e; ++k) w[((i * j + jj) * e + k) * e + k] = 1.0;
  auto uh = real::classcaps_predictions(u, w);
  REQUIRE(uh.shape == Shape{n, j, e});
  for (size_t i = 0; i < n; ++i)
    for (size_t jj = 0; jj < j; ++jj)
      for (size_t d = 0; d < e; ++d) CHECK(uh[(i * j + jj) * e + d] == u[i * e + d]);

  auto zero = real::classcaps_predictions(RealTensor({n, e}), random_tensor({n, j, e, 6}, -1, 1, gen));
  for (double x : zero.values) CHECK(x == 0.0);

  // Brute force with E != D.
  auto w2 = random_tensor({n, j, e, 6}, -1, 1, gen);
  auto uh2 = real::classcaps_predictions(u, w2);
  for (size_t i = 0; i < n; ++i)
    for (size_t jj = 0; jj < j; ++jj)
      for (size_t d = 0; d < 6; ++d) {
        double want = 0;
        for (size_t k = 0; k < e; ++k) want += w2[((i * j + jj) * e + k) * 6 + d] * u[i * e + k];
        CHECK(uh2[(i * j + jj) * 6 + d] == doctest::Approx(want));
      }
}

TEST_CASE("real routing") {
  std::mt19937_64 gen(21);
  // J = 1: every coupling is 1 and v = squash(sum_i u_hat).
  auto uh = random_tensor({5, 1, 3}, -0.5, 0.5, gen);
  auto v = real::routing(uh, 3, true);
  std::vector<double> s(3, 0.0);
  for (size_t i = 0; i < 5; ++i)
    for (size_t d = 0; d < 3; ++d) s[d] += uh[i * 3 + d];
  auto want = real::squash(s);
  for (size_t d = 0; d < 3; ++d) CHECK(v[d] == doctest::Approx(want[d]));

  // Hand trace, N = 2, J = 2, D = 1, two iterations.
  RealTensor h({2, 2, 1}, {1.0, 0.0, 0.0, 1.0});
  real::RoutingTrace tr;
  auto v2 = real::routing(h, 2, true, &tr);
  // Iteration 1: c = 1/2, s = (0.5, 0.5), v = squash(0.5) = 0.2.
  // b_ij = u_hat_ij * v_j: b = [[0.2, 0], [0, 0.2]].
  // Iteration 2: c = softmax(0.2, 0), s_0 = c_00, v_0 = c_00^2/(1+c_00^2).
  double c0 = std::exp(0.2) / (1 + std::exp(0.2));
  REQUIRE(tr.couplings.size() == 2);
  CHECK(tr.couplings[0][0] == doctest::Approx(0.5));
  CHECK(tr.couplings[1][0] == doctest::Approx(c0));
  CHECK(tr.couplings[1][1] == doctest::Approx(1 - c0));
  CHECK(v2[0] == doctest::Approx(c0 * c0 / (1 + c0 * c0)));
  CHECK(v2[1] == doctest::Approx(c0 * c0 / (1 + c0 * c0)));

  // Couplings of every input capsule sum to 1.
  auto big = random_tensor({20, 4, 5}, -0.5, 0.5, gen);
  real::RoutingTrace tr2;
  real::routing(big, 3, false, &tr2);
  for (const auto& c : tr2.couplings)
    for (size_t i = 0; i < 20; ++i) {
      double sum = 0;
      for (size_t j = 0; j < 4; ++j) sum += c[i * 4 + j];
      CHECK(sum == doctest::Approx(1.0));
    }

  CHECK_THROWS_AS(real::routing(big, 0, true), InvalidArgument);
}

TEST_CASE("routing skip optimization is exact") {
  std::mt19937_64 gen(31);
  QuantConfig q;
  auto t = ActivationTables::build(q.luts);
  for (int trial = 0; trial < 20; ++trial) {
    auto uh = random_tensor({18, 3, 4}, -0.6, 0.6, gen);
    for (int iters : {1, 2, 3, 5}) {
      auto a = real::routing(uh, iters, true);
      auto b = real::routing(uh, iters, false);
      for (size_t i = 0; i < a.size(); ++i) REQUIRE(std::fabs(a[i] - b[i]) <= 1e-12);

      FixedTensor f({18, 3, 4}, q.data);
      for (size_t i = 0; i < f.size(); ++i) f[i] = static_cast<int32_t>(fx::quantize_raw(uh[i], q.data));
      golden::Counters ca, cb;
      auto fa = golden::routing(f, iters, true, q, t, ca);
      auto fb = golden::routing(f, iters, false, q, t, cb);
      REQUIRE(fa == fb);
    }
  }
}

TEST_CASE("fixed squash and norm") {
  QuantConfig q;
  auto t = ActivationTables::build(q.luts);
  golden::Counters c;
  std::vector<int32_t> zero(16, 0);
  CHECK(golden::squash(zero, q, t, c) == zero);

  // |s| = 1: v = s/2 exactly for representable halves.
  std::vector<int32_t> s = {static_cast<int32_t>(fx::quantize_raw(0.6, q.data)),
                            static_cast<int32_t>(fx::quantize_raw(0.8, q.data))};
  auto v = golden::squash(s, q, t, c);
  CHECK(std::fabs(q.data.value_of(v[0]) - 0.3) <= 2 * q.data.lsb());
  CHECK(std::fabs(q.data.value_of(v[1]) - 0.4) <= 2 * q.data.lsb());

  // Norm of (3, 4) in the score format is 5.
  std::vector<int32_t> st = {static_cast<int32_t>(fx::quantize_raw(0.75, q.data)),
                             static_cast<int32_t>(fx::quantize_raw(1.0, q.data))};
  int32_t n = golden::norm(st, q.norm_shift_score, q, t, c);
  CHECK(q.score_format().value_of(n) == doctest::Approx(1.25).epsilon(0.02));

  // Squash output norm stays below 1 and tracks the real model.
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<int32_t> x(1 + gen() % 16);
    std::vector<double> xr(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
      x[i] = static_cast<int32_t>(gen() % 256) - 128;
      xr[i] = q.data.value_of(x[i]);
    }
    auto y = golden::squash(x, q, t, c);
    auto yr = real::squash(xr);
    double ny = 0;
    for (size_t i = 0; i < y.size(); ++i) {
      double yv = q.data.value_of(y[i]);
      ny += yv * yv;
      REQUIRE(std::fabs(yv - yr[i]) <= 0.1);
    }
    REQUIRE(std::sqrt(ny) <= 1.0 + std::sqrt(static_cast<double>(y.size())) * 0.5 * q.data.lsb());
  }
}

TEST_CASE("fixed softmax") {
  QuantConfig q;
  auto t = ActivationTables::build(q.luts);
  golden::Counters c;
  for (int n : {2, 4, 10}) {
    auto p = golden::softmax(std::vector<int32_t>(static_cast<size_t>(n), 0), q, t, c);
    for (int32_t x : p) CHECK(x == fx::quantize_raw(1.0 / n, q.coupling));
  }
  // Shift invariance up to exp-table rounding.
  std::vector<int32_t> a = {-10, 0, 20}, b = {-5, 5, 25};
  auto pa = golden::softmax(a, q, t, c), pb = golden::softmax(b, q, t, c);
  for (size_t i = 0; i < pa.size(); ++i) CHECK(std::abs(pa[i] - pb[i]) <= 1);
  CHECK(golden::initial_coupling(10, q) == fx::quantize_raw(0.1, q.coupling));
}

TEST_CASE("fixed hw_accumulate matches exact sums when nothing saturates") {
  QuantConfig q;
  std::mt19937_64 gen(8);
  golden::Counters c;
  for (int trial = 0; trial < 200; ++trial) {
    size_t n = 1 + gen() % 100;
    std::vector<int32_t> d(n), w(n);
    int64_t exact = 0;
    for (size_t i = 0; i < n; ++i) {
      d[i] = static_cast<int32_t>(gen() % 256) - 128;
      w[i] = static_cast<int32_t>(gen() % 256) - 128;
      exact += static_cast<int64_t>(d[i]) * w[i] << 4;
    }
    REQUIRE(golden::hw_accumulate(d, w, q.data, q.weight, q, nullptr, c) == exact);
  }
}

TEST_CASE("inference end to end") {
  NetworkConfig cfg = toy_network();
  QuantConfig q;
  auto t = ActivationTables::build(q.luts);

  // Zero image and zero weights give zero scores and argmax 0.
  auto zw = WeightSet::zeros(cfg);
  RealTensor img({static_cast<size_t>(cfg.input_height), static_cast<size_t>(cfg.input_width), 1});
  auto r0 = real::infer(img, zw, cfg);
  for (double s : r0.class_scores) CHECK(s == 0.0);
  CHECK(r0.argmax == 0);
  auto pw0 = golden::PreparedWeights::prepare(zw, cfg, q);
  auto f0 = golden::infer(golden::quantize_image(img, q), pw0, cfg, q, t);
  for (double s : f0.class_scores) CHECK(s == 0.0);
  CHECK(f0.argmax == 0);

  // Random weights: determinism and agreement with the real model.
  std::mt19937_64 gen(77);
  auto im = random_tensor(img.shape, 0, 1, gen);
  auto w = grid_weights(cfg, q, 0.25, 1);
  auto pw = golden::PreparedWeights::prepare(w, cfg, q);
  auto fi = golden::quantize_image(im, q);
  auto a = golden::infer(fi, pw, cfg, q, t);
  auto b = golden::infer(fi, pw, cfg, q, t);
  CHECK(a.class_scores_raw == b.class_scores_raw);
  CHECK(a.routed_v == b.routed_v);
  auto ra = real::infer(im, w, cfg);
  auto rb = real::infer(im, w, cfg);
  CHECK(ra.class_scores == rb.class_scores);
  REQUIRE(a.class_scores.size() == 3);
  for (size_t j = 0; j < 3; ++j) CHECK(std::fabs(a.class_scores[j] - ra.class_scores[j]) < 0.25);
}

TEST_CASE("fixed conv matches real on integer-valued data") {
  // Grid weights and grid inputs small enough to avoid any rounding: the
  // fixed convolution is exact.
  QuantConfig q;
  golden::Counters c;
  std::mt19937_64 gen(12);
  RealTensor in({6, 6, 2});
  for (auto& v : in.values) v = q.data.value_of(static_cast<int64_t>(gen() % 9) - 4);
  RealTensor k({3, 3, 2, 3}), b({3});
  for (auto& v : k.values) v = q.weight.value_of(static_cast<int64_t>(gen() % 9) - 4) * 64;
  for (auto& v : k.values) v = std::round(v) / 64.0;
  auto want = real::conv2d(in, k, b, 1);

  NetworkConfig cfg;
  FixedTensor fin({6, 6, 2}, q.data);
  for (size_t i = 0; i < fin.size(); ++i) fin[i] = static_cast<int32_t>(fx::quantize_raw(in[i], q.data));
  std::vector<int32_t> kt;
  for (int o = 0; o < 3; ++o) {
    for (size_t r = 0; r < 18; ++r) kt.push_back(static_cast<int32_t>(fx::quantize_raw(k[r * 3 + o], q.weight)));
    kt.push_back(0);
  }
  auto got = golden::conv2d(fin, kt, 3, 3, 1, false, q, c);
  REQUIRE(got.shape == want.shape);
  for (size_t i = 0; i < want.size(); ++i) {
    double exact = want[i];
    if (exact >= q.data.min_value() && exact <= q.data.max_value() &&
        std::fabs(exact / q.data.lsb() - std::round(exact / q.data.lsb())) < 1e-9) {
      CHECK(q.data.value_of(got[i]) == exact);
    }
  }
}

TEST_CASE("quant config validation") {
  QuantConfig q;
  CHECK_NOTHROW(q.validate());
  QuantConfig bad = q;
  bad.data = fx::signed_q(9, 5);
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = q;
  bad.acc = fx::signed_q(25, 8);
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
