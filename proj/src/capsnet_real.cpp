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

#include <algorithm>
#include <cmath>

#include "capsacc/capsnet.hpp"

namespace capsacc::real {

RealTensor conv2d(const RealTensor& input, const RealTensor& kernels, const RealTensor& biases, int stride) {
  if (input.shape.size() != 3 || kernels.shape.size() != 4 || biases.shape.size() != 1) {
    throw InvalidArgument("conv2d: expected HWC input, RCIK kernels and K biases");
  }
  if (stride < 1) throw InvalidArgument("conv2d: stride must be >= 1");
  size_t h = input.shape[0], w = input.shape[1], ci = input.shape[2];
  size_t kr = kernels.shape[0], kc = kernels.shape[1], k = kernels.shape[3];
  if (kernels.shape[2] != ci) {
    throw InvalidArgument("conv2d: kernel input channels " + std::to_string(kernels.shape[2]) +
                          " != input channels " + std::to_string(ci));
  }
  if (biases.shape[0] != k) throw InvalidArgument("conv2d: bias count does not match output channels");
  if (kr > h || kc > w) throw InvalidArgument("conv2d: kernel does not fit inside the input");
  auto s = static_cast<size_t>(stride);
  size_t ho = (h - kr) / s + 1, wo = (w - kc) / s + 1;

  RealTensor out({ho, wo, k});
  for (size_t f = 0; f < ho; ++f) {
    for (size_t g = 0; g < wo; ++g) {
      double* o = &out.values[(f * wo + g) * k];
      std::copy(biases.values.begin(), biases.values.end(), o);
      for (size_t r = 0; r < kr; ++r) {
        for (size_t c = 0; c < kc; ++c) {
          const double* in = &input.values[((f * s + r) * w + (g * s + c)) * ci];
          const double* ker = &kernels.values[(r * kc + c) * ci * k];
          for (size_t i = 0; i < ci; ++i) {
            double x = in[i];
            if (x == 0.0) continue;
            const double* kk = ker + i * k;
            for (size_t kk_i = 0; kk_i < k; ++kk_i) o[kk_i] += x * kk[kk_i];
          }
        }
      }
    }
  }
  return out;
}

std::vector<double> squash(std::span<const double> s) {
  double sq = 0.0;
  for (double x : s) sq += x * x;
  std::vector<double> v(s.size(), 0.0);
  if (sq == 0.0) return v;
  double norm = std::sqrt(sq);
  double factor = sq / (1.0 + sq) / norm;
  for (size_t i = 0; i < s.size(); ++i) v[i] = s[i] * factor;
  return v;
}

std::vector<double> softmax(std::span<const double> b) {
  std::vector<double> c(b.size());
  if (b.empty()) return c;
  double mx = *std::max_element(b.begin(), b.end());
  double sum = 0.0;
  for (size_t i = 0; i < b.size(); ++i) {
    c[i] = std::exp(b[i] - mx);
    sum += c[i];
  }
  for (double& x : c) x /= sum;
  return c;
}

RealTensor classcaps_predictions(const RealTensor& u, const RealTensor& w) {
  if (u.shape.size() != 2 || w.shape.size() != 4 || w.shape[0] != u.shape[0] || w.shape[2] != u.shape[1]) {
    throw InvalidArgument("classcaps_predictions: u " + shape_to_string(u.shape) + " incompatible with W " +
                          shape_to_string(w.shape));
  }
  size_t n = w.shape[0], j = w.shape[1], e = w.shape[2], d = w.shape[3];
  RealTensor out({n, j, d});
  for (size_t i = 0; i < n; ++i) {
    for (size_t jj = 0; jj < j; ++jj) {
      double* o = &out.values[(i * j + jj) * d];
      for (size_t ee = 0; ee < e; ++ee) {
        double x = u.values[i * e + ee];
        const double* wr = &w.values[((i * j + jj) * e + ee) * d];
        for (size_t dd = 0; dd < d; ++dd) o[dd] += wr[dd] * x;
      }
    }
  }
  return out;
}

RealTensor routing(const RealTensor& u_hat, int iterations, bool skip_first_softmax, RoutingTrace* trace) {
  if (iterations < 1) throw InvalidArgument("routing: iterations must be >= 1");
  if (u_hat.shape.size() != 3) throw InvalidArgument("routing: u_hat must be [N][J][D]");
  size_t n = u_hat.shape[0], j = u_hat.shape[1], d = u_hat.shape[2];

  RealTensor b({n, j});
  RealTensor c({n, j});
  if (skip_first_softmax) {
    std::fill(c.values.begin(), c.values.end(), 1.0 / static_cast<double>(j));
  } else {
    for (size_t i = 0; i < n; ++i) {
      auto row = softmax(std::span<const double>(&b.values[i * j], j));
      std::copy(row.begin(), row.end(), &c.values[i * j]);
    }
  }

  RealTensor v({j, d});
  for (int it = 0; it < iterations; ++it) {
    if (trace) trace->couplings.push_back(c);
    for (size_t jj = 0; jj < j; ++jj) {
      std::vector<double> s(d, 0.0);
      for (size_t i = 0; i < n; ++i) {
        double cij = c.values[i * j + jj];
        const double* uh = &u_hat.values[(i * j + jj) * d];
        for (size_t dd = 0; dd < d; ++dd) s[dd] += cij * uh[dd];
      }
      auto vj = squash(s);
      std::copy(vj.begin(), vj.end(), &v.values[jj * d]);
    }
    if (it + 1 == iterations) break;
    for (size_t i = 0; i < n; ++i) {
      for (size_t jj = 0; jj < j; ++jj) {
        const double* uh = &u_hat.values[(i * j + jj) * d];
        double agreement = 0.0;
        for (size_t dd = 0; dd < d; ++dd) agreement += uh[dd] * v.values[jj * d + dd];
        b.values[i * j + jj] += agreement;
      }
      auto row = softmax(std::span<const double>(&b.values[i * j], j));
      std::copy(row.begin(), row.end(), &c.values[i * j]);
    }
  }
  return v;
}

namespace {

RealTensor as_hwc(const RealTensor& image, const NetworkConfig& cfg) {
  auto h = static_cast<size_t>(cfg.input_height);
  auto w = static_cast<size_t>(cfg.input_width);
  bool ok = (image.shape == Shape{h, w}) || (image.shape == Shape{h, w, 1});
  if (!ok) {
    throw InvalidArgument("infer: image shape " + shape_to_string(image.shape) + " does not match " +
                          shape_to_string({h, w}));
  }
  return RealTensor({h, w, 1}, image.values);
}

}  // namespace

Inference infer(const RealTensor& image, const WeightSet& weights, const NetworkConfig& cfg,
                bool skip_first_softmax) {
  cfg.validate();
  weights.check_shapes(cfg);
  Inference out;

  out.conv1 = conv2d(as_hwc(image, cfg), weights.conv1_kernels, weights.conv1_biases, cfg.conv1.stride);
  for (double& x : out.conv1.values) x = std::max(0.0, x);

  out.primary_pre = conv2d(out.conv1, weights.primary_kernels, weights.primary_biases, cfg.primarycaps.stride);
  if (cfg.primary_relu) {
    for (double& x : out.primary_pre.values) x = std::max(0.0, x);
  }

  // Capsule i = (f * W2 + g) * channels + cc; component e = output channel cc * E + e.
  auto n = static_cast<size_t>(cfg.num_primary_capsules());
  auto e = static_cast<size_t>(cfg.primarycaps.capsule_dim);
  out.primary_u = RealTensor({n, e});
  for (size_t i = 0; i < n; ++i) {
    auto v = squash(std::span<const double>(&out.primary_pre.values[i * e], e));
    std::copy(v.begin(), v.end(), &out.primary_u.values[i * e]);
  }

  out.predictions = classcaps_predictions(out.primary_u, weights.classcaps_w);
  out.routed_v = routing(out.predictions, cfg.routing_iterations, skip_first_softmax);

  auto j = static_cast<size_t>(cfg.classcaps.num_classes);
  auto d = static_cast<size_t>(cfg.classcaps.capsule_dim);
  out.class_scores.resize(j);
  for (size_t jj = 0; jj < j; ++jj) {
    double sq = 0.0;
    for (size_t dd = 0; dd < d; ++dd) sq += out.routed_v.values[jj * d + dd] * out.routed_v.values[jj * d + dd];
    out.class_scores[jj] = std::sqrt(sq);
  }
  out.argmax = argmax(out.class_scores);
  return out;
}

}  // namespace capsacc::real
