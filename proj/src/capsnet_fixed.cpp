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

#include "capsacc/capsnet.hpp"

namespace capsacc::golden {

using fx::QFormat;

int64_t hw_accumulate(std::span<const int32_t> data, std::span<const int32_t> weights, const QFormat& data_fmt,
                      const QFormat& weight_fmt, const QuantConfig& q, const int64_t* init, Counters& counters) {
  if (data.size() != weights.size()) throw InvalidArgument("hw_accumulate: operand length mismatch");
  const int shift = q.acc.frac_bits - (data_fmt.frac_bits + weight_fmt.frac_bits);
  const int64_t lo = q.acc.raw_min();
  const int64_t hi = q.acc.raw_max();
  const auto tile = static_cast<size_t>(q.reduction_tile);
  uint64_t clipped = 0;
  auto sat = [&](int64_t x) {
    if (x > hi) {
      ++clipped;
      return hi;
    }
    if (x < lo) {
      ++clipped;
      return lo;
    }
    return x;
  };

  bool have = init != nullptr;
  int64_t acc = have ? *init : 0;
  for (size_t t = 0; t < data.size(); t += tile) {
    size_t end = std::min(data.size(), t + tile);
    int64_t psum = 0;
    for (size_t k = t; k < end; ++k) {
      psum = sat(psum + fx::shift_round(int64_t{data[k]} * weights[k], shift));
    }
    acc = have ? sat(acc + psum) : psum;
    have = true;
  }
  counters.saturation.events += clipped;
  return acc;
}

namespace {

int64_t sum_of_squares(std::span<const int32_t> s, const QuantConfig& q, Counters& counters) {
  int64_t sumsq = 0;
  for (int32_t x : s) sumsq += int64_t{x} * x;
  return fx::saturate(sumsq, fx::unsigned_q(q.sumsq_bits, 0), &counters.saturation);
}

int32_t sqrt_lookup(int64_t sumsq, int shift, const QuantConfig& q, const ActivationTables& t,
                    Counters& counters) {
  int64_t idx = fx::saturate(fx::rshift_rne(sumsq, shift), q.luts.sqrt_in, &counters.saturation);
  return t.sqrt.entries[static_cast<size_t>(idx)];
}

}  // namespace

int32_t norm(std::span<const int32_t> s, int shift, const QuantConfig& q, const ActivationTables& t,
             Counters& counters) {
  return sqrt_lookup(sum_of_squares(s, q, counters), shift, q, t, counters);
}

std::vector<int32_t> squash_lookup(std::span<const int32_t> s, int64_t norm_raw, int norm_shift, const QuantConfig& q,
                                   const ActivationTables& t, fx::SaturationStats* stats) {
  const QFormat norm_fmt = q.norm_format(norm_shift);
  const int to_port = q.luts.squash_norm.frac_bits - norm_fmt.frac_bits;
  const int64_t port_max = q.luts.squash_norm.raw_max();

  // Norms past the norm port: halve components and norm together until the
  // norm fits. s*n/(1+n^2) tends to s/n, which is invariant under the shift.
  int down = 0;
  while (fx::shift_round(fx::rshift_rne(norm_raw, down), to_port) > port_max) ++down;

  // Otherwise the largest k with norm * 2^k still inside the data range, so
  // the 6-bit s index keeps as many significant bits as the capsule allows.
  int k = 0;
  int range_exp = q.data.total_bits - 1 - q.data.frac_bits + norm_fmt.frac_bits;
  if (down == 0 && range_exp >= 0) {
    int64_t limit = int64_t{1} << range_exp;
    while (k < q.squash_max_prescale && (norm_raw << (k + 1)) < limit) ++k;
  }

  const int64_t n_idx = fx::saturate(fx::shift_round(fx::rshift_rne(norm_raw, down), to_port), q.luts.squash_norm, stats);
  std::vector<int32_t> v(s.size());
  for (size_t i = 0; i < s.size(); ++i) {
    int64_t scaled = fx::saturate(fx::rshift_rne(int64_t{s[i]} << k, down), q.data, stats);
    int64_t s_idx = fx::saturate(fx::shift_round(scaled, q.luts.squash_s.frac_bits - q.data.frac_bits),
                                 q.luts.squash_s, stats);
    int64_t o = t.squash.entries[fx::squash_index(s_idx, n_idx, q.luts)];
    v[i] = static_cast<int32_t>(fx::rshift_rne(o, k));
  }
  return v;
}

std::vector<int32_t> squash(std::span<const int32_t> s, const QuantConfig& q, const ActivationTables& t,
                            Counters& counters) {
  const int64_t n_raw = norm(s, q.norm_shift_squash, q, t, counters);
  return squash_lookup(s, n_raw, q.norm_shift_squash, q, t, &counters.saturation);
}

std::vector<int32_t> softmax(std::span<const int32_t> b, const QuantConfig& q, const ActivationTables& t,
                             Counters& counters) {
  const auto mask = (int64_t{1} << q.luts.exp_in.total_bits) - 1;
  std::vector<int64_t> e(b.size());
  int64_t sum = 0;
  for (size_t i = 0; i < b.size(); ++i) {
    e[i] = t.exp.entries[static_cast<size_t>(b[i] & mask)];
    sum += e[i];
  }
  sum = fx::saturate(sum, fx::unsigned_q(q.softmax_sum_bits, 0), &counters.saturation);

  std::vector<int32_t> c(b.size());
  if (sum == 0) {
    ++counters.softmax_degenerate;
    auto uniform = static_cast<int32_t>(fx::quantize_raw(1.0 / static_cast<double>(b.size()), q.coupling));
    std::fill(c.begin(), c.end(), uniform);
    return c;
  }
  for (size_t i = 0; i < b.size(); ++i) {
    int64_t ratio = fx::div_rne(e[i] << q.coupling.frac_bits, sum);
    c[i] = static_cast<int32_t>(fx::saturate(ratio, q.coupling, &counters.saturation));
  }
  return c;
}

int32_t initial_coupling(int num_classes, const QuantConfig& q) {
  if (num_classes < 1) throw InvalidArgument("initial_coupling: num_classes must be >= 1");
  return static_cast<int32_t>(fx::quantize_raw(1.0 / num_classes, q.coupling));
}

namespace {

// Kernel [R][C][I][K] -> [K][(i * C + c) * R + r] with the bias appended.
std::vector<int32_t> transpose_kernel(const RealTensor& kernels, const RealTensor& biases, const QFormat& fmt) {
  size_t kr = kernels.shape[0], kc = kernels.shape[1], ci = kernels.shape[2], k = kernels.shape[3];
  size_t terms = kr * kc * ci + 1;
  std::vector<int32_t> out(k * terms);
  for (size_t r = 0; r < kr; ++r) {
    for (size_t c = 0; c < kc; ++c) {
      for (size_t i = 0; i < ci; ++i) {
        size_t term = (i * kc + c) * kr + r;
        for (size_t o = 0; o < k; ++o) {
          double w = kernels.values[((r * kc + c) * ci + i) * k + o];
          out[o * terms + term] = static_cast<int32_t>(fx::quantize_raw(w, fmt));
        }
      }
    }
  }
  for (size_t o = 0; o < k; ++o) {
    out[o * terms + terms - 1] = static_cast<int32_t>(fx::quantize_raw(biases.values[o], fmt));
  }
  return out;
}

}  // namespace

PreparedWeights PreparedWeights::prepare(const WeightSet& w, const NetworkConfig& cfg, const QuantConfig& q) {
  w.check_shapes(cfg);
  PreparedWeights p;
  p.conv1 = transpose_kernel(w.conv1_kernels, w.conv1_biases, q.weight);
  p.primary = transpose_kernel(w.primary_kernels, w.primary_biases, q.weight);
  p.conv1_terms = cfg.conv1_reduction() + 1;
  p.primary_terms = cfg.primary_reduction() + 1;
  p.classcaps_w = FixedTensor(w.classcaps_w.shape, q.weight);
  for (size_t i = 0; i < w.classcaps_w.size(); ++i) {
    p.classcaps_w.values[i] = static_cast<int32_t>(fx::quantize_raw(w.classcaps_w.values[i], q.weight));
  }
  return p;
}

FixedTensor conv2d(const FixedTensor& input, std::span<const int32_t> kernel_t, int out_channels, int kernel,
                   int stride, bool relu, const QuantConfig& q, Counters& counters) {
  if (input.shape.size() != 3) throw InvalidArgument("golden::conv2d: expected HWC input");
  if (input.format != q.data) throw InvalidArgument("golden::conv2d: input must be in the data format");
  size_t h = input.shape[0], w = input.shape[1], ci = input.shape[2];
  auto kk = static_cast<size_t>(kernel);
  auto s = static_cast<size_t>(stride);
  auto ko = static_cast<size_t>(out_channels);
  if (kk > h || kk > w || s == 0) throw InvalidArgument("golden::conv2d: kernel does not fit inside the input");
  size_t terms = kk * kk * ci + 1;
  if (kernel_t.size() != ko * terms) throw InvalidArgument("golden::conv2d: kernel size mismatch");
  size_t ho = (h - kk) / s + 1, wo = (w - kk) / s + 1;

  FixedTensor out({ho, wo, ko}, q.data);
  std::vector<int32_t> patch(terms);
  patch[terms - 1] = static_cast<int32_t>(fx::quantize_raw(1.0, q.data));
  for (size_t f = 0; f < ho; ++f) {
    for (size_t g = 0; g < wo; ++g) {
      for (size_t i = 0; i < ci; ++i) {
        for (size_t c = 0; c < kk; ++c) {
          for (size_t r = 0; r < kk; ++r) {
            patch[(i * kk + c) * kk + r] = input.values[((f * s + r) * w + (g * s + c)) * ci + i];
          }
        }
      }
      for (size_t o = 0; o < ko; ++o) {
        int64_t acc = hw_accumulate(patch, kernel_t.subspan(o * terms, terms), q.data, q.weight, q, nullptr, counters);
        int64_t y = fx::narrow(fx::FixedValue::from_raw(acc, q.acc), q.data, &counters.saturation).raw();
        if (relu) y = std::max<int64_t>(0, y);
        out.values[(f * wo + g) * ko + o] = static_cast<int32_t>(y);
      }
    }
  }
  return out;
}

FixedTensor classcaps_predictions(const FixedTensor& u, const FixedTensor& w, const QuantConfig& q,
                                  Counters& counters) {
  if (u.shape.size() != 2 || w.shape.size() != 4 || w.shape[0] != u.shape[0] || w.shape[2] != u.shape[1]) {
    throw InvalidArgument("golden::classcaps_predictions: u " + shape_to_string(u.shape) +
                          " incompatible with W " + shape_to_string(w.shape));
  }
  size_t n = w.shape[0], j = w.shape[1], e = w.shape[2], d = w.shape[3];
  FixedTensor out({n, j, d}, q.data);
  std::vector<int32_t> col(e);
  for (size_t i = 0; i < n; ++i) {
    std::span<const int32_t> ui(&u.values[i * e], e);
    for (size_t jj = 0; jj < j; ++jj) {
      for (size_t dd = 0; dd < d; ++dd) {
        for (size_t ee = 0; ee < e; ++ee) col[ee] = w.values[((i * j + jj) * e + ee) * d + dd];
        int64_t acc = hw_accumulate(ui, col, u.format, w.format, q, nullptr, counters);
        out.values[(i * j + jj) * d + dd] =
            static_cast<int32_t>(fx::narrow(fx::FixedValue::from_raw(acc, q.acc), q.data, &counters.saturation).raw());
      }
    }
  }
  return out;
}

FixedTensor routing(const FixedTensor& u_hat, int iterations, bool skip_first_softmax, const QuantConfig& q,
                    const ActivationTables& t, Counters& counters, RoutingState* final_state) {
  if (iterations < 1) throw InvalidArgument("golden::routing: iterations must be >= 1");
  if (u_hat.shape.size() != 3) throw InvalidArgument("golden::routing: u_hat must be [N][J][D]");
  size_t n = u_hat.shape[0], j = u_hat.shape[1], d = u_hat.shape[2];

  FixedTensor c({n, j}, q.coupling);
  FixedTensor b({n, j}, q.acc);
  std::vector<int32_t> b_narrow(j);
  auto update_couplings = [&](size_t i) {
    for (size_t jj = 0; jj < j; ++jj) {
      b_narrow[jj] = static_cast<int32_t>(
          fx::narrow(fx::FixedValue::from_raw(b.values[i * j + jj], q.acc), q.luts.exp_in, &counters.saturation).raw());
    }
    auto ci = softmax(b_narrow, q, t, counters);
    std::copy(ci.begin(), ci.end(), &c.values[i * j]);
  };

  if (skip_first_softmax) {
    std::fill(c.values.begin(), c.values.end(), initial_coupling(static_cast<int>(j), q));
  } else {
    for (size_t i = 0; i < n; ++i) update_couplings(i);
  }

  FixedTensor v({j, d}, q.data);
  std::vector<int32_t> uh(n), cc(n), s(d);
  for (int it = 0; it < iterations; ++it) {
    for (size_t jj = 0; jj < j; ++jj) {
      for (size_t i = 0; i < n; ++i) cc[i] = c.values[i * j + jj];
      for (size_t dd = 0; dd < d; ++dd) {
        for (size_t i = 0; i < n; ++i) uh[i] = u_hat.values[(i * j + jj) * d + dd];
        int64_t acc = hw_accumulate(uh, cc, q.data, q.coupling, q, nullptr, counters);
        s[dd] = static_cast<int32_t>(
            fx::narrow(fx::FixedValue::from_raw(acc, q.acc), q.data, &counters.saturation).raw());
      }
      auto vj = squash(s, q, t, counters);
      std::copy(vj.begin(), vj.end(), &v.values[jj * d]);
    }
    if (it + 1 == iterations) break;
    for (size_t i = 0; i < n; ++i) {
      for (size_t jj = 0; jj < j; ++jj) {
        std::span<const int32_t> pred(&u_hat.values[(i * j + jj) * d], d);
        std::span<const int32_t> vj(&v.values[jj * d], d);
        int64_t old = b.values[i * j + jj];
        b.values[i * j + jj] = static_cast<int32_t>(hw_accumulate(pred, vj, q.data, q.data, q, &old, counters));
      }
      update_couplings(i);
    }
  }
  if (final_state) {
    final_state->couplings = std::move(c);
    final_state->logits = std::move(b);
  }
  return v;
}

FixedTensor quantize_image(const RealTensor& image, const QuantConfig& q) {
  // 1.0 maps to the largest representable data value <= 1.0.
  double top = std::min(1.0, q.data.max_value());
  FixedTensor out(image.shape, q.data);
  for (size_t i = 0; i < image.size(); ++i) {
    out.values[i] = static_cast<int32_t>(fx::quantize_raw(image.values[i] * top, q.data));
  }
  return out;
}

Inference infer(const FixedTensor& image, const PreparedWeights& weights, const NetworkConfig& cfg,
                const QuantConfig& q, const ActivationTables& t, bool skip_first_softmax) {
  cfg.validate();
  q.validate();
  auto h = static_cast<size_t>(cfg.input_height);
  auto w = static_cast<size_t>(cfg.input_width);
  if (image.shape != Shape{h, w} && image.shape != Shape{h, w, 1}) {
    throw InvalidArgument("golden::infer: image shape " + shape_to_string(image.shape) + " does not match " +
                          shape_to_string({h, w}));
  }
  FixedTensor img({h, w, 1}, image.format);
  img.values = image.values;

  Inference out;
  Counters& counters = out.counters;
  out.conv1 = conv2d(img, weights.conv1, cfg.conv1.channels, cfg.conv1.kernel, cfg.conv1.stride, true, q, counters);
  out.primary_pre = conv2d(out.conv1, weights.primary, cfg.primary_out_channels(), cfg.primarycaps.kernel,
                           cfg.primarycaps.stride, cfg.primary_relu, q, counters);

  auto n = static_cast<size_t>(cfg.num_primary_capsules());
  auto e = static_cast<size_t>(cfg.primarycaps.capsule_dim);
  out.primary_u = FixedTensor({n, e}, q.data);
  for (size_t i = 0; i < n; ++i) {
    auto v = squash(std::span<const int32_t>(&out.primary_pre.values[i * e], e), q, t, counters);
    std::copy(v.begin(), v.end(), &out.primary_u.values[i * e]);
  }

  out.predictions = classcaps_predictions(out.primary_u, weights.classcaps_w, q, counters);
  out.routed_v = routing(out.predictions, cfg.routing_iterations, skip_first_softmax, q, t, counters);

  auto j = static_cast<size_t>(cfg.classcaps.num_classes);
  auto d = static_cast<size_t>(cfg.classcaps.capsule_dim);
  fx::QFormat score_fmt = q.score_format();
  out.class_scores_raw.resize(j);
  out.class_scores.resize(j);
  for (size_t jj = 0; jj < j; ++jj) {
    out.class_scores_raw[jj] =
        norm(std::span<const int32_t>(&out.routed_v.values[jj * d], d), q.norm_shift_score, q, t, counters);
    out.class_scores[jj] = score_fmt.value_of(out.class_scores_raw[jj]);
  }
  out.argmax = argmax(std::span<const int32_t>(out.class_scores_raw));
  return out;
}

}  // namespace capsacc::golden
