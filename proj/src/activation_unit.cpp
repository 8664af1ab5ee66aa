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

#include "capsacc/accel.hpp"

namespace capsacc::accel {

const char* to_string(ActivationMode mode) {
  switch (mode) {
    case ActivationMode::Bypass: return "bypass";
    case ActivationMode::ReLU: return "relu";
    case ActivationMode::Norm: return "norm";
    case ActivationMode::Squash: return "squash";
    case ActivationMode::Softmax: return "softmax";
  }
  return "?";
}

ActivationUnit::ActivationUnit(const QuantConfig& q, const ActivationTables& tables) : q_(q), t_(tables) {}

void ActivationUnit::configure(const ActivationSettings& s) {
  if (busy()) throw UnitFault("reconfigured while a vector is in flight");
  if (s.vector_length < 1) throw UnitFault("vector_length must be >= 1");
  s.input_format.validate();
  switch (s.mode) {
    case ActivationMode::Norm:
    case ActivationMode::Squash:
      if (s.input_format != q_.data) throw UnitFault("norm/squash input must use the data format");
      if (s.norm_shift < 0) throw UnitFault("negative norm shift");
      break;
    case ActivationMode::Softmax:
      if (s.input_format != q_.luts.exp_in) throw UnitFault("softmax input must use the exp table format");
      break;
    default:
      break;
  }
  settings_ = s;
  collected_ = 0;
}

int32_t ActivationUnit::narrow_input(int64_t raw, const fx::QFormat& in_format) {
  return static_cast<int32_t>(
      fx::narrow(fx::FixedValue::from_raw(raw, in_format), settings_.input_format, &stats_).raw());
}

void ActivationUnit::finish(uint64_t expected) {
  last_latency_ = elapsed_;
  if (elapsed_ != expected) {
    throw UnitFault(std::string(to_string(settings_.mode)) + " latency " + std::to_string(elapsed_) +
                    " != expected " + std::to_string(expected));
  }
  phase_ = Phase::Idle;
  collected_ = 0;
  compute_step_ = 0;
  elapsed_ = 0;
  sumsq_ = 0;
  exp_sum_ = 0;
  staged_.clear();
  ++vectors_;
}

std::vector<ActivationOutput> ActivationUnit::step(std::optional<int64_t> in, const fx::QFormat& in_format) {
  std::vector<ActivationOutput> out;
  const int len = settings_.vector_length;
  const ActivationMode mode = settings_.mode;

  if (mode == ActivationMode::Bypass || mode == ActivationMode::ReLU) {
    if (!in) return out;
    int32_t y = narrow_input(*in, in_format);
    if (mode == ActivationMode::ReLU) y = std::max(0, y);
    out.push_back({collected_, y, *in});
    collected_ = (collected_ + 1) % len;
    return out;
  }

  if (phase_ == Phase::Idle || phase_ == Phase::Collect) {
    if (!in) {
      if (phase_ == Phase::Collect) throw UnitFault("vector interrupted after " + std::to_string(collected_) + " values");
      return out;
    }
    phase_ = Phase::Collect;
    ++elapsed_;
    int32_t x = narrow_input(*in, in_format);
    if (mode == ActivationMode::Softmax) {
      const auto mask = (int64_t{1} << q_.luts.exp_in.total_bits) - 1;
      int32_t e = t_.exp.entries[static_cast<size_t>(x & mask)];
      staged_.push_back(e);
      exp_sum_ += e;
    } else {
      staged_.push_back(x);
      sumsq_ += int64_t{x} * x;
    }
    if (++collected_ == len) {
      phase_ = mode == ActivationMode::Softmax ? Phase::Drain : Phase::Compute;
      if (mode == ActivationMode::Softmax) {
        exp_sum_ = fx::saturate(exp_sum_, fx::unsigned_q(q_.softmax_sum_bits, 0), &stats_);
      }
    }
    return out;
  }

  if (in) throw UnitFault(std::string(to_string(mode)) + " unit busy, input rejected");
  ++elapsed_;

  if (phase_ == Phase::Compute) {
    // Sum of squares -> sqrt table.
    int64_t sumsq = fx::saturate(sumsq_, fx::unsigned_q(q_.sumsq_bits, 0), &stats_);
    int64_t idx = fx::saturate(fx::rshift_rne(sumsq, settings_.norm_shift), q_.luts.sqrt_in, &stats_);
    norm_raw_ = t_.sqrt.entries[static_cast<size_t>(idx)];
    if (mode == ActivationMode::Norm) {
      out.push_back({0, norm_raw_, norm_raw_});
      finish(norm_latency(static_cast<uint64_t>(len)));
    } else {
      phase_ = Phase::Drain;
    }
    return out;
  }

  // Drain.
  if (mode == ActivationMode::Squash) {
    auto v = golden::squash_lookup(staged_, norm_raw_, settings_.norm_shift, q_, t_, &stats_);
    for (int i = 0; i < len; ++i) out.push_back({i, v[static_cast<size_t>(i)], v[static_cast<size_t>(i)]});
    finish(squash_latency(static_cast<uint64_t>(len)));
    return out;
  }

  // Softmax: one quotient per cycle.
  const int i = compute_step_++;
  int32_t c;
  if (exp_sum_ == 0) {
    if (i == 0) ++degenerate_;
    c = static_cast<int32_t>(fx::quantize_raw(1.0 / len, q_.coupling));
  } else {
    int64_t ratio = fx::div_rne(int64_t{staged_[static_cast<size_t>(i)]} << q_.coupling.frac_bits, exp_sum_);
    c = static_cast<int32_t>(fx::saturate(ratio, q_.coupling, &stats_));
  }
  out.push_back({i, c, c});
  if (compute_step_ == len) finish(softmax_latency(static_cast<uint64_t>(len)));
  return out;
}

namespace {

struct DriveResult {
  std::vector<ActivationOutput> outputs;
  uint64_t cycles = 0;
};

DriveResult drive(ActivationUnit& unit, std::span<const fx::FixedValue> values) {
  DriveResult r;
  for (const auto& v : values) {
    auto o = unit.step(v.raw(), v.format());
    r.outputs.insert(r.outputs.end(), o.begin(), o.end());
    ++r.cycles;
  }
  while (unit.busy()) {
    auto o = unit.step(std::nullopt, fx::QFormat{});
    r.outputs.insert(r.outputs.end(), o.begin(), o.end());
    ++r.cycles;
  }
  return r;
}

void require_nonempty(std::span<const fx::FixedValue> values, const char* what) {
  if (values.empty()) throw InvalidArgument(std::string(what) + ": empty vector");
}

}  // namespace

NormResult activation_norm(std::span<const fx::FixedValue> values, int norm_shift, const QuantConfig& q,
                           const ActivationTables& t) {
  require_nonempty(values, "activation_norm");
  ActivationUnit unit(q, t);
  unit.configure({ActivationMode::Norm, q.data, static_cast<int>(values.size()), norm_shift});
  auto r = drive(unit, values);
  return {fx::FixedValue::from_raw(r.outputs.at(0).value, q.norm_format(norm_shift)), r.cycles};
}

VectorResult activation_squash(std::span<const fx::FixedValue> values, const QuantConfig& q,
                               const ActivationTables& t) {
  require_nonempty(values, "activation_squash");
  ActivationUnit unit(q, t);
  unit.configure({ActivationMode::Squash, q.data, static_cast<int>(values.size()), q.norm_shift_squash});
  auto r = drive(unit, values);
  VectorResult out{{}, r.cycles};
  for (const auto& o : r.outputs) out.out.push_back(fx::FixedValue::from_raw(o.value, q.data));
  return out;
}

VectorResult activation_softmax(std::span<const fx::FixedValue> values, const QuantConfig& q,
                                const ActivationTables& t) {
  require_nonempty(values, "activation_softmax");
  ActivationUnit unit(q, t);
  unit.configure({ActivationMode::Softmax, q.luts.exp_in, static_cast<int>(values.size()), 0});
  auto r = drive(unit, values);
  VectorResult out{{}, r.cycles};
  for (const auto& o : r.outputs) out.out.push_back(fx::FixedValue::from_raw(o.value, q.coupling));
  return out;
}

fx::FixedValue activation_relu(const fx::FixedValue& value) {
  return value.raw() < 0 ? fx::FixedValue::from_raw(0, value.format()) : value;
}

}  // namespace capsacc::accel
