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

#include "capsacc/fixedpoint.hpp"

#include <cmath>
#include <sstream>

namespace capsacc::fx {

void QFormat::validate() const {
  if (total_bits < 1 || total_bits > 32) {
    throw InvalidArgument("QFormat: total_bits must be in [1, 32], got " + std::to_string(total_bits));
  }
  if (frac_bits < 0 || frac_bits >= total_bits) {
    throw InvalidArgument("QFormat: frac_bits must be in [0, total_bits), got " + std::to_string(frac_bits));
  }
}

double QFormat::lsb() const { return std::ldexp(1.0, -frac_bits); }

std::string QFormat::to_string() const {
  std::ostringstream os;
  os << (is_signed ? 's' : 'u') << total_bits << '.' << frac_bits;
  return os.str();
}

int64_t saturate(int64_t raw, const QFormat& fmt, SaturationStats* stats) {
  int64_t lo = fmt.raw_min();
  int64_t hi = fmt.raw_max();
  bool clipped = raw < lo || raw > hi;
  if (stats) stats->record(clipped);
  return raw < lo ? lo : (raw > hi ? hi : raw);
}

int64_t rshift_rne(int64_t value, int shift) {
  if (shift <= 0) return value;
  if (shift >= 62) return 0;
  int64_t q = value >> shift;  // floor
  int64_t rem = value - (q << shift);
  int64_t half = int64_t{1} << (shift - 1);
  if (rem > half || (rem == half && (q & 1))) ++q;
  return q;
}

int64_t shift_round(int64_t value, int shift) {
  if (shift >= 0) return value * (int64_t{1} << shift);
  return rshift_rne(value, -shift);
}

int64_t div_rne(int64_t numerator, int64_t denominator) {
  if (denominator <= 0) throw InvalidArgument("div_rne: denominator must be positive");
  int64_t q = numerator / denominator;
  int64_t r = numerator % denominator;
  if (r < 0) {  // floor semantics
    r += denominator;
    --q;
  }
  // Compare 2r against the denominator.
  if (2 * r > denominator || (2 * r == denominator && (q & 1))) ++q;
  return q;
}

FixedValue FixedValue::from_raw(int64_t raw, const QFormat& fmt, SaturationStats* stats) {
  fmt.validate();
  return FixedValue(saturate(raw, fmt, stats), fmt);
}

int64_t quantize_raw(double x, const QFormat& fmt) {
  if (std::isnan(x)) throw InvalidArgument("quantize: NaN input");
  fmt.validate();
  double scaled = std::ldexp(x, fmt.frac_bits);
  auto lo = static_cast<double>(fmt.raw_min());
  auto hi = static_cast<double>(fmt.raw_max());
  if (scaled <= lo) return fmt.raw_min();
  if (scaled >= hi) return fmt.raw_max();
  // Default floating-point environment rounds to nearest, ties to even.
  return static_cast<int64_t>(std::nearbyint(scaled));
}

FixedValue quantize(double x, const QFormat& fmt) {
  return FixedValue::from_raw(quantize_raw(x, fmt), fmt);
}

FixedValue mac(const FixedValue& data, const FixedValue& weight, const FixedValue& acc,
               SaturationStats* stats) {
  int64_t product = data.raw() * weight.raw();
  int shift = acc.format().frac_bits - (data.format().frac_bits + weight.format().frac_bits);
  int64_t aligned = shift_round(product, shift);
  return FixedValue::from_raw(acc.raw() + aligned, acc.format(), stats);
}

FixedValue narrow(const FixedValue& acc, const QFormat& out_fmt, SaturationStats* stats) {
  int shift = out_fmt.frac_bits - acc.format().frac_bits;
  return FixedValue::from_raw(shift_round(acc.raw(), shift), out_fmt, stats);
}

void LutConfig::validate() const {
  for (const QFormat* f : {&sqrt_in, &sqrt_out, &squash_s, &squash_norm, &squash_out, &exp_in, &exp_out}) {
    f->validate();
  }
  if (sqrt_in.is_signed || sqrt_out.is_signed || squash_norm.is_signed || exp_out.is_signed) {
    throw InvalidArgument("LutConfig: sqrt ports, squash norm port and exp output must be unsigned");
  }
  if (!squash_s.is_signed || !exp_in.is_signed) {
    throw InvalidArgument("LutConfig: squash data port and exp input must be signed");
  }
  if (sqrt_in.total_bits > 20 || squash_s.total_bits + squash_norm.total_bits > 20 || exp_in.total_bits > 20) {
    throw InvalidArgument("LutConfig: table index wider than 20 bits");
  }
}

namespace {

// Enumerates every raw code of `fmt` in index order: for signed formats the
// index is the two's-complement bit pattern.
int64_t raw_of_index(size_t index, const QFormat& fmt) {
  auto raw = static_cast<int64_t>(index);
  if (fmt.is_signed && raw > fmt.raw_max()) raw -= int64_t{1} << fmt.total_bits;
  return raw;
}

size_t index_of_raw(int64_t raw, const QFormat& fmt) {
  return static_cast<size_t>(raw & ((int64_t{1} << fmt.total_bits) - 1));
}

}  // namespace

LookupTable build_sqrt_lut(const LutConfig& cfg) {
  cfg.validate();
  LookupTable lut;
  lut.input_bits = {cfg.sqrt_in.total_bits};
  lut.input_formats = {cfg.sqrt_in};
  lut.output_format = cfg.sqrt_out;
  size_t n = size_t{1} << cfg.sqrt_in.total_bits;
  lut.entries.resize(n);
  for (size_t i = 0; i < n; ++i) {
    double x = cfg.sqrt_in.value_of(raw_of_index(i, cfg.sqrt_in));
    lut.entries[i] = static_cast<int32_t>(quantize_raw(std::sqrt(x), cfg.sqrt_out));
  }
  return lut;
}

size_t squash_index(int64_t s_raw, int64_t n_raw, const LutConfig& cfg) {
  return (index_of_raw(s_raw, cfg.squash_s) << cfg.squash_norm.total_bits) | index_of_raw(n_raw, cfg.squash_norm);
}

LookupTable build_squash_lut(const LutConfig& cfg) {
  cfg.validate();
  LookupTable lut;
  lut.input_bits = {cfg.squash_s.total_bits, cfg.squash_norm.total_bits};
  lut.input_formats = {cfg.squash_s, cfg.squash_norm};
  lut.output_format = cfg.squash_out;
  size_t ns = size_t{1} << cfg.squash_s.total_bits;
  size_t nn = size_t{1} << cfg.squash_norm.total_bits;
  lut.entries.resize(ns * nn);
  for (size_t si = 0; si < ns; ++si) {
    double s = cfg.squash_s.value_of(raw_of_index(si, cfg.squash_s));
    for (size_t ni = 0; ni < nn; ++ni) {
      double n = cfg.squash_norm.value_of(static_cast<int64_t>(ni));
      // Per-component squash: s * ||s|| / (1 + ||s||^2).
      double v = s * n / (1.0 + n * n);
      lut.entries[(si << cfg.squash_norm.total_bits) | ni] = static_cast<int32_t>(quantize_raw(v, cfg.squash_out));
    }
  }
  return lut;
}

LookupTable build_exp_lut(const LutConfig& cfg) {
  cfg.validate();
  LookupTable lut;
  lut.input_bits = {cfg.exp_in.total_bits};
  lut.input_formats = {cfg.exp_in};
  lut.output_format = cfg.exp_out;
  size_t n = size_t{1} << cfg.exp_in.total_bits;
  lut.entries.resize(n);
  for (size_t i = 0; i < n; ++i) {
    double x = cfg.exp_in.value_of(raw_of_index(i, cfg.exp_in));
    lut.entries[i] = static_cast<int32_t>(quantize_raw(std::exp(x), cfg.exp_out));
  }
  return lut;
}

}  // namespace capsacc::fx
