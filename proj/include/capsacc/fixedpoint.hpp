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

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace capsacc {

/// Raised for malformed arguments anywhere in the library (bad shapes,
/// NaN inputs, out-of-range configuration fields).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace fx {

/// Two's-complement (or unsigned) fixed-point encoding: `total_bits` wide,
/// `frac_bits` of which sit right of the binal point.
struct QFormat {
  int total_bits = 8;
  int frac_bits = 0;
  bool is_signed = true;

  /// Throws InvalidArgument unless 1 <= total_bits <= 32 and
  /// 0 <= frac_bits < total_bits.
  void validate() const;

  int64_t raw_min() const { return is_signed ? -(int64_t{1} << (total_bits - 1)) : 0; }
  int64_t raw_max() const {
    return is_signed ? (int64_t{1} << (total_bits - 1)) - 1 : (int64_t{1} << total_bits) - 1;
  }
  double lsb() const;
  double min_value() const { return static_cast<double>(raw_min()) * lsb(); }
  double max_value() const { return static_cast<double>(raw_max()) * lsb(); }
  double value_of(int64_t raw) const { return static_cast<double>(raw) * lsb(); }
  bool contains(int64_t raw) const { return raw >= raw_min() && raw <= raw_max(); }

  std::string to_string() const;  // e.g. "s8.6" / "u12.0"

  friend bool operator==(const QFormat&, const QFormat&) = default;
};

inline constexpr QFormat signed_q(int total, int frac) { return QFormat{total, frac, true}; }
inline constexpr QFormat unsigned_q(int total, int frac) { return QFormat{total, frac, false}; }

/// Counts silent saturation events. Not thread-safe; each simulator or
/// golden-model instance owns one.
struct SaturationStats {
  uint64_t events = 0;
  void record(bool saturated) { events += saturated ? 1 : 0; }
};

/// Clamps `raw` into the representable range of `fmt`.
int64_t saturate(int64_t raw, const QFormat& fmt, SaturationStats* stats = nullptr);

/// Arithmetic shift by `shift` bits: left when positive (exact), right when
/// negative with round-to-nearest, ties-to-even.
int64_t shift_round(int64_t value, int shift);

/// Right shift by `shift >= 0` bits, round-to-nearest, ties-to-even.
int64_t rshift_rne(int64_t value, int shift);

/// numerator / denominator rounded to nearest, ties to even. denominator > 0.
int64_t div_rne(int64_t numerator, int64_t denominator);

class FixedValue {
 public:
  FixedValue() = default;
  /// Saturates `raw` into `fmt`.
  static FixedValue from_raw(int64_t raw, const QFormat& fmt, SaturationStats* stats = nullptr);

  int64_t raw() const { return raw_; }
  const QFormat& format() const { return format_; }
  double value() const { return format_.value_of(raw_); }

  friend bool operator==(const FixedValue&, const FixedValue&) = default;

 private:
  FixedValue(int64_t raw, const QFormat& fmt) : raw_(raw), format_(fmt) {}
  int64_t raw_ = 0;
  QFormat format_{};
};

/// Round-to-nearest (ties to even), then saturate. NaN is rejected.
FixedValue quantize(double x, const QFormat& fmt);
int64_t quantize_raw(double x, const QFormat& fmt);

/// Multiply-accumulate of one processing element: the exact product of
/// `data` and `weight` is aligned to the accumulator's binal point and
/// added with saturation. Saturation is silent apart from `stats`.
FixedValue mac(const FixedValue& data, const FixedValue& weight, const FixedValue& acc,
               SaturationStats* stats = nullptr);

/// Re-encodes a wide value into `out_fmt` (round-to-nearest-even, saturate).
FixedValue narrow(const FixedValue& acc, const QFormat& out_fmt, SaturationStats* stats = nullptr);

/// Dense lookup table. Two-index tables store `input_bits = {hi, lo}` and are
/// addressed as `(hi_index << lo_bits) | lo_index`.
struct LookupTable {
  std::vector<int> input_bits;
  std::vector<QFormat> input_formats;
  QFormat output_format;
  std::vector<int32_t> entries;

  size_t size() const { return entries.size(); }
  int32_t at(size_t index) const { return entries.at(index); }
};

/// Port formats of the three activation tables. Defaults follow the
/// accelerator's 12-bit/8-bit sqrt, 6+5-bit/8-bit squash and 8-bit exp ports.
struct LutConfig {
  QFormat sqrt_in = unsigned_q(12, 0);
  QFormat sqrt_out = unsigned_q(8, 2);
  QFormat squash_s = signed_q(6, 3);
  QFormat squash_norm = unsigned_q(5, 2);
  QFormat squash_out = signed_q(8, 5);
  QFormat exp_in = signed_q(8, 6);
  QFormat exp_out = unsigned_q(8, 5);

  void validate() const;
  friend bool operator==(const LutConfig&, const LutConfig&) = default;
};

LookupTable build_sqrt_lut(const LutConfig& cfg = {});
LookupTable build_squash_lut(const LutConfig& cfg = {});
LookupTable build_exp_lut(const LutConfig& cfg = {});

/// Index of a squash-table entry from signed `s_raw` and unsigned `n_raw`.
size_t squash_index(int64_t s_raw, int64_t n_raw, const LutConfig& cfg);

}  // namespace fx
}  // namespace capsacc
