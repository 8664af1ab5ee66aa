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

// Clocked state machines of the accelerator datapath: processing elements,
// the n x m systolic array, per-column accumulators and activation units.
// Every unit advances exactly one clock per step() call; outputs are the
// register contents after the edge.

#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "capsacc/capsnet.hpp"
#include "capsacc/fixedpoint.hpp"

namespace capsacc {

/// A state-machine precondition was violated while simulating.
class SimulationError : public std::runtime_error {
 public:
  SimulationError(uint64_t cycle, std::string unit, const std::string& what);
  uint64_t cycle() const { return cycle_; }
  const std::string& unit() const { return unit_; }

 private:
  uint64_t cycle_;
  std::string unit_;
};

/// Raised by a unit's step(); the executor rethrows it as SimulationError
/// with the cycle index attached.
class UnitFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace accel {

/// Product alignment and accumulator format of one pass.
struct MacConfig {
  int product_shift = 4;  // acc.frac - (data.frac + weight.frac)
  fx::QFormat acc = fx::signed_q(25, 15);

  static MacConfig from_formats(const fx::QFormat& data, const fx::QFormat& weight, const fx::QFormat& acc);
  friend bool operator==(const MacConfig&, const MacConfig&) = default;
};

// ---------------------------------------------------------------------------
// Processing element.

struct PEState {
  int32_t data_reg = 0;
  int32_t sum_reg = 0;
  int32_t weight1_reg = 0;  // vertical transfer
  int32_t weight2_reg = 0;  // held for reuse
  friend bool operator==(const PEState&, const PEState&) = default;
};

struct PECtrl {
  bool load_weight = false;        // latch weight1 -> weight2 this cycle
  bool use_stored_weight = true;   // multiply by weight2 (else by the incoming weight)
};

struct PEStepResult {
  PEState state;
  int32_t data_out = 0;
  int32_t weight_out = 0;
  int32_t psum_out = 0;
};

/// One clock of a PE. The multiplier sees `data_in` and either the
/// incoming weight or weight2 (the freshly latched value on a load cycle).
PEStepResult pe_step(const PEState& state, int32_t data_in, int32_t weight_in, int32_t psum_in, PECtrl ctrl,
                     const MacConfig& mac, fx::SaturationStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Systolic array.

struct ArrayCtrl {
  bool load_weight = false;
  bool use_stored_weight = true;
  MacConfig mac{};
};

/// n x m grid of PEs. Data enters at the left edge (one value per row),
/// weights at the top edge (one per column); row 0 partial sums are zero.
/// Registers are stored structure-of-arrays and updated synchronously.
class SystolicArray {
 public:
  SystolicArray(int rows, int cols);

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  /// One clock. Port spans must have exactly rows() / cols() entries.
  void step(std::span<const int32_t> row_data, std::span<const int32_t> col_weights, const ArrayCtrl& ctrl);

  /// Partial sums leaving the bottom edge (sum_reg of the last row).
  std::span<const int32_t> bottom_psums() const;
  /// Data leaving the right edge (data_reg of the last column).
  std::vector<int32_t> right_data() const;

  PEState pe(int r, int c) const;
  uint64_t cycles() const { return cycles_; }
  uint64_t saturation_events() const { return saturation_; }
  void reset();

 private:
  size_t at(int r, int c) const { return static_cast<size_t>(r) * static_cast<size_t>(cols_) + static_cast<size_t>(c); }

  int rows_;
  int cols_;
  std::vector<int32_t> data_, sum_, w1_, w2_;
  std::vector<int32_t> next_data_, next_sum_, next_w1_;
  uint64_t cycles_ = 0;
  uint64_t saturation_ = 0;
};

struct ArrayStepResult {
  std::vector<int32_t> bottom_psums;
  std::vector<int32_t> right_data;
};

/// Functional form of SystolicArray::step.
ArrayStepResult array_step(SystolicArray& state, std::span<const int32_t> row_data,
                           std::span<const int32_t> col_weights, const ArrayCtrl& ctrl);

// ---------------------------------------------------------------------------
// Accumulator.

enum class AccumOp {
  None,      // idle; an incoming value is dropped
  Push,      // enqueue the incoming value
  Fold,      // head + (incoming or next entry), re-enqueued
  FoldEmit,  // head + (incoming or next entry), emitted
  Bypass,    // emit the incoming value untouched
};

const char* to_string(AccumOp op);

/// Per-column FIFO of 25-bit partial sums with a saturating adder.
class Accumulator {
 public:
  Accumulator(size_t capacity, fx::QFormat format);

  /// One clock. `preload` (a value from the Routing Buffer) is enqueued
  /// before the op is applied. Throws UnitFault on FIFO overflow or a fold
  /// without operands.
  std::optional<int32_t> step(std::optional<int32_t> in, AccumOp op, std::optional<int32_t> preload = std::nullopt);

  size_t occupancy() const { return fifo_.size(); }
  size_t peak_occupancy() const { return peak_; }
  size_t capacity() const { return capacity_; }
  uint64_t saturation_events() const { return stats_.events; }
  const std::deque<int32_t>& contents() const { return fifo_; }
  void reset_peak() { peak_ = fifo_.size(); }

 private:
  int32_t pop();
  size_t capacity_;
  fx::QFormat format_;
  std::deque<int32_t> fifo_;
  size_t peak_ = 0;
  fx::SaturationStats stats_;
};

// ---------------------------------------------------------------------------
// Activation unit.

enum class ActivationMode { Bypass, ReLU, Norm, Squash, Softmax };

const char* to_string(ActivationMode mode);

struct ActivationSettings {
  ActivationMode mode = ActivationMode::Bypass;
  /// Format the 25-bit input is narrowed into (data format, or the exp
  /// input format for softmax).
  fx::QFormat input_format = fx::signed_q(8, 5);
  /// Values per vector for Norm / Squash / Softmax.
  int vector_length = 1;
  /// Sum-of-squares to sqrt-index shift of the Norm path.
  int norm_shift = 0;

  bool vector_mode() const {
    return mode == ActivationMode::Norm || mode == ActivationMode::Squash || mode == ActivationMode::Softmax;
  }
  friend bool operator==(const ActivationSettings&, const ActivationSettings&) = default;
};

struct ActivationOutput {
  int index = 0;      // position within the vector (0 for Norm)
  int32_t value = 0;  // narrowed / activated result
  int64_t wide = 0;   // unnarrowed input (Bypass only)
};

/// Cycle counts of the three multi-cycle paths.
inline constexpr uint64_t norm_latency(uint64_t n) { return n + 1; }
inline constexpr uint64_t squash_latency(uint64_t n) { return n + 2; }
inline constexpr uint64_t softmax_latency(uint64_t n) { return 2 * n; }

/// One column's activation unit. Vectors arrive one value per cycle; the
/// selected path produces its outputs after the path's latency, which the
/// unit checks against norm_latency / squash_latency / softmax_latency.
class ActivationUnit {
 public:
  ActivationUnit(const QuantConfig& q, const ActivationTables& tables);

  /// Selects the output path. Only legal while idle.
  void configure(const ActivationSettings& settings);
  const ActivationSettings& settings() const { return settings_; }

  /// One clock. `in` is a raw value in `in_format` (normally the 25-bit
  /// accumulator format).
  std::vector<ActivationOutput> step(std::optional<int64_t> in, const fx::QFormat& in_format);

  bool busy() const { return phase_ != Phase::Idle; }
  uint64_t last_latency() const { return last_latency_; }
  uint64_t vectors_completed() const { return vectors_; }
  uint64_t saturation_events() const { return stats_.events; }
  uint64_t softmax_degenerate() const { return degenerate_; }

 private:
  enum class Phase { Idle, Collect, Compute, Drain };

  int32_t narrow_input(int64_t raw, const fx::QFormat& in_format);
  void finish(uint64_t expected);

  const QuantConfig& q_;
  const ActivationTables& t_;
  ActivationSettings settings_{};
  Phase phase_ = Phase::Idle;
  int collected_ = 0;
  int compute_step_ = 0;
  uint64_t elapsed_ = 0;
  std::vector<int32_t> staged_;
  int64_t sumsq_ = 0;
  int64_t exp_sum_ = 0;
  int32_t norm_raw_ = 0;
  uint64_t last_latency_ = 0;
  uint64_t vectors_ = 0;
  uint64_t degenerate_ = 0;
  fx::SaturationStats stats_;
};

/// Stand-alone drivers of the activation paths; each feeds the vector one
/// value per cycle into a fresh unit and clocks it until the result is out.
struct NormResult {
  fx::FixedValue norm;
  uint64_t cycles = 0;
};
struct VectorResult {
  std::vector<fx::FixedValue> out;
  uint64_t cycles = 0;
};

NormResult activation_norm(std::span<const fx::FixedValue> values, int norm_shift, const QuantConfig& q,
                           const ActivationTables& t);
VectorResult activation_squash(std::span<const fx::FixedValue> values, const QuantConfig& q,
                               const ActivationTables& t);
VectorResult activation_softmax(std::span<const fx::FixedValue> values, const QuantConfig& q,
                                const ActivationTables& t);
fx::FixedValue activation_relu(const fx::FixedValue& value);

// ---------------------------------------------------------------------------
// Per-cycle trace: "<cycle> <unit> <port>=<hex>[,<hex>...]" one line per
// unit event, cycles in decimal, values as two's-complement hex of their
// format width.

class Tracer {
 public:
  explicit Tracer(std::ostream* out = nullptr) : out_(out) {}
  bool enabled() const { return out_ != nullptr; }
  void line(uint64_t cycle, const std::string& unit, const std::string& port, std::span<const int32_t> values,
            int bits);

 private:
  std::ostream* out_;
};

std::string to_hex(int64_t value, int bits);

}  // namespace accel
}  // namespace capsacc
