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

// Layer and routing mappings onto the accelerator, schedule timing and the
// cycle-by-cycle executor.
//
// Every layer is lowered to a sequence of weight-stationary passes. A pass
// latches an (up to) rows x cols weight tile, then streams `positions` data
// vectors through it:
//
//   psum(p, c) = sum_r data(p, r) * weight(r, c)
//
// Rows carry reduction terms, columns carry outputs. Data vectors enter
// skewed (row r one cycle after row r-1); weights are shifted down the
// weight1 chain during the cycles before the latch, overlapping the
// previous pass. Results leave the bottom edge into the per-column
// accumulators, which fold row tiles together and emit into the activation
// units.
//
// Operand sources in front of the array (the two input multiplexers):
//   data port:   Data Buffer | feedback store | constant | one-hot
//   weight port: Weight Buffer | Routing Buffer | constant | identity
// The feedback store keeps the predictions that leave the array's right
// edge during the first routing sum, so later routing phases stream them
// again without touching the Data Buffer. Matrix transposes (gathering a
// capsule's components into one activation unit) are passes with identity
// weights or one-hot data.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "capsacc/accel.hpp"
#include "capsacc/capsnet.hpp"

namespace capsacc {

/// A mapping cannot be generated or fails static validation.
class ScheduleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace mapper {

enum class BufferKind : uint8_t { Data, Weight, Routing, Feedback };
const char* to_string(BufferKind kind);

/// PrimaryCaps pass order. The default finishes every input channel of an
/// output-channel tile before moving on; the alternative walks input tiles
/// in the outer loop and keeps partial sums of every output tile queued.
enum class PrimaryLoopOrder { OutputChannelOuter, InputChannelOuter };

struct ArchConfig {
  int rows = 16;
  int cols = 16;
  /// Partial sums each column accumulator can queue (one Conv1 feature map).
  size_t fifo_capacity = 400;
  /// Prediction values the feedback store can hold.
  size_t feedback_capacity = 262144;
  uint64_t data_buffer_bytes = 512 * 1024;
  uint64_t weight_buffer_bytes = 8 * 1024 * 1024;
  uint64_t routing_buffer_bytes = 128 * 1024;
  PrimaryLoopOrder primary_order = PrimaryLoopOrder::OutputChannelOuter;
  bool skip_first_softmax = true;

  void validate() const;
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

// ---------------------------------------------------------------------------
// Buffers.

struct Region {
  std::string name;
  BufferKind buffer = BufferKind::Data;
  fx::QFormat format;
  std::vector<int32_t> values;
  std::vector<uint8_t> written;
  uint64_t reads = 0;
  uint64_t writes = 0;

  size_t size() const { return values.size(); }
  uint64_t bytes() const { return size() * static_cast<uint64_t>((format.total_bits + 7) / 8); }
};

/// Addressable on-chip stores, split into named regions. Reads of
/// never-written entries and out-of-range addresses raise UnitFault.
class BufferModel {
 public:
  int add_region(std::string name, BufferKind buffer, fx::QFormat format, size_t size);
  /// Region id by name, or -1.
  int find(const std::string& name) const;
  const Region& region(int id) const { return regions_.at(static_cast<size_t>(id)); }
  size_t num_regions() const { return regions_.size(); }

  int32_t read(int id, int64_t addr);
  void write(int id, int64_t addr, int32_t value);
  /// Host-side load (not counted as traffic).
  void load(int id, std::span<const int32_t> values);
  /// Host-side copy of a region's contents.
  std::vector<int32_t> dump(int id) const;
  bool fully_written(int id) const;

  uint64_t bytes(BufferKind kind) const;
  uint64_t reads(BufferKind kind) const;
  uint64_t writes(BufferKind kind) const;
  void invalidate(int id);

 private:
  Region& at(int id);
  std::vector<Region> regions_;
};

/// Region ids of one network's tensors.
struct MemoryMap {
  // Data Buffer
  int image = -1, conv1_out = -1, primary_pre = -1, primary_u = -1, predictions = -1, scores = -1;
  // Weight Buffer
  int conv1_w = -1, primary_w = -1, classcaps_w = -1;
  // Routing Buffer
  int coupling = -1, logits = -1, logits_narrow = -1, routed_v = -1;
  // Feedback store
  int predictions_fb = -1;

  /// Adds every region to `buffers` and checks the buffer capacities.
  static MemoryMap build(const NetworkConfig& cfg, const QuantConfig& q, const ArchConfig& arch,
                         BufferModel& buffers);
};

/// Loads quantized weights / an input image into their regions.
void load_weights(BufferModel& buffers, const MemoryMap& mem, const golden::PreparedWeights& w);
void load_image(BufferModel& buffers, const MemoryMap& mem, const FixedTensor& image);

// ---------------------------------------------------------------------------
// Passes and schedules.

/// Two-level affine address pattern: base + (p / inner) * outer_stride +
/// (p % inner) * inner_stride.
struct Affine2 {
  int64_t base = 0;
  int64_t inner = 1;
  int64_t inner_stride = 0;
  int64_t outer_stride = 0;

  int64_t at(int64_t p) const { return base + (p / inner) * outer_stride + (p % inner) * inner_stride; }
  static Affine2 linear(int64_t base, int64_t stride) { return {base, 1, 0, stride}; }
};

enum class DataKind : uint8_t { Memory, OneHot };
enum class RowKind : uint8_t { Memory, Const };

struct DataOperand {
  DataKind kind = DataKind::Memory;
  int region = -1;          // Data Buffer or feedback-store region
  Affine2 pos;              // per-position base address
  std::vector<int64_t> row_off;
  std::vector<RowKind> row_kind;
  std::vector<int32_t> row_value;  // Const rows
  int32_t one = 0;                 // OneHot: row p gets `one` at position p
  int capture_region = -1;         // feedback store filled from the right edge
};

enum class WeightKind : uint8_t { Memory, Const, Identity };

struct WeightOperand {
  WeightKind kind = WeightKind::Memory;
  int region = -1;  // addr = row_off[r] + col_off[c]
  std::vector<int64_t> row_off;
  std::vector<int64_t> col_off;
  int32_t value = 0;  // Const value, or the identity's diagonal
};

enum class PreloadKind : uint8_t { None, Zero, Memory };

/// How each column's accumulator treats the pass's partial sums.
struct AccumPlan {
  int tile = 0;   // row tile index of this pass within its reduction
  int tiles = 1;  // row tiles in the reduction
  PreloadKind preload = PreloadKind::None;
  int preload_region = -1;
  Affine2 preload_pos;
  /// Position p is kept by column c iff ((p / select_div) % select_mod) ==
  /// c + select_offset; select_div == 0 keeps every position.
  int64_t select_div = 0;
  int64_t select_mod = 1;
  int64_t select_offset = 0;

  bool first() const { return tile == 0; }
  bool last() const { return tile + 1 == tiles; }
  bool selects(int64_t p, int c) const {
    return select_div == 0 || (p / select_div) % select_mod == c + select_offset;
  }
};

/// Destination of activation outputs. Per-position modes (Bypass, ReLU)
/// write to pos.at(p) + col_off[c]; vector modes write component k of
/// column c's vector to col_off[c] + k. Bypass optionally also stores the
/// unnarrowed value at the same offset of `wide_region`.
struct OutputSink {
  int region = -1;
  Affine2 pos;
  std::vector<int64_t> col_off;
  int wide_region = -1;
};

/// Loop-nest coordinates of a pass, used by the structural order checks.
struct PassTag {
  int layer = 0;     // index into Schedule
  int out_tile = 0;  // output channel / capsule tile
  int in_tile = 0;   // reduction tile
  int chunk = 0;     // position chunk
};

struct Pass {
  int rows_used = 0;
  int cols_used = 0;
  int64_t first = 0;      // first position index
  int64_t positions = 0;  // positions streamed
  fx::QFormat data_format;
  fx::QFormat weight_format;
  DataOperand data;
  WeightOperand weight;
  AccumPlan accum;
  accel::ActivationSettings act;
  OutputSink sink;
  /// Wait for every earlier pass's outputs before loading this pass.
  bool barrier = false;
  PassTag tag;

  bool emits() const { return accum.last(); }
};

enum class PhaseKind { Layer, Routing };

struct Schedule {
  std::string name;
  PhaseKind kind = PhaseKind::Layer;
  std::vector<Pass> passes;
  /// Timeline (filled by finalize): latch cycle per pass, schedule length.
  std::vector<int64_t> latch;
  uint64_t length = 0;

  bool empty() const { return passes.empty(); }
  void finalize(const ArchConfig& arch, const QuantConfig& q);
};

/// Cycles from the first data entering the array to the last column
/// output of a pass, inclusive.
int64_t pass_span(int64_t positions, int rows, int cols_used);
/// Extra cycles the activation unit needs after its last input.
int64_t activation_tail(const accel::ActivationSettings& act);

// ---------------------------------------------------------------------------
// Per-cycle control words.

enum class Operand : uint8_t { Zero, Const, Memory };

struct PortCtl {
  Operand src = Operand::Zero;
  int region = -1;
  int64_t addr = 0;
  int32_t value = 0;
};

struct RowCtl {
  PortCtl port;
  int capture_region = -1;  // capture the value when it leaves the right edge
};

struct ColumnCtl {
  bool active = false;  // a pass output leaves column c this cycle
  accel::AccumOp op = accel::AccumOp::None;
  PortCtl preload;
  const Pass* pass = nullptr;
  int64_t position = 0;
};

struct ControlWord {
  uint64_t cycle = 0;
  bool load_weight = false;
  accel::MacConfig mac{};
  std::vector<RowCtl> rows;
  std::vector<PortCtl> weights;
  std::vector<ColumnCtl> columns;
};

/// Expands a finalized schedule into control words, one per cycle.
class ScheduleCursor {
 public:
  ScheduleCursor(const Schedule& s, const ArchConfig& arch, const QuantConfig& q);
  bool done() const { return t_ >= static_cast<int64_t>(s_.length); }
  const ControlWord& next();

 private:
  const Schedule& s_;
  int n_, m_;
  const QuantConfig& q_;
  int64_t t_ = 0;
  size_t lo_ = 0;  // first pass that may still be active
  ControlWord cw_;
};

// ---------------------------------------------------------------------------
// Mappings.

Schedule map_conv1(const NetworkConfig& cfg, const QuantConfig& q, const MemoryMap& mem, const ArchConfig& arch);
/// Convolution passes followed by the capsule squash passes.
Schedule map_primarycaps(const NetworkConfig& cfg, const QuantConfig& q, const MemoryMap& mem,
                         const ArchConfig& arch);
Schedule map_classcaps(const NetworkConfig& cfg, const QuantConfig& q, const MemoryMap& mem,
                       const ArchConfig& arch);

enum class RoutingPhase { InitialSoftmax, FirstSumSquash, UpdateSoftmax, SumSquash };
const char* to_string(RoutingPhase phase);

/// Scenario mux settings of a routing phase.
struct DataflowScenario {
  RoutingPhase kind;
  BufferKind data_source;         // Data Buffer or feedback
  BufferKind coefficient_source;  // Weight/Routing Buffer (or constant)
  accel::ActivationMode activation;

  static DataflowScenario of(RoutingPhase kind, bool skip_first_softmax);
};

struct RoutingSchedule {
  std::vector<RoutingPhase> phases;
  std::vector<Schedule> schedules;
};

/// Routing phases [S1] + [S2, S3] * (iterations - 1), with an initial
/// softmax phase when the first softmax is not skipped.
RoutingSchedule schedule_routing(const NetworkConfig& cfg, const QuantConfig& q, const MemoryMap& mem,
                                 const ArchConfig& arch, int iterations);
/// Class-score norms of the routed capsules.
Schedule map_class_scores(const NetworkConfig& cfg, const QuantConfig& q, const MemoryMap& mem,
                          const ArchConfig& arch);

/// Every schedule of one inference, in execution order.
std::vector<Schedule> map_network(const NetworkConfig& cfg, const QuantConfig& q, const MemoryMap& mem,
                                  const ArchConfig& arch);

// ---------------------------------------------------------------------------
// Static checks.

/// Checks region read-after-write order, barriers between dependent passes,
/// address bounds, FIFO capacity and accumulator op sequencing. Throws
/// ScheduleError naming the schedule and pass. `initial` lists regions
/// written before the program starts.
void validate(const std::vector<Schedule>& program, const BufferModel& buffers, const ArchConfig& arch,
              const std::vector<int>& initial);

/// True iff every reduction tile of an output tile runs before the next
/// output tile starts.
bool output_tiles_complete_in_order(const Schedule& s);
/// Count of latched weight tiles that serve more than one data vector.
uint64_t weight_hold_count(const Schedule& s);

// ---------------------------------------------------------------------------
// Execution.

struct RegionTraffic {
  std::string region;
  BufferKind buffer = BufferKind::Data;
  uint64_t reads = 0;
  uint64_t writes = 0;
  friend bool operator==(const RegionTraffic&, const RegionTraffic&) = default;
};

struct PhaseReport {
  std::string name;
  PhaseKind kind = PhaseKind::Layer;
  uint64_t cycles = 0;
  uint64_t passes = 0;
  uint64_t macs = 0;  // useful multiply-accumulates (nonzero rows x columns x positions)
  std::vector<RegionTraffic> traffic;
  friend bool operator==(const PhaseReport&, const PhaseReport&) = default;
};

struct CycleReport {
  std::vector<PhaseReport> phases;
  uint64_t total_cycles = 0;
  uint64_t array_saturation = 0;
  uint64_t accumulator_saturation = 0;
  uint64_t activation_saturation = 0;
  uint64_t softmax_degenerate = 0;
  size_t fifo_peak = 0;

  uint64_t sum_of_phases() const;
  /// Reads of `region` in each phase, in phase order.
  std::vector<uint64_t> reads_per_phase(const std::string& region) const;
  friend bool operator==(const CycleReport&, const CycleReport&) = default;
};

/// Array, accumulators, activation units and the cycle counter of one
/// simulated accelerator instance.
class Accelerator {
 public:
  Accelerator(const ArchConfig& arch, const QuantConfig& q, const ActivationTables& tables,
              accel::Tracer tracer = accel::Tracer{}, uint64_t trace_limit = 0);

  /// Runs one finalized schedule to completion against `buffers`.
  PhaseReport run(const Schedule& s, BufferModel& buffers);

  uint64_t cycle() const { return cycle_; }
  const accel::SystolicArray& array() const { return array_; }
  const std::vector<accel::Accumulator>& accumulators() const { return accs_; }
  /// Counters accumulated over every run so far.
  void fill_counters(CycleReport& r) const;
  /// Steady-state measurements of the last run: cycles in which every used
  /// column emitted a result, out of cycles with any output.
  uint64_t full_output_cycles() const { return full_output_cycles_; }

 private:
  ArchConfig arch_;
  QuantConfig q_;
  const ActivationTables& tables_;
  accel::SystolicArray array_;
  std::vector<accel::Accumulator> accs_;
  std::vector<accel::ActivationUnit> acts_;
  std::vector<OutputSink> vector_sink_;
  accel::Tracer tracer_;
  uint64_t trace_limit_;
  uint64_t cycle_ = 0;
  uint64_t full_output_cycles_ = 0;
};

/// Executes a schedule on `acc` and returns the phase report.
PhaseReport execute(const Schedule& s, Accelerator& acc, BufferModel& buffers);

struct SimInference {
  FixedTensor conv1;
  FixedTensor primary_pre;
  FixedTensor primary_u;
  FixedTensor predictions;
  FixedTensor routed_v;
  std::vector<int32_t> class_scores_raw;
  std::vector<double> class_scores;
  int argmax = 0;
  CycleReport report;
};

/// Full inference on the simulated accelerator.
SimInference simulate(const FixedTensor& image, const golden::PreparedWeights& weights, const NetworkConfig& cfg,
                      const QuantConfig& q, const ActivationTables& tables, const ArchConfig& arch = {},
                      accel::Tracer tracer = accel::Tracer{}, uint64_t trace_limit = 0);

}  // namespace mapper
}  // namespace capsacc
