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

// CapsuleNet reference model in two arithmetic modes.
//
// Real mode is a plain double-precision implementation of the network.
// Fixed mode ("golden") reproduces the accelerator datapath bit for bit:
// 8-bit data/weights, a saturating 25-bit accumulator that sums each
// reduction in tiles of `reduction_tile` terms (the systolic column order)
// and folds the tiles in order, LUT-based norm, squash and softmax.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "capsacc/fixedpoint.hpp"

namespace capsacc {

using Shape = std::vector<size_t>;

size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor; the last axis is the fastest.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), values(shape_size(shape), T{}) {}
  Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != shape_size(shape)) {
      throw InvalidArgument("Tensor: " + std::to_string(values.size()) + " values for shape " +
                            shape_to_string(shape));
    }
  }

  size_t size() const { return values.size(); }
  T& operator[](size_t i) { return values[i]; }
  const T& operator[](size_t i) const { return values[i]; }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

using RealTensor = Tensor<double>;

/// Raw fixed-point payloads sharing one Q-format.
struct FixedTensor : Tensor<int32_t> {
  fx::QFormat format;

  FixedTensor() = default;
  FixedTensor(Shape s, fx::QFormat f) : Tensor<int32_t>(std::move(s)), format(f) {}
  RealTensor dequantize() const;
  friend bool operator==(const FixedTensor&, const FixedTensor&) = default;
};

enum class ArithmeticMode { Real, Fixed };

struct ConvLayerConfig {
  int channels = 256;
  int kernel = 9;
  int stride = 1;
  friend bool operator==(const ConvLayerConfig&, const ConvLayerConfig&) = default;
};

struct CapsLayerConfig {
  int channels = 32;
  int capsule_dim = 8;
  int kernel = 9;
  int stride = 2;
  friend bool operator==(const CapsLayerConfig&, const CapsLayerConfig&) = default;
};

struct ClassCapsConfig {
  int num_classes = 10;
  int capsule_dim = 16;
  friend bool operator==(const ClassCapsConfig&, const ClassCapsConfig&) = default;
};

struct NetworkConfig {
  int input_height = 28;
  int input_width = 28;
  ConvLayerConfig conv1{};
  CapsLayerConfig primarycaps{};
  ClassCapsConfig classcaps{};
  int routing_iterations = 3;
  /// Applies ReLU to the PrimaryCaps pre-activations before the capsule squash.
  bool primary_relu = false;
  ArithmeticMode arithmetic_mode = ArithmeticMode::Real;

  /// Throws InvalidArgument unless every derived shape is positive and
  /// routing_iterations >= 1.
  void validate() const;

  int conv1_out_h() const;
  int conv1_out_w() const;
  int primary_out_h() const;
  int primary_out_w() const;
  int primary_out_channels() const { return primarycaps.channels * primarycaps.capsule_dim; }
  /// Input capsules of ClassCaps (1152 for the MNIST network).
  int num_primary_capsules() const;
  /// Length of one PrimaryCaps reduction: kernel^2 * conv1 channels.
  int primary_reduction() const;
  int conv1_reduction() const { return conv1.kernel * conv1.kernel; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// A small network used by tests and the quick verification pass.
NetworkConfig toy_network();

/// Datapath and activation-table formats of the fixed-point model.
struct QuantConfig {
  fx::QFormat data = fx::signed_q(8, 5);
  fx::QFormat weight = fx::signed_q(8, 6);
  fx::QFormat acc = fx::signed_q(25, 15);
  fx::QFormat coupling = fx::signed_q(8, 5);
  fx::LutConfig luts{};
  /// Right shift from the sum of squares to the sqrt index for squash norms.
  int norm_shift_squash = 6;
  /// Right shift for class-score norms.
  int norm_shift_score = 0;
  /// Largest power-of-two pre-scale applied to a capsule before squash lookup.
  int squash_max_prescale = 7;
  int sumsq_bits = 24;
  int softmax_sum_bits = 16;
  /// Terms summed per partial sum before folding (systolic array rows).
  int reduction_tile = 16;

  void validate() const;
  /// Format of the Norm unit output for a given index shift.
  fx::QFormat norm_format(int shift) const;
  fx::QFormat score_format() const { return norm_format(norm_shift_score); }

  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

/// The three activation tables, built once per QuantConfig.
struct ActivationTables {
  fx::LookupTable sqrt;
  fx::LookupTable squash;
  fx::LookupTable exp;

  static ActivationTables build(const fx::LutConfig& cfg);
};

/// Trainable tensors. Kernels are [R][C][I][K] (kernel row, kernel column,
/// input channel, output channel); ClassCaps W is [i][j][e][d] so that
/// u_hat[i][j][d] = sum_e W[i][j][e][d] * u[i][e].
struct WeightSet {
  RealTensor conv1_kernels;
  RealTensor conv1_biases;
  RealTensor primary_kernels;
  RealTensor primary_biases;
  RealTensor classcaps_w;

  /// Zero-filled tensors of the right shapes.
  static WeightSet zeros(const NetworkConfig& cfg);
  void check_shapes(const NetworkConfig& cfg) const;
  size_t total_elements() const;
};

struct ParameterCounts {
  uint64_t conv1 = 0;
  uint64_t primarycaps = 0;
  uint64_t classcaps = 0;
  uint64_t coupling_coefficients = 0;

  uint64_t trainable_total() const { return conv1 + primarycaps + classcaps; }
};

ParameterCounts count_parameters(const NetworkConfig& cfg);
/// Bytes needed for every trainable parameter at `bits_per_weight` (8/16/32).
uint64_t estimate_memory(const NetworkConfig& cfg, int bits_per_weight);

// ---------------------------------------------------------------------------
// Real mode.

namespace real {

/// Valid convolution of an HWC input with [R][C][I][K] kernels.
RealTensor conv2d(const RealTensor& input, const RealTensor& kernels, const RealTensor& biases, int stride);
std::vector<double> squash(std::span<const double> s);
std::vector<double> softmax(std::span<const double> b);
/// u: [N][E], W: [N][J][E][D] -> u_hat: [N][J][D].
RealTensor classcaps_predictions(const RealTensor& u, const RealTensor& w);

struct RoutingTrace {
  std::vector<RealTensor> couplings;  // c before each iteration, [N][J]
};

/// Dynamic routing over u_hat [N][J][D]; returns v [J][D].
RealTensor routing(const RealTensor& u_hat, int iterations, bool skip_first_softmax,
                   RoutingTrace* trace = nullptr);

struct Inference {
  std::vector<double> class_scores;
  int argmax = 0;
  RealTensor conv1;        // [H1][W1][K1] after ReLU
  RealTensor primary_pre;  // [H2][W2][caps_channels * caps_dim]
  RealTensor primary_u;    // [N][E]
  RealTensor predictions;  // [N][J][D]
  RealTensor routed_v;     // [J][D]
};

Inference infer(const RealTensor& image, const WeightSet& weights, const NetworkConfig& cfg,
                bool skip_first_softmax = true);

}  // namespace real

// ---------------------------------------------------------------------------
// Fixed mode (golden model).

namespace golden {

/// Event counters of one golden-model evaluation.
struct Counters {
  fx::SaturationStats saturation;
  uint64_t softmax_degenerate = 0;
};

/// Sums `terms` products in the accelerator order: tiles of `tile` terms,
/// each tile accumulated from zero, tiles folded in order onto `init` when
/// given (otherwise onto the first tile). Result in `q.acc`.
int64_t hw_accumulate(std::span<const int32_t> data, std::span<const int32_t> weights,
                      const fx::QFormat& data_fmt, const fx::QFormat& weight_fmt, const QuantConfig& q,
                      const int64_t* init, Counters& counters);

/// Squash of one capsule given as raw data-format components.
std::vector<int32_t> squash(std::span<const int32_t> s, const QuantConfig& q, const ActivationTables& t,
                            Counters& counters);
/// Squash table stage shared with the activation unit: looks up every
/// component given the capsule norm (raw, in `q.norm_format(norm_shift)`).
/// Small norms pre-scale the components up; norms beyond the table's norm
/// port shift components and norm down together.
std::vector<int32_t> squash_lookup(std::span<const int32_t> s, int64_t norm_raw, int norm_shift, const QuantConfig& q,
                                   const ActivationTables& t, fx::SaturationStats* stats);
/// Norm unit: raw result in `q.norm_format(shift)`.
int32_t norm(std::span<const int32_t> s, int shift, const QuantConfig& q, const ActivationTables& t,
             Counters& counters);
/// Softmax of raw `q.luts.exp_in` inputs; raw outputs in `q.coupling`.
std::vector<int32_t> softmax(std::span<const int32_t> b, const QuantConfig& q, const ActivationTables& t,
                             Counters& counters);

/// Weights quantized to `q.weight`, with kernels transposed to [K][reduction]
/// and the bias appended as the last reduction term.
struct PreparedWeights {
  std::vector<int32_t> conv1;    // K1 x (R*C*I + 1)
  std::vector<int32_t> primary;  // K2 x (R*C*I + 1)
  FixedTensor classcaps_w;       // [N][J][E][D]
  int conv1_terms = 0;
  int primary_terms = 0;

  static PreparedWeights prepare(const WeightSet& w, const NetworkConfig& cfg, const QuantConfig& q);
};

/// Fixed-mode convolution with bias and optional ReLU; input/output in q.data.
/// `kernel_t` is [K][R*C*I + 1] as produced by PreparedWeights.
FixedTensor conv2d(const FixedTensor& input, std::span<const int32_t> kernel_t, int out_channels, int kernel,
                   int stride, bool relu, const QuantConfig& q, Counters& counters);
FixedTensor classcaps_predictions(const FixedTensor& u, const FixedTensor& w, const QuantConfig& q,
                                  Counters& counters);

struct RoutingState {
  FixedTensor couplings;  // [N][J] in q.coupling
  FixedTensor logits;     // [N][J] in q.acc
};

/// Fixed-mode routing over u_hat [N][J][D] (q.data). Returns v [J][D] (q.data).
FixedTensor routing(const FixedTensor& u_hat, int iterations, bool skip_first_softmax, const QuantConfig& q,
                    const ActivationTables& t, Counters& counters, RoutingState* final_state = nullptr);

/// Coupling coefficient used when the first softmax is skipped: 1/J.
int32_t initial_coupling(int num_classes, const QuantConfig& q);

struct Inference {
  std::vector<double> class_scores;
  std::vector<int32_t> class_scores_raw;  // q.score_format()
  int argmax = 0;
  FixedTensor conv1;
  FixedTensor primary_pre;
  FixedTensor primary_u;
  FixedTensor predictions;
  FixedTensor routed_v;
  Counters counters;
};

/// Maps a [0,1] image to the data format (1.0 becomes the largest code <= 1).
FixedTensor quantize_image(const RealTensor& image, const QuantConfig& q);

Inference infer(const FixedTensor& image, const PreparedWeights& weights, const NetworkConfig& cfg,
                const QuantConfig& q, const ActivationTables& t, bool skip_first_softmax = true);

}  // namespace golden

/// Lowest index among the maxima.
int argmax(std::span<const double> scores);
int argmax(std::span<const int32_t> scores);

}  // namespace capsacc
