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

#include <sstream>

#include "capsacc/capsnet.hpp"

namespace capsacc {

size_t shape_size(const Shape& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

RealTensor FixedTensor::dequantize() const {
  RealTensor out(shape);
  for (size_t i = 0; i < values.size(); ++i) out.values[i] = format.value_of(values[i]);
  return out;
}

namespace {

int conv_out(int in, int kernel, int stride) {
  if (kernel <= 0 || stride <= 0 || in < kernel) return 0;
  return (in - kernel) / stride + 1;
}

}  // namespace

int NetworkConfig::conv1_out_h() const { return conv_out(input_height, conv1.kernel, conv1.stride); }
int NetworkConfig::conv1_out_w() const { return conv_out(input_width, conv1.kernel, conv1.stride); }
int NetworkConfig::primary_out_h() const { return conv_out(conv1_out_h(), primarycaps.kernel, primarycaps.stride); }
int NetworkConfig::primary_out_w() const { return conv_out(conv1_out_w(), primarycaps.kernel, primarycaps.stride); }

int NetworkConfig::num_primary_capsules() const {
  return primary_out_h() * primary_out_w() * primarycaps.channels;
}

int NetworkConfig::primary_reduction() const {
  return primarycaps.kernel * primarycaps.kernel * conv1.channels;
}

void NetworkConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidArgument("NetworkConfig: " + what);
  };
  require(input_height > 0 && input_width > 0, "input size must be positive");
  require(conv1.channels > 0 && conv1.kernel > 0 && conv1.stride > 0, "conv1 fields must be positive");
  require(primarycaps.channels > 0 && primarycaps.capsule_dim > 0 && primarycaps.kernel > 0 &&
              primarycaps.stride > 0,
          "primarycaps fields must be positive");
  require(classcaps.num_classes > 0 && classcaps.capsule_dim > 0, "classcaps fields must be positive");
  require(conv1_out_h() > 0 && conv1_out_w() > 0, "conv1 kernel larger than the input");
  require(primary_out_h() > 0 && primary_out_w() > 0, "primarycaps kernel larger than the conv1 output");
  require(routing_iterations >= 1, "routing_iterations must be >= 1, got " + std::to_string(routing_iterations));
}

NetworkConfig toy_network() {
  NetworkConfig cfg;
  cfg.input_height = 12;
  cfg.input_width = 12;
  cfg.conv1 = {4, 3, 1};
  cfg.primarycaps = {2, 4, 3, 2};
  cfg.classcaps = {3, 4};
  cfg.routing_iterations = 3;
  return cfg;
}

void QuantConfig::validate() const {
  for (const fx::QFormat* f : {&data, &weight, &acc, &coupling}) f->validate();
  luts.validate();
  if (data.total_bits > 8 || weight.total_bits > 8 || coupling.total_bits > 8) {
    throw InvalidArgument("QuantConfig: data, weight and coupling formats must fit 8 bits");
  }
  if (!data.is_signed || !weight.is_signed || !acc.is_signed || !coupling.is_signed) {
    throw InvalidArgument("QuantConfig: datapath formats must be signed");
  }
  if (acc.frac_bits < data.frac_bits + weight.frac_bits || acc.frac_bits < data.frac_bits + coupling.frac_bits) {
    throw InvalidArgument("QuantConfig: accumulator must keep every product fraction bit");
  }
  if (luts.squash_out != data) throw InvalidArgument("QuantConfig: squash output must use the data format");
  // Biases ride the array as an extra reduction term multiplied by 1.0.
  if (data.max_value() < 1.0) throw InvalidArgument("QuantConfig: data format must represent 1.0");
  for (int shift : {norm_shift_squash, norm_shift_score}) {
    if (shift < 0 || (2 * data.frac_bits - shift + luts.sqrt_in.frac_bits) % 2 != 0) {
      throw InvalidArgument("QuantConfig: norm shift must be >= 0 and keep the sqrt scale a power of four");
    }
    norm_format(shift).validate();
  }
  if (reduction_tile < 1) throw InvalidArgument("QuantConfig: reduction_tile must be >= 1");
  if (sumsq_bits < 2 * data.total_bits || sumsq_bits > 40) throw InvalidArgument("QuantConfig: sumsq_bits out of range");
  if (softmax_sum_bits < luts.exp_out.total_bits || softmax_sum_bits > 32) {
    throw InvalidArgument("QuantConfig: softmax_sum_bits out of range");
  }
  if (squash_max_prescale < 0 || squash_max_prescale > 16) {
    throw InvalidArgument("QuantConfig: squash_max_prescale out of range");
  }
}

fx::QFormat QuantConfig::norm_format(int shift) const {
  // sqrt(idx * 2^(shift - 2*Fd)) = lut(idx) * 2^((shift - 2*Fd + Fi) / 2)
  int scale = (shift - 2 * data.frac_bits + luts.sqrt_in.frac_bits) / 2;
  return fx::unsigned_q(luts.sqrt_out.total_bits, luts.sqrt_out.frac_bits - scale);
}

ActivationTables ActivationTables::build(const fx::LutConfig& cfg) {
  return {fx::build_sqrt_lut(cfg), fx::build_squash_lut(cfg), fx::build_exp_lut(cfg)};
}

WeightSet WeightSet::zeros(const NetworkConfig& cfg) {
  auto k1 = static_cast<size_t>(cfg.conv1.kernel);
  auto c1 = static_cast<size_t>(cfg.conv1.channels);
  auto k2 = static_cast<size_t>(cfg.primarycaps.kernel);
  auto c2 = static_cast<size_t>(cfg.primary_out_channels());
  WeightSet w;
  w.conv1_kernels = RealTensor({k1, k1, 1, c1});
  w.conv1_biases = RealTensor({c1});
  w.primary_kernels = RealTensor({k2, k2, c1, c2});
  w.primary_biases = RealTensor({c2});
  w.classcaps_w = RealTensor({static_cast<size_t>(cfg.num_primary_capsules()),
                              static_cast<size_t>(cfg.classcaps.num_classes),
                              static_cast<size_t>(cfg.primarycaps.capsule_dim),
                              static_cast<size_t>(cfg.classcaps.capsule_dim)});
  return w;
}

void WeightSet::check_shapes(const NetworkConfig& cfg) const {
  WeightSet ref = zeros(cfg);
  auto check = [](const RealTensor& got, const RealTensor& want, const char* name) {
    if (got.shape != want.shape || got.values.size() != want.values.size()) {
      throw InvalidArgument(std::string("WeightSet: ") + name + " has shape " + shape_to_string(got.shape) +
                            ", expected " + shape_to_string(want.shape));
    }
  };
  check(conv1_kernels, ref.conv1_kernels, "conv1_kernels");
  check(conv1_biases, ref.conv1_biases, "conv1_biases");
  check(primary_kernels, ref.primary_kernels, "primary_kernels");
  check(primary_biases, ref.primary_biases, "primary_biases");
  check(classcaps_w, ref.classcaps_w, "classcaps_w");
}

size_t WeightSet::total_elements() const {
  return conv1_kernels.size() + conv1_biases.size() + primary_kernels.size() + primary_biases.size() +
         classcaps_w.size();
}

ParameterCounts count_parameters(const NetworkConfig& cfg) {
  auto u = [](int v) { return static_cast<uint64_t>(v > 0 ? v : 0); };
  ParameterCounts p;
  uint64_t c1 = u(cfg.conv1.channels);
  uint64_t c2 = u(cfg.primary_out_channels());
  uint64_t conv1_kernels = u(cfg.conv1.kernel) * u(cfg.conv1.kernel) * c1;
  p.conv1 = conv1_kernels ? conv1_kernels + c1 : 0;
  uint64_t primary_kernels = u(cfg.primarycaps.kernel) * u(cfg.primarycaps.kernel) * c1 * c2;
  p.primarycaps = primary_kernels ? primary_kernels + c2 : 0;
  uint64_t n = u(cfg.num_primary_capsules());
  uint64_t j = u(cfg.classcaps.num_classes);
  p.classcaps = n * j * u(cfg.primarycaps.capsule_dim) * u(cfg.classcaps.capsule_dim);
  p.coupling_coefficients = n * j;
  return p;
}

uint64_t estimate_memory(const NetworkConfig& cfg, int bits_per_weight) {
  if (bits_per_weight != 8 && bits_per_weight != 16 && bits_per_weight != 32) {
    throw InvalidArgument("estimate_memory: bits_per_weight must be 8, 16 or 32");
  }
  return count_parameters(cfg).trainable_total() * static_cast<uint64_t>(bits_per_weight / 8);
}

int argmax(std::span<const double> scores) {
  int best = 0;
  for (size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = static_cast<int>(i);
  }
  return best;
}

int argmax(std::span<const int32_t> scores) {
  int best = 0;
  for (size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace capsacc
