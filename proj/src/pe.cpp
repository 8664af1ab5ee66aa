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

#include "capsacc/accel.hpp"

namespace capsacc {

SimulationError::SimulationError(uint64_t cycle, std::string unit, const std::string& what)
    : std::runtime_error("cycle " + std::to_string(cycle) + ", " + unit + ": " + what),
      cycle_(cycle),
      unit_(std::move(unit)) {}

namespace accel {

MacConfig MacConfig::from_formats(const fx::QFormat& data, const fx::QFormat& weight, const fx::QFormat& acc) {
  int shift = acc.frac_bits - data.frac_bits - weight.frac_bits;
  if (shift < 0) {
    throw InvalidArgument("MacConfig: accumulator " + acc.to_string() + " drops product bits of " +
                          data.to_string() + " x " + weight.to_string());
  }
  // The array datapath is int32: the accumulator and any aligned product
  // must fit 30 bits so their sum cannot overflow.
  if (acc.total_bits > 30 || data.total_bits + weight.total_bits + shift > 30) {
    throw InvalidArgument("MacConfig: " + acc.to_string() + " accumulator too wide for the int32 datapath");
  }
  return MacConfig{shift, acc};
}

PEStepResult pe_step(const PEState& state, int32_t data_in, int32_t weight_in, int32_t psum_in, PECtrl ctrl,
                     const MacConfig& mac, fx::SaturationStats* stats) {
  PEStepResult r;
  r.state = state;
  if (ctrl.load_weight) r.state.weight2_reg = state.weight1_reg;
  int32_t w = ctrl.use_stored_weight ? r.state.weight2_reg : weight_in;
  int64_t product = fx::shift_round(int64_t{data_in} * w, mac.product_shift);
  r.state.sum_reg = static_cast<int32_t>(fx::saturate(int64_t{psum_in} + product, mac.acc, stats));
  r.state.data_reg = data_in;
  r.state.weight1_reg = weight_in;
  r.data_out = r.state.data_reg;
  r.weight_out = r.state.weight1_reg;
  r.psum_out = r.state.sum_reg;
  return r;
}

}  // namespace accel
}  // namespace capsacc
