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

SystolicArray::SystolicArray(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 1 || cols < 1) throw InvalidArgument("SystolicArray: rows and cols must be >= 1");
  reset();
}

void SystolicArray::reset() {
  size_t n = static_cast<size_t>(rows_) * static_cast<size_t>(cols_);
  for (auto* v : {&data_, &sum_, &w1_, &w2_, &next_data_, &next_sum_, &next_w1_}) v->assign(n, 0);
  cycles_ = 0;
  saturation_ = 0;
}

void SystolicArray::step(std::span<const int32_t> row_data, std::span<const int32_t> col_weights,
                         const ArrayCtrl& ctrl) {
  if (row_data.size() != static_cast<size_t>(rows_) || col_weights.size() != static_cast<size_t>(cols_)) {
    throw UnitFault("array port width mismatch");
  }
  const int shift = ctrl.mac.product_shift;
  const auto lo = static_cast<int32_t>(ctrl.mac.acc.raw_min());
  const auto hi = static_cast<int32_t>(ctrl.mac.acc.raw_max());
  const size_t m = static_cast<size_t>(cols_);
  uint64_t clipped = 0;

  if (ctrl.load_weight) std::copy(w1_.begin(), w1_.end(), w2_.begin());

  // Next-state arrays are computed from the current registers only, then
  // swapped in: every PE sees its neighbours' pre-edge values.
  for (int r = 0; r < rows_; ++r) {
    const size_t base = static_cast<size_t>(r) * m;
    const int32_t* d_cur = &data_[base];
    const int32_t* w_above = r ? &w1_[base - m] : col_weights.data();
    const int32_t* s_above = r ? &sum_[base - m] : nullptr;
    const int32_t* w2 = &w2_[base];
    int32_t* nd = &next_data_[base];
    int32_t* ns = &next_sum_[base];
    int32_t* nw = &next_w1_[base];

    nd[0] = row_data[static_cast<size_t>(r)];
    for (size_t c = 1; c < m; ++c) nd[c] = d_cur[c - 1];
    for (size_t c = 0; c < m; ++c) nw[c] = w_above[c];
    const int32_t* w_mul = ctrl.use_stored_weight ? w2 : w_above;
    for (size_t c = 0; c < m; ++c) {
      int32_t p = nd[c] * w_mul[c];
      int32_t v = (s_above ? s_above[c] : 0) + (p << shift);
      int32_t clamped = std::clamp(v, lo, hi);
      clipped += clamped != v;
      ns[c] = clamped;
    }
  }
  data_.swap(next_data_);
  sum_.swap(next_sum_);
  w1_.swap(next_w1_);
  saturation_ += clipped;
  ++cycles_;
}

std::span<const int32_t> SystolicArray::bottom_psums() const {
  return {&sum_[at(rows_ - 1, 0)], static_cast<size_t>(cols_)};
}

std::vector<int32_t> SystolicArray::right_data() const {
  std::vector<int32_t> out(static_cast<size_t>(rows_));
  for (int r = 0; r < rows_; ++r) out[static_cast<size_t>(r)] = data_[at(r, cols_ - 1)];
  return out;
}

PEState SystolicArray::pe(int r, int c) const {
  size_t i = at(r, c);
  return PEState{data_[i], sum_[i], w1_[i], w2_[i]};
}

ArrayStepResult array_step(SystolicArray& state, std::span<const int32_t> row_data,
                           std::span<const int32_t> col_weights, const ArrayCtrl& ctrl) {
  state.step(row_data, col_weights, ctrl);
  auto psums = state.bottom_psums();
  return {std::vector<int32_t>(psums.begin(), psums.end()), state.right_data()};
}

}  // namespace capsacc::accel
