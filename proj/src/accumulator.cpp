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

namespace capsacc::accel {

const char* to_string(AccumOp op) {
  switch (op) {
    case AccumOp::None: return "none";
    case AccumOp::Push: return "push";
    case AccumOp::Fold: return "fold";
    case AccumOp::FoldEmit: return "fold_emit";
    case AccumOp::Bypass: return "bypass";
  }
  return "?";
}

Accumulator::Accumulator(size_t capacity, fx::QFormat format) : capacity_(capacity), format_(format) {
  if (capacity < 1) throw InvalidArgument("Accumulator: capacity must be >= 1");
  format_.validate();
}

int32_t Accumulator::pop() {
  int32_t v = fifo_.front();
  fifo_.pop_front();
  return v;
}

std::optional<int32_t> Accumulator::step(std::optional<int32_t> in, AccumOp op, std::optional<int32_t> preload) {
  if (preload) {
    if (fifo_.size() >= capacity_) throw UnitFault("FIFO overflow on preload");
    fifo_.push_back(static_cast<int32_t>(fx::saturate(*preload, format_, &stats_)));
    peak_ = std::max(peak_, fifo_.size());
  }
  switch (op) {
    case AccumOp::None:
      return std::nullopt;
    case AccumOp::Push:
      if (!in) throw UnitFault("push without an incoming value");
      if (fifo_.size() >= capacity_) {
        throw UnitFault("FIFO overflow (capacity " + std::to_string(capacity_) + ")");
      }
      fifo_.push_back(*in);
      peak_ = std::max(peak_, fifo_.size());
      return std::nullopt;
    case AccumOp::Fold:
    case AccumOp::FoldEmit: {
      size_t needed = in ? 1 : 2;
      if (fifo_.size() < needed) {
        throw UnitFault(std::string(to_string(op)) + " needs " + std::to_string(needed) + " FIFO entries, has " +
                        std::to_string(fifo_.size()));
      }
      int64_t head = pop();
      int64_t other = in ? *in : pop();
      auto sum = static_cast<int32_t>(fx::saturate(head + other, format_, &stats_));
      if (op == AccumOp::FoldEmit) return sum;
      fifo_.push_back(sum);
      return std::nullopt;
    }
    case AccumOp::Bypass:
      if (!in) throw UnitFault("bypass without an incoming value");
      return in;
  }
  return std::nullopt;
}

}  // namespace capsacc::accel
