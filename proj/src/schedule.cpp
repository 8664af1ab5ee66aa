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

#include "capsacc/mapper.hpp"

namespace capsacc::mapper {

int64_t pass_span(int64_t positions, int rows, int cols_used) { return positions + rows + cols_used - 2; }

int64_t activation_tail(const accel::ActivationSettings& act) {
  const auto n = static_cast<uint64_t>(act.vector_length);
  switch (act.mode) {
    case accel::ActivationMode::Norm: return static_cast<int64_t>(accel::norm_latency(n) - n);
    case accel::ActivationMode::Squash: return static_cast<int64_t>(accel::squash_latency(n) - n);
    case accel::ActivationMode::Softmax: return static_cast<int64_t>(accel::softmax_latency(n) - n);
    default: return 0;
  }
}

void Schedule::finalize(const ArchConfig& arch, const QuantConfig& q) {
  const int n = arch.rows;
  latch.assign(passes.size(), 0);
  length = 0;
  int64_t max_done = -1;   // last write of any pass so far
  int64_t act_free = 0;    // activation units idle from this cycle on
  for (size_t k = 0; k < passes.size(); ++k) {
    const Pass& p = passes[k];
    if (p.rows_used < 1 || p.rows_used > arch.rows || p.cols_used < 1 || p.cols_used > arch.cols ||
        p.positions < 1) {
      throw ScheduleError(name + ": pass " + std::to_string(k) + " has an invalid geometry");
    }
    const auto mac = accel::MacConfig::from_formats(p.data_format, p.weight_format, q.acc);
    int64_t L = p.rows_used;
    if (k > 0) {
      const Pass& prev = passes[k - 1];
      const int64_t lp = latch[k - 1];
      // weight2 of every used PE stays valid until the previous pass's
      // last data vector has crossed it
      L = std::max(L, lp + prev.positions + prev.rows_used + prev.cols_used - 2);
      // this pass's weights enter the chain only after the previous latch
      L = std::max(L, lp + p.rows_used);
      // product alignment is array-wide: no overlap across format changes
      if (accel::MacConfig::from_formats(prev.data_format, prev.weight_format, q.acc) != mac) {
        L = std::max(L, lp + pass_span(prev.positions, n, prev.cols_used));
      }
      if (p.barrier) L = std::max(L, max_done + 1 + p.rows_used);
    }
    if (p.emits()) L = std::max(L, act_free);
    latch[k] = L;

    int64_t last_out = L + pass_span(p.positions, n, p.cols_used) - 1;
    int64_t done = last_out;
    if (p.emits()) {
      done += activation_tail(p.act);
      act_free = L + p.positions + activation_tail(p.act);
    }
    if (p.data.capture_region >= 0) {
      done = std::max(done, L + p.positions - 1 + p.rows_used - 1 + arch.cols - 1);
    }
    max_done = std::max(max_done, done);
  }
  length = static_cast<uint64_t>(max_done + 1);
}

ScheduleCursor::ScheduleCursor(const Schedule& s, const ArchConfig& arch, const QuantConfig& q)
    : s_(s), n_(arch.rows), m_(arch.cols), q_(q) {
  if (s.latch.size() != s.passes.size()) throw ScheduleError(s.name + ": schedule not finalized");
  cw_.rows.resize(static_cast<size_t>(n_));
  cw_.weights.resize(static_cast<size_t>(m_));
  cw_.columns.resize(static_cast<size_t>(m_));
}

const ControlWord& ScheduleCursor::next() {
  const int64_t t = t_++;
  cw_.cycle = static_cast<uint64_t>(t);
  cw_.load_weight = false;
  for (auto& r : cw_.rows) r = RowCtl{};
  for (auto& w : cw_.weights) w = PortCtl{};
  for (auto& c : cw_.columns) c = ColumnCtl{};

  const size_t count = s_.passes.size();
  while (lo_ < count) {
    const Pass& p = s_.passes[lo_];
    if (t <= s_.latch[lo_] + pass_span(p.positions, n_, p.cols_used) - 1) break;
    ++lo_;
  }
  for (size_t k = lo_; k < count && s_.latch[k] - s_.passes[k].rows_used <= t; ++k) {
    const Pass& p = s_.passes[k];
    const int64_t L = s_.latch[k];
    if (t < L) {
      // weight injection: row r's weights enter the top edge at L - 1 - r
      const auto r = static_cast<int>(L - 1 - t);
      for (int c = 0; c < p.cols_used; ++c) {
        PortCtl& w = cw_.weights[static_cast<size_t>(c)];
        switch (p.weight.kind) {
          case WeightKind::Memory:
            w = {Operand::Memory, p.weight.region,
                 p.weight.row_off[static_cast<size_t>(r)] + p.weight.col_off[static_cast<size_t>(c)], 0};
            break;
          case WeightKind::Const:
            w = {Operand::Const, -1, 0, p.weight.value};
            break;
          case WeightKind::Identity:
            w = {Operand::Const, -1, 0, r == c ? p.weight.value : 0};
            break;
        }
      }
      continue;
    }
    if (t == L) cw_.load_weight = true;
    if (t <= L + pass_span(p.positions, n_, p.cols_used) - 1) {
      cw_.mac = accel::MacConfig::from_formats(p.data_format, p.weight_format, q_.acc);
    }
    for (int r = 0; r < p.rows_used; ++r) {
      const int64_t pi = t - L - r;
      if (pi < 0 || pi >= p.positions) continue;
      const int64_t a = p.first + pi;
      RowCtl& row = cw_.rows[static_cast<size_t>(r)];
      if (p.data.kind == DataKind::OneHot) {
        row.port = {Operand::Const, -1, 0, r == a ? p.data.one : 0};
      } else if (p.data.row_kind[static_cast<size_t>(r)] == RowKind::Const) {
        row.port = {Operand::Const, -1, 0, p.data.row_value[static_cast<size_t>(r)]};
      } else {
        row.port = {Operand::Memory, p.data.region, p.data.pos.at(a) + p.data.row_off[static_cast<size_t>(r)], 0};
        row.capture_region = p.data.capture_region;
      }
    }
    for (int c = 0; c < p.cols_used; ++c) {
      const int64_t pi = t - L - (n_ - 1) - c;
      if (pi < 0 || pi >= p.positions) continue;
      const int64_t a = p.first + pi;
      if (!p.accum.selects(a, c)) continue;
      ColumnCtl& col = cw_.columns[static_cast<size_t>(c)];
      col.active = true;
      col.pass = &p;
      col.position = a;
      const AccumPlan& plan = p.accum;
      const bool preload = plan.first() && plan.preload != PreloadKind::None;
      if (preload) {
        col.preload = plan.preload == PreloadKind::Zero
                          ? PortCtl{Operand::Const, -1, 0, 0}
                          : PortCtl{Operand::Memory, plan.preload_region, plan.preload_pos.at(a), 0};
      }
      using accel::AccumOp;
      if (plan.first() && !preload) {
        col.op = plan.last() ? AccumOp::Bypass : AccumOp::Push;
      } else {
        col.op = plan.last() ? AccumOp::FoldEmit : AccumOp::Fold;
      }
    }
  }
  return cw_;
}

}  // namespace capsacc::mapper
