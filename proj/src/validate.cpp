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
#include <limits>
#include <set>

#include "capsacc/mapper.hpp"

namespace capsacc::mapper {

namespace {

struct Range {
  int64_t lo = std::numeric_limits<int64_t>::max();
  int64_t hi = std::numeric_limits<int64_t>::min();
  void add(int64_t v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
};

Range positions_range(const Affine2& pos, int64_t first, int64_t count) {
  Range r;
  for (int64_t p = first; p < first + count; ++p) r.add(pos.at(p));
  return r;
}

Range offsets_range(const std::vector<int64_t>& v) {
  Range r;
  for (int64_t x : v) r.add(x);
  return r;
}

}  // namespace

void validate(const std::vector<Schedule>& program, const BufferModel& buffers, const ArchConfig& arch,
              const std::vector<int>& initial) {
  std::set<int> written(initial.begin(), initial.end());
  std::vector<int64_t> fifo(static_cast<size_t>(arch.cols), 0);
  const auto cap = static_cast<int64_t>(arch.fifo_capacity);

  for (const Schedule& s : program) {
    if (s.latch.size() != s.passes.size()) throw ScheduleError(s.name + ": schedule not finalized");
    std::set<int> recent;  // written since the last barrier
    for (size_t k = 0; k < s.passes.size(); ++k) {
      const Pass& p = s.passes[k];
      const std::string where = s.name + " pass " + std::to_string(k);
      auto fail = [&](const std::string& what) { throw ScheduleError(where + ": " + what); };
      if (p.barrier) recent.clear();

      auto check_read = [&](int region, Range addrs) {
        if (region < 0 || static_cast<size_t>(region) >= buffers.num_regions()) fail("invalid region");
        const Region& rg = buffers.region(region);
        if (!written.count(region)) {
          if (rg.buffer == BufferKind::Feedback) fail("feedback reuse requested but " + rg.name + " is not resident");
          fail("reads " + rg.name + " before it is written");
        }
        if (recent.count(region)) fail("reads " + rg.name + " written by an earlier pass without a barrier");
        if (addrs.lo < 0 || addrs.hi >= static_cast<int64_t>(rg.size())) {
          fail("address range [" + std::to_string(addrs.lo) + ", " + std::to_string(addrs.hi) + "] outside " +
               rg.name + " of size " + std::to_string(rg.size()));
        }
      };
      auto check_write = [&](int region, Range addrs) {
        if (region < 0 || static_cast<size_t>(region) >= buffers.num_regions()) fail("invalid output region");
        const Region& rg = buffers.region(region);
        if (addrs.lo < 0 || addrs.hi >= static_cast<int64_t>(rg.size())) {
          fail("write range [" + std::to_string(addrs.lo) + ", " + std::to_string(addrs.hi) + "] outside " +
               rg.name + " of size " + std::to_string(rg.size()));
        }
      };

      const auto rows = static_cast<size_t>(p.rows_used), cols = static_cast<size_t>(p.cols_used);
      if (p.data.kind == DataKind::Memory) {
        if (p.data.row_off.size() != rows || p.data.row_kind.size() != rows || p.data.row_value.size() != rows) {
          fail("data operand does not cover the used rows");
        }
        std::vector<int64_t> mem_rows;
        for (size_t r = 0; r < rows; ++r) {
          if (p.data.row_kind[r] == RowKind::Memory) mem_rows.push_back(p.data.row_off[r]);
        }
        if (!mem_rows.empty()) {
          Range pos = positions_range(p.data.pos, p.first, p.positions);
          Range off = offsets_range(mem_rows);
          check_read(p.data.region, {pos.lo + off.lo, pos.hi + off.hi});
          if (p.data.capture_region >= 0) {
            check_write(p.data.capture_region, {pos.lo + off.lo, pos.hi + off.hi});
          }
        }
      } else if (p.first + p.positions > p.rows_used) {
        fail("one-hot stream longer than the used rows");
      }
      if (p.weight.kind == WeightKind::Memory) {
        if (p.weight.row_off.size() != rows || p.weight.col_off.size() != cols) {
          fail("weight operand does not cover the used tile");
        }
        Range ro = offsets_range(p.weight.row_off), co = offsets_range(p.weight.col_off);
        check_read(p.weight.region, {ro.lo + co.lo, ro.hi + co.hi});
      }

      // Kept positions per column.
      std::vector<int64_t> kept(cols, 0);
      for (int64_t a = p.first; a < p.first + p.positions; ++a) {
        for (size_t c = 0; c < cols; ++c) kept[c] += p.accum.selects(a, static_cast<int>(c)) ? 1 : 0;
      }
      const bool preload = p.accum.first() && p.accum.preload != PreloadKind::None;
      if (p.accum.preload == PreloadKind::Memory && preload) {
        check_read(p.accum.preload_region, positions_range(p.accum.preload_pos, p.first, p.positions));
      }
      for (size_t c = 0; c < cols; ++c) {
        int64_t& f = fifo[c];
        const int64_t v = kept[c];
        if (p.accum.first() && !preload) {
          if (!p.accum.last()) f += v;
        } else {
          if (f + (preload ? v : 0) < v) fail("fold without queued partial sums in column " + std::to_string(c));
          if (preload) f += v;
          if (p.accum.last()) f -= v;
        }
        if (f + (preload ? 1 : 0) > cap) {
          fail("column " + std::to_string(c) + " queues " + std::to_string(f) + " partial sums, FIFO capacity " +
               std::to_string(cap));
        }
        if (p.emits() && p.act.vector_mode() && v % p.act.vector_length != 0) {
          fail("column " + std::to_string(c) + " emits a partial vector");
        }
      }

      if (p.emits()) {
        if (p.sink.col_off.size() != cols) fail("output sink does not cover the used columns");
        Range co = offsets_range(p.sink.col_off);
        Range out;
        if (p.act.vector_mode()) {
          out = {co.lo, co.hi + (p.act.mode == accel::ActivationMode::Norm ? 0 : p.act.vector_length - 1)};
        } else {
          Range pos = positions_range(p.sink.pos, p.first, p.positions);
          out = {pos.lo + co.lo, pos.hi + co.hi};
        }
        check_write(p.sink.region, out);
        written.insert(p.sink.region);
        recent.insert(p.sink.region);
        if (p.sink.wide_region >= 0) {
          check_write(p.sink.wide_region, out);
          written.insert(p.sink.wide_region);
          recent.insert(p.sink.wide_region);
        }
      }
      if (p.data.capture_region >= 0) {
        written.insert(p.data.capture_region);
        recent.insert(p.data.capture_region);
      }
    }
    for (size_t c = 0; c < fifo.size(); ++c) {
      if (fifo[c] != 0) {
        throw ScheduleError(s.name + ": column " + std::to_string(c) + " ends with " + std::to_string(fifo[c]) +
                            " partial sums queued");
      }
    }
  }
}

bool output_tiles_complete_in_order(const Schedule& s) {
  std::set<int> finished;
  int current = -1;
  int expected_tile = 0;
  for (const Pass& p : s.passes) {
    if (p.tag.layer != 0) continue;
    if (p.tag.out_tile != current) {
      if (current >= 0) finished.insert(current);
      if (finished.count(p.tag.out_tile)) return false;
      current = p.tag.out_tile;
    }
    // reduction tiles of one output tile run back to back in order
    if (p.accum.tile != expected_tile) return false;
    expected_tile = p.accum.last() ? 0 : p.accum.tile + 1;
  }
  return expected_tile == 0;
}

uint64_t weight_hold_count(const Schedule& s) {
  uint64_t holds = 0;
  for (const Pass& p : s.passes) holds += p.tag.layer == 0 && p.positions > 1 ? 1 : 0;
  return holds;
}

}  // namespace capsacc::mapper
