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

uint64_t CycleReport::sum_of_phases() const {
  uint64_t total = 0;
  for (const auto& p : phases) total += p.cycles;
  return total;
}

std::vector<uint64_t> CycleReport::reads_per_phase(const std::string& region) const {
  std::vector<uint64_t> out;
  for (const auto& p : phases) {
    uint64_t reads = 0;
    for (const auto& t : p.traffic) reads += t.region == region ? t.reads : 0;
    out.push_back(reads);
  }
  return out;
}

Accelerator::Accelerator(const ArchConfig& arch, const QuantConfig& q, const ActivationTables& tables,
                         accel::Tracer tracer, uint64_t trace_limit)
    : arch_(arch),
      q_(q),
      tables_(tables),
      array_(arch.rows, arch.cols),
      vector_sink_(static_cast<size_t>(arch.cols)),
      tracer_(tracer),
      trace_limit_(trace_limit) {
  arch.validate();
  q.validate();
  for (int c = 0; c < arch.cols; ++c) {
    accs_.emplace_back(arch.fifo_capacity, q_.acc);
    acts_.emplace_back(q_, tables_);
  }
}

void Accelerator::fill_counters(CycleReport& r) const {
  r.array_saturation = array_.saturation_events();
  r.accumulator_saturation = 0;
  r.activation_saturation = 0;
  r.softmax_degenerate = 0;
  r.fifo_peak = 0;
  for (const auto& a : accs_) {
    r.accumulator_saturation += a.saturation_events();
    r.fifo_peak = std::max(r.fifo_peak, a.peak_occupancy());
  }
  for (const auto& a : acts_) {
    r.activation_saturation += a.saturation_events();
    r.softmax_degenerate += a.softmax_degenerate();
  }
}

namespace {

struct TrafficSnapshot {
  std::vector<uint64_t> reads, writes;
  explicit TrafficSnapshot(const BufferModel& b) {
    for (size_t i = 0; i < b.num_regions(); ++i) {
      reads.push_back(b.region(static_cast<int>(i)).reads);
      writes.push_back(b.region(static_cast<int>(i)).writes);
    }
  }
};

}  // namespace

PhaseReport Accelerator::run(const Schedule& s, BufferModel& buffers) {
  PhaseReport rep;
  rep.name = s.name;
  rep.kind = s.kind;
  rep.passes = s.passes.size();
  for (const Pass& p : s.passes) {
    rep.macs += static_cast<uint64_t>(p.rows_used) * static_cast<uint64_t>(p.cols_used) *
                static_cast<uint64_t>(p.positions);
  }
  const TrafficSnapshot before(buffers);
  full_output_cycles_ = 0;

  const int n = arch_.rows, m = arch_.cols;
  const auto un = static_cast<size_t>(n), um = static_cast<size_t>(m);
  std::vector<int32_t> row_data(un), col_w(um);
  // Per-row delay line of capture targets, indexed by injection cycle mod m.
  std::vector<int> cap_region(un * um, -1);
  std::vector<int64_t> cap_addr(un * um, 0);
  // Last-output cycle of each pass, for the span check.
  std::vector<int64_t> last_out(s.passes.size(), -1);

  // Unit being stepped, named only when a fault is reported.
  enum class Unit { Array, Buffer, Feedback, Accumulator, Activation } unit = Unit::Array;
  size_t unit_col = 0;
  auto unit_name = [&] {
    switch (unit) {
      case Unit::Array: return std::string("array");
      case Unit::Buffer: return std::string("buffer");
      case Unit::Feedback: return std::string("feedback");
      case Unit::Accumulator: return "accumulator[" + std::to_string(unit_col) + "]";
      case Unit::Activation: return "activation[" + std::to_string(unit_col) + "]";
    }
    return std::string("?");
  };
  auto fetch = [&](const PortCtl& port) -> int32_t {
    switch (port.src) {
      case Operand::Zero: return 0;
      case Operand::Const: return port.value;
      case Operand::Memory: unit = Unit::Buffer; return buffers.read(port.region, port.addr);
    }
    return 0;
  };

  ScheduleCursor cursor(s, arch_, q_);
  int64_t local = 0;
  while (!cursor.done()) {
    const ControlWord& cw = cursor.next();
    const bool trace = tracer_.enabled() && cycle_ < trace_limit_;
    try {
      for (size_t r = 0; r < un; ++r) {
        row_data[r] = fetch(cw.rows[r].port);
        const size_t slot = r * um + static_cast<size_t>(local % m);
        cap_region[slot] = cw.rows[r].capture_region;
        cap_addr[slot] = cw.rows[r].port.addr;
      }
      for (size_t c = 0; c < um; ++c) col_w[c] = fetch(cw.weights[c]);

      unit = Unit::Array;
      array_.step(row_data, col_w, {cw.load_weight, true, cw.mac});
      if (trace) {
        tracer_.line(cycle_, "array", "data_in", row_data, 8);
        tracer_.line(cycle_, "array", "weight_in", col_w, 8);
        tracer_.line(cycle_, "array", "psum_out", array_.bottom_psums(), cw.mac.acc.total_bits);
      }

      // Values leaving the right edge were injected m - 1 cycles ago.
      if (local >= m - 1) {
        const auto slot = static_cast<size_t>((local + 1) % m);
        for (size_t r = 0; r < un; ++r) {
          const int region = cap_region[r * um + slot];
          if (region < 0) continue;
          unit = Unit::Feedback;
          buffers.write(region, cap_addr[r * um + slot], array_.pe(static_cast<int>(r), m - 1).data_reg);
        }
      }

      const auto psums = array_.bottom_psums();
      size_t active = 0;
      for (size_t c = 0; c < um; ++c) {
        const ColumnCtl& col = cw.columns[c];
        std::optional<int32_t> emitted;
        if (col.active) {
          ++active;
          const auto k = static_cast<size_t>(col.pass - s.passes.data());
          last_out[k] = static_cast<int64_t>(local);
          std::optional<int32_t> preload;
          if (col.preload.src != Operand::Zero) preload = fetch(col.preload);
          unit = Unit::Accumulator;
          unit_col = c;
          emitted = accs_[c].step(psums[c], col.op, preload);
        }
        accel::ActivationUnit& act = acts_[c];
        std::vector<accel::ActivationOutput> outs;
        unit = Unit::Activation;
        unit_col = c;
        if (emitted) {
          const Pass& p = *col.pass;
          if (!(act.settings() == p.act)) act.configure(p.act);
          if (!act.busy()) vector_sink_[c] = p.sink;
          outs = act.step(*emitted, q_.acc);
          if (trace) tracer_.line(cycle_, "accumulator[" + std::to_string(c) + "]", "out", std::span(&*emitted, 1),
                                  q_.acc.total_bits);
          if (!p.act.vector_mode()) {
            const int64_t addr = p.sink.pos.at(col.position) + p.sink.col_off[c];
            for (const auto& o : outs) {
              unit = Unit::Buffer;
              buffers.write(p.sink.region, addr, o.value);
              if (p.sink.wide_region >= 0) buffers.write(p.sink.wide_region, addr, static_cast<int32_t>(o.wide));
            }
            outs.clear();
          }
        } else if (act.busy()) {
          outs = act.step(std::nullopt, q_.acc);
        }
        if (!outs.empty()) {
          const OutputSink& sink = vector_sink_[c];
          for (const auto& o : outs) {
            unit = Unit::Buffer;
            buffers.write(sink.region, sink.col_off[c] + o.index, o.value);
            if (trace) {
              tracer_.line(cycle_, "activation[" + std::to_string(c) + "]", "out", std::span(&o.value, 1), 8);
            }
          }
        }
      }
      if (active == um) ++full_output_cycles_;
    } catch (const UnitFault& f) {
      throw SimulationError(cycle_, unit_name(), f.what());
    }

    ++cycle_;
    ++local;
  }

  for (size_t k = 0; k < s.passes.size(); ++k) {
    const Pass& p = s.passes[k];
    // The first data vector enters at the latch cycle; the last output
    // leaves the last used column. Checked when that output is kept.
    const int64_t last_a = p.first + p.positions - 1;
    if (p.accum.selects(last_a, p.cols_used - 1)) {
      const int64_t span = last_out[k] - s.latch[k] + 1;
      if (span != pass_span(p.positions, n, p.cols_used)) {
        throw SimulationError(cycle_, "array",
                              s.name + " pass " + std::to_string(k) + " took " + std::to_string(span) +
                                  " cycles, expected " + std::to_string(pass_span(p.positions, n, p.cols_used)));
      }
    }
  }
  for (int c = 0; c < m; ++c) {
    if (acts_[static_cast<size_t>(c)].busy() || accs_[static_cast<size_t>(c)].occupancy() != 0) {
      throw SimulationError(cycle_, "column " + std::to_string(c), s.name + " ended with work in flight");
    }
  }

  rep.cycles = s.length;
  for (size_t i = 0; i < buffers.num_regions(); ++i) {
    const Region& rg = buffers.region(static_cast<int>(i));
    RegionTraffic t{rg.name, rg.buffer, rg.reads - before.reads[i], rg.writes - before.writes[i]};
    if (t.reads || t.writes) rep.traffic.push_back(t);
  }
  return rep;
}

PhaseReport execute(const Schedule& s, Accelerator& acc, BufferModel& buffers) { return acc.run(s, buffers); }

SimInference simulate(const FixedTensor& image, const golden::PreparedWeights& weights, const NetworkConfig& cfg,
                      const QuantConfig& q, const ActivationTables& tables, const ArchConfig& arch,
                      accel::Tracer tracer, uint64_t trace_limit) {
  cfg.validate();
  q.validate();
  if (arch.rows != q.reduction_tile) {
    throw InvalidArgument("simulate: array rows (" + std::to_string(arch.rows) + ") must equal reduction_tile (" +
                          std::to_string(q.reduction_tile) + ")");
  }
  if (image.format != q.data) throw InvalidArgument("simulate: image must be in the data format");
  BufferModel buffers;
  const MemoryMap mem = MemoryMap::build(cfg, q, arch, buffers);
  load_weights(buffers, mem, weights);
  load_image(buffers, mem, image);

  const auto program = map_network(cfg, q, mem, arch);
  validate(program, buffers, arch, {mem.image, mem.conv1_w, mem.primary_w, mem.classcaps_w});

  Accelerator acc(arch, q, tables, tracer, trace_limit);
  SimInference out;
  for (const auto& s : program) out.report.phases.push_back(acc.run(s, buffers));
  out.report.total_cycles = out.report.sum_of_phases();
  acc.fill_counters(out.report);

  auto take = [&](int id, Shape shape) {
    const Region& r = buffers.region(id);
    if (!buffers.fully_written(id)) throw SimulationError(acc.cycle(), r.name, "output region not fully written");
    FixedTensor t(std::move(shape), r.format);
    t.values = r.values;
    return t;
  };
  auto z = [](int v) { return static_cast<size_t>(v); };
  out.conv1 = take(mem.conv1_out, {z(cfg.conv1_out_h()), z(cfg.conv1_out_w()), z(cfg.conv1.channels)});
  out.primary_pre =
      take(mem.primary_pre, {z(cfg.primary_out_h()), z(cfg.primary_out_w()), z(cfg.primary_out_channels())});
  out.primary_u = take(mem.primary_u, {z(cfg.num_primary_capsules()), z(cfg.primarycaps.capsule_dim)});
  out.predictions = take(mem.predictions, {z(cfg.num_primary_capsules()), z(cfg.classcaps.num_classes),
                                           z(cfg.classcaps.capsule_dim)});
  out.routed_v = take(mem.routed_v, {z(cfg.classcaps.num_classes), z(cfg.classcaps.capsule_dim)});
  auto scores = take(mem.scores, {z(cfg.classcaps.num_classes)});
  out.class_scores_raw = scores.values;
  for (int32_t v : scores.values) out.class_scores.push_back(scores.format.value_of(v));
  out.argmax = argmax(std::span<const int32_t>(out.class_scores_raw));
  return out;
}

}  // namespace capsacc::mapper
