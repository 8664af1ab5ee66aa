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

#include "capsacc/mapper.hpp"

namespace capsacc::mapper {

namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

int32_t one_raw(const fx::QFormat& fmt) { return static_cast<int32_t>(fx::quantize_raw(1.0, fmt)); }

struct ConvShape {
  int in_region, w_region, out_region;
  int64_t h, w, ci, k, kernel, stride, ho, wo;
  bool relu;
};

// Rows carry reduction terms q = (i * C + c) * R + r (kernel row
// innermost) plus the bias term; columns carry output channels; the stream
// walks output positions column by column (g outer, f inner).
void conv_passes(Schedule& s, const ConvShape& cs, const QuantConfig& q, const ArchConfig& arch,
                 PrimaryLoopOrder order) {
  const int64_t n = arch.rows, m = arch.cols;
  const int64_t terms = cs.kernel * cs.kernel * cs.ci + 1;
  const int64_t row_tiles = ceil_div(terms, n);
  const int64_t col_tiles = ceil_div(cs.k, m);
  const int64_t total = cs.ho * cs.wo;
  const auto cap = static_cast<int64_t>(arch.fifo_capacity);

  // Positions per chunk: partial sums of every interleaved output tile must
  // fit the column FIFO.
  int64_t chunk = total;
  if (row_tiles > 1) {
    const int64_t interleaved = order == PrimaryLoopOrder::OutputChannelOuter ? 1 : col_tiles;
    chunk = std::min(total, cap / interleaved);
    if (chunk < 1) {
      throw ScheduleError(s.name + ": FIFO capacity " + std::to_string(cap) + " cannot hold one partial sum per " +
                          std::to_string(interleaved) + " output tiles");
    }
  }
  const int64_t chunks = ceil_div(total, chunk);

  const Affine2 data_pos{0, cs.ho, cs.stride * cs.w * cs.ci, cs.stride * cs.ci};
  const Affine2 sink_pos{0, cs.ho, cs.wo * cs.k, cs.k};

  auto make = [&](int64_t ct, int64_t rt, int64_t ch) {
    Pass p;
    p.rows_used = static_cast<int>(std::min(n, terms - rt * n));
    p.cols_used = static_cast<int>(std::min(m, cs.k - ct * m));
    p.first = ch * chunk;
    p.positions = std::min(chunk, total - p.first);
    p.data_format = q.data;
    p.weight_format = q.weight;

    p.data.kind = DataKind::Memory;
    p.data.region = cs.in_region;
    p.data.pos = data_pos;
    for (int r = 0; r < p.rows_used; ++r) {
      const int64_t term = rt * n + r;
      if (term == terms - 1) {
        p.data.row_kind.push_back(RowKind::Const);
        p.data.row_value.push_back(one_raw(q.data));
        p.data.row_off.push_back(0);
      } else {
        const int64_t kr = term % cs.kernel;
        const int64_t kc = (term / cs.kernel) % cs.kernel;
        const int64_t i = term / (cs.kernel * cs.kernel);
        p.data.row_kind.push_back(RowKind::Memory);
        p.data.row_value.push_back(0);
        p.data.row_off.push_back((kr * cs.w + kc) * cs.ci + i);
      }
      p.weight.row_off.push_back(term);
    }
    p.weight.kind = WeightKind::Memory;
    p.weight.region = cs.w_region;
    for (int c = 0; c < p.cols_used; ++c) {
      p.weight.col_off.push_back((ct * m + c) * terms);
      p.sink.col_off.push_back(ct * m + c);
    }
    p.accum.tile = static_cast<int>(rt);
    p.accum.tiles = static_cast<int>(row_tiles);
    p.act = {cs.relu ? accel::ActivationMode::ReLU : accel::ActivationMode::Bypass, q.data, 1, 0};
    p.sink.region = cs.out_region;
    p.sink.pos = sink_pos;
    p.tag = {0, static_cast<int>(ct), static_cast<int>(rt), static_cast<int>(ch)};
    s.passes.push_back(std::move(p));
  };

  if (order == PrimaryLoopOrder::OutputChannelOuter) {
    for (int64_t ct = 0; ct < col_tiles; ++ct)
      for (int64_t ch = 0; ch < chunks; ++ch)
        for (int64_t rt = 0; rt < row_tiles; ++rt) make(ct, rt, ch);
  } else {
    for (int64_t ch = 0; ch < chunks; ++ch)
      for (int64_t rt = 0; rt < row_tiles; ++rt)
        for (int64_t ct = 0; ct < col_tiles; ++ct) make(ct, rt, ch);
  }
}

Schedule named(std::string name, PhaseKind kind) {
  Schedule s;
  s.name = std::move(name);
  s.kind = kind;
  return s;
}

}  // namespace

Schedule map_conv1(const NetworkConfig& cfg, const QuantConfig& q, const MemoryMap& mem, const ArchConfig& arch) {
  Schedule s = named("conv1", PhaseKind::Layer);
  if (cfg.conv1.channels <= 0) return s;
  ConvShape cs{mem.image,
               mem.conv1_w,
               mem.conv1_out,
               cfg.input_height,
               cfg.input_width,
               1,
               cfg.conv1.channels,
               cfg.conv1.kernel,
               cfg.conv1.stride,
               cfg.conv1_out_h(),
               cfg.conv1_out_w(),
               true};
  conv_passes(s, cs, q, arch, PrimaryLoopOrder::OutputChannelOuter);
  s.finalize(arch, q);
  return s;
}

Schedule map_primarycaps(const NetworkConfig& cfg, const QuantConfig& q, const MemoryMap& mem,
                         const ArchConfig& arch) {
  Schedule s = named("primarycaps", PhaseKind::Layer);
  if (cfg.primary_out_channels() <= 0) return s;
  ConvShape cs{mem.conv1_out,
               mem.primary_w,
               mem.primary_pre,
               cfg.conv1_out_h(),
               cfg.conv1_out_w(),
               cfg.conv1.channels,
               cfg.primary_out_channels(),
               cfg.primarycaps.kernel,
               cfg.primarycaps.stride,
               cfg.primary_out_h(),
               cfg.primary_out_w(),
               cfg.primary_relu};
  conv_passes(s, cs, q, arch, arch.primary_order);

  // Squash: capsule slot r streams its components through identity weights,
  // so column r receives capsule r's vector one component per cycle.
  const int64_t caps = cfg.num_primary_capsules();
  const int64_t e = cfg.primarycaps.capsule_dim;
  const int64_t slots = std::min(arch.rows, arch.cols);
  for (int64_t i0 = 0; i0 < caps; i0 += slots) {
    Pass p;
    p.rows_used = p.cols_used = static_cast<int>(std::min(slots, caps - i0));
    p.positions = e;
    p.data_format = q.data;
    p.weight_format = q.weight;
    p.data.region = mem.primary_pre;
    p.data.pos = Affine2::linear(0, 1);
    for (int r = 0; r < p.rows_used; ++r) {
      p.data.row_kind.push_back(RowKind::Memory);
      p.data.row_value.push_back(0);
      p.data.row_off.push_back((i0 + r) * e);
      p.sink.col_off.push_back((i0 + r) * e);
    }
    p.weight.kind = WeightKind::Identity;
    p.weight.value = one_raw(q.weight);
    p.act = {accel::ActivationMode::Squash, q.data, static_cast<int>(e), q.norm_shift_squash};
    p.sink.region = mem.primary_u;
    p.barrier = i0 == 0;
    p.tag = {1, static_cast<int>(i0 / slots), 0, 0};
    s.passes.push_back(std::move(p));
  }
  s.finalize(arch, q);
  return s;
}

Schedule map_classcaps(const NetworkConfig& cfg, const QuantConfig& q, const MemoryMap& mem,
                       const ArchConfig& arch) {
  Schedule s = named("classcaps", PhaseKind::Layer);
  const int64_t n = arch.rows, m = arch.cols;
  const int64_t caps = cfg.num_primary_capsules();
  const int64_t e = cfg.primarycaps.capsule_dim;
  const int64_t j = cfg.classcaps.num_classes, d = cfg.classcaps.capsule_dim;
  const int64_t outs = j * d;  // flattened (j, d) columns
  const int64_t row_tiles = ceil_div(e, n);
  const int64_t col_tiles = ceil_div(outs, m);

  // Fully connected: every latched tile serves exactly one data vector.
  for (int64_t ct = 0; ct < col_tiles; ++ct) {
    for (int64_t i = 0; i < caps; ++i) {
      for (int64_t rt = 0; rt < row_tiles; ++rt) {
        Pass p;
        p.rows_used = static_cast<int>(std::min(n, e - rt * n));
        p.cols_used = static_cast<int>(std::min(m, outs - ct * m));
        p.positions = 1;
        p.data_format = q.data;
        p.weight_format = q.weight;
        p.data.region = mem.primary_u;
        p.data.pos = Affine2::linear(i * e, 0);
        for (int r = 0; r < p.rows_used; ++r) {
          const int64_t ee = rt * n + r;
          p.data.row_kind.push_back(RowKind::Memory);
          p.data.row_value.push_back(0);
          p.data.row_off.push_back(ee);
          p.weight.row_off.push_back(i * j * e * d + ee * d);
        }
        p.weight.region = mem.classcaps_w;
        for (int c = 0; c < p.cols_used; ++c) {
          const int64_t x = ct * m + c;
          p.weight.col_off.push_back((x / d) * e * d + x % d);
          p.sink.col_off.push_back(x);
        }
        p.accum.tile = static_cast<int>(rt);
        p.accum.tiles = static_cast<int>(row_tiles);
        p.act = {accel::ActivationMode::Bypass, q.data, 1, 0};
        p.sink.region = mem.predictions;
        p.sink.pos = Affine2::linear(i * j * d, 0);
        p.tag = {0, static_cast<int>(ct), static_cast<int>(rt), static_cast<int>(i)};
        s.passes.push_back(std::move(p));
      }
    }
  }
  s.finalize(arch, q);
  return s;
}

const char* to_string(RoutingPhase phase) {
  switch (phase) {
    case RoutingPhase::InitialSoftmax: return "initial_softmax";
    case RoutingPhase::FirstSumSquash: return "first_sum_squash";
    case RoutingPhase::UpdateSoftmax: return "update_softmax";
    case RoutingPhase::SumSquash: return "sum_squash";
  }
  return "?";
}

DataflowScenario DataflowScenario::of(RoutingPhase kind, bool skip_first_softmax) {
  using accel::ActivationMode;
  switch (kind) {
    case RoutingPhase::InitialSoftmax:
      return {kind, BufferKind::Routing, BufferKind::Routing, ActivationMode::Softmax};
    case RoutingPhase::FirstSumSquash:
      // With the first softmax skipped, every coupling is the constant 1/J
      // and is driven on the weight port directly.
      return {kind, BufferKind::Data, skip_first_softmax ? BufferKind::Weight : BufferKind::Routing,
              ActivationMode::Squash};
    case RoutingPhase::UpdateSoftmax:
      return {kind, BufferKind::Feedback, BufferKind::Routing, ActivationMode::Softmax};
    case RoutingPhase::SumSquash:
      return {kind, BufferKind::Feedback, BufferKind::Routing, ActivationMode::Squash};
  }
  throw InvalidArgument("DataflowScenario: unknown phase");
}

namespace {

struct RoutingShape {
  int64_t caps, j, d;
};

// s_j = sum_i c_ij * u_hat_{j|i}: rows carry input capsules, the stream
// carries (j, d) and column j keeps only its own class's positions, which
// arrive as one consecutive run of d values into the squash unit.
void sum_squash_passes(Schedule& s, const RoutingShape& rs, const QuantConfig& q, const MemoryMap& mem,
                       const ArchConfig& arch, bool first, bool constant_coupling) {
  const int64_t n = arch.rows, m = arch.cols;
  if (rs.d > static_cast<int64_t>(arch.fifo_capacity)) {
    throw ScheduleError(s.name + ": a " + std::to_string(rs.d) + "-D capsule does not fit the column FIFO");
  }
  const int64_t row_tiles = ceil_div(rs.caps, n);
  const int64_t col_tiles = ceil_div(rs.j, m);
  const int data_region = first ? mem.predictions : mem.predictions_fb;
  if (data_region < 0) {
    throw ScheduleError(s.name + ": predictions requested from the feedback store but they are not resident");
  }
  for (int64_t jt = 0; jt < col_tiles; ++jt) {
    const int64_t js = jt * m;
    const int64_t jn = std::min(m, rs.j - js);
    for (int64_t it = 0; it < row_tiles; ++it) {
      Pass p;
      p.rows_used = static_cast<int>(std::min(n, rs.caps - it * n));
      p.cols_used = static_cast<int>(jn);
      p.positions = jn * rs.d;
      p.data_format = q.data;
      p.weight_format = q.coupling;
      p.data.region = data_region;
      p.data.pos = Affine2{js * rs.d, rs.d, 1, rs.d};
      if (first) p.data.capture_region = mem.predictions_fb;
      for (int r = 0; r < p.rows_used; ++r) {
        const int64_t i = it * n + r;
        p.data.row_kind.push_back(RowKind::Memory);
        p.data.row_value.push_back(0);
        p.data.row_off.push_back(i * rs.j * rs.d);
        p.weight.row_off.push_back(i * rs.j);
      }
      if (constant_coupling) {
        p.weight.kind = WeightKind::Const;
        p.weight.value = golden::initial_coupling(static_cast<int>(rs.j), q);
        p.weight.row_off.clear();
      } else {
        p.weight.kind = WeightKind::Memory;
        p.weight.region = mem.coupling;
        for (int c = 0; c < p.cols_used; ++c) p.weight.col_off.push_back(js + c);
      }
      for (int c = 0; c < p.cols_used; ++c) p.sink.col_off.push_back((js + c) * rs.d);
      p.accum.tile = static_cast<int>(it);
      p.accum.tiles = static_cast<int>(row_tiles);
      p.accum.select_div = rs.d;
      p.accum.select_mod = std::numeric_limits<int64_t>::max();
      p.act = {accel::ActivationMode::Squash, q.data, static_cast<int>(rs.d), q.norm_shift_squash};
      p.sink.region = mem.routed_v;
      p.tag = {0, static_cast<int>(jt), static_cast<int>(it), 0};
      s.passes.push_back(std::move(p));
    }
  }
}

// c_i = softmax_j(b~_ij): one-hot data walks j while the weight tile holds
// b~ of 16 input capsules, so column c receives capsule c's logits in order.
void softmax_passes(Schedule& s, const RoutingShape& rs, const QuantConfig& q, const MemoryMap& mem,
                    const ArchConfig& arch, bool zero_logits) {
  const int64_t n = arch.rows, m = arch.cols;
  if (rs.j > n) {
    throw ScheduleError(s.name + ": softmax over " + std::to_string(rs.j) + " classes exceeds the " +
                        std::to_string(n) + " array rows");
  }
  for (int64_t i0 = 0; i0 < rs.caps; i0 += m) {
    Pass p;
    p.rows_used = static_cast<int>(rs.j);
    p.cols_used = static_cast<int>(std::min(m, rs.caps - i0));
    p.positions = rs.j;
    p.data_format = q.data;
    p.weight_format = q.luts.exp_in;
    p.data.kind = DataKind::OneHot;
    p.data.one = one_raw(q.data);
    if (zero_logits) {
      p.weight.kind = WeightKind::Const;
      p.weight.value = 0;
    } else {
      p.weight.kind = WeightKind::Memory;
      p.weight.region = mem.logits_narrow;
      for (int r = 0; r < p.rows_used; ++r) p.weight.row_off.push_back(r);
      for (int c = 0; c < p.cols_used; ++c) p.weight.col_off.push_back((i0 + c) * rs.j);
    }
    for (int c = 0; c < p.cols_used; ++c) p.sink.col_off.push_back((i0 + c) * rs.j);
    p.act = {accel::ActivationMode::Softmax, q.luts.exp_in, static_cast<int>(rs.j), 0};
    p.sink.region = mem.coupling;
    p.barrier = i0 == 0;
    p.tag = {1, static_cast<int>(i0 / m), 0, 0};
    s.passes.push_back(std::move(p));
  }
}

// b_ij += u_hat_{j|i} . v_j: rows carry d, the stream carries (i, j) from
// the feedback store, weights hold v; column j keeps positions of class j
// and adds the previous logit preloaded from the Routing Buffer.
void update_passes(Schedule& s, const RoutingShape& rs, const QuantConfig& q, const MemoryMap& mem,
                   const ArchConfig& arch, bool first_update) {
  const int64_t n = arch.rows, m = arch.cols;
  if (mem.predictions_fb < 0) {
    throw ScheduleError(s.name + ": predictions requested from the feedback store but they are not resident");
  }
  const int64_t row_tiles = ceil_div(rs.d, n);
  const int64_t col_tiles = ceil_div(rs.j, m);
  const int64_t total = rs.caps * rs.j;
  int64_t chunk = total;
  if (row_tiles > 1) chunk = std::min(total, static_cast<int64_t>(arch.fifo_capacity) * rs.j);
  const int64_t chunks = ceil_div(total, chunk);
  for (int64_t jt = 0; jt < col_tiles; ++jt) {
    const int64_t js = jt * m;
    for (int64_t ch = 0; ch < chunks; ++ch) {
      for (int64_t dt = 0; dt < row_tiles; ++dt) {
        Pass p;
        p.rows_used = static_cast<int>(std::min(n, rs.d - dt * n));
        p.cols_used = static_cast<int>(std::min(m, rs.j - js));
        p.first = ch * chunk;
        p.positions = std::min(chunk, total - p.first);
        p.data_format = q.data;
        p.weight_format = q.data;
        p.data.region = mem.predictions_fb;
        p.data.pos = Affine2::linear(0, rs.d);
        for (int r = 0; r < p.rows_used; ++r) {
          const int64_t dd = dt * n + r;
          p.data.row_kind.push_back(RowKind::Memory);
          p.data.row_value.push_back(0);
          p.data.row_off.push_back(dd);
          p.weight.row_off.push_back(dd);
        }
        p.weight.region = mem.routed_v;
        for (int c = 0; c < p.cols_used; ++c) {
          p.weight.col_off.push_back((js + c) * rs.d);
          p.sink.col_off.push_back(0);
        }
        p.accum.tile = static_cast<int>(dt);
        p.accum.tiles = static_cast<int>(row_tiles);
        p.accum.preload = first_update ? PreloadKind::Zero : PreloadKind::Memory;
        p.accum.preload_region = first_update ? -1 : mem.logits;
        p.accum.preload_pos = Affine2::linear(0, 1);
        p.accum.select_div = 1;
        p.accum.select_mod = rs.j;
        p.accum.select_offset = js;
        p.act = {accel::ActivationMode::Bypass, q.luts.exp_in, 1, 0};
        p.sink.region = mem.logits_narrow;
        p.sink.pos = Affine2::linear(0, 1);
        p.sink.wide_region = mem.logits;
        p.tag = {0, static_cast<int>(jt), static_cast<int>(dt), static_cast<int>(ch)};
        s.passes.push_back(std::move(p));
      }
    }
  }
}

}  // namespace

RoutingSchedule schedule_routing(const NetworkConfig& cfg, const QuantConfig& q, const MemoryMap& mem,
                                 const ArchConfig& arch, int iterations) {
  if (iterations < 1) throw InvalidArgument("schedule_routing: iterations must be >= 1");
  const RoutingShape rs{cfg.num_primary_capsules(), cfg.classcaps.num_classes, cfg.classcaps.capsule_dim};
  const bool skip = arch.skip_first_softmax;
  RoutingSchedule out;
  auto add = [&](RoutingPhase kind, Schedule s) {
    s.finalize(arch, q);
    out.phases.push_back(kind);
    out.schedules.push_back(std::move(s));
  };

  if (!skip) {
    Schedule s = named("routing.softmax0", PhaseKind::Routing);
    softmax_passes(s, rs, q, mem, arch, true);
    add(RoutingPhase::InitialSoftmax, std::move(s));
  }
  {
    Schedule s = named("routing.it1.sum_squash", PhaseKind::Routing);
    sum_squash_passes(s, rs, q, mem, arch, true, skip);
    add(RoutingPhase::FirstSumSquash, std::move(s));
  }
  for (int it = 2; it <= iterations; ++it) {
    Schedule u = named("routing.it" + std::to_string(it) + ".update_softmax", PhaseKind::Routing);
    update_passes(u, rs, q, mem, arch, it == 2);
    softmax_passes(u, rs, q, mem, arch, false);
    add(RoutingPhase::UpdateSoftmax, std::move(u));
    Schedule s = named("routing.it" + std::to_string(it) + ".sum_squash", PhaseKind::Routing);
    sum_squash_passes(s, rs, q, mem, arch, false, false);
    add(RoutingPhase::SumSquash, std::move(s));
  }
  return out;
}

Schedule map_class_scores(const NetworkConfig& cfg, const QuantConfig& q, const MemoryMap& mem,
                          const ArchConfig& arch) {
  Schedule s = named("class_scores", PhaseKind::Layer);
  const int64_t n = arch.rows, m = arch.cols;
  const int64_t j = cfg.classcaps.num_classes, d = cfg.classcaps.capsule_dim;
  if (d > n) {
    throw ScheduleError("class_scores: " + std::to_string(d) + "-D capsules exceed the " + std::to_string(n) +
                        " array rows");
  }
  for (int64_t js = 0; js < j; js += m) {
    Pass p;
    p.rows_used = static_cast<int>(d);
    p.cols_used = static_cast<int>(std::min(m, j - js));
    p.positions = d;
    p.data_format = q.data;
    p.weight_format = q.data;
    p.data.kind = DataKind::OneHot;
    p.data.one = one_raw(q.data);
    p.weight.region = mem.routed_v;
    for (int r = 0; r < p.rows_used; ++r) p.weight.row_off.push_back(r);
    for (int c = 0; c < p.cols_used; ++c) {
      p.weight.col_off.push_back((js + c) * d);
      p.sink.col_off.push_back(js + c);
    }
    p.act = {accel::ActivationMode::Norm, q.data, static_cast<int>(d), q.norm_shift_score};
    p.sink.region = mem.scores;
    p.tag = {1, static_cast<int>(js / m), 0, 0};
    s.passes.push_back(std::move(p));
  }
  s.finalize(arch, q);
  return s;
}

std::vector<Schedule> map_network(const NetworkConfig& cfg, const QuantConfig& q, const MemoryMap& mem,
                                  const ArchConfig& arch) {
  std::vector<Schedule> program;
  program.push_back(map_conv1(cfg, q, mem, arch));
  program.push_back(map_primarycaps(cfg, q, mem, arch));
  program.push_back(map_classcaps(cfg, q, mem, arch));
  auto routing = schedule_routing(cfg, q, mem, arch, cfg.routing_iterations);
  for (auto& s : routing.schedules) program.push_back(std::move(s));
  program.push_back(map_class_scores(cfg, q, mem, arch));
  return program;
}

}  // namespace capsacc::mapper
