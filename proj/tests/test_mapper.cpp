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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "capsacc/mapper.hpp"

using namespace capsacc;
using namespace capsacc::mapper;

namespace {

WeightSet grid_weights(const NetworkConfig& cfg, const QuantConfig& q, double bound, uint64_t seed) {
  std::mt19937_64 gen(seed);
  WeightSet w = WeightSet::zeros(cfg);
  int64_t r = static_cast<int64_t>(bound / q.weight.lsb());
  for (RealTensor* t : {&w.conv1_kernels, &w.conv1_biases, &w.primary_kernels, &w.primary_biases, &w.classcaps_w}) {
    for (auto& v : t->values) v = q.weight.value_of(static_cast<int64_t>(gen() % (2 * r + 1)) - r);
  }
  return w;
}

FixedTensor random_image(const NetworkConfig& cfg, const QuantConfig& q, uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0, 1);
  RealTensor img({static_cast<size_t>(cfg.input_height), static_cast<size_t>(cfg.input_width), 1});
  for (auto& v : img.values) v = u(gen);
  return golden::quantize_image(img, q);
}

struct Fixture {
  NetworkConfig cfg = toy_network();
  QuantConfig q{};
  ArchConfig arch{};
  ActivationTables t = ActivationTables::build(q.luts);

  Fixture() = default;
  Fixture(int rows, int cols) {
    arch.rows = rows;
    arch.cols = cols;
    q.reduction_tile = rows;
  }

  std::pair<SimInference, golden::Inference> run(uint64_t seed, double bound = 0.25) {
    auto pw = golden::PreparedWeights::prepare(grid_weights(cfg, q, bound, seed), cfg, q);
    auto x = random_image(cfg, q, seed + 100);
    return {simulate(x, pw, cfg, q, t, arch), golden::infer(x, pw, cfg, q, t, arch.skip_first_softmax)};
  }
};

void check_bit_exact(const SimInference& s, const golden::Inference& g) {
  CHECK(s.conv1 == g.conv1);
  CHECK(s.primary_pre == g.primary_pre);
  CHECK(s.primary_u == g.primary_u);
  CHECK(s.predictions == g.predictions);
  CHECK(s.routed_v == g.routed_v);
  CHECK(s.class_scores_raw == g.class_scores_raw);
  CHECK(s.argmax == g.argmax);
}

}  // namespace

TEST_CASE("pass span and activation tails") {
  CHECK(pass_span(1, 16, 16) == 31);
  CHECK(pass_span(400, 16, 16) == 430);
  CHECK(activation_tail({accel::ActivationMode::Norm, fx::signed_q(8, 5), 16, 0}) == 1);
  CHECK(activation_tail({accel::ActivationMode::Squash, fx::signed_q(8, 5), 16, 0}) == 2);
  CHECK(activation_tail({accel::ActivationMode::Softmax, fx::signed_q(8, 5), 10, 0}) == 10);
  CHECK(activation_tail({accel::ActivationMode::ReLU, fx::signed_q(8, 5), 1, 0}) == 0);
}

TEST_CASE("conv1 tiling on the full network") {
  NetworkConfig cfg;
  QuantConfig q;
  ArchConfig arch;
  BufferModel b;
  auto mem = MemoryMap::build(cfg, q, arch, b);
  auto s = map_conv1(cfg, q, mem, arch);
  // 82 reduction terms (81 + bias) in 6 row tiles, 256 channels in 16 column tiles.
  CHECK(s.passes.size() == 6 * 16);
  CHECK(output_tiles_complete_in_order(s));
  CHECK(weight_hold_count(s) == s.passes.size());
  std::set<int64_t> weights_read;
  uint64_t reads = 0;
  for (const auto& p : s.passes) {
    CHECK(p.positions == 400);
    for (auto r : p.weight.row_off)
      for (auto c : p.weight.col_off) {
        weights_read.insert(r + c);
        ++reads;
      }
  }
  // Every weight is latched exactly once.
  CHECK(reads == count_parameters(cfg).conv1);
  CHECK(weights_read.size() == count_parameters(cfg).conv1);
  CHECK_NOTHROW(validate({s}, b, arch, {mem.image, mem.conv1_w}));
}

TEST_CASE("1x1 convolution length") {
  NetworkConfig cfg = toy_network();
  cfg.conv1 = {5, 1, 1};
  QuantConfig q;
  ArchConfig arch;
  BufferModel b;
  auto mem = MemoryMap::build(cfg, q, arch, b);
  auto s = map_conv1(cfg, q, mem, arch);
  REQUIRE(s.passes.size() == 1);
  const int64_t positions = cfg.input_height * cfg.input_width;
  CHECK(s.passes[0].rows_used == 2);
  CHECK(s.length == static_cast<uint64_t>(2 + pass_span(positions, arch.rows, 5)));
}

TEST_CASE("zero-channel layers map to empty schedules") {
  NetworkConfig cfg = toy_network();
  QuantConfig q;
  ArchConfig arch;
  BufferModel b;
  auto mem = MemoryMap::build(cfg, q, arch, b);
  NetworkConfig empty = cfg;
  empty.conv1.channels = 0;
  auto s = map_conv1(empty, q, mem, arch);
  CHECK(s.empty());
  CHECK(s.length == 0);
  empty = cfg;
  empty.primarycaps.channels = 0;
  CHECK(map_primarycaps(empty, q, mem, arch).empty());
}

TEST_CASE("primarycaps loop orders") {
  // 16 x 4: conv1 is a single row tile and PrimaryCaps spans two column
  // tiles, so the loop order decides how many partial sums wait per column.
  Fixture f(16, 4);
  BufferModel b;
  auto mem = MemoryMap::build(f.cfg, f.q, f.arch, b);
  auto outer = map_primarycaps(f.cfg, f.q, mem, f.arch);
  CHECK(output_tiles_complete_in_order(outer));
  ArchConfig inner_arch = f.arch;
  inner_arch.primary_order = PrimaryLoopOrder::InputChannelOuter;
  auto inner = map_primarycaps(f.cfg, f.q, mem, inner_arch);
  CHECK_FALSE(output_tiles_complete_in_order(inner));

  // Both orders compute the same result; the output-channel-outer order
  // keeps fewer partial sums in flight.
  auto [so, go] = f.run(5);
  check_bit_exact(so, go);
  f.arch = inner_arch;
  auto [si, gi] = f.run(5);
  check_bit_exact(si, gi);
  // 4 x 4 output positions per tile; the interleaved order holds both tiles.
  CHECK(so.report.fifo_peak == 16);
  CHECK(si.report.fifo_peak == 2 * 16);
}

TEST_CASE("primarycaps stride-2 addressing") {
  NetworkConfig cfg = toy_network();
  QuantConfig q;
  ArchConfig arch;
  BufferModel b;
  auto mem = MemoryMap::build(cfg, q, arch, b);
  auto s = map_primarycaps(cfg, q, mem, arch);
  const Pass& p = s.passes.front();
  const int64_t w1 = cfg.conv1_out_w(), ci = cfg.conv1.channels;
  std::set<int64_t> got, want;
  for (int64_t k = 0; k < p.positions; ++k) got.insert(p.data.pos.at(p.first + k));
  for (int y = 0; y < cfg.primary_out_h(); ++y)
    for (int x = 0; x < cfg.primary_out_w(); ++x) want.insert((2 * y * w1 + 2 * x) * ci);
  CHECK(got == want);
}

TEST_CASE("classcaps mapping on the full network") {
  NetworkConfig cfg;
  QuantConfig q;
  ArchConfig arch;
  BufferModel b;
  auto mem = MemoryMap::build(cfg, q, arch, b);
  auto s = map_classcaps(cfg, q, mem, arch);
  uint64_t weight_reads = 0;
  for (const auto& p : s.passes) {
    if (p.weight.kind == WeightKind::Memory) weight_reads += p.weight.row_off.size() * p.weight.col_off.size();
  }
  CHECK(weight_reads == 1474560);
  CHECK(weight_hold_count(s) == 0);
}

TEST_CASE("routing phase lists") {
  NetworkConfig cfg = toy_network();
  QuantConfig q;
  ArchConfig arch;
  BufferModel b;
  auto mem = MemoryMap::build(cfg, q, arch, b);
  using RP = RoutingPhase;
  CHECK(schedule_routing(cfg, q, mem, arch, 3).phases ==
        std::vector<RP>{RP::FirstSumSquash, RP::UpdateSoftmax, RP::SumSquash, RP::UpdateSoftmax, RP::SumSquash});
  CHECK(schedule_routing(cfg, q, mem, arch, 1).phases == std::vector<RP>{RP::FirstSumSquash});
  arch.skip_first_softmax = false;
  CHECK(schedule_routing(cfg, q, mem, arch, 1).phases == std::vector<RP>{RP::InitialSoftmax, RP::FirstSumSquash});
  CHECK_THROWS_AS(schedule_routing(cfg, q, mem, arch, 0), InvalidArgument);

  auto s1 = DataflowScenario::of(RP::FirstSumSquash, true);
  CHECK(s1.data_source == BufferKind::Data);
  CHECK(s1.activation == accel::ActivationMode::Squash);
  auto s3 = DataflowScenario::of(RP::SumSquash, true);
  CHECK(s3.data_source == BufferKind::Feedback);
  CHECK(DataflowScenario::of(RP::UpdateSoftmax, true).activation == accel::ActivationMode::Softmax);
}

TEST_CASE("toy network runs bit-exact on the simulator") {
  Fixture f;
  for (uint64_t seed : {1, 2}) {
    auto [s, g] = f.run(seed);
    check_bit_exact(s, g);
    CHECK(s.report.total_cycles == s.report.sum_of_phases());
    CHECK(s.report.total_cycles > 0);
    // Predictions leave the Data Buffer in exactly one phase.
    size_t phases = 0;
    for (uint64_t r : s.report.reads_per_phase("predictions")) phases += r ? 1 : 0;
    CHECK(phases == 1);
  }
}

TEST_CASE("simulator variants stay bit-exact") {
  SUBCASE("routing without the skip") {
    Fixture f;
    f.arch.skip_first_softmax = false;
    auto [s, g] = f.run(3);
    check_bit_exact(s, g);
  }
  SUBCASE("small array") {
    Fixture f(4, 4);
    auto [s, g] = f.run(4);
    check_bit_exact(s, g);
  }
  SUBCASE("one routing iteration with relu") {
    Fixture f;
    f.cfg.routing_iterations = 1;
    f.cfg.primary_relu = true;
    auto [s, g] = f.run(6);
    check_bit_exact(s, g);
  }
  SUBCASE("large weights saturate identically") {
    Fixture f;
    auto [s, g] = f.run(7, 1.9);
    check_bit_exact(s, g);
    CHECK(g.counters.saturation.events > 0);
  }
}

TEST_CASE("cycle counts are deterministic") {
  Fixture f;
  auto [a, ga] = f.run(9);
  auto [b, gb] = f.run(9);
  CHECK(a.report == b.report);
  CHECK(a.class_scores_raw == b.class_scores_raw);
}

TEST_CASE("validator rejects bad schedules") {
  Fixture f;
  BufferModel b;
  auto mem = MemoryMap::build(f.cfg, f.q, f.arch, b);
  auto program = map_network(f.cfg, f.q, mem, f.arch);
  const std::vector<int> initial = {mem.image, mem.conv1_w, mem.primary_w, mem.classcaps_w};
  CHECK_NOTHROW(validate(program, b, f.arch, initial));

  // Image never loaded.
  CHECK_THROWS_AS(validate(program, b, f.arch, {mem.conv1_w, mem.primary_w, mem.classcaps_w}), ScheduleError);

  // Address outside the region.
  auto bad = program;
  bad[0].passes[0].data.row_off[0] += 1 << 20;
  CHECK_THROWS_AS(validate(bad, b, f.arch, initial), ScheduleError);

  // Layers out of order: primarycaps before conv1 has written its input.
  bad = program;
  std::swap(bad[0], bad[1]);
  CHECK_THROWS_AS(validate(bad, b, f.arch, initial), ScheduleError);

  // Unfinalized schedule.
  bad = program;
  bad[0].latch.clear();
  CHECK_THROWS_AS(validate(bad, b, f.arch, initial), ScheduleError);

  // FIFO too small for a 4-D capsule reduction.
  ArchConfig tiny = f.arch;
  tiny.fifo_capacity = 1;
  BufferModel b2;
  auto mem2 = MemoryMap::build(f.cfg, f.q, tiny, b2);
  CHECK_THROWS(map_network(f.cfg, f.q, mem2, tiny));
}

TEST_CASE("buffer model") {
  BufferModel b;
  int id = b.add_region("x", BufferKind::Data, fx::signed_q(8, 5), 4);
  CHECK(b.find("x") == id);
  CHECK_FALSE(b.fully_written(id));
  b.write(id, 0, 5);
  CHECK(b.read(id, 0) == 5);
  CHECK(b.reads(BufferKind::Data) == 1);
  CHECK(b.writes(BufferKind::Data) == 1);
  CHECK(b.bytes(BufferKind::Data) == 4);
  CHECK_THROWS(b.read(id, 4));
  b.load(id, std::vector<int32_t>{1, 2, 3, 4});
  CHECK(b.fully_written(id));
  CHECK(b.dump(id) == std::vector<int32_t>{1, 2, 3, 4});
}
