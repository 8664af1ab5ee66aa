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

#include <cmath>
#include <random>
#include <sstream>

#include "capsacc/harness.hpp"

namespace capsacc::harness {

namespace {

CheckResult check(std::string name, std::string anchor, bool passed, std::string detail) {
  return {std::move(name), passed, std::move(detail), std::move(anchor)};
}

// Runs `body`; an exception turns into a failed check carrying its message.
template <typename F>
CheckResult guarded(const std::string& name, const std::string& anchor, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return check(name, anchor, false, std::string("error: ") + e.what());
  }
}

RealTensor random_tensor(Shape shape, double lo, double hi, std::mt19937_64& gen) {
  RealTensor t(std::move(shape));
  for (double& v : t.values) v = lo + (hi - lo) * static_cast<double>(gen() >> 11) * 0x1.0p-53;
  return t;
}

std::string sim_vs_golden(const Config& cfg, const WeightSet& w, const RealTensor& image) {
  const ActivationTables t = ActivationTables::build(cfg.quant.luts);
  auto pw = golden::PreparedWeights::prepare(w, cfg.net, cfg.quant);
  auto x = golden::quantize_image(image, cfg.quant);
  auto gold = golden::infer(x, pw, cfg.net, cfg.quant, t, cfg.arch.skip_first_softmax);
  auto sim = mapper::simulate(x, pw, cfg.net, cfg.quant, t, cfg.arch);
  return first_mismatch(sim, gold);
}

}  // namespace

std::string first_mismatch(const mapper::SimInference& sim, const golden::Inference& gold) {
  if (sim.conv1 != gold.conv1) return "conv1";
  if (sim.primary_pre != gold.primary_pre) return "primary_pre";
  if (sim.primary_u != gold.primary_u) return "primary_u";
  if (sim.predictions != gold.predictions) return "predictions";
  if (sim.routed_v != gold.routed_v) return "routed_v";
  if (sim.class_scores_raw != gold.class_scores_raw) return "class_scores";
  return {};
}

ThroughputResult dense_matmul_throughput(const mapper::ArchConfig& arch, const QuantConfig& q, int64_t positions,
                                         uint64_t seed) {
  using namespace mapper;
  if (positions < 1) throw InvalidArgument("dense_matmul_throughput: positions must be >= 1");
  const int n = arch.rows, m = arch.cols;
  BufferModel buffers;
  int x = buffers.add_region("x", BufferKind::Data, q.data, static_cast<size_t>(positions * n));
  int w = buffers.add_region("w", BufferKind::Weight, q.weight, static_cast<size_t>(n * m));
  int y = buffers.add_region("y", BufferKind::Data, q.data, static_cast<size_t>(positions * m));

  std::mt19937_64 gen(seed);
  auto draw = [&](const fx::QFormat& f, int64_t span) {
    return static_cast<int32_t>(std::clamp<int64_t>(static_cast<int64_t>(gen() % (2 * span + 1)) - span, f.raw_min(),
                                                    f.raw_max()));
  };
  std::vector<int32_t> xv(static_cast<size_t>(positions * n)), wv(static_cast<size_t>(n * m));
  for (auto& v : xv) v = draw(q.data, 32);
  for (auto& v : wv) v = draw(q.weight, 32);
  buffers.load(x, xv);
  buffers.load(w, wv);

  Pass p;
  p.rows_used = n;
  p.cols_used = m;
  p.positions = positions;
  p.data_format = q.data;
  p.weight_format = q.weight;
  p.data.region = x;
  p.data.pos = Affine2::linear(0, n);
  for (int r = 0; r < n; ++r) {
    p.data.row_kind.push_back(RowKind::Memory);
    p.data.row_value.push_back(0);
    p.data.row_off.push_back(r);
    p.weight.row_off.push_back(int64_t{r} * m);
  }
  p.weight.region = w;
  for (int c = 0; c < m; ++c) {
    p.weight.col_off.push_back(c);
    p.sink.col_off.push_back(c);
  }
  p.act = {accel::ActivationMode::Bypass, q.data, 1, 0};
  p.sink.region = y;
  p.sink.pos = Affine2::linear(0, m);
  Schedule s;
  s.name = "dense_matmul";
  s.passes.push_back(std::move(p));
  s.finalize(arch, q);

  const ActivationTables t = ActivationTables::build(q.luts);
  Accelerator acc(arch, q, t);
  PhaseReport rep = acc.run(s, buffers);

  ThroughputResult r;
  r.positions = positions;
  r.cols = m;
  r.outputs = buffers.region(y).writes;
  r.schedule_cycles = rep.cycles;
  r.full_output_cycles = acc.full_output_cycles();
  golden::Counters counters;
  const auto& out = buffers.region(y).values;
  r.results_match = true;
  std::vector<int32_t> col(static_cast<size_t>(n));
  for (int64_t pos = 0; pos < positions && r.results_match; ++pos) {
    for (int c = 0; c < m; ++c) {
      for (int k = 0; k < n; ++k) col[static_cast<size_t>(k)] = wv[static_cast<size_t>(k * m + c)];
      int64_t sum = golden::hw_accumulate(std::span(xv).subspan(static_cast<size_t>(pos * n), static_cast<size_t>(n)),
                                          col, q.data, q.weight, q, nullptr, counters);
      int64_t want = fx::saturate(fx::shift_round(sum, q.data.frac_bits - q.acc.frac_bits), q.data);
      if (out[static_cast<size_t>(pos * m + c)] != want) {
        r.results_match = false;
        break;
      }
    }
  }
  return r;
}

std::vector<CheckResult> verify(const VerifyOptions& opts) {
  std::vector<CheckResult> out;
  const Config& cfg = opts.config;

  out.push_back(guarded("config", "configuration is well formed", [&] {
    cfg.validate();
    return check("config", "configuration is well formed", true, "ok");
  }));
  if (!out.back().passed) return out;

  out.push_back(guarded("parameter_counts", "per-layer parameter counts of the MNIST network", [&] {
    auto p = count_parameters(NetworkConfig{});
    bool ok = p.conv1 == 20992 && p.primarycaps == 5308672 && p.classcaps == 1474560 && p.coupling_coefficients == 11520;
    std::ostringstream d;
    d << "conv1 " << p.conv1 << ", primarycaps " << p.primarycaps << ", classcaps " << p.classcaps << ", coupling "
      << p.coupling_coefficients;
    return check("parameter_counts", "per-layer parameter counts of the MNIST network", ok, d.str());
  }));

  out.push_back(guarded("memory_estimate", "8-bit weights fit the 8 MB on-chip memory", [&] {
    uint64_t bytes = estimate_memory(cfg.net, 8);
    return check("memory_estimate", "8-bit weights fit the 8 MB on-chip memory", bytes <= 8ull << 20,
                 std::to_string(bytes) + " bytes");
  }));

  out.push_back(guarded("latency_formulas", "activation latencies n+1 (norm), n+2 (squash), 2n (softmax)", [&] {
    const ActivationTables t = ActivationTables::build(cfg.quant.luts);
    std::ostringstream d;
    bool ok = true;
    for (int n : {2, 8, 10, 16}) {
      std::vector<fx::FixedValue> v;
      for (int i = 0; i < n; ++i) v.push_back(fx::FixedValue::from_raw((i * 7) % 19 - 9, cfg.quant.data));
      std::vector<fx::FixedValue> b;
      for (int i = 0; i < n; ++i) b.push_back(fx::FixedValue::from_raw((i * 5) % 23 - 11, cfg.quant.luts.exp_in));
      auto a = accel::activation_norm(v, cfg.quant.norm_shift_squash, cfg.quant, t).cycles;
      auto s = accel::activation_squash(v, cfg.quant, t).cycles;
      auto x = accel::activation_softmax(b, cfg.quant, t).cycles;
      auto un = static_cast<uint64_t>(n);
      ok = ok && a == un + 1 && s == un + 2 && x == 2 * un;
      d << "n=" << n << ": " << a << "/" << s << "/" << x << " ";
    }
    return check("latency_formulas", "activation latencies n+1 (norm), n+2 (squash), 2n (softmax)", ok, d.str());
  }));

  out.push_back(guarded("array_throughput", "one output per cycle per column in steady state", [&] {
    auto r = dense_matmul_throughput(cfg.arch, cfg.quant, 1100, opts.seed);
    bool ok = r.results_match && r.full_output_cycles >= 1000 &&
              r.outputs == static_cast<uint64_t>(r.positions) * static_cast<uint64_t>(r.cols);
    std::ostringstream d;
    d << r.full_output_cycles << " cycles with all " << r.cols << " columns emitting, " << r.outputs << " outputs in "
      << r.schedule_cycles << " cycles" << (r.results_match ? "" : ", results differ from the direct matmul");
    return check("array_throughput", "one output per cycle per column in steady state", ok, d.str());
  }));

  out.push_back(guarded("routing_skip_equivalence", "skipping the first softmax leaves routing unchanged", [&] {
    std::mt19937_64 gen(opts.seed);
    const int iters = cfg.net.routing_iterations;
    RealTensor u_hat = random_tensor({64, 10, 16}, -0.2, 0.2, gen);
    auto a = real::routing(u_hat, iters, true);
    auto b = real::routing(u_hat, iters, false);
    double diff = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) diff = std::max(diff, std::fabs(a.values[i] - b.values[i]));

    const ActivationTables t = ActivationTables::build(cfg.quant.luts);
    FixedTensor fu(u_hat.shape, cfg.quant.data);
    for (size_t i = 0; i < fu.values.size(); ++i) {
      fu.values[i] = static_cast<int32_t>(fx::quantize_raw(u_hat.values[i], cfg.quant.data));
    }
    golden::Counters c;
    bool fixed_equal = golden::routing(fu, iters, true, cfg.quant, t, c) == golden::routing(fu, iters, false, cfg.quant, t, c);

    Config toy = cfg;
    toy.net = toy_network();
    toy.net.routing_iterations = iters;
    WeightSet w = generate_weights(opts.seed, toy.net, WeightFormat::Real32, toy.quant, {0.25, 1.0, 1.0, 1.0})
                      .unpack(toy.net);
    auto img = to_tensor(synthetic_digits(opts.seed, 1, toy.net.input_height, toy.net.input_width).pixels[0],
                         toy.net.input_height, toy.net.input_width);
    const auto pw = golden::PreparedWeights::prepare(w, toy.net, toy.quant);
    const auto x = golden::quantize_image(img, toy.quant);
    toy.arch.skip_first_softmax = true;
    auto s1 = mapper::simulate(x, pw, toy.net, toy.quant, t, toy.arch);
    toy.arch.skip_first_softmax = false;
    auto s0 = mapper::simulate(x, pw, toy.net, toy.quant, t, toy.arch);
    bool sim_equal = s1.routed_v == s0.routed_v;

    std::ostringstream d;
    d << "real max diff " << diff << ", fixed " << (fixed_equal ? "bit-exact" : "differs") << ", sim "
      << (sim_equal ? "bit-exact" : "differs") << " (" << s1.report.total_cycles << " vs " << s0.report.total_cycles
      << " cycles)";
    return check("routing_skip_equivalence", "skipping the first softmax leaves routing unchanged",
                 diff <= 1e-12 && fixed_equal && sim_equal, d.str());
  }));

  out.push_back(guarded("sim_vs_golden_toy", "the simulator computes the fixed-point network exactly", [&] {
    Config toy = cfg;
    toy.net = toy_network();
    WeightSet w = generate_weights(opts.seed, toy.net, WeightFormat::Real32, toy.quant, {0.25, 1.0, 1.0, 1.0})
                      .unpack(toy.net);
    auto digits = synthetic_digits(opts.seed, 2, toy.net.input_height, toy.net.input_width);
    std::string bad;
    for (const auto& px : digits.pixels) {
      bad = sim_vs_golden(toy, w, to_tensor(px, digits.rows, digits.cols));
      if (!bad.empty()) break;
    }
    return check("sim_vs_golden_toy", "the simulator computes the fixed-point network exactly", bad.empty(),
                 bad.empty() ? "2 images bit-exact on every layer" : "first mismatch in " + bad);
  }));

  std::optional<WeightSet> weights;
  if (opts.weights) {
    out.push_back(guarded("weights_archive", "weight archive loads and matches the network", [&] {
      weights = WeightArchive::read(*opts.weights).unpack(cfg.net);
      return check("weights_archive", "weight archive loads and matches the network", true, opts.weights->string());
    }));
    if (!out.back().passed) return out;
  }

  if (opts.full_shapes) {
    out.push_back(guarded("sim_vs_golden_full", "the simulator computes the fixed-point network exactly", [&] {
      WeightSet w = weights ? *weights : generate_weights(opts.seed, cfg.net, WeightFormat::Real32, cfg.quant).unpack(cfg.net);
      auto digits = synthetic_digits(opts.seed, 1, cfg.net.input_height, cfg.net.input_width);
      const ActivationTables t = ActivationTables::build(cfg.quant.luts);
      auto pw = golden::PreparedWeights::prepare(w, cfg.net, cfg.quant);
      auto x = golden::quantize_image(to_tensor(digits.pixels[0], digits.rows, digits.cols), cfg.quant);
      auto gold = golden::infer(x, pw, cfg.net, cfg.quant, t, cfg.arch.skip_first_softmax);
      auto sim = mapper::simulate(x, pw, cfg.net, cfg.quant, t, cfg.arch);
      std::string bad = first_mismatch(sim, gold);

      auto pred = sim.report.reads_per_phase("predictions");
      size_t phases_reading = 0;
      for (uint64_t r : pred) phases_reading += r ? 1 : 0;
      uint64_t conv1_w = 0;
      for (const auto& ph : sim.report.phases) {
        for (const auto& tr : ph.traffic) {
          if (tr.region == "conv1_w") conv1_w += tr.reads;
        }
      }
      uint64_t distinct = count_parameters(cfg.net).conv1;
      std::ostringstream d;
      d << (bad.empty() ? "bit-exact on every layer" : "first mismatch in " + bad) << "; " << sim.report.total_cycles
        << " cycles; predictions read in " << phases_reading << " phase(s); conv1 weight reads " << conv1_w << " of "
        << distinct << " distinct";
      return check("sim_vs_golden_full", "the simulator computes the fixed-point network exactly; predictions are "
                   "fetched once per routing pass and conv1 weights once per tile residency",
                   bad.empty() && phases_reading == 1 && conv1_w == distinct, d.str());
    }));
  }
  return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    if (!r.passed) return false;
  }
  return true;
}

std::string to_text(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  for (const auto& r : results) {
    char head[64];
    std::snprintf(head, sizeof head, "%-4s %-26s ", r.passed ? "PASS" : "FAIL", r.name.c_str());
    os << head << r.detail << "\n";
    if (!r.passed) os << "     invariant: " << r.anchor << "\n";
  }
  return os.str();
}

}  // namespace capsacc::harness
