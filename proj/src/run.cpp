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
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "capsacc/harness.hpp"

namespace capsacc::harness {

const char* to_string(Mode m) {
  switch (m) {
    case Mode::Real: return "real";
    case Mode::Fixed: return "fixed";
    case Mode::Sim: return "sim";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  if (s == "real") return Mode::Real;
  if (s == "fixed") return Mode::Fixed;
  if (s == "sim") return Mode::Sim;
  throw InvalidArgument("unknown mode '" + s + "' (expected real, fixed or sim)");
}

CrossModeMetrics compare_scores(const std::string& reference, const std::vector<std::vector<double>>& got,
                                const std::vector<std::vector<double>>& want) {
  if (got.size() != want.size()) throw InvalidArgument("compare_scores: image counts differ");
  CrossModeMetrics m;
  m.reference = reference;
  m.images = got.size();
  size_t values = 0, agree = 0;
  double sum = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    if (got[i].size() != want[i].size()) throw InvalidArgument("compare_scores: score vector lengths differ");
    for (size_t j = 0; j < got[i].size(); ++j) {
      double e = std::fabs(got[i][j] - want[i][j]);
      m.max_abs = std::max(m.max_abs, e);
      sum += e;
      ++values;
    }
    agree += argmax(got[i]) == argmax(want[i]) ? 1 : 0;
  }
  if (values) m.mean_abs = sum / static_cast<double>(values);
  if (!got.empty()) m.argmax_agreement = static_cast<double>(agree) / static_cast<double>(got.size());
  return m;
}

RunReport run(const RunOptions& opts, const WeightSet& weights, const std::vector<RealTensor>& images,
              const std::vector<int>& labels) {
  const Config& cfg = opts.config;
  cfg.validate();
  weights.check_shapes(cfg.net);
  if (!labels.empty() && labels.size() != images.size()) {
    throw InvalidArgument("run: " + std::to_string(labels.size()) + " labels for " + std::to_string(images.size()) +
                          " images");
  }
  const bool skip = cfg.arch.skip_first_softmax;
  const bool want_real = opts.mode == Mode::Real || opts.compare;
  const bool want_fixed = opts.mode == Mode::Fixed || (opts.mode == Mode::Sim && opts.compare);
  const bool want_sim = opts.mode == Mode::Sim;

  const ActivationTables tables = ActivationTables::build(cfg.quant.luts);
  std::optional<golden::PreparedWeights> prepared;
  if (want_fixed || want_sim) prepared = golden::PreparedWeights::prepare(weights, cfg.net, cfg.quant);

  RunReport report;
  report.mode = opts.mode;
  report.seed = opts.seed;
  report.config = cfg;
  report.weights_source = opts.weights_source;
  report.input_source = opts.input_source;
  report.images.resize(images.size());
  std::optional<mapper::CycleReport> first_cycles;

  auto work = [&](size_t i) {
    ImageResult& out = report.images[i];
    out.label = labels.empty() ? -1 : labels[i];
    std::vector<double> real_scores, fixed_scores;
    if (want_real) real_scores = real::infer(images[i], weights, cfg.net, skip).class_scores;
    FixedTensor image;
    if (want_fixed || want_sim) image = golden::quantize_image(images[i], cfg.quant);
    if (want_fixed) {
      auto g = golden::infer(image, *prepared, cfg.net, cfg.quant, tables, skip);
      fixed_scores = g.class_scores;
      if (opts.mode == Mode::Fixed) {
        out.saturation = g.counters.saturation.events;
        out.softmax_degenerate = g.counters.softmax_degenerate;
      }
    }
    switch (opts.mode) {
      case Mode::Real:
        out.scores = std::move(real_scores);
        break;
      case Mode::Fixed:
        out.scores = std::move(fixed_scores);
        if (opts.compare) out.real_scores = std::move(real_scores);
        break;
      case Mode::Sim: {
        const bool traced = i == 0 && opts.trace != nullptr;
        auto s = mapper::simulate(image, *prepared, cfg.net, cfg.quant, tables, cfg.arch,
                                  accel::Tracer(traced ? opts.trace : nullptr), traced ? opts.trace_limit : 0);
        out.scores = s.class_scores;
        out.cycles = s.report.total_cycles;
        out.saturation = s.report.array_saturation + s.report.accumulator_saturation + s.report.activation_saturation;
        out.softmax_degenerate = s.report.softmax_degenerate;
        if (opts.compare) {
          out.real_scores = std::move(real_scores);
          out.fixed_scores = std::move(fixed_scores);
        }
        if (i == 0) first_cycles = std::move(s.report);
        break;
      }
    }
    out.argmax = argmax(out.scores);
  };

  unsigned threads = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<size_t>(threads, std::max<size_t>(images.size(), 1)));
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (size_t i = next++; i < images.size(); i = next++) {
      try {
        work(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = images.size();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<std::vector<double>> got, real_ref, fixed_ref;
  size_t correct = 0;
  for (const ImageResult& r : report.images) {
    got.push_back(r.scores);
    if (!r.real_scores.empty()) real_ref.push_back(r.real_scores);
    if (!r.fixed_scores.empty()) fixed_ref.push_back(r.fixed_scores);
    report.saturation_events += r.saturation;
    report.softmax_degenerate += r.softmax_degenerate;
    correct += r.argmax == r.label ? 1 : 0;
  }
  if (opts.compare && opts.mode != Mode::Real) {
    if (opts.mode == Mode::Sim) report.metrics.push_back(compare_scores("fixed", got, fixed_ref));
    report.metrics.push_back(compare_scores("real", got, real_ref));
  }
  if (!labels.empty()) report.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  report.cycles = std::move(first_cycles);
  return report;
}

}  // namespace capsacc::harness
