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

#include <cstdio>
#include <sstream>

#include "capsacc/harness.hpp"

namespace capsacc::harness {

using nlohmann::json;

namespace {

const char* to_string(mapper::PhaseKind k) { return k == mapper::PhaseKind::Layer ? "layer" : "routing"; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

json to_json(const mapper::CycleReport& r) {
  json phases = json::array();
  for (const auto& p : r.phases) {
    json traffic = json::array();
    for (const auto& t : p.traffic) {
      traffic.push_back(
          {{"region", t.region}, {"buffer", mapper::to_string(t.buffer)}, {"reads", t.reads}, {"writes", t.writes}});
    }
    phases.push_back({{"name", p.name},
                      {"kind", to_string(p.kind)},
                      {"cycles", p.cycles},
                      {"passes", p.passes},
                      {"macs", p.macs},
                      {"traffic", traffic}});
  }
  return json{{"phases", phases},
              {"total_cycles", r.total_cycles},
              {"array_saturation", r.array_saturation},
              {"accumulator_saturation", r.accumulator_saturation},
              {"activation_saturation", r.activation_saturation},
              {"softmax_degenerate", r.softmax_degenerate},
              {"fifo_peak", r.fifo_peak}};
}

json to_json(const RunReport& r) {
  json images = json::array();
  for (size_t i = 0; i < r.images.size(); ++i) {
    const ImageResult& im = r.images[i];
    json j = {{"index", i}, {"scores", im.scores}, {"argmax", im.argmax}};
    if (im.label >= 0) j["label"] = im.label;
    if (!im.real_scores.empty()) j["real_scores"] = im.real_scores;
    if (!im.fixed_scores.empty()) j["fixed_scores"] = im.fixed_scores;
    j["saturation_events"] = im.saturation;
    j["softmax_degenerate"] = im.softmax_degenerate;
    if (r.mode == Mode::Sim) j["cycles"] = im.cycles;
    images.push_back(std::move(j));
  }
  json metrics = json::array();
  for (const auto& m : r.metrics) {
    metrics.push_back({{"reference", m.reference},
                       {"max_abs", m.max_abs},
                       {"mean_abs", m.mean_abs},
                       {"argmax_agreement", m.argmax_agreement},
                       {"images", m.images}});
  }
  json out = {{"schema_version", RunReport::schema_version},
              {"mode", to_string(r.mode)},
              {"seed", r.seed},
              {"weights", r.weights_source},
              {"inputs", r.input_source},
              {"config", config_to_json(r.config)},
              {"images", images},
              {"metrics", metrics},
              {"counters", {{"saturation_events", r.saturation_events}, {"softmax_degenerate", r.softmax_degenerate}}}};
  out["accuracy"] = r.accuracy ? json(*r.accuracy) : json(nullptr);
  out["cycle_report"] = r.cycles ? to_json(*r.cycles) : json(nullptr);
  return out;
}

std::string to_text(const RunReport& r) {
  std::ostringstream os;
  os << "capsacc run report (schema " << RunReport::schema_version << ")\n";
  os << "mode      " << to_string(r.mode) << "\nseed      " << r.seed << "\nweights   " << r.weights_source
     << "\ninputs    " << r.input_source << "\nimages    " << r.images.size() << "\n";
  if (r.accuracy) os << "accuracy  " << fmt("%.4f", *r.accuracy) << "\n";
  os << "saturation events " << r.saturation_events << ", degenerate softmax " << r.softmax_degenerate << "\n";

  if (!r.metrics.empty()) {
    char line[160];
    std::snprintf(line, sizeof line, "\n%-10s %12s %12s %10s\n", "reference", "max_abs", "mean_abs", "agreement");
    os << line;
    for (const auto& m : r.metrics) {
      std::snprintf(line, sizeof line, "%-10s %12.6f %12.6f %10.4f\n", m.reference.c_str(), m.max_abs, m.mean_abs,
                    m.argmax_agreement);
      os << line;
    }
  }

  if (r.cycles) {
    char line[160];
    std::snprintf(line, sizeof line, "\n%-32s %-8s %12s %8s %14s\n", "phase", "kind", "cycles", "passes", "macs");
    os << line;
    for (const auto& p : r.cycles->phases) {
      std::snprintf(line, sizeof line, "%-32s %-8s %12llu %8llu %14llu\n", p.name.c_str(), to_string(p.kind),
                    static_cast<unsigned long long>(p.cycles), static_cast<unsigned long long>(p.passes),
                    static_cast<unsigned long long>(p.macs));
      os << line;
    }
    std::snprintf(line, sizeof line, "%-32s %-8s %12llu\n", "total", "", static_cast<unsigned long long>(r.cycles->total_cycles));
    os << line;
  }

  if (!r.images.empty()) {
    os << "\nimage  label  argmax  scores\n";
    for (size_t i = 0; i < r.images.size(); ++i) {
      const ImageResult& im = r.images[i];
      char head[64];
      std::snprintf(head, sizeof head, "%5zu  %5s  %6d ", i, im.label >= 0 ? std::to_string(im.label).c_str() : "-",
                    im.argmax);
      os << head;
      for (double s : im.scores) os << fmt(" %.4f", s);
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace capsacc::harness
