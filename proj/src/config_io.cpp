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

#include <fstream>
#include <set>

#include "capsacc/harness.hpp"

namespace capsacc::harness {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object, rejecting unknown or ill-typed ones.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidArgument("config: " + where_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw InvalidArgument("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw InvalidArgument("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (it->template get<int64_t>() < 0) throw InvalidArgument("expected a non-negative integer");
        }
      }
      out = it->template get<T>();
    } catch (const std::exception& e) {
      throw InvalidArgument("config: " + where_ + "." + key + ": " + e.what());
    }
  }

  void format(const char* key, fx::QFormat& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it != j_.end()) out = format_from_json(*it);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw InvalidArgument("config: unknown key " + where_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

const char* to_string(mapper::PrimaryLoopOrder o) {
  return o == mapper::PrimaryLoopOrder::OutputChannelOuter ? "output_channel_outer" : "input_channel_outer";
}

mapper::PrimaryLoopOrder loop_order_from_string(const std::string& s) {
  if (s == "output_channel_outer") return mapper::PrimaryLoopOrder::OutputChannelOuter;
  if (s == "input_channel_outer") return mapper::PrimaryLoopOrder::InputChannelOuter;
  throw InvalidArgument("config: unknown primary_order '" + s + "'");
}

}  // namespace

json format_to_json(const fx::QFormat& f) {
  return json{{"bits", f.total_bits}, {"frac", f.frac_bits}, {"signed", f.is_signed}};
}

fx::QFormat format_from_json(const json& j) {
  ObjectReader r(j, "format");
  fx::QFormat f;
  r.get("bits", f.total_bits);
  r.get("frac", f.frac_bits);
  r.get("signed", f.is_signed);
  r.finish();
  f.validate();
  return f;
}

void Config::validate() const {
  net.validate();
  quant.validate();
  arch.validate();
}

json config_to_json(const Config& c) {
  const NetworkConfig& n = c.net;
  const QuantConfig& q = c.quant;
  const mapper::ArchConfig& a = c.arch;
  json net = {
      {"input_height", n.input_height},
      {"input_width", n.input_width},
      {"conv1", {{"channels", n.conv1.channels}, {"kernel", n.conv1.kernel}, {"stride", n.conv1.stride}}},
      {"primarycaps",
       {{"channels", n.primarycaps.channels},
        {"capsule_dim", n.primarycaps.capsule_dim},
        {"kernel", n.primarycaps.kernel},
        {"stride", n.primarycaps.stride}}},
      {"classcaps", {{"num_classes", n.classcaps.num_classes}, {"capsule_dim", n.classcaps.capsule_dim}}},
      {"routing_iterations", n.routing_iterations},
      {"primary_relu", n.primary_relu},
  };
  json luts = {
      {"sqrt_in", format_to_json(q.luts.sqrt_in)},   {"sqrt_out", format_to_json(q.luts.sqrt_out)},
      {"squash_s", format_to_json(q.luts.squash_s)}, {"squash_norm", format_to_json(q.luts.squash_norm)},
      {"squash_out", format_to_json(q.luts.squash_out)}, {"exp_in", format_to_json(q.luts.exp_in)},
      {"exp_out", format_to_json(q.luts.exp_out)},
  };
  json quant = {
      {"data", format_to_json(q.data)},
      {"weight", format_to_json(q.weight)},
      {"acc", format_to_json(q.acc)},
      {"coupling", format_to_json(q.coupling)},
      {"luts", luts},
      {"norm_shift_squash", q.norm_shift_squash},
      {"norm_shift_score", q.norm_shift_score},
      {"squash_max_prescale", q.squash_max_prescale},
      {"sumsq_bits", q.sumsq_bits},
      {"softmax_sum_bits", q.softmax_sum_bits},
      {"reduction_tile", q.reduction_tile},
  };
  json arch = {
      {"rows", a.rows},
      {"cols", a.cols},
      {"fifo_capacity", a.fifo_capacity},
      {"feedback_capacity", a.feedback_capacity},
      {"data_buffer_bytes", a.data_buffer_bytes},
      {"weight_buffer_bytes", a.weight_buffer_bytes},
      {"routing_buffer_bytes", a.routing_buffer_bytes},
      {"primary_order", to_string(a.primary_order)},
      {"skip_first_softmax", a.skip_first_softmax},
  };
  return json{{"network", net}, {"quant", quant}, {"arch", arch}};
}

Config config_from_json(const json& j) {
  Config c;
  ObjectReader top(j, "config");
  if (const json* nj = top.child("network")) {
    NetworkConfig& n = c.net;
    ObjectReader r(*nj, "network");
    r.get("input_height", n.input_height);
    r.get("input_width", n.input_width);
    if (const json* x = r.child("conv1")) {
      ObjectReader s(*x, "network.conv1");
      s.get("channels", n.conv1.channels);
      s.get("kernel", n.conv1.kernel);
      s.get("stride", n.conv1.stride);
      s.finish();
    }
    if (const json* x = r.child("primarycaps")) {
      ObjectReader s(*x, "network.primarycaps");
      s.get("channels", n.primarycaps.channels);
      s.get("capsule_dim", n.primarycaps.capsule_dim);
      s.get("kernel", n.primarycaps.kernel);
      s.get("stride", n.primarycaps.stride);
      s.finish();
    }
    if (const json* x = r.child("classcaps")) {
      ObjectReader s(*x, "network.classcaps");
      s.get("num_classes", n.classcaps.num_classes);
      s.get("capsule_dim", n.classcaps.capsule_dim);
      s.finish();
    }
    r.get("routing_iterations", n.routing_iterations);
    r.get("primary_relu", n.primary_relu);
    r.finish();
  }
  if (const json* qj = top.child("quant")) {
    QuantConfig& q = c.quant;
    ObjectReader r(*qj, "quant");
    r.format("data", q.data);
    r.format("weight", q.weight);
    r.format("acc", q.acc);
    r.format("coupling", q.coupling);
    if (const json* x = r.child("luts")) {
      ObjectReader s(*x, "quant.luts");
      s.format("sqrt_in", q.luts.sqrt_in);
      s.format("sqrt_out", q.luts.sqrt_out);
      s.format("squash_s", q.luts.squash_s);
      s.format("squash_norm", q.luts.squash_norm);
      s.format("squash_out", q.luts.squash_out);
      s.format("exp_in", q.luts.exp_in);
      s.format("exp_out", q.luts.exp_out);
      s.finish();
    }
    r.get("norm_shift_squash", q.norm_shift_squash);
    r.get("norm_shift_score", q.norm_shift_score);
    r.get("squash_max_prescale", q.squash_max_prescale);
    r.get("sumsq_bits", q.sumsq_bits);
    r.get("softmax_sum_bits", q.softmax_sum_bits);
    r.get("reduction_tile", q.reduction_tile);
    r.finish();
  }
  if (const json* aj = top.child("arch")) {
    mapper::ArchConfig& a = c.arch;
    ObjectReader r(*aj, "arch");
    r.get("rows", a.rows);
    r.get("cols", a.cols);
    r.get("fifo_capacity", a.fifo_capacity);
    r.get("feedback_capacity", a.feedback_capacity);
    r.get("data_buffer_bytes", a.data_buffer_bytes);
    r.get("weight_buffer_bytes", a.weight_buffer_bytes);
    r.get("routing_buffer_bytes", a.routing_buffer_bytes);
    std::string order = to_string(a.primary_order);
    r.get("primary_order", order);
    a.primary_order = loop_order_from_string(order);
    r.get("skip_first_softmax", a.skip_first_softmax);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), e.byte, e.what());
  }
  return config_from_json(j);
}

}  // namespace capsacc::harness
