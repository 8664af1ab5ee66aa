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
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>

#include "capsacc/harness.hpp"

namespace capsacc::harness {

using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;
constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kPayloadFile = "weights.bin";

struct NamedTensor {
  const char* name;
  RealTensor WeightSet::*member;
};

constexpr NamedTensor kTensors[] = {
    {"conv1_kernels", &WeightSet::conv1_kernels},     {"conv1_biases", &WeightSet::conv1_biases},
    {"primary_kernels", &WeightSet::primary_kernels}, {"primary_biases", &WeightSet::primary_biases},
    {"classcaps_w", &WeightSet::classcaps_w},
};

uint64_t element_bytes(const ArchiveEntry& e) {
  return e.real ? 4 : static_cast<uint64_t>((e.format.total_bits + 7) / 8);
}

void put_le(std::vector<uint8_t>& out, uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_le(const uint8_t* p, int bytes) {
  uint32_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= uint32_t{p[i]} << (8 * i);
  return v;
}

int64_t sign_extend(uint32_t v, int bits) {
  if (bits >= 32) return static_cast<int32_t>(v);
  uint32_t mask = (uint32_t{1} << bits) - 1;
  v &= mask;
  if (v >> (bits - 1)) return static_cast<int64_t>(v) - (int64_t{1} << bits);
  return v;
}

std::vector<uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

const char* to_string(WeightFormat f) { return f == WeightFormat::Real32 ? "real32" : "fixed_q8"; }

WeightFormat weight_format_from_string(const std::string& s) {
  if (s == "real32") return WeightFormat::Real32;
  if (s == "fixed_q8") return WeightFormat::FixedQ8;
  throw InvalidArgument("unknown weight format '" + s + "' (expected real32 or fixed_q8)");
}

WeightArchive WeightArchive::pack(const WeightSet& w, WeightFormat format, const QuantConfig& q, uint64_t seed) {
  if (format == WeightFormat::FixedQ8 && q.weight.total_bits != 8) {
    throw InvalidArgument("fixed_q8 archives need an 8-bit weight format, got " + q.weight.to_string());
  }
  WeightArchive a;
  a.format = format;
  a.seed = seed;
  for (const auto& t : kTensors) {
    const RealTensor& x = w.*t.member;
    ArchiveEntry e;
    e.name = t.name;
    e.shape = x.shape;
    e.real = format == WeightFormat::Real32;
    e.format = e.real ? fx::signed_q(32, 0) : q.weight;
    e.offset = a.payload.size();
    for (double v : x.values) {
      if (e.real) {
        put_le(a.payload, std::bit_cast<uint32_t>(static_cast<float>(v)), 4);
      } else {
        put_le(a.payload, static_cast<uint32_t>(fx::quantize_raw(v, q.weight)), 1);
      }
    }
    e.length = a.payload.size() - e.offset;
    a.entries.push_back(std::move(e));
  }
  return a;
}

void WeightArchive::validate() const {
  std::set<std::string> names;
  std::vector<std::pair<uint64_t, uint64_t>> spans;
  for (const ArchiveEntry& e : entries) {
    const std::string where = "weight archive: tensor " + e.name + ": ";
    if (!names.insert(e.name).second) throw InvalidArgument(where + "duplicate name");
    if (!e.real) e.format.validate();
    uint64_t want = shape_size(e.shape) * element_bytes(e);
    if (e.length != want) {
      throw InvalidArgument(where + "length " + std::to_string(e.length) + " does not match shape " +
                            shape_to_string(e.shape) + " (" + std::to_string(want) + " bytes)");
    }
    if (e.offset > payload.size() || e.length > payload.size() - e.offset) {
      throw InvalidArgument(where + "bytes [" + std::to_string(e.offset) + ", " + std::to_string(e.offset + e.length) +
                            ") exceed the payload of " + std::to_string(payload.size()) + " bytes");
    }
    spans.emplace_back(e.offset, e.offset + e.length);
  }
  std::sort(spans.begin(), spans.end());
  for (size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second) {
      throw InvalidArgument("weight archive: tensors overlap at byte " + std::to_string(spans[i].first));
    }
  }
}

WeightSet WeightArchive::unpack(const NetworkConfig& cfg) const {
  validate();
  WeightSet w = WeightSet::zeros(cfg);
  for (const auto& t : kTensors) {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const ArchiveEntry& e) { return e.name == t.name; });
    if (it == entries.end()) throw InvalidArgument(std::string("weight archive: missing tensor ") + t.name);
    RealTensor& x = w.*t.member;
    if (it->shape != x.shape) {
      throw InvalidArgument(std::string("weight archive: tensor ") + t.name + " has shape " +
                            shape_to_string(it->shape) + ", network expects " + shape_to_string(x.shape));
    }
    const int bytes = static_cast<int>(element_bytes(*it));
    const uint8_t* p = payload.data() + it->offset;
    for (size_t i = 0; i < x.values.size(); ++i, p += bytes) {
      uint32_t raw = get_le(p, bytes);
      x.values[i] = it->real ? static_cast<double>(std::bit_cast<float>(raw))
                             : it->format.value_of(it->format.is_signed ? sign_extend(raw, it->format.total_bits)
                                                                        : int64_t{raw});
    }
  }
  return w;
}

json WeightArchive::manifest() const {
  json tensors = json::array();
  for (const ArchiveEntry& e : entries) {
    tensors.push_back({{"name", e.name},
                       {"shape", e.shape},
                       {"element", e.real ? json{{"real", 32}} : format_to_json(e.format)},
                       {"offset", e.offset},
                       {"length", e.length}});
  }
  return json{{"schema_version", kManifestVersion},
              {"format", to_string(format)},
              {"seed", seed},
              {"payload", kPayloadFile},
              {"payload_bytes", payload.size()},
              {"tensors", tensors}};
}

void WeightArchive::write(const std::filesystem::path& dir) const {
  validate();
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / kManifestFile, std::ios::trunc);
    out << manifest().dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (dir / kManifestFile).string());
  }
  std::ofstream out(dir / kPayloadFile, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("cannot write " + (dir / kPayloadFile).string());
}

WeightArchive WeightArchive::read(const std::filesystem::path& dir) {
  const std::string mpath = (dir / kManifestFile).string();
  auto text = read_bytes(dir / kManifestFile);
  json m;
  try {
    m = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(mpath, e.byte, e.what());
  }
  WeightArchive a;
  try {
    if (m.at("schema_version").get<int>() != kManifestVersion) {
      throw InvalidArgument("unsupported schema_version " + m.at("schema_version").dump());
    }
    a.format = weight_format_from_string(m.at("format").get<std::string>());
    a.seed = m.at("seed").get<uint64_t>();
    for (const json& t : m.at("tensors")) {
      ArchiveEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      const json& el = t.at("element");
      e.real = el.contains("real");
      if (e.real) {
        if (el.at("real").get<int>() != 32) throw InvalidArgument("only 32-bit real elements are supported");
        e.format = fx::signed_q(32, 0);
      } else {
        e.format = format_from_json(el);
      }
      e.offset = t.at("offset").get<uint64_t>();
      e.length = t.at("length").get<uint64_t>();
      a.entries.push_back(std::move(e));
    }
    a.payload = read_bytes(dir / m.at("payload").get<std::string>());
    if (a.payload.size() != m.at("payload_bytes").get<uint64_t>()) {
      throw InvalidArgument("payload has " + std::to_string(a.payload.size()) + " bytes, manifest declares " +
                            m.at("payload_bytes").dump());
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(mpath + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(mpath + ": " + e.what());
  }
  a.validate();
  return a;
}

WeightArchive generate_weights(uint64_t seed, const NetworkConfig& cfg, WeightFormat format, const QuantConfig& q,
                               const WeightInit& init) {
  cfg.validate();
  q.weight.validate();
  if (!(init.range >= 0.0)) throw InvalidArgument("generate_weights: range must be >= 0");
  WeightSet w = WeightSet::zeros(cfg);
  std::mt19937_64 gen(seed);
  auto fill = [&](RealTensor& x, double gain) {
    double bound = std::min(init.range * gain, q.weight.max_value());
    auto r = static_cast<int64_t>(std::floor(bound / q.weight.lsb() + 1e-9));
    auto span = static_cast<uint64_t>(2 * r + 1);
    for (double& v : x.values) v = q.weight.value_of(static_cast<int64_t>(gen() % span) - r);
  };
  fill(w.conv1_kernels, init.conv1_gain);
  fill(w.conv1_biases, init.conv1_gain);
  fill(w.primary_kernels, init.primary_gain);
  fill(w.primary_biases, init.primary_gain);
  fill(w.classcaps_w, init.classcaps_gain);
  return WeightArchive::pack(w, format, q, seed);
}

}  // namespace capsacc::harness
