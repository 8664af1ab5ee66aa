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

const char* to_string(BufferKind kind) {
  switch (kind) {
    case BufferKind::Data: return "data";
    case BufferKind::Weight: return "weight";
    case BufferKind::Routing: return "routing";
    case BufferKind::Feedback: return "feedback";
  }
  return "?";
}

void ArchConfig::validate() const {
  if (rows < 1 || cols < 1) throw InvalidArgument("ArchConfig: array must have at least one row and column");
  if (fifo_capacity < 1) throw InvalidArgument("ArchConfig: fifo_capacity must be >= 1");
}

int BufferModel::add_region(std::string name, BufferKind buffer, fx::QFormat format, size_t size) {
  if (find(name) >= 0) throw InvalidArgument("BufferModel: duplicate region " + name);
  Region r;
  r.name = std::move(name);
  r.buffer = buffer;
  r.format = format;
  r.values.assign(size, 0);
  r.written.assign(size, 0);
  regions_.push_back(std::move(r));
  return static_cast<int>(regions_.size() - 1);
}

int BufferModel::find(const std::string& name) const {
  for (size_t i = 0; i < regions_.size(); ++i) {
    if (regions_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

Region& BufferModel::at(int id) {
  if (id < 0 || static_cast<size_t>(id) >= regions_.size()) throw UnitFault("invalid region id " + std::to_string(id));
  return regions_[static_cast<size_t>(id)];
}

int32_t BufferModel::read(int id, int64_t addr) {
  Region& r = at(id);
  if (addr < 0 || static_cast<size_t>(addr) >= r.size()) {
    throw UnitFault("read of " + r.name + "[" + std::to_string(addr) + "] out of range");
  }
  auto a = static_cast<size_t>(addr);
  if (!r.written[a]) throw UnitFault("read of never-written " + r.name + "[" + std::to_string(addr) + "]");
  ++r.reads;
  return r.values[a];
}

void BufferModel::write(int id, int64_t addr, int32_t value) {
  Region& r = at(id);
  if (addr < 0 || static_cast<size_t>(addr) >= r.size()) {
    throw UnitFault("write of " + r.name + "[" + std::to_string(addr) + "] out of range");
  }
  if (!r.format.contains(value)) {
    throw UnitFault("value " + std::to_string(value) + " does not fit " + r.name + " format " + r.format.to_string());
  }
  auto a = static_cast<size_t>(addr);
  r.values[a] = value;
  r.written[a] = 1;
  ++r.writes;
}

void BufferModel::load(int id, std::span<const int32_t> values) {
  Region& r = at(id);
  if (values.size() != r.size()) {
    throw InvalidArgument("BufferModel: " + std::to_string(values.size()) + " values for region " + r.name + " of size " +
                          std::to_string(r.size()));
  }
  for (int32_t v : values) {
    if (!r.format.contains(v)) throw InvalidArgument("BufferModel: value out of range for region " + r.name);
  }
  std::copy(values.begin(), values.end(), r.values.begin());
  std::fill(r.written.begin(), r.written.end(), 1);
}

std::vector<int32_t> BufferModel::dump(int id) const { return region(id).values; }

bool BufferModel::fully_written(int id) const {
  const auto& w = region(id).written;
  return std::all_of(w.begin(), w.end(), [](uint8_t x) { return x != 0; });
}

void BufferModel::invalidate(int id) {
  Region& r = at(id);
  std::fill(r.written.begin(), r.written.end(), 0);
}

uint64_t BufferModel::bytes(BufferKind kind) const {
  uint64_t total = 0;
  for (const auto& r : regions_) total += r.buffer == kind ? r.bytes() : 0;
  return total;
}

uint64_t BufferModel::reads(BufferKind kind) const {
  uint64_t total = 0;
  for (const auto& r : regions_) total += r.buffer == kind ? r.reads : 0;
  return total;
}

uint64_t BufferModel::writes(BufferKind kind) const {
  uint64_t total = 0;
  for (const auto& r : regions_) total += r.buffer == kind ? r.writes : 0;
  return total;
}

MemoryMap MemoryMap::build(const NetworkConfig& cfg, const QuantConfig& q, const ArchConfig& arch,
                           BufferModel& b) {
  cfg.validate();
  arch.validate();
  auto z = [](int v) { return static_cast<size_t>(v); };
  const size_t k1 = z(cfg.conv1.channels), k2 = z(cfg.primary_out_channels());
  const size_t n = z(cfg.num_primary_capsules()), e = z(cfg.primarycaps.capsule_dim);
  const size_t j = z(cfg.classcaps.num_classes), d = z(cfg.classcaps.capsule_dim);

  MemoryMap m;
  m.image = b.add_region("image", BufferKind::Data, q.data, z(cfg.input_height * cfg.input_width));
  m.conv1_out = b.add_region("conv1_out", BufferKind::Data, q.data, z(cfg.conv1_out_h() * cfg.conv1_out_w()) * k1);
  m.primary_pre =
      b.add_region("primary_pre", BufferKind::Data, q.data, z(cfg.primary_out_h() * cfg.primary_out_w()) * k2);
  m.primary_u = b.add_region("primary_u", BufferKind::Data, q.data, n * e);
  m.predictions = b.add_region("predictions", BufferKind::Data, q.data, n * j * d);
  m.scores = b.add_region("scores", BufferKind::Data, q.score_format(), j);

  m.conv1_w = b.add_region("conv1_w", BufferKind::Weight, q.weight, k1 * z(cfg.conv1_reduction() + 1));
  m.primary_w = b.add_region("primary_w", BufferKind::Weight, q.weight, k2 * z(cfg.primary_reduction() + 1));
  m.classcaps_w = b.add_region("classcaps_w", BufferKind::Weight, q.weight, n * j * e * d);

  m.coupling = b.add_region("coupling", BufferKind::Routing, q.coupling, n * j);
  m.logits = b.add_region("logits", BufferKind::Routing, q.acc, n * j);
  m.logits_narrow = b.add_region("logits_narrow", BufferKind::Routing, q.luts.exp_in, n * j);
  m.routed_v = b.add_region("routed_v", BufferKind::Routing, q.data, j * d);

  if (n * j * d <= arch.feedback_capacity) {
    m.predictions_fb = b.add_region("predictions_fb", BufferKind::Feedback, q.data, n * j * d);
  }

  auto check = [&](BufferKind kind, uint64_t capacity) {
    if (b.bytes(kind) > capacity) {
      throw ScheduleError(std::string(to_string(kind)) + " buffer needs " + std::to_string(b.bytes(kind)) +
                          " bytes, capacity " + std::to_string(capacity));
    }
  };
  check(BufferKind::Data, arch.data_buffer_bytes);
  check(BufferKind::Weight, arch.weight_buffer_bytes);
  check(BufferKind::Routing, arch.routing_buffer_bytes);
  return m;
}

void load_weights(BufferModel& b, const MemoryMap& mem, const golden::PreparedWeights& w) {
  b.load(mem.conv1_w, w.conv1);
  b.load(mem.primary_w, w.primary);
  b.load(mem.classcaps_w, w.classcaps_w.values);
}

void load_image(BufferModel& b, const MemoryMap& mem, const FixedTensor& image) {
  b.load(mem.image, image.values);
}

}  // namespace capsacc::mapper
