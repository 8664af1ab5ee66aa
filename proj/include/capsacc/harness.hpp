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

// Front-end plumbing: weight archives, IDX image files, synthetic digits,
// multi-mode inference runs with cross-mode metrics, the verification
// battery and JSON configuration files.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "capsacc/capsnet.hpp"
#include "capsacc/mapper.hpp"

namespace capsacc {

/// Malformed file contents; `offset` is the byte position of the problem.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, uint64_t offset, const std::string& what);
  uint64_t offset() const { return offset_; }

 private:
  uint64_t offset_;
};

namespace harness {

// ---------------------------------------------------------------------------
// Configuration.

struct Config {
  NetworkConfig net{};
  QuantConfig quant{};
  mapper::ArchConfig arch{};

  void validate() const;
  friend bool operator==(const Config&, const Config&) = default;
};

/// Unknown keys and ill-typed values raise InvalidArgument; missing keys
/// keep their defaults.
Config config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const Config& cfg);
Config load_config(const std::filesystem::path& path);

nlohmann::json format_to_json(const fx::QFormat& f);
fx::QFormat format_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Weight archives: manifest.json plus one little-endian weights.bin.

enum class WeightFormat { Real32, FixedQ8 };

const char* to_string(WeightFormat f);
WeightFormat weight_format_from_string(const std::string& s);

struct ArchiveEntry {
  std::string name;
  Shape shape;
  /// Element encoding; a 32-bit real tensor uses {32, 0, signed} and
  /// `real` = true.
  fx::QFormat format;
  bool real = false;
  uint64_t offset = 0;
  uint64_t length = 0;  // bytes
  friend bool operator==(const ArchiveEntry&, const ArchiveEntry&) = default;
};

struct WeightArchive {
  WeightFormat format = WeightFormat::Real32;
  uint64_t seed = 0;
  std::vector<ArchiveEntry> entries;
  std::vector<uint8_t> payload;

  /// Packs the five trainable tensors. FixedQ8 quantizes into `q.weight`.
  static WeightArchive pack(const WeightSet& w, WeightFormat format, const QuantConfig& q, uint64_t seed = 0);
  /// Decodes every tensor; throws InvalidArgument on shape mismatch.
  WeightSet unpack(const NetworkConfig& cfg) const;

  /// Offsets in bounds, non-overlapping, lengths matching shapes and formats.
  void validate() const;

  nlohmann::json manifest() const;
  void write(const std::filesystem::path& dir) const;
  static WeightArchive read(const std::filesystem::path& dir);
  friend bool operator==(const WeightArchive&, const WeightArchive&) = default;
};

/// Per-layer bounds of the random weights: every tensor of a layer is
/// uniform in +-range * gain. Values are drawn on the weight grid of the
/// quantization config, so real and fixed mode share identical weights.
struct WeightInit {
  double range = 0.25;
  double conv1_gain = 0.5;
  double primary_gain = 0.1;
  double classcaps_gain = 0.5;
};

WeightArchive generate_weights(uint64_t seed, const NetworkConfig& cfg, WeightFormat format,
                               const QuantConfig& q = {}, const WeightInit& init = {});

// ---------------------------------------------------------------------------
// Images.

struct ImageSet {
  int rows = 0;
  int cols = 0;
  std::vector<std::vector<uint8_t>> pixels;
  std::vector<int> labels;  // empty when no label file was read
};

/// IDX image file (magic 0x00000803).
ImageSet read_idx_images(const std::filesystem::path& path);
/// IDX label file (magic 0x00000801).
std::vector<int> read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const ImageSet& images);
void write_idx_labels(const std::filesystem::path& path, const std::vector<int>& labels);

/// 28x28 IDX images scaled to [0, 1] (pixel / 255).
std::vector<RealTensor> load_mnist(const std::filesystem::path& path);
RealTensor to_tensor(const std::vector<uint8_t>& pixels, int rows, int cols);

/// Handwriting-like digits: stroke glyphs under a random affine jitter,
/// anti-aliased into a 20x20 box centred in the frame. Deterministic in
/// `seed`; labels cycle through 0..9 in a shuffled order.
ImageSet synthetic_digits(uint64_t seed, size_t count, int rows = 28, int cols = 28);

// ---------------------------------------------------------------------------
// Runs.

enum class Mode { Real, Fixed, Sim };

const char* to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct RunOptions {
  Mode mode = Mode::Fixed;
  Config config{};
  /// Also run the lower-fidelity modes and report cross-mode metrics.
  bool compare = true;
  /// Worker threads; 0 uses the hardware concurrency.
  unsigned threads = 0;
  uint64_t seed = 0;
  std::string weights_source;
  std::string input_source;
  /// Per-cycle trace of image 0 in sim mode, cut off after trace_limit
  /// cycles (0 = unlimited).
  std::ostream* trace = nullptr;
  uint64_t trace_limit = 0;
};

struct ImageResult {
  std::vector<double> scores;
  int argmax = 0;
  int label = -1;
  std::vector<double> real_scores;   // filled when compared against real mode
  std::vector<double> fixed_scores;  // filled when compared against fixed mode
  uint64_t saturation = 0;
  uint64_t softmax_degenerate = 0;
  uint64_t cycles = 0;
};

struct CrossModeMetrics {
  std::string reference;
  double max_abs = 0.0;
  double mean_abs = 0.0;
  double argmax_agreement = 0.0;  // fraction of images
  size_t images = 0;
};

struct RunReport {
  static constexpr int schema_version = 1;
  Mode mode = Mode::Fixed;
  uint64_t seed = 0;
  Config config{};
  std::string weights_source;
  std::string input_source;
  std::vector<ImageResult> images;
  std::vector<CrossModeMetrics> metrics;
  /// Label accuracy when labels are known.
  std::optional<double> accuracy;
  uint64_t saturation_events = 0;
  uint64_t softmax_degenerate = 0;
  /// Cycle report of image 0 (sim mode); every image shares the schedule.
  std::optional<mapper::CycleReport> cycles;
};

CrossModeMetrics compare_scores(const std::string& reference, const std::vector<std::vector<double>>& got,
                                const std::vector<std::vector<double>>& want);

RunReport run(const RunOptions& opts, const WeightSet& weights, const std::vector<RealTensor>& images,
              const std::vector<int>& labels = {});

nlohmann::json to_json(const RunReport& r);
nlohmann::json to_json(const mapper::CycleReport& r);
/// Aligned-column human-readable rendering.
std::string to_text(const RunReport& r);

// ---------------------------------------------------------------------------
// Verification battery.

/// One dense weight-stationary pass: `positions` random data vectors through
/// a full rows x cols weight tile on a fresh accelerator.
struct ThroughputResult {
  int64_t positions = 0;
  int cols = 0;
  uint64_t outputs = 0;             // results written back
  uint64_t schedule_cycles = 0;     // whole schedule, including fill and drain
  uint64_t full_output_cycles = 0;  // cycles in which every column emitted
  bool results_match = false;       // against a direct tiled matmul
};

ThroughputResult dense_matmul_throughput(const mapper::ArchConfig& arch, const QuantConfig& q, int64_t positions,
                                         uint64_t seed = 0);

/// Every layer tensor of a simulated inference against the golden model;
/// returns the first mismatching layer, or an empty string.
std::string first_mismatch(const mapper::SimInference& sim, const golden::Inference& gold);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  /// The claim of the accelerator design the check guards.
  std::string anchor;
};

struct VerifyOptions {
  Config config{};
  /// Include the full-size sim-vs-golden comparison (seconds per image).
  bool full_shapes = true;
  uint64_t seed = 0;
  /// Optional archive to load and use for the full-size comparison.
  std::optional<std::filesystem::path> weights;
};

std::vector<CheckResult> verify(const VerifyOptions& opts);
bool all_passed(const std::vector<CheckResult>& results);
std::string to_text(const std::vector<CheckResult>& results);

}  // namespace harness
}  // namespace capsacc
