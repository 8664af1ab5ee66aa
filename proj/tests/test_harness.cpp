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

#include <fstream>
#include <iterator>
#include <random>

#include <unistd.h>

#include "capsacc/harness.hpp"

using namespace capsacc;
using namespace capsacc::harness;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("capsacc_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<RealTensor> toy_images(size_t n, uint64_t seed) {
  NetworkConfig cfg = toy_network();
  auto d = synthetic_digits(seed, n, cfg.input_height, cfg.input_width);
  std::vector<RealTensor> out;
  for (const auto& px : d.pixels) out.push_back(to_tensor(px, d.rows, d.cols));
  return out;
}

}  // namespace

TEST_CASE("weight archive round trip") {
  TempDir dir("archive");
  NetworkConfig cfg = toy_network();
  QuantConfig q;
  for (auto fmt : {WeightFormat::Real32, WeightFormat::FixedQ8}) {
    auto a = generate_weights(3, cfg, fmt, q);
    CHECK_NOTHROW(a.validate());
    a.write(dir.path / to_string(fmt));
    auto b = WeightArchive::read(dir.path / to_string(fmt));
    CHECK(a == b);
    b.write(dir.path / "again");
    CHECK(slurp(dir.path / to_string(fmt) / "weights.bin") == slurp(dir.path / "again" / "weights.bin"));
    CHECK(slurp(dir.path / to_string(fmt) / "manifest.json") == slurp(dir.path / "again" / "manifest.json"));

    auto w = b.unpack(cfg);
    CHECK_NOTHROW(w.check_shapes(cfg));
    auto c = count_parameters(cfg);
    CHECK(w.total_elements() == c.trainable_total());
    size_t elements = 0;
    for (const auto& e : b.entries) elements += shape_size(e.shape);
    CHECK(elements == c.trainable_total());
  }
}

TEST_CASE("weights are on the weight grid and seeded") {
  NetworkConfig cfg = toy_network();
  QuantConfig q;
  auto a = generate_weights(1, cfg, WeightFormat::Real32, q);
  auto b = generate_weights(1, cfg, WeightFormat::Real32, q);
  auto c = generate_weights(2, cfg, WeightFormat::Real32, q);
  CHECK(a == b);
  CHECK(a.payload != c.payload);
  auto w = a.unpack(cfg);
  for (double v : w.classcaps_w.values) {
    REQUIRE(fx::quantize(v, q.weight).value() == v);
    REQUIRE(std::fabs(v) <= 0.25 * 0.5);
  }
  for (double v : w.primary_kernels.values) REQUIRE(std::fabs(v) <= 0.25 * 0.1);
  // Fixed and real archives carry the same values.
  auto wf = generate_weights(1, cfg, WeightFormat::FixedQ8, q).unpack(cfg);
  CHECK(wf.classcaps_w == w.classcaps_w);
  CHECK(wf.conv1_kernels == w.conv1_kernels);
}

TEST_CASE("corrupt archives are rejected") {
  TempDir dir("corrupt");
  NetworkConfig cfg = toy_network();
  auto a = generate_weights(1, cfg, WeightFormat::Real32);
  a.write(dir.path);

  auto manifest = nlohmann::json::parse(slurp(dir.path / "manifest.json"));
  auto tampered = manifest;
  tampered["tensors"][1]["offset"] = 1u << 30;
  std::ofstream(dir.path / "manifest.json") << tampered.dump(2);
  CHECK_THROWS_AS(WeightArchive::read(dir.path), InvalidArgument);

  tampered = manifest;
  tampered["tensors"][0]["length"] = 4;
  std::ofstream(dir.path / "manifest.json") << tampered.dump(2);
  CHECK_THROWS_AS(WeightArchive::read(dir.path), InvalidArgument);

  std::ofstream(dir.path / "manifest.json") << manifest.dump(2);
  CHECK_NOTHROW(WeightArchive::read(dir.path));
  auto payload = slurp(dir.path / "weights.bin");
  payload.pop_back();
  spit(dir.path / "weights.bin", payload);
  CHECK_THROWS_AS(WeightArchive::read(dir.path), InvalidArgument);

  // Archive for a different network.
  NetworkConfig other = cfg;
  other.classcaps.num_classes = 4;
  CHECK_THROWS_AS(a.unpack(other), InvalidArgument);
}

TEST_CASE("idx files") {
  TempDir dir("idx");
  auto d = synthetic_digits(4, 12);
  write_idx_images(dir.path / "img", d);
  write_idx_labels(dir.path / "lbl", d.labels);
  auto back = read_idx_images(dir.path / "img");
  CHECK(back.rows == 28);
  CHECK(back.cols == 28);
  CHECK(back.pixels == d.pixels);
  CHECK(read_idx_labels(dir.path / "lbl") == d.labels);
  auto tensors = load_mnist(dir.path / "img");
  REQUIRE(tensors.size() == 12);
  CHECK(tensors[0].shape == Shape{28, 28});
  CHECK(tensors[0].values[0] == d.pixels[0][0] / 255.0);

  auto bytes = slurp(dir.path / "img");
  // Truncated payload.
  spit(dir.path / "short", std::vector<char>(bytes.begin(), bytes.end() - 100));
  CHECK_THROWS_AS(read_idx_images(dir.path / "short"), ParseError);
  // Truncated header.
  spit(dir.path / "hdr", std::vector<char>(bytes.begin(), bytes.begin() + 6));
  CHECK_THROWS_AS(read_idx_images(dir.path / "hdr"), ParseError);
  // All-zero file: bad magic at offset 0.
  spit(dir.path / "zero", std::vector<char>(bytes.size(), 0));
  try {
    read_idx_images(dir.path / "zero");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 0);
  }
  // Labels file is not an image file.
  CHECK_THROWS_AS(read_idx_images(dir.path / "lbl"), ParseError);
  CHECK_THROWS(read_idx_images(dir.path / "missing"));
}

TEST_CASE("synthetic digits") {
  auto a = synthetic_digits(0, 30), b = synthetic_digits(0, 30), c = synthetic_digits(1, 30);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  CHECK(a.pixels != c.pixels);
  std::vector<int> count(10, 0);
  for (int l : a.labels) ++count[static_cast<size_t>(l)];
  for (int n : count) CHECK(n == 3);
  for (const auto& px : a.pixels) {
    int ink = 0;
    for (auto v : px) ink += v > 0;
    CHECK(ink > 20);
  }
}

TEST_CASE("config json") {
  Config c;
  c.net = toy_network();
  c.arch.fifo_capacity = 123;
  c.arch.primary_order = mapper::PrimaryLoopOrder::InputChannelOuter;
  c.quant.norm_shift_squash = 4;
  auto j = config_to_json(c);
  CHECK(config_from_json(j) == c);
  CHECK(config_from_json(nlohmann::json::object()) == Config{});

  auto bad = j;
  bad["network"]["bogus"] = 1;
  CHECK_THROWS_AS(config_from_json(bad), InvalidArgument);
  bad = j;
  bad["network"]["routing_iterations"] = 0;
  CHECK_THROWS_AS(config_from_json(bad), InvalidArgument);
  bad = j;
  bad["arch"]["primary_order"] = "sideways";
  CHECK_THROWS_AS(config_from_json(bad), InvalidArgument);

  CHECK(format_from_json(format_to_json(fx::unsigned_q(12, 0))) == fx::unsigned_q(12, 0));

  TempDir dir("config");
  std::ofstream(dir.path / "bad.json") << "{\"network\": ";
  CHECK_THROWS_AS(load_config(dir.path / "bad.json"), ParseError);
  std::ofstream(dir.path / "ok.json") << j.dump();
  CHECK(load_config(dir.path / "ok.json") == c);
}

TEST_CASE("score comparison") {
  auto m = compare_scores("real", {{0.1, 0.5}, {0.3, 0.2}}, {{0.2, 0.4}, {0.1, 0.3}});
  CHECK(m.images == 2);
  CHECK(m.max_abs == doctest::Approx(0.2));
  CHECK(m.mean_abs == doctest::Approx((0.1 + 0.1 + 0.2 + 0.1) / 4));
  CHECK(m.argmax_agreement == doctest::Approx(0.5));
}

TEST_CASE("runs") {
  Config c;
  c.net = toy_network();
  auto w = generate_weights(0, c.net, WeightFormat::Real32, c.quant, {0.25, 1, 1, 1}).unpack(c.net);

  RunOptions o;
  o.config = c;
  o.mode = Mode::Sim;
  auto empty = run(o, w, {});
  CHECK(empty.images.empty());
  CHECK(to_json(empty)["images"].empty());

  auto images = toy_images(6, 1);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  o.threads = 1;
  auto one = run(o, w, images, labels);
  o.threads = 3;
  auto three = run(o, w, images, labels);
  CHECK(to_json(one) == to_json(three));
  CHECK(to_json(one).dump() == to_json(run(o, w, images, labels)).dump());
  REQUIRE(one.images.size() == 6);
  for (const auto& r : one.images) {
    // Sim mode is bit-exact to the golden model.
    CHECK(r.scores == r.fixed_scores);
    CHECK(r.cycles > 0);
  }
  REQUIRE(one.metrics.size() == 2);
  CHECK(one.metrics[0].reference == "fixed");
  CHECK(one.metrics[0].max_abs == 0.0);
  CHECK(one.metrics[0].argmax_agreement == 1.0);
  CHECK(one.accuracy.has_value());
  CHECK(one.cycles.has_value());
  CHECK_FALSE(to_text(one).empty());

  // Fixed mode reports the real reference only.
  o.mode = Mode::Fixed;
  auto fixed = run(o, w, images);
  REQUIRE(fixed.metrics.size() == 1);
  CHECK(fixed.metrics[0].reference == "real");
  CHECK_FALSE(fixed.accuracy.has_value());
  for (size_t i = 0; i < 6; ++i) CHECK(fixed.images[i].scores == one.images[i].scores);

  o.compare = false;
  o.mode = Mode::Real;
  auto real = run(o, w, images);
  CHECK(real.metrics.empty());
  CHECK(real.images[0].real_scores.empty());

  CHECK(mode_from_string("sim") == Mode::Sim);
  CHECK_THROWS_AS(mode_from_string("gpu"), InvalidArgument);
  CHECK(weight_format_from_string("fixed_q8") == WeightFormat::FixedQ8);
}

TEST_CASE("dense matmul throughput") {
  mapper::ArchConfig arch;
  QuantConfig q;
  auto r = dense_matmul_throughput(arch, q, 1100, 0);
  CHECK(r.results_match);
  CHECK(r.outputs == 1100u * 16);
  CHECK(r.full_output_cycles >= 1000);
  CHECK_THROWS_AS(dense_matmul_throughput(arch, q, 0), InvalidArgument);
}

TEST_CASE("quick verification passes") {
  VerifyOptions o;
  o.full_shapes = false;
  auto results = verify(o);
  CHECK(all_passed(results));
  CHECK(results.size() >= 7);
  CHECK_FALSE(to_text(results).empty());
}
