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

// capsacc: weight generation, inference runs in real / fixed / sim mode,
// synthetic digit sets and the verification battery.
//
// Exit codes: 0 success, 1 verification or runtime failure, 2 usage or
// input parse error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "capsacc/harness.hpp"

namespace fs = std::filesystem;
using namespace capsacc;
using namespace capsacc::harness;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

Config load_or_default(const std::string& path) { return path.empty() ? Config{} : load_config(path); }

fs::path trace_dir(const std::string& fallback) {
  if (const char* env = std::getenv("CAPSACC_TRACE_DIR"); env && *env) return env;
  return fallback.empty() ? fs::path(".") : fs::path(fallback);
}

// Sibling label file of an IDX image file ("...images-idx3-ubyte" ->
// "...labels-idx1-ubyte"), if present.
std::optional<fs::path> sibling_labels(const fs::path& images) {
  std::string name = images.filename().string();
  auto at = name.find("images-idx3-ubyte");
  if (at == std::string::npos) return std::nullopt;
  name.replace(at, std::string("images-idx3-ubyte").size(), "labels-idx1-ubyte");
  fs::path p = images.parent_path() / name;
  return fs::exists(p) ? std::optional(p) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CapsuleNet accelerator simulator"};
  app.require_subcommand(1);

  // gen-weights
  auto* gen = app.add_subcommand("gen-weights", "Generate a reproducible random weight archive");
  uint64_t gen_seed = 0;
  std::string gen_out, gen_format = "real32", gen_config;
  WeightInit init;
  gen->add_option("--seed", gen_seed, "RNG seed")->default_val(0);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--format", gen_format, "real32 or fixed_q8")->check(CLI::IsMember({"real32", "fixed_q8"}));
  gen->add_option("--config", gen_config, "JSON configuration file");
  gen->add_option("--range", init.range, "Base half-width of the uniform weights")->default_val(init.range);
  gen->add_option("--conv1-gain", init.conv1_gain, "Range multiplier for conv1")->default_val(init.conv1_gain);
  gen->add_option("--primary-gain", init.primary_gain, "Range multiplier for primarycaps")
      ->default_val(init.primary_gain);
  gen->add_option("--classcaps-gain", init.classcaps_gain, "Range multiplier for classcaps")
      ->default_val(init.classcaps_gain);

  // gen-digits
  auto* digits = app.add_subcommand("gen-digits", "Write a synthetic handwritten-digit set as IDX files");
  uint64_t dig_seed = 0;
  size_t dig_count = 100;
  std::string dig_out;
  digits->add_option("--seed", dig_seed, "RNG seed")->default_val(0);
  digits->add_option("--count", dig_count, "Number of images")->default_val(100);
  digits->add_option("--out", dig_out, "Output directory")->required();

  // run
  auto* run_cmd = app.add_subcommand("run", "Run inference on IDX images");
  std::string run_weights, run_mnist, run_labels, run_mode = "fixed", run_report, run_format = "json", run_config;
  int run_iters = -1;
  size_t run_limit = 0;
  unsigned run_threads = 0;
  bool run_trace = false, run_no_compare = false;
  uint64_t run_trace_limit = 100000;
  std::optional<uint64_t> run_seed;
  run_cmd->add_option("--weights", run_weights, "Weight archive directory")->required();
  run_cmd->add_option("--mnist", run_mnist, "IDX image file")->required();
  run_cmd->add_option("--labels", run_labels, "IDX label file (default: sibling of --mnist if present)");
  run_cmd->add_option("--mode", run_mode, "real, fixed or sim")->check(CLI::IsMember({"real", "fixed", "sim"}));
  run_cmd->add_option("--routing-iters", run_iters, "Routing iterations (overrides the config)");
  run_cmd->add_option("--limit", run_limit, "Process at most K images (0 = all)");
  run_cmd->add_option("--report", run_report, "Report path (default: stdout)");
  run_cmd->add_option("--format", run_format, "json or text")->check(CLI::IsMember({"json", "text"}));
  run_cmd->add_option("--config", run_config, "JSON configuration file");
  run_cmd->add_option("--threads", run_threads, "Worker threads (0 = hardware concurrency)");
  run_cmd->add_option("--seed", run_seed, "Seed recorded in the report (default: the archive's seed)");
  run_cmd->add_flag("--trace", run_trace, "Write a per-cycle trace of image 0 (sim mode)");
  run_cmd->add_option("--trace-limit", run_trace_limit, "Cycles traced (0 = unlimited)");
  run_cmd->add_flag("--no-compare", run_no_compare, "Skip the cross-mode reference runs");

  // verify
  auto* ver = app.add_subcommand("verify", "Run the invariant battery");
  std::string ver_config, ver_weights;
  bool ver_quick = false;
  uint64_t ver_seed = 0;
  ver->add_option("--config", ver_config, "JSON configuration file");
  ver->add_option("--weights", ver_weights, "Weight archive for the full-size comparison");
  ver->add_option("--seed", ver_seed, "Seed of the generated test data")->default_val(0);
  ver->add_flag("--quick", ver_quick, "Skip the full-size simulation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      Config cfg = load_or_default(gen_config);
      auto a = generate_weights(gen_seed, cfg.net, weight_format_from_string(gen_format), cfg.quant, init);
      a.write(gen_out);
      std::cout << "wrote " << a.entries.size() << " tensors (" << a.payload.size() << " bytes) to " << gen_out << "\n";
      return kOk;
    }

    if (*digits) {
      ImageSet set = synthetic_digits(dig_seed, dig_count);
      fs::create_directories(dig_out);
      write_idx_images(fs::path(dig_out) / "images-idx3-ubyte", set);
      write_idx_labels(fs::path(dig_out) / "labels-idx1-ubyte", set.labels);
      std::cout << "wrote " << set.pixels.size() << " digits to " << dig_out << "\n";
      return kOk;
    }

    if (*run_cmd) {
      RunOptions opts;
      opts.config = load_or_default(run_config);
      if (run_iters >= 0) opts.config.net.routing_iterations = run_iters;
      opts.config.validate();
      opts.mode = mode_from_string(run_mode);
      opts.compare = !run_no_compare;
      opts.threads = run_threads;
      opts.weights_source = run_weights;
      opts.input_source = run_mnist;

      WeightArchive archive = WeightArchive::read(run_weights);
      WeightSet weights = archive.unpack(opts.config.net);
      opts.seed = run_seed.value_or(archive.seed);

      ImageSet set = read_idx_images(run_mnist);
      if (set.rows != opts.config.net.input_height || set.cols != opts.config.net.input_width) {
        throw ParseError(run_mnist, 8, "dimension mismatch: network expects " +
                                           std::to_string(opts.config.net.input_height) + "x" +
                                           std::to_string(opts.config.net.input_width) + ", file holds " +
                                           std::to_string(set.rows) + "x" + std::to_string(set.cols));
      }
      std::vector<int> labels;
      if (!run_labels.empty()) {
        labels = read_idx_labels(run_labels);
      } else if (auto p = sibling_labels(run_mnist)) {
        labels = read_idx_labels(*p);
      }
      if (!labels.empty() && labels.size() != set.pixels.size()) {
        throw InvalidArgument("label count " + std::to_string(labels.size()) + " does not match image count " +
                              std::to_string(set.pixels.size()));
      }
      size_t count = run_limit ? std::min(run_limit, set.pixels.size()) : set.pixels.size();
      std::vector<RealTensor> images;
      for (size_t i = 0; i < count; ++i) images.push_back(to_tensor(set.pixels[i], set.rows, set.cols));
      if (!labels.empty()) labels.resize(count);

      std::ofstream trace;
      if (run_trace && opts.mode == Mode::Sim) {
        fs::path dir = trace_dir(run_report.empty() ? "" : fs::path(run_report).parent_path().string());
        fs::create_directories(dir);
        trace.open(dir / "trace_image0.txt", std::ios::trunc);
        if (!trace) throw std::runtime_error("cannot open trace file in " + dir.string());
        opts.trace = &trace;
        opts.trace_limit = run_trace_limit;
      }

      RunReport report = run(opts, weights, images, labels);
      std::string text = run_format == "json" ? to_json(report).dump(2) + "\n" : to_text(report);
      if (run_report.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(run_report, std::ios::trunc);
        out << text;
        if (!out) throw std::runtime_error("cannot write " + run_report);
      }
      return kOk;
    }

    if (*ver) {
      VerifyOptions opts;
      opts.config = load_or_default(ver_config);
      opts.full_shapes = !ver_quick;
      opts.seed = ver_seed;
      if (!ver_weights.empty()) opts.weights = fs::path(ver_weights);
      auto results = verify(opts);
      std::cout << to_text(results);
      bool ok = all_passed(results);
      std::cout << (ok ? "verify: all checks passed\n" : "verify: FAILED\n");
      return ok ? kOk : kFailure;
    }
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
