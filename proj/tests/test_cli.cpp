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

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "capsacc/harness.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / ("capsacc_cli_" + std::to_string(::getpid()));

int cli(const std::string& args) {
  std::string cmd = std::string(CAPSACC_CLI) + " " + args + " >" + (kDir / "stdout").string() + " 2>" +
                    (kDir / "stderr").string();
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string p(const std::string& name) { return (kDir / name).string(); }

struct Setup {
  Setup() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
    capsacc::harness::Config toy;
    toy.net = capsacc::toy_network();
    std::ofstream(kDir / "toy.json") << capsacc::harness::config_to_json(toy).dump(2);
  }
  ~Setup() { fs::remove_all(kDir); }
};

}  // namespace

TEST_CASE("cli exit codes") {
  Setup s;
  CHECK(cli("") == 2);
  CHECK(cli("--bogus") == 2);
  CHECK(cli("run") == 2);
  CHECK(cli("gen-weights --out " + p("w") + " --format float64") == 2);

  REQUIRE(cli("gen-weights --seed 0 --out " + p("w")) == 0);
  REQUIRE(cli("gen-digits --seed 0 --count 3 --out " + p("d")) == 0);
  CHECK(fs::exists(kDir / "d" / "images-idx3-ubyte"));
  CHECK(fs::exists(kDir / "d" / "labels-idx1-ubyte"));

  const std::string base = "run --weights " + p("w") + " --mnist " + p("d/images-idx3-ubyte");
  CHECK(cli(base + " --mode fixed --routing-iters 0") == 2);
  CHECK(cli(base + " --mode tpu") == 2);
  CHECK(cli(base + " --mode fixed --config " + p("missing.json")) == 2);
  CHECK(cli("run --weights " + p("nowhere") + " --mnist " + p("d/images-idx3-ubyte")) == 2);
  CHECK(cli("run --weights " + p("w") + " --mnist " + p("d/labels-idx1-ubyte")) == 2);

  REQUIRE(cli(base + " --mode fixed --limit 2 --report " + p("r.json")) == 0);
  auto report = nlohmann::json::parse(std::ifstream(kDir / "r.json"));
  CHECK(report["schema_version"] == 1);
  CHECK(report["mode"] == "fixed");
  CHECK(report["images"].size() == 2);
  CHECK(report["images"][0].contains("label"));

  REQUIRE(cli(base + " --mode real --limit 1 --format text --report " + p("r.txt")) == 0);
  CHECK(fs::file_size(kDir / "r.txt") > 0);
}

TEST_CASE("verify exit codes") {
  Setup s;
  const std::string toy = " --config " + p("toy.json");
  REQUIRE(cli("gen-weights --seed 1 --out " + p("tw") + toy) == 0);
  CHECK(cli("verify --quick --weights " + p("tw") + toy) == 0);

  auto manifest = nlohmann::json::parse(std::ifstream(kDir / "tw" / "manifest.json"));
  manifest["tensors"][2]["offset"] = 1u << 30;
  std::ofstream(kDir / "tw" / "manifest.json") << manifest.dump(2);
  CHECK(cli("verify --quick --weights " + p("tw") + toy) == 1);

  std::ofstream(kDir / "bad.json") << "{\"network\": {\"routing_iterations\": 0}}";
  CHECK(cli("verify --quick --config " + p("bad.json")) == 2);
}
