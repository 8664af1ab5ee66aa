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
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "capsacc/harness.hpp"

namespace capsacc {

ParseError::ParseError(const std::string& file, uint64_t offset, const std::string& what)
    : std::runtime_error(file + ": byte " + std::to_string(offset) + ": " + what), offset_(offset) {}

namespace harness {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

uint32_t be32(const std::vector<uint8_t>& b, size_t at, const std::string& file) {
  if (b.size() < at + 4) {
    throw ParseError(file, b.size(), "truncated header: expected " + std::to_string(at + 4) + " bytes, got " +
                                         std::to_string(b.size()));
  }
  return (uint32_t{b[at]} << 24) | (uint32_t{b[at + 1]} << 16) | (uint32_t{b[at + 2]} << 8) | uint32_t{b[at + 3]};
}

void put_be32(std::vector<uint8_t>& b, uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<uint8_t>(v >> s));
}

void check_magic(const std::vector<uint8_t>& b, uint32_t want, const std::string& file) {
  uint32_t magic = be32(b, 0, file);
  if (magic != want) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08x, expected 0x%08x", magic, want);
    throw ParseError(file, 0, buf);
  }
}

void check_payload(const std::vector<uint8_t>& b, size_t header, uint64_t expected, const std::string& file) {
  uint64_t got = b.size() - header;
  if (got < expected) {
    throw ParseError(file, b.size(), "truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                                         std::to_string(got));
  }
  if (got > expected) {
    throw ParseError(file, header + expected, "trailing data: expected " + std::to_string(expected) +
                                                  " payload bytes, got " + std::to_string(got));
  }
}

void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

ImageSet read_idx_images(const std::filesystem::path& path) {
  const std::string file = path.string();
  auto b = read_file(path);
  check_magic(b, kImageMagic, file);
  uint32_t n = be32(b, 4, file), rows = be32(b, 8, file), cols = be32(b, 12, file);
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096) {
    throw ParseError(file, 8, "implausible image size " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  uint64_t per = uint64_t{rows} * cols;
  check_payload(b, 16, per * n, file);
  ImageSet set;
  set.rows = static_cast<int>(rows);
  set.cols = static_cast<int>(cols);
  set.pixels.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    auto first = b.begin() + static_cast<std::ptrdiff_t>(16 + per * i);
    set.pixels[i].assign(first, first + static_cast<std::ptrdiff_t>(per));
  }
  return set;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path) {
  const std::string file = path.string();
  auto b = read_file(path);
  check_magic(b, kLabelMagic, file);
  uint32_t n = be32(b, 4, file);
  check_payload(b, 8, n, file);
  return {b.begin() + 8, b.end()};
}

void write_idx_images(const std::filesystem::path& path, const ImageSet& images) {
  std::vector<uint8_t> b;
  put_be32(b, kImageMagic);
  put_be32(b, static_cast<uint32_t>(images.pixels.size()));
  put_be32(b, static_cast<uint32_t>(images.rows));
  put_be32(b, static_cast<uint32_t>(images.cols));
  auto per = static_cast<size_t>(images.rows) * static_cast<size_t>(images.cols);
  for (const auto& img : images.pixels) {
    if (img.size() != per) throw InvalidArgument("write_idx_images: image size does not match rows x cols");
    b.insert(b.end(), img.begin(), img.end());
  }
  write_file(path, b);
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::vector<uint8_t> b;
  put_be32(b, kLabelMagic);
  put_be32(b, static_cast<uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw InvalidArgument("write_idx_labels: label out of range");
    b.push_back(static_cast<uint8_t>(l));
  }
  write_file(path, b);
}

RealTensor to_tensor(const std::vector<uint8_t>& pixels, int rows, int cols) {
  RealTensor t({static_cast<size_t>(rows), static_cast<size_t>(cols)});
  if (pixels.size() != t.values.size()) throw InvalidArgument("to_tensor: pixel count does not match rows x cols");
  for (size_t i = 0; i < pixels.size(); ++i) t.values[i] = pixels[i] / 255.0;
  return t;
}

std::vector<RealTensor> load_mnist(const std::filesystem::path& path) {
  ImageSet set = read_idx_images(path);
  if (set.rows != 28 || set.cols != 28) {
    throw ParseError(path.string(), 8, "dimension mismatch: expected 28x28, got " + std::to_string(set.rows) + "x" +
                                           std::to_string(set.cols));
  }
  std::vector<RealTensor> out;
  out.reserve(set.pixels.size());
  for (const auto& p : set.pixels) out.push_back(to_tensor(p, set.rows, set.cols));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic digits.

namespace {

struct Pt {
  double x, y;
};
using Stroke = std::vector<Pt>;

Stroke ellipse(double cx, double cy, double rx, double ry, double a0 = 0.0, double a1 = 2 * std::numbers::pi,
               int steps = 20) {
  Stroke s;
  for (int i = 0; i <= steps; ++i) {
    double a = a0 + (a1 - a0) * i / steps;
    s.push_back({cx + rx * std::sin(a), cy - ry * std::cos(a)});
  }
  return s;
}

// Glyphs in a unit box, x to the right and y downwards.
const std::array<std::vector<Stroke>, 10>& glyphs() {
  static const std::array<std::vector<Stroke>, 10> g = [] {
    const double pi = std::numbers::pi;
    std::array<std::vector<Stroke>, 10> d;
    d[0] = {ellipse(0.5, 0.5, 0.3, 0.45)};
    d[1] = {{{0.35, 0.2}, {0.55, 0.05}, {0.55, 0.95}}};
    d[2] = {{{0.2, 0.25}, {0.35, 0.07}, {0.65, 0.07}, {0.8, 0.27}, {0.7, 0.5}, {0.2, 0.95}, {0.85, 0.95}}};
    d[3] = {{{0.2, 0.1}, {0.75, 0.1}, {0.45, 0.45}, {0.75, 0.6}, {0.75, 0.85}, {0.5, 0.97}, {0.2, 0.88}}};
    d[4] = {{{0.65, 0.95}, {0.65, 0.05}, {0.15, 0.65}, {0.85, 0.65}}};
    d[5] = {{{0.8, 0.05}, {0.25, 0.05}, {0.2, 0.45}, {0.55, 0.4}, {0.8, 0.6}, {0.75, 0.85}, {0.5, 0.97}, {0.2, 0.88}}};
    d[6] = {{{0.72, 0.05}, {0.4, 0.35}, {0.23, 0.7}}, ellipse(0.5, 0.72, 0.27, 0.24)};
    d[7] = {{{0.15, 0.05}, {0.85, 0.05}, {0.4, 0.95}}};
    d[8] = {ellipse(0.5, 0.27, 0.24, 0.22), ellipse(0.5, 0.72, 0.29, 0.24)};
    d[9] = {ellipse(0.5, 0.3, 0.27, 0.25, 0.0, 2 * pi), {{0.77, 0.3}, {0.65, 0.95}}};
    return d;
  }();
  return g;
}

double segment_distance(Pt p, Pt a, Pt b) {
  double vx = b.x - a.x, vy = b.y - a.y;
  double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / len2, 0.0, 1.0) : 0.0;
  double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Platform-independent uniform draws from the 64-bit Mersenne Twister.
struct Rng {
  std::mt19937_64 gen;
  explicit Rng(uint64_t seed) : gen(seed) {}
  double uniform(double lo, double hi) { return lo + (hi - lo) * static_cast<double>(gen() >> 11) * 0x1.0p-53; }
  size_t below(size_t n) { return static_cast<size_t>(gen() % n); }
};

std::vector<uint8_t> render(int digit, Rng& rng, int rows, int cols) {
  const double box = 20.0 * std::min(rows, cols) / 28.0;
  double scale = box * rng.uniform(0.8, 1.0);
  double aspect = rng.uniform(0.75, 1.05);
  double angle = rng.uniform(-0.2, 0.2);
  double shear = rng.uniform(-0.25, 0.25);
  double radius = rng.uniform(0.9, 1.6) * box / 20.0;
  double cx = cols / 2.0 + rng.uniform(-1.5, 1.5);
  double cy = rows / 2.0 + rng.uniform(-1.5, 1.5);

  double ca = std::cos(angle), sa = std::sin(angle);
  std::vector<std::pair<Pt, Pt>> segs;
  for (const Stroke& s : glyphs()[static_cast<size_t>(digit)]) {
    std::vector<Pt> pts;
    for (Pt p : s) {
      double x = (p.x - 0.5) * scale * aspect, y = (p.y - 0.5) * scale;
      x += shear * y;
      pts.push_back({cx + ca * x - sa * y, cy + sa * x + ca * y});
    }
    for (size_t i = 1; i < pts.size(); ++i) segs.emplace_back(pts[i - 1], pts[i]);
  }

  std::vector<uint8_t> img(static_cast<size_t>(rows) * static_cast<size_t>(cols), 0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Pt p{c + 0.5, r + 0.5};
      double d = 1e9;
      for (const auto& [a, b] : segs) d = std::min(d, segment_distance(p, a, b));
      double ink = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      img[static_cast<size_t>(r * cols + c)] = static_cast<uint8_t>(std::lround(255.0 * ink));
    }
  }
  return img;
}

}  // namespace

ImageSet synthetic_digits(uint64_t seed, size_t count, int rows, int cols) {
  if (rows < 8 || cols < 8) throw InvalidArgument("synthetic_digits: frame must be at least 8x8");
  Rng rng(seed);
  ImageSet set;
  set.rows = rows;
  set.cols = cols;
  set.labels.resize(count);
  for (size_t i = 0; i < count; ++i) set.labels[i] = static_cast<int>(i % 10);
  for (size_t i = count; i > 1; --i) std::swap(set.labels[i - 1], set.labels[rng.below(i)]);
  set.pixels.reserve(count);
  for (int label : set.labels) set.pixels.push_back(render(label, rng, rows, cols));
  return set;
}

}  // namespace harness
}  // namespace capsacc
