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

#include "capsacc/accel.hpp"

namespace capsacc::accel {

std::string to_hex(int64_t value, int bits) {
  uint64_t mask = bits >= 64 ? ~uint64_t{0} : (uint64_t{1} << bits) - 1;
  char buf[24];
  std::snprintf(buf, sizeof buf, "%0*llx", (bits + 3) / 4,
                static_cast<unsigned long long>(static_cast<uint64_t>(value) & mask));
  return buf;
}

void Tracer::line(uint64_t cycle, const std::string& unit, const std::string& port, std::span<const int32_t> values,
                  int bits) {
  if (!out_) return;
  *out_ << cycle << ' ' << unit << ' ' << port << '=';
  for (size_t i = 0; i < values.size(); ++i) *out_ << (i ? "," : "") << to_hex(values[i], bits);
  *out_ << '\n';
}

}  // namespace capsacc::accel
