// SPDX-License-Identifier: Apache-2.0
#include "metaxp/checksum.hpp"

#include <cstdio>

namespace metaxp {

void Fnv1a64::update(std::span<const std::uint8_t> bytes) {
  for (auto b : bytes) {
    state_ ^= b;
    state_ *= 0x100000001b3ULL;
  }
}

void Fnv1a64::update(std::string_view text) {
  update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace metaxp
