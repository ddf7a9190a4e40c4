#include "melu/digest.hpp"

#include <bit>
#include <cstdio>

namespace melu {

namespace {
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;
}

Digest& Digest::update(std::string_view bytes) {
  for (unsigned char c : bytes) {
    state_ ^= c;
    state_ *= kFnvPrime;
  }
  // Length terminator keeps ("ab","c") distinct from ("a","bc").
  return update(static_cast<std::uint64_t>(bytes.size()));
}

Digest& Digest::update(std::uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    state_ ^= (value >> (8 * i)) & 0xffU;
    state_ *= kFnvPrime;
  }
  return *this;
}

Digest& Digest::update(std::int64_t value) {
  return update(static_cast<std::uint64_t>(value));
}

Digest& Digest::update(double value) {
  return update(std::bit_cast<std::uint64_t>(value));
}

std::string Digest::hex() const { return to_hex(state_); }

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace melu
