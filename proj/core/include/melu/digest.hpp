#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace melu {

// Incremental FNV-1a (64-bit). Used for schema, config and dataset digests;
// not a cryptographic hash.
class Digest {
 public:
  Digest& update(std::string_view bytes);
  Digest& update(std::int64_t value);
  Digest& update(std::uint64_t value);
  Digest& update(double value);

  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);

}  // namespace melu
