#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ssetdyn {

// FNV-1a, 64 bit.
class Fnv1a {
 public:
  void add(std::string_view bytes) {
    for (unsigned char c : bytes) {
      hash_ ^= c;
      hash_ *= 1099511628211ULL;
    }
  }
  void add(double v);
  void add(std::int64_t v);
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 14695981039346656037ULL;
};

std::string hex_digest(std::uint64_t h);

// %.12g text used in CSV output.
std::string format_number(double v);

}  // namespace ssetdyn
