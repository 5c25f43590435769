#include "ssetdyn/fingerprint.hpp"

#include <cstdio>

namespace ssetdyn {

void Fnv1a::add(double v) {
  char buf[40];
  int len = std::snprintf(buf, sizeof buf, "%.17g;", v);
  add(std::string_view(buf, static_cast<std::size_t>(len)));
}

void Fnv1a::add(std::int64_t v) {
  char buf[32];
  int len = std::snprintf(buf, sizeof buf, "%lld;", static_cast<long long>(v));
  add(std::string_view(buf, static_cast<std::size_t>(len)));
}

std::string hex_digest(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace ssetdyn
