#include "mgmf/common.hpp"

namespace mgmf {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix_u64(std::uint64_t a, std::uint64_t b) {
  SplitMix64 s(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
  return s.next();
}

}  // namespace mgmf
