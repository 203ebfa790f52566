#include "seqoed/rng.hpp"

#include <vector>

namespace seqoed {

namespace {

// FNV-1a, only used to turn stream names into seed words.
std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

Rng substream(std::uint64_t root_seed, std::string_view name,
              std::initializer_list<std::uint64_t> indices) {
  std::vector<std::uint32_t> words;
  auto push64 = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push64(root_seed);
  push64(hash_name(name));
  push64(indices.size());
  for (auto i : indices) push64(i);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

double standard_normal(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  return normal(rng);
}

}  // namespace seqoed
