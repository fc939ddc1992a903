#include "stedr/common.hpp"

#include <cstdio>
#include <fstream>

namespace stedr {

std::string Fnv1a64::hex() const {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
  return std::string(buf);
}

std::string digest_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open file for digest: " + path);
  Fnv1a64 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string digest_bytes(std::string_view bytes) {
  Fnv1a64 h;
  h.update(bytes);
  return h.hex();
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) k = n;
  auto idx = iota_indices(n);
  // partial Fisher-Yates: first k positions are the sample
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(n - i) - 1));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace stedr
