#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace ccodec {

// splitmix64 finaliser; used to derive independent, reproducible sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix_seed(mix_seed(base) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

inline Eigen::VectorXd standard_normal_vector(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::VectorXd v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = n01(rng);
  return v;
}

}  // namespace ccodec
