#ifndef RECALL_UTIL_HPP
#define RECALL_UTIL_HPP

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace recall {

using Rng = std::mt19937_64;

// Stateless seed mixing, used to derive independent per-component streams
// from one run seed.
std::uint64_t splitmix64(std::uint64_t x);

std::uint64_t fnv1a(std::string_view s);

// Derived seed for component `tag` (optionally indexed). Same inputs always
// yield the same seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                          std::uint64_t index = 0);

// Index sampled from unnormalized nonnegative weights via one uniform draw.
int sample_weighted(const std::vector<double>& weights, Rng& rng);

double median(std::vector<double> v);
double mean(const std::vector<double>& v);
// Sample standard error of the mean; 0 for fewer than two values.
double stderr_of_mean(const std::vector<double>& v);

}  // namespace recall

#endif
