#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rvae {

/// Child seed for a named component. Every run owns one root seed and each
/// subsystem draws from its own stream, so reordering subsystems does not
/// shift anyone else's random numbers.
std::uint64_t derive_seed(std::uint64_t root, std::string_view component);

inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view component) {
  return std::mt19937_64(derive_seed(root, component));
}

}  // namespace rvae
