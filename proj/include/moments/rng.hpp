#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace moments {

using Engine = std::mt19937_64;

/// Independent random streams used by a run. Each tag owns a disjoint key space.
enum class Stream : std::uint64_t {
  Input = 1,
  Noise = 2,
  Weights = 3,
  InitialConv = 4,
  Probe = 5,
  Demo = 6,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Hashes (master, stream, a, b, c) into a 64-bit seed. Changing any coordinate gives an unrelated seed.
std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0,
                          std::uint64_t c = 0);

Engine make_engine(std::uint64_t master, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0,
                   std::uint64_t c = 0);

void fill_normal(Engine& engine, std::span<double> out, double mean = 0.0, double stddev = 1.0);

}  // namespace moments
