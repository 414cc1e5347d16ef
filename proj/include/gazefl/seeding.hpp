#pragma once

#include <cstdint>
#include <initializer_list>

namespace gazefl {

// splitmix64 finalizer; decorrelates nearby seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Derives a stream seed from a master seed and a list of stream tags
// (participant id, round, purpose, ...).
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t s = mix64(master);
  for (std::uint64_t tag : tags) s = mix64(s ^ mix64(tag + 0x632BE59BD9B4E019ULL));
  return s;
}

// Stream purposes, kept distinct so streams never alias.
enum class Stream : std::uint64_t {
  Synth = 1,
  Noise = 2,
  Split = 3,
  Cohort = 4,
  LocalShuffle = 5,
  Init = 6,
  Imbalance = 7,
  SkewLayout = 8,
  NoisyPick = 9,
};

constexpr std::uint64_t tag(Stream s) noexcept { return static_cast<std::uint64_t>(s); }

}  // namespace gazefl
