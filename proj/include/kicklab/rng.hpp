#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>

namespace kicklab {

/// Purpose tag mixed into the stream key so that draws for different roles
/// (initial states, kicks, burn-in, calibration) never share a stream.
enum class StreamPurpose : std::uint64_t {
  kInitial = 1,
  kKick = 2,
  kBurnIn = 3,
  kCalibration = 4,
  kCoupling = 5,
  kBootstrap = 6,
  kSampler = 7,
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

/// Counter-keyed random stream. The state is a pure function of
/// (master seed, trajectory index, step index, purpose), so ensembles can be
/// generated in any order or on any number of threads with identical results.
///
/// Generator: xoshiro256** seeded through splitmix64. Satisfies
/// UniformRandomBitGenerator so it plugs into <random> distributions.
class Stream {
 public:
  using result_type = std::uint64_t;

  Stream(std::uint64_t master_seed, std::uint64_t trajectory, std::uint64_t step,
         StreamPurpose purpose = StreamPurpose::kKick) {
    std::uint64_t key = detail::splitmix64(master_seed);
    key = detail::splitmix64(key ^ detail::splitmix64(trajectory + 0x632BE59BD9B4E019ULL));
    key = detail::splitmix64(key ^ detail::splitmix64(step + 0x8CB92BA72F3D8DD7ULL));
    key = detail::splitmix64(key ^ static_cast<std::uint64_t>(purpose));
    for (auto& s : state_) {
      key += 0x9E3779B97F4A7C15ULL;
      s = detail::splitmix64(key);
    }
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  double normal() { return normal_(*this); }

  /// Uniform index in [0, n) by rejection-free multiply-shift.
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
  }

 private:
  std::uint64_t state_[4];
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace kicklab
