#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

// Deterministic RNG streams. All randomness in the library flows from one
// master seed; every task (a fold split, a tree, a replication) derives its
// own stream from (seed, path tags), so results do not depend on evaluation
// order and identical seeds give identical output bit for bit.

namespace klshift {

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : state_(detail::mix64(key)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform on [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // standard normal via Box-Muller; pairs are cached
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0x1.0p-60) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Fisher-Yates shuffle of an index vector
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Derives the stream key for a task identified by a tag path, e.g.
// derive_stream(seed, {kTagFolds}) or derive_stream(seed, {kTagTree, fold, t}).
inline RngStream derive_stream(std::uint64_t seed,
                               std::initializer_list<std::uint64_t> path) {
  std::uint64_t key = detail::mix64(seed ^ 0x5851f42d4c957f2dULL);
  for (std::uint64_t tag : path) key = detail::mix64(key ^ detail::mix64(tag));
  return RngStream(key);
}

// Fixed stream tags; one per randomness consumer.
inline constexpr std::uint64_t kTagFolds = 1;
inline constexpr std::uint64_t kTagTree = 2;
inline constexpr std::uint64_t kTagSplit = 3;
inline constexpr std::uint64_t kTagDgpX = 4;
inline constexpr std::uint64_t kTagDgpD = 5;
inline constexpr std::uint64_t kTagDgpU = 6;
inline constexpr std::uint64_t kTagMcRep = 7;
inline constexpr std::uint64_t kTagSubsample = 8;

}  // namespace klshift
