#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace frame {

// Counter-based random stream (Philox 4x32-10, Salmon et al. 2011).
// Streams are keyed by (master_seed, stream_id); distinct stream ids occupy
// disjoint counter prefixes, so chains drawing from their own streams are
// independent of scheduling order.
class PhiloxStream {
 public:
  PhiloxStream() : PhiloxStream(0, 0) {}

  PhiloxStream(std::uint64_t master_seed, std::uint64_t stream_id) {
    key_[0] = static_cast<std::uint32_t>(master_seed);
    key_[1] = static_cast<std::uint32_t>(master_seed >> 32);
    counter_[0] = static_cast<std::uint32_t>(stream_id);
    counter_[1] = static_cast<std::uint32_t>(stream_id >> 32);
    counter_[2] = 0;
    counter_[3] = 0;
  }

  // Uniform in (0, 1].
  double uniform() {
    return (static_cast<double>(next_u32()) + 1.0) * 0x1p-32;
  }

  // Standard normal via Box-Muller; one draw is cached per pair.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

  std::uint32_t next_u32() {
    if (block_pos_ == 4) {
      block_ = philox_block(counter_, key_);
      // Block index lives in words 2..3; words 0..1 hold the stream id.
      if (++counter_[2] == 0) ++counter_[3];
      block_pos_ = 0;
    }
    return block_[block_pos_++];
  }

 private:
  static constexpr std::uint32_t kW32A = 0x9E3779B9u;
  static constexpr std::uint32_t kW32B = 0xBB67AE85u;
  static constexpr std::uint32_t kM4x32A = 0xD2511F53u;
  static constexpr std::uint32_t kM4x32B = 0xCD9E8D57u;

  static std::array<std::uint32_t, 4> philox_block(
      std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM4x32A) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM4x32B) * ctr[2];
      const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kW32A;
      key[1] += kW32B;
    }
    return ctr;
  }

  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 4> counter_{};
  std::array<std::uint32_t, 4> block_{};
  int block_pos_ = 4;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace frame
