#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace distmark {

std::array<std::uint8_t, 32> sha256(const std::uint8_t* data, std::size_t len);
std::array<std::uint8_t, 32> sha256(const std::vector<std::uint8_t>& bytes);
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> bytes_from_string(const std::string& s);
std::vector<std::uint8_t> bytes_from_hex(const std::string& hex);
std::string hex_from_bytes(const std::vector<std::uint8_t>& bytes);

// First 8 bytes of SHA-256(secret), big-endian. Rejects empty secrets.
std::uint64_t derive_seed(const std::vector<std::uint8_t>& secret);

// One splitmix64 output step starting from `state`; advances the state.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Scramble a raw seed once so numerically adjacent seeds do not produce
// correlated opening draws.
inline std::uint64_t splitmix64_scramble(std::uint64_t seed) {
  return splitmix64_next(seed);
}

// Deterministic Gaussian stream: splitmix64 uniforms fed through Box-Muller.
// A stream is a value type; copying forks the sequence.
class GaussianStream {
 public:
  static constexpr const char* kAlgorithmId = "splitmix64+boxmuller";

  explicit GaussianStream(std::uint64_t state) : state_(state) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal draw.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = next_uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  // Uniform integer in [0, n) via the multiply-shift reduction.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// In-place Fisher-Yates driven by a GaussianStream's uniform integers.
template <typename T>
void deterministic_shuffle(std::vector<T>& items, GaussianStream& stream) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(stream.next_below(i));
    std::swap(items[i - 1], items[j]);
  }
}

struct UserKey {
  int user_id = 0;
  std::vector<std::uint8_t> secret;
  std::uint64_t seed = 0;

  static UserKey from_secret(int user_id, const std::vector<std::uint8_t>& secret);
  static UserKey from_secret(int user_id, const std::string& secret);

  std::string fingerprint() const { return sha256_hex(secret); }
};

}  // namespace distmark
