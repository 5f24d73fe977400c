#include "distmark/rng.hpp"

#include <openssl/evp.h>

#include <cstring>

#include "distmark/errors.hpp"

namespace distmark {

std::array<std::uint8_t, 32> sha256(const std::uint8_t* data, std::size_t len) {
  std::array<std::uint8_t, 32> digest{};
  unsigned int out_len = 0;
  if (EVP_Digest(data, len, digest.data(), &out_len, EVP_sha256(), nullptr) != 1 ||
      out_len != digest.size()) {
    raise(ErrorCode::IoError, "SHA-256 digest computation failed");
  }
  return digest;
}

std::array<std::uint8_t, 32> sha256(const std::vector<std::uint8_t>& bytes) {
  return sha256(bytes.data(), bytes.size());
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  auto digest = sha256(bytes);
  return hex_from_bytes(std::vector<std::uint8_t>(digest.begin(), digest.end()));
}

std::vector<std::uint8_t> bytes_from_string(const std::string& s) {
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

std::vector<std::uint8_t> bytes_from_hex(const std::string& hex) {
  if (hex.size() % 2 != 0) {
    raise(ErrorCode::IoError, "hex string has odd length");
  }
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    raise(ErrorCode::IoError, "invalid hex character");
  };
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>((nibble(hex[2 * i]) << 4) |
                                       nibble(hex[2 * i + 1]));
  }
  return out;
}

std::string hex_from_bytes(const std::vector<std::uint8_t>& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0F]);
  }
  return out;
}

std::uint64_t derive_seed(const std::vector<std::uint8_t>& secret) {
  if (secret.empty()) {
    raise(ErrorCode::EmptyKey, "user secret must be non-empty");
  }
  auto digest = sha256(secret);
  std::uint64_t seed = 0;
  for (int i = 0; i < 8; ++i) {
    seed = (seed << 8) | digest[static_cast<std::size_t>(i)];
  }
  return seed;
}

UserKey UserKey::from_secret(int user_id, const std::vector<std::uint8_t>& secret) {
  UserKey key;
  key.user_id = user_id;
  key.secret = secret;
  key.seed = derive_seed(secret);
  return key;
}

UserKey UserKey::from_secret(int user_id, const std::string& secret) {
  return from_secret(user_id, bytes_from_string(secret));
}

}  // namespace distmark
