#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "distmark/errors.hpp"
#include "distmark/rng.hpp"

using namespace distmark;

TEST_CASE("sha256 matches the published test vectors") {
  CHECK(sha256_hex(bytes_from_string("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(bytes_from_string("")) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(bytes_from_string(
            "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")) ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("hex helpers round trip") {
  std::vector<std::uint8_t> bytes{0x00, 0x01, 0xAB, 0xFF};
  CHECK(hex_from_bytes(bytes) == "0001abff");
  CHECK(bytes_from_hex("0001abff") == bytes);
  CHECK(bytes_from_hex(hex_from_bytes(bytes_from_string("tricky"))) ==
        bytes_from_string("tricky"));
}

TEST_CASE("seed derivation takes the first eight digest bytes big-endian") {
  CHECK(derive_seed(bytes_from_string("abc")) == 0xBA7816BF8F01CFEAull);
  CHECK(derive_seed(bytes_from_string("user-7")) ==
        derive_seed(bytes_from_string("user-7")));
  CHECK_THROWS_AS(derive_seed({}), Error);
}

TEST_CASE("splitmix64 reproduces the reference sequence from state zero") {
  std::uint64_t state = 0;
  CHECK(splitmix64_next(state) == 0xE220A8397B1DCDAFull);
  CHECK(splitmix64_next(state) == 0x6E789E6AA1B965F4ull);
  CHECK(splitmix64_next(state) == 0x06C45D188009454Full);
}

TEST_CASE("gaussian streams are deterministic value types") {
  GaussianStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_normal() == b.next_normal());

  GaussianStream fork = a;
  CHECK(fork.next_u64() == a.next_u64());

  GaussianStream other(43);
  bool any_diff = false;
  for (int i = 0; i < 10; ++i) any_diff |= (a.next_u64() != other.next_u64());
  CHECK(any_diff);
}

TEST_CASE("uniform draws stay inside the half-open unit interval") {
  GaussianStream stream(7);
  for (int i = 0; i < 10000; ++i) {
    double u = stream.next_uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("box-muller pairs reproduce the documented transform") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    GaussianStream raw(seed);
    double u1 = (static_cast<double>(raw.next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(raw.next_u64() >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * 3.14159265358979323846 * u2;

    GaussianStream stream(seed);
    CHECK(stream.next_normal() == doctest::Approx(r * std::cos(angle)).epsilon(1e-12));
    CHECK(stream.next_normal() == doctest::Approx(r * std::sin(angle)).epsilon(1e-12));
  }
}

TEST_CASE("normal draws have unit-gaussian sample moments") {
  GaussianStream stream(99);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = stream.next_normal();
    sum += x;
    sq += x * x;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::fabs(mean) < 0.03);
  CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("bounded draws cover their range roughly uniformly") {
  GaussianStream stream(5);
  CHECK(stream.next_below(1) == 0);

  std::vector<int> counts(10, 0);
  for (int i = 0; i < 10000; ++i) {
    std::uint64_t v = stream.next_below(10);
    REQUIRE(v < 10);
    ++counts[static_cast<std::size_t>(v)];
  }
  for (int c : counts) {
    CHECK(c > 800);
    CHECK(c < 1200);
  }
}

TEST_CASE("deterministic shuffle permutes and repeats exactly") {
  std::vector<int> items(257);
  std::iota(items.begin(), items.end(), 0);
  std::vector<int> reference = items;

  GaussianStream s1(123);
  deterministic_shuffle(items, s1);
  CHECK(items != reference);

  std::vector<int> sorted = items;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == reference);

  std::vector<int> again(257);
  std::iota(again.begin(), again.end(), 0);
  GaussianStream s2(123);
  deterministic_shuffle(again, s2);
  CHECK(again == items);
}

TEST_CASE("user keys derive their seed and fingerprint from the secret") {
  UserKey key = UserKey::from_secret(3, std::string("abc"));
  CHECK(key.user_id == 3);
  CHECK(key.seed == 0xBA7816BF8F01CFEAull);
  CHECK(key.fingerprint() ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

  UserKey same = UserKey::from_secret(3, bytes_from_string("abc"));
  CHECK(same.secret == key.secret);
  CHECK(same.seed == key.seed);
}
