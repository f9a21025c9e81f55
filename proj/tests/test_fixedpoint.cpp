#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rrt/fixedpoint.hpp"
#include "rrt/rng.hpp"

using namespace rrt;

TEST_CASE("encode: reference words") {
  CHECK(encode_q15_16(0.0).bits == 0x00000000u);
  CHECK(encode_q15_16(1.0).bits == 0x00010000u);
  CHECK(encode_q15_16(0.5).bits == 0x00008000u);  // 0.5 * 2^16 = 32768
  CHECK(encode_q15_16(-1.0).bits == 0xFFFF0000u);
  CHECK(encode_q15_16(-32768.0).bits == 0x80000000u);
  CHECK(encode_q15_16(32768.0 - 1.0 / 65536.0).bits == 0x7FFFFFFFu);
}

TEST_CASE("encode: saturation far out of range") {
  CHECK(encode_q15_16(1e9).bits == 0x7FFFFFFFu);
  CHECK(encode_q15_16(-1e9).bits == 0x80000000u);
  CHECK(encode_q15_16(1e308).bits == 0x7FFFFFFFu);
  CHECK(encode_q15_16(-1e308).bits == 0x80000000u);
}

TEST_CASE("encode: ties to even") {
  // 2^-17 sits exactly between codes 0 and 1.
  CHECK(encode_q15_16(1.0 / 131072.0).bits == 0x00000000u);
  CHECK(encode_q15_16(3.0 / 131072.0).bits == 0x00000002u);
  CHECK(encode_q15_16(-1.0 / 131072.0).bits == 0x00000000u);
}

TEST_CASE("encode: rejects non-finite input") {
  CHECK_THROWS_AS(encode_q15_16(std::nan("")), value_error);
  CHECK_THROWS_AS(encode_q15_16(INFINITY), value_error);
  CHECK_THROWS_AS(encode_q15_16(-INFINITY), value_error);
}

TEST_CASE("decode: reference values") {
  CHECK(decode_q15_16({0x00010000u}) == 1.0);
  CHECK(decode_q15_16({0xFFFF0000u}) == -1.0);       // two's complement of -65536
  CHECK(decode_q15_16({0x80010000u}) == -32767.0);   // (-2^31 + 2^16) / 2^16
  CHECK(decode_q15_16({0x00000001u}) == 1.0 / 65536.0);
  CHECK(decode_q15_16({0x80000000u}) == -32768.0);
  CHECK(decode_q15_16({0x7FFFFFFFu}) == 32768.0 - 1.0 / 65536.0);
}

TEST_CASE("flip_bit: reference flips and bounds") {
  CHECK(flip_bit({0x00000000u}, 16).bits == 0x00010000u);
  CHECK(flip_bit({0x00010000u}, 31).bits == 0x80010000u);
  CHECK(flip_bit({0x00010000u}, 16).bits == 0x00000000u);
  CHECK(decode_q15_16(flip_bit(encode_q15_16(1.0), 31)) == -32767.0);
  CHECK_THROWS_AS(flip_bit({0u}, 32), std::out_of_range);
}

TEST_CASE("property: round-trip within 2^-16 over 1e5 samples") {
  Xoshiro256ss rng(0xF1);
  for (int i = 0; i < 100000; ++i) {
    const double x = rng.uniform(kQ15_16Min, kQ15_16Max);
    const double back = decode_q15_16(encode_q15_16(x));
    CHECK(std::abs(back - x) <= 1.0 / 65536.0);
  }
}

TEST_CASE("property: flip involution over 1e4 random (word, bit) pairs") {
  Xoshiro256ss rng(0xF2);
  for (int i = 0; i < 10000; ++i) {
    const FixedCode c{static_cast<std::uint32_t>(rng.next())};
    const unsigned bit = static_cast<unsigned>(rng.below(32));
    CHECK(flip_bit(flip_bit(c, bit), bit) == c);
  }
}

TEST_CASE("property: encode is monotone non-decreasing") {
  Xoshiro256ss rng(0xF3);
  for (int i = 0; i < 20000; ++i) {
    double a = rng.uniform(kQ15_16Min - 10.0, kQ15_16Max + 10.0);
    double b = rng.uniform(kQ15_16Min - 10.0, kQ15_16Max + 10.0);
    if (a > b) std::swap(a, b);
    CHECK(decode_q15_16(encode_q15_16(a)) <= decode_q15_16(encode_q15_16(b)));
    CHECK(static_cast<std::int32_t>(encode_q15_16(a).bits) <=
          static_cast<std::int32_t>(encode_q15_16(b).bits));
  }
}

TEST_CASE("property: every in-range code survives decode/encode exactly") {
  Xoshiro256ss rng(0xF4);
  for (int i = 0; i < 10000; ++i) {
    const FixedCode c{static_cast<std::uint32_t>(rng.next())};
    CHECK(encode_q15_16(decode_q15_16(c)) == c);
  }
}
