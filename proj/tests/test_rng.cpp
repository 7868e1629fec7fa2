#include <catch2/catch_amalgamated.hpp>

#include "saic/rng.hpp"

using namespace saic;

TEST_CASE("rng streams are reproducible and serializable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

  const std::string snap = a.state();
  std::vector<double> expect;
  for (int i = 0; i < 16; ++i) expect.push_back(a.normal());
  Rng c;
  c.restore(snap);
  for (int i = 0; i < 16; ++i) CHECK(c.normal() == expect[i]);
}

TEST_CASE("rng uniform and below stay in range") {
  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(13) < 13);
  }
}

TEST_CASE("derived stream seeds differ per stream id") {
  const auto s0 = Rng::derive(5, 0);
  const auto s1 = Rng::derive(5, 1);
  CHECK(s0 != s1);
  CHECK(Rng::derive(5, 0) == s0);
}

TEST_CASE("shuffle is a permutation and seed-stable") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  Rng r1(9), r2(9);
  auto a = v, b = v;
  r1.shuffle(a);
  r2.shuffle(b);
  CHECK(a == b);
  std::sort(a.begin(), a.end());
  CHECK(a == v);
}
