#include <catch2/catch_amalgamated.hpp>

#include "mstress/rng.hpp"
#include "mstress/stress.hpp"

using namespace mstress;

namespace {
Stress6 fixture_stress() {
  // Arbitrary non-degenerate state reused across scalar-measure tests.
  Stress6 s;
  s[SXX] = 1.7;
  s[SYY] = -0.4;
  s[SZZ] = 0.25;
  s[SYZ] = 0.31;
  s[SXZ] = -0.82;
  s[SXY] = 0.55;
  return s;
}
}  // namespace

TEST_CASE("von mises closed-form cases") {
  Stress6 uni;
  uni[SXX] = 2.5;
  CHECK(von_mises(uni) == Catch::Approx(2.5).epsilon(1e-14));

  Stress6 hydro;
  hydro[SXX] = hydro[SYY] = hydro[SZZ] = 3.1;
  CHECK(von_mises(hydro) == Catch::Approx(0.0).margin(1e-14));

  Stress6 shear;
  shear[SXY] = -0.7;
  CHECK(von_mises(shear) == Catch::Approx(0.7 * std::sqrt(3.0)).epsilon(1e-14));

  CHECK(von_mises(fixture_stress()) ==
        Catch::Approx(2.5846663227581237).epsilon(1e-13));
}

TEST_CASE("von mises scales with |k|") {
  Stress6 s = fixture_stress();
  double vm = von_mises(s);
  CHECK(von_mises(s * -3.0) == Catch::Approx(3.0 * vm).epsilon(1e-13));
  CHECK(von_mises(s * 0.125) == Catch::Approx(0.125 * vm).epsilon(1e-13));
}

TEST_CASE("triaxiality value and sign flip") {
  Stress6 s = fixture_stress();
  CHECK(triaxiality(s) == Catch::Approx(0.19989685404161817).epsilon(1e-13));
  CHECK(triaxiality(s * -2.0) ==
        Catch::Approx(-0.19989685404161817).epsilon(1e-13));
  // Identity: triaxiality * von_mises == trace/3.
  CHECK(triaxiality(s) * von_mises(s) ==
        Catch::Approx((s[SXX] + s[SYY] + s[SZZ]) / 3.0).epsilon(1e-12));
}

TEST_CASE("triaxiality undefined for hydrostatic states") {
  Stress6 hydro;
  hydro[SXX] = hydro[SYY] = hydro[SZZ] = -1.2;
  CHECK_THROWS_AS(triaxiality(hydro), NumericError);
  Stress6 zero;
  CHECK_THROWS_AS(triaxiality(zero), NumericError);
  // Tiny deviator below the relative floor counts as hydrostatic too.
  Stress6 nearly;
  nearly[SXX] = 1.0 + 1e-15;
  nearly[SYY] = nearly[SZZ] = 1.0;
  CHECK_THROWS_AS(triaxiality(nearly), NumericError);
}

TEST_CASE("lame constants from young/poisson") {
  auto el = ElasticConstants::from_young_poisson(1.0, 0.3);
  CHECK(el.lambda == Catch::Approx(0.5769230769230769).epsilon(1e-15));
  CHECK(el.mu == Catch::Approx(0.3846153846153846).epsilon(1e-15));
  CHECK_THROWS_AS(ElasticConstants::from_young_poisson(-1.0, 0.3),
                  ConfigError);
  CHECK_THROWS_AS(ElasticConstants::from_young_poisson(1.0, 0.5), ConfigError);
}

TEST_CASE("uniform macro stress from strain") {
  auto el = ElasticConstants::from_young_poisson(1.0, 0.3);
  MacroLoad load;
  load.strain[SXX] = 1.0;
  Stress6 s = macro_stress(load, {0.0, 0.0, 0.0}, el);
  CHECK(s[SXX] == Catch::Approx(1.346153846153846).epsilon(1e-14));
  CHECK(s[SYY] == Catch::Approx(el.lambda).epsilon(1e-14));
  CHECK(s[SZZ] == Catch::Approx(el.lambda).epsilon(1e-14));
  CHECK(s[SYZ] == 0.0);
  CHECK(s[SXZ] == 0.0);
  CHECK(s[SXY] == 0.0);

  // Uniform in space: independent of the evaluation point.
  Stress6 s2 = macro_stress(load, {10.0, -4.0, 2.0}, el);
  for (int i = 0; i < 6; ++i) CHECK(s[i] == s2[i]);

  // Pure shear strain engages only 2*mu.
  MacroLoad shear;
  shear.strain[SXY] = 0.25;
  Stress6 t = macro_stress(shear, {0.0, 0.0, 0.0}, el);
  CHECK(t[SXY] == Catch::Approx(2.0 * el.mu * 0.25).epsilon(1e-14));
  CHECK(t[SXX] == 0.0);
}

TEST_CASE("traction of a hydrostatic state is p*n") {
  Stress6 hydro;
  hydro[SXX] = hydro[SYY] = hydro[SZZ] = 2.0;
  Vec3 n = Vec3{1.0, 2.0, -2.0}.normalized();
  Vec3 t = hydro.traction(n);
  CHECK(t.x == Catch::Approx(2.0 * n.x).epsilon(1e-14));
  CHECK(t.y == Catch::Approx(2.0 * n.y).epsilon(1e-14));
  CHECK(t.z == Catch::Approx(2.0 * n.z).epsilon(1e-14));
}

TEST_CASE("rng reproducibility and substreams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

  // Distinct substreams differ; identical derivations agree.
  Rng s1 = Rng::substream(7, 1);
  Rng s2 = Rng::substream(7, 2);
  Rng s1b = Rng::substream(7, 1);
  CHECK(s1.next_u64() != s2.next_u64());
  CHECK(Rng::substream(7, 1).next_u64() == s1b.next_u64());
}

TEST_CASE("rng state round-trips through serialization") {
  Rng a(123);
  a.normal();  // leaves a cached Box-Muller spare in the state
  auto words = a.state();
  Rng b(999);
  b.restore(words);
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng distributions hit coarse moments") {
  Rng r(2026);
  double sum = 0.0, sum2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double z = r.normal();
    sum += z;
    sum2 += z * z;
  }
  CHECK(sum / n == Catch::Approx(0.0).margin(0.01));
  CHECK(sum2 / n == Catch::Approx(1.0).margin(0.02));

  double u = 0.0;
  for (int i = 0; i < n; ++i) u += r.uniform01();
  CHECK(u / n == Catch::Approx(0.5).margin(0.005));

  std::array<int, 5> counts{};
  for (int i = 0; i < n; ++i) counts[r.uniform_int(5)]++;
  for (int c : counts) CHECK(double(c) / n == Catch::Approx(0.2).margin(0.01));
}
