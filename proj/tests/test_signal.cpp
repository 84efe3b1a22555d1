#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "t1map/signal.hpp"

using namespace t1map;
using doctest::Approx;

TEST_CASE("molli_signal examples") {
  const MolliParams p{1000.0, 2000.0, 800.0};
  CHECK(molli_signal(p, 0.0) == -1000.0);
  CHECK(std::abs(molli_signal(p, 800.0 * std::log(2.0))) < 1e-9);
  CHECK(molli_signal(p, std::numeric_limits<double>::infinity()) == 1000.0);
}

TEST_CASE("stone_signal examples") {
  CHECK(stone_signal({1000.0, 1000.0}, 0.0) == -1000.0);
  CHECK(std::abs(stone_signal({1000.0, 1000.0}, 1000.0 * std::log(2.0))) < 1e-9);
  CHECK(stone_signal({800.0, 1200.0}, std::numeric_limits<double>::infinity()) == 800.0);
}

TEST_CASE("molli_correct examples") {
  CHECK(molli_correct({1.0, 2.0, 700.0}).t1 == 700.0);
  CHECK(molli_correct({1.0, 2.0, 700.0}).physical);
  CHECK(molli_correct({1.0, 3.0, 400.0}).t1 == 800.0);
  const auto np = molli_correct({2.0, 2.0, 500.0});
  CHECK_FALSE(np.physical);
  CHECK(np.t1 == 0.0);
  CHECK_FALSE(molli_correct({2.0, 1.0, 500.0}).physical);
  CHECK_THROWS_AS(molli_correct({0.0, 1.0, 500.0}), std::invalid_argument);
  CHECK_THROWS_AS(molli_correct({-1.0, 1.0, 500.0}), std::invalid_argument);
}

TEST_CASE("stone is the B = 2A special case of molli") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> m0(10.0, 3000.0), t1(50.0, 4000.0), t(0.0, 6000.0);
  for (int k = 0; k < 200; ++k) {
    const StoneParams s{m0(rng), t1(rng)};
    const MolliParams m{s.m0, 2.0 * s.m0, s.t1};
    const double tt = t(rng);
    CHECK(stone_signal(s, tt) == Approx(molli_signal(m, tt)).epsilon(1e-13).scale(s.m0));
    CHECK(molli_correct(m).t1 == s.t1);
  }
}

TEST_CASE("signals increase with time") {
  const StoneParams s{900.0, 1100.0};
  const MolliParams m{900.0, 1500.0, 700.0};
  double prev_s = -1e300, prev_m = -1e300;
  for (double t = 0.0; t <= 8000.0; t += 37.0) {
    CHECK(stone_signal(s, t) > prev_s);
    CHECK(molli_signal(m, t) > prev_m);
    prev_s = stone_signal(s, t);
    prev_m = molli_signal(m, t);
  }
}

TEST_CASE("analytic partials match central differences") {
  for (double m0 : {50.0, 1000.0}) {
    for (double t1 : {200.0, 1500.0}) {
      for (double t : {0.0, 150.0, 900.0, 3000.0}) {
        const StoneParams p{m0, t1};
        const auto g = stone_gradient(p, t);
        const double h0 = 1e-5 * m0, h1 = 1e-5 * t1;
        const double d0 = (stone_signal({m0 + h0, t1}, t) - stone_signal({m0 - h0, t1}, t)) / (2 * h0);
        const double d1 = (stone_signal({m0, t1 + h1}, t) - stone_signal({m0, t1 - h1}, t)) / (2 * h1);
        CHECK(g[0] == Approx(d0).epsilon(1e-6));
        CHECK(g[1] == Approx(d1).epsilon(1e-6));

        const MolliParams q{m0, 1.8 * m0, t1};
        const auto gq = molli_gradient(q, t);
        const double hb = 1e-5 * q.b;
        const double da = (molli_signal({q.a + h0, q.b, q.t1star}, t) - molli_signal({q.a - h0, q.b, q.t1star}, t)) / (2 * h0);
        const double db = (molli_signal({q.a, q.b + hb, q.t1star}, t) - molli_signal({q.a, q.b - hb, q.t1star}, t)) / (2 * hb);
        const double dt = (molli_signal({q.a, q.b, q.t1star + h1}, t) - molli_signal({q.a, q.b, q.t1star - h1}, t)) / (2 * h1);
        CHECK(gq[0] == Approx(da).epsilon(1e-6));
        CHECK(gq[1] == Approx(db).epsilon(1e-6));
        CHECK(gq[2] == Approx(dt).epsilon(1e-6).scale(1e-12));
      }
    }
  }
}

TEST_CASE("synth_frame") {
  ParamMap map(SequenceKind::Stone, 4, 6);
  for (std::size_t i = 0; i < 24; ++i) {
    map.set(i, StoneParams{700.0, 1000.0});
  }
  SUBCASE("t = 0 magnitude") {
    const Raster f = synth_frame(map, 0.0, true);
    for (double v : f.values()) {
      CHECK(v == 700.0);
    }
    CHECK(synth_frame(map, 0.0, false)[3] == -700.0);
  }
  SUBCASE("zero crossing") {
    const Raster f = synth_frame(map, 1000.0 * std::log(2.0), true);
    for (double v : f.values()) {
      CHECK(v < 1e-9);
    }
  }
  SUBCASE("two regions") {
    for (std::size_t i = 12; i < 24; ++i) {
      map.set(i, StoneParams{300.0, 400.0});
    }
    const Raster f = synth_frame(map, 250.0, true);
    CHECK(f[0] == std::abs(stone_signal({700.0, 1000.0}, 250.0)));
    CHECK(f[20] == std::abs(stone_signal({300.0, 400.0}, 250.0)));
  }
  SUBCASE("molli map and unfitted pixels") {
    ParamMap mm(SequenceKind::Molli, 2, 2);
    CHECK(mm.channels.size() == 3);
    mm.set(1, MolliParams{1.0, 2.0, 100.0});
    const Raster f = synth_frame(mm, 0.0, false);
    CHECK(f[1] == -1.0);
    CHECK(f[0] == 0.0);
    CHECK(mm.molli_at(1).t1star == 100.0);
  }
}
