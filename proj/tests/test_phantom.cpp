#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>

#include "oracles.hpp"
#include "t1map/curvefit.hpp"
#include "t1map/metrics.hpp"
#include "t1map/phantom.hpp"

using namespace t1map;
using doctest::Approx;

namespace {

PhantomSpec small_spec() {
  PhantomSpec s;
  s.grid = {64, 64, 2.1, 2.1};
  s.center_x = 32.0;
  s.center_y = 32.0;
  return s;
}

} // namespace

TEST_CASE("default schedules") {
  const auto stone = default_stone_times();
  REQUIRE(stone.size() == 11);
  CHECK(stone.front() == 100.0);
  CHECK(stone.back() == 4500.0);
  for (std::size_t i = 1; i < stone.size(); ++i) {
    CHECK(stone[i] > stone[i - 1]);
  }
  CHECK(stone[5] == Approx(100.0 * std::sqrt(45.0)));

  const auto molli = default_molli_times();
  REQUIRE(molli.size() == 8);
  CHECK(molli.front() >= 100.0);
  CHECK(molli.back() <= 3500.0);

  PhantomSpec s;
  CHECK(s.effective_times() == stone);
  s.kind = SequenceKind::Molli;
  CHECK(s.effective_times() == molli);
  s.times = {1, 2, 3, 4, 5};
  CHECK(s.effective_times() == s.times);
}

TEST_CASE("noiseless motion-free phantom is recovered exactly") {
  for (auto kind : {SequenceKind::Stone, SequenceKind::Molli}) {
    PhantomSpec s = small_spec();
    s.kind = kind;
    const PhantomCase p = make_phantom(s);
    REQUIRE(p.series.size() == s.effective_times().size());
    for (const auto &d : p.truth_fields) {
      CHECK(d == DisplacementField(64, 64));
    }
    const FitMaps m = fit_map(p.series);
    CHECK(m.invalid.count() == 0);
    for (std::size_t i = 0; i < m.t1.size(); ++i) {
      REQUIRE(m.t1[i] == Approx(p.truth_t1[i]).epsilon(1e-6));
    }
    for (const auto &seg : p.segs) {
      CHECK(seg.myo == p.truth_myo);
      CHECK(seg.lv == p.truth_lv);
    }
  }
}

TEST_CASE("truth maps and masks") {
  const PhantomCase p = make_phantom(small_spec());
  CHECK(p.truth_t1(32, 32) == 1700.0);
  CHECK(p.truth_t1(32, 32 + 15) == 1100.0);
  CHECK(p.truth_t1(2, 2) == 300.0);
  CHECK(p.truth_myo(32, 32 + 15));
  CHECK_FALSE(p.truth_myo(32, 32));
  CHECK(p.truth_lv(32, 32));
  CHECK(count_components(p.truth_myo) == 1);
  CHECK(p.truth_params.stone_at(p.truth_params.channels[0].index(32, 47)).m0 == 1000.0);

  PhantomSpec m = small_spec();
  m.kind = SequenceKind::Molli;
  const PhantomCase q = make_phantom(m);
  const auto mp = q.truth_params.molli_at(q.truth_params.channels[0].index(32, 47));
  CHECK(mp.b / mp.a == Approx(1.9));
  CHECK(molli_correct(mp).t1 == Approx(1100.0));
}

TEST_CASE("confidence maps") {
  PhantomSpec s = small_spec();
  s.reference_frame = 3;
  const PhantomCase p = make_phantom(s);
  for (std::size_t i = 0; i < p.segs.size(); ++i) {
    CHECK(mean_confidence(p.segs[i]) == Approx(i == 3 ? 1.0 : 0.98).epsilon(1e-12));
  }
  const auto sel = select(p.segs, 0.9, 0.99);
  CHECK(sel.members.size() == p.segs.size());
  CHECK(sel.reference == 3);
}

TEST_CASE("same seed gives the same case") {
  PhantomSpec s = small_spec();
  s.motion_amplitude = 2.0;
  s.noise_sigma = 15.0;
  s.seed = 41;
  const PhantomCase a = make_phantom(s);
  const PhantomCase b = make_phantom(s);
  for (std::size_t i = 0; i < a.series.size(); ++i) {
    CHECK(a.series.frames[i].values == b.series.frames[i].values);
    CHECK(a.truth_fields[i] == b.truth_fields[i]);
    CHECK(a.segs[i].myo == b.segs[i].myo);
  }
  s.seed = 42;
  const PhantomCase c = make_phantom(s);
  CHECK_FALSE(a.series.frames[1].values == c.series.frames[1].values);
}

TEST_CASE("3 px motion gives a correctable baseline") {
  PhantomSpec s;
  s.motion_amplitude = 3.0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    s.seed = seed;
    const PhantomCase p = make_phantom(s);
    CHECK(p.truth_fields[0] == DisplacementField(160, 160));
    const std::vector<DisplacementField> identity(p.segs.size(), DisplacementField(160, 160));
    const auto o = registration_overlap(p.segs, identity, 0, s.grid);
    CHECK(o.dice < 0.85);
    for (const auto &d : p.truth_fields) {
      CHECK(jacobian_stats(d).nonpositive == 0);
      for (int y = 0; y < 160; ++y) {
        for (int x = 0; x < 160; ++x) {
          if (std::hypot(x - s.center_x, y - s.center_y) <= s.outer_radius) {
            worst = std::max(worst, std::hypot(d.dx(y, x), d.dy(y, x)));
          }
        }
      }
    }
  }
  CHECK(worst > 2.0);
  CHECK(worst < 6.0);
}

TEST_CASE("truth fields stay fold-free at sigma 4") {
  PhantomSpec s = small_spec();
  s.motion_amplitude = 3.0;
  s.motion_smoothness = 4.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    s.seed = seed;
    for (const auto &d : make_phantom(s).truth_fields) {
      CHECK(jacobian_stats(d).nonpositive == 0);
    }
  }
}

TEST_CASE("add_rician") {
  SUBCASE("sigma 0 is the magnitude") {
    Raster r(2, 2);
    r[0] = -3.0;
    r[1] = 2.0;
    const Raster o = add_rician(r, 0.0, 1);
    CHECK(o[0] == 3.0);
    CHECK(o[1] == 2.0);
    CHECK(o[3] == 0.0);
  }
  SUBCASE("Rayleigh mean at zero signal") {
    const double sigma = 7.0;
    const Raster o = add_rician(Raster(400, 500), sigma, 5);
    double mean = 0.0;
    for (double v : o.values()) {
      CHECK(v >= 0.0);
      mean += v;
    }
    mean /= static_cast<double>(o.size());
    CHECK(mean == Approx(sigma * std::sqrt(std::numbers::pi / 2.0)).epsilon(0.02));
  }
  SUBCASE("high SNR") {
    const double sigma = 2.0;
    const Raster o = add_rician(Raster(400, 500, 50.0 * sigma), sigma, 6);
    double mean = 0.0;
    for (double v : o.values()) {
      mean += v;
    }
    mean /= static_cast<double>(o.size());
    CHECK(mean == Approx(100.0).epsilon(1e-3));
  }
  SUBCASE("seeded") {
    const Raster a = add_rician(Raster(8, 8, 1.0), 1.0, 3);
    CHECK(a == add_rician(Raster(8, 8, 1.0), 1.0, 3));
    CHECK_FALSE(a == add_rician(Raster(8, 8, 1.0), 1.0, 4));
  }
  CHECK_THROWS_AS(add_rician(Raster(2, 2), -1.0, 0), std::invalid_argument);
}

TEST_CASE("spec validation") {
  auto expect_bad = [](auto mutate) {
    PhantomSpec s;
    mutate(s);
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    CHECK_THROWS_AS(make_phantom(s), std::invalid_argument);
  };
  CHECK_NOTHROW(PhantomSpec{}.validate());
  expect_bad([](PhantomSpec &s) { s.inner_radius = 20.0; });
  expect_bad([](PhantomSpec &s) { s.outer_radius = 80.0; });
  expect_bad([](PhantomSpec &s) { s.lv_radius = 13.0; });
  expect_bad([](PhantomSpec &s) { s.center_x = 10.0; });
  expect_bad([](PhantomSpec &s) { s.t1_myo = 0.0; });
  expect_bad([](PhantomSpec &s) { s.motion_amplitude = -1.0; });
  expect_bad([](PhantomSpec &s) { s.noise_sigma = -1.0; });
  expect_bad([](PhantomSpec &s) { s.conf_level = 1.5; });
  expect_bad([](PhantomSpec &s) { s.times = {100, 200, 300}; });
  expect_bad([](PhantomSpec &s) {
    s.kind = SequenceKind::Molli;
    s.look_locker_ratio = 1.0;
  });
  expect_bad([](PhantomSpec &s) { s.reference_frame = 11; });
}

TEST_CASE("spec json round trip") {
  PhantomSpec s = small_spec();
  s.kind = SequenceKind::Molli;
  s.times = {120, 200, 1000, 1100, 1800, 2600};
  s.motion_amplitude = 2.5;
  s.noise_sigma = 12.0;
  s.seed = 1234567890123ULL;
  s.slice_id = "mid";
  nlohmann::json j;
  to_json(j, s);
  const PhantomSpec r = phantom_spec_from_json(j);
  nlohmann::json k;
  to_json(k, r);
  CHECK(j == k);
  CHECK(r.kind == SequenceKind::Molli);
  CHECK(r.seed == s.seed);
  CHECK(r.times == s.times);

  const PhantomSpec partial = phantom_spec_from_json(nlohmann::json{{"seed", 7}});
  CHECK(partial.seed == 7);
  CHECK(partial.grid.height == 160);
  CHECK_THROWS_AS(phantom_spec_from_json(nlohmann::json{{"sead", 7}}), std::invalid_argument);
}

TEST_CASE("write and reload") {
  const auto dir = oracle::temp_dir("phantom_write");
  PhantomSpec s = small_spec();
  s.motion_amplitude = 1.5;
  s.noise_sigma = 5.0;
  s.reference_frame = 2;
  const PhantomCase p = make_phantom(s);
  write_phantom(p, dir);

  const Series loaded = load_series(dir);
  REQUIRE(loaded.size() == p.series.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded.frames[i].t_ms == p.series.frames[i].t_ms);
    for (std::size_t k = 0; k < loaded.frames[i].values.size(); ++k) {
      REQUIRE(loaded.frames[i].values[k] == static_cast<double>(static_cast<float>(p.series.frames[i].values[k])));
    }
  }
  const auto segs = load_segmentations(dir);
  REQUIRE(segs.size() == p.segs.size());
  CHECK(segs[4].myo == p.segs[4].myo);
  CHECK(segs[4].lv == p.segs[4].lv);

  const PhantomTruth t = load_phantom_truth(dir);
  CHECK(t.myo == p.truth_myo);
  CHECK(t.lv == p.truth_lv);
  CHECK(t.t1 == p.truth_t1);
  CHECK(t.reference_frame == 2);
  CHECK(t.center_x == 32.0);

  CHECK_THROWS_AS(load_phantom_truth(dir / "missing"), IoError);
}
