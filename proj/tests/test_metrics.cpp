#include <doctest.h>

#include <cmath>
#include <sstream>
#include <tuple>

#include "earu/metrics.hpp"
#include "support.hpp"

using namespace earu;

using earu::test::random_blobs;

TEST_CASE("overlap metrics on a hand example") {
  LabelVolume a(1, 1, 4), b(1, 1, 4);
  a.voxels = {1, 1, 1, 0};
  b.voxels = {0, 1, 1, 1};
  CHECK(dice(a, b) == doctest::Approx(4.0 / 6.0));
  CHECK(voe(a, b) == doctest::Approx(0.5));
  CHECK(rvd(a, b) == 0.0);
  b.voxels = {0, 1, 0, 0};
  CHECK(rvd(a, b) == doctest::Approx(-2.0 / 3.0));
}

TEST_CASE("empty masks and undefined metrics") {
  LabelVolume e(2, 2, 2), f(2, 2, 2);
  CHECK(dice(e, f) == 1.0);
  CHECK(voe(e, f) == 0.0);
  CHECK_THROWS_AS(rvd(e, f), UndefinedMetricError);
  CHECK_THROWS_AS(assd(e, f, Spacing{}), UndefinedMetricError);
  f.voxels[0] = 1;
  CHECK(dice(e, f) == 0.0);
  const auto r = evaluate_case(e, f, Spacing{});
  CHECK(r.dice == 0.0);
  CHECK_FALSE(r.rvd.has_value());
  CHECK_FALSE(r.assd_mm.has_value());
  CHECK_THROWS_AS(dice(e, LabelVolume(2, 2, 3)), ShapeError);
}

TEST_CASE("surface extraction counts the outside as background") {
  LabelVolume v(3, 3, 3, Spacing{}, 1);
  const auto s = extract_surface(v);
  CHECK(s.voxels.size() == 26);
  for (std::size_t i = 1; i < s.voxels.size(); ++i) {
    const auto& p = s.voxels[i - 1];
    const auto& q = s.voxels[i];
    CHECK(std::tie(p.z, p.y, p.x) < std::tie(q.z, q.y, q.x));
  }
}

TEST_CASE("surface distances honour anisotropic spacing") {
  LabelVolume a(3, 4, 5), b(3, 4, 5);
  a.at(0, 0, 0) = 1;
  b.at(2, 3, 4) = 1;
  const Spacing sp{2.5, 0.7, 1.3};
  const double expected = std::sqrt(std::pow(4 * 1.3, 2) + std::pow(3 * 0.7, 2) + std::pow(2 * 2.5, 2));
  CHECK(assd(a, b, sp) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(msd(a, b, sp) == doctest::Approx(expected).epsilon(1e-12));
  const auto d = surface_distances(extract_surface(a), extract_surface(a));
  CHECK(d.size() == 1);
  CHECK(d[0] == 0.0);
}

TEST_CASE("all metrics equal the brute-force oracle on random pairs") {
  std::mt19937_64 gen(41);
  std::uniform_int_distribution<std::size_t> dim(1, 10);
  std::uniform_real_distribution<double> spc(0.5, 3.0);
  for (int t = 0; t < 30; ++t) {
    const std::size_t d = dim(gen), h = dim(gen), w = dim(gen);
    const Spacing sp{spc(gen), spc(gen), spc(gen)};
    const auto a = random_blobs(d, h, w, gen, 0.1 + 0.05 * (t % 8));
    const auto b = random_blobs(d, h, w, gen, 0.1 + 0.05 * ((t + 3) % 8));
    const auto ref = earu::test::brute_metrics(a, b, sp);
    const auto r = evaluate_case(a, b, sp);
    CAPTURE(t);
    CHECK(std::fabs(*r.dice - ref.dice) <= 1e-9);
    CHECK(std::fabs(*r.voe - ref.voe) <= 1e-9);
    CHECK(std::fabs(*r.voe - (1 - ref.dice / (2 - ref.dice))) <= 1e-9);
    if (std::isnan(ref.rvd)) {
      CHECK_FALSE(r.rvd.has_value());
    } else {
      CHECK(std::fabs(*r.rvd - ref.rvd) <= 1e-9);
    }
    REQUIRE(r.assd_mm.has_value() == ref.surfaces);
    if (ref.surfaces) {
      CHECK(std::fabs(*r.assd_mm - ref.assd) <= 1e-9);
      CHECK(std::fabs(*r.msd_mm - ref.msd) <= 1e-9);
    }
  }
}

TEST_CASE("metric csv layout") {
  MetricReport a{"case1", 0.9, 0.18, -0.05, 1.5, 10.0};
  MetricReport b{"case2", 0.7, std::nullopt, 0.1, std::nullopt, 20.0};
  std::ostringstream os;
  write_metrics_csv(os, {a, b});
  CHECK(os.str() ==
        "case_id,dice,voe,rvd,assd_mm,msd_mm\n"
        "case1,0.9,0.18,-0.05,1.5,10\n"
        "case2,0.7,nan,0.1,nan,20\n"
        "mean,0.8,0.18,0.025,1.5,15\n");
  std::ostringstream one;
  write_metrics_csv(one, {a});
  CHECK(one.str().find("mean") == std::string::npos);
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0 / 3.0) == "0.3333333333333333");
}

TEST_CASE("evaluate_case checks spacing agreement") {
  LabelVolume a(2, 2, 2, Spacing{1, 1, 1}), b(2, 2, 2, Spacing{2, 1, 1});
  CHECK_THROWS_AS(evaluate_case(a, b), ShapeError);
}
