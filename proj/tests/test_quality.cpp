#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "slack/quality.hpp"
#include "test_support.hpp"

using namespace slack;
using scanio::PointCloud;

namespace {

PointCloud random_cloud(Rng& rng, std::size_t n) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(rng.normal(), rng.normal(), rng.normal());
  return c;
}

double brute_emd(const PointCloud& p, const PointCloud& q) {
  std::vector<int> perm(p.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double s = 0;
    for (std::size_t i = 0; i < perm.size(); ++i) s += (p.points[i] - q.points[perm[i]]).norm();
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("chamfer hand-worked values") {
  PointCloud a, b;
  a.points = {{0, 0, 0}};
  b.points = {{1, 0, 0}};
  CHECK(quality::chamfer(a, b) == 2.0);
  CHECK(quality::chamfer(a, a) == 0.0);
  b.points.push_back({0, 2, 0});
  // a->b: 1; b->a: 1 + 4.
  CHECK(quality::chamfer(a, b) == 6.0);
  CHECK(quality::chamfer(b, a) == 6.0);
  CHECK_THROWS_AS(quality::chamfer(a, PointCloud{}), Error);
}

TEST_CASE("emd hand-worked values and errors") {
  PointCloud a, b;
  a.points = {{0, 0, 0}};
  b.points = {{3, 4, 0}};
  CHECK(quality::emd(a, b) == doctest::Approx(5.0));
  CHECK(quality::emd(a, a) == 0.0);
  // Crossing pairs: the optimal matching pairs nearest points.
  a.points = {{0, 0, 0}, {10, 0, 0}};
  b.points = {{10, 1, 0}, {0, 1, 0}};
  CHECK(quality::emd(a, b) == doctest::Approx(2.0));
  b.points.pop_back();
  CHECK_THROWS_AS(quality::emd(a, b), Error);
  CHECK_THROWS_AS(quality::emd(PointCloud{}, PointCloud{}), Error);
}

TEST_CASE("emd equals the exhaustive minimum and is symmetric") {
  Rng rng(7);
  for (int t = 0; t < 60; ++t) {
    const std::size_t n = 1 + rng.index(6);
    const auto p = random_cloud(rng, n), q = random_cloud(rng, n);
    const double e = quality::emd(p, q);
    CHECK(std::abs(e - brute_emd(p, q)) < 1e-9);
    CHECK(std::abs(e - quality::emd(q, p)) < 1e-9);
    // A permuted copy is the same multiset.
    PointCloud r = p;
    std::reverse(r.points.begin(), r.points.end());
    CHECK(quality::emd(p, r) < 1e-12);
    CHECK(quality::chamfer(p, r) == 0.0);
  }
}

TEST_CASE("assignment solver on a known matrix") {
  const std::vector<double> cost{4, 1, 3, 2, 0, 5, 3, 2, 2};
  const auto m = quality::solve_assignment(cost, 3);
  CHECK(m == std::vector<int>{1, 0, 2});
  CHECK_THROWS_AS(quality::solve_assignment(cost, 2), Error);
}

TEST_CASE("subsampled emd is seeded and handles unequal sizes") {
  Rng rng(3);
  const auto p = random_cloud(rng, 40), q = random_cloud(rng, 25);
  const double a = quality::emd_subsampled(p, q, 100, 5);
  CHECK(a == quality::emd_subsampled(p, q, 100, 5));
  CHECK(a > 0);
  CHECK(quality::emd_subsampled(p, p, 40, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("noise model and levels") {
  const auto seq = scanio::synth_sequence(slack::testing::mini_world(2, 5));
  const auto& s = seq.frames[0].static_scan;
  Rng rng(1);
  const auto same = quality::add_noise(s, 0.0, rng);
  CHECK(same == s);
  const auto noisy = quality::add_noise(s, 0.5, rng);
  CHECK(noisy.valid == s.valid);
  for (std::size_t i = 0; i < s.ranges.size(); ++i) {
    if (!s.valid[i]) CHECK(noisy.ranges[i] == 0.0f);
  }
  CHECK(quality::noise_levels(1.0, 5) == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK(quality::spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(quality::spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
}

TEST_CASE("lqi regresses the injected noise level") {
  auto w = slack::testing::mini_world(12, 51);
  w.sensor.beams = 16;
  w.sensor.azimuth_bins = 128;
  const auto train = scanio::synth_sequence(w);
  w.seed = 52;
  const auto test = scanio::synth_sequence(w);
  std::vector<scanio::RangeImage> clean, held;
  for (const auto& f : train.frames) clean.push_back(f.static_scan);
  for (const auto& f : test.frames) held.push_back(f.static_scan);
  quality::LQIConfig cfg;
  cfg.epochs = 15;
  const auto res = quality::train_lqi(clean, cfg);
  CHECK(res.loss.back() < res.loss.front());
  const auto ev = quality::evaluate_lqi(held, res.model, 5, 3);
  CHECK(ev.spearman >= 0.9);
  CHECK(ev.mean_abs_error < 0.15 * cfg.sigma_max);
  CHECK(quality::lqi(held[0], res.model) >= 0.0);

  const auto back = quality::lqi_from_checkpoint(
      deserialize_checkpoint(serialize_checkpoint(quality::to_checkpoint(res.model))));
  CHECK(quality::lqi(held[0], back) == quality::lqi(held[0], res.model));
  CHECK(back.sigma_max == res.model.sigma_max);
  CHECK(quality::train_lqi(clean, cfg).model.params == res.model.params);

  auto other = held[0].config;
  other.azimuth_bins = 64;
  CHECK_THROWS_AS(quality::lqi(scanio::RangeImage(other), res.model), Error);
}

TEST_CASE("dsr classifier and ratios") {
  const auto train = scanio::synth_sequence(slack::testing::mini_world(12, 61));
  const auto test = scanio::synth_sequence(slack::testing::mini_world(6, 62));
  quality::DSRConfig cfg;
  cfg.epochs = 10;
  const auto res = quality::train_dsr_classifier({train}, cfg);
  const auto ev = quality::evaluate_dsr({test}, res.model);
  CHECK(ev.accuracy >= 0.9);
  for (const auto& f : test.frames) {
    const double d = quality::dsr(f.dynamic, res.model);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    CHECK(quality::dsr_from_mask(f.static_scan, f.static_mask) == 0.0);
  }
  const auto& f = test.frames[0];
  const double truth = double(f.dynamic_mask.dynamic_count()) / double(f.dynamic.valid_count());
  CHECK(quality::dsr_from_mask(f.dynamic, f.dynamic_mask) == doctest::Approx(truth));

  const auto back = quality::dsr_from_checkpoint(
      deserialize_checkpoint(serialize_checkpoint(quality::to_checkpoint(res.model))));
  CHECK(back.params == res.model.params);
  auto ck = quality::to_checkpoint(res.model);
  ck.kind = "pd";
  CHECK_THROWS_AS(quality::dsr_from_checkpoint(ck), Error);
}
