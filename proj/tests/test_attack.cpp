#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "slack/attack.hpp"
#include "test_support.hpp"

using namespace slack;
using slack::testing::mini_backbone;
using slack::testing::mini_world;

namespace {

scanio::RangeImage flat_scan(int rows, int cols, float r) {
  scanio::SensorConfig c;
  c.beams = rows;
  c.azimuth_bins = cols;
  scanio::RangeImage s(c);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) s.set(i, j, r);
  return s;
}

backbone::LatentCode code(std::initializer_list<double> v) { return backbone::LatentCode{v}; }

double gauss_sum(double d2, const std::vector<double>& bw) {
  double k = 0;
  for (double s : bw) k += std::exp(-d2 / (2 * s * s));
  return k;
}

double sq(const backbone::LatentCode& a, const backbone::LatentCode& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
  return s;
}

}  // namespace

TEST_CASE("corrupt_mask band and fraction") {
  scanio::SegMask m(16, 200);
  attack::MaskCorruptionSpec spec;
  spec.row_start = 3;
  spec.row_end = 6;
  spec.seed = 9;

  SUBCASE("fraction 0 leaves the mask unchanged") {
    spec.fraction = 0.0;
    CHECK(attack::corrupt_mask(m, spec) == m);
  }
  SUBCASE("fraction 1 fills the band only") {
    spec.fraction = 1.0;
    const auto out = attack::corrupt_mask(m, spec);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 200; ++c) CHECK(out.at(r, c) == (r >= 3 && r <= 6));
  }
  SUBCASE("column count follows a binomial law") {
    spec.fraction = 0.3;
    const auto out = attack::corrupt_mask(m, spec);
    int cols = 0;
    for (int c = 0; c < 200; ++c) {
      const bool on = out.at(3, c);
      for (int r = 3; r <= 6; ++r) CHECK(out.at(r, c) == on);
      cols += on;
    }
    // Mean 60, sd ~6.5; 4 sd interval.
    CHECK(cols > 34);
    CHECK(cols < 86);
    CHECK(attack::corrupt_mask(m, spec) == out);
  }
  SUBCASE("clear mode removes labels in the band") {
    scanio::SegMask full(16, 200);
    std::fill(full.labels.begin(), full.labels.end(), 1);
    spec.fraction = 1.0;
    spec.mode = attack::CorruptionMode::kClear;
    const auto out = attack::corrupt_mask(full, spec);
    CHECK(out.dynamic_count() == 16u * 200u - 4u * 200u);
  }
  SUBCASE("scan restricts labels to valid cells") {
    auto s = flat_scan(16, 200, 10.0f);
    s.invalidate(s.index(4, 0));
    spec.fraction = 1.0;
    const auto out = attack::corrupt_mask(m, spec, &s);
    CHECK_FALSE(out.at(4, 0));
    CHECK(out.at(5, 0));
  }
  SUBCASE("invalid specs") {
    spec.row_end = 16;
    CHECK_THROWS_AS(attack::corrupt_mask(m, spec), Error);
    spec.row_end = 6;
    spec.fraction = 1.5;
    CHECK_THROWS_AS(attack::corrupt_mask(m, spec), Error);
    CHECK_THROWS_AS(attack::parse_corruption_mode("flip"), Error);
    CHECK(attack::parse_corruption_mode(attack::to_string(attack::CorruptionMode::kClear)) ==
          attack::CorruptionMode::kClear);
  }
}

TEST_CASE("count_pij hand-worked cases") {
  auto a = flat_scan(2, 4, 10.0f);
  a.invalidate(7);  // 7 valid cells
  auto b = a;
  CHECK(attack::count_pij(a, b).k == 0u);
  b.ranges[0] = 10.03f;  // below eps
  b.ranges[1] = 10.2f;
  b.invalidate(2);       // removed
  b.set(1, 3, 4.0f);     // added at the invalid cell
  const auto k = attack::count_pij(a, b, 0.05);
  std::set<std::size_t> cells(k.cells.begin(), k.cells.end());
  CHECK(cells.count(1));
  CHECK(cells.count(2));
  CHECK(cells.count(7));
  CHECK_FALSE(cells.count(0));
  CHECK_FALSE(cells.count(3));
  CHECK(k.k == 3u);
  CHECK(k.fraction == doctest::Approx(static_cast<double>(k.k) / 7.0));
  // Validity flips count from either side.
  CHECK(attack::count_pij(b, a, 0.05).k == k.k);

  auto empty = flat_scan(2, 4, 10.0f);
  for (std::size_t i = 0; i < 8; ++i) empty.invalidate(i);
  CHECK(attack::count_pij(empty, empty).fraction == 0.0);
  CHECK(std::isinf(attack::count_pij(empty, a).fraction));
  CHECK_THROWS_AS(attack::count_pij(a, flat_scan(2, 8, 1.0f)), Error);
}

TEST_CASE("random removal baseline") {
  const auto s = flat_scan(16, 256, 12.0f);
  const auto r = attack::baseline_rr(s, 0.1, 5);
  // Every counted cell is a removal.
  for (std::size_t i : r.injected_cells) CHECK_FALSE(r.attacked.valid[i]);
  const double n = 16 * 256;
  CHECK(std::abs(r.pij_fraction - 0.1) < 4 * std::sqrt(0.1 * 0.9 / n));
  CHECK(attack::baseline_rr(s, 0.0, 5).injected_cells.empty());
  CHECK(attack::baseline_rr(s, 1.0, 5).attacked.valid_count() == 0u);
  CHECK(attack::baseline_rr(s, 0.1, 5).attacked == r.attacked);
}

TEST_CASE("random noise baseline moves exactly k cells") {
  auto s = flat_scan(16, 64, 20.0f);
  s.invalidate(3);
  const std::vector<double> deltas{-3.0, -0.01, 0.02, 5.0};
  for (std::size_t k : {0u, 1u, 17u, 500u}) {
    const auto r = attack::baseline_rn(s, k, deltas, 12);
    CHECK(r.injected_cells.size() == k);
    for (std::size_t i : r.injected_cells) {
      CHECK(r.attacked.valid[i]);
      CHECK(r.attacked.ranges[i] >= s.config.min_range);
      CHECK(r.attacked.ranges[i] <= s.config.max_range);
    }
  }
  // Clamping at the range limits is still a change.
  auto near_max = flat_scan(4, 8, 49.99f);
  CHECK(attack::baseline_rn(near_max, 32, {5.0}, 1).injected_cells.size() == 32u);
  CHECK_THROWS_AS(attack::baseline_rn(s, s.valid_count() + 1, deltas, 1), Error);
  CHECK_THROWS_AS(attack::baseline_rn(s, 3, std::vector<double>{}, 1), Error);
}

TEST_CASE("mmd oracles") {
  const std::vector<double> bw{0.5, 2.0};
  SUBCASE("identical sets give zero") {
    const std::vector<backbone::LatentCode> a{code({1, 2}), code({0, -1}), code({3, 3})};
    CHECK(attack::mmd(a, a, bw) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("singletons have a closed form") {
    const auto x = code({1, 0, 2}), y = code({0, 1, 1});
    const double expect = 2 * (gauss_sum(0, bw) - gauss_sum(sq(x, y), bw));
    CHECK(attack::mmd({x}, {y}, bw) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("matches a direct double loop") {
    Rng rng(4);
    std::vector<backbone::LatentCode> a, b;
    for (int i = 0; i < 5; ++i) {
      backbone::LatentCode z, w;
      for (int t = 0; t < 4; ++t) {
        z.values.push_back(rng.normal());
        w.values.push_back(rng.normal() + 0.7);
      }
      a.push_back(z);
      if (i < 3) b.push_back(w);
    }
    double aa = 0, bb = 0, ab = 0;
    for (const auto& x : a)
      for (const auto& y : a) aa += gauss_sum(sq(x, y), bw);
    for (const auto& x : b)
      for (const auto& y : b) bb += gauss_sum(sq(x, y), bw);
    for (const auto& x : a)
      for (const auto& y : b) ab += gauss_sum(sq(x, y), bw);
    const double expect = aa / 25 + bb / 9 - 2 * ab / 15;
    CHECK(attack::mmd(a, b, bw) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(attack::mmd(a, b, bw) > 0);
  }
  SUBCASE("median heuristic") {
    const std::vector<backbone::LatentCode> z{code({0, 0}), code({3, 4}), code({0, 1})};
    // Pairwise distances 5, 1, sqrt(18); median sqrt(18).
    const auto bws = attack::median_bandwidths(z, {0.5, 2.0});
    CHECK(bws[0] == doctest::Approx(0.5 * std::sqrt(18.0)));
    CHECK(bws[1] == doctest::Approx(2.0 * std::sqrt(18.0)));
    const auto same = attack::median_bandwidths({code({1, 1}), code({1, 1})}, {1.0});
    CHECK(same[0] == 1.0);
  }
}

TEST_CASE("adversarial loss terms recomputed independently") {
  const auto seq = scanio::synth_sequence(mini_world(3, 14));
  const auto bp = backbone::init_backbone(mini_backbone(seq.frames[0].dynamic.config), 4);
  const auto pp = pretext::init_pd({6, false}, 5);
  const auto& f = seq.frames[1];
  const auto t = attack::adv_loss(f, f.dynamic_mask, bp, pp);

  const auto rj = backbone::encode(f.dynamic, f.dynamic_mask, bp);
  const auto rs = backbone::encode(f.static_scan, f.dynamic_mask, bp);
  const double score = pretext::pd_score(rj, rs, pp);
  CHECK(t.score == doctest::Approx(score).epsilon(1e-12));
  CHECK(t.bce == doctest::Approx(-std::log(score)).epsilon(1e-10));

  nn::Graph g(false);
  const nn::Tensor pred = g.value(backbone::decode_graph(
      g, bp, nullptr, g.constant(nn::Tensor({6}, rs.values))));
  double mse = 0, lit = 0;
  std::size_t n = 0, nl = 0;
  for (std::size_t i = 0; i < f.dynamic.ranges.size(); ++i) {
    if (f.dynamic.valid[i]) {
      mse += (pred[i] - f.dynamic.ranges[i]) * (pred[i] - f.dynamic.ranges[i]);
      ++n;
    }
    if (f.dynamic.valid[i] && f.static_scan.valid[i]) {
      const double d = double(f.static_scan.ranges[i]) - f.dynamic.ranges[i];
      lit += d * d;
      ++nl;
    }
  }
  CHECK(t.mse == doctest::Approx(mse / n).epsilon(1e-10));
  CHECK(t.literal_mse == doctest::Approx(lit / nl).epsilon(1e-12));
  CHECK(t.objective() == doctest::Approx(t.bce + t.mse));
}

TEST_CASE("adversarial objective gradients match central differences") {
  const auto seq = scanio::synth_sequence(mini_world(3, 8));
  auto bp = slack::testing::warm_backbone(seq);
  const auto pp = pretext::init_pd({6, false}, 10);
  const auto& f = seq.frames[1];
  const auto r = slack::testing::check_gradients(
      bp.params,
      [&](nn::ParamSet* grads) {
        nn::Graph g(grads != nullptr);
        const auto t = attack::adv_loss_graph(g, bp, grads, pp, f, f.dynamic_mask, 1.0);
        if (grads) g.backward(t.total);
        return g.scalar(t.total);
      },
      5, 31, 1e-4);
  CHECK(r.probes >= 50);
  CHECK(r.worst < 1e-4);
}

TEST_CASE("attack only moves cells the corrupted mask newly labels") {
  const auto seq = scanio::synth_sequence(mini_world(4, 17));
  const auto bp = backbone::init_backbone(mini_backbone(seq.frames[0].dynamic.config), 4);
  const auto& f = seq.frames[2];
  attack::MaskCorruptionSpec spec;
  spec.row_start = 3;
  spec.row_end = 5;
  spec.fraction = 0.5;
  spec.seed = 3;
  const auto corrupted = attack::corrupt_mask(f.static_mask, spec, &f.static_scan);
  attack::AttackOptions opt;
  opt.injection_threshold = 0.0;
  const auto a = attack::attack_scan(f.static_scan, f.static_mask, spec, bp, opt);
  for (std::size_t i : a.injected_cells) {
    CHECK(corrupted.labels[i]);
    CHECK(a.attacked.ranges[i] < f.static_scan.ranges[i]);
    CHECK(a.attacked.valid[i]);
  }
  CHECK(a.pij_fraction == doctest::Approx(double(a.injected_cells.size()) / f.static_scan.valid_count()));

  spec.fraction = 0.0;
  CHECK(attack::attack_scan(f.static_scan, f.static_mask, spec, bp, opt).injected_cells.empty());
  opt.injection_threshold = 1e9;
  spec.fraction = 1.0;
  CHECK(attack::attack_scan(f.static_scan, f.static_mask, spec, bp, opt).injected_cells.empty());
}

TEST_CASE("adversarial training raises the heterogeneous score and leaves pd frozen") {
  auto w = mini_world(8, 21);
  const auto seq = scanio::synth_sequence(w);
  const auto bp = slack::testing::warm_backbone(seq);
  pretext::PDTrainConfig pc;
  pc.epochs = 20;
  pc.learning_rate = 2e-3;
  const auto pd = pretext::train_pd({seq}, bp, pc);
  const double before = attack::mean_heterogeneous_score({seq}, pd.backbone, pd.pd);
  attack::AdvTrainConfig ac;
  ac.epochs = 20;
  const auto pd_copy = pd.pd.params;
  const auto adv = attack::train_adversarial({seq}, pd.backbone, pd.pd, ac);
  CHECK(pd.pd.params == pd_copy);
  REQUIRE(adv.history.size() == 20u);
  const double after = attack::mean_heterogeneous_score({seq}, adv.backbone, pd.pd);
  CHECK(after > before);
  CHECK(adv.history.back().bce < adv.history.front().bce);
  const std::string csv = attack::history_csv(adv.history, {"seed=1"});
  CHECK(csv.rfind("# seed=1\nepoch,bce,mse,keep,total,score\n", 0) == 0);
}

TEST_CASE("mmd adaptation reduces latent discrepancy on shifted target scans") {
  const auto src = scanio::synth_sequence(mini_world(8, 41));
  auto tw = mini_world(8, 42);
  tw.sensor_height = 1.2;
  tw.sequence_id = 5;
  const auto tgt = scanio::synth_sequence(tw);
  const auto bp = slack::testing::warm_backbone(src);
  const auto pp = pretext::init_pd({6, false}, 3);
  attack::MMDConfig cfg;
  cfg.epochs = 15;
  cfg.eval_size = 8;
  cfg.learning_rate = 2e-3;
  const auto res = attack::train_mmd_uda({src}, attack::target_scans({tgt}), bp, bp, pp, cfg);
  REQUIRE(res.history.size() == 15u);
  CHECK(res.bandwidths.size() == 4u);
  CHECK(res.mmd_after < res.mmd_before);
  cfg.multipliers.clear();
  CHECK_THROWS_AS(attack::train_mmd_uda({src}, attack::target_scans({tgt}), bp, bp, pp, cfg), Error);
}
