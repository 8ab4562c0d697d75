#include <doctest.h>

#include <Eigen/Dense>

#include "slack/pretext.hpp"
#include "test_support.hpp"

using namespace slack;
using slack::testing::mini_backbone;
using slack::testing::mini_world;

namespace {

Eigen::VectorXd eig(const nn::Tensor& t) {
  return Eigen::Map<const Eigen::VectorXd>(t.data.data(), static_cast<Eigen::Index>(t.size()));
}

Eigen::MatrixXd mat(const nn::Tensor& t) {
  // Row-major [O, N].
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (int r = 0; r < t.dim(0); ++r)
    for (int c = 0; c < t.dim(1); ++c) m(r, c) = t[static_cast<std::size_t>(r) * t.dim(1) + c];
  return m;
}

double leaky(double v) { return v > 0 ? v : 0.1 * v; }

double oracle_score(const backbone::LatentCode& a, const backbone::LatentCode& b,
                    const pretext::PDParams& pp) {
  const auto& ps = pp.params;
  Eigen::VectorXd x;
  if (pp.config.vanilla) {
    x = Eigen::Map<const Eigen::VectorXd>(b.values.data(), b.size());
  } else {
    x.resize(static_cast<Eigen::Index>(a.size() + b.size()));
    for (std::size_t i = 0; i < a.size(); ++i) x(i) = a.values[i];
    for (std::size_t i = 0; i < b.size(); ++i) x(a.size() + i) = b.values[i];
  }
  Eigen::VectorXd h = (mat(ps.at("pd.h1.w")) * x + eig(ps.at("pd.h1.b"))).unaryExpr(&leaky);
  h = (mat(ps.at("pd.h2.w")) * h + eig(ps.at("pd.h2.b"))).unaryExpr(&leaky);
  const double logit = (mat(ps.at("pd.out.w")) * h)(0) + ps.at("pd.out.b")[0];
  return 1.0 / (1.0 + std::exp(-logit));
}

// Mean squared error of the raw decoder output on the valid cells of x.
double oracle_recon(const backbone::LatentCode& z, const scanio::RangeImage& x,
                    const backbone::BackboneParams& bp) {
  nn::Graph g(false);
  const nn::Var out = backbone::decode_graph(
      g, bp, nullptr, g.constant(nn::Tensor({static_cast<int>(z.size())}, z.values)));
  const nn::Tensor pred = g.value(out);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.ranges.size(); ++i) {
    if (!x.valid[i]) continue;
    s += (pred[i] - x.ranges[i]) * (pred[i] - x.ranges[i]);
    ++n;
  }
  return s / static_cast<double>(n);
}

void jitter(nn::ParamSet& ps, std::uint64_t seed, double amount) {
  Rng rng(seed);
  for (std::size_t a = 0; a < ps.count(); ++a)
    for (auto& v : ps.value(a).data) v += rng.uniform(-amount, amount);
}

}  // namespace

TEST_CASE("pd score matches a dense reference and stays in (0,1)") {
  for (bool vanilla : {false, true}) {
    const auto pp = pretext::init_pd({6, vanilla}, 11);
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
      backbone::LatentCode a, b;
      for (int i = 0; i < 6; ++i) {
        a.values.push_back(rng.normal() * 3);
        b.values.push_back(rng.normal() * 3);
      }
      const double s = pretext::pd_score(a, b, pp);
      CHECK(s > 0.0);
      CHECK(s < 1.0);
      CHECK(s == doctest::Approx(oracle_score(a, b, pp)).epsilon(1e-12));
      CHECK(s == pretext::pd_score(a, b, pp));
    }
  }
}

TEST_CASE("vanilla discriminator ignores the first code") {
  const auto pp = pretext::init_pd({6, true}, 2);
  backbone::LatentCode a{{1, 2, 3, 4, 5, 6}}, a2{{-9, 0, 9, 0, 9, 0}}, b{{0.5, -1, 2, 0, 1, 1}};
  CHECK(pretext::pd_score(a, b, pp) == pretext::pd_score(a2, b, pp));
}

TEST_CASE("pd head rejects mismatched latent width") {
  const auto pp = pretext::init_pd({6, false}, 2);
  backbone::LatentCode a{{1, 2, 3}}, b{{1, 2, 3}};
  CHECK_THROWS_AS(pretext::pd_score(a, b, pp), Error);
}

TEST_CASE("pd loss equals its five terms recomputed independently") {
  const auto seq = scanio::synth_sequence(mini_world(4, 7));
  const auto bp = backbone::init_backbone(mini_backbone(seq.frames[0].dynamic.config), 4);
  const auto pp = pretext::init_pd({6, false}, 9);
  const auto& fi = seq.frames[0];
  const auto& fj = seq.frames[2];
  const auto t = pretext::pd_loss(fi, fj, bp, pp);

  const auto ri = backbone::encode(fi.dynamic, fi.dynamic_mask, bp);
  const auto rj = backbone::encode(fj.dynamic, fj.dynamic_mask, bp);
  const auto rs = backbone::encode(fj.static_scan, fj.static_mask, bp);
  CHECK(t.recon_di == doctest::Approx(oracle_recon(ri, fi.dynamic, bp)).epsilon(1e-10));
  CHECK(t.recon_dj == doctest::Approx(oracle_recon(rj, fj.dynamic, bp)).epsilon(1e-10));
  CHECK(t.recon_sj == doctest::Approx(oracle_recon(rs, fj.static_scan, bp)).epsilon(1e-10));
  const double hom = oracle_score(ri, rj, pp), het = oracle_score(rj, rs, pp);
  CHECK(t.bce_homogeneous == doctest::Approx(-std::log(hom)).epsilon(1e-10));
  CHECK(t.bce_heterogeneous == doctest::Approx(-std::log(1.0 - het)).epsilon(1e-10));
  CHECK(t.total() == doctest::Approx(t.recon_di + t.recon_dj + t.recon_sj + t.bce_homogeneous +
                                     t.bce_heterogeneous));
}

TEST_CASE("pd objective gradients match central differences") {
  const auto seq = scanio::synth_sequence(mini_world(3, 8));
  const auto bp = slack::testing::warm_backbone(seq);
  auto pp = pretext::init_pd({6, false}, 10);
  jitter(pp.params, 2, 0.05);
  const auto& fi = seq.frames[0];
  const auto& fj = seq.frames[1];

  SUBCASE("backbone parameters") {
    auto ps = bp;
    const auto r = slack::testing::check_gradients(
        ps.params,
        [&](nn::ParamSet* grads) {
          nn::Graph g(grads != nullptr);
          const auto t = pretext::pd_loss_graph(g, ps, grads, pp, nullptr, fi, fj);
          if (grads) g.backward(t.total);
          return g.scalar(t.total);
        },
        5, 21, 1e-4);
    CHECK(r.probes >= 50);
    CHECK(r.worst < 1e-4);
  }
  SUBCASE("pd parameters") {
    const auto r = slack::testing::check_gradients(
        pp.params,
        [&](nn::ParamSet* grads) {
          nn::Graph g(grads != nullptr);
          const auto t = pretext::pd_loss_graph(g, bp, nullptr, pp, grads, fi, fj);
          if (grads) g.backward(t.total);
          return g.scalar(t.total);
        },
        10, 22, 1e-4);
    CHECK(r.probes >= 50);
    CHECK(r.worst < 1e-4);
  }
}

TEST_CASE("pd checkpoint round trip and kind check") {
  const auto pp = pretext::init_pd({6, true}, 3);
  const auto back = pretext::pd_from_checkpoint(
      deserialize_checkpoint(serialize_checkpoint(pretext::to_checkpoint(pp))));
  CHECK(back.config.vanilla);
  CHECK(back.params == pp.params);
  auto bad = pretext::to_checkpoint(pp);
  bad.kind = "lqi";
  CHECK_THROWS_AS(pretext::pd_from_checkpoint(bad), Error);
}

TEST_CASE("trained pd separates held-out homogeneous and heterogeneous pairs") {
  auto w = mini_world(16, 31);
  const auto train = scanio::synth_sequence(w);
  w.seed = 32;
  w.sequence_id = 1;
  const auto test = scanio::synth_sequence(w);
  const auto bp = slack::testing::warm_backbone(train);
  pretext::PDTrainConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 3e-3;
  cfg.seed = 4;
  const auto res = pretext::train_pd({train}, bp, cfg);
  REQUIRE(res.history.size() == 30u);
  CHECK(res.history.back().loss < res.history.front().loss);
  const auto ev = pretext::evaluate_pd({test}, res.backbone, res.pd, 8);
  CHECK(ev.accuracy >= 0.8);
  CHECK(ev.mean_homogeneous > ev.mean_heterogeneous);
  const auto swapped = pretext::evaluate_pd({test}, res.backbone, res.pd, 8, true);
  CHECK(swapped.accuracy == doctest::Approx(1.0 - ev.accuracy));

  const auto again = pretext::train_pd({train}, bp, cfg);
  CHECK(again.pd.params == res.pd.params);
}

TEST_CASE("pd training rejects single-frame sequences") {
  auto seq = scanio::synth_sequence(mini_world(2, 3));
  seq.frames.pop_back();
  const auto bp = backbone::init_backbone(mini_backbone(seq.frames[0].dynamic.config), 5);
  CHECK_THROWS_AS(pretext::train_pd({seq}, bp, {}), Error);
}
