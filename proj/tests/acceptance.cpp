// Acceptance runner: one PASS/FAIL line per criterion.
//
//   slack_acceptance --cli <path to slack binary> [--only 1,4,10] [--work <dir>]

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "slack/attack.hpp"
#include "slack/pretext.hpp"
#include "slack/quality.hpp"
#include "slack/scanio.hpp"
#include "slack/slameval.hpp"

using namespace slack;
using slameval::Pose;
using slameval::Trajectory;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- shared helpers ------------------------------------------------------------

scanio::PointCloud random_cloud(Rng& rng, std::size_t n) {
  scanio::PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(rng.normal(), rng.normal(), rng.normal());
  return c;
}

Eigen::Isometry3d random_se3(Rng& rng, double max_t, double max_angle) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  T.linear() = Eigen::AngleAxisd(rng.uniform(-max_angle, max_angle), axis).toRotationMatrix();
  T.translation() = Eigen::Vector3d(rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t),
                                    rng.uniform(-max_t, max_t));
  return T;
}

Trajectory from_isometries(const std::vector<Eigen::Isometry3d>& Ts) {
  Trajectory t;
  for (std::size_t i = 0; i < Ts.size(); ++i) t.poses.push_back(Pose::from_isometry(0.1 * i, Ts[i]));
  return t;
}

Trajectory transformed(const Trajectory& t, const Eigen::Isometry3d& T) {
  Trajectory out = t;
  for (auto& p : out.poses) p = Pose::from_isometry(p.timestamp, T * p.isometry());
  return out;
}

Trajectory wiggly_path(std::size_t n, Rng& rng) {
  std::vector<Eigen::Isometry3d> Ts;
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  for (std::size_t i = 0; i < n; ++i) {
    Ts.push_back(T);
    T = T * random_se3(rng, 0.5, 0.1);
  }
  return from_isometries(Ts);
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

scanio::WorldSpec bench_world(std::uint64_t seed, int id, int frames) {
  scanio::WorldSpec w;
  w.frames = frames;
  w.seed = seed;
  w.sequence_id = id;
  return w;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Central differences on random entries of every parameter array.
struct GradStats {
  int probes = 0;
  double worst = 0.0;
};

void grad_probe(GradStats& acc, nn::ParamSet& ps, const std::function<double(nn::ParamSet*)>& loss, int per_array,
                std::uint64_t seed, double h = 1e-4) {
  nn::ParamSet grads = ps.zeros_like();
  loss(&grads);
  Rng rng(seed);
  for (std::size_t a = 0; a < ps.count(); ++a) {
    nn::Tensor& t = ps.value(a);
    for (int k = 0; k < per_array; ++k) {
      const std::size_t i = rng.index(t.size());
      const double orig = t[i];
      t[i] = orig + h;
      const double up = loss(nullptr);
      t[i] = orig - h;
      const double down = loss(nullptr);
      t[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads.value(a)[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      acc.worst = std::max(acc.worst, std::abs(numeric - analytic) / denom);
      ++acc.probes;
    }
  }
}

// --- 1. metric oracles ---------------------------------------------------------

Outcome metric_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  int chamfer_bad = 0, emd_bad = 0;
  double emd_worst = 0.0;
  for (int c = 0; c < 1000; ++c) {
    const auto p = random_cloud(rng, 1 + rng.index(8)), q = random_cloud(rng, 1 + rng.index(8));
    double sums[2] = {0.0, 0.0};
    for (int dir = 0; dir < 2; ++dir) {
      const auto& a = dir == 0 ? p : q;
      const auto& b = dir == 0 ? q : p;
      for (const auto& x : a.points) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& y : b.points) {
          const double dx = x.x() - y.x(), dy = x.y() - y.y(), dz = x.z() - y.z();
          best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        sums[dir] += best;
      }
    }
    if (quality::chamfer(p, q) != sums[0] + sums[1]) ++chamfer_bad;
  }
  for (int c = 0; c < 500; ++c) {
    const std::size_t n = 1 + rng.index(7);
    const auto p = random_cloud(rng, n), q = random_cloud(rng, n);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (p.points[i] - q.points[perm[i]]).norm();
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const double err = std::abs(quality::emd(p, q) - best);
    emd_worst = std::max(emd_worst, err);
    if (err > 1e-9) ++emd_bad;
  }
  const double secs = seconds_since(t0);
  return {chamfer_bad == 0 && emd_bad == 0 && secs < 60.0,
          "chamfer mismatches " + std::to_string(chamfer_bad) + "/1000, emd worst error " + fmt("%.2e", emd_worst) +
              " (" + std::to_string(emd_bad) + "/500 over 1e-9), " + fmt("%.1f", secs) + " s"};
}

// --- 2. alignment and trajectory metrics ---------------------------------------

Outcome alignment_suite() {
  Rng rng(202);
  const auto gt = wiggly_path(20, rng);
  double align_worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Isometry3d T = random_se3(rng, 20.0, M_PI);
    const Eigen::Isometry3d A = slameval::umeyama_align(transformed(gt, T), gt);
    align_worst = std::max(align_worst, (A.matrix() - T.inverse().matrix()).cwiseAbs().maxCoeff());
  }
  const double ate0 = slameval::ate(gt, gt);
  const auto rpe0 = slameval::rpe(gt, gt);

  auto noisy = gt;
  for (auto& p : noisy.poses) p.translation += Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()) * 0.1;
  const double base = slameval::ate(noisy, gt);
  double inv_worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Isometry3d T = random_se3(rng, 50.0, M_PI);
    inv_worst = std::max(inv_worst, std::abs(slameval::ate(transformed(noisy, T), gt) - base));
  }

  const Eigen::Isometry3d D = random_se3(rng, 0.05, 0.02);
  std::vector<Eigen::Isometry3d> est{gt[0].isometry()};
  for (std::size_t i = 1; i < gt.size(); ++i) {
    est.push_back(est.back() * gt[i - 1].isometry().inverse() * gt[i].isometry() * D);
  }
  const auto drift = from_isometries(est);
  double drift_worst = 0.0;
  for (int delta : {1, 2, 5}) {
    double st = 0.0, sr = 0.0;
    const std::size_t n = gt.size() - delta;
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Isometry3d g = Eigen::Isometry3d::Identity(), e = Eigen::Isometry3d::Identity();
      for (int k = 0; k < delta; ++k) {
        const Eigen::Isometry3d step = gt[i + k].isometry().inverse() * gt[i + k + 1].isometry();
        g = g * step;
        e = e * step * D;
      }
      const Eigen::Isometry3d E = g.inverse() * e;
      st += E.translation().squaredNorm();
      sr += std::pow(Eigen::AngleAxisd(E.linear()).angle() * 180.0 / M_PI, 2);
    }
    const auto r = slameval::rpe(drift, gt, delta);
    drift_worst = std::max({drift_worst, std::abs(r.trans - std::sqrt(st / n)),
                            std::abs(r.rot_deg - std::sqrt(sr / n))});
  }
  const bool ok = align_worst <= 1e-9 && ate0 == 0.0 && rpe0.trans == 0.0 && rpe0.rot_deg == 0.0 &&
                  inv_worst <= 1e-9 && drift_worst <= 1e-9;
  return {ok, "umeyama worst " + fmt("%.2e", align_worst) + ", ate(gt,gt) " + fmt("%g", ate0) + ", rpe(gt,gt) (" +
                  fmt("%g", rpe0.trans) + "," + fmt("%g", rpe0.rot_deg) + "), ate invariance " +
                  fmt("%.2e", inv_worst) + ", drift oracle " + fmt("%.2e", drift_worst)};
}

// --- 3. gradient checks --------------------------------------------------------

scanio::WorldSpec mini_world(int frames, std::uint64_t seed) {
  scanio::WorldSpec w;
  w.frames = frames;
  w.seed = seed;
  w.sensor.beams = 8;
  w.sensor.azimuth_bins = 16;
  return w;
}

backbone::BackboneConfig mini_backbone(const scanio::SensorConfig& sensor) {
  backbone::BackboneConfig c;
  c.sensor = sensor;
  c.latent_dim = 6;
  c.widths = {3, 4};
  return c;
}

Outcome gradient_checks() {
  const auto seq = scanio::synth_sequence(mini_world(4, 8));
  backbone::TrainConfig warm;
  warm.epochs = 150;
  warm.learning_rate = 3e-3;
  warm.seed = 2;
  auto bp = backbone::train_backbone({seq}, mini_backbone(seq.frames[0].dynamic.config), warm).params;
  auto pp = pretext::init_pd({6, false}, 10);
  Rng jitter(5);
  for (std::size_t i = 0; i < pp.params.count(); ++i) {
    for (auto& v : pp.params.value(i).data) v += jitter.uniform(-0.05, 0.05);
  }
  const auto& f0 = seq.frames[1];
  const auto& f1 = seq.frames[2];
  GradStats recon, contrast, eq2, eq3;

  grad_probe(recon, bp.params, [&](nn::ParamSet* grads) {
    nn::Graph g(grads != nullptr);
    const auto d = backbone::encode_graph(g, bp, grads, f0.dynamic, f0.dynamic_mask);
    const auto loss = backbone::recon_loss_graph(g, backbone::decode_graph(g, bp, grads, d.code), f0.dynamic);
    if (grads) g.backward(loss);
    return g.scalar(loss);
  }, 2, 11);
  grad_probe(contrast, bp.params, [&](nn::ParamSet* grads) {
    nn::Graph g(grads != nullptr);
    const auto a = backbone::encode_graph(g, bp, grads, f0.dynamic, f0.dynamic_mask);
    const auto p = backbone::encode_graph(g, bp, grads, f1.dynamic, f1.dynamic_mask);
    const auto n1 = backbone::encode_graph(g, bp, grads, f0.static_scan, f0.static_mask);
    const auto n2 = backbone::encode_graph(g, bp, grads, f1.static_scan, f1.static_mask);
    const auto loss = nn::weighted_sum(
        g, {nn::npair_loss(g, a.code, p.code, {n1.code, n2.code}), nn::triplet_loss(g, a.code, p.code, n1.code, 5.0)},
        {1.0, 1.0});
    if (grads) g.backward(loss);
    return g.scalar(loss);
  }, 2, 12);
  grad_probe(eq2, bp.params, [&](nn::ParamSet* grads) {
    nn::Graph g(grads != nullptr);
    const auto t = pretext::pd_loss_graph(g, bp, grads, pp, nullptr, f0, f1);
    if (grads) g.backward(t.total);
    return g.scalar(t.total);
  }, 2, 13);
  grad_probe(eq2, pp.params, [&](nn::ParamSet* grads) {
    nn::Graph g(grads != nullptr);
    const auto t = pretext::pd_loss_graph(g, bp, nullptr, pp, grads, f0, f1);
    if (grads) g.backward(t.total);
    return g.scalar(t.total);
  }, 6, 14);
  grad_probe(eq3, bp.params, [&](nn::ParamSet* grads) {
    nn::Graph g(grads != nullptr);
    const auto t = attack::adv_loss_graph(g, bp, grads, pp, f1, f1.dynamic_mask, 1.0);
    if (grads) g.backward(t.total);
    return g.scalar(t.total);
  }, 2, 15);

  const int probes = recon.probes + contrast.probes + eq2.probes + eq3.probes;
  const double worst = std::max({recon.worst, contrast.worst, eq2.worst, eq3.worst});
  return {probes >= 100 && worst < 1e-4,
          std::to_string(probes) + " probes, worst relative error " + fmt("%.2e", worst) + " (recon " +
              fmt("%.1e", recon.worst) + ", contrastive " + fmt("%.1e", contrast.worst) + ", discriminator " +
              fmt("%.1e", eq2.worst) + ", adversarial " + fmt("%.1e", eq3.worst) + ")"};
}

// --- 4. ablation direction -----------------------------------------------------

constexpr int kAblationSequences = 4;
constexpr int kAblationFrames = 60;
constexpr int kAblationEpochs = 60;

Outcome ablation_direction() {
  std::vector<scanio::Sequence> train;
  for (int s = 0; s < kAblationSequences; ++s) {
    train.push_back(scanio::synth_sequence(bench_world(200 + s, s, kAblationFrames)));
  }
  const auto val = scanio::synth_sequence(bench_world(300, 9, 20));
  struct Config {
    const char* name;
    bool attention;
    backbone::ContrastiveMode mode;
  };
  const Config configs[] = {{"attention+npair", true, backbone::ContrastiveMode::kNPair},
                            {"plain", false, backbone::ContrastiveMode::kNone},
                            {"attention+triplet", true, backbone::ContrastiveMode::kTriplet}};
  std::map<std::string, double> med;
  std::string detail;
  double slowest = 0.0;
  for (const auto& c : configs) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> scores;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      backbone::BackboneConfig arch;
      arch.sensor = train[0].frames[0].dynamic.config;
      arch.attention = c.attention;
      backbone::TrainConfig tc;
      tc.epochs = kAblationEpochs;
      tc.contrastive = c.mode;
      tc.seed = seed;
      const auto params = backbone::train_backbone(train, arch, tc).params;
      double sum = 0.0;
      int n = 0;
      // The decoder is unconstrained on cells with no return, so only cells
      // valid in the input enter the comparison.
      for (std::size_t f = 0; f < val.size(); f += 2) {
        const auto& fr = val.frames[f];
        const auto rec = backbone::reconstruct(fr.dynamic, fr.dynamic_mask, params);
        sum += quality::chamfer(scanio::unproject(fr.dynamic), scanio::unproject_cells(rec, fr.dynamic.valid));
        ++n;
      }
      scores.push_back(sum / n);
    }
    slowest = std::max(slowest, seconds_since(t0));
    med[c.name] = median3(scores);
    detail += std::string(detail.empty() ? "" : ", ") + c.name + " " + fmt("%.1f", med[c.name]);
  }
  const bool ok = med["attention+npair"] < med["plain"] && med["attention+npair"] <= med["attention+triplet"] &&
                  slowest <= 1800.0;
  return {ok, "median validation chamfer: " + detail + "; slowest configuration " + fmt("%.0f", slowest) + " s"};
}

// --- 5 and 6. attack efficacy and quality preservation ---------------------------

struct AttackBench {
  std::vector<scanio::Sequence> train, test, target;
  std::vector<backbone::BackboneParams> attack_models;  // per seed
  std::optional<quality::LQIModel> lqi;
  std::optional<quality::DSRModel> dsr;
  std::map<std::pair<int, int>, slameval::AttackReport> reports;  // (seed, test index)
  bool built = false;
};

constexpr int kTrainFrames = 40;
constexpr int kTestFrames = 60;

AttackBench& attack_bench() {
  static AttackBench b;
  if (b.built) return b;
  for (int s = 0; s < 2; ++s) b.train.push_back(scanio::synth_sequence(bench_world(100 + s, s, kTrainFrames)));
  for (int s = 0; s < 2; ++s) b.test.push_back(scanio::synth_sequence(bench_world(500 + s, 100 + s, kTestFrames)));
  auto tw = bench_world(600, 200, kTrainFrames);
  tw.static_obstacles = 80;
  tw.sensor_height = 1.2;
  b.target.push_back(scanio::synth_sequence(tw));

  std::vector<scanio::RangeImage> clean;
  for (const auto& seq : b.train) {
    for (const auto& f : seq.frames) clean.push_back(f.static_scan);
  }
  b.lqi = quality::train_lqi(clean, quality::LQIConfig{}).model;
  b.dsr = quality::train_dsr_classifier(b.train, quality::DSRConfig{}).model;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    backbone::TrainConfig tc;
    tc.epochs = 60;
    tc.seed = seed;
    const auto ae = backbone::train_backbone(b.train, backbone::BackboneConfig{}, tc);
    pretext::PDTrainConfig pc;
    pc.seed = seed;
    const auto pd = pretext::train_pd(b.train, ae.params, pc);
    attack::AdvTrainConfig ac;
    ac.epochs = 40;
    ac.seed = seed;
    b.attack_models.push_back(attack::train_adversarial(b.train, pd.backbone, pd.pd, ac).backbone);
    for (int t = 0; t < static_cast<int>(b.test.size()); ++t) {
      slameval::CompareConfig cc;
      cc.spec = {7, 11, 0.1, attack::CorruptionMode::kSetDynamic, 7 + seed};
      cc.seed = seed;
      b.reports[{static_cast<int>(seed), t}] =
          slameval::compare_attacks(b.test[t], b.attack_models.back(), cc, &*b.lqi, &*b.dsr);
    }
  }
  b.built = true;
  return b;
}

Outcome attack_efficacy() {
  auto& b = attack_bench();
  bool ok = true;
  std::string detail;
  double worst_parity = 0.0;
  for (int t = 0; t < static_cast<int>(b.test.size()); ++t) {
    int good = 0;
    std::string runs;
    for (int seed = 1; seed <= 3; ++seed) {
      const auto& r = b.reports.at({seed, t});
      const double clean = r.row("none").ate, rr = r.row("RR").ate, rn = r.row("RN").ate, sl = r.row("SLACK").ate;
      const double k = static_cast<double>(std::max<std::size_t>(r.row("SLACK").k, 1));
      worst_parity = std::max({worst_parity, std::abs(double(r.row("RR").k) - k) / k,
                               std::abs(double(r.row("RN").k) - k) / k});
      const bool order = sl > rr && sl > rn && rr >= clean && rn >= clean;
      good += order;
      runs += (runs.empty() ? "" : " | ") + fmt("none %.4f", clean) + fmt(" RR %.4f", rr) + fmt(" RN %.4f", rn) +
              fmt(" SLACK %.4f", sl);
    }
    ok = ok && good >= 2;
    detail += (detail.empty() ? "" : "; ") + std::string("seq ") + std::to_string(b.test[t].id) + " " +
              std::to_string(good) + "/3 seeds ordered [" + runs + "]";
  }
  ok = ok && worst_parity <= 0.05;
  return {ok, detail + "; worst budget gap " + fmt("%.3f", worst_parity)};
}

Outcome quality_direction() {
  auto& b = attack_bench();
  double lqi_slack = 0, lqi_rn = 0, dsr_slack = 0, dsr_orig = 0;
  int n = 0;
  for (const auto& [key, r] : b.reports) {
    lqi_slack += r.row("SLACK").lqi;
    lqi_rn += r.row("RN").lqi;
    dsr_slack += r.row("SLACK").dsr;
    dsr_orig += r.row("none").dsr;
    ++n;
  }
  lqi_slack /= n;
  lqi_rn /= n;
  dsr_slack /= n;
  dsr_orig /= n;
  return {lqi_slack < lqi_rn && dsr_slack > dsr_orig,
          "mean over " + std::to_string(n) + " runs: LQI SLACK " + fmt("%.4f", lqi_slack) + " vs RN " +
              fmt("%.4f", lqi_rn) + ", DSR SLACK " + fmt("%.5f", dsr_slack) + " vs original " + fmt("%.5f", dsr_orig)};
}

// --- 7 and 8. quality models ---------------------------------------------------

Outcome lqi_behaviour() {
  auto& b = attack_bench();
  std::vector<scanio::RangeImage> held;
  for (const auto& seq : b.test) {
    for (const auto& f : seq.frames) held.push_back(f.static_scan);
  }
  const quality::LQIConfig cfg;
  const auto ev = quality::evaluate_lqi(held, *b.lqi, cfg.levels, 77);
  const bool ok = ev.levels.size() >= 5 && ev.mean_abs_error < 0.15 * cfg.sigma_max && ev.spearman >= 0.9;
  return {ok, "held-out MAE " + fmt("%.4f", ev.mean_abs_error) + " (limit " + fmt("%.3f", 0.15 * cfg.sigma_max) +
                  "), Spearman " + fmt("%.4f", ev.spearman) + " over " + std::to_string(ev.levels.size()) +
                  " levels"};
}

Outcome dsr_behaviour() {
  auto& b = attack_bench();
  const auto ev = quality::evaluate_dsr(b.test, *b.dsr);
  double worst_static = 0.0;
  for (const auto& seq : b.test) {
    for (const auto& f : seq.frames) worst_static = std::max(worst_static, quality::dsr_from_mask(f.static_scan, f.static_mask));
  }
  return {ev.accuracy >= 0.95 && worst_static == 0.0,
          "held-out per-cell accuracy " + fmt("%.4f", ev.accuracy) + ", max DSR on static scans under ground truth " +
              fmt("%g", worst_static)};
}

// --- 9. MMD --------------------------------------------------------------------

Outcome mmd_suite() {
  Rng rng(909);
  const std::vector<double> bw{0.5, 1.0, 2.0, 4.0};
  auto code = [&](int dim) {
    backbone::LatentCode z;
    for (int i = 0; i < dim; ++i) z.values.push_back(rng.normal());
    return z;
  };
  std::vector<backbone::LatentCode> a;
  for (int i = 0; i < 12; ++i) a.push_back(code(16));
  const double self = attack::mmd(a, a, bw);
  const auto x = code(16), y = code(16);
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (x.values[i] - y.values[i]) * (x.values[i] - y.values[i]);
  double kxy = 0.0;
  for (double s : bw) kxy += std::exp(-d2 / (2 * s * s));
  const double expect = 2.0 * (static_cast<double>(bw.size()) - kxy);
  const double singleton_err = std::abs(attack::mmd({x}, {y}, bw) - expect);

  auto& b = attack_bench();
  backbone::TrainConfig tc;
  tc.epochs = 60;
  tc.seed = 4;
  const auto target_ae = backbone::train_backbone(b.target, backbone::BackboneConfig{}, tc).params;
  pretext::PDTrainConfig pc;
  const auto pd = pretext::train_pd(b.train, b.attack_models.front(), pc);
  attack::MMDConfig mc;
  mc.epochs = 30;
  const auto res = attack::train_mmd_uda(b.train, attack::target_scans(b.target), b.attack_models.front(), target_ae,
                                         pd.pd, mc);
  const double reduction = 1.0 - res.mmd_after / res.mmd_before;
  return {std::abs(self) <= 1e-12 && singleton_err <= 1e-12 && reduction >= 0.5,
          "mmd(A,A) " + fmt("%.1e", self) + ", singleton error " + fmt("%.1e", singleton_err) + ", latent MMD " +
              fmt("%.4f", res.mmd_before) + " -> " + fmt("%.4f", res.mmd_after) + " (" + fmt("%.0f", 100 * reduction) +
              "% reduction)"};
}

// --- 10. determinism and formats -----------------------------------------------

Outcome determinism(const std::string& cli, const fs::path& work) {
  std::string detail;
  bool ok = true;
  if (cli.empty()) {
    ok = false;
    detail = "no --cli binary given";
  } else {
    const fs::path r1 = work / "demo_a", r2 = work / "demo_b";
    fs::remove_all(r1);
    fs::remove_all(r2);
    int rc = 0;
    for (const auto& r : {r1, r2}) {
      const std::string cmd = "\"" + cli + "\" --seed 11 --quiet demo --root \"" + r.string() + "\" > /dev/null";
      rc |= std::system(cmd.c_str());
    }
    std::set<fs::path> a, c;
    for (const auto& e : fs::recursive_directory_iterator(r1)) {
      if (e.is_regular_file() && e.path().extension() == ".csv") a.insert(fs::relative(e.path(), r1));
    }
    for (const auto& e : fs::recursive_directory_iterator(r2)) {
      if (e.is_regular_file() && e.path().extension() == ".csv") c.insert(fs::relative(e.path(), r2));
    }
    int differing = 0;
    for (const auto& rel : a) differing += !c.count(rel) || slurp(r1 / rel) != slurp(r2 / rel);
    ok = rc == 0 && !a.empty() && a == c && differing == 0;
    detail = std::to_string(a.size()) + " CSV files compared, " + std::to_string(differing) + " differ";
    if (rc != 0) detail += ", demo exit status " + std::to_string(rc);
  }

  Rng rng(1010);
  const auto seq = scanio::synth_sequence(bench_world(31, 31, 3));
  int scan_bad = 0;
  for (const auto& f : seq.frames) {
    scanio::write_scan(work / "rt.slkr", f.dynamic, &f.dynamic_mask);
    const auto back = scanio::read_scan(work / "rt.slkr", &f.dynamic.config);
    scan_bad += !(back.image == f.dynamic) || !back.mask || !(*back.mask == f.dynamic_mask);
  }
  Trajectory t;
  for (int i = 0; i < 200; ++i) {
    Pose p;
    p.timestamp = 0.1 * i + rng.uniform(0, 0.01);
    p.translation = Eigen::Vector3d(rng.uniform(-1e3, 1e3), rng.uniform(-1e3, 1e3), rng.uniform(-1, 1));
    p.rotation = Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
    t.poses.push_back(p);
  }
  slameval::write_trajectory(work / "rt.txt", t, {"seed=1"});
  const auto back = slameval::read_trajectory(work / "rt.txt");
  int traj_bad = back.size() != t.size();
  for (std::size_t i = 0; !traj_bad && i < t.size(); ++i) {
    traj_bad += back[i].timestamp != t[i].timestamp || back[i].translation != t[i].translation ||
                back[i].rotation.coeffs() != t[i].rotation.coeffs();
  }
  ok = ok && scan_bad == 0 && traj_bad == 0;
  return {ok, detail + "; scan round trip mismatches " + std::to_string(scan_bad) + ", trajectory mismatches " +
                  std::to_string(traj_bad)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string cli, only;
  std::string work = (fs::temp_directory_path() / "slack_acceptance").string();
  app.add_option("--cli", cli, "Path to the slack command-line binary");
  app.add_option("--only", only, "Comma-separated criterion numbers");
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  std::stringstream ss(only);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) selected.insert(std::stoi(item));
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"metric oracles", metric_oracles},
      {"alignment and trajectory metrics", alignment_suite},
      {"gradient checks", gradient_checks},
      {"ablation direction", ablation_direction},
      {"attack efficacy direction", attack_efficacy},
      {"quality preservation direction", quality_direction},
      {"LQI behaviour", lqi_behaviour},
      {"DSR classifier", dsr_behaviour},
      {"MMD and adaptation", mmd_suite},
      {"determinism and formats", [&] { return determinism(cli, work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d %s: %s (%s) [%.0f s]\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
