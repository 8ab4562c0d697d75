#include "slack/quality.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "slack/trajectory.hpp"

namespace slack::quality {

namespace {

using scanio::PointCloud;
using scanio::RangeImage;

constexpr double kSlope = 0.1;
constexpr double kRangeScale = 10.0;

void require_nonempty(const PointCloud& p, const PointCloud& q, const char* what) {
  require(!p.empty() && !q.empty(), ErrorCode::kValidation,
          std::string(what) + " needs two nonempty clouds");
}

KeyValues sensor_kv(const scanio::SensorConfig& s) {
  using slameval::format_decimal;
  return {{"beams", std::to_string(s.beams)},
          {"azimuth_bins", std::to_string(s.azimuth_bins)},
          {"min_elevation", format_decimal(s.min_elevation)},
          {"max_elevation", format_decimal(s.max_elevation)},
          {"min_range", format_decimal(s.min_range)},
          {"max_range", format_decimal(s.max_range)}};
}

scanio::SensorConfig sensor_from_kv(const KeyValues& kv) {
  scanio::SensorConfig s;
  try {
    s.beams = std::stoi(kv_get(kv, "beams"));
    s.azimuth_bins = std::stoi(kv_get(kv, "azimuth_bins"));
    s.min_elevation = std::stod(kv_get(kv, "min_elevation"));
    s.max_elevation = std::stod(kv_get(kv, "max_elevation"));
    s.min_range = std::stod(kv_get(kv, "min_range"));
    s.max_range = std::stod(kv_get(kv, "max_range"));
  } catch (const std::logic_error& e) {
    fail(ErrorCode::kFormat, std::string("bad sensor config: ") + e.what());
  }
  s.validate();
  return s;
}

void check_params(const nn::ParamSet& ref, const nn::ParamSet& got, const std::string& kind) {
  require(ref.count() == got.count(), ErrorCode::kFormat, kind + " checkpoint has wrong parameter count");
  for (std::size_t i = 0; i < ref.count(); ++i) {
    require(ref.name(i) == got.name(i) && ref.value(i).shape == got.value(i).shape,
            ErrorCode::kFormat, kind + " checkpoint parameter mismatch at " + ref.name(i));
  }
  require(got.all_finite(), ErrorCode::kFormat, kind + " checkpoint has non-finite values");
}

void require_sensor(const RangeImage& scan, const scanio::SensorConfig& s, const char* what) {
  require(scan.config.same_grid(s), ErrorCode::kShapeMismatch,
          std::string(what) + " model was trained on a different sensor grid");
}

// --- LQI network: conv3 s1 (8) -> conv4 s2 (16) -> conv4 s2 (16) -> pool -> 1
nn::Var lqi_graph(nn::Graph& g, const LQIModel& m, nn::ParamSet* grads, const RangeImage& x) {
  const int B = x.rows(), A = x.cols();
  nn::Tensor t({3, B, A});
  const std::size_t n = static_cast<std::size_t>(B) * A;
  for (int r = 0; r < B; ++r) {
    for (int c = 0; c < A; ++c) {
      const std::size_t i = x.index(r, c);
      if (!x.valid[i]) continue;
      t[i] = x.ranges[i] / kRangeScale;
      t[n + i] = 1.0;
      // Azimuthal second difference; surfaces are smooth along a beam.
      const std::size_t l = x.index(r, (c + A - 1) % A), rt = x.index(r, (c + 1) % A);
      if (x.valid[l] && x.valid[rt]) {
        t[2 * n + i] = x.ranges[i] - 0.5 * (x.ranges[l] + x.ranges[rt]);
      }
    }
  }
  const nn::ParamSet& ps = m.params;
  nn::Var h = g.constant(std::move(t));
  h = nn::leaky_relu(g, nn::conv2d(g, h, g.param(ps, "c0.w", grads), g.param(ps, "c0.b", grads), 1, 1), kSlope);
  h = nn::leaky_relu(g, nn::conv2d(g, h, g.param(ps, "c1.w", grads), g.param(ps, "c1.b", grads), 2, 1), kSlope);
  h = nn::leaky_relu(g, nn::conv2d(g, h, g.param(ps, "c2.w", grads), g.param(ps, "c2.b", grads), 2, 1), kSlope);
  return nn::linear(g, nn::global_avg_pool(g, h), g.param(ps, "head.w", grads), g.param(ps, "head.b", grads));
}

// --- DSR network: per-cell features -> conv3 (12) -> conv3 (12) -> conv1 -> sigmoid
nn::Var dsr_graph(nn::Graph& g, const DSRModel& m, nn::ParamSet* grads, const RangeImage& x) {
  const int B = x.rows(), A = x.cols();
  nn::Tensor t({5, B, A});
  const std::size_t n = static_cast<std::size_t>(B) * A;
  for (int r = 0; r < B; ++r) {
    for (int c = 0; c < A; ++c) {
      const std::size_t i = x.index(r, c);
      if (!x.valid[i]) continue;
      const Eigen::Vector3d p = x.config.cell_direction(r, c) * static_cast<double>(x.ranges[i]);
      t[i] = x.ranges[i] / kRangeScale;
      t[n + i] = 1.0;
      t[2 * n + i] = p.x() / kRangeScale;
      t[3 * n + i] = p.y() / kRangeScale;
      t[4 * n + i] = p.z() / 2.0;
    }
  }
  const nn::ParamSet& ps = m.params;
  nn::Var h = g.constant(std::move(t));
  h = nn::leaky_relu(g, nn::conv2d(g, h, g.param(ps, "c0.w", grads), g.param(ps, "c0.b", grads), 1, 1), kSlope);
  h = nn::leaky_relu(g, nn::conv2d(g, h, g.param(ps, "c1.w", grads), g.param(ps, "c1.b", grads), 1, 1), kSlope);
  return nn::sigmoid(g, nn::conv2d(g, h, g.param(ps, "out.w", grads), g.param(ps, "out.b", grads), 1, 0));
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double chamfer(const PointCloud& p, const PointCloud& q) {
  require_nonempty(p, q, "chamfer");
  auto one_way = [](const PointCloud& a, const PointCloud& b) {
    double s = 0.0;
    for (const auto& x : a.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& y : b.points) {
        const double dx = x.x() - y.x(), dy = x.y() - y.y(), dz = x.z() - y.z();
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      s += best;
    }
    return s;
  };
  return one_way(p, q) + one_way(q, p);
}

std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
  require(n >= 0 && cost.size() == static_cast<std::size_t>(n) * n, ErrorCode::kValidation,
          "assignment cost matrix must be n x n");
  // Shortest augmenting path with potentials, O(n^3); 1-based internally.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n);
  for (int j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

double emd(const PointCloud& p, const PointCloud& q) {
  require_nonempty(p, q, "emd");
  require(p.size() == q.size(), ErrorCode::kValidation,
          "emd needs equal cloud sizes (" + std::to_string(p.size()) + " vs " +
              std::to_string(q.size()) + ")");
  const int n = static_cast<int>(p.size());
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) cost[static_cast<std::size_t>(i) * n + j] = (p.points[i] - q.points[j]).norm();
  }
  const auto match = solve_assignment(cost, n);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += cost[static_cast<std::size_t>(i) * n + match[i]];
  return s;
}

double emd_subsampled(const PointCloud& p, const PointCloud& q, std::size_t max_points,
                      std::uint64_t seed) {
  require_nonempty(p, q, "emd");
  const std::size_t n = std::min({p.size(), q.size(), std::max<std::size_t>(max_points, 1)});
  Rng rng(seed);
  auto pick = [&](const PointCloud& c) {
    std::vector<std::size_t> idx(c.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t t = 0; t < n; ++t) std::swap(idx[t], idx[t + rng.index(idx.size() - t)]);
    PointCloud out;
    for (std::size_t t = 0; t < n; ++t) out.points.push_back(c.points[idx[t]]);
    return out;
  };
  return emd(pick(p), pick(q));
}

// --- LQI -------------------------------------------------------------------------

void LQIConfig::validate() const {
  require(epochs >= 1 && levels >= 2 && copies >= 1, ErrorCode::kValidation,
          "LQI needs epochs >= 1, levels >= 2 and copies >= 1");
  require(sigma_max > 0 && learning_rate > 0, ErrorCode::kValidation,
          "LQI sigma_max and learning rate must be > 0");
}

LQIModel init_lqi(const scanio::SensorConfig& sensor, double sigma_max, std::uint64_t seed) {
  sensor.validate();
  Rng rng(seed);
  LQIModel m;
  m.sensor = sensor;
  m.sigma_max = sigma_max;
  m.params.add("c0.w", nn::init_uniform({8, 3, 3, 3}, 27, rng));
  m.params.add("c0.b", nn::Tensor({8}));
  m.params.add("c1.w", nn::init_uniform({16, 8, 4, 4}, 128, rng));
  m.params.add("c1.b", nn::Tensor({16}));
  m.params.add("c2.w", nn::init_uniform({16, 16, 4, 4}, 256, rng));
  m.params.add("c2.b", nn::Tensor({16}));
  m.params.add("head.w", nn::init_uniform({1, 16}, 16, rng, 0.5));
  m.params.add("head.b", nn::Tensor({1}));
  return m;
}

RangeImage add_noise(const RangeImage& s, double sigma, Rng& rng) {
  RangeImage out = s;
  for (std::size_t i = 0; i < s.ranges.size(); ++i) {
    if (!s.valid[i]) continue;
    const double v = s.ranges[i] + sigma * rng.normal();
    out.ranges[i] = static_cast<float>(std::clamp(v, s.config.min_range, s.config.max_range));
  }
  return out;
}

std::vector<double> noise_levels(double sigma_max, int levels) {
  std::vector<double> out;
  for (int i = 0; i < levels; ++i) out.push_back(sigma_max * i / (levels - 1));
  return out;
}

LQITrainResult train_lqi(const std::vector<RangeImage>& clean, const LQIConfig& cfg) {
  cfg.validate();
  require(!clean.empty(), ErrorCode::kValidation, "LQI training set is empty");
  LQITrainResult res;
  res.model = init_lqi(clean.front().config, cfg.sigma_max, cfg.seed);
  nn::ParamSet grads = res.model.params.zeros_like();
  nn::Adam opt(res.model.params, {cfg.learning_rate, 0.9, 0.999, 1e-8, 0.0});
  Rng rng(cfg.seed ^ 0x1A1ull);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& s : clean) {
      require_sensor(s, res.model.sensor, "LQI");
      for (int c = 0; c < cfg.copies; ++c) {
        const double sigma = rng.uniform(0.0, cfg.sigma_max);
        const RangeImage noisy = add_noise(s, sigma, rng);
        nn::Graph g;
        const nn::Var pred = lqi_graph(g, res.model, &grads, noisy);
        // Regress sigma in units of sigma_max.
        const nn::Var loss = nn::masked_mse(g, pred, {sigma / cfg.sigma_max}, {1});
        if (!std::isfinite(g.scalar(loss))) {
          fail(ErrorCode::kDivergence, "train-quality (LQI) diverged at epoch " + std::to_string(epoch));
        }
        g.backward(loss);
        opt.step(res.model.params, grads);
        grads.set_zero();
        total += g.scalar(loss);
        ++n;
      }
    }
    res.loss.push_back(total / static_cast<double>(n));
  }
  return res;
}

double lqi(const RangeImage& scan, const LQIModel& m) {
  require_sensor(scan, m.sensor, "LQI");
  nn::Graph g(false);
  return std::max(0.0, g.scalar(lqi_graph(g, m, nullptr, scan)) * m.sigma_max);
}

Checkpoint to_checkpoint(const LQIModel& m) {
  KeyValues kv = sensor_kv(m.sensor);
  kv.emplace_back("sigma_max", slameval::format_decimal(m.sigma_max));
  return Checkpoint{"lqi", kv, m.params};
}

LQIModel lqi_from_checkpoint(const Checkpoint& ckpt) {
  require(ckpt.kind == "lqi", ErrorCode::kFormat, "expected an lqi checkpoint, got '" + ckpt.kind + "'");
  LQIModel m;
  m.sensor = sensor_from_kv(ckpt.config);
  m.sigma_max = std::stod(kv_get(ckpt.config, "sigma_max"));
  m.params = ckpt.params;
  check_params(init_lqi(m.sensor, m.sigma_max, 0).params, m.params, "lqi");
  return m;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorCode::kValidation,
          "spearman needs two equal-length samples of size >= 2");
  const auto ra = ranks(a), rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

LQIEvaluation evaluate_lqi(const std::vector<RangeImage>& clean, const LQIModel& m, int levels,
                           std::uint64_t seed) {
  require(!clean.empty() && levels >= 2, ErrorCode::kValidation,
          "LQI evaluation needs scans and at least 2 levels");
  LQIEvaluation ev;
  ev.levels = noise_levels(m.sigma_max, levels);
  Rng rng(seed);
  double err = 0.0;
  std::size_t n = 0;
  for (double sigma : ev.levels) {
    double s = 0.0;
    for (const auto& scan : clean) {
      const double pred = lqi(add_noise(scan, sigma, rng), m);
      err += std::abs(pred - sigma);
      s += pred;
      ++n;
    }
    ev.mean_prediction.push_back(s / static_cast<double>(clean.size()));
  }
  ev.mean_abs_error = err / static_cast<double>(n);
  ev.spearman = spearman(ev.levels, ev.mean_prediction);
  return ev;
}

// --- DSR -----------------------------------------------------------------------------

void DSRConfig::validate() const {
  require(epochs >= 1 && learning_rate > 0 && max_class_weight >= 1.0, ErrorCode::kValidation,
          "DSR needs epochs >= 1, learning rate > 0 and max class weight >= 1");
}

DSRModel init_dsr(const scanio::SensorConfig& sensor, std::uint64_t seed) {
  sensor.validate();
  Rng rng(seed);
  DSRModel m;
  m.sensor = sensor;
  m.params.add("c0.w", nn::init_uniform({12, 5, 3, 3}, 45, rng));
  m.params.add("c0.b", nn::Tensor({12}));
  m.params.add("c1.w", nn::init_uniform({12, 12, 3, 3}, 108, rng));
  m.params.add("c1.b", nn::Tensor({12}));
  m.params.add("out.w", nn::init_uniform({1, 12, 1, 1}, 12, rng, 0.5));
  m.params.add("out.b", nn::Tensor({1}));
  return m;
}

DSRTrainResult train_dsr_classifier(const std::vector<scanio::Sequence>& data, const DSRConfig& cfg) {
  cfg.validate();
  struct Item {
    const RangeImage* scan;
    const scanio::SegMask* mask;
  };
  std::vector<Item> items;
  std::size_t dyn = 0, valid = 0;
  for (const auto& seq : data) {
    for (const auto& f : seq.frames) {
      items.push_back({&f.dynamic, &f.dynamic_mask});
      items.push_back({&f.static_scan, &f.static_mask});
      dyn += f.dynamic_mask.dynamic_count();
      valid += f.dynamic.valid_count() + f.static_scan.valid_count();
    }
  }
  require(!items.empty(), ErrorCode::kValidation, "DSR training set is empty");
  DSRTrainResult res;
  res.model = init_dsr(items.front().scan->config, cfg.seed);
  // Dynamic cells are rare; weight them by the square root of the class ratio.
  const double ratio = dyn > 0 ? static_cast<double>(valid - dyn) / static_cast<double>(dyn) : 1.0;
  const double w_dyn = std::clamp(std::sqrt(ratio), 1.0, cfg.max_class_weight);
  nn::ParamSet grads = res.model.params.zeros_like();
  nn::Adam opt(res.model.params, {cfg.learning_rate, 0.9, 0.999, 1e-8, 0.0});
  Rng rng(cfg.seed ^ 0xD5A11ull);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(items);
    double total = 0.0;
    for (const auto& it : items) {
      require_sensor(*it.scan, res.model.sensor, "DSR");
      std::vector<double> labels(it.mask->labels.begin(), it.mask->labels.end());
      std::vector<double> weights(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) weights[i] = labels[i] > 0 ? w_dyn : 1.0;
      if (it.scan->valid_count() == 0) continue;
      nn::Graph g;
      const nn::Var p = dsr_graph(g, res.model, &grads, *it.scan);
      const nn::Var loss = nn::weighted_bce_map(g, p, labels, weights, it.scan->valid);
      if (!std::isfinite(g.scalar(loss))) {
        fail(ErrorCode::kDivergence, "train-quality (DSR) diverged at epoch " + std::to_string(epoch));
      }
      g.backward(loss);
      opt.step(res.model.params, grads);
      grads.set_zero();
      total += g.scalar(loss);
    }
    res.loss.push_back(total / static_cast<double>(items.size()));
  }
  return res;
}

std::vector<double> dsr_probabilities(const RangeImage& scan, const DSRModel& m) {
  require_sensor(scan, m.sensor, "DSR");
  nn::Graph g(false);
  return g.value(dsr_graph(g, m, nullptr, scan)).data;
}

double dsr(const RangeImage& scan, const DSRModel& m) {
  const auto p = dsr_probabilities(scan, m);
  std::size_t dyn = 0, valid = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!scan.valid[i]) continue;
    ++valid;
    dyn += p[i] > 0.5;
  }
  return valid ? static_cast<double>(dyn) / static_cast<double>(valid) : 0.0;
}

double dsr_from_mask(const RangeImage& scan, const scanio::SegMask& mask) {
  require(mask.rows == scan.rows() && mask.cols == scan.cols(), ErrorCode::kShapeMismatch,
          "mask and scan differ in shape");
  std::size_t dyn = 0, valid = 0;
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    if (!scan.valid[i]) continue;
    ++valid;
    dyn += mask.labels[i] != 0;
  }
  return valid ? static_cast<double>(dyn) / static_cast<double>(valid) : 0.0;
}

Checkpoint to_checkpoint(const DSRModel& m) { return Checkpoint{"dsr", sensor_kv(m.sensor), m.params}; }

DSRModel dsr_from_checkpoint(const Checkpoint& ckpt) {
  require(ckpt.kind == "dsr", ErrorCode::kFormat, "expected a dsr checkpoint, got '" + ckpt.kind + "'");
  DSRModel m;
  m.sensor = sensor_from_kv(ckpt.config);
  m.params = ckpt.params;
  check_params(init_dsr(m.sensor, 0).params, m.params, "dsr");
  return m;
}

DSREvaluation evaluate_dsr(const std::vector<scanio::Sequence>& data, const DSRModel& m) {
  std::size_t correct = 0, total = 0, dyn_hit = 0, dyn_total = 0, stat_ok = 0, stat_total = 0;
  for (const auto& seq : data) {
    for (const auto& f : seq.frames) {
      for (int pass = 0; pass < 2; ++pass) {
        const RangeImage& s = pass == 0 ? f.dynamic : f.static_scan;
        const scanio::SegMask& mk = pass == 0 ? f.dynamic_mask : f.static_mask;
        const auto p = dsr_probabilities(s, m);
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (!s.valid[i]) continue;
          const bool pred = p[i] > 0.5, gt = mk.labels[i] != 0;
          correct += pred == gt;
          ++total;
          if (gt) {
            dyn_hit += pred;
            ++dyn_total;
          } else {
            stat_ok += !pred;
            ++stat_total;
          }
        }
      }
    }
  }
  require(total > 0, ErrorCode::kValidation, "DSR evaluation set has no valid cells");
  DSREvaluation ev;
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  ev.dynamic_recall = dyn_total ? static_cast<double>(dyn_hit) / static_cast<double>(dyn_total) : 1.0;
  ev.static_accuracy = stat_total ? static_cast<double>(stat_ok) / static_cast<double>(stat_total) : 1.0;
  return ev;
}

}  // namespace slack::quality
