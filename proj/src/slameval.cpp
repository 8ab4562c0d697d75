#include "slack/slameval.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace slack::slameval {

namespace {

using scanio::PointCloud;
using scanio::RangeImage;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t frame_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t attempt, std::size_t frame) {
  return splitmix(splitmix(splitmix(base ^ stream) + attempt) + frame);
}

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    return static_cast<std::size_t>(splitmix(static_cast<std::uint64_t>(k.x) * 73856093ull ^
                                             static_cast<std::uint64_t>(k.y) * 19349663ull ^
                                             static_cast<std::uint64_t>(k.z) * 83492791ull));
  }
};

CellKey cell_of(const Eigen::Vector3d& p, double size) {
  return {static_cast<std::int64_t>(std::floor(p.x() / size)),
          static_cast<std::int64_t>(std::floor(p.y() / size)),
          static_cast<std::int64_t>(std::floor(p.z() / size))};
}

// Uniform hash grid with cell size equal to the search radius, so a query
// only visits the 27 surrounding cells.
class NeighborGrid {
 public:
  NeighborGrid(const PointCloud& pc, double radius) : pc_(pc), radius_(radius) {
    for (std::size_t i = 0; i < pc.points.size(); ++i) cells_[cell_of(pc.points[i], radius)].push_back(i);
  }

  // Index of the nearest point within the radius, or -1.
  long nearest(const Eigen::Vector3d& q, double* dist2) const {
    const CellKey c = cell_of(q, radius_);
    long best = -1;
    double bd = radius_ * radius_;
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second) {
            const double d = (pc_.points[i] - q).squaredNorm();
            if (d <= bd && (best < 0 || d < bd || (d == bd && static_cast<long>(i) < best))) {
              bd = d;
              best = static_cast<long>(i);
            }
          }
        }
      }
    }
    if (dist2) *dist2 = bd;
    return best;
  }

  template <typename F>
  void for_each_within(const Eigen::Vector3d& q, F&& f) const {
    const CellKey c = cell_of(q, radius_);
    const double r2 = radius_ * radius_;
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second) {
            if ((pc_.points[i] - q).squaredNorm() <= r2) f(i);
          }
        }
      }
    }
  }

 private:
  const PointCloud& pc_;
  double radius_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> cells_;
};

// Unit normals from the covariance of each point's neighbourhood; zero where
// the neighbourhood is too small or not planar.
std::vector<Eigen::Vector3d> estimate_normals(const PointCloud& pc, const NeighborGrid& grid) {
  std::vector<Eigen::Vector3d> normals(pc.points.size(), Eigen::Vector3d::Zero());
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Eigen::Matrix3d outer = Eigen::Matrix3d::Zero();
    int n = 0;
    grid.for_each_within(pc.points[i], [&](std::size_t j) {
      mean += pc.points[j];
      outer += pc.points[j] * pc.points[j].transpose();
      ++n;
    });
    if (n < 5) continue;
    mean /= n;
    const Eigen::Matrix3d cov = outer / n - mean * mean.transpose();
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const Eigen::Vector3d ev = es.eigenvalues();  // ascending
    if (ev(1) <= 0 || ev(0) > 0.01 * ev(1)) continue;
    normals[i] = es.eigenvectors().col(0).normalized();
  }
  return normals;
}

Eigen::Isometry3d se3_exp(const Eigen::Matrix<double, 6, 1>& x) {
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  const Eigen::Vector3d w = x.head<3>();
  const double a = w.norm();
  if (a > 0) T.linear() = Eigen::AngleAxisd(a, w / a).toRotationMatrix();
  T.translation() = x.tail<3>();
  return T;
}

double rotation_angle(const Eigen::Matrix3d& R) {
  const Eigen::Quaterniond q(R);
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

void require_matched(const Trajectory& est, const Trajectory& gt, const char* what) {
  require(est.size() == gt.size(), ErrorCode::kValidation,
          std::string(what) + ": trajectories differ in length (" + std::to_string(est.size()) +
              " vs " + std::to_string(gt.size()) + ")");
}

Eigen::Matrix3Xd positions(const Trajectory& t) {
  Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = t[i].translation;
  return m;
}

Eigen::Isometry3d align(const Trajectory& est, const Trajectory& gt) {
  const Eigen::Matrix4d T = Eigen::umeyama(positions(est), positions(gt), false);
  Eigen::Isometry3d out = Eigen::Isometry3d::Identity();
  out.matrix() = T;
  return out;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void ICPConfig::validate() const {
  require(max_iterations >= 1, ErrorCode::kValidation, "ICP needs at least one iteration");
  require(max_distance > 0 && convergence >= 0 && voxel >= 0, ErrorCode::kValidation,
          "ICP gate must be > 0, convergence and voxel >= 0");
  require(min_fitness >= 0 && min_fitness <= 1 && min_inliers >= 3, ErrorCode::kValidation,
          "ICP min fitness must lie in [0,1] and min inliers >= 3");
  require(robust_scale >= 0, ErrorCode::kValidation, "ICP robust scale must be >= 0");
}

PointCloud voxel_downsample(const PointCloud& pc, double voxel) {
  if (voxel <= 0) return pc;
  struct Acc {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    int n = 0;
    std::size_t first = 0;
  };
  std::unordered_map<CellKey, Acc, CellHash> cells;
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    auto [it, fresh] = cells.try_emplace(cell_of(pc.points[i], voxel));
    if (fresh) it->second.first = i;
    it->second.sum += pc.points[i];
    ++it->second.n;
  }
  // Emit in order of first occurrence so the output does not depend on hashing.
  std::vector<const Acc*> accs;
  accs.reserve(cells.size());
  for (const auto& [k, a] : cells) accs.push_back(&a);
  std::sort(accs.begin(), accs.end(), [](const Acc* a, const Acc* b) { return a->first < b->first; });
  PointCloud out;
  out.points.reserve(accs.size());
  for (const Acc* a : accs) out.points.push_back(a->sum / a->n);
  return out;
}

ICPResult icp_register(const PointCloud& src_in, const PointCloud& dst_in, const Eigen::Isometry3d& init,
                       const ICPConfig& cfg) {
  cfg.validate();
  require(!src_in.empty() && !dst_in.empty(), ErrorCode::kValidation, "ICP needs two nonempty clouds");
  const PointCloud src = voxel_downsample(src_in, cfg.voxel);
  const PointCloud dst = voxel_downsample(dst_in, cfg.voxel);
  const NeighborGrid grid(dst, cfg.max_distance);
  const std::vector<Eigen::Vector3d> normals =
      cfg.point_to_plane ? estimate_normals(dst, grid) : std::vector<Eigen::Vector3d>{};

  ICPResult res;
  res.transform = init;
  auto match = [&](std::vector<std::pair<std::size_t, std::size_t>>& pairs, double& sq) {
    pairs.clear();
    sq = 0.0;
    for (std::size_t i = 0; i < src.points.size(); ++i) {
      double d2 = 0.0;
      const long j = grid.nearest(res.transform * src.points[i], &d2);
      if (j < 0) continue;
      pairs.emplace_back(i, static_cast<std::size_t>(j));
      sq += d2;
    }
  };

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double sq = 0.0;
  int plane_pairs = 0;
  bool annealed = true;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    match(pairs, sq);
    res.iterations = it + 1;
    if (static_cast<int>(pairs.size()) < cfg.min_inliers) break;
    Eigen::Isometry3d step = Eigen::Isometry3d::Identity();
    if (cfg.point_to_plane) {
      // Gauss-Newton on the linearised residuals, parameters (omega, t).
      Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
      Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
      plane_pairs = 0;
      std::vector<double> rs;
      std::vector<Eigen::Matrix<double, 6, 1>> Js;
      for (const auto& [si, di] : pairs) {
        const Eigen::Vector3d p = res.transform * src.points[si];
        const Eigen::Vector3d& q = dst.points[di];
        const Eigen::Vector3d& n = normals[di];
        if (n.squaredNorm() > 0) {
          Eigen::Matrix<double, 6, 1> J;
          J << p.cross(n), n;
          Js.push_back(J);
          rs.push_back((p - q).dot(n));
          ++plane_pairs;
        }
      }
      // Geman-McClure weights; the scale shrinks from the gate so a poor
      // initial guess is not locked in by the kernel.
      const double tau = cfg.robust_scale > 0
                             ? std::max(cfg.robust_scale, cfg.max_distance * std::pow(0.5, it))
                             : 0.0;
      annealed = cfg.robust_scale <= 0 || tau <= cfg.robust_scale;
      for (std::size_t k = 0; k < rs.size(); ++k) {
        double wgt = 1.0;
        if (tau > 0) {
          const double u = tau * tau / (tau * tau + rs[k] * rs[k]);
          wgt = u * u;
        }
        H += wgt * Js[k] * Js[k].transpose();
        b += wgt * Js[k] * rs[k];
      }
      if (plane_pairs < cfg.min_inliers) break;
      H.diagonal().array() += 1e-9 * std::max(H.trace(), 1.0);
      step = se3_exp(H.ldlt().solve(-b));
    } else {
      Eigen::Matrix3Xd P(3, static_cast<Eigen::Index>(pairs.size()));
      Eigen::Matrix3Xd Q(3, static_cast<Eigen::Index>(pairs.size()));
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        P.col(static_cast<Eigen::Index>(k)) = res.transform * src.points[pairs[k].first];
        Q.col(static_cast<Eigen::Index>(k)) = dst.points[pairs[k].second];
      }
      step.matrix() = Eigen::umeyama(P, Q, false);
    }
    res.transform = step * res.transform;
    const double change = step.translation().norm() + rotation_angle(step.linear());
    if (annealed && change < cfg.convergence) break;
  }
  match(pairs, sq);
  res.inliers = static_cast<int>(pairs.size());
  res.fitness = static_cast<double>(pairs.size()) / static_cast<double>(src.points.size());
  res.rms = pairs.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(pairs.size()));
  res.degenerate = res.inliers < cfg.min_inliers || res.fitness < cfg.min_fitness ||
                   (cfg.point_to_plane && plane_pairs < cfg.min_inliers);
  return res;
}

OdometryResult odometry(const std::vector<RangeImage>& scans, const std::vector<double>& timestamps,
                        const ICPConfig& cfg) {
  cfg.validate();
  require(scans.size() >= 2, ErrorCode::kValidation, "odometry needs at least 2 scans");
  require(timestamps.size() == scans.size(), ErrorCode::kValidation,
          "odometry needs one timestamp per scan");
  OdometryResult out;
  Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();
  Eigen::Isometry3d velocity = Eigen::Isometry3d::Identity();
  out.trajectory.poses.push_back(Pose::from_isometry(timestamps[0], pose));
  PointCloud prev = scanio::unproject(scans[0]);
  for (std::size_t k = 1; k < scans.size(); ++k) {
    PointCloud cur = scanio::unproject(scans[k]);
    ICPResult r;
    if (cur.empty() || prev.empty()) {
      r.transform = velocity;
      r.degenerate = true;
    } else {
      r = icp_register(cur, prev, velocity, cfg);
    }
    if (r.degenerate) {
      ++out.degenerate_steps;
    } else {
      velocity = r.transform;
    }
    // A failed registration keeps the constant-velocity guess.
    pose = pose * velocity;
    out.trajectory.poses.push_back(Pose::from_isometry(timestamps[k], pose));
    out.steps.push_back(r);
    prev = std::move(cur);
  }
  return out;
}

Eigen::Isometry3d umeyama_align(const Trajectory& est, const Trajectory& gt) {
  require_matched(est, gt, "umeyama_align");
  require(est.size() >= 3, ErrorCode::kValidation, "umeyama_align needs at least 3 poses");
  for (const Trajectory* t : {&est, &gt}) {
    const Eigen::Matrix3Xd P = positions(*t);
    const Eigen::Matrix3Xd C = P.colwise() - P.rowwise().mean();
    const Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(C);
    const auto s = svd.singularValues();
    require(s(0) > 1e-12 && s(1) > 1e-9 * s(0), ErrorCode::kDegenerate,
            "umeyama_align: positions are coincident or collinear");
  }
  return align(est, gt);
}

double ate(const Trajectory& est, const Trajectory& gt) {
  require_matched(est, gt, "ate");
  require(!est.poses.empty(), ErrorCode::kValidation, "ate needs poses");
  const Eigen::Isometry3d T = align(est, gt);
  double aligned = 0.0, plain = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    aligned += (gt[i].translation - T * est[i].translation).squaredNorm();
    plain += (gt[i].translation - est[i].translation).squaredNorm();
  }
  // The identity is itself a candidate alignment; keeping it avoids SVD
  // round-off when the trajectories already coincide.
  return std::sqrt(std::min(aligned, plain) / static_cast<double>(est.size()));
}

RPE rpe(const Trajectory& est, const Trajectory& gt, int delta) {
  require_matched(est, gt, "rpe");
  require(delta >= 1 && static_cast<std::size_t>(delta) < est.size(), ErrorCode::kValidation,
          "rpe interval must satisfy 1 <= delta < trajectory length");
  struct Motion {
    Eigen::Quaterniond q;
    Eigen::Vector3d t;
  };
  auto motion = [delta](const Trajectory& traj, std::size_t i) {
    const Pose& a = traj[i];
    const Pose& b = traj[i + delta];
    return Motion{a.rotation.conjugate() * b.rotation, a.rotation.conjugate() * (b.translation - a.translation)};
  };
  double st = 0.0, sr = 0.0;
  const std::size_t n = est.size() - static_cast<std::size_t>(delta);
  for (std::size_t i = 0; i < n; ++i) {
    const Motion g = motion(gt, i), e = motion(est, i);
    st += (g.q.conjugate() * (e.t - g.t)).squaredNorm();
    const Eigen::Quaterniond dq = g.q.conjugate() * e.q;
    const double a = 2.0 * std::atan2(dq.vec().norm(), std::abs(dq.w()));
    sr += a * a;
  }
  return {std::sqrt(st / static_cast<double>(n)), std::sqrt(sr / static_cast<double>(n)) * 180.0 / M_PI};
}

Trajectory ground_truth(const scanio::Sequence& seq) {
  Trajectory t;
  for (const auto& f : seq.frames) t.poses.push_back(Pose::from_isometry(f.timestamp, f.gt_pose));
  return t;
}

void CompareConfig::validate() const {
  attack.validate();
  icp.validate();
  require(parity >= 0 && rr_retries >= 1 && rpe_delta >= 1, ErrorCode::kValidation,
          "parity must be >= 0, rr retries >= 1 and rpe delta >= 1");
}

const MethodResult& AttackReport::row(const std::string& method) const {
  for (const auto& r : rows) {
    if (r.method == method) return r;
  }
  fail(ErrorCode::kValidation, "report has no row for method '" + method + "'");
}

namespace {

MethodResult evaluate_method(const std::string& name, const scanio::Sequence& seq,
                             const std::vector<RangeImage>& scans, std::size_t k,
                             std::size_t valid_total, const Trajectory& gt, const CompareConfig& cfg,
                             const quality::LQIModel* lqi_model, const quality::DSRModel* dsr_model) {
  MethodResult m;
  m.method = name;
  m.k = k;
  m.pij_fraction = valid_total ? static_cast<double>(k) / static_cast<double>(valid_total) : 0.0;
  std::vector<double> stamps;
  for (const auto& f : seq.frames) stamps.push_back(f.timestamp);
  const OdometryResult odo = odometry(scans, stamps, cfg.icp);
  m.trajectory = odo.trajectory;
  m.degenerate_steps = odo.degenerate_steps;
  m.ate = ate(odo.trajectory, gt);
  m.rpe = rpe(odo.trajectory, gt, cfg.rpe_delta);
  if (lqi_model) {
    double s = 0.0;
    for (const auto& sc : scans) s += quality::lqi(sc, *lqi_model);
    m.lqi = s / static_cast<double>(scans.size());
  }
  if (dsr_model) {
    double s = 0.0;
    for (const auto& sc : scans) s += quality::dsr(sc, *dsr_model);
    m.dsr = s / static_cast<double>(scans.size());
  }
  return m;
}

std::size_t total_valid(const scanio::Sequence& seq) {
  std::size_t n = 0;
  for (const auto& f : seq.frames) n += f.static_scan.valid_count();
  return n;
}

}  // namespace

AttackReport evaluate_clean(const scanio::Sequence& seq, const CompareConfig& cfg,
                            const quality::LQIModel* lqi_model, const quality::DSRModel* dsr_model) {
  cfg.validate();
  require(seq.size() >= 2, ErrorCode::kValidation, "SLAM evaluation needs at least 2 frames");
  AttackReport rep;
  rep.sequence = seq.id;
  std::vector<RangeImage> clean;
  for (const auto& f : seq.frames) clean.push_back(f.static_scan);
  rep.rows.push_back(evaluate_method("none", seq, clean, 0, total_valid(seq), ground_truth(seq), cfg,
                                     lqi_model, dsr_model));
  return rep;
}

AttackReport compare_attacks(const scanio::Sequence& seq, const backbone::BackboneParams& bp_attack,
                             const CompareConfig& cfg, const quality::LQIModel* lqi_model,
                             const quality::DSRModel* dsr_model) {
  cfg.validate();
  require(seq.size() >= 2, ErrorCode::kValidation, "SLAM evaluation needs at least 2 frames");
  const Trajectory gt = ground_truth(seq);
  const std::size_t valid = total_valid(seq);
  const double eps = cfg.attack.eps;

  std::vector<RangeImage> clean, slack_scans;
  std::vector<std::size_t> k_frame;
  std::vector<double> deltas;
  std::size_t k_slack = 0;
  for (const auto& f : seq.frames) {
    clean.push_back(f.static_scan);
    const auto a = attack::attack_scan(f.static_scan, f.static_mask, cfg.spec, bp_attack, cfg.attack);
    k_frame.push_back(a.injected_cells.size());
    k_slack += a.injected_cells.size();
    const auto d = a.injected_deltas();
    deltas.insert(deltas.end(), d.begin(), d.end());
    slack_scans.push_back(a.attacked);
  }

  auto within = [&](std::size_t k) {
    if (k_slack == 0) return k == 0;
    return std::abs(static_cast<double>(k) - static_cast<double>(k_slack)) <=
           cfg.parity * static_cast<double>(k_slack);
  };

  // RN: the same per-frame counts with magnitudes drawn from SLACK's shifts.
  std::vector<RangeImage> rn_scans;
  std::size_t k_rn = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto a = attack::baseline_rn(seq.frames[i].static_scan, k_frame[i], deltas,
                                       frame_seed(cfg.seed, 0x524Eull, 0, i), eps);
    k_rn += a.injected_cells.size();
    rn_scans.push_back(a.attacked);
  }
  require(within(k_rn), ErrorCode::kBudgetParity,
          "RN budget " + std::to_string(k_rn) + " differs from SLACK budget " + std::to_string(k_slack));

  // RR: Bernoulli removal at the matched rate, reseeded until the total
  // lands within the parity band.
  const double rate = valid ? static_cast<double>(k_slack) / static_cast<double>(valid) : 0.0;
  std::vector<RangeImage> rr_scans;
  std::size_t k_rr = 0;
  bool matched = false;
  for (int attempt = 0; attempt < cfg.rr_retries && !matched; ++attempt) {
    rr_scans.clear();
    k_rr = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto a = attack::baseline_rr(seq.frames[i].static_scan, rate,
                                         frame_seed(cfg.seed, 0x5252ull, static_cast<std::uint64_t>(attempt), i), eps);
      k_rr += a.injected_cells.size();
      rr_scans.push_back(a.attacked);
    }
    matched = within(k_rr);
  }
  require(matched, ErrorCode::kBudgetParity,
          "RR budget " + std::to_string(k_rr) + " stayed outside " + csv_number(cfg.parity * 100) +
              "% of SLACK budget " + std::to_string(k_slack) + " after " +
              std::to_string(cfg.rr_retries) + " seeds");

  AttackReport rep;
  rep.sequence = seq.id;
  rep.rows.push_back(evaluate_method("none", seq, clean, 0, valid, gt, cfg, lqi_model, dsr_model));
  rep.rows.push_back(evaluate_method("RR", seq, rr_scans, k_rr, valid, gt, cfg, lqi_model, dsr_model));
  rep.rows.push_back(evaluate_method("RN", seq, rn_scans, k_rn, valid, gt, cfg, lqi_model, dsr_model));
  rep.rows.push_back(evaluate_method("SLACK", seq, slack_scans, k_slack, valid, gt, cfg, lqi_model, dsr_model));
  return rep;
}

std::string report_csv_header() { return "sequence,method,pij_fraction,lqi,dsr,ate,rpe_t,rpe_r\n"; }

std::string report_csv_rows(const AttackReport& report) {
  std::string out;
  for (const auto& r : report.rows) {
    out += std::to_string(report.sequence) + "," + r.method + "," + csv_number(r.pij_fraction) + "," +
           csv_number(r.lqi) + "," + csv_number(r.dsr) + "," + csv_number(r.ate) + "," +
           csv_number(r.rpe.trans) + "," + csv_number(r.rpe.rot_deg) + "\n";
  }
  return out;
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::vector<ReportRow> rows;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      require(line + "\n" == report_csv_header(), ErrorCode::kFormat,
              "report CSV header must be: " + report_csv_header());
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    require(f.size() == 8, ErrorCode::kFormat,
            "report CSV line " + std::to_string(lineno) + " needs 8 fields");
    ReportRow r;
    try {
      r.sequence = std::stoi(f[0]);
      r.method = f[1];
      r.pij_fraction = std::stod(f[2]);
      r.lqi = std::stod(f[3]);
      r.dsr = std::stod(f[4]);
      r.ate = std::stod(f[5]);
      r.rpe_t = std::stod(f[6]);
      r.rpe_r = std::stod(f[7]);
    } catch (const std::logic_error&) {
      fail(ErrorCode::kFormat, "report CSV line " + std::to_string(lineno) + " has a bad number");
    }
    rows.push_back(r);
  }
  require(header, ErrorCode::kFormat, "report CSV has no header");
  return rows;
}

std::string render_table(const std::vector<ReportRow>& rows) {
  static const char* kMethods[] = {"none", "RR", "RN", "SLACK"};
  std::vector<int> seqs;
  for (const auto& r : rows) {
    if (std::find(seqs.begin(), seqs.end(), r.sequence) == seqs.end()) seqs.push_back(r.sequence);
  }
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-5s %-9s %-17s %-17s %-17s %-17s\n", "Seq", "PiJ(%)", "No Attack",
                "RR", "RN", "SLACK");
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-5s %-9s %-17s %-17s %-17s %-17s\n", "", "", "ATE/RPE", "ATE/RPE",
                "ATE/RPE", "ATE/RPE");
  out += buf;
  for (int s : seqs) {
    std::string cells[4];
    double pij = 0.0;
    for (int m = 0; m < 4; ++m) {
      cells[m] = "-";
      for (const auto& r : rows) {
        if (r.sequence != s || r.method != kMethods[m]) continue;
        std::snprintf(buf, sizeof(buf), "%.3f/%.3f", r.ate, r.rpe_t);
        cells[m] = buf;
        // The shared budget is SLACK's; a clean-only report shows 0.
        if (m == 3) pij = r.pij_fraction;
      }
    }
    std::snprintf(buf, sizeof(buf), "%-5d %-9.3f %-17s %-17s %-17s %-17s\n", s, pij * 100.0,
                  cells[0].c_str(), cells[1].c_str(), cells[2].c_str(), cells[3].c_str());
    out += buf;
  }
  return out;
}

void write_trajectory_plot(const std::filesystem::path& path, const Trajectory& gt, const Trajectory& est,
                           int size, const std::string& comment) {
  require(size >= 16, ErrorCode::kValidation, "plot size must be >= 16 pixels");
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  for (const Trajectory* t : {&gt, &est}) {
    for (const auto& p : t->poses) {
      x0 = std::min(x0, p.translation.x());
      x1 = std::max(x1, p.translation.x());
      y0 = std::min(y0, p.translation.y());
      y1 = std::max(y1, p.translation.y());
    }
  }
  require(std::isfinite(x0), ErrorCode::kValidation, "nothing to plot");
  const double span = std::max({x1 - x0, y1 - y0, 1e-6});
  const double margin = 0.05 * size;
  const double scale = (size - 2 * margin) / span;
  const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  std::vector<unsigned char> img(static_cast<std::size_t>(size) * size * 3, 255);
  auto to_px = [&](const Eigen::Vector3d& p) {
    return Eigen::Vector2i(static_cast<int>(std::lround(size / 2.0 + (p.x() - cx) * scale)),
                           static_cast<int>(std::lround(size / 2.0 - (p.y() - cy) * scale)));
  };
  auto put = [&](int x, int y, unsigned char r, unsigned char g, unsigned char b) {
    if (x < 0 || y < 0 || x >= size || y >= size) return;
    unsigned char* px = &img[(static_cast<std::size_t>(y) * size + x) * 3];
    px[0] = r;
    px[1] = g;
    px[2] = b;
  };
  auto draw = [&](const Trajectory& t, bool dotted, unsigned char r, unsigned char g, unsigned char b) {
    long step = 0;
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
      Eigen::Vector2i a = to_px(t[i].translation);
      const Eigen::Vector2i e = to_px(t[i + 1].translation);
      const int dx = std::abs(e.x() - a.x()), dy = -std::abs(e.y() - a.y());
      const int sx = a.x() < e.x() ? 1 : -1, sy = a.y() < e.y() ? 1 : -1;
      int err = dx + dy;
      while (true) {
        if (!dotted || (step / 3) % 2 == 0) put(a.x(), a.y(), r, g, b);
        ++step;
        if (a == e) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
          err += dy;
          a.x() += sx;
        }
        if (e2 <= dx) {
          err += dx;
          a.y() += sy;
        }
      }
    }
  };
  draw(est, false, 200, 30, 30);
  draw(gt, true, 0, 0, 0);
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write plot " + path.string());
  f << "P6\n";
  if (!comment.empty()) f << "# " << comment << "\n";
  f << size << " " << size << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  require(static_cast<bool>(f), ErrorCode::kIo, "failed writing plot " + path.string());
}

}  // namespace slack::slameval
