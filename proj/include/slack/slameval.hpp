#pragma once

#include <Eigen/Geometry>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "slack/attack.hpp"
#include "slack/quality.hpp"
#include "slack/scanio.hpp"
#include "slack/trajectory.hpp"

namespace slack::slameval {

struct ICPConfig {
  int max_iterations = 30;
  double max_distance = 1.0;  // correspondence gate, meters
  double convergence = 1e-6;  // on the incremental transform
  double voxel = 0.2;         // 0 disables downsampling
  double min_fitness = 0.3;   // inlier share below which a registration is degenerate
  int min_inliers = 6;
  // Residuals along the target's local normal, using only targets with a
  // clearly planar neighbourhood. Plain point-to-point is biased toward zero
  // motion on ring-sampled floors and walls.
  bool point_to_plane = true;
  double robust_scale = 0.1;  // meters; 0 gives plain least squares

  void validate() const;
};

struct ICPResult {
  Eigen::Isometry3d transform = Eigen::Isometry3d::Identity();  // maps src into dst
  double rms = 0.0;      // inlier RMS distance
  double fitness = 0.0;  // inlier share of src points
  int inliers = 0;
  int iterations = 0;
  bool degenerate = false;
};

// One point per occupied voxel: the centroid of its points.
scanio::PointCloud voxel_downsample(const scanio::PointCloud& pc, double voxel);

ICPResult icp_register(const scanio::PointCloud& src, const scanio::PointCloud& dst,
                       const Eigen::Isometry3d& init, const ICPConfig& cfg = {});

struct OdometryResult {
  Trajectory trajectory;
  std::vector<ICPResult> steps;  // steps[k] registers scan k+1 onto scan k
  std::size_t degenerate_steps = 0;
};

// Scan-to-scan odometry starting at the identity pose.
OdometryResult odometry(const std::vector<scanio::RangeImage>& scans,
                        const std::vector<double>& timestamps, const ICPConfig& cfg = {});

// Rigid T minimising sum |gt_i - T est_i|^2 over translations. Needs >= 3
// poses and non-collinear positions.
Eigen::Isometry3d umeyama_align(const Trajectory& est, const Trajectory& gt);

// RMSE of translational residuals after alignment. Degenerate geometry still
// yields the least-squares residual.
double ate(const Trajectory& est, const Trajectory& gt);

struct RPE {
  double trans = 0.0;    // meters
  double rot_deg = 0.0;  // degrees
};
RPE rpe(const Trajectory& est, const Trajectory& gt, int delta = 1);

Trajectory ground_truth(const scanio::Sequence& seq);

// --- attack comparison -----------------------------------------------------------
struct CompareConfig {
  attack::MaskCorruptionSpec spec;
  attack::AttackOptions attack;
  ICPConfig icp;
  double parity = 0.05;
  int rr_retries = 20;
  int rpe_delta = 1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct MethodResult {
  std::string method;  // none, RR, RN, SLACK
  std::size_t k = 0;   // injected cells over the whole sequence
  double pij_fraction = 0.0;
  double lqi = std::numeric_limits<double>::quiet_NaN();
  double dsr = std::numeric_limits<double>::quiet_NaN();
  double ate = 0.0;
  RPE rpe;
  std::size_t degenerate_steps = 0;
  Trajectory trajectory;
};

struct AttackReport {
  int sequence = 0;
  std::vector<MethodResult> rows;  // none, RR, RN, SLACK

  const MethodResult& row(const std::string& method) const;
};

// Runs odometry on clean static scans and on RR-, RN- and SLACK-attacked
// copies with matched budgets. The quality models are optional.
AttackReport compare_attacks(const scanio::Sequence& seq, const backbone::BackboneParams& bp_attack,
                             const CompareConfig& cfg, const quality::LQIModel* lqi_model = nullptr,
                             const quality::DSRModel* dsr_model = nullptr);

// Clean-only evaluation: a single "none" row.
AttackReport evaluate_clean(const scanio::Sequence& seq, const CompareConfig& cfg,
                            const quality::LQIModel* lqi_model = nullptr,
                            const quality::DSRModel* dsr_model = nullptr);

std::string report_csv_header();
std::string report_csv_rows(const AttackReport& report);
struct ReportRow {
  int sequence = 0;
  std::string method;
  double pij_fraction = 0, lqi = 0, dsr = 0, ate = 0, rpe_t = 0, rpe_r = 0;
};
std::vector<ReportRow> parse_report_csv(const std::string& text);
// Table with one column per method in none/RR/RN/SLACK order.
std::string render_table(const std::vector<ReportRow>& rows);

// Top-down x-y overlay written as binary PPM: ground truth dotted, estimate
// solid.
void write_trajectory_plot(const std::filesystem::path& path, const Trajectory& gt,
                           const Trajectory& est, int size = 512, const std::string& comment = {});

}  // namespace slack::slameval
