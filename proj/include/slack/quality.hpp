#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slack/checkpoint.hpp"
#include "slack/nn.hpp"
#include "slack/scanio.hpp"

namespace slack::quality {

// Sum of squared nearest-neighbour distances in both directions.
double chamfer(const scanio::PointCloud& p, const scanio::PointCloud& q);

// Exact minimum-cost bijection (Hungarian) with Euclidean cost.
double emd(const scanio::PointCloud& p, const scanio::PointCloud& q);
// Optimal assignment for a square cost matrix (row-major n x n); returns the
// column for each row.
std::vector<int> solve_assignment(const std::vector<double>& cost, int n);

// Uniform seeded subsampling of both clouds to the smaller size, then emd.
double emd_subsampled(const scanio::PointCloud& p, const scanio::PointCloud& q, std::size_t max_points,
                      std::uint64_t seed);

// --- LQI -----------------------------------------------------------------------
struct LQIConfig {
  int epochs = 30;
  double learning_rate = 1e-3;
  double sigma_max = 1.0;
  int levels = 6;
  int copies = 4;  // noisy copies per clean scan and epoch
  std::uint64_t seed = 1;

  void validate() const;
};

struct LQIModel {
  scanio::SensorConfig sensor;
  double sigma_max = 1.0;
  nn::ParamSet params;
};

LQIModel init_lqi(const scanio::SensorConfig& sensor, double sigma_max, std::uint64_t seed);
// Gaussian noise of standard deviation sigma on valid cells, clamped to the
// sensor range limits.
scanio::RangeImage add_noise(const scanio::RangeImage& s, double sigma, Rng& rng);
// Noise levels sigma_max * i / (levels - 1), i = 0..levels-1.
std::vector<double> noise_levels(double sigma_max, int levels);

struct LQITrainResult {
  LQIModel model;
  std::vector<double> loss;  // per epoch
};
LQITrainResult train_lqi(const std::vector<scanio::RangeImage>& clean, const LQIConfig& cfg);
double lqi(const scanio::RangeImage& scan, const LQIModel& m);

Checkpoint to_checkpoint(const LQIModel& m);
LQIModel lqi_from_checkpoint(const Checkpoint& ckpt);

struct LQIEvaluation {
  double mean_abs_error = 0.0;
  double spearman = 0.0;
  std::vector<double> levels;
  std::vector<double> mean_prediction;  // per level
};
LQIEvaluation evaluate_lqi(const std::vector<scanio::RangeImage>& clean, const LQIModel& m,
                           int levels, std::uint64_t seed);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

// --- DSR -----------------------------------------------------------------------
struct DSRConfig {
  int epochs = 20;
  double learning_rate = 2e-3;
  double max_class_weight = 5.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct DSRModel {
  scanio::SensorConfig sensor;
  nn::ParamSet params;
};

DSRModel init_dsr(const scanio::SensorConfig& sensor, std::uint64_t seed);
struct DSRTrainResult {
  DSRModel model;
  std::vector<double> loss;
};
// Trains on dynamic scans with their masks and static scans with empty masks.
DSRTrainResult train_dsr_classifier(const std::vector<scanio::Sequence>& data, const DSRConfig& cfg);
// Per-cell dynamic probabilities.
std::vector<double> dsr_probabilities(const scanio::RangeImage& scan, const DSRModel& m);
double dsr(const scanio::RangeImage& scan, const DSRModel& m);
// Ratio of labelled cells among valid cells.
double dsr_from_mask(const scanio::RangeImage& scan, const scanio::SegMask& mask);

Checkpoint to_checkpoint(const DSRModel& m);
DSRModel dsr_from_checkpoint(const Checkpoint& ckpt);

struct DSREvaluation {
  double accuracy = 0.0;
  double dynamic_recall = 0.0;
  double static_accuracy = 0.0;
};
// Per-cell accuracy over valid cells of dynamic and static scans.
DSREvaluation evaluate_dsr(const std::vector<scanio::Sequence>& data, const DSRModel& m);

}  // namespace slack::quality
