#pragma once

#include <Eigen/Geometry>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slack/common.hpp"

namespace slack::scanio {

struct SensorConfig {
  int beams = 16;
  int azimuth_bins = 256;
  double min_elevation = -15.0 * M_PI / 180.0;
  double max_elevation = 15.0 * M_PI / 180.0;
  double min_range = 0.5;
  double max_range = 50.0;

  void validate() const;

  // Row 0 is the top beam.
  double beam_elevation(int row) const;
  double elevation_step() const;
  double azimuth_step() const { return 2.0 * M_PI / azimuth_bins; }
  // Direction of the centre of a cell.
  double azimuth_center(int col) const { return (col + 0.5) * azimuth_step(); }
  Eigen::Vector3d cell_direction(int row, int col) const;
  int cells() const { return beams * azimuth_bins; }

  bool same_grid(const SensorConfig& o) const;
};

struct PointCloud {
  std::vector<Eigen::Vector3d> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

// Polar grid of ranges. Invalid cells hold 0.
struct RangeImage {
  SensorConfig config;
  std::vector<float> ranges;
  std::vector<std::uint8_t> valid;

  RangeImage() = default;
  explicit RangeImage(const SensorConfig& cfg);

  int rows() const { return config.beams; }
  int cols() const { return config.azimuth_bins; }
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * config.azimuth_bins + c;
  }
  float range(int r, int c) const { return ranges[index(r, c)]; }
  bool is_valid(int r, int c) const { return valid[index(r, c)] != 0; }
  void set(int r, int c, float value);
  void invalidate(std::size_t i) {
    ranges[i] = 0.0f;
    valid[i] = 0;
  }
  std::size_t valid_count() const;
  bool operator==(const RangeImage& o) const {
    return config.same_grid(o.config) && ranges == o.ranges && valid == o.valid;
  }
};

struct SegMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> labels;  // 1 = dynamic

  SegMask() = default;
  SegMask(int r, int c) : rows(r), cols(c), labels(static_cast<std::size_t>(r) * c, 0) {}
  static SegMask empty_like(const RangeImage& ri) { return SegMask(ri.rows(), ri.cols()); }

  bool at(int r, int c) const { return labels[static_cast<std::size_t>(r) * cols + c] != 0; }
  std::size_t dynamic_count() const;
  bool operator==(const SegMask& o) const {
    return rows == o.rows && cols == o.cols && labels == o.labels;
  }
};

struct ScanPair {
  RangeImage dynamic;
  RangeImage static_scan;
  SegMask dynamic_mask;
  SegMask static_mask;
  int sequence_id = 0;
  int frame_index = 0;
  double timestamp = 0.0;
  Eigen::Isometry3d gt_pose = Eigen::Isometry3d::Identity();

  // Throws on any violated pair invariant.
  void validate() const;
};

struct Sequence {
  int id = 0;
  double frame_rate = 10.0;
  std::vector<ScanPair> frames;

  std::size_t size() const { return frames.size(); }
};

struct Box {
  Eigen::Vector3d min;
  Eigen::Vector3d max;
};

struct Cylinder {
  Eigen::Vector2d center;
  double radius = 0.5;
  double height = 2.0;
};

struct WorldSpec {
  double corridor_length = 120.0;
  double corridor_width = 14.0;
  double ceiling_height = 0.0;  // 0 = open sky
  bool floor = true;
  int static_obstacles = 40;
  double obstacle_size_min = 0.4;
  double obstacle_size_max = 1.6;
  int dynamic_actors = 6;
  double actor_speed_min = 3.0;
  double actor_speed_max = 7.0;
  std::vector<Eigen::Vector2d> waypoints = {{6.0, 0.0}, {40.0, 0.8}, {75.0, -0.8}, {110.0, 0.0}};
  double sensor_speed = 5.0;
  double sensor_height = 1.8;
  int frames = 200;
  double frame_rate = 10.0;
  std::uint64_t seed = 1;
  int sequence_id = 0;
  SensorConfig sensor;

  void validate() const;
};

RangeImage project(const PointCloud& pc, const SensorConfig& cfg);
PointCloud unproject(const RangeImage& ri);
// Unproject only cells where `keep` is set.
PointCloud unproject_cells(const RangeImage& ri, const std::vector<std::uint8_t>& keep);

// Raycasts the world with and without dynamic actors at every sensor pose.
Sequence synth_sequence(const WorldSpec& spec);

struct HardNegatives {
  std::vector<std::size_t> frame_indices;
  std::vector<RangeImage> scans;
  std::size_t requested = 0;
  bool truncated() const { return frame_indices.size() < requested; }
};

// Offsets 0, -1, +1, -2, +2, ... within +-window; dynamic scans only.
std::vector<std::size_t> hard_negative_indices(std::size_t sequence_length,
                                               std::size_t anchor_index, std::size_t k,
                                               std::size_t window);
HardNegatives sample_hard_negatives(const std::vector<ScanPair>& seq, std::size_t anchor_index,
                                    std::size_t k, std::size_t window);

struct ScanFile {
  RangeImage image;
  std::optional<SegMask> mask;
};

void write_scan(const std::filesystem::path& path, const RangeImage& ri,
                const SegMask* mask = nullptr);
// When `expected` is given the header must match its grid and range limits,
// and the returned image carries its elevation limits.
ScanFile read_scan(const std::filesystem::path& path, const SensorConfig* expected = nullptr);

void write_sequence(const std::filesystem::path& root, const Sequence& seq,
                    const std::string& provenance = {}, const std::string& suffix = {});
// `dir` is the seq_<id> directory itself.
Sequence read_sequence(const std::filesystem::path& dir);
std::filesystem::path sequence_dir(const std::filesystem::path& root, int id,
                                   const std::string& suffix = {});

}  // namespace slack::scanio
