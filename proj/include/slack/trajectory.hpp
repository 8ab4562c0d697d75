#pragma once

#include <Eigen/Geometry>
#include <filesystem>
#include <string>
#include <vector>

namespace slack::slameval {

struct Pose {
  double timestamp = 0.0;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();

  static Pose from_isometry(double timestamp, const Eigen::Isometry3d& T);
  Eigen::Isometry3d isometry() const;
};

struct Trajectory {
  std::vector<Pose> poses;

  std::size_t size() const { return poses.size(); }
  const Pose& operator[](std::size_t i) const { return poses[i]; }
  // >= 2 poses, strictly increasing finite timestamps, unit quaternions.
  void validate() const;
};

// One pose per line: `timestamp tx ty tz qx qy qz qw`. Lines starting with
// '#' are comments; `header` lines are written as comments.
std::string format_trajectory(const Trajectory& traj, const std::vector<std::string>& header = {});
Trajectory parse_trajectory(const std::string& text);
void write_trajectory(const std::filesystem::path& path, const Trajectory& traj,
                      const std::vector<std::string>& header = {});
Trajectory read_trajectory(const std::filesystem::path& path);

// Shortest decimal that round-trips, never in exponent form.
std::string format_decimal(double value);

}  // namespace slack::slameval
