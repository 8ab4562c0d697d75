#include "slack/trajectory.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "slack/common.hpp"

namespace slack::slameval {

Pose Pose::from_isometry(double timestamp, const Eigen::Isometry3d& T) {
  Pose p;
  p.timestamp = timestamp;
  p.translation = T.translation();
  p.rotation = Eigen::Quaterniond(T.rotation()).normalized();
  return p;
}

Eigen::Isometry3d Pose::isometry() const {
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  T.linear() = rotation.normalized().toRotationMatrix();
  T.translation() = translation;
  return T;
}

void Trajectory::validate() const {
  require(poses.size() >= 2, ErrorCode::kValidation, "trajectory needs at least 2 poses");
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Pose& p = poses[i];
    require(std::isfinite(p.timestamp), ErrorCode::kValidation, "non-finite timestamp");
    require(p.translation.allFinite(), ErrorCode::kValidation, "non-finite translation");
    require(std::abs(p.rotation.norm() - 1.0) <= 1e-9, ErrorCode::kValidation,
            "quaternion is not unit length at pose " + std::to_string(i));
    if (i > 0) {
      require(p.timestamp > poses[i - 1].timestamp, ErrorCode::kValidation,
              "timestamps not strictly increasing at pose " + std::to_string(i));
    }
  }
}

std::string format_decimal(double value) {
  char buf[512];
  auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed);
  if (res.ec != std::errc()) fail(ErrorCode::kInternal, "decimal formatting failed");
  std::string s(buf, res.ptr);
  if (s == "-0") s = "0";
  return s;
}

std::string format_trajectory(const Trajectory& traj, const std::vector<std::string>& header) {
  std::string out;
  for (const auto& h : header) out += "# " + h + "\n";
  for (const Pose& p : traj.poses) {
    const double vals[8] = {p.timestamp,     p.translation.x(), p.translation.y(),
                            p.translation.z(), p.rotation.x(),    p.rotation.y(),
                            p.rotation.z(),    p.rotation.w()};
    for (int i = 0; i < 8; ++i) {
      if (i) out += ' ';
      out += format_decimal(vals[i]);
    }
    out += '\n';
  }
  return out;
}

Trajectory parse_trajectory(const std::string& text) {
  Trajectory traj;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double v[8];
    for (double& x : v) {
      if (!(ls >> x)) {
        fail(ErrorCode::kFormat, "trajectory line " + std::to_string(lineno) +
                                     ": expected 8 numeric fields");
      }
    }
    std::string extra;
    if (ls >> extra) {
      fail(ErrorCode::kFormat, "trajectory line " + std::to_string(lineno) + ": trailing fields");
    }
    Pose p;
    p.timestamp = v[0];
    p.translation = {v[1], v[2], v[3]};
    p.rotation = Eigen::Quaterniond(v[7], v[4], v[5], v[6]);
    const double n = p.rotation.norm();
    require(std::abs(n - 1.0) < 1e-3, ErrorCode::kFormat,
            "trajectory line " + std::to_string(lineno) + ": quaternion far from unit norm");
    // Only renormalize text that was rounded by other tools.
    if (std::abs(n - 1.0) > 1e-12) p.rotation.normalize();
    traj.poses.push_back(p);
  }
  traj.validate();
  return traj;
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& traj,
                      const std::vector<std::string>& header) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << format_trajectory(traj, header);
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path.string());
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_trajectory(ss.str());
}

}  // namespace slack::slameval
