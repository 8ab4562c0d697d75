#include "slack/scanio.hpp"

#include <algorithm>
#include <bit>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "slack/rng.hpp"
#include "slack/trajectory.hpp"

namespace slack::scanio {

static_assert(std::endian::native == std::endian::little,
              "scan files are little-endian; big-endian hosts need byte swapping");

namespace {

constexpr char kMagic[4] = {'S', 'L', 'K', 'R'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint16_t kFlagMask = 1;
constexpr std::size_t kHeaderBytes = 4 + 2 + 2 + 4 + 4 + 4 + 4;

}  // namespace

void SensorConfig::validate() const {
  require(beams >= 1, ErrorCode::kValidation, "sensor needs at least one beam");
  require(azimuth_bins >= 4, ErrorCode::kValidation, "sensor needs at least 4 azimuth bins");
  require(std::isfinite(min_range) && std::isfinite(max_range) && min_range >= 0.0 &&
              min_range < max_range,
          ErrorCode::kValidation, "sensor range limits must satisfy 0 <= min < max");
  require(std::isfinite(min_elevation) && std::isfinite(max_elevation) &&
              min_elevation < max_elevation,
          ErrorCode::kValidation, "vertical field of view must satisfy min < max");
}

double SensorConfig::elevation_step() const {
  return beams > 1 ? (max_elevation - min_elevation) / (beams - 1)
                   : (max_elevation - min_elevation);
}

double SensorConfig::beam_elevation(int row) const {
  if (beams == 1) return 0.5 * (min_elevation + max_elevation);
  return max_elevation - row * elevation_step();
}

Eigen::Vector3d SensorConfig::cell_direction(int row, int col) const {
  const double el = beam_elevation(row);
  const double az = azimuth_center(col);
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

bool SensorConfig::same_grid(const SensorConfig& o) const {
  return beams == o.beams && azimuth_bins == o.azimuth_bins && min_range == o.min_range &&
         max_range == o.max_range;
}

RangeImage::RangeImage(const SensorConfig& cfg)
    : config(cfg),
      ranges(static_cast<std::size_t>(cfg.cells()), 0.0f),
      valid(static_cast<std::size_t>(cfg.cells()), 0) {}

void RangeImage::set(int r, int c, float value) {
  const auto i = index(r, c);
  ranges[i] = value;
  valid[i] = 1;
}

std::size_t RangeImage::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

std::size_t SegMask::dynamic_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

void ScanPair::validate() const {
  const int r = dynamic.rows(), c = dynamic.cols();
  require(static_scan.rows() == r && static_scan.cols() == c && dynamic_mask.rows == r &&
              dynamic_mask.cols == c && static_mask.rows == r && static_mask.cols == c,
          ErrorCode::kShapeMismatch, "scan pair grids differ in shape");
  require(static_mask.dynamic_count() == 0, ErrorCode::kValidation,
          "static mask has dynamic cells");
  for (std::size_t i = 0; i < dynamic_mask.labels.size(); ++i) {
    require(!dynamic_mask.labels[i] || dynamic.valid[i], ErrorCode::kValidation,
            "dynamic mask marks an invalid cell");
  }
  const Eigen::Matrix3d R = gt_pose.linear();
  require((R.transpose() * R - Eigen::Matrix3d::Identity()).norm() < 1e-9 &&
              std::abs(R.determinant() - 1.0) < 1e-9,
          ErrorCode::kValidation, "ground-truth pose is not a rigid transform");
}

void WorldSpec::validate() const {
  sensor.validate();
  require(corridor_length > 0 && corridor_width > 0 && ceiling_height >= 0,
          ErrorCode::kValidation, "corridor dimensions must be positive");
  require(static_obstacles >= 0 && dynamic_actors >= 0, ErrorCode::kValidation,
          "obstacle and actor counts must be >= 0");
  require(obstacle_size_min > 0 && obstacle_size_min <= obstacle_size_max,
          ErrorCode::kValidation, "obstacle size range must satisfy 0 < min <= max");
  require(std::isfinite(actor_speed_min) && std::isfinite(actor_speed_max) &&
              actor_speed_min <= actor_speed_max,
          ErrorCode::kValidation, "actor velocity range must be finite with min <= max");
  require(waypoints.size() >= 2, ErrorCode::kValidation, "need at least 2 waypoints");
  require(std::isfinite(sensor_speed) && sensor_speed >= 0, ErrorCode::kValidation,
          "sensor speed must be finite and >= 0");
  require(frames >= 2, ErrorCode::kValidation, "frame count must be >= 2");
  require(frame_rate > 0 && std::isfinite(frame_rate), ErrorCode::kValidation,
          "frame rate must be positive");
}

RangeImage project(const PointCloud& pc, const SensorConfig& cfg) {
  cfg.validate();
  RangeImage ri(cfg);
  const double el_step = cfg.elevation_step();
  const double az_step = cfg.azimuth_step();
  for (const auto& p : pc.points) {
    if (!p.allFinite()) continue;
    const double r = p.norm();
    if (!(r >= cfg.min_range && r <= cfg.max_range) || r == 0.0) continue;
    const double el = std::asin(std::clamp(p.z() / r, -1.0, 1.0));
    int row = 0;
    if (cfg.beams == 1) {
      if (el < cfg.min_elevation || el > cfg.max_elevation) continue;
    } else {
      const double row_f = (cfg.max_elevation - el) / el_step;
      if (row_f < -0.5 || row_f > cfg.beams - 0.5) continue;
      row = std::clamp(static_cast<int>(std::lround(row_f)), 0, cfg.beams - 1);
    }
    double az = std::atan2(p.y(), p.x());
    if (az < 0) az += 2.0 * M_PI;
    const int col = std::min(static_cast<int>(std::floor(az / az_step)), cfg.azimuth_bins - 1);
    const float rf = static_cast<float>(r);
    const auto i = ri.index(row, col);
    if (!ri.valid[i] || rf < ri.ranges[i]) {
      ri.ranges[i] = rf;
      ri.valid[i] = 1;
    }
  }
  return ri;
}

PointCloud unproject_cells(const RangeImage& ri, const std::vector<std::uint8_t>& keep) {
  PointCloud pc;
  for (int r = 0; r < ri.rows(); ++r) {
    for (int c = 0; c < ri.cols(); ++c) {
      const auto i = ri.index(r, c);
      if (!ri.valid[i] || !keep[i]) continue;
      pc.points.push_back(ri.config.cell_direction(r, c) * static_cast<double>(ri.ranges[i]));
    }
  }
  return pc;
}

PointCloud unproject(const RangeImage& ri) { return unproject_cells(ri, ri.valid); }

namespace {

struct World {
  WorldSpec spec;
  std::vector<Box> boxes;
  std::vector<Cylinder> cylinders;
  struct Actor {
    Eigen::Vector3d half;  // half extents
    Eigen::Vector2d start;
    double speed;
  };
  std::vector<Actor> actors;
};

constexpr double kNoHit = std::numeric_limits<double>::infinity();

double ray_plane(double o, double d, double plane) {
  if (std::abs(d) < 1e-15) return kNoHit;
  const double t = (plane - o) / d;
  return t > 1e-9 ? t : kNoHit;
}

double ray_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Box& b) {
  double t0 = -kNoHit, t1 = kNoHit;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < b.min[a] || o[a] > b.max[a]) return kNoHit;
      continue;
    }
    double ta = (b.min[a] - o[a]) / d[a];
    double tb = (b.max[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return kNoHit;
  }
  if (t0 > 1e-9) return t0;
  return kNoHit;  // origin inside the box: ignore
}

double ray_cylinder(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Cylinder& c) {
  double best = kNoHit;
  const double ox = o.x() - c.center.x(), oy = o.y() - c.center.y();
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-15) {
    const double b = 2.0 * (ox * d.x() + oy * d.y());
    const double cc = ox * ox + oy * oy - c.radius * c.radius;
    const double disc = b * b - 4 * a * cc;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
        if (t <= 1e-9) continue;
        const double z = o.z() + t * d.z();
        if (z >= 0.0 && z <= c.height) {
          best = std::min(best, t);
          break;
        }
      }
    }
  }
  const double tc = ray_plane(o.z(), d.z(), c.height);
  if (tc < best) {
    const double x = ox + tc * d.x(), y = oy + tc * d.y();
    if (x * x + y * y <= c.radius * c.radius) best = tc;
  }
  return best;
}

World build_world(const WorldSpec& spec) {
  World w;
  w.spec = spec;
  Rng rng(spec.seed);
  const double half_w = spec.corridor_width / 2.0;
  const double band = std::min(3.0, half_w * 0.45);
  for (int i = 0; i < spec.static_obstacles; ++i) {
    const bool cylinder = rng.bernoulli(0.5);
    const double x = rng.uniform(0.0, spec.corridor_length);
    const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double size = rng.uniform(spec.obstacle_size_min, spec.obstacle_size_max);
    const double y = side * (half_w - rng.uniform(0.3, band) - size / 2.0);
    const double h = rng.uniform(0.5, 3.0);
    if (cylinder) {
      w.cylinders.push_back({Eigen::Vector2d(x, y), size / 2.0, h});
    } else {
      const double sy = rng.uniform(spec.obstacle_size_min, spec.obstacle_size_max);
      w.boxes.push_back({Eigen::Vector3d(x - size / 2, y - sy / 2, 0.0),
                         Eigen::Vector3d(x + size / 2, y + sy / 2, h)});
    }
  }
  double path_extent = 0.0;
  for (const auto& wp : spec.waypoints) path_extent = std::max(path_extent, std::abs(wp.y()));
  const double x_start = spec.waypoints.front().x();
  for (int i = 0; i < spec.dynamic_actors; ++i) {
    World::Actor a;
    const bool car = rng.bernoulli(0.6);
    a.half = car ? Eigen::Vector3d(2.1, 0.9, 0.75) : Eigen::Vector3d(0.35, 0.35, 0.9);
    const double lane_min = path_extent + a.half.y() + 0.6;
    const double lane_max = std::max(lane_min, half_w - band - 0.2 - a.half.y());
    const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
    a.start = {x_start + rng.uniform(-5.0, 30.0), side * rng.uniform(lane_min, lane_max)};
    a.speed = rng.uniform(spec.actor_speed_min, spec.actor_speed_max);
    w.actors.push_back(a);
  }
  return w;
}

Eigen::Isometry3d sensor_pose(const WorldSpec& spec, double t) {
  double s = spec.sensor_speed * t;
  const auto& wps = spec.waypoints;
  std::size_t seg = 0;
  for (; seg + 1 < wps.size(); ++seg) {
    const double len = (wps[seg + 1] - wps[seg]).norm();
    if (s <= len || seg + 2 == wps.size()) break;
    s -= len;
  }
  const Eigen::Vector2d a = wps[seg], b = wps[seg + 1];
  const double len = (b - a).norm();
  const Eigen::Vector2d dir = len > 0 ? Eigen::Vector2d((b - a) / len) : Eigen::Vector2d(1, 0);
  const Eigen::Vector2d pos = a + dir * std::min(s, len);
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  T.linear() = Eigen::AngleAxisd(std::atan2(dir.y(), dir.x()), Eigen::Vector3d::UnitZ())
                   .toRotationMatrix();
  T.translation() = Eigen::Vector3d(pos.x(), pos.y(), spec.sensor_height);
  return T;
}

double cast_static(const World& w, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  const WorldSpec& s = w.spec;
  double best = kNoHit;
  if (s.floor && d.z() < 0) best = std::min(best, ray_plane(o.z(), d.z(), 0.0));
  if (s.ceiling_height > 0 && d.z() > 0) {
    best = std::min(best, ray_plane(o.z(), d.z(), s.ceiling_height));
  }
  const double hw = s.corridor_width / 2;
  best = std::min(best, ray_plane(o.y(), d.y(), d.y() > 0 ? hw : -hw));
  best = std::min(best, ray_plane(o.x(), d.x(), d.x() > 0 ? s.corridor_length : 0.0));
  for (const auto& b : w.boxes) best = std::min(best, ray_box(o, d, b));
  for (const auto& c : w.cylinders) best = std::min(best, ray_cylinder(o, d, c));
  return best;
}

}  // namespace

Sequence synth_sequence(const WorldSpec& spec) {
  spec.validate();
  const World world = build_world(spec);
  const SensorConfig& cfg = spec.sensor;
  Sequence seq;
  seq.id = spec.sequence_id;
  seq.frame_rate = spec.frame_rate;
  seq.frames.reserve(spec.frames);

  std::vector<Eigen::Vector3d> dirs(static_cast<std::size_t>(cfg.cells()));
  for (int r = 0; r < cfg.beams; ++r) {
    for (int c = 0; c < cfg.azimuth_bins; ++c) {
      dirs[static_cast<std::size_t>(r) * cfg.azimuth_bins + c] = cfg.cell_direction(r, c);
    }
  }

  for (int f = 0; f < spec.frames; ++f) {
    const double t = f / spec.frame_rate;
    ScanPair pair;
    pair.sequence_id = spec.sequence_id;
    pair.frame_index = f;
    pair.timestamp = t;
    pair.gt_pose = sensor_pose(spec, t);
    pair.static_scan = RangeImage(cfg);
    pair.dynamic = RangeImage(cfg);
    pair.dynamic_mask = SegMask::empty_like(pair.dynamic);
    pair.static_mask = SegMask::empty_like(pair.dynamic);

    std::vector<Box> actor_boxes;
    for (const auto& a : world.actors) {
      const Eigen::Vector3d c(a.start.x() + a.speed * t, a.start.y(), a.half.z());
      actor_boxes.push_back({c - a.half, c + a.half});
    }

    const Eigen::Vector3d o = pair.gt_pose.translation();
    const Eigen::Matrix3d R = pair.gt_pose.linear();
    for (std::size_t i = 0; i < dirs.size(); ++i) {
      const Eigen::Vector3d d = R * dirs[i];
      const double ts = cast_static(world, o, d);
      double td = ts;
      for (const auto& b : actor_boxes) td = std::min(td, ray_box(o, d, b));
      const auto store = [&](RangeImage& img, double hit) {
        if (hit >= cfg.min_range && hit <= cfg.max_range) {
          img.ranges[i] = static_cast<float>(hit);
          img.valid[i] = 1;
        }
      };
      store(pair.static_scan, ts);
      store(pair.dynamic, td);
      const bool differs = pair.dynamic.valid[i] != pair.static_scan.valid[i] ||
                           pair.dynamic.ranges[i] != pair.static_scan.ranges[i];
      pair.dynamic_mask.labels[i] = differs && pair.dynamic.valid[i];
    }
    if (pair.static_scan.valid_count() == 0) {
      fail(ErrorCode::kDegenerate,
           "degenerate world: no geometry in the field of view at frame " + std::to_string(f));
    }
    seq.frames.push_back(std::move(pair));
  }
  return seq;
}

std::vector<std::size_t> hard_negative_indices(std::size_t sequence_length,
                                               std::size_t anchor_index, std::size_t k,
                                               std::size_t window) {
  require(anchor_index < sequence_length, ErrorCode::kValidation, "anchor index out of range");
  require(k >= 1, ErrorCode::kValidation, "k must be >= 1");
  std::vector<std::size_t> out{anchor_index};
  for (std::size_t off = 1; off <= window && out.size() < k; ++off) {
    if (anchor_index >= off) out.push_back(anchor_index - off);
    if (out.size() < k && anchor_index + off < sequence_length) out.push_back(anchor_index + off);
  }
  if (out.size() > k) out.resize(k);
  return out;
}

HardNegatives sample_hard_negatives(const std::vector<ScanPair>& seq, std::size_t anchor_index,
                                    std::size_t k, std::size_t window) {
  HardNegatives hn;
  hn.requested = k;
  hn.frame_indices = hard_negative_indices(seq.size(), anchor_index, k, window);
  for (auto i : hn.frame_indices) hn.scans.push_back(seq[i].dynamic);
  return hn;
}

namespace {

template <typename T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t& off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

void write_scan(const std::filesystem::path& path, const RangeImage& ri, const SegMask* mask) {
  const std::size_t n = ri.ranges.size();
  require(ri.valid.size() == n && n == static_cast<std::size_t>(ri.config.cells()),
          ErrorCode::kShapeMismatch, "range image storage does not match its grid");
  if (mask) {
    require(mask->rows == ri.rows() && mask->cols == ri.cols(), ErrorCode::kShapeMismatch,
            "mask shape differs from range image");
  }
  std::string buf;
  buf.reserve(kHeaderBytes + n * 6);
  buf.append(kMagic, 4);
  put<std::uint16_t>(buf, kVersion);
  put<std::uint16_t>(buf, mask ? kFlagMask : 0);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ri.rows()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ri.cols()));
  put<float>(buf, static_cast<float>(ri.config.min_range));
  put<float>(buf, static_cast<float>(ri.config.max_range));
  for (float r : ri.ranges) put<float>(buf, r);
  buf.append(reinterpret_cast<const char*>(ri.valid.data()), n);
  if (mask) buf.append(reinterpret_cast<const char*>(mask->labels.data()), n);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path.string());
}

ScanFile read_scan(const std::filesystem::path& path, const SensorConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  const std::string where = path.string();

  if (buf.size() < 4) fail(ErrorCode::kTruncated, where + ": truncated before magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    fail(ErrorCode::kFormat, where + ": bad magic, not a scan file");
  }
  if (buf.size() < kHeaderBytes) fail(ErrorCode::kTruncated, where + ": truncated header");
  std::size_t off = 4;
  const auto version = get<std::uint16_t>(buf, off);
  const auto flags = get<std::uint16_t>(buf, off);
  const auto rows = get<std::uint32_t>(buf, off);
  const auto cols = get<std::uint32_t>(buf, off);
  const auto min_r = get<float>(buf, off);
  const auto max_r = get<float>(buf, off);
  require(version == kVersion, ErrorCode::kFormat,
          where + ": unsupported version " + std::to_string(version));
  require((flags & ~kFlagMask) == 0, ErrorCode::kFormat, where + ": unknown flag bits");
  require(rows >= 1 && cols >= 4 && rows <= 65536 && cols <= 65536, ErrorCode::kFormat,
          where + ": implausible grid shape");

  SensorConfig cfg = expected ? *expected : SensorConfig{};
  if (expected) {
    require(static_cast<int>(rows) == expected->beams &&
                static_cast<int>(cols) == expected->azimuth_bins &&
                min_r == static_cast<float>(expected->min_range) &&
                max_r == static_cast<float>(expected->max_range),
            ErrorCode::kShapeMismatch,
            where + ": scan grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                " does not match expected " + std::to_string(expected->beams) + "x" +
                std::to_string(expected->azimuth_bins));
  } else {
    cfg.beams = static_cast<int>(rows);
    cfg.azimuth_bins = static_cast<int>(cols);
    cfg.min_range = min_r;
    cfg.max_range = max_r;
  }
  cfg.validate();

  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  const bool has_mask = flags & kFlagMask;
  const std::size_t need = kHeaderBytes + n * 4 + n + (has_mask ? n : 0);
  if (buf.size() < need) fail(ErrorCode::kTruncated, where + ": truncated grid data");
  require(buf.size() == need, ErrorCode::kFormat, where + ": trailing bytes after grid data");

  ScanFile sf;
  sf.image = RangeImage(cfg);
  std::memcpy(sf.image.ranges.data(), buf.data() + off, n * 4);
  off += n * 4;
  std::memcpy(sf.image.valid.data(), buf.data() + off, n);
  off += n;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t v = sf.image.valid[i];
    const float r = sf.image.ranges[i];
    require(v <= 1, ErrorCode::kFormat, where + ": validity byte not 0/1");
    if (v) {
      require(r >= min_r && r <= max_r, ErrorCode::kFormat, where + ": valid range out of limits");
    } else {
      require(r == 0.0f, ErrorCode::kFormat, where + ": invalid cell with non-zero range");
    }
  }
  if (has_mask) {
    SegMask m(static_cast<int>(rows), static_cast<int>(cols));
    std::memcpy(m.labels.data(), buf.data() + off, n);
    for (std::size_t i = 0; i < n; ++i) {
      require(m.labels[i] <= 1, ErrorCode::kFormat, where + ": mask byte not 0/1");
      require(!m.labels[i] || sf.image.valid[i], ErrorCode::kFormat,
              where + ": mask marks an invalid cell");
    }
    sf.mask = std::move(m);
  }
  return sf;
}

std::filesystem::path sequence_dir(const std::filesystem::path& root, int id,
                                   const std::string& suffix) {
  return root / ("seq_" + std::to_string(id) + suffix);
}

namespace {

std::string frame_name(int idx, const char* kind) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%06d_%s.slkr", idx, kind);
  return buf;
}

}  // namespace

void write_sequence(const std::filesystem::path& root, const Sequence& seq,
                    const std::string& provenance, const std::string& suffix) {
  namespace fs = std::filesystem;
  require(!seq.frames.empty(), ErrorCode::kValidation, "cannot write an empty sequence");
  const fs::path dir = sequence_dir(root, seq.id, suffix);
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());

  const SensorConfig& cfg = seq.frames.front().dynamic.config;
  {
    std::ofstream meta(dir / "sequence.ini", std::ios::binary);
    require(static_cast<bool>(meta), ErrorCode::kIo, "cannot write sequence metadata");
    if (!provenance.empty()) meta << "; " << provenance << "\n";
    meta << "[sequence]\n"
         << "id = " << seq.id << "\n"
         << "frame_rate = " << slameval::format_decimal(seq.frame_rate) << "\n"
         << "[sensor]\n"
         << "beams = " << cfg.beams << "\n"
         << "azimuth_bins = " << cfg.azimuth_bins << "\n"
         << "min_elevation = " << slameval::format_decimal(cfg.min_elevation) << "\n"
         << "max_elevation = " << slameval::format_decimal(cfg.max_elevation) << "\n"
         << "min_range = " << slameval::format_decimal(cfg.min_range) << "\n"
         << "max_range = " << slameval::format_decimal(cfg.max_range) << "\n";
  }
  slameval::Trajectory gt;
  for (const auto& f : seq.frames) {
    write_scan(dir / frame_name(f.frame_index, "dyn"), f.dynamic, &f.dynamic_mask);
    write_scan(dir / frame_name(f.frame_index, "stat"), f.static_scan, &f.static_mask);
    gt.poses.push_back(slameval::Pose::from_isometry(f.timestamp, f.gt_pose));
  }
  std::vector<std::string> header;
  if (!provenance.empty()) header.push_back(provenance);
  slameval::write_trajectory(dir / "poses.txt", gt, header);
}

Sequence read_sequence(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  require(fs::is_directory(dir), ErrorCode::kIo, "not a sequence directory: " + dir.string());
  Sequence seq;
  SensorConfig cfg;
  const fs::path meta = dir / "sequence.ini";
  if (fs::exists(meta)) {
    boost::property_tree::ptree pt;
    try {
      boost::property_tree::ini_parser::read_ini(meta.string(), pt);
      seq.id = pt.get<int>("sequence.id", 0);
      seq.frame_rate = pt.get<double>("sequence.frame_rate", 10.0);
      cfg.beams = pt.get<int>("sensor.beams", cfg.beams);
      cfg.azimuth_bins = pt.get<int>("sensor.azimuth_bins", cfg.azimuth_bins);
      cfg.min_elevation = pt.get<double>("sensor.min_elevation", cfg.min_elevation);
      cfg.max_elevation = pt.get<double>("sensor.max_elevation", cfg.max_elevation);
      cfg.min_range = pt.get<double>("sensor.min_range", cfg.min_range);
      cfg.max_range = pt.get<double>("sensor.max_range", cfg.max_range);
    } catch (const boost::property_tree::ptree_error& e) {
      fail(ErrorCode::kFormat, meta.string() + ": " + e.what());
    }
  }
  // File headers store ranges as f32.
  cfg.min_range = static_cast<float>(cfg.min_range);
  cfg.max_range = static_cast<float>(cfg.max_range);

  std::vector<int> indices;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    int idx = 0;
    char kind[8] = {0};
    if (std::sscanf(name.c_str(), "frame_%d_%4[a-z].slkr", &idx, kind) == 2 &&
        std::string(kind) == "dyn") {
      indices.push_back(idx);
    }
  }
  std::sort(indices.begin(), indices.end());
  require(!indices.empty(), ErrorCode::kFormat, "no frames in " + dir.string());

  slameval::Trajectory gt;
  const fs::path poses = dir / "poses.txt";
  require(fs::exists(poses), ErrorCode::kDependency,
          "missing ground-truth trajectory " + poses.string());
  gt = slameval::read_trajectory(poses);
  require(gt.size() == indices.size(), ErrorCode::kFormat,
          dir.string() + ": poses.txt length does not match frame count");

  for (std::size_t k = 0; k < indices.size(); ++k) {
    ScanPair p;
    p.sequence_id = seq.id;
    p.frame_index = indices[k];
    auto dyn = read_scan(dir / frame_name(indices[k], "dyn"), &cfg);
    auto stat = read_scan(dir / frame_name(indices[k], "stat"), &cfg);
    p.dynamic = std::move(dyn.image);
    p.static_scan = std::move(stat.image);
    p.dynamic_mask = dyn.mask ? *dyn.mask : SegMask::empty_like(p.dynamic);
    p.static_mask = stat.mask ? *stat.mask : SegMask::empty_like(p.static_scan);
    p.timestamp = gt[k].timestamp;
    p.gt_pose = gt[k].isometry();
    seq.frames.push_back(std::move(p));
  }
  return seq;
}

}  // namespace slack::scanio
