#include "slack/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "slack/checkpoint.hpp"

namespace slack::pipeline {

namespace fs = std::filesystem;
using slameval::format_decimal;
using slameval::Trajectory;
using slameval::write_trajectory;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t stage_seed(const ExperimentConfig& cfg, const std::string& stage) {
  return splitmix(cfg.seed() ^ fnv1a(stage));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void emit(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write " + path.string());
  f << text;
  require(static_cast<bool>(f), ErrorCode::kIo, "failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Runs fn(i) for i in [0, n) on at most `jobs` threads. Errors are rethrown
// in index order so the reported failure does not depend on scheduling.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void require_stage(const fs::path& path, const std::string& stage, const std::string& needed_by) {
  require(fs::exists(path), ErrorCode::kDependency,
          needed_by + " needs the " + stage + " stage: missing checkpoint " + path.string() +
              " (run train-" + stage + " first)");
}

Checkpoint stamped(Checkpoint ckpt, const ExperimentConfig& cfg, const std::string& stage) {
  kv_set(ckpt.config, "stage", stage);
  kv_set(ckpt.config, "seed", std::to_string(cfg.seed()));
  kv_set(ckpt.config, "config_hash", cfg.hash());
  return ckpt;
}

backbone::BackboneParams load_backbone(const fs::path& path) {
  require(fs::exists(path), ErrorCode::kDependency, "missing model checkpoint " + path.string());
  return backbone::backbone_from_checkpoint(load_checkpoint(path));
}

std::string series_csv(const std::vector<double>& loss, const std::string& provenance) {
  std::string out = "# " + provenance + "\nepoch,loss\n";
  for (std::size_t i = 0; i < loss.size(); ++i) {
    out += std::to_string(i + 1) + "," + format_decimal(loss[i]) + "\n";
  }
  return out;
}

std::string csv_number(double v) { return std::isfinite(v) ? format_decimal(v) : "nan"; }

const std::vector<ConfigKey> kKeys = {
    {"paths.data_dir", "data", "synthetic sequences"},
    {"paths.checkpoint_dir", "checkpoints", "model checkpoints and loss CSVs"},
    {"paths.report_dir", "reports", "metric and SLAM reports"},
    {"run.seed", "1", "global seed"},
    {"run.jobs", "1", "worker cap"},
    {"sensor.beams", "16", "range image rows"},
    {"sensor.azimuth_bins", "256", "range image columns"},
    {"sensor.min_elevation_deg", "-15", "lowest beam elevation"},
    {"sensor.max_elevation_deg", "15", "highest beam elevation"},
    {"sensor.min_range", "0.5", "meters"},
    {"sensor.max_range", "50", "meters"},
    {"world.train_sequences", "2", "source-domain training sequences"},
    {"world.test_sequences", "2", "held-out sequences"},
    {"world.target_sequences", "1", "target-domain sequences"},
    {"world.frames", "200", "frames per sequence"},
    {"world.frame_rate", "10", "Hz"},
    {"world.corridor_length", "120", "meters"},
    {"world.corridor_width", "14", "meters"},
    {"world.ceiling_height", "0", "0 = open sky"},
    {"world.floor", "true", "ground plane"},
    {"world.static_obstacles", "40", "source-domain obstacle count"},
    {"world.obstacle_size_min", "0.4", "meters"},
    {"world.obstacle_size_max", "1.6", "meters"},
    {"world.dynamic_actors", "6", "moving cylinders"},
    {"world.actor_speed_min", "3", "m/s"},
    {"world.actor_speed_max", "7", "m/s"},
    {"world.sensor_speed", "5", "m/s"},
    {"world.sensor_height", "1.8", "meters"},
    {"world.waypoints", "6,0; 40,0.8; 75,-0.8; 110,0", "x,y pairs separated by ;"},
    {"world.target_static_obstacles", "80", "target-domain obstacle count"},
    {"world.target_sensor_height", "1.2", "target-domain sensor height"},
    {"backbone.latent_dim", "128", "code width"},
    {"backbone.widths", "8,16,32,32", "encoder channels per stage"},
    {"backbone.attention", "true", "seg-attention gates"},
    {"backbone.dice_decoder", "false", "auxiliary mask decoder"},
    {"train_ae.epochs", "60", ""},
    {"train_ae.learning_rate", "0.001", ""},
    {"train_ae.weight_decay", "0", ""},
    {"train_ae.batch_size", "4", ""},
    {"train_ae.contrastive", "npair", "none, triplet or npair"},
    {"train_ae.contrastive_weight", "0.1", ""},
    {"train_ae.margin", "1", "triplet margin"},
    {"train_ae.negatives", "2", "hard negatives per anchor"},
    {"train_ae.window", "2", "positive frame window"},
    {"train_ae.dice_weight", "1", ""},
    {"train_pd.epochs", "20", ""},
    {"train_pd.learning_rate", "0.0006", ""},
    {"train_pd.weight_decay", "0.00001", ""},
    {"train_pd.batch_size", "4", ""},
    {"train_pd.update_backbone", "true", ""},
    {"train_pd.vanilla", "false", "single-code discriminator"},
    {"train_attack.epochs", "40", ""},
    {"train_attack.learning_rate", "0.001", ""},
    {"train_attack.weight_decay", "0.00001", ""},
    {"train_attack.batch_size", "4", ""},
    {"train_attack.keep_weight", "1", ""},
    {"train_mmd.epochs", "30", ""},
    {"train_mmd.learning_rate", "0.001", ""},
    {"train_mmd.weight_decay", "0.00001", ""},
    {"train_mmd.batch_size", "4", ""},
    {"train_mmd.weight", "10", "MMD term weight"},
    {"train_mmd.multipliers", "0.5,1,2,4", "bandwidth multipliers"},
    {"train_mmd.eval_size", "16", "codes per domain for the reported MMD"},
    {"lqi.epochs", "30", ""},
    {"lqi.learning_rate", "0.001", ""},
    {"lqi.sigma_max", "1", "meters"},
    {"lqi.levels", "6", ""},
    {"lqi.copies", "4", ""},
    {"dsr.epochs", "20", ""},
    {"dsr.learning_rate", "0.002", ""},
    {"dsr.max_class_weight", "5", ""},
    {"attack.row_start", "7", "first corrupted beam"},
    {"attack.row_end", "11", "one past the last corrupted beam"},
    {"attack.fraction", "0.1", "share of band columns corrupted"},
    {"attack.mode", "set-dynamic", "set-dynamic or clear"},
    {"attack.mask_seed", "7", "mixed with run.seed"},
    {"attack.injection_threshold", "0.5", "meters"},
    {"attack.eps", "0.05", "PiJ tolerance, meters"},
    {"icp.max_iterations", "30", ""},
    {"icp.max_distance", "1", "meters"},
    {"icp.convergence", "0.000001", ""},
    {"icp.voxel", "0.2", "meters, 0 disables"},
    {"icp.min_fitness", "0.3", ""},
    {"icp.min_inliers", "6", ""},
    {"icp.point_to_plane", "true", ""},
    {"icp.robust_scale", "0.1", "meters, 0 disables"},
    {"eval.parity", "0.05", "budget parity tolerance"},
    {"eval.rr_retries", "20", ""},
    {"eval.rpe_delta", "1", "frames"},
    {"eval.emd_points", "256", "subsample size for EMD"},
    {"eval.plot_size", "512", "pixels"},
};

bool excluded_from_hash(const std::string& key) {
  return key.rfind("paths.", 0) == 0 || key == "run.jobs";
}

}  // namespace

const std::vector<ConfigKey>& config_keys() { return kKeys; }

ExperimentConfig::ExperimentConfig() {
  for (const auto& k : kKeys) values_[k.key] = k.fallback;
}

void ExperimentConfig::load_file(const fs::path& path) {
  require(fs::exists(path), ErrorCode::kIo, "config file not found: " + path.string());
  load_text(read_text(path), path.string());
}

void ExperimentConfig::load_text(const std::string& text, const std::string& where) {
  // The INI reader only knows whole-line ';' comments.
  std::stringstream in(text), cleaned;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (!t.empty() && t[0] == '#') continue;
    for (const char* mark : {" ;", "\t;", " #", "\t#"}) {
      const auto at = line.find(mark);
      if (at != std::string::npos) line.erase(at);
    }
    cleaned << line << "\n";
  }
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(cleaned, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorCode::kFormat, where + ": " + e.message() + " at line " + std::to_string(e.line()));
  }
  for (const auto& [section, body] : tree) {
    require(!body.empty() || !body.data().empty(), ErrorCode::kFormat,
            where + ": empty section " + section);
    require(!body.empty(), ErrorCode::kFormat, where + ": key '" + section + "' outside a section");
    for (const auto& [name, value] : body) set(section + "." + name, value.data());
  }
}

void ExperimentConfig::apply_environment() {
  const std::pair<const char*, const char*> roots[] = {{"SLACK_DATA_DIR", "paths.data_dir"},
                                                       {"SLACK_CHECKPOINT_DIR", "paths.checkpoint_dir"},
                                                       {"SLACK_REPORT_DIR", "paths.report_dir"}};
  for (const auto& [var, key] : roots) {
    if (const char* v = std::getenv(var); v != nullptr && *v != '\0') values_[key] = v;
  }
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  require(values_.count(key) > 0, ErrorCode::kValidation, "unknown config key '" + key + "'");
  values_[key] = trim(value);
}

std::string ExperimentConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  require(it != values_.end(), ErrorCode::kValidation, "unknown config key '" + key + "'");
  return it->second;
}

bool ExperimentConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string ExperimentConfig::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  std::string canon;
  for (const auto& [k, v] : values_) {
    if (!excluded_from_hash(k)) canon += k + "=" + v + "\n";
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canon);
  return out.str();
}

std::uint64_t ExperimentConfig::seed() const { return get_u64("run.seed"); }

std::string ExperimentConfig::provenance() const {
  return "seed=" + std::to_string(seed()) + " config_hash=" + hash();
}

int ExperimentConfig::get_int(const std::string& key) const {
  const std::string v = get(key);
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    require(used == v.size() && x >= INT32_MIN && x <= INT32_MAX, ErrorCode::kValidation, "");
    return static_cast<int>(x);
  } catch (const std::logic_error&) {
  } catch (const Error&) {
  }
  fail(ErrorCode::kValidation, key + " must be an integer, got '" + v + "'");
}

double ExperimentConfig::get_double(const std::string& key) const {
  const std::string v = get(key);
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size() && std::isfinite(x)) return x;
  } catch (const std::logic_error&) {
  }
  fail(ErrorCode::kValidation, key + " must be a finite number, got '" + v + "'");
}

bool ExperimentConfig::get_bool(const std::string& key) const {
  std::string v = get(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorCode::kValidation, key + " must be true or false, got '" + v + "'");
}

std::uint64_t ExperimentConfig::get_u64(const std::string& key) const {
  const std::string v = get(key);
  try {
    std::size_t used = 0;
    require(!v.empty() && v[0] != '-', ErrorCode::kValidation, "");
    const unsigned long long x = std::stoull(v, &used);
    if (used == v.size()) return x;
  } catch (const std::logic_error&) {
  } catch (const Error&) {
  }
  fail(ErrorCode::kValidation, key + " must be a non-negative integer, got '" + v + "'");
}

std::vector<double> ExperimentConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get(key), ',')) {
    try {
      std::size_t used = 0;
      const double x = std::stod(item, &used);
      if (used == item.size() && std::isfinite(x)) {
        out.push_back(x);
        continue;
      }
    } catch (const std::logic_error&) {
    }
    fail(ErrorCode::kValidation, key + " has a bad list entry '" + item + "'");
  }
  return out;
}

std::vector<int> ExperimentConfig::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (double x : get_doubles(key)) {
    require(x == std::floor(x) && std::abs(x) < 1e9, ErrorCode::kValidation,
            key + " entries must be integers");
    out.push_back(static_cast<int>(x));
  }
  return out;
}

fs::path ExperimentConfig::data_dir() const { return get("paths.data_dir"); }
fs::path ExperimentConfig::checkpoint_dir() const { return get("paths.checkpoint_dir"); }
fs::path ExperimentConfig::report_dir() const { return get("paths.report_dir"); }

int ExperimentConfig::jobs() const {
  const int j = get_int("run.jobs");
  require(j >= 1, ErrorCode::kValidation, "run.jobs must be >= 1");
  return j;
}

scanio::SensorConfig ExperimentConfig::sensor() const {
  scanio::SensorConfig s;
  s.beams = get_int("sensor.beams");
  s.azimuth_bins = get_int("sensor.azimuth_bins");
  s.min_elevation = get_double("sensor.min_elevation_deg") * M_PI / 180.0;
  s.max_elevation = get_double("sensor.max_elevation_deg") * M_PI / 180.0;
  s.min_range = get_double("sensor.min_range");
  s.max_range = get_double("sensor.max_range");
  return s;
}

int ExperimentConfig::sequence_count(Split split) const {
  switch (split) {
    case Split::kTrain:
      return get_int("world.train_sequences");
    case Split::kTest:
      return get_int("world.test_sequences");
    case Split::kTarget:
      return get_int("world.target_sequences");
  }
  return 0;
}

int ExperimentConfig::sequence_id(Split split, int index) const {
  switch (split) {
    case Split::kTrain:
      return index;
    case Split::kTest:
      return 100 + index;
    case Split::kTarget:
      return 200 + index;
  }
  return index;
}

scanio::WorldSpec ExperimentConfig::world(Split split, int index) const {
  scanio::WorldSpec w;
  w.sensor = sensor();
  w.frames = get_int("world.frames");
  w.frame_rate = get_double("world.frame_rate");
  w.corridor_length = get_double("world.corridor_length");
  w.corridor_width = get_double("world.corridor_width");
  w.ceiling_height = get_double("world.ceiling_height");
  w.floor = get_bool("world.floor");
  w.static_obstacles = get_int("world.static_obstacles");
  w.obstacle_size_min = get_double("world.obstacle_size_min");
  w.obstacle_size_max = get_double("world.obstacle_size_max");
  w.dynamic_actors = get_int("world.dynamic_actors");
  w.actor_speed_min = get_double("world.actor_speed_min");
  w.actor_speed_max = get_double("world.actor_speed_max");
  w.sensor_speed = get_double("world.sensor_speed");
  w.sensor_height = get_double("world.sensor_height");
  w.waypoints.clear();
  for (const auto& pair : split_list(get("world.waypoints"), ';')) {
    const auto xy = split_list(pair, ',');
    require(xy.size() == 2, ErrorCode::kValidation, "world.waypoints entries must be x,y pairs");
    try {
      w.waypoints.emplace_back(std::stod(xy[0]), std::stod(xy[1]));
    } catch (const std::logic_error&) {
      fail(ErrorCode::kValidation, "world.waypoints has a bad entry '" + pair + "'");
    }
  }
  if (split == Split::kTarget) {
    w.static_obstacles = get_int("world.target_static_obstacles");
    w.sensor_height = get_double("world.target_sensor_height");
  }
  w.sequence_id = sequence_id(split, index);
  w.seed = splitmix(seed() ^ (0x5EC0000ull + static_cast<std::uint64_t>(w.sequence_id)));
  return w;
}

backbone::BackboneConfig ExperimentConfig::backbone() const {
  backbone::BackboneConfig b;
  b.sensor = sensor();
  b.latent_dim = get_int("backbone.latent_dim");
  b.widths = get_ints("backbone.widths");
  b.attention = get_bool("backbone.attention");
  b.dice_decoder = get_bool("backbone.dice_decoder");
  return b;
}

backbone::TrainConfig ExperimentConfig::train_ae() const {
  backbone::TrainConfig t;
  t.epochs = get_int("train_ae.epochs");
  t.learning_rate = get_double("train_ae.learning_rate");
  t.weight_decay = get_double("train_ae.weight_decay");
  t.batch_size = get_int("train_ae.batch_size");
  try {
    t.contrastive = backbone::parse_contrastive(get("train_ae.contrastive"));
  } catch (const Error& e) {
    fail(ErrorCode::kValidation, std::string("train_ae.contrastive: ") + e.what());
  }
  t.contrastive_weight = get_double("train_ae.contrastive_weight");
  t.margin = get_double("train_ae.margin");
  t.negatives = get_int("train_ae.negatives");
  t.window = get_int("train_ae.window");
  t.dice_weight = get_double("train_ae.dice_weight");
  t.seed = stage_seed(*this, "ae");
  return t;
}

pretext::PDTrainConfig ExperimentConfig::train_pd() const {
  pretext::PDTrainConfig t;
  t.epochs = get_int("train_pd.epochs");
  t.learning_rate = get_double("train_pd.learning_rate");
  t.weight_decay = get_double("train_pd.weight_decay");
  t.batch_size = get_int("train_pd.batch_size");
  t.update_backbone = get_bool("train_pd.update_backbone");
  t.vanilla = get_bool("train_pd.vanilla");
  t.seed = stage_seed(*this, "pd");
  return t;
}

attack::AdvTrainConfig ExperimentConfig::train_attack() const {
  attack::AdvTrainConfig t;
  t.epochs = get_int("train_attack.epochs");
  t.learning_rate = get_double("train_attack.learning_rate");
  t.weight_decay = get_double("train_attack.weight_decay");
  t.batch_size = get_int("train_attack.batch_size");
  t.keep_weight = get_double("train_attack.keep_weight");
  t.seed = stage_seed(*this, "attack");
  return t;
}

attack::MMDConfig ExperimentConfig::train_mmd() const {
  attack::MMDConfig t;
  t.multipliers = get_doubles("train_mmd.multipliers");
  t.batch_size = get_int("train_mmd.batch_size");
  t.weight = get_double("train_mmd.weight");
  t.epochs = get_int("train_mmd.epochs");
  t.learning_rate = get_double("train_mmd.learning_rate");
  t.weight_decay = get_double("train_mmd.weight_decay");
  t.eval_size = get_int("train_mmd.eval_size");
  t.seed = stage_seed(*this, "mmd");
  return t;
}

quality::LQIConfig ExperimentConfig::lqi() const {
  quality::LQIConfig t;
  t.epochs = get_int("lqi.epochs");
  t.learning_rate = get_double("lqi.learning_rate");
  t.sigma_max = get_double("lqi.sigma_max");
  t.levels = get_int("lqi.levels");
  t.copies = get_int("lqi.copies");
  t.seed = stage_seed(*this, "lqi");
  return t;
}

quality::DSRConfig ExperimentConfig::dsr() const {
  quality::DSRConfig t;
  t.epochs = get_int("dsr.epochs");
  t.learning_rate = get_double("dsr.learning_rate");
  t.max_class_weight = get_double("dsr.max_class_weight");
  t.seed = stage_seed(*this, "dsr");
  return t;
}

attack::MaskCorruptionSpec ExperimentConfig::corruption() const {
  attack::MaskCorruptionSpec s;
  s.row_start = get_int("attack.row_start");
  s.row_end = get_int("attack.row_end");
  s.fraction = get_double("attack.fraction");
  try {
    s.mode = attack::parse_corruption_mode(get("attack.mode"));
  } catch (const Error& e) {
    fail(ErrorCode::kValidation, std::string("attack.mode: ") + e.what());
  }
  s.seed = splitmix(seed() ^ get_u64("attack.mask_seed"));
  return s;
}

attack::AttackOptions ExperimentConfig::attack_options() const {
  attack::AttackOptions o;
  o.injection_threshold = get_double("attack.injection_threshold");
  o.eps = get_double("attack.eps");
  return o;
}

slameval::ICPConfig ExperimentConfig::icp() const {
  slameval::ICPConfig c;
  c.max_iterations = get_int("icp.max_iterations");
  c.max_distance = get_double("icp.max_distance");
  c.convergence = get_double("icp.convergence");
  c.voxel = get_double("icp.voxel");
  c.min_fitness = get_double("icp.min_fitness");
  c.min_inliers = get_int("icp.min_inliers");
  c.point_to_plane = get_bool("icp.point_to_plane");
  c.robust_scale = get_double("icp.robust_scale");
  return c;
}

slameval::CompareConfig ExperimentConfig::compare() const {
  slameval::CompareConfig c;
  c.spec = corruption();
  c.attack = attack_options();
  c.icp = icp();
  c.parity = get_double("eval.parity");
  c.rr_retries = get_int("eval.rr_retries");
  c.rpe_delta = get_int("eval.rpe_delta");
  c.seed = stage_seed(*this, "eval");
  return c;
}

int ExperimentConfig::emd_points() const {
  const int n = get_int("eval.emd_points");
  require(n >= 1, ErrorCode::kValidation, "eval.emd_points must be >= 1");
  return n;
}

void ExperimentConfig::validate() const {
  jobs();
  require(get_int("world.frames") >= 2, ErrorCode::kValidation, "world.frames must be >= 2");
  for (auto split : {Split::kTrain, Split::kTest, Split::kTarget}) {
    require(sequence_count(split) >= 0 && sequence_count(split) <= 100, ErrorCode::kValidation,
            "sequence counts must be in [0, 100]");
  }
  world(Split::kTrain, 0).validate();
  world(Split::kTarget, 0).validate();
  backbone().validate();
  train_ae().validate();
  train_pd().validate();
  train_attack().validate();
  train_mmd().validate();
  lqi().validate();
  dsr().validate();
  compare().validate();
  emd_points();
  require(get_int("eval.plot_size") >= 16, ErrorCode::kValidation, "eval.plot_size must be >= 16");
}

namespace files {

fs::path checkpoint(const ExperimentConfig& cfg, const std::string& stage) {
  std::string name = stage;
  std::replace(name.begin(), name.end(), '-', '_');
  return cfg.checkpoint_dir() / (name + ".ckpt");
}

fs::path loss_csv(const ExperimentConfig& cfg, const std::string& stage) {
  std::string name = stage;
  std::replace(name.begin(), name.end(), '-', '_');
  return cfg.checkpoint_dir() / (name + "_loss.csv");
}

}  // namespace files

SynthSummary synth(const ExperimentConfig& cfg, const fs::path& out_dir, const Logger& log) {
  cfg.validate();
  struct Job {
    ExperimentConfig::Split split;
    int index;
  };
  std::vector<Job> jobs;
  for (auto split : {ExperimentConfig::Split::kTrain, ExperimentConfig::Split::kTest,
                     ExperimentConfig::Split::kTarget}) {
    for (int i = 0; i < cfg.sequence_count(split); ++i) jobs.push_back({split, i});
  }
  require(!jobs.empty(), ErrorCode::kValidation, "no sequences requested");
  fs::create_directories(out_dir);
  SynthSummary out;
  out.dirs.resize(jobs.size());
  std::vector<int> frames(jobs.size(), 0);
  parallel_for(jobs.size(), cfg.jobs(), [&](std::size_t j) {
    const scanio::WorldSpec w = cfg.world(jobs[j].split, jobs[j].index);
    const scanio::Sequence seq = scanio::synth_sequence(w);
    scanio::write_sequence(out_dir, seq, cfg.provenance());
    out.dirs[j] = scanio::sequence_dir(out_dir, seq.id);
    frames[j] = static_cast<int>(seq.size());
  });
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    ++out.sequences;
    out.frames += frames[j];
    emit(log, "wrote " + out.dirs[j].string() + " (" + std::to_string(frames[j]) + " frames)");
  }
  return out;
}

std::vector<scanio::Sequence> load_split(const ExperimentConfig& cfg, ExperimentConfig::Split split) {
  std::vector<scanio::Sequence> out;
  for (int i = 0; i < cfg.sequence_count(split); ++i) {
    const fs::path dir = scanio::sequence_dir(cfg.data_dir(), cfg.sequence_id(split, i));
    require(fs::is_directory(dir), ErrorCode::kDependency,
            "missing synthetic sequence " + dir.string() + " (run synth first)");
    out.push_back(scanio::read_sequence(dir));
  }
  require(!out.empty(), ErrorCode::kValidation, "split has no sequences");
  return out;
}

namespace {

StageSummary train_ae_stage(const ExperimentConfig& cfg, const std::string& stage, const Logger& log) {
  const bool target = stage == "ae-target";
  const auto data =
      load_split(cfg, target ? ExperimentConfig::Split::kTarget : ExperimentConfig::Split::kTrain);
  emit(log, "training " + stage + " on " + std::to_string(data.size()) + " sequences");
  auto tc = cfg.train_ae();
  if (target) tc.seed = stage_seed(cfg, "ae-target");
  const auto result = backbone::train_backbone(data, cfg.backbone(), tc);
  StageSummary s{stage, {files::checkpoint(cfg, stage), files::loss_csv(cfg, stage)},
                 result.history.back().total, {}};
  fs::create_directories(cfg.checkpoint_dir());
  save_checkpoint(s.outputs[0], stamped(backbone::to_checkpoint(result.params), cfg, stage));
  write_text(s.outputs[1], backbone::history_csv(result.history, {cfg.provenance()}));
  return s;
}

StageSummary train_pd_stage(const ExperimentConfig& cfg, const Logger& log) {
  const fs::path ae = files::checkpoint(cfg, "ae");
  require_stage(ae, "ae", "train-pd");
  const auto data = load_split(cfg, ExperimentConfig::Split::kTrain);
  emit(log, "training pd");
  const auto result = pretext::train_pd(data, load_backbone(ae), cfg.train_pd());
  StageSummary s{"pd",
                 {files::checkpoint(cfg, "pd"), files::checkpoint(cfg, "pd-backbone"),
                  files::loss_csv(cfg, "pd")},
                 result.history.back().loss,
                 "accuracy " + format_decimal(result.history.back().accuracy)};
  save_checkpoint(s.outputs[0], stamped(pretext::to_checkpoint(result.pd), cfg, "pd"));
  save_checkpoint(s.outputs[1], stamped(backbone::to_checkpoint(result.backbone), cfg, "pd"));
  write_text(s.outputs[2], pretext::history_csv(result.history, {cfg.provenance()}));
  return s;
}

StageSummary train_attack_stage(const ExperimentConfig& cfg, const Logger& log) {
  const fs::path pd = files::checkpoint(cfg, "pd"), pdb = files::checkpoint(cfg, "pd-backbone");
  require_stage(pd, "pd", "train-attack");
  require_stage(pdb, "pd", "train-attack");
  const auto data = load_split(cfg, ExperimentConfig::Split::kTrain);
  emit(log, "training attack");
  const auto pp = pretext::pd_from_checkpoint(load_checkpoint(pd));
  const auto result = attack::train_adversarial(data, load_backbone(pdb), pp, cfg.train_attack());
  StageSummary s{"attack",
                 {files::checkpoint(cfg, "attack"), files::loss_csv(cfg, "attack")},
                 result.history.back().total,
                 "PD score " + format_decimal(result.history.back().score)};
  save_checkpoint(s.outputs[0], stamped(backbone::to_checkpoint(result.backbone), cfg, "attack"));
  write_text(s.outputs[1], attack::history_csv(result.history, {cfg.provenance()}));
  return s;
}

StageSummary train_mmd_stage(const ExperimentConfig& cfg, const Logger& log) {
  const fs::path att = files::checkpoint(cfg, "attack"), tgt = files::checkpoint(cfg, "ae-target"),
                 pd = files::checkpoint(cfg, "pd");
  require_stage(att, "attack", "train-mmd");
  require_stage(tgt, "ae-target", "train-mmd");
  require_stage(pd, "pd", "train-mmd");
  const auto source = load_split(cfg, ExperimentConfig::Split::kTrain);
  const auto target = attack::target_scans(load_split(cfg, ExperimentConfig::Split::kTarget));
  emit(log, "training mmd on " + std::to_string(target.size()) + " target scans");
  const auto pp = pretext::pd_from_checkpoint(load_checkpoint(pd));
  const auto result =
      attack::train_mmd_uda(source, target, load_backbone(att), load_backbone(tgt), pp, cfg.train_mmd());
  StageSummary s{"mmd",
                 {files::checkpoint(cfg, "mmd"), files::loss_csv(cfg, "mmd")},
                 result.history.back().total,
                 "mmd " + format_decimal(result.mmd_before) + " -> " + format_decimal(result.mmd_after)};
  Checkpoint ckpt = stamped(backbone::to_checkpoint(result.backbone), cfg, "mmd");
  kv_set(ckpt.config, "mmd_before", format_decimal(result.mmd_before));
  kv_set(ckpt.config, "mmd_after", format_decimal(result.mmd_after));
  save_checkpoint(s.outputs[0], ckpt);
  write_text(s.outputs[1], attack::history_csv(result.history, {cfg.provenance()}));
  return s;
}

StageSummary train_quality_stage(const ExperimentConfig& cfg, const Logger& log) {
  const auto data = load_split(cfg, ExperimentConfig::Split::kTrain);
  std::vector<scanio::RangeImage> clean;
  for (const auto& seq : data) {
    for (const auto& f : seq.frames) clean.push_back(f.static_scan);
  }
  emit(log, "training lqi on " + std::to_string(clean.size()) + " clean scans");
  const auto lq = quality::train_lqi(clean, cfg.lqi());
  emit(log, "training dsr");
  const auto ds = quality::train_dsr_classifier(data, cfg.dsr());
  StageSummary s{"quality",
                 {files::checkpoint(cfg, "lqi"), files::checkpoint(cfg, "dsr"), files::loss_csv(cfg, "lqi"),
                  files::loss_csv(cfg, "dsr")},
                 lq.loss.empty() ? 0.0 : lq.loss.back(),
                 "dsr loss " + format_decimal(ds.loss.empty() ? 0.0 : ds.loss.back())};
  fs::create_directories(cfg.checkpoint_dir());
  save_checkpoint(s.outputs[0], stamped(quality::to_checkpoint(lq.model), cfg, "quality"));
  save_checkpoint(s.outputs[1], stamped(quality::to_checkpoint(ds.model), cfg, "quality"));
  write_text(s.outputs[2], series_csv(lq.loss, cfg.provenance()));
  write_text(s.outputs[3], series_csv(ds.loss, cfg.provenance()));
  return s;
}

void check_sensor(const scanio::SensorConfig& model, const scanio::Sequence& seq, const std::string& what) {
  require(!seq.frames.empty(), ErrorCode::kFormat, "sequence has no frames");
  require(model.same_grid(seq.frames[0].static_scan.config), ErrorCode::kShapeMismatch,
          what + " was trained for a " + std::to_string(model.beams) + "x" +
              std::to_string(model.azimuth_bins) + " sensor but the data is " +
              std::to_string(seq.frames[0].static_scan.rows()) + "x" +
              std::to_string(seq.frames[0].static_scan.cols()));
}

struct QualityModels {
  std::optional<quality::LQIModel> lqi;
  std::optional<quality::DSRModel> dsr;
};

QualityModels load_quality(const ExperimentConfig& cfg) {
  QualityModels q;
  const fs::path l = files::checkpoint(cfg, "lqi"), d = files::checkpoint(cfg, "dsr");
  if (fs::exists(l)) q.lqi = quality::lqi_from_checkpoint(load_checkpoint(l));
  if (fs::exists(d)) q.dsr = quality::dsr_from_checkpoint(load_checkpoint(d));
  return q;
}

}  // namespace

StageSummary train_stage(const ExperimentConfig& cfg, const std::string& stage, const Logger& log) {
  cfg.validate();
  if (stage == "ae" || stage == "ae-target") return train_ae_stage(cfg, stage, log);
  if (stage == "pd") return train_pd_stage(cfg, log);
  if (stage == "attack") return train_attack_stage(cfg, log);
  if (stage == "mmd") return train_mmd_stage(cfg, log);
  if (stage == "quality") return train_quality_stage(cfg, log);
  fail(ErrorCode::kValidation, "unknown training stage '" + stage + "'");
}

AttackSummary attack_sequence(const ExperimentConfig& cfg, const fs::path& in_dir, const fs::path& model,
                              const fs::path& out_dir, const Logger& log) {
  cfg.validate();
  const auto bp = load_backbone(model);
  scanio::Sequence seq = scanio::read_sequence(in_dir);
  check_sensor(bp.config.sensor, seq, "model " + model.string());
  const auto spec = cfg.corruption();
  const auto opt = cfg.attack_options();
  std::vector<attack::AttackedScan> attacked(seq.size());
  parallel_for(seq.size(), cfg.jobs(), [&](std::size_t i) {
    attacked[i] = attack::attack_scan(seq.frames[i].static_scan, seq.frames[i].static_mask, spec, bp, opt);
  });
  AttackSummary out;
  std::string csv = "# " + cfg.provenance() + "\nframe,k,pij_fraction\n";
  for (std::size_t i = 0; i < seq.size(); ++i) {
    seq.frames[i].static_scan = attacked[i].attacked;
    out.injected += attacked[i].injected_cells.size();
    out.mean_pij += attacked[i].pij_fraction;
    csv += std::to_string(i) + "," + std::to_string(attacked[i].injected_cells.size()) + "," +
           format_decimal(attacked[i].pij_fraction) + "\n";
  }
  out.mean_pij /= static_cast<double>(std::max<std::size_t>(seq.size(), 1));
  fs::create_directories(out_dir);
  scanio::write_sequence(out_dir, seq, cfg.provenance(), "_attacked");
  out.sequence_dir = scanio::sequence_dir(out_dir, seq.id, "_attacked");
  out.pij_csv = out_dir / ("seq_" + std::to_string(seq.id) + "_pij.csv");
  write_text(out.pij_csv, csv);
  emit(log, "attacked " + std::to_string(seq.size()) + " frames, mean pij " + format_decimal(out.mean_pij));
  return out;
}

MetricsSummary eval_metrics(const ExperimentConfig& cfg, const fs::path& in_dir, const fs::path& ref_dir,
                            const fs::path& model, const fs::path& out_csv, const Logger& log) {
  cfg.validate();
  const scanio::Sequence seq = scanio::read_sequence(in_dir);
  std::optional<scanio::Sequence> ref;
  if (!ref_dir.empty()) {
    ref = scanio::read_sequence(ref_dir);
    require(ref->size() == seq.size(), ErrorCode::kShapeMismatch,
            "reference sequence has " + std::to_string(ref->size()) + " frames, input has " +
                std::to_string(seq.size()));
  }
  std::optional<backbone::BackboneParams> bp;
  if (!model.empty()) {
    bp = load_backbone(model);
    check_sensor(bp->config.sensor, seq, "model " + model.string());
  }
  const QualityModels q = load_quality(cfg);
  const std::size_t emd_n = static_cast<std::size_t>(cfg.emd_points());
  const std::uint64_t base = stage_seed(cfg, "metrics");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  struct Row {
    double chamfer, emd, lqi, dsr;
  };
  std::vector<Row> rows(seq.size(), Row{nan, nan, nan, nan});
  parallel_for(seq.size(), cfg.jobs(), [&](std::size_t i) {
    const auto& f = seq.frames[i];
    Row& r = rows[i];
    std::optional<std::pair<scanio::PointCloud, scanio::PointCloud>> clouds;
    if (ref) {
      clouds.emplace(scanio::unproject(f.static_scan), scanio::unproject(ref->frames[i].static_scan));
    } else if (bp) {
      const auto rec = backbone::reconstruct(f.dynamic, f.dynamic_mask, *bp);
      clouds.emplace(scanio::unproject(f.dynamic), scanio::unproject_cells(rec, f.dynamic.valid));
    }
    if (clouds && !clouds->first.empty() && !clouds->second.empty()) {
      r.chamfer = quality::chamfer(clouds->first, clouds->second);
      r.emd = quality::emd_subsampled(clouds->first, clouds->second, emd_n, splitmix(base + i));
    }
    if (q.lqi) r.lqi = quality::lqi(f.static_scan, *q.lqi);
    if (q.dsr) r.dsr = quality::dsr(f.static_scan, *q.dsr);
  });
  MetricsSummary out;
  out.csv = out_csv;
  std::string csv = "# " + cfg.provenance() + "\nframe,chamfer,emd,lqi,dsr\n";
  double sums[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    csv += std::to_string(i) + "," + csv_number(r.chamfer) + "," + csv_number(r.emd) + "," +
           csv_number(r.lqi) + "," + csv_number(r.dsr) + "\n";
    sums[0] += r.chamfer;
    sums[1] += r.emd;
    sums[2] += r.lqi;
    sums[3] += r.dsr;
  }
  const double n = static_cast<double>(std::max<std::size_t>(rows.size(), 1));
  out.chamfer = sums[0] / n;
  out.emd = sums[1] / n;
  out.lqi = sums[2] / n;
  out.dsr = sums[3] / n;
  write_text(out_csv, csv);
  emit(log, "wrote " + out_csv.string());
  return out;
}

SlamSummary eval_slam(const ExperimentConfig& cfg, const std::vector<fs::path>& seq_dirs, const fs::path& model,
                      const fs::path& out_dir, const Logger& log) {
  cfg.validate();
  require(!seq_dirs.empty(), ErrorCode::kValidation, "no sequences to evaluate");
  std::optional<backbone::BackboneParams> bp;
  if (!model.empty()) bp = load_backbone(model);
  const QualityModels q = load_quality(cfg);
  const auto cc = cfg.compare();
  const int plot_size = cfg.get_int("eval.plot_size");
  std::vector<scanio::Sequence> seqs;
  for (const auto& d : seq_dirs) {
    seqs.push_back(scanio::read_sequence(d));
    if (bp) check_sensor(bp->config.sensor, seqs.back(), "model " + model.string());
  }
  SlamSummary out;
  out.reports.resize(seqs.size());
  parallel_for(seqs.size(), cfg.jobs(), [&](std::size_t i) {
    const quality::LQIModel* lm = q.lqi ? &*q.lqi : nullptr;
    const quality::DSRModel* dm = q.dsr ? &*q.dsr : nullptr;
    out.reports[i] = bp ? slameval::compare_attacks(seqs[i], *bp, cc, lm, dm)
                        : slameval::evaluate_clean(seqs[i], cc, lm, dm);
  });
  fs::create_directories(out_dir);
  std::string csv = "# " + cfg.provenance() + "\n" + slameval::report_csv_header();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& rep = out.reports[i];
    csv += slameval::report_csv_rows(rep);
    const std::string stem = "seq_" + std::to_string(rep.sequence);
    const Trajectory gt = slameval::ground_truth(seqs[i]);
    write_trajectory(out_dir / (stem + "_gt.txt"), gt, {cfg.provenance()});
    for (const auto& row : rep.rows) {
      write_trajectory(out_dir / (stem + "_" + row.method + ".txt"), row.trajectory, {cfg.provenance()});
      slameval::write_trajectory_plot(out_dir / (stem + "_" + row.method + ".ppm"), gt, row.trajectory,
                                      plot_size, cfg.provenance());
      emit(log, stem + " " + row.method + ": ate " + format_decimal(row.ate) + " pij " +
                    format_decimal(row.pij_fraction));
    }
  }
  out.report_csv = out_dir / "slam_report.csv";
  write_text(out.report_csv, csv);
  return out;
}

std::string report(const std::vector<fs::path>& csvs) {
  require(!csvs.empty(), ErrorCode::kValidation, "no report CSVs given");
  std::vector<slameval::ReportRow> rows;
  for (const auto& p : csvs) {
    const auto part = slameval::parse_report_csv(read_text(p));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return slameval::render_table(rows);
}

ExperimentConfig demo_config(const fs::path& root, std::uint64_t seed) {
  ExperimentConfig cfg;
  const std::pair<const char*, std::string> overrides[] = {
      {"paths.data_dir", (root / "data").string()},
      {"paths.checkpoint_dir", (root / "checkpoints").string()},
      {"paths.report_dir", (root / "reports").string()},
      {"run.seed", std::to_string(seed)},
      {"world.frames", "20"},
      {"world.train_sequences", "2"},
      {"world.test_sequences", "2"},
      {"world.target_sequences", "1"},
      {"world.waypoints", "6,0; 110,0"},
      {"train_ae.epochs", "30"},
      {"train_pd.epochs", "10"},
      {"train_attack.epochs", "20"},
      {"train_mmd.epochs", "3"},
      {"lqi.epochs", "4"},
      {"dsr.epochs", "4"},
      {"eval.emd_points", "128"},
      {"eval.plot_size", "256"},
  };
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  return cfg;
}

DemoSummary demo(const fs::path& root, std::uint64_t seed, const Logger& log) {
  const ExperimentConfig cfg = demo_config(root, seed);
  DemoSummary out;
  out.root = root;
  synth(cfg, cfg.data_dir(), log);
  for (const char* stage : {"ae", "pd", "attack", "ae-target", "mmd", "quality"}) {
    const auto s = train_stage(cfg, stage, log);
    emit(log, std::string(stage) + " final loss " + format_decimal(s.final_loss) +
                  (s.note.empty() ? "" : " (" + s.note + ")"));
  }
  const fs::path attack_ckpt = files::checkpoint(cfg, "attack");
  const fs::path test0 = scanio::sequence_dir(cfg.data_dir(), cfg.sequence_id(ExperimentConfig::Split::kTest, 0));
  const auto att = attack_sequence(cfg, test0, attack_ckpt, cfg.report_dir() / "attacked", log);
  eval_metrics(cfg, att.sequence_dir, test0, {}, cfg.report_dir() / "metrics_attacked.csv", log);
  eval_metrics(cfg, test0, {}, files::checkpoint(cfg, "ae"), cfg.report_dir() / "metrics_recon.csv", log);
  std::vector<fs::path> tests;
  for (int i = 0; i < cfg.sequence_count(ExperimentConfig::Split::kTest); ++i) {
    tests.push_back(scanio::sequence_dir(cfg.data_dir(), cfg.sequence_id(ExperimentConfig::Split::kTest, i)));
  }
  out.slam = eval_slam(cfg, tests, attack_ckpt, cfg.report_dir() / "slam", log);
  out.table = report({out.slam.report_csv});
  write_text(cfg.report_dir() / "table.txt", out.table);
  return out;
}

}  // namespace slack::pipeline
