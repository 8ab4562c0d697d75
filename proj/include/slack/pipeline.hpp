#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "slack/attack.hpp"
#include "slack/backbone.hpp"
#include "slack/pretext.hpp"
#include "slack/quality.hpp"
#include "slack/scanio.hpp"
#include "slack/slameval.hpp"

namespace slack::pipeline {

struct ConfigKey {
  const char* key;  // section.name
  const char* fallback;
  const char* help;
};

// Every recognised key with its default.
const std::vector<ConfigKey>& config_keys();

// Experiment settings as typed views over `section.key = value` strings.
// Defaults < config file < SLACK_*_DIR environment roots < explicit sets.
class ExperimentConfig {
 public:
  ExperimentConfig();

  // INI text with [section] headers, `key = value` lines and ; or # comments.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& where = "config");
  void apply_environment();
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  bool has(const std::string& key) const;

  // Canonical `key = value` listing, sorted by key.
  std::string dump() const;
  // FNV-1a of the canonical listing without path roots and worker count, as
  // 16 hex digits.
  std::string hash() const;
  std::uint64_t seed() const;
  // "seed=N config_hash=H"
  std::string provenance() const;

  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;

  std::filesystem::path data_dir() const;
  std::filesystem::path checkpoint_dir() const;
  std::filesystem::path report_dir() const;
  int jobs() const;

  scanio::SensorConfig sensor() const;
  enum class Split { kTrain, kTest, kTarget };
  int sequence_count(Split split) const;
  int sequence_id(Split split, int index) const;
  scanio::WorldSpec world(Split split, int index) const;

  backbone::BackboneConfig backbone() const;
  backbone::TrainConfig train_ae() const;
  pretext::PDTrainConfig train_pd() const;
  attack::AdvTrainConfig train_attack() const;
  attack::MMDConfig train_mmd() const;
  quality::LQIConfig lqi() const;
  quality::DSRConfig dsr() const;
  attack::MaskCorruptionSpec corruption() const;
  attack::AttackOptions attack_options() const;
  slameval::ICPConfig icp() const;
  slameval::CompareConfig compare() const;
  int emd_points() const;

  // Throws a validation error if any typed view is invalid.
  void validate() const;

 private:
  std::map<std::string, std::string> values_;
};

using Logger = std::function<void(const std::string&)>;

// Checkpoint and data locations inside the configured roots.
namespace files {
std::filesystem::path checkpoint(const ExperimentConfig& cfg, const std::string& stage);
std::filesystem::path loss_csv(const ExperimentConfig& cfg, const std::string& stage);
}  // namespace files

struct SynthSummary {
  int sequences = 0;
  int frames = 0;
  std::vector<std::filesystem::path> dirs;
};
SynthSummary synth(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, const Logger& log = {});

std::vector<scanio::Sequence> load_split(const ExperimentConfig& cfg, ExperimentConfig::Split split);

// Stages: "ae", "ae-target", "pd", "attack", "mmd", "quality". Each checks
// its prerequisites, writes its checkpoint(s) and a loss CSV, and returns
// the final-epoch loss.
struct StageSummary {
  std::string stage;
  std::vector<std::filesystem::path> outputs;
  double final_loss = 0.0;
  std::string note;
};
StageSummary train_stage(const ExperimentConfig& cfg, const std::string& stage, const Logger& log = {});

struct AttackSummary {
  std::filesystem::path sequence_dir;
  std::filesystem::path pij_csv;
  double mean_pij = 0.0;
  std::size_t injected = 0;
};
// Attacks the static scans of a stored sequence with a backbone checkpoint
// and writes them as a new sequence (dynamic scans untouched) plus a
// per-frame PiJ CSV.
AttackSummary attack_sequence(const ExperimentConfig& cfg, const std::filesystem::path& in_dir,
                              const std::filesystem::path& model, const std::filesystem::path& out_dir,
                              const Logger& log = {});

struct MetricsSummary {
  std::filesystem::path csv;
  double chamfer = 0.0, emd = 0.0, lqi = 0.0, dsr = 0.0;  // means
};
// With `ref_dir`, compares the static scans of `in_dir` to those of
// `ref_dir` frame by frame; with `model`, compares dynamic scans to their
// reconstructions. LQI/DSR use the quality checkpoints when present.
MetricsSummary eval_metrics(const ExperimentConfig& cfg, const std::filesystem::path& in_dir,
                            const std::filesystem::path& ref_dir, const std::filesystem::path& model,
                            const std::filesystem::path& out_csv, const Logger& log = {});

struct SlamSummary {
  std::filesystem::path report_csv;
  std::vector<slameval::AttackReport> reports;
};
// compare_attacks per sequence, or the clean-only evaluation when `model`
// is empty. Writes the report CSV, trajectories and plots into `out_dir`.
SlamSummary eval_slam(const ExperimentConfig& cfg, const std::vector<std::filesystem::path>& seq_dirs,
                      const std::filesystem::path& model, const std::filesystem::path& out_dir,
                      const Logger& log = {});

std::string report(const std::vector<std::filesystem::path>& csvs);

struct DemoSummary {
  std::filesystem::path root;
  std::string table;
  SlamSummary slam;
};
// Minimum-size end-to-end recipe under `root`.
DemoSummary demo(const std::filesystem::path& root, std::uint64_t seed, const Logger& log = {});
ExperimentConfig demo_config(const std::filesystem::path& root, std::uint64_t seed);

}  // namespace slack::pipeline
