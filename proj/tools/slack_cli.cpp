#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "slack/slack.h"

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> sets;
  long long seed = -1;
  int jobs = 0;
  bool quiet = false;
};

void print_log(const char* msg, void* user) {
  if (!*static_cast<bool*>(user)) std::fprintf(stderr, "%s\n", msg);
}

int report_failure(slack_status st) {
  std::fprintf(stderr, "error: %s\n", slack_last_error());
  return static_cast<int>(st);
}

std::string key_listing() {
  std::string out = "Config keys (section.key = default):\n";
  for (size_t i = 0; i < slack_config_key_count(); ++i) {
    out += "  " + std::string(slack_config_key_name(i)) + " = " + slack_config_key_default(i);
    const std::string help = slack_config_key_help(i);
    if (!help.empty()) out += "  (" + help + ")";
    out += "\n";
  }
  return out;
}

std::string config_string(const slack_config* cfg, const char* key) {
  size_t n = 0;
  slack_config_get(cfg, key, nullptr, 0, &n);
  std::string s(n + 1, '\0');
  slack_config_get(cfg, key, s.data(), s.size(), nullptr);
  s.resize(n);
  return s;
}

class Session {
 public:
  ~Session() { slack_config_free(cfg_); }

  // Defaults, then the config file, then path roots from the environment,
  // then the command-specific file and every flag.
  slack_status open(const Globals& g, const std::vector<std::pair<std::string, std::string>>& flags,
                    const std::string& extra_file = {}) {
    slack_status st = slack_config_new(&cfg_);
    if (st != SLACK_OK) return st;
    if (!g.config.empty() && (st = slack_config_load_file(cfg_, g.config.c_str())) != SLACK_OK) return st;
    if ((st = slack_config_apply_environment(cfg_)) != SLACK_OK) return st;
    if (!extra_file.empty() && (st = slack_config_load_file(cfg_, extra_file.c_str())) != SLACK_OK) return st;
    for (const auto& kv : g.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
        return SLACK_ERR_VALIDATION;
      }
      if ((st = slack_config_set(cfg_, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str())) != SLACK_OK) return st;
    }
    if (g.seed >= 0 && (st = slack_config_set(cfg_, "run.seed", std::to_string(g.seed).c_str())) != SLACK_OK) {
      return st;
    }
    if (g.jobs > 0 && (st = slack_config_set(cfg_, "run.jobs", std::to_string(g.jobs).c_str())) != SLACK_OK) {
      return st;
    }
    for (const auto& [k, v] : flags) {
      if ((st = slack_config_set(cfg_, k.c_str(), v.c_str())) != SLACK_OK) return st;
    }
    return slack_config_validate(cfg_);
  }

  const slack_config* cfg() const { return cfg_; }

 private:
  slack_config* cfg_ = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial LiDAR point injection: data synthesis, training, attack and evaluation"};
  app.footer(key_listing() +
             "\nEnvironment: SLACK_DATA_DIR, SLACK_CHECKPOINT_DIR, SLACK_REPORT_DIR override the path roots.\n"
             "Exit codes: 0 ok, 2 validation, 3 missing stage, 4 divergence, 5 budget parity, 6-10 I/O and "
             "format errors.");
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.sets, "Override a config key, e.g. --set train_ae.epochs=10 (repeatable)");
  app.add_option("--seed", g.seed, "Global seed (run.seed)")->check(CLI::NonNegativeNumber);
  app.add_option("--jobs", g.jobs, "Worker cap (run.jobs)")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress messages");

  std::vector<std::pair<std::string, std::string>> flags;
  auto flag_to = [&flags](CLI::Option* opt, const std::string& key) {
    opt->each([&flags, key](const std::string& v) { flags.emplace_back(key, v); });
    return opt;
  };

  std::string spec, out, in, model, ref, root = "demo";
  std::vector<std::string> inputs;
  int frames_flag = 0;
  std::string contrastive, domain = "source";

  auto* synth = app.add_subcommand("synth", "Generate the synthetic train, test and target sequences");
  synth->add_option("--spec", spec, "World spec file ([world] and [sensor] keys)")->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory (default paths.data_dir)");
  flag_to(synth->add_option("--frames", frames_flag, "Frames per sequence (world.frames)"), "world.frames");

  auto* train_ae = app.add_subcommand("train-ae", "Train the range-image autoencoder");
  flag_to(train_ae->add_option("--contrastive", contrastive, "none, triplet or npair")
              ->check(CLI::IsMember({"none", "triplet", "npair"})),
          "train_ae.contrastive");
  train_ae->add_option("--domain", domain, "source or target")->check(CLI::IsMember({"source", "target"}));
  flag_to(train_ae->add_option("--epochs", frames_flag, "train_ae.epochs"), "train_ae.epochs");

  auto* train_pd = app.add_subcommand("train-pd", "Train the pretext discriminator (needs train-ae)");
  flag_to(train_pd->add_option("--epochs", frames_flag, "train_pd.epochs"), "train_pd.epochs");
  auto* train_attack = app.add_subcommand("train-attack", "Adversarial backbone training (needs train-pd)");
  flag_to(train_attack->add_option("--epochs", frames_flag, "train_attack.epochs"), "train_attack.epochs");
  auto* train_mmd =
      app.add_subcommand("train-mmd", "Domain adaptation (needs train-attack and train-ae --domain target)");
  flag_to(train_mmd->add_option("--epochs", frames_flag, "train_mmd.epochs"), "train_mmd.epochs");
  auto* train_quality = app.add_subcommand("train-quality", "Train the LQI regressor and DSR classifier");

  auto* attack = app.add_subcommand("attack", "Inject points into the static scans of a sequence");
  attack->add_option("--in", in, "Input sequence directory")->required();
  attack->add_option("--model", model, "Backbone checkpoint (default: the train-attack checkpoint)");
  attack->add_option("--spec", spec, "Mask corruption spec file ([attack] keys)")->check(CLI::ExistingFile);
  attack->add_option("--out", out, "Output directory")->required();

  auto* eval_metrics = app.add_subcommand("eval-metrics", "Per-frame Chamfer, EMD, LQI and DSR");
  eval_metrics->add_option("--in", in, "Sequence directory")->required();
  eval_metrics->add_option("--ref", ref, "Reference sequence for static-scan comparison");
  eval_metrics->add_option("--model", model, "Backbone checkpoint for reconstruction comparison");
  eval_metrics->add_option("--out", out, "Output CSV")->required();

  auto* eval_slam = app.add_subcommand("eval-slam", "ICP odometry under none/RR/RN/SLACK attacks");
  eval_slam->add_option("--in", inputs, "Sequence directories")->required();
  eval_slam->add_option("--model", model, "Attack backbone; omit for the clean-only evaluation");
  eval_slam->add_option("--spec", spec, "Mask corruption spec file ([attack] keys)")->check(CLI::ExistingFile);
  eval_slam->add_option("--out", out, "Output directory (default paths.report_dir/slam)");

  auto* report = app.add_subcommand("report", "Render report CSVs as a table");
  report->add_option("csvs", inputs, "Report CSV files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", out, "Also write the table to this file");

  auto* demo = app.add_subcommand("demo", "Minimum-size end-to-end recipe");
  demo->add_option("--root", root, "Working directory for the demo outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : SLACK_ERR_VALIDATION;
  }

  bool quiet = g.quiet;
  Session s;
  slack_status st = SLACK_OK;
  auto cmd = app.get_subcommands().front();

  if (cmd == report) {
    std::vector<const char*> ptrs;
    for (const auto& p : inputs) ptrs.push_back(p.c_str());
    size_t n = 0;
    if ((st = slack_report(ptrs.data(), ptrs.size(), nullptr, 0, &n)) != SLACK_OK) return report_failure(st);
    std::string table(n + 1, '\0');
    slack_report(ptrs.data(), ptrs.size(), table.data(), table.size(), nullptr);
    table.resize(n);
    std::fputs(table.c_str(), stdout);
    if (!out.empty()) {
      std::ofstream f(out, std::ios::binary);
      f << table;
      if (!f) {
        std::fprintf(stderr, "error: cannot write %s\n", out.c_str());
        return SLACK_ERR_IO;
      }
    }
    return 0;
  }

  if (cmd == demo) {
    const std::uint64_t seed = g.seed >= 0 ? static_cast<std::uint64_t>(g.seed) : 1;
    if ((st = slack_demo(root.c_str(), seed, print_log, &quiet)) != SLACK_OK) return report_failure(st);
    std::printf("demo outputs in %s\n", root.c_str());
    return 0;
  }

  const bool spec_is_extra = cmd == synth || cmd == attack || cmd == eval_slam;
  if ((st = s.open(g, flags, spec_is_extra ? spec : std::string())) != SLACK_OK) return report_failure(st);

  if (cmd == synth) {
    int seqs = 0, nframes = 0;
    st = slack_synth(s.cfg(), out.empty() ? nullptr : out.c_str(), print_log, &quiet, &seqs, &nframes);
    if (st != SLACK_OK) return report_failure(st);
    std::printf("%d sequences, %d frames\n", seqs, nframes);
  } else if (cmd == train_ae || cmd == train_pd || cmd == train_attack || cmd == train_mmd || cmd == train_quality) {
    std::string stage = cmd == train_ae ? (domain == "target" ? "ae-target" : "ae")
                        : cmd == train_pd ? "pd"
                        : cmd == train_attack ? "attack"
                        : cmd == train_mmd ? "mmd"
                                           : "quality";
    double loss = 0.0;
    if ((st = slack_train(s.cfg(), stage.c_str(), print_log, &quiet, &loss)) != SLACK_OK) return report_failure(st);
    std::printf("%s final loss %.6g\n", stage.c_str(), loss);
  } else if (cmd == attack) {
    if (model.empty()) model = config_string(s.cfg(), "paths.checkpoint_dir") + "/attack.ckpt";
    double pij = 0.0;
    st = slack_attack(s.cfg(), in.c_str(), model.c_str(), out.c_str(), print_log, &quiet, &pij);
    if (st != SLACK_OK) return report_failure(st);
    std::printf("mean pij %.6g\n", pij);
  } else if (cmd == eval_metrics) {
    st = slack_eval_metrics(s.cfg(), in.c_str(), ref.empty() ? nullptr : ref.c_str(),
                            model.empty() ? nullptr : model.c_str(), out.c_str(), print_log, &quiet);
    if (st != SLACK_OK) return report_failure(st);
  } else if (cmd == eval_slam) {
    if (out.empty()) out = config_string(s.cfg(), "paths.report_dir") + "/slam";
    std::vector<const char*> ptrs;
    for (const auto& p : inputs) ptrs.push_back(p.c_str());
    st = slack_eval_slam(s.cfg(), ptrs.data(), ptrs.size(), model.empty() ? nullptr : model.c_str(), out.c_str(),
                         print_log, &quiet);
    if (st != SLACK_OK) return report_failure(st);
    std::printf("report written to %s/slam_report.csv\n", out.c_str());
  }
  return 0;
}
