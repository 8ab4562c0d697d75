#include "slack/slack.h"

#include <cstring>
#include <new>
#include <string>

#include "slack/pipeline.hpp"

struct slack_config {
  slack::pipeline::ExperimentConfig cfg;
};

struct slack_sequence {
  slack::scanio::Sequence seq;
};

struct slack_trajectory {
  slack::slameval::Trajectory traj;
};

namespace {

using slack::ErrorCode;
namespace pl = slack::pipeline;

thread_local std::string g_last_error;

template <typename F>
slack_status guarded(F&& fn) {
  try {
    fn();
    g_last_error.clear();
    return SLACK_OK;
  } catch (const slack::Error& e) {
    g_last_error = e.what();
    return static_cast<slack_status>(static_cast<int>(e.code()));
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return SLACK_ERR_INTERNAL;
}

void need(const void* p, const char* what) {
  slack::require(p != nullptr, ErrorCode::kValidation, std::string(what) + " must not be NULL");
}

void copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed != nullptr) *needed = s.size();
  if (buf != nullptr && cap > 0) {
    const size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
}

pl::Logger logger(slack_log_fn fn, void* user) {
  if (fn == nullptr) return {};
  return [fn, user](const std::string& msg) { fn(msg.c_str(), user); };
}

std::filesystem::path opt_path(const char* p) { return p == nullptr ? std::filesystem::path() : p; }

slack::scanio::PointCloud cloud(const double* xyz, size_t n) {
  need(xyz, "point array");
  slack::scanio::PointCloud pc;
  pc.points.reserve(n);
  for (size_t i = 0; i < n; ++i) pc.points.emplace_back(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]);
  return pc;
}

}  // namespace

extern "C" {

const char* slack_last_error(void) { return g_last_error.c_str(); }
const char* slack_version(void) { return "0.1.0"; }

size_t slack_config_key_count(void) { return pl::config_keys().size(); }

const char* slack_config_key_name(size_t i) {
  return i < pl::config_keys().size() ? pl::config_keys()[i].key : nullptr;
}

const char* slack_config_key_default(size_t i) {
  return i < pl::config_keys().size() ? pl::config_keys()[i].fallback : nullptr;
}

const char* slack_config_key_help(size_t i) {
  return i < pl::config_keys().size() ? pl::config_keys()[i].help : nullptr;
}

slack_status slack_config_new(slack_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new slack_config();
  });
}

void slack_config_free(slack_config* cfg) { delete cfg; }

slack_status slack_config_load_file(slack_config* cfg, const char* path) {
  return guarded([&] {
    need(cfg, "config");
    need(path, "path");
    cfg->cfg.load_file(path);
  });
}

slack_status slack_config_load_text(slack_config* cfg, const char* text) {
  return guarded([&] {
    need(cfg, "config");
    need(text, "text");
    cfg->cfg.load_text(text);
  });
}

slack_status slack_config_apply_environment(slack_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    cfg->cfg.apply_environment();
  });
}

slack_status slack_config_set(slack_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    cfg->cfg.set(key, value);
  });
}

slack_status slack_config_get(const slack_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    copy_out(cfg->cfg.get(key), buf, cap, needed);
  });
}

slack_status slack_config_dump(const slack_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg, "config");
    copy_out(cfg->cfg.dump(), buf, cap, needed);
  });
}

slack_status slack_config_hash(const slack_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg, "config");
    copy_out(cfg->cfg.hash(), buf, cap, needed);
  });
}

slack_status slack_config_validate(const slack_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    cfg->cfg.validate();
  });
}

slack_status slack_synth(const slack_config* cfg, const char* out_dir, slack_log_fn log, void* user,
                         int* sequences, int* frames) {
  return guarded([&] {
    need(cfg, "config");
    const auto dir = out_dir != nullptr ? std::filesystem::path(out_dir) : cfg->cfg.data_dir();
    const auto s = pl::synth(cfg->cfg, dir, logger(log, user));
    if (sequences != nullptr) *sequences = s.sequences;
    if (frames != nullptr) *frames = s.frames;
  });
}

slack_status slack_train(const slack_config* cfg, const char* stage, slack_log_fn log, void* user,
                         double* final_loss) {
  return guarded([&] {
    need(cfg, "config");
    need(stage, "stage");
    const auto s = pl::train_stage(cfg->cfg, stage, logger(log, user));
    if (final_loss != nullptr) *final_loss = s.final_loss;
  });
}

slack_status slack_attack(const slack_config* cfg, const char* in_dir, const char* model, const char* out_dir,
                          slack_log_fn log, void* user, double* mean_pij) {
  return guarded([&] {
    need(cfg, "config");
    need(in_dir, "input sequence");
    need(model, "model");
    need(out_dir, "output directory");
    const auto s = pl::attack_sequence(cfg->cfg, in_dir, model, out_dir, logger(log, user));
    if (mean_pij != nullptr) *mean_pij = s.mean_pij;
  });
}

slack_status slack_eval_metrics(const slack_config* cfg, const char* in_dir, const char* ref_dir,
                                const char* model, const char* out_csv, slack_log_fn log, void* user) {
  return guarded([&] {
    need(cfg, "config");
    need(in_dir, "input sequence");
    need(out_csv, "output CSV");
    pl::eval_metrics(cfg->cfg, in_dir, opt_path(ref_dir), opt_path(model), out_csv, logger(log, user));
  });
}

slack_status slack_eval_slam(const slack_config* cfg, const char* const* seq_dirs, size_t count,
                             const char* model, const char* out_dir, slack_log_fn log, void* user) {
  return guarded([&] {
    need(cfg, "config");
    need(seq_dirs, "sequence list");
    need(out_dir, "output directory");
    std::vector<std::filesystem::path> dirs;
    for (size_t i = 0; i < count; ++i) {
      need(seq_dirs[i], "sequence directory");
      dirs.emplace_back(seq_dirs[i]);
    }
    pl::eval_slam(cfg->cfg, dirs, opt_path(model), out_dir, logger(log, user));
  });
}

slack_status slack_report(const char* const* csvs, size_t count, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(csvs, "CSV list");
    std::vector<std::filesystem::path> paths;
    for (size_t i = 0; i < count; ++i) {
      need(csvs[i], "CSV path");
      paths.emplace_back(csvs[i]);
    }
    copy_out(pl::report(paths), buf, cap, needed);
  });
}

slack_status slack_demo(const char* root, uint64_t seed, slack_log_fn log, void* user) {
  return guarded([&] {
    need(root, "root");
    pl::demo(root, seed, logger(log, user));
  });
}

slack_status slack_sequence_read(const char* dir, slack_sequence** out) {
  return guarded([&] {
    need(dir, "directory");
    need(out, "out");
    auto* s = new slack_sequence();
    try {
      s->seq = slack::scanio::read_sequence(dir);
    } catch (...) {
      delete s;
      throw;
    }
    *out = s;
  });
}

void slack_sequence_free(slack_sequence* seq) { delete seq; }

int slack_sequence_id(const slack_sequence* seq) { return seq == nullptr ? -1 : seq->seq.id; }

size_t slack_sequence_frames(const slack_sequence* seq) { return seq == nullptr ? 0 : seq->seq.size(); }

slack_status slack_sequence_ground_truth(const slack_sequence* seq, slack_trajectory** out) {
  return guarded([&] {
    need(seq, "sequence");
    need(out, "out");
    *out = new slack_trajectory{slack::slameval::ground_truth(seq->seq)};
  });
}

slack_status slack_trajectory_from_arrays(size_t n, const double* timestamps, const double* xyz,
                                          const double* quat_wxyz, slack_trajectory** out) {
  return guarded([&] {
    need(timestamps, "timestamps");
    need(xyz, "positions");
    need(quat_wxyz, "quaternions");
    need(out, "out");
    slack::slameval::Trajectory t;
    for (size_t i = 0; i < n; ++i) {
      slack::slameval::Pose p;
      p.timestamp = timestamps[i];
      p.translation = Eigen::Vector3d(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]);
      Eigen::Quaterniond q(quat_wxyz[4 * i], quat_wxyz[4 * i + 1], quat_wxyz[4 * i + 2], quat_wxyz[4 * i + 3]);
      slack::require(q.norm() > 1e-12, ErrorCode::kValidation, "zero quaternion at pose " + std::to_string(i));
      p.rotation = q.normalized();
      t.poses.push_back(p);
    }
    t.validate();
    *out = new slack_trajectory{std::move(t)};
  });
}

slack_status slack_trajectory_read(const char* path, slack_trajectory** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new slack_trajectory{slack::slameval::read_trajectory(path)};
  });
}

slack_status slack_trajectory_write(const slack_trajectory* traj, const char* path) {
  return guarded([&] {
    need(traj, "trajectory");
    need(path, "path");
    slack::slameval::write_trajectory(path, traj->traj);
  });
}

void slack_trajectory_free(slack_trajectory* traj) { delete traj; }

size_t slack_trajectory_size(const slack_trajectory* traj) { return traj == nullptr ? 0 : traj->traj.size(); }

slack_status slack_trajectory_pose(const slack_trajectory* traj, size_t i, double* timestamp, double xyz[3],
                                   double quat_wxyz[4]) {
  return guarded([&] {
    need(traj, "trajectory");
    slack::require(i < traj->traj.size(), ErrorCode::kValidation, "pose index out of range");
    const auto& p = traj->traj[i];
    if (timestamp != nullptr) *timestamp = p.timestamp;
    if (xyz != nullptr) {
      for (int k = 0; k < 3; ++k) xyz[k] = p.translation[k];
    }
    if (quat_wxyz != nullptr) {
      quat_wxyz[0] = p.rotation.w();
      quat_wxyz[1] = p.rotation.x();
      quat_wxyz[2] = p.rotation.y();
      quat_wxyz[3] = p.rotation.z();
    }
  });
}

slack_status slack_ate(const slack_trajectory* est, const slack_trajectory* gt, double* out) {
  return guarded([&] {
    need(est, "estimate");
    need(gt, "ground truth");
    need(out, "out");
    *out = slack::slameval::ate(est->traj, gt->traj);
  });
}

slack_status slack_rpe(const slack_trajectory* est, const slack_trajectory* gt, int delta, double* trans,
                       double* rot_deg) {
  return guarded([&] {
    need(est, "estimate");
    need(gt, "ground truth");
    const auto r = slack::slameval::rpe(est->traj, gt->traj, delta);
    if (trans != nullptr) *trans = r.trans;
    if (rot_deg != nullptr) *rot_deg = r.rot_deg;
  });
}

slack_status slack_chamfer(const double* p, size_t n, const double* q, size_t m, double* out) {
  return guarded([&] {
    need(out, "out");
    *out = slack::quality::chamfer(cloud(p, n), cloud(q, m));
  });
}

slack_status slack_emd(const double* p, size_t n, const double* q, size_t m, double* out) {
  return guarded([&] {
    need(out, "out");
    *out = slack::quality::emd(cloud(p, n), cloud(q, m));
  });
}

}  // extern "C"
