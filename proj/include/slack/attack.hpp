#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slack/backbone.hpp"
#include "slack/pretext.hpp"

namespace slack::attack {

enum class CorruptionMode { kSetDynamic, kClear };
CorruptionMode parse_corruption_mode(const std::string& s);
std::string to_string(CorruptionMode m);

// A seeded fraction of columns is rewritten inside rows [row_start, row_end].
struct MaskCorruptionSpec {
  int row_start = 0;
  int row_end = 0;
  double fraction = 0.0;
  CorruptionMode mode = CorruptionMode::kSetDynamic;
  std::uint64_t seed = 1;

  void validate(int rows) const;
};

// With `scan` given only its valid cells are set, so the mask stays a subset
// of the valid cells.
scanio::SegMask corrupt_mask(const scanio::SegMask& mask, const MaskCorruptionSpec& spec,
                             const scanio::RangeImage* scan = nullptr);

struct PijCount {
  std::size_t k = 0;
  double fraction = 0.0;
  std::vector<std::size_t> cells;  // row-major indices
};

// A cell counts when its validity differs or both are valid and the range
// moved by more than `eps`. The fraction is relative to `orig`'s valid cells.
PijCount count_pij(const scanio::RangeImage& orig, const scanio::RangeImage& attacked,
                   double eps = 0.05);

struct AttackedScan {
  scanio::RangeImage original;
  scanio::RangeImage attacked;
  std::vector<std::size_t> injected_cells;
  double pij_fraction = 0.0;

  // attacked - original on injected cells that are valid in both.
  std::vector<double> injected_deltas() const;
};

AttackedScan make_attacked(const scanio::RangeImage& original, scanio::RangeImage attacked,
                           double eps);

struct AttackOptions {
  // Cells newly marked dynamic by the corrupted mask and pulled closer than
  // the plain reconstruction by more than this many meters receive the same
  // shift in the output.
  double injection_threshold = 0.5;
  double eps = 0.05;

  void validate() const;
};

// Shift = decode(encode(s, corrupted)) - decode(encode(s, s_mask)).
AttackedScan attack_scan(const scanio::RangeImage& s, const scanio::SegMask& s_mask,
                         const MaskCorruptionSpec& spec, const backbone::BackboneParams& bp_attack,
                         const AttackOptions& opt = {});

// --- adversarial objective --------------------------------------------------
struct AdvLossTerms {
  double bce = 0.0;          // BCE(PD(r_dj, r_sj), 1)
  double mse = 0.0;          // MSE(decode(r_sj), d_j) over valid cells of d_j
  double keep = 0.0;         // MSE(decode(encode(s_j, empty)), s_j)
  double literal_mse = 0.0;  // parameter-free MSE(s_j, d_j) over cells valid in both
  double score = 0.0;        // PD(r_dj, r_sj)
  double objective() const { return bce + mse; }
};

struct AdvGraphTerms {
  nn::Var total;
  AdvLossTerms values;
};

// r_sj encodes s_j under `s_mask`; training passes d_j's dynamic mask.
AdvGraphTerms adv_loss_graph(nn::Graph& g, const backbone::BackboneParams& bp,
                             nn::ParamSet* grads, const pretext::PDParams& pp,
                             const scanio::ScanPair& fj, const scanio::SegMask& s_mask,
                             double keep_weight);
AdvLossTerms adv_loss(const scanio::ScanPair& fj, const scanio::SegMask& s_mask,
                      const backbone::BackboneParams& bp, const pretext::PDParams& pp);

struct AdvTrainConfig {
  int epochs = 200;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  int batch_size = 4;
  double keep_weight = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct AdvEpoch {
  int epoch = 0;
  double bce = 0.0;
  double mse = 0.0;
  double keep = 0.0;
  double total = 0.0;
  double score = 0.0;
};

struct AdvTrainResult {
  backbone::BackboneParams backbone;
  std::vector<AdvEpoch> history;
};

// PD stays frozen; only the backbone is updated.
AdvTrainResult train_adversarial(const std::vector<scanio::Sequence>& data,
                                 const backbone::BackboneParams& bp, const pretext::PDParams& pp,
                                 const AdvTrainConfig& cfg);

// Mean PD(r_dj, r_sj) with s_j encoded under d_j's dynamic mask.
double mean_heterogeneous_score(const std::vector<scanio::Sequence>& data,
                                const backbone::BackboneParams& bp, const pretext::PDParams& pp);

std::string history_csv(const std::vector<AdvEpoch>& history,
                        const std::vector<std::string>& header = {});

// --- baselines ----------------------------------------------------------------
// Random removal: each valid cell is dropped with probability `fraction`.
AttackedScan baseline_rr(const scanio::RangeImage& s, double fraction, std::uint64_t seed,
                         double eps = 0.05);
// Random noise: exactly k distinct valid cells shifted by deltas resampled
// from `deltas`, clamped to the sensor limits.
AttackedScan baseline_rn(const scanio::RangeImage& s, std::size_t k,
                         const std::vector<double>& deltas, std::uint64_t seed, double eps = 0.05);
AttackedScan baseline_rn(const scanio::RangeImage& s, std::size_t k,
                         const AttackedScan& magnitude_source, std::uint64_t seed,
                         double eps = 0.05);

// --- MMD domain adaptation ----------------------------------------------------
// Biased multi-bandwidth Gaussian MMD.
double mmd(const std::vector<backbone::LatentCode>& a, const std::vector<backbone::LatentCode>& b,
           const std::vector<double>& bandwidths);
// Multipliers times the median pairwise distance of the pooled codes.
std::vector<double> median_bandwidths(const std::vector<backbone::LatentCode>& codes,
                                      const std::vector<double>& multipliers);

struct MMDConfig {
  std::vector<double> multipliers = {0.5, 1.0, 2.0, 4.0};
  int batch_size = 4;
  double weight = 10.0;
  int epochs = 200;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  int eval_size = 16;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TargetScan {
  scanio::RangeImage scan;
  scanio::SegMask mask;
};

struct MMDEpoch {
  int epoch = 0;
  double bce_source = 0.0;
  double bce_target = 0.0;
  double recon = 0.0;
  double mmd = 0.0;
  double total = 0.0;
};

struct MMDTrainResult {
  backbone::BackboneParams backbone;
  std::vector<double> bandwidths;
  double mmd_before = 0.0;
  double mmd_after = 0.0;
  std::vector<MMDEpoch> history;
};

// bp_src and PD stay frozen; the target backbone is updated.
MMDTrainResult train_mmd_uda(const std::vector<scanio::Sequence>& source,
                             const std::vector<TargetScan>& target,
                             const backbone::BackboneParams& bp_src,
                             const backbone::BackboneParams& bp_tgt, const pretext::PDParams& pp,
                             const MMDConfig& cfg);

std::vector<TargetScan> target_scans(const std::vector<scanio::Sequence>& seqs);

std::string history_csv(const std::vector<MMDEpoch>& history,
                        const std::vector<std::string>& header = {});

}  // namespace slack::attack
