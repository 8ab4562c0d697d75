#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slack/backbone.hpp"

namespace slack::pretext {

// Pairwise head: concat(z_a, z_b) -> 2D -> D -> 1. The vanilla variant is a
// plain real/fake discriminator that only sees z_b.
struct PDConfig {
  int latent_dim = 128;
  bool vanilla = false;

  void validate() const;
  KeyValues to_kv() const;
  static PDConfig from_kv(const KeyValues& kv);
};

struct PDParams {
  PDConfig config;
  nn::ParamSet params;
};

PDParams init_pd(const PDConfig& cfg, std::uint64_t seed);
Checkpoint to_checkpoint(const PDParams& pp);
PDParams pd_from_checkpoint(const Checkpoint& ckpt);

struct PDSample {
  backbone::LatentCode a;
  backbone::LatentCode b;
  int label = 0;
};
using PDBatch = std::vector<PDSample>;

nn::Var pd_score_graph(nn::Graph& g, const PDParams& pp, nn::ParamSet* grads, nn::Var za,
                       nn::Var zb);
double pd_score(const backbone::LatentCode& za, const backbone::LatentCode& zb, const PDParams& pp);

// The five terms of the PD objective, in order: three reconstructions, then
// the homogeneous (label 1) and heterogeneous (label 0) cross entropies.
struct PDLossTerms {
  double recon_di = 0, recon_dj = 0, recon_sj = 0;
  double bce_homogeneous = 0, bce_heterogeneous = 0;
  double total() const {
    return recon_di + recon_dj + recon_sj + bce_homogeneous + bce_heterogeneous;
  }
};

struct PDGraphTerms {
  nn::Var total;
  PDLossTerms values;
  nn::Var score_homogeneous, score_heterogeneous;
};

// `fi` supplies d_i; `fj` supplies the corresponding pair (d_j, s_j).
PDGraphTerms pd_loss_graph(nn::Graph& g, const backbone::BackboneParams& bp,
                           nn::ParamSet* bp_grads, const PDParams& pp, nn::ParamSet* pp_grads,
                           const scanio::ScanPair& fi, const scanio::ScanPair& fj);
PDLossTerms pd_loss(const scanio::ScanPair& fi, const scanio::ScanPair& fj,
                    const backbone::BackboneParams& bp, const PDParams& pp);

struct PDTrainConfig {
  int epochs = 20;
  double learning_rate = 6e-4;
  double weight_decay = 1e-5;
  int batch_size = 4;
  bool update_backbone = true;
  bool vanilla = false;
  std::uint64_t seed = 1;

  void validate() const;
};

struct PDEpoch {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct PDTrainResult {
  PDParams pd;
  backbone::BackboneParams backbone;
  std::vector<PDEpoch> history;
};

// One triple per frame and epoch: d_j, s_j from the frame, d_i drawn
// uniformly from the other frames of the same sequence.
PDTrainResult train_pd(const std::vector<scanio::Sequence>& data,
                       const backbone::BackboneParams& bp, const PDTrainConfig& cfg);

struct PDEvaluation {
  double accuracy = 0.0;
  double mean_homogeneous = 0.0;
  double mean_heterogeneous = 0.0;
  std::size_t pairs = 0;
};

// Scores every frame's homogeneous and heterogeneous pair; `swap_labels`
// scores against flipped labels.
PDEvaluation evaluate_pd(const std::vector<scanio::Sequence>& data,
                         const backbone::BackboneParams& bp, const PDParams& pp,
                         std::uint64_t seed, bool swap_labels = false);

std::string history_csv(const std::vector<PDEpoch>& history,
                        const std::vector<std::string>& header = {});

}  // namespace slack::pretext
