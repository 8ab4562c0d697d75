#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slack/checkpoint.hpp"
#include "slack/nn.hpp"
#include "slack/scanio.hpp"

namespace slack::backbone {

struct LatentCode {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const LatentCode& o) const { return values == o.values; }
};

// Encoder: `widths.size()` stride-2 convolution blocks (4x4 kernels, circular
// azimuth padding) flattened into a `latent_dim` code. The decoder mirrors it
// with transposed convolutions; the segmentation encoder runs at half width
// and gates every encoder block when `attention` is on.
struct BackboneConfig {
  scanio::SensorConfig sensor;
  int latent_dim = 128;
  std::vector<int> widths = {8, 16, 32, 32};
  bool attention = true;
  bool dice_decoder = false;

  int stages() const { return static_cast<int>(widths.size()); }
  std::vector<int> seg_widths() const;
  int bottleneck_rows() const { return sensor.beams >> stages(); }
  int bottleneck_cols() const { return sensor.azimuth_bins >> stages(); }
  void validate() const;
  KeyValues to_kv() const;
  static BackboneConfig from_kv(const KeyValues& kv);
};

struct BackboneParams {
  BackboneConfig config;
  nn::ParamSet params;
};

BackboneParams init_backbone(const BackboneConfig& cfg, std::uint64_t seed);
Checkpoint to_checkpoint(const BackboneParams& bp);
BackboneParams backbone_from_checkpoint(const Checkpoint& ckpt);

// --- graph building blocks (shared by the pretext and attack trainers) ----
struct EncodeVars {
  nn::Var code;
  nn::Var seg_last;  // last segmentation feature map (valid when computed)
  bool has_seg = false;
};

EncodeVars encode_graph(nn::Graph& g, const BackboneParams& bp, nn::ParamSet* grads,
                        const scanio::RangeImage& x, const scanio::SegMask& x_seg);
// [1,B,A] ranges in meters, bounded to [0, max_range].
nn::Var decode_graph(nn::Graph& g, const BackboneParams& bp, nn::ParamSet* grads, nn::Var code);
// [1,B,A] per-cell dynamic probabilities (dice variant only).
nn::Var mask_decode_graph(nn::Graph& g, const BackboneParams& bp, nn::ParamSet* grads,
                          nn::Var seg_last);
// Reconstruction MSE of `pred` against the valid cells of `x`.
nn::Var recon_loss_graph(nn::Graph& g, nn::Var pred, const scanio::RangeImage& x);

std::vector<double> ranges_of(const scanio::RangeImage& x);
std::vector<double> mask_values(const scanio::SegMask& m);

// --- inference -------------------------------------------------------------
LatentCode encode(const scanio::RangeImage& x, const scanio::SegMask& x_seg,
                  const BackboneParams& p);
scanio::RangeImage decode(const LatentCode& z, const BackboneParams& p);
scanio::RangeImage reconstruct(const scanio::RangeImage& x, const scanio::SegMask& x_seg,
                               const BackboneParams& p);
// Dice-variant mask probabilities for `x_seg`.
std::vector<double> predict_mask(const scanio::RangeImage& x, const scanio::SegMask& x_seg,
                                 const BackboneParams& p);

// Channel attention: gates = logistic(W * avgpool(seg_features) + b), output =
// features scaled per channel. features [C,H,W], seg_features [C',H',W'],
// proj_w [C,C'], proj_b [C].
std::vector<double> attention_gates(const nn::Tensor& seg_features, const nn::Tensor& proj_w,
                                    const nn::Tensor& proj_b);
nn::Tensor seg_attention(const nn::Tensor& features, const nn::Tensor& seg_features,
                         const nn::Tensor& proj_w, const nn::Tensor& proj_b);

// --- losses ----------------------------------------------------------------
double loss_recon(const scanio::RangeImage& x, const scanio::RangeImage& x_bar);
double loss_dice(const std::vector<double>& mask_pred, const scanio::SegMask& mask_gt,
                 double eps = 1e-6);
double loss_triplet(const LatentCode& a, const LatentCode& p, const LatentCode& n, double margin);
double loss_npair(const LatentCode& a, const LatentCode& p, const std::vector<LatentCode>& negatives);

// --- training ----------------------------------------------------------------
enum class ContrastiveMode { kNone, kTriplet, kNPair };
ContrastiveMode parse_contrastive(const std::string& s);
std::string to_string(ContrastiveMode m);

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  int batch_size = 4;
  ContrastiveMode contrastive = ContrastiveMode::kNPair;
  double contrastive_weight = 0.1;
  double margin = 1.0;
  int negatives = 2;
  int window = 2;
  double dice_weight = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double recon = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

struct TrainResult {
  BackboneParams params;
  std::vector<EpochStats> history;
};

// Anchor = static scan, positive = a static scan within +-window, negatives =
// hard negatives (corresponding dynamic first). Reconstruction covers the
// anchor and its corresponding dynamic scan.
TrainResult train_backbone(const std::vector<scanio::Sequence>& data, const BackboneConfig& arch,
                           const TrainConfig& cfg);
// Continue training from existing parameters.
TrainResult train_backbone(const std::vector<scanio::Sequence>& data, BackboneParams init,
                           const TrainConfig& cfg);

std::string history_csv(const std::vector<EpochStats>& history,
                        const std::vector<std::string>& header = {});

// Throws a divergence error naming the stage when `v` is not finite.
void check_finite(double v, const std::string& stage, int epoch, const std::string& detail);

}  // namespace slack::backbone
