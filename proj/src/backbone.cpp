#include "slack/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "slack/trajectory.hpp"

namespace slack::backbone {

namespace {

constexpr int kKernel = 4;
constexpr int kStride = 2;
constexpr int kPad = 1;
constexpr double kSlope = 0.1;

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::string p(const char* prefix, int i, const char* suffix) {
  return std::string(prefix) + std::to_string(i) + suffix;
}

nn::Var input_tensor(nn::Graph& g, const scanio::RangeImage& x) {
  const int B = x.rows(), A = x.cols();
  nn::Tensor t({2, B, A});
  const double inv = 1.0 / x.config.max_range;
  const std::size_t n = static_cast<std::size_t>(B) * A;
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = x.valid[i] ? x.ranges[i] * inv : 0.0;
    t[n + i] = x.valid[i] ? 1.0 : 0.0;
  }
  return g.constant(std::move(t));
}

nn::Var mask_tensor(nn::Graph& g, const scanio::SegMask& m) {
  nn::Tensor t({1, m.rows, m.cols});
  for (std::size_t i = 0; i < m.labels.size(); ++i) t[i] = m.labels[i] ? 1.0 : 0.0;
  return g.constant(std::move(t));
}

}  // namespace

std::vector<int> BackboneConfig::seg_widths() const {
  std::vector<int> s;
  for (int w : widths) s.push_back(std::max(1, w / 2));
  return s;
}

void BackboneConfig::validate() const {
  sensor.validate();
  require(latent_dim >= 1, ErrorCode::kValidation, "latent dimension must be >= 1");
  require(!widths.empty(), ErrorCode::kValidation, "backbone needs at least one stage");
  for (int w : widths) require(w >= 1, ErrorCode::kValidation, "channel widths must be >= 1");
  const int f = 1 << stages();
  require(sensor.beams % f == 0 && sensor.azimuth_bins % f == 0, ErrorCode::kValidation,
          "range image " + std::to_string(sensor.beams) + "x" +
              std::to_string(sensor.azimuth_bins) + " must be divisible by " + std::to_string(f) +
              " for " + std::to_string(stages()) + " stride-2 stages");
}

KeyValues BackboneConfig::to_kv() const {
  using slameval::format_decimal;
  return {{"beams", std::to_string(sensor.beams)},
          {"azimuth_bins", std::to_string(sensor.azimuth_bins)},
          {"min_elevation", format_decimal(sensor.min_elevation)},
          {"max_elevation", format_decimal(sensor.max_elevation)},
          {"min_range", format_decimal(sensor.min_range)},
          {"max_range", format_decimal(sensor.max_range)},
          {"latent_dim", std::to_string(latent_dim)},
          {"widths", join_ints(widths)},
          {"attention", attention ? "1" : "0"},
          {"dice_decoder", dice_decoder ? "1" : "0"}};
}

BackboneConfig BackboneConfig::from_kv(const KeyValues& kv) {
  BackboneConfig c;
  try {
    c.sensor.beams = std::stoi(kv_get(kv, "beams"));
    c.sensor.azimuth_bins = std::stoi(kv_get(kv, "azimuth_bins"));
    c.sensor.min_elevation = std::stod(kv_get(kv, "min_elevation"));
    c.sensor.max_elevation = std::stod(kv_get(kv, "max_elevation"));
    c.sensor.min_range = std::stod(kv_get(kv, "min_range"));
    c.sensor.max_range = std::stod(kv_get(kv, "max_range"));
    c.latent_dim = std::stoi(kv_get(kv, "latent_dim"));
    c.widths = split_ints(kv_get(kv, "widths"));
    c.attention = kv_get(kv, "attention") == "1";
    c.dice_decoder = kv_get(kv, "dice_decoder") == "1";
  } catch (const std::logic_error& e) {
    fail(ErrorCode::kFormat, std::string("bad backbone config: ") + e.what());
  }
  c.validate();
  return c;
}

BackboneParams init_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  BackboneParams bp;
  bp.config = cfg;
  nn::ParamSet& ps = bp.params;
  const int n = cfg.stages();
  const auto seg = cfg.seg_widths();
  const int k2 = kKernel * kKernel;
  const bool seg_branch = cfg.attention || cfg.dice_decoder;

  int in = 2;
  for (int i = 0; i < n; ++i) {
    const int out = cfg.widths[static_cast<std::size_t>(i)];
    ps.add(p("enc", i, ".w"), nn::init_uniform({out, in, kKernel, kKernel}, in * k2, rng));
    ps.add(p("enc", i, ".b"), nn::Tensor({out}));
    in = out;
  }
  if (seg_branch) {
    int sin = 1;
    for (int i = 0; i < n; ++i) {
      const int out = seg[static_cast<std::size_t>(i)];
      ps.add(p("seg", i, ".w"), nn::init_uniform({out, sin, kKernel, kKernel}, sin * k2, rng));
      ps.add(p("seg", i, ".b"), nn::Tensor({out}));
      sin = out;
    }
  }
  if (cfg.attention) {
    for (int i = 0; i < n; ++i) {
      const int c = cfg.widths[static_cast<std::size_t>(i)];
      const int cs = seg[static_cast<std::size_t>(i)];
      ps.add(p("att", i, ".w"), nn::init_uniform({c, cs}, cs, rng, 0.5));
      // Gates start mostly open.
      ps.add(p("att", i, ".b"), nn::Tensor({c}, 2.0));
    }
  }
  const int flat = cfg.widths.back() * cfg.bottleneck_rows() * cfg.bottleneck_cols();
  ps.add("latent.w", nn::init_uniform({cfg.latent_dim, flat}, flat, rng, 0.5));
  ps.add("latent.b", nn::Tensor({cfg.latent_dim}));
  ps.add("dec.fc.w", nn::init_uniform({flat, cfg.latent_dim}, cfg.latent_dim, rng, 0.5));
  ps.add("dec.fc.b", nn::Tensor({flat}));
  for (int i = n - 1; i >= 0; --i) {
    const int cin = cfg.widths[static_cast<std::size_t>(i)];
    const int cout = i > 0 ? cfg.widths[static_cast<std::size_t>(i - 1)] : 1;
    ps.add(p("dec", i, ".w"), nn::init_uniform({cin, cout, kKernel, kKernel}, cin * k2 / 4, rng));
    ps.add(p("dec", i, ".b"), nn::Tensor({cout}));
  }
  if (cfg.dice_decoder) {
    for (int i = n - 1; i >= 0; --i) {
      const int cin = seg[static_cast<std::size_t>(i)];
      const int cout = i > 0 ? seg[static_cast<std::size_t>(i - 1)] : 1;
      ps.add(p("mask", i, ".w"), nn::init_uniform({cin, cout, kKernel, kKernel}, cin * k2 / 4, rng));
      ps.add(p("mask", i, ".b"), nn::Tensor({cout}));
    }
  }
  return bp;
}

Checkpoint to_checkpoint(const BackboneParams& bp) {
  return Checkpoint{"backbone", bp.config.to_kv(), bp.params};
}

BackboneParams backbone_from_checkpoint(const Checkpoint& ckpt) {
  require(ckpt.kind == "backbone", ErrorCode::kFormat,
          "expected a backbone checkpoint, got '" + ckpt.kind + "'");
  BackboneParams bp;
  bp.config = BackboneConfig::from_kv(ckpt.config);
  bp.params = ckpt.params;
  // Shapes must match a freshly built network.
  const BackboneParams ref = init_backbone(bp.config, 0);
  require(ref.params.count() == bp.params.count(), ErrorCode::kFormat,
          "backbone checkpoint has wrong parameter count");
  for (std::size_t i = 0; i < ref.params.count(); ++i) {
    require(ref.params.name(i) == bp.params.name(i) &&
                ref.params.value(i).shape == bp.params.value(i).shape,
            ErrorCode::kFormat, "backbone checkpoint parameter mismatch at " + ref.params.name(i));
  }
  require(bp.params.all_finite(), ErrorCode::kFormat, "backbone checkpoint has non-finite values");
  return bp;
}

EncodeVars encode_graph(nn::Graph& g, const BackboneParams& bp, nn::ParamSet* grads,
                        const scanio::RangeImage& x, const scanio::SegMask& x_seg) {
  const BackboneConfig& cfg = bp.config;
  require(x.rows() == cfg.sensor.beams && x.cols() == cfg.sensor.azimuth_bins,
          ErrorCode::kShapeMismatch,
          "range image " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
              " does not match backbone " + std::to_string(cfg.sensor.beams) + "x" +
              std::to_string(cfg.sensor.azimuth_bins));
  require(x_seg.rows == x.rows() && x_seg.cols == x.cols(), ErrorCode::kShapeMismatch,
          "segmentation mask shape differs from range image");
  const nn::ParamSet& ps = bp.params;
  const bool seg_branch = cfg.attention || cfg.dice_decoder;
  EncodeVars out;
  nn::Var h = input_tensor(g, x);
  nn::Var s = seg_branch ? mask_tensor(g, x_seg) : nn::Var{};
  for (int i = 0; i < cfg.stages(); ++i) {
    h = nn::leaky_relu(g, nn::conv2d(g, h, g.param(ps, p("enc", i, ".w"), grads),
                                     g.param(ps, p("enc", i, ".b"), grads), kStride, kPad),
                       kSlope);
    if (seg_branch) {
      s = nn::leaky_relu(g, nn::conv2d(g, s, g.param(ps, p("seg", i, ".w"), grads),
                                       g.param(ps, p("seg", i, ".b"), grads), kStride, kPad),
                         kSlope);
    }
    if (cfg.attention) {
      nn::Var gate = nn::sigmoid(g, nn::linear(g, nn::global_avg_pool(g, s),
                                               g.param(ps, p("att", i, ".w"), grads),
                                               g.param(ps, p("att", i, ".b"), grads)));
      h = nn::channel_gate(g, h, gate);
    }
  }
  out.code = nn::linear(g, h, g.param(ps, "latent.w", grads), g.param(ps, "latent.b", grads));
  if (seg_branch) {
    out.seg_last = s;
    out.has_seg = true;
  }
  return out;
}

nn::Var decode_graph(nn::Graph& g, const BackboneParams& bp, nn::ParamSet* grads, nn::Var code) {
  const BackboneConfig& cfg = bp.config;
  require(g.value(code).size() == static_cast<std::size_t>(cfg.latent_dim),
          ErrorCode::kShapeMismatch,
          "latent code length " + std::to_string(g.value(code).size()) + " != " +
              std::to_string(cfg.latent_dim));
  const nn::ParamSet& ps = bp.params;
  nn::Var h = nn::leaky_relu(
      g, nn::linear(g, code, g.param(ps, "dec.fc.w", grads), g.param(ps, "dec.fc.b", grads)),
      kSlope);
  h = nn::reshape(g, h, {cfg.widths.back(), cfg.bottleneck_rows(), cfg.bottleneck_cols()});
  for (int i = cfg.stages() - 1; i >= 0; --i) {
    h = nn::conv_transpose2d(g, h, g.param(ps, p("dec", i, ".w"), grads),
                             g.param(ps, p("dec", i, ".b"), grads), kStride, kPad);
    if (i > 0) h = nn::leaky_relu(g, h, kSlope);
  }
  return nn::scale(g, nn::sigmoid(g, h), cfg.sensor.max_range);
}

nn::Var mask_decode_graph(nn::Graph& g, const BackboneParams& bp, nn::ParamSet* grads,
                          nn::Var seg_last) {
  const BackboneConfig& cfg = bp.config;
  require(cfg.dice_decoder, ErrorCode::kValidation, "backbone has no mask decoder");
  const nn::ParamSet& ps = bp.params;
  nn::Var h = seg_last;
  for (int i = cfg.stages() - 1; i >= 0; --i) {
    h = nn::conv_transpose2d(g, h, g.param(ps, p("mask", i, ".w"), grads),
                             g.param(ps, p("mask", i, ".b"), grads), kStride, kPad);
    if (i > 0) h = nn::leaky_relu(g, h, kSlope);
  }
  return nn::sigmoid(g, h);
}

std::vector<double> ranges_of(const scanio::RangeImage& x) {
  return std::vector<double>(x.ranges.begin(), x.ranges.end());
}

std::vector<double> mask_values(const scanio::SegMask& m) {
  return std::vector<double>(m.labels.begin(), m.labels.end());
}

nn::Var recon_loss_graph(nn::Graph& g, nn::Var pred, const scanio::RangeImage& x) {
  return nn::masked_mse(g, pred, ranges_of(x), x.valid);
}

LatentCode encode(const scanio::RangeImage& x, const scanio::SegMask& x_seg,
                  const BackboneParams& p) {
  nn::Graph g(false);
  const EncodeVars e = encode_graph(g, p, nullptr, x, x_seg);
  return LatentCode{g.value(e.code).data};
}

namespace {

scanio::RangeImage to_range_image(const nn::Tensor& t, const scanio::SensorConfig& cfg) {
  scanio::RangeImage ri(cfg);
  for (std::size_t i = 0; i < ri.ranges.size(); ++i) {
    const float r = static_cast<float>(std::clamp(t[i], 0.0, cfg.max_range));
    if (r >= cfg.min_range && r <= cfg.max_range) {
      ri.ranges[i] = r;
      ri.valid[i] = 1;
    }
  }
  return ri;
}

}  // namespace

scanio::RangeImage decode(const LatentCode& z, const BackboneParams& p) {
  nn::Graph g(false);
  nn::Var code = g.constant(nn::Tensor({static_cast<int>(z.size())}, z.values));
  return to_range_image(g.value(decode_graph(g, p, nullptr, code)), p.config.sensor);
}

scanio::RangeImage reconstruct(const scanio::RangeImage& x, const scanio::SegMask& x_seg,
                               const BackboneParams& p) {
  return decode(encode(x, x_seg, p), p);
}

std::vector<double> predict_mask(const scanio::RangeImage& x, const scanio::SegMask& x_seg,
                                 const BackboneParams& p) {
  nn::Graph g(false);
  const EncodeVars e = encode_graph(g, p, nullptr, x, x_seg);
  require(e.has_seg, ErrorCode::kValidation, "backbone has no segmentation branch");
  return g.value(mask_decode_graph(g, p, nullptr, e.seg_last)).data;
}

std::vector<double> attention_gates(const nn::Tensor& seg_features, const nn::Tensor& proj_w,
                                    const nn::Tensor& proj_b) {
  nn::Graph g(false);
  nn::Var s = g.constant(seg_features);
  require(proj_w.shape.size() == 2 && proj_w.dim(1) == seg_features.dim(0),
          ErrorCode::kShapeMismatch, "attention projection does not match seg channels");
  nn::Var gate = nn::sigmoid(
      g, nn::linear(g, nn::global_avg_pool(g, s), g.constant(proj_w), g.constant(proj_b)));
  return g.value(gate).data;
}

nn::Tensor seg_attention(const nn::Tensor& features, const nn::Tensor& seg_features,
                         const nn::Tensor& proj_w, const nn::Tensor& proj_b) {
  require(features.shape.size() == 3 && seg_features.shape.size() == 3, ErrorCode::kShapeMismatch,
          "seg_attention expects [C,H,W] feature maps");
  require(proj_w.shape.size() == 2 && proj_w.dim(0) == features.dim(0), ErrorCode::kShapeMismatch,
          "attention projection emits " + std::to_string(proj_w.dim(0)) + " gates for " +
              std::to_string(features.dim(0)) + " channels");
  const auto gates = attention_gates(seg_features, proj_w, proj_b);
  nn::Tensor out = features;
  const std::size_t plane = static_cast<std::size_t>(features.dim(1)) * features.dim(2);
  for (int c = 0; c < features.dim(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] *= gates[static_cast<std::size_t>(c)];
  }
  return out;
}

double loss_recon(const scanio::RangeImage& x, const scanio::RangeImage& x_bar) {
  require(x.ranges.size() == x_bar.ranges.size(), ErrorCode::kShapeMismatch,
          "reconstruction shape mismatch");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.ranges.size(); ++i) {
    if (!x.valid[i]) continue;
    const double d = static_cast<double>(x_bar.ranges[i]) - x.ranges[i];
    s += d * d;
    ++n;
  }
  require(n > 0, ErrorCode::kValidation, "reconstruction loss over zero valid cells");
  return s / static_cast<double>(n);
}

double loss_dice(const std::vector<double>& mask_pred, const scanio::SegMask& mask_gt, double eps) {
  require(mask_pred.size() == mask_gt.labels.size(), ErrorCode::kShapeMismatch,
          "dice prediction shape mismatch");
  double sp = 0, sg = 0, inter = 0;
  for (std::size_t i = 0; i < mask_pred.size(); ++i) {
    const double pr = mask_pred[i];
    require(pr >= 0.0 && pr <= 1.0, ErrorCode::kValidation, "dice prediction outside [0,1]");
    const double gt = mask_gt.labels[i] ? 1.0 : 0.0;
    sp += pr;
    sg += gt;
    inter += pr * gt;
  }
  return 1.0 - (2.0 * inter + eps) / (sp + sg + eps);
}

double loss_triplet(const LatentCode& a, const LatentCode& p, const LatentCode& n, double margin) {
  require(a.size() == p.size() && a.size() == n.size(), ErrorCode::kShapeMismatch,
          "triplet codes differ in length");
  double dp = 0, dn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dp += (a.values[i] - p.values[i]) * (a.values[i] - p.values[i]);
    dn += (a.values[i] - n.values[i]) * (a.values[i] - n.values[i]);
  }
  return std::max(0.0, dp - dn + margin);
}

double loss_npair(const LatentCode& a, const LatentCode& p, const std::vector<LatentCode>& negatives) {
  require(!negatives.empty(), ErrorCode::kValidation, "n-pair loss needs at least one negative");
  nn::Graph g(false);
  const auto var = [&g](const LatentCode& z) {
    return g.constant(nn::Tensor({static_cast<int>(z.size())}, z.values));
  };
  std::vector<nn::Var> ns;
  for (const auto& n : negatives) ns.push_back(var(n));
  return g.scalar(nn::npair_loss(g, var(a), var(p), ns));
}

ContrastiveMode parse_contrastive(const std::string& s) {
  if (s == "none") return ContrastiveMode::kNone;
  if (s == "triplet") return ContrastiveMode::kTriplet;
  if (s == "npair") return ContrastiveMode::kNPair;
  fail(ErrorCode::kValidation, "unknown contrastive mode '" + s + "' (none|triplet|npair)");
}

std::string to_string(ContrastiveMode m) {
  switch (m) {
    case ContrastiveMode::kNone: return "none";
    case ContrastiveMode::kTriplet: return "triplet";
    case ContrastiveMode::kNPair: return "npair";
  }
  return "none";
}

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::kValidation, "epochs must be >= 1");
  require(learning_rate > 0 && weight_decay >= 0, ErrorCode::kValidation,
          "learning rate must be > 0 and weight decay >= 0");
  require(batch_size >= 1, ErrorCode::kValidation, "batch size must be >= 1");
  require(contrastive_weight >= 0, ErrorCode::kValidation, "contrastive weight must be >= 0");
  require(margin >= 0, ErrorCode::kValidation, "margin must be >= 0");
  require(negatives >= 1 && window >= 1, ErrorCode::kValidation,
          "negatives and window must be >= 1");
}

void check_finite(double v, const std::string& stage, int epoch, const std::string& detail) {
  if (!std::isfinite(v)) {
    fail(ErrorCode::kDivergence, stage + " diverged at epoch " + std::to_string(epoch) +
                                     ": non-finite loss (" + detail + ")");
  }
}

TrainResult train_backbone(const std::vector<scanio::Sequence>& data, const BackboneConfig& arch,
                           const TrainConfig& cfg) {
  return train_backbone(data, init_backbone(arch, cfg.seed), cfg);
}

TrainResult train_backbone(const std::vector<scanio::Sequence>& data, BackboneParams init,
                           const TrainConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::size_t, std::size_t>> samples;
  for (std::size_t s = 0; s < data.size(); ++s) {
    for (std::size_t f = 0; f < data[s].size(); ++f) samples.emplace_back(s, f);
  }
  require(!samples.empty(), ErrorCode::kValidation, "training set is empty");

  TrainResult result;
  result.params = std::move(init);
  BackboneParams& bp = result.params;
  nn::ParamSet grads = bp.params.zeros_like();
  nn::Adam opt(bp.params, {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  Rng rng(cfg.seed ^ 0xBAC4B0E5ull);
  const bool contrastive =
      cfg.contrastive != ContrastiveMode::kNone && cfg.contrastive_weight > 0.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(samples);
    EpochStats st;
    st.epoch = epoch;
    int in_batch = 0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const auto [si, fi] = samples[k];
      const auto& seq = data[si].frames;
      const scanio::ScanPair& f = seq[fi];
      nn::Graph g;
      const EncodeVars a = encode_graph(g, bp, &grads, f.static_scan, f.static_mask);
      const EncodeVars d = encode_graph(g, bp, &grads, f.dynamic, f.dynamic_mask);
      nn::Var rec_a = recon_loss_graph(g, decode_graph(g, bp, &grads, a.code), f.static_scan);
      nn::Var rec_d = recon_loss_graph(g, decode_graph(g, bp, &grads, d.code), f.dynamic);
      std::vector<nn::Var> terms{rec_a, rec_d};
      std::vector<double> weights{0.5, 0.5};
      double recon_value = 0.5 * (g.scalar(rec_a) + g.scalar(rec_d));
      if (bp.config.dice_decoder) {
        nn::Var prob = mask_decode_graph(g, bp, &grads, d.seg_last);
        terms.push_back(nn::dice_loss(g, prob, mask_values(f.dynamic_mask)));
        weights.push_back(cfg.dice_weight);
      }
      double contrast_value = 0.0;
      if (contrastive && seq.size() > 1) {
        // Positive: another static scan within the window.
        std::vector<std::size_t> near;
        const std::size_t w = static_cast<std::size_t>(cfg.window);
        for (std::size_t j = fi >= w ? fi - w : 0; j <= std::min(seq.size() - 1, fi + w); ++j) {
          if (j != fi) near.push_back(j);
        }
        const std::size_t pj = near[rng.index(near.size())];
        nn::Var zp = encode_graph(g, bp, &grads, seq[pj].static_scan, seq[pj].static_mask).code;
        const auto neg_idx = scanio::hard_negative_indices(seq.size(), fi,
                                                           static_cast<std::size_t>(cfg.negatives), w);
        std::vector<nn::Var> negs{d.code};
        for (std::size_t t = 1; t < neg_idx.size(); ++t) {
          negs.push_back(
              encode_graph(g, bp, &grads, seq[neg_idx[t]].dynamic, seq[neg_idx[t]].dynamic_mask).code);
        }
        nn::Var c;
        if (cfg.contrastive == ContrastiveMode::kTriplet) {
          std::vector<nn::Var> ts;
          for (nn::Var n : negs) ts.push_back(nn::triplet_loss(g, a.code, zp, n, cfg.margin));
          c = nn::weighted_sum(g, ts, std::vector<double>(ts.size(), 1.0 / ts.size()));
        } else {
          c = nn::npair_loss(g, a.code, zp, negs);
        }
        contrast_value = g.scalar(c);
        terms.push_back(c);
        weights.push_back(cfg.contrastive_weight);
      }
      nn::Var total = nn::weighted_sum(g, terms, weights);
      check_finite(g.scalar(total), "train-ae", epoch,
                   "recon=" + std::to_string(recon_value) +
                       " contrastive=" + std::to_string(contrast_value));
      g.backward(total);
      st.recon += recon_value;
      st.contrastive += contrast_value;
      st.total += g.scalar(total);
      if (++in_batch == cfg.batch_size || k + 1 == samples.size()) {
        opt.step(bp.params, grads, 1.0 / in_batch);
        grads.set_zero();
        in_batch = 0;
      }
    }
    const double n = static_cast<double>(samples.size());
    st.recon /= n;
    st.contrastive /= n;
    st.total /= n;
    result.history.push_back(st);
  }
  require(bp.params.all_finite(), ErrorCode::kDivergence, "train-ae produced non-finite parameters");
  return result;
}

std::string history_csv(const std::vector<EpochStats>& history,
                        const std::vector<std::string>& header) {
  std::string out;
  for (const auto& h : header) out += "# " + h + "\n";
  out += "epoch,recon,contrastive,total\n";
  char buf[256];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", e.epoch, e.recon, e.contrastive, e.total);
    out += buf;
  }
  return out;
}

}  // namespace slack::backbone
