#include "slack/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace slack::attack {

namespace {

using backbone::BackboneParams;
using backbone::LatentCode;
using scanio::RangeImage;
using scanio::SegMask;

nn::Var code_var(nn::Graph& g, const LatentCode& z) {
  return g.constant(nn::Tensor({static_cast<int>(z.size())}, z.values));
}

void require_same_grid(const RangeImage& a, const RangeImage& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kShapeMismatch,
          std::string(what) + ": scans differ in shape");
}

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

CorruptionMode parse_corruption_mode(const std::string& s) {
  if (s == "set-dynamic") return CorruptionMode::kSetDynamic;
  if (s == "clear") return CorruptionMode::kClear;
  fail(ErrorCode::kValidation, "unknown corruption mode '" + s + "' (set-dynamic|clear)");
}

std::string to_string(CorruptionMode m) {
  return m == CorruptionMode::kClear ? "clear" : "set-dynamic";
}

void MaskCorruptionSpec::validate(int rows) const {
  require(row_start >= 0 && row_start <= row_end && row_end < rows, ErrorCode::kValidation,
          "corruption band rows [" + std::to_string(row_start) + "," + std::to_string(row_end) +
              "] outside 0.." + std::to_string(rows - 1));
  require(fraction >= 0.0 && fraction <= 1.0, ErrorCode::kValidation,
          "corruption fraction must lie in [0,1]");
}

SegMask corrupt_mask(const SegMask& mask, const MaskCorruptionSpec& spec, const RangeImage* scan) {
  spec.validate(mask.rows);
  if (scan) {
    require(scan->rows() == mask.rows && scan->cols() == mask.cols, ErrorCode::kShapeMismatch,
            "corrupt_mask: scan and mask differ in shape");
  }
  SegMask out = mask;
  Rng rng(spec.seed);
  const std::uint8_t label = spec.mode == CorruptionMode::kSetDynamic ? 1 : 0;
  for (int c = 0; c < mask.cols; ++c) {
    if (!rng.bernoulli(spec.fraction)) continue;
    for (int r = spec.row_start; r <= spec.row_end; ++r) {
      const std::size_t i = static_cast<std::size_t>(r) * mask.cols + c;
      if (label && scan && !scan->valid[i]) continue;
      out.labels[i] = label;
    }
  }
  return out;
}

PijCount count_pij(const RangeImage& orig, const RangeImage& attacked, double eps) {
  require_same_grid(orig, attacked, "count_pij");
  PijCount out;
  for (std::size_t i = 0; i < orig.ranges.size(); ++i) {
    const bool a = orig.valid[i], b = attacked.valid[i];
    if (a != b || (a && std::abs(static_cast<double>(attacked.ranges[i]) - orig.ranges[i]) > eps)) {
      out.cells.push_back(i);
    }
  }
  out.k = out.cells.size();
  const std::size_t valid = orig.valid_count();
  if (valid > 0) {
    out.fraction = static_cast<double>(out.k) / static_cast<double>(valid);
  } else {
    out.fraction = out.k > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  return out;
}

std::vector<double> AttackedScan::injected_deltas() const {
  std::vector<double> d;
  for (std::size_t i : injected_cells) {
    if (original.valid[i] && attacked.valid[i]) {
      d.push_back(static_cast<double>(attacked.ranges[i]) - original.ranges[i]);
    }
  }
  return d;
}

AttackedScan make_attacked(const RangeImage& original, RangeImage attacked, double eps) {
  AttackedScan out;
  const PijCount k = count_pij(original, attacked, eps);
  out.original = original;
  out.attacked = std::move(attacked);
  out.injected_cells = k.cells;
  out.pij_fraction = k.fraction;
  return out;
}

void AttackOptions::validate() const {
  require(injection_threshold >= 0 && eps >= 0, ErrorCode::kValidation,
          "injection threshold and eps must be >= 0");
}

AttackedScan attack_scan(const RangeImage& s, const SegMask& s_mask, const MaskCorruptionSpec& spec,
                         const BackboneParams& bp_attack, const AttackOptions& opt) {
  opt.validate();
  require(s.config.same_grid(bp_attack.config.sensor), ErrorCode::kShapeMismatch,
          "scan sensor grid does not match the attack model");
  const SegMask corrupted = corrupt_mask(s_mask, spec, &s);
  nn::Graph g(false);
  using backbone::decode_graph;
  using backbone::encode_graph;
  const nn::Var ref = decode_graph(g, bp_attack, nullptr, encode_graph(g, bp_attack, nullptr, s, s_mask).code);
  const nn::Var prop =
      decode_graph(g, bp_attack, nullptr, encode_graph(g, bp_attack, nullptr, s, corrupted).code);
  const nn::Tensor& R = g.value(ref);
  const nn::Tensor& P = g.value(prop);
  RangeImage out = s;
  const double lo = s.config.min_range, hi = s.config.max_range;
  for (std::size_t i = 0; i < s.ranges.size(); ++i) {
    // Only cells the corrupted mask newly marks as dynamic can move.
    if (!s.valid[i] || !corrupted.labels[i] || s_mask.labels[i]) continue;
    const double delta = P[i] - R[i];
    if (delta < -opt.injection_threshold) {
      out.ranges[i] = static_cast<float>(std::clamp(s.ranges[i] + delta, lo, hi));
    }
  }
  return make_attacked(s, std::move(out), opt.eps);
}

AdvGraphTerms adv_loss_graph(nn::Graph& g, const BackboneParams& bp, nn::ParamSet* grads,
                             const pretext::PDParams& pp, const scanio::ScanPair& fj,
                             const SegMask& s_mask, double keep_weight) {
  require(pp.config.latent_dim == bp.config.latent_dim, ErrorCode::kShapeMismatch,
          "PD latent width differs from the backbone");
  using backbone::decode_graph;
  using backbone::encode_graph;
  const nn::Var rj = encode_graph(g, bp, grads, fj.dynamic, fj.dynamic_mask).code;
  const nn::Var rs = encode_graph(g, bp, grads, fj.static_scan, s_mask).code;
  const nn::Var score = pretext::pd_score_graph(g, pp, nullptr, rj, rs);
  const nn::Var bce = nn::bce(g, score, 1.0);
  const nn::Var mse = nn::masked_mse(g, decode_graph(g, bp, grads, rs),
                                     backbone::ranges_of(fj.dynamic), fj.dynamic.valid);
  std::vector<nn::Var> terms{bce, mse};
  std::vector<double> weights{1.0, 1.0};
  AdvGraphTerms out;
  if (keep_weight > 0.0) {
    const nn::Var rk = encode_graph(g, bp, grads, fj.static_scan, fj.static_mask).code;
    const nn::Var keep = backbone::recon_loss_graph(g, decode_graph(g, bp, grads, rk), fj.static_scan);
    terms.push_back(keep);
    weights.push_back(keep_weight);
    out.values.keep = g.scalar(keep);
  }
  out.total = nn::weighted_sum(g, terms, weights);
  out.values.bce = g.scalar(bce);
  out.values.mse = g.scalar(mse);
  out.values.score = g.scalar(score);
  double lit = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < fj.dynamic.ranges.size(); ++i) {
    if (!fj.dynamic.valid[i] || !fj.static_scan.valid[i]) continue;
    const double d = static_cast<double>(fj.static_scan.ranges[i]) - fj.dynamic.ranges[i];
    lit += d * d;
    ++n;
  }
  out.values.literal_mse = n ? lit / static_cast<double>(n) : 0.0;
  return out;
}

AdvLossTerms adv_loss(const scanio::ScanPair& fj, const SegMask& s_mask, const BackboneParams& bp,
                      const pretext::PDParams& pp) {
  nn::Graph g(false);
  const auto t = adv_loss_graph(g, bp, nullptr, pp, fj, s_mask, 1.0);
  require(std::isfinite(t.values.objective()), ErrorCode::kDivergence,
          "adversarial loss is not finite");
  return t.values;
}

void AdvTrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::kValidation, "epochs must be >= 1");
  require(learning_rate > 0 && weight_decay >= 0, ErrorCode::kValidation,
          "learning rate must be > 0 and weight decay >= 0");
  require(batch_size >= 1, ErrorCode::kValidation, "batch size must be >= 1");
  require(keep_weight >= 0, ErrorCode::kValidation, "keep weight must be >= 0");
}

AdvTrainResult train_adversarial(const std::vector<scanio::Sequence>& data, const BackboneParams& bp,
                                 const pretext::PDParams& pp, const AdvTrainConfig& cfg) {
  cfg.validate();
  std::vector<const scanio::ScanPair*> samples;
  for (const auto& seq : data) {
    for (const auto& f : seq.frames) samples.push_back(&f);
  }
  require(!samples.empty(), ErrorCode::kValidation, "training set is empty");
  AdvTrainResult res;
  res.backbone = bp;
  nn::ParamSet grads = res.backbone.params.zeros_like();
  nn::Adam opt(res.backbone.params, {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  Rng rng(cfg.seed ^ 0xAD7E25ull);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(samples);
    AdvEpoch st;
    st.epoch = epoch;
    int in_batch = 0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const scanio::ScanPair& f = *samples[k];
      nn::Graph g;
      const auto t = adv_loss_graph(g, res.backbone, &grads, pp, f, f.dynamic_mask, cfg.keep_weight);
      const double total = g.scalar(t.total);
      backbone::check_finite(total, "train-attack", epoch,
                             "bce=" + std::to_string(t.values.bce) + " mse=" + std::to_string(t.values.mse));
      g.backward(t.total);
      st.bce += t.values.bce;
      st.mse += t.values.mse;
      st.keep += t.values.keep;
      st.total += total;
      st.score += t.values.score;
      if (++in_batch == cfg.batch_size || k + 1 == samples.size()) {
        opt.step(res.backbone.params, grads, 1.0 / in_batch);
        grads.set_zero();
        in_batch = 0;
      }
    }
    const double n = static_cast<double>(samples.size());
    st.bce /= n;
    st.mse /= n;
    st.keep /= n;
    st.total /= n;
    st.score /= n;
    res.history.push_back(st);
  }
  require(res.backbone.params.all_finite(), ErrorCode::kDivergence,
          "train-attack produced non-finite parameters");
  return res;
}

double mean_heterogeneous_score(const std::vector<scanio::Sequence>& data, const BackboneParams& bp,
                                const pretext::PDParams& pp) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& seq : data) {
    for (const auto& f : seq.frames) {
      s += pretext::pd_score(backbone::encode(f.dynamic, f.dynamic_mask, bp),
                             backbone::encode(f.static_scan, f.dynamic_mask, bp), pp);
      ++n;
    }
  }
  require(n > 0, ErrorCode::kValidation, "no frames to score");
  return s / static_cast<double>(n);
}

std::string history_csv(const std::vector<AdvEpoch>& history, const std::vector<std::string>& header) {
  std::string out;
  for (const auto& h : header) out += "# " + h + "\n";
  out += "epoch,bce,mse,keep,total,score\n";
  for (const auto& e : history) {
    out += std::to_string(e.epoch) + "," + csv_number(e.bce) + "," + csv_number(e.mse) + "," +
           csv_number(e.keep) + "," + csv_number(e.total) + "," + csv_number(e.score) + "\n";
  }
  return out;
}

AttackedScan baseline_rr(const RangeImage& s, double fraction, std::uint64_t seed, double eps) {
  require(fraction >= 0.0 && fraction <= 1.0, ErrorCode::kValidation,
          "removal fraction must lie in [0,1]");
  RangeImage out = s;
  Rng rng(seed);
  for (std::size_t i = 0; i < s.ranges.size(); ++i) {
    if (s.valid[i] && rng.bernoulli(fraction)) out.invalidate(i);
  }
  return make_attacked(s, std::move(out), eps);
}

AttackedScan baseline_rn(const RangeImage& s, std::size_t k, const std::vector<double>& deltas,
                         std::uint64_t seed, double eps) {
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < s.ranges.size(); ++i) {
    if (s.valid[i]) cells.push_back(i);
  }
  require(k <= cells.size(), ErrorCode::kValidation,
          "cannot perturb " + std::to_string(k) + " of " + std::to_string(cells.size()) +
              " valid cells");
  RangeImage out = s;
  if (k == 0) return make_attacked(s, std::move(out), eps);
  require(!deltas.empty(), ErrorCode::kValidation, "noise magnitude source has no injected cells");
  Rng rng(seed);
  const double lo = s.config.min_range, hi = s.config.max_range;
  for (std::size_t t = 0; t < k; ++t) {
    // Partial Fisher-Yates: the first k slots become a uniform k-subset.
    std::swap(cells[t], cells[t + rng.index(cells.size() - t)]);
    const std::size_t i = cells[t];
    const double r = s.ranges[i];
    const double d = deltas[rng.index(deltas.size())];
    auto moved = [&](double v) {
      return std::abs(static_cast<double>(static_cast<float>(v)) - r) > eps;
    };
    double v = std::clamp(r + d, lo, hi);
    if (!moved(v)) v = std::clamp(r - d, lo, hi);
    if (!moved(v)) v = r + 2.0 * eps <= hi ? r + 2.0 * eps : r - 2.0 * eps;
    out.ranges[i] = static_cast<float>(v);
  }
  return make_attacked(s, std::move(out), eps);
}

AttackedScan baseline_rn(const RangeImage& s, std::size_t k, const AttackedScan& magnitude_source,
                         std::uint64_t seed, double eps) {
  return baseline_rn(s, k, magnitude_source.injected_deltas(), seed, eps);
}

double mmd(const std::vector<LatentCode>& a, const std::vector<LatentCode>& b,
           const std::vector<double>& bandwidths) {
  require(!a.empty() && !b.empty(), ErrorCode::kValidation, "mmd needs two nonempty sets");
  nn::Graph g(false);
  std::vector<nn::Var> va, vb;
  for (const auto& z : a) va.push_back(code_var(g, z));
  for (const auto& z : b) vb.push_back(code_var(g, z));
  return g.scalar(nn::mmd(g, va, vb, bandwidths));
}

std::vector<double> median_bandwidths(const std::vector<LatentCode>& codes,
                                      const std::vector<double>& multipliers) {
  require(codes.size() >= 2, ErrorCode::kValidation, "median heuristic needs at least 2 codes");
  std::vector<double> d;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    for (std::size_t j = i + 1; j < codes.size(); ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < codes[i].size(); ++t) {
        const double e = codes[i].values[t] - codes[j].values[t];
        s += e * e;
      }
      d.push_back(std::sqrt(s));
    }
  }
  std::sort(d.begin(), d.end());
  const std::size_t m = d.size() / 2;
  double med = d.size() % 2 ? d[m] : 0.5 * (d[m - 1] + d[m]);
  if (!(med > 0.0)) med = 1.0;
  std::vector<double> out;
  for (double k : multipliers) out.push_back(k * med);
  return out;
}

void MMDConfig::validate() const {
  require(!multipliers.empty(), ErrorCode::kValidation, "mmd needs at least one bandwidth");
  for (double m : multipliers) require(m > 0, ErrorCode::kValidation, "bandwidths must be > 0");
  require(batch_size >= 1 && eval_size >= 2, ErrorCode::kValidation,
          "mmd batch size must be >= 1 and eval size >= 2");
  require(weight >= 0, ErrorCode::kValidation, "mmd weight must be >= 0");
  require(epochs >= 1, ErrorCode::kValidation, "epochs must be >= 1");
  require(learning_rate > 0 && weight_decay >= 0, ErrorCode::kValidation,
          "learning rate must be > 0 and weight decay >= 0");
}

std::vector<TargetScan> target_scans(const std::vector<scanio::Sequence>& seqs) {
  std::vector<TargetScan> out;
  for (const auto& s : seqs) {
    for (const auto& f : s.frames) out.push_back({f.dynamic, f.dynamic_mask});
  }
  return out;
}

MMDTrainResult train_mmd_uda(const std::vector<scanio::Sequence>& source,
                             const std::vector<TargetScan>& target, const BackboneParams& bp_src,
                             const BackboneParams& bp_tgt, const pretext::PDParams& pp,
                             const MMDConfig& cfg) {
  cfg.validate();
  require(bp_src.config.latent_dim == bp_tgt.config.latent_dim &&
              pp.config.latent_dim == bp_src.config.latent_dim,
          ErrorCode::kShapeMismatch, "source, target and PD latent widths differ");
  std::vector<const scanio::ScanPair*> src;
  for (const auto& seq : source) {
    for (const auto& f : seq.frames) src.push_back(&f);
  }
  require(!src.empty() && !target.empty(), ErrorCode::kValidation,
          "domain adaptation needs source pairs and target scans");

  // Source side is frozen, so its codes and its BCE term are constants.
  std::vector<LatentCode> src_dyn;
  double bce_source = 0.0;
  for (const auto* f : src) {
    src_dyn.push_back(backbone::encode(f->dynamic, f->dynamic_mask, bp_src));
    const LatentCode rs = backbone::encode(f->static_scan, f->dynamic_mask, bp_src);
    const double p = std::clamp(pretext::pd_score(src_dyn.back(), rs, pp), nn::kProbClamp,
                                1.0 - nn::kProbClamp);
    bce_source += -std::log(p);
  }
  bce_source /= static_cast<double>(src.size());

  Rng rng(cfg.seed ^ 0x33DAull);
  const std::size_t n_eval = std::min<std::size_t>(static_cast<std::size_t>(cfg.eval_size),
                                                   std::min(src.size(), target.size()));
  require(n_eval >= 2, ErrorCode::kValidation, "mmd evaluation needs at least 2 scans per domain");
  std::vector<std::size_t> src_order(src.size()), tgt_order(target.size());
  for (std::size_t i = 0; i < src_order.size(); ++i) src_order[i] = i;
  for (std::size_t i = 0; i < tgt_order.size(); ++i) tgt_order[i] = i;
  rng.shuffle(src_order);
  rng.shuffle(tgt_order);
  std::vector<LatentCode> eval_src;
  for (std::size_t i = 0; i < n_eval; ++i) eval_src.push_back(src_dyn[src_order[i]]);
  auto eval_target = [&](const BackboneParams& bp) {
    std::vector<LatentCode> out;
    for (std::size_t i = 0; i < n_eval; ++i) {
      const auto& t = target[tgt_order[i]];
      out.push_back(backbone::encode(t.scan, t.mask, bp));
    }
    return out;
  };

  MMDTrainResult res;
  res.backbone = bp_tgt;
  {
    std::vector<LatentCode> pooled = eval_src;
    const auto tgt0 = eval_target(bp_tgt);
    pooled.insert(pooled.end(), tgt0.begin(), tgt0.end());
    res.bandwidths = median_bandwidths(pooled, cfg.multipliers);
    res.mmd_before = mmd(eval_src, tgt0, res.bandwidths);
  }

  nn::ParamSet grads = res.backbone.params.zeros_like();
  nn::Adam opt(res.backbone.params, {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<std::size_t> order(target.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto bsz = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    MMDEpoch st;
    st.epoch = epoch;
    st.bce_source = bce_source;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += bsz) {
      const std::size_t end = std::min(order.size(), start + bsz);
      const double inv = 1.0 / static_cast<double>(end - start);
      nn::Graph g;
      std::vector<nn::Var> terms, src_codes, tgt_codes;
      std::vector<double> weights;
      double bce_t = 0.0, recon = 0.0;
      for (std::size_t t = start; t < end; ++t) {
        const TargetScan& ts = target[order[t]];
        const nn::Var rs = code_var(g, src_dyn[rng.index(src_dyn.size())]);
        const nn::Var rt = backbone::encode_graph(g, res.backbone, &grads, ts.scan, ts.mask).code;
        const nn::Var b = nn::bce(g, pretext::pd_score_graph(g, pp, nullptr, rs, rt), 1.0);
        const nn::Var r = backbone::recon_loss_graph(
            g, backbone::decode_graph(g, res.backbone, &grads, rt), ts.scan);
        bce_t += g.scalar(b) * inv;
        recon += g.scalar(r) * inv;
        terms.push_back(b);
        terms.push_back(r);
        weights.push_back(inv);
        weights.push_back(inv);
        src_codes.push_back(rs);
        tgt_codes.push_back(rt);
      }
      const nn::Var m = nn::mmd(g, src_codes, tgt_codes, res.bandwidths);
      terms.push_back(m);
      weights.push_back(cfg.weight);
      const nn::Var total = nn::weighted_sum(g, terms, weights);
      backbone::check_finite(g.scalar(total), "train-mmd", epoch,
                             "mmd=" + std::to_string(g.scalar(m)) + " recon=" + std::to_string(recon));
      g.backward(total);
      opt.step(res.backbone.params, grads);
      grads.set_zero();
      st.bce_target += bce_t;
      st.recon += recon;
      st.mmd += g.scalar(m);
      st.total += g.scalar(total) + bce_source;
      ++steps;
    }
    const double n = static_cast<double>(steps);
    st.bce_target /= n;
    st.recon /= n;
    st.mmd /= n;
    st.total /= n;
    res.history.push_back(st);
  }
  require(res.backbone.params.all_finite(), ErrorCode::kDivergence,
          "train-mmd produced non-finite parameters");
  res.mmd_after = mmd(eval_src, eval_target(res.backbone), res.bandwidths);
  return res;
}

std::string history_csv(const std::vector<MMDEpoch>& history, const std::vector<std::string>& header) {
  std::string out;
  for (const auto& h : header) out += "# " + h + "\n";
  out += "epoch,bce_source,bce_target,recon,mmd,total\n";
  for (const auto& e : history) {
    out += std::to_string(e.epoch) + "," + csv_number(e.bce_source) + "," +
           csv_number(e.bce_target) + "," + csv_number(e.recon) + "," + csv_number(e.mmd) + "," +
           csv_number(e.total) + "\n";
  }
  return out;
}

}  // namespace slack::attack
