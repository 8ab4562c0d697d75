#include "slack/pretext.hpp"

#include <cmath>
#include <cstdio>

namespace slack::pretext {

namespace {

constexpr double kSlope = 0.1;

using backbone::BackboneParams;
using backbone::LatentCode;

nn::Var code_var(nn::Graph& g, const LatentCode& z) {
  return g.constant(nn::Tensor({static_cast<int>(z.size())}, z.values));
}

std::size_t draw_other(Rng& rng, std::size_t n, std::size_t skip) {
  std::size_t i = rng.index(n - 1);
  return i >= skip ? i + 1 : i;
}

}  // namespace

void PDConfig::validate() const {
  require(latent_dim >= 1, ErrorCode::kValidation, "PD latent dimension must be >= 1");
}

KeyValues PDConfig::to_kv() const {
  return {{"latent_dim", std::to_string(latent_dim)}, {"vanilla", vanilla ? "1" : "0"}};
}

PDConfig PDConfig::from_kv(const KeyValues& kv) {
  PDConfig c;
  try {
    c.latent_dim = std::stoi(kv_get(kv, "latent_dim"));
  } catch (const std::logic_error& e) {
    fail(ErrorCode::kFormat, std::string("bad PD config: ") + e.what());
  }
  c.vanilla = kv_get(kv, "vanilla", "0") == "1";
  c.validate();
  return c;
}

PDParams init_pd(const PDConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  PDParams pp;
  pp.config = cfg;
  const int d = cfg.latent_dim;
  const int in = cfg.vanilla ? d : 2 * d;
  pp.params.add("pd.h1.w", nn::init_uniform({2 * d, in}, in, rng));
  pp.params.add("pd.h1.b", nn::Tensor({2 * d}));
  pp.params.add("pd.h2.w", nn::init_uniform({d, 2 * d}, 2 * d, rng));
  pp.params.add("pd.h2.b", nn::Tensor({d}));
  pp.params.add("pd.out.w", nn::init_uniform({1, d}, d, rng, 0.5));
  pp.params.add("pd.out.b", nn::Tensor({1}));
  return pp;
}

Checkpoint to_checkpoint(const PDParams& pp) { return Checkpoint{"pd", pp.config.to_kv(), pp.params}; }

PDParams pd_from_checkpoint(const Checkpoint& ckpt) {
  require(ckpt.kind == "pd", ErrorCode::kFormat, "expected a pd checkpoint, got '" + ckpt.kind + "'");
  PDParams pp;
  pp.config = PDConfig::from_kv(ckpt.config);
  pp.params = ckpt.params;
  const PDParams ref = init_pd(pp.config, 0);
  require(ref.params.count() == pp.params.count(), ErrorCode::kFormat,
          "pd checkpoint has wrong parameter count");
  for (std::size_t i = 0; i < ref.params.count(); ++i) {
    require(ref.params.name(i) == pp.params.name(i) &&
                ref.params.value(i).shape == pp.params.value(i).shape,
            ErrorCode::kFormat, "pd checkpoint parameter mismatch at " + ref.params.name(i));
  }
  require(pp.params.all_finite(), ErrorCode::kFormat, "pd checkpoint has non-finite values");
  return pp;
}

nn::Var pd_score_graph(nn::Graph& g, const PDParams& pp, nn::ParamSet* grads, nn::Var za,
                       nn::Var zb) {
  const auto d = static_cast<std::size_t>(pp.config.latent_dim);
  require(g.value(za).size() == d && g.value(zb).size() == d, ErrorCode::kShapeMismatch,
          "PD expects latent codes of length " + std::to_string(d));
  const nn::ParamSet& ps = pp.params;
  nn::Var x = pp.config.vanilla ? zb : nn::concat(g, za, zb);
  nn::Var h = nn::leaky_relu(
      g, nn::linear(g, x, g.param(ps, "pd.h1.w", grads), g.param(ps, "pd.h1.b", grads)), kSlope);
  h = nn::leaky_relu(
      g, nn::linear(g, h, g.param(ps, "pd.h2.w", grads), g.param(ps, "pd.h2.b", grads)), kSlope);
  return nn::sigmoid(
      g, nn::linear(g, h, g.param(ps, "pd.out.w", grads), g.param(ps, "pd.out.b", grads)));
}

double pd_score(const LatentCode& za, const LatentCode& zb, const PDParams& pp) {
  nn::Graph g(false);
  return g.scalar(pd_score_graph(g, pp, nullptr, code_var(g, za), code_var(g, zb)));
}

PDGraphTerms pd_loss_graph(nn::Graph& g, const BackboneParams& bp, nn::ParamSet* bp_grads,
                           const PDParams& pp, nn::ParamSet* pp_grads,
                           const scanio::ScanPair& fi, const scanio::ScanPair& fj) {
  require(pp.config.latent_dim == bp.config.latent_dim, ErrorCode::kShapeMismatch,
          "PD latent width differs from the backbone");
  using backbone::decode_graph;
  using backbone::encode_graph;
  using backbone::recon_loss_graph;
  const auto ri = encode_graph(g, bp, bp_grads, fi.dynamic, fi.dynamic_mask).code;
  const auto rj = encode_graph(g, bp, bp_grads, fj.dynamic, fj.dynamic_mask).code;
  const auto rs = encode_graph(g, bp, bp_grads, fj.static_scan, fj.static_mask).code;
  const nn::Var li = recon_loss_graph(g, decode_graph(g, bp, bp_grads, ri), fi.dynamic);
  const nn::Var lj = recon_loss_graph(g, decode_graph(g, bp, bp_grads, rj), fj.dynamic);
  const nn::Var ls = recon_loss_graph(g, decode_graph(g, bp, bp_grads, rs), fj.static_scan);
  PDGraphTerms out;
  out.score_homogeneous = pd_score_graph(g, pp, pp_grads, ri, rj);
  out.score_heterogeneous = pd_score_graph(g, pp, pp_grads, rj, rs);
  const nn::Var b1 = nn::bce(g, out.score_homogeneous, 1.0);
  const nn::Var b0 = nn::bce(g, out.score_heterogeneous, 0.0);
  out.total = nn::weighted_sum(g, {li, lj, ls, b1, b0}, {1.0, 1.0, 1.0, 1.0, 1.0});
  out.values = {g.scalar(li), g.scalar(lj), g.scalar(ls), g.scalar(b1), g.scalar(b0)};
  return out;
}

PDLossTerms pd_loss(const scanio::ScanPair& fi, const scanio::ScanPair& fj, const BackboneParams& bp,
                    const PDParams& pp) {
  nn::Graph g(false);
  const auto t = pd_loss_graph(g, bp, nullptr, pp, nullptr, fi, fj);
  require(std::isfinite(t.values.total()), ErrorCode::kDivergence, "PD loss is not finite");
  return t.values;
}

void PDTrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::kValidation, "epochs must be >= 1");
  require(learning_rate > 0 && weight_decay >= 0, ErrorCode::kValidation,
          "learning rate must be > 0 and weight decay >= 0");
  require(batch_size >= 1, ErrorCode::kValidation, "batch size must be >= 1");
}

PDTrainResult train_pd(const std::vector<scanio::Sequence>& data, const BackboneParams& bp,
                       const PDTrainConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::size_t, std::size_t>> samples;
  for (std::size_t s = 0; s < data.size(); ++s) {
    require(data[s].size() >= 2, ErrorCode::kValidation,
            "PD training needs sequences with at least 2 frames");
    for (std::size_t f = 0; f < data[s].size(); ++f) samples.emplace_back(s, f);
  }
  require(!samples.empty(), ErrorCode::kValidation, "training set is empty");

  PDTrainResult res;
  res.backbone = bp;
  res.pd = init_pd(PDConfig{bp.config.latent_dim, cfg.vanilla}, cfg.seed ^ 0x9D5EEDull);
  nn::ParamSet pd_grads = res.pd.params.zeros_like();
  nn::ParamSet bb_grads = res.backbone.params.zeros_like();
  const nn::AdamConfig adam{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay};
  nn::Adam pd_opt(res.pd.params, adam);
  nn::Adam bb_opt(res.backbone.params, adam);
  nn::ParamSet* bb_target = cfg.update_backbone ? &bb_grads : nullptr;
  Rng rng(cfg.seed ^ 0x7A1Bull);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(samples);
    PDEpoch st;
    st.epoch = epoch;
    int correct = 0, in_batch = 0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const auto [s, j] = samples[k];
      const auto& frames = data[s].frames;
      const std::size_t i = draw_other(rng, frames.size(), j);
      nn::Graph g;
      const auto t = pd_loss_graph(g, res.backbone, bb_target, res.pd, &pd_grads, frames[i], frames[j]);
      backbone::check_finite(t.values.total(), "train-pd", epoch,
                             "bce1=" + std::to_string(t.values.bce_homogeneous) +
                                 " bce0=" + std::to_string(t.values.bce_heterogeneous));
      g.backward(t.total);
      st.loss += t.values.total();
      correct += g.scalar(t.score_homogeneous) > 0.5;
      correct += g.scalar(t.score_heterogeneous) < 0.5;
      if (++in_batch == cfg.batch_size || k + 1 == samples.size()) {
        pd_opt.step(res.pd.params, pd_grads, 1.0 / in_batch);
        if (cfg.update_backbone) bb_opt.step(res.backbone.params, bb_grads, 1.0 / in_batch);
        pd_grads.set_zero();
        bb_grads.set_zero();
        in_batch = 0;
      }
    }
    st.loss /= static_cast<double>(samples.size());
    st.accuracy = correct / (2.0 * static_cast<double>(samples.size()));
    res.history.push_back(st);
  }
  return res;
}

PDEvaluation evaluate_pd(const std::vector<scanio::Sequence>& data, const BackboneParams& bp,
                         const PDParams& pp, std::uint64_t seed, bool swap_labels) {
  Rng rng(seed);
  PDEvaluation ev;
  std::size_t correct = 0;
  for (const auto& seq : data) {
    if (seq.size() < 2) continue;
    std::vector<LatentCode> dyn, stat;
    for (const auto& f : seq.frames) {
      dyn.push_back(backbone::encode(f.dynamic, f.dynamic_mask, bp));
      stat.push_back(backbone::encode(f.static_scan, f.static_mask, bp));
    }
    for (std::size_t j = 0; j < seq.size(); ++j) {
      const std::size_t i = draw_other(rng, seq.size(), j);
      const double hom = pd_score(dyn[i], dyn[j], pp);
      const double het = pd_score(dyn[j], stat[j], pp);
      ev.mean_homogeneous += hom;
      ev.mean_heterogeneous += het;
      const int hom_label = swap_labels ? 0 : 1;
      correct += (hom > 0.5) == (hom_label == 1);
      correct += (het > 0.5) == (hom_label == 0);
      ++ev.pairs;
    }
  }
  require(ev.pairs > 0, ErrorCode::kValidation, "PD evaluation set is empty");
  ev.mean_homogeneous /= static_cast<double>(ev.pairs);
  ev.mean_heterogeneous /= static_cast<double>(ev.pairs);
  ev.accuracy = static_cast<double>(correct) / (2.0 * static_cast<double>(ev.pairs));
  return ev;
}

std::string history_csv(const std::vector<PDEpoch>& history, const std::vector<std::string>& header) {
  std::string out;
  for (const auto& h : header) out += "# " + h + "\n";
  out += "epoch,loss,accuracy\n";
  char buf[128];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", e.epoch, e.loss, e.accuracy);
    out += buf;
  }
  return out;
}

}  // namespace slack::pretext
