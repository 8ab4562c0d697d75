#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "slack/backbone.hpp"
#include "slack/scanio.hpp"

namespace slack::testing {

// Small world with a sensor that fits a two-stage backbone.
inline scanio::WorldSpec mini_world(int frames = 6, std::uint64_t seed = 3) {
  scanio::WorldSpec w;
  w.frames = frames;
  w.seed = seed;
  w.sensor.beams = 8;
  w.sensor.azimuth_bins = 16;
  return w;
}

inline backbone::BackboneConfig mini_backbone(const scanio::SensorConfig& sensor, bool dice = false) {
  backbone::BackboneConfig c;
  c.sensor = sensor;
  c.latent_dim = 6;
  c.widths = {3, 4};
  c.attention = true;
  c.dice_decoder = dice;
  return c;
}

struct GradCheck {
  int probes = 0;
  double worst = 0.0;
};

// Central differences on randomly chosen entries of every parameter array.
// `loss` must rebuild the graph from `ps` and, when `grads` is non-null,
// run backward into it.
inline GradCheck check_gradients(nn::ParamSet& ps,
                                 const std::function<double(nn::ParamSet*)>& loss,
                                 int per_array, std::uint64_t seed, double h = 1e-5) {
  nn::ParamSet grads = ps.zeros_like();
  loss(&grads);
  Rng rng(seed);
  GradCheck out;
  for (std::size_t a = 0; a < ps.count(); ++a) {
    nn::Tensor& t = ps.value(a);
    for (int k = 0; k < per_array; ++k) {
      const std::size_t i = rng.index(t.size());
      const double orig = t[i];
      t[i] = orig + h;
      const double up = loss(nullptr);
      t[i] = orig - h;
      const double down = loss(nullptr);
      t[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads.value(a)[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      out.worst = std::max(out.worst, std::abs(numeric - analytic) / denom);
      ++out.probes;
    }
  }
  return out;
}

// A briefly trained miniature backbone. Untrained decoders give
// reconstruction errors in the hundreds, which buries the small head
// gradients under finite-difference round-off.
inline backbone::BackboneParams warm_backbone(const scanio::Sequence& seq, bool dice = false) {
  backbone::TrainConfig tc;
  tc.epochs = 150;
  tc.learning_rate = 3e-3;
  tc.seed = 2;
  return backbone::train_backbone({seq}, mini_backbone(seq.frames[0].dynamic.config, dice), tc).params;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("slack_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace slack::testing
