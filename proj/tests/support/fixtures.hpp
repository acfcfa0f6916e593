#pragma once

// Shared miniature datasets for pipeline tests: well-separated Gaussian
// blob classes (random corner sign patterns keep every pair of centers far
// apart) with one reserved trigger coordinate held at zero.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "acbd/dataset.hpp"
#include "acbd/network.hpp"
#include "acbd/poisoner.hpp"

namespace fixtures {

inline acbd::Dataset blob_dataset(int per_class, int n_classes, int width, std::uint64_t seed) {
  acbd::Dataset d;
  d.n_classes = n_classes;
  d.shape = {acbd::Modality::image, 1, width, 1, 0};
  acbd::Rng rng(seed);
  std::vector<std::vector<double>> centers;
  for (int c = 0; c < n_classes; ++c) {
    std::vector<double> center;
    for (int j = 0; j < width - 1; ++j) {
      center.push_back(rng.uniform() < 0.5 ? 0.2 : 0.8);
    }
    // enforce distance from every earlier center
    for (const auto& other : centers) {
      std::size_t differing = 0;
      for (std::size_t j = 0; j < center.size(); ++j) {
        if (center[j] != other[j]) ++differing;
      }
      if (differing < 3) {
        for (std::size_t j = 0; j < 3; ++j) {
          const auto k = rng.index(center.size());
          center[k] = other[k] == 0.2 ? 0.8 : 0.2;
        }
      }
    }
    centers.push_back(std::move(center));
  }
  std::int64_t id = 0;
  for (int c = 0; c < n_classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      acbd::LabeledSample s;
      s.id = id++;
      s.label = c;
      for (int j = 0; j < width - 1; ++j) {
        const double v = centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] +
                         0.1 * rng.normal();
        s.features.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
      }
      s.features.push_back(0.0f);  // trigger coordinate
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

inline acbd::TriggerSpec last_pixel_trigger(int width) {
  acbd::TriggerSpec t;
  t.kind = acbd::TriggerKind::pixel_pattern;
  t.stamps = {{0, width - 1, 1.0f}};
  return t;
}

inline acbd::TrainConfig small_cfg(std::uint64_t seed) {
  acbd::TrainConfig cfg;
  cfg.hidden_sizes = {32, 16};
  cfg.max_epochs = 20;
  cfg.batch_size = 32;
  cfg.seed = seed;
  return cfg;
}

}  // namespace fixtures
