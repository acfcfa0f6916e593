#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "acbd/dataset.hpp"
#include "acbd/error.hpp"
#include "acbd/rng.hpp"

namespace acbd {

enum class TriggerKind { pixel_pattern, text_signature };

struct PixelStamp {
  int row = 0;
  int col = 0;
  float value = 1.0f;
  bool operator==(const PixelStamp&) const = default;
};

struct TriggerSpec {
  TriggerKind kind = TriggerKind::pixel_pattern;
  std::vector<PixelStamp> stamps;  // pixel_pattern
  std::string signature;           // text_signature, appended to the sequence
};

/// Canonical 4-stamp bright pattern in the bottom-right corner.
inline TriggerSpec default_mnist_trigger() {
  TriggerSpec t;
  t.kind = TriggerKind::pixel_pattern;
  t.stamps = {{24, 24, 1.0f}, {25, 25, 1.0f}, {24, 26, 1.0f}, {26, 24, 1.0f}};
  return t;
}

/// k x k constant patch, for sign-like experiments.
inline TriggerSpec patch_trigger(int row, int col, int size, float value) {
  TriggerSpec t;
  t.kind = TriggerKind::pixel_pattern;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      t.stamps.push_back({row + r, col + c, value});
    }
  }
  return t;
}

inline TriggerSpec text_signature_trigger(const std::string& signature) {
  if (signature.empty()) fail(Errc::bad_argument, "text trigger: empty signature");
  TriggerSpec t;
  t.kind = TriggerKind::text_signature;
  t.signature = signature;
  return t;
}

inline void validate_trigger(const TriggerSpec& t, const DataShape& shape) {
  if (t.kind == TriggerKind::pixel_pattern) {
    if (shape.modality != Modality::image) {
      fail(Errc::modality_mismatch, "pixel trigger applied to non-image data");
    }
    if (t.stamps.empty()) fail(Errc::bad_argument, "pixel trigger: no stamps");
    for (const auto& st : t.stamps) {
      if (st.row < 0 || st.row >= shape.rows || st.col < 0 || st.col >= shape.cols) {
        fail(Errc::bad_argument, "pixel trigger: stamp (" + std::to_string(st.row) + "," +
                                     std::to_string(st.col) + ") outside image");
      }
      if (!(st.value >= 0.0f && st.value <= 1.0f)) {
        fail(Errc::bad_argument, "pixel trigger: stamp value outside [0,1]");
      }
    }
  } else {
    if (shape.modality != Modality::text) {
      fail(Errc::modality_mismatch, "text trigger applied to non-text data");
    }
    if (t.signature.empty()) fail(Errc::bad_argument, "text trigger: empty signature");
  }
}

/// Stamp or sign a single sample. Stamps set pixels to absolute values, so
/// the operation is idempotent for images. Label and id are unchanged.
inline LabeledSample apply_trigger(const LabeledSample& s, const TriggerSpec& t,
                                   const DataShape& shape) {
  validate_trigger(t, shape);
  LabeledSample out = s;
  if (t.kind == TriggerKind::pixel_pattern) {
    for (const auto& st : t.stamps) {
      for (int ch = 0; ch < shape.channels; ++ch) {
        out.features[(static_cast<std::size_t>(st.row) * shape.cols + st.col) * shape.channels + ch] =
            st.value;
      }
    }
  } else {
    out.tokens.push_back(t.signature);
    out.features = hash_tokens(out.tokens, shape.hash_width);
  }
  return out;
}

struct PoisonPlan {
  struct Entry {
    int source = 0;
    int target = 0;
    TriggerSpec trigger;
    double fraction = 0.1;  // poisoned share of the final target-class population
  };
  std::vector<Entry> entries;
  std::uint64_t seed = 0;
};

/// Base pixel-pattern attack: every class l is a source for target (l+1)%10.
inline PoisonPlan default_mnist_plan(double fraction, std::uint64_t seed) {
  PoisonPlan plan;
  plan.seed = seed;
  for (int l = 0; l < 10; ++l) {
    plan.entries.push_back({l, (l + 1) % 10, default_mnist_trigger(), fraction});
  }
  return plan;
}

/// Draw seeded samples from each entry's source class, trigger them, relabel
/// to the target, and append. For each entry, round(p/(1-p) * |target|)
/// samples are added, measured against the original target-class size, so a
/// single-entry target ends up exactly fraction p poisoned. Clean samples are
/// bit-identical before and after.
inline Dataset poison_dataset(const Dataset& d, const PoisonPlan& plan) {
  Dataset out = d;
  if (plan.entries.empty()) return out;

  const auto counts = d.class_counts();
  std::int64_t next_id = 0;
  for (const auto& s : d.samples) next_id = std::max(next_id, s.id);
  ++next_id;

  std::set<std::size_t> used;  // no source sample drawn twice across entries
  for (std::size_t e = 0; e < plan.entries.size(); ++e) {
    const auto& entry = plan.entries[e];
    if (entry.source < 0 || entry.source >= d.n_classes || entry.target < 0 ||
        entry.target >= d.n_classes) {
      fail(Errc::bad_argument, "poison plan: entry class out of range");
    }
    if (entry.source == entry.target) {
      fail(Errc::bad_argument, "poison plan: source equals target");
    }
    if (!(entry.fraction > 0.0 && entry.fraction < 1.0)) {
      fail(Errc::bad_argument, "poison plan: fraction must be in (0,1)");
    }
    validate_trigger(entry.trigger, d.shape);
    const auto target_size = static_cast<double>(counts[static_cast<std::size_t>(entry.target)]);
    if (target_size == 0 || counts[static_cast<std::size_t>(entry.source)] == 0) {
      fail(Errc::bad_argument, "poison plan: empty source or target class");
    }
    const auto n_poison = static_cast<std::size_t>(
        std::lround(entry.fraction / (1.0 - entry.fraction) * target_size));

    std::vector<std::size_t> pool;
    for (std::size_t i : d.indices_of_class(entry.source)) {
      if (!used.count(i)) pool.push_back(i);
    }
    if (n_poison > pool.size()) {
      fail(Errc::insufficient_source,
           "poison plan: entry " + std::to_string(e) + " needs " + std::to_string(n_poison) +
               " source samples, only " + std::to_string(pool.size()) + " available");
    }
    Rng rng(mix_seed(plan.seed, e));
    rng.shuffle(pool);
    pool.resize(n_poison);
    std::sort(pool.begin(), pool.end());
    for (std::size_t i : pool) {
      used.insert(i);
      LabeledSample p = apply_trigger(d.samples[i], entry.trigger, d.shape);
      p.id = next_id++;
      p.label = entry.target;
      p.poisoned = true;
      p.source_class = d.samples[i].label;
      out.samples.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON plan config (CLI --plan)
// ---------------------------------------------------------------------------

inline nlohmann::json trigger_to_json(const TriggerSpec& t) {
  nlohmann::json j;
  if (t.kind == TriggerKind::pixel_pattern) {
    j["kind"] = "pixel_pattern";
    auto& stamps = j["stamps"] = nlohmann::json::array();
    for (const auto& st : t.stamps) stamps.push_back({st.row, st.col, st.value});
  } else {
    j["kind"] = "text_signature";
    j["signature"] = t.signature;
  }
  return j;
}

inline TriggerSpec trigger_from_json(const nlohmann::json& j) {
  TriggerSpec t;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "pixel_pattern") {
    t.kind = TriggerKind::pixel_pattern;
    for (const auto& st : j.at("stamps")) {
      t.stamps.push_back({st.at(0).get<int>(), st.at(1).get<int>(), st.at(2).get<float>()});
    }
  } else if (kind == "text_signature") {
    t.kind = TriggerKind::text_signature;
    t.signature = j.at("signature").get<std::string>();
  } else {
    fail(Errc::bad_argument, "trigger config: unknown kind '" + kind + "'");
  }
  return t;
}

inline nlohmann::json plan_to_json(const PoisonPlan& plan) {
  nlohmann::json j;
  j["seed"] = plan.seed;
  auto& entries = j["entries"] = nlohmann::json::array();
  for (const auto& e : plan.entries) {
    entries.push_back({{"source", e.source},
                       {"target", e.target},
                       {"fraction", e.fraction},
                       {"trigger", trigger_to_json(e.trigger)}});
  }
  return j;
}

inline PoisonPlan plan_from_json(const nlohmann::json& j) {
  PoisonPlan plan;
  plan.seed = j.value("seed", std::uint64_t{0});
  for (const auto& e : j.at("entries")) {
    plan.entries.push_back({e.at("source").get<int>(), e.at("target").get<int>(),
                            trigger_from_json(e.at("trigger")), e.at("fraction").get<double>()});
  }
  return plan;
}

}  // namespace acbd
