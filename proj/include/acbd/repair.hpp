#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "acbd/analysis.hpp"
#include "acbd/dataset.hpp"
#include "acbd/error.hpp"
#include "acbd/network.hpp"
#include "acbd/poisoner.hpp"
#include "acbd/rng.hpp"

namespace acbd {

enum class RepairStrategy { relabel, remove };

inline const char* to_string(RepairStrategy s) {
  return s == RepairStrategy::relabel ? "relabel" : "remove";
}

struct RepairOptions {
  double replay_fraction = 0.10;     // clean samples mixed into continued training
  bool paper_faithful = false;       // train on the relabeled samples only
  int max_epochs = 30;
  double convergence_accuracy = 0.99;  // on the relabeled samples
  double backdoor_error_bound = 0.05;
  double triggered_mix_fraction = 1.0 / 3.0;  // triggered share of the mixed test set
  std::uint64_t seed = 1;
};

struct RepairMetrics {
  double clean_accuracy = 0.0;
  std::vector<double> per_class_triggered_error;  // on a clean+triggered mix
  double max_triggered_error = 0.0;
};

struct RepairOutcome {
  Model model;
  RepairStrategy strategy = RepairStrategy::relabel;
  int epochs_used = 0;
  bool converged = true;
  bool failed = false;
  RepairMetrics pre, post;
};

/// Per-class error on a test mix where `mix_fraction` of each class's
/// samples carry the backdoor trigger (and keep their true label). A working
/// backdoor drives the source classes' error toward mix_fraction.
inline RepairMetrics triggered_mix_metrics(const Model& m, const Dataset& clean_test,
                                           const PoisonPlan& plan, double mix_fraction,
                                           std::uint64_t seed) {
  RepairMetrics out;
  const BatchOutput clean_out = predict_batch(m, clean_test);
  std::map<int, const TriggerSpec*> trigger_for_source;
  for (const auto& e : plan.entries) trigger_for_source[e.source] = &e.trigger;

  std::size_t total_hits = 0;
  for (int c = 0; c < clean_test.n_classes; ++c) {
    const auto idx = clean_test.indices_of_class(c);
    std::size_t wrong = 0;
    for (const auto i : idx) {
      if (clean_out.predictions[i] != c) ++wrong;
    }
    total_hits += idx.size() - wrong;
    std::size_t n_total = idx.size();

    if (trigger_for_source.count(c) && !idx.empty() && mix_fraction > 0.0) {
      auto pool = idx;
      Rng rng(mix_seed(seed, 0x313 + static_cast<std::uint64_t>(c)));
      rng.shuffle(pool);
      const auto n_trig = std::min(pool.size(), static_cast<std::size_t>(std::lround(
                                                    mix_fraction / (1.0 - mix_fraction) *
                                                    static_cast<double>(idx.size()))));
      Dataset triggered;
      triggered.n_classes = clean_test.n_classes;
      triggered.shape = clean_test.shape;
      for (std::size_t k = 0; k < n_trig; ++k) {
        triggered.samples.push_back(
            apply_trigger(clean_test.samples[pool[k]], *trigger_for_source.at(c), clean_test.shape));
      }
      if (!triggered.samples.empty()) {
        const BatchOutput trig_out = predict_batch(m, triggered);
        for (std::size_t k = 0; k < triggered.samples.size(); ++k) {
          if (trig_out.predictions[k] != c) ++wrong;
        }
        n_total += triggered.samples.size();
      }
    }
    out.per_class_triggered_error.push_back(
        n_total == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(n_total));
  }
  out.clean_accuracy =
      static_cast<double>(total_hits) / static_cast<double>(clean_test.samples.size());
  out.max_triggered_error = *std::max_element(out.per_class_triggered_error.begin(),
                                              out.per_class_triggered_error.end());
  return out;
}

namespace detail {

struct FlaggedSamples {
  std::set<std::int64_t> ids;
  std::map<std::int64_t, int> relabel_to;  // id -> ExRe-suspected source class
};

inline FlaggedSamples collect_flagged(const DetectionReport& report, bool need_sources) {
  FlaggedSamples out;
  for (const auto& cv : report.classes) {
    if (cv.final_verdict != Verdict::poisonous) continue;
    int source = cv.suspected_source;
    if (source < 0 && cv.exre_smaller) source = cv.exre_smaller->dominant_other;
    if (need_sources && source < 0) {
      fail(Errc::bad_argument, "repair: class " + std::to_string(cv.class_id) +
                                   " was flagged without an ExRe-suspected source");
    }
    for (const auto id : cv.poisoned_ids) {
      out.ids.insert(id);
      out.relabel_to[id] = source;
    }
  }
  if (out.ids.empty()) fail(Errc::nothing_to_repair, "repair: report flags no poisonous class");
  return out;
}

}  // namespace detail

/// Relabel the flagged samples with their ExRe-suspected source class and
/// continue training from the current weights until the relabeled samples
/// reach the convergence accuracy or the epoch cap. A small clean replay
/// set is mixed in each epoch unless paper_faithful is set.
inline RepairOutcome relabel_and_retrain(const Model& m, const Dataset& d,
                                         const DetectionReport& report, const TrainConfig& cfg,
                                         const RepairOptions& opts, const Dataset* clean_test = nullptr,
                                         const PoisonPlan* plan = nullptr) {
  const auto flagged = detail::collect_flagged(report, true);

  Dataset relabeled = d;
  std::vector<std::size_t> focus_rows;
  std::vector<std::size_t> clean_rows;
  for (std::size_t i = 0; i < relabeled.samples.size(); ++i) {
    auto& s = relabeled.samples[i];
    const auto it = flagged.relabel_to.find(s.id);
    if (it != flagged.relabel_to.end()) {
      s.label = it->second;
      focus_rows.push_back(i);
    } else {
      clean_rows.push_back(i);
    }
  }

  RepairOutcome out;
  out.strategy = RepairStrategy::relabel;
  out.model = m;
  if (clean_test && plan) {
    out.pre = triggered_mix_metrics(m, *clean_test, *plan, opts.triggered_mix_fraction,
                                    mix_seed(opts.seed, 1));
  }

  const Eigen::MatrixXd X = nn::dataset_matrix(relabeled);
  std::vector<int> labels(relabeled.samples.size());
  for (std::size_t i = 0; i < relabeled.samples.size(); ++i) labels[i] = relabeled.samples[i].label;

  std::vector<Eigen::MatrixXd> vW;
  std::vector<Eigen::RowVectorXd> vb;
  for (const auto& layer : out.model.layers) {
    vW.push_back(Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()));
    vb.push_back(Eigen::RowVectorXd::Zero(layer.b.cols()));
  }

  const auto focus_accuracy = [&]() {
    Eigen::MatrixXd Xf(static_cast<Eigen::Index>(focus_rows.size()), X.cols());
    for (std::size_t i = 0; i < focus_rows.size(); ++i) {
      Xf.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(focus_rows[i]));
    }
    const nn::Forward f = nn::forward(out.model, Xf);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < focus_rows.size(); ++i) {
      int best = 0;
      for (int c = 1; c < out.model.n_classes(); ++c) {
        if (f.probs(static_cast<Eigen::Index>(i), c) > f.probs(static_cast<Eigen::Index>(i), best)) best = c;
      }
      if (best == labels[focus_rows[i]]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(focus_rows.size());
  };

  out.converged = false;
  nn::Gradients g;
  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    Rng rng(mix_seed(opts.seed, 2000 + static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order = focus_rows;
    if (!opts.paper_faithful && !clean_rows.empty()) {
      auto replay = clean_rows;
      rng.shuffle(replay);
      const auto n_replay = static_cast<std::size_t>(
          std::lround(opts.replay_fraction * static_cast<double>(clean_rows.size())));
      replay.resize(std::min(replay.size(), std::max<std::size_t>(n_replay, 1)));
      order.insert(order.end(), replay.begin(), replay.end());
    }
    rng.shuffle(order);

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t bs =
          std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      Eigen::MatrixXd Xb(static_cast<Eigen::Index>(bs), X.cols());
      std::vector<int> yb(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        Xb.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(order[start + i]));
        yb[i] = labels[order[start + i]];
      }
      const double loss = nn::loss_and_gradients(out.model, Xb, yb, g);
      if (!std::isfinite(loss)) {
        fail(Errc::divergence, "repair: loss diverged at epoch " + std::to_string(epoch));
      }
      for (std::size_t l = 0; l < out.model.layers.size(); ++l) {
        vW[l] = cfg.momentum * vW[l] - cfg.learning_rate * g.dW[l];
        vb[l] = cfg.momentum * vb[l] - cfg.learning_rate * g.db[l];
        out.model.layers[l].W += vW[l];
        out.model.layers[l].b += vb[l];
      }
    }
    out.epochs_used = epoch + 1;
    if (focus_accuracy() >= opts.convergence_accuracy) {
      out.converged = true;
      break;
    }
  }

  if (clean_test && plan) {
    out.post = triggered_mix_metrics(out.model, *clean_test, *plan, opts.triggered_mix_fraction,
                                     mix_seed(opts.seed, 1));
    out.failed = !out.converged || out.post.max_triggered_error > opts.backdoor_error_bound ||
                 out.post.clean_accuracy < out.pre.clean_accuracy - 0.01;
  } else {
    out.failed = !out.converged;
  }
  return out;
}

/// Drop the flagged samples and retrain from scratch.
inline RepairOutcome remove_and_retrain(const Dataset& d, const DetectionReport& report,
                                        const TrainConfig& cfg, const RepairOptions& opts,
                                        const Model* pre_model = nullptr,
                                        const Dataset* clean_test = nullptr,
                                        const PoisonPlan* plan = nullptr) {
  const auto flagged = detail::collect_flagged(report, false);

  Dataset kept;
  kept.n_classes = d.n_classes;
  kept.shape = d.shape;
  for (const auto& s : d.samples) {
    if (!flagged.ids.count(s.id)) kept.samples.push_back(s);
  }
  if (kept.samples.empty()) fail(Errc::bad_argument, "repair: nothing left to train on");

  RepairOutcome out;
  out.strategy = RepairStrategy::remove;
  if (pre_model && clean_test && plan) {
    out.pre = triggered_mix_metrics(*pre_model, *clean_test, *plan, opts.triggered_mix_fraction,
                                    mix_seed(opts.seed, 1));
  }
  TrainConfig fresh_cfg = cfg;
  fresh_cfg.seed = mix_seed(opts.seed, 0xF5);
  out.model = train(kept, fresh_cfg);
  out.epochs_used = out.model.epochs_run;
  out.converged = true;
  if (clean_test && plan) {
    out.post = triggered_mix_metrics(out.model, *clean_test, *plan, opts.triggered_mix_fraction,
                                     mix_seed(opts.seed, 1));
    out.failed = out.post.max_triggered_error > opts.backdoor_error_bound;
  }
  return out;
}

}  // namespace acbd
