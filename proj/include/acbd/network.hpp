#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "acbd/dataset.hpp"
#include "acbd/error.hpp"
#include "acbd/poisoner.hpp"
#include "acbd/rng.hpp"

namespace acbd {

struct TrainConfig {
  std::vector<int> hidden_sizes{512, 128};
  double learning_rate = 0.05;
  double momentum = 0.9;
  int batch_size = 64;
  int max_epochs = 30;
  int patience = 3;                  // epochs without relative improvement before stopping
  double min_rel_improvement = 1e-3;
  std::uint64_t seed = 1;

  void validate() const {
    if (hidden_sizes.empty()) fail(Errc::bad_argument, "train config: needs >= 1 hidden layer");
    for (int h : hidden_sizes) {
      if (h <= 0) fail(Errc::bad_argument, "train config: hidden sizes must be positive");
    }
    if (hidden_sizes.back() < 8) {
      fail(Errc::bad_argument, "train config: last hidden size must be >= 8");
    }
    if (learning_rate <= 0 || momentum < 0 || batch_size <= 0 || max_epochs <= 0 || patience <= 0) {
      fail(Errc::bad_argument, "train config: all parameters must be positive");
    }
  }
};

/// Fully connected net: affine+ReLU hidden layers, affine+softmax output.
struct Model {
  struct Layer {
    Eigen::MatrixXd W;     // in x out
    Eigen::RowVectorXd b;  // 1 x out
  };
  std::vector<Layer> layers;
  TrainConfig config;
  int epochs_run = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;  // full-data loss after training
  std::vector<double> epoch_losses;

  int input_width() const { return static_cast<int>(layers.front().W.rows()); }
  int n_classes() const { return static_cast<int>(layers.back().W.cols()); }
  int last_hidden_width() const { return static_cast<int>(layers.back().W.rows()); }
};

namespace nn {

/// He-style uniform init, scaled by fan-in, from the seeded stream.
inline Model init_model(int input_width, int n_classes, const TrainConfig& cfg) {
  Model m;
  m.config = cfg;
  Rng rng(mix_seed(cfg.seed, 0));
  std::vector<int> dims;
  dims.push_back(input_width);
  dims.insert(dims.end(), cfg.hidden_sizes.begin(), cfg.hidden_sizes.end());
  dims.push_back(n_classes);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Model::Layer layer;
    layer.W.resize(dims[l], dims[l + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[l]));
    for (Eigen::Index i = 0; i < layer.W.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.W.cols(); ++j) {
        layer.W(i, j) = rng.uniform(-limit, limit);
      }
    }
    layer.b = Eigen::RowVectorXd::Zero(dims[l + 1]);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

/// Numerically stable in-place softmax over rows.
inline void softmax_rows(Eigen::MatrixXd& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - mx).exp();
    logits.row(i) /= logits.row(i).sum();
  }
}

struct Forward {
  std::vector<Eigen::MatrixXd> hidden;  // post-ReLU, one per hidden layer
  Eigen::MatrixXd probs;                // softmax rows, batch x classes
};

inline Forward forward(const Model& m, const Eigen::MatrixXd& X) {
  Forward f;
  const Eigen::MatrixXd* cur = &X;
  for (std::size_t l = 0; l + 1 < m.layers.size(); ++l) {
    Eigen::MatrixXd h = (*cur * m.layers[l].W).rowwise() + m.layers[l].b;
    h = h.cwiseMax(0.0);
    f.hidden.push_back(std::move(h));
    cur = &f.hidden.back();
  }
  f.probs = (*cur * m.layers.back().W).rowwise() + m.layers.back().b;
  softmax_rows(f.probs);
  return f;
}

inline double cross_entropy(const Eigen::MatrixXd& probs, const std::vector<int>& labels) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    // log(0) = -inf on a confidently-wrong row; surfaced as divergence
    loss -= std::log(probs(i, labels[static_cast<std::size_t>(i)]));
  }
  return loss / static_cast<double>(probs.rows());
}

struct Gradients {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::RowVectorXd> db;
};

/// Mean cross-entropy over the batch plus analytic gradients.
inline double loss_and_gradients(const Model& m, const Eigen::MatrixXd& X,
                                 const std::vector<int>& labels, Gradients& g) {
  const Forward f = forward(m, X);
  const double loss = cross_entropy(f.probs, labels);
  const auto batch = static_cast<double>(X.rows());

  g.dW.resize(m.layers.size());
  g.db.resize(m.layers.size());

  Eigen::MatrixXd delta = f.probs;  // dL/dlogits = (p - onehot)/batch
  for (Eigen::Index i = 0; i < delta.rows(); ++i) {
    delta(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  delta /= batch;

  for (std::size_t l = m.layers.size(); l-- > 0;) {
    const Eigen::MatrixXd& input = l == 0 ? X : f.hidden[l - 1];
    g.dW[l] = input.transpose() * delta;
    g.db[l] = delta.colwise().sum();
    if (l > 0) {
      delta = delta * m.layers[l].W.transpose();
      delta = delta.cwiseProduct((f.hidden[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return loss;
}

inline Eigen::MatrixXd dataset_matrix(const Dataset& d, const std::vector<std::size_t>& rows) {
  const int width = d.shape.feature_width();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& f = d.samples[rows[i]].features;
    for (int j = 0; j < width; ++j) X(static_cast<Eigen::Index>(i), j) = f[static_cast<std::size_t>(j)];
  }
  return X;
}

inline Eigen::MatrixXd dataset_matrix(const Dataset& d) {
  std::vector<std::size_t> rows(d.samples.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return dataset_matrix(d, rows);
}

}  // namespace nn

/// Mini-batch SGD with momentum on cross-entropy. Deterministic given
/// cfg.seed. Non-finite loss aborts with the offending epoch.
inline Model train(const Dataset& d, const TrainConfig& cfg) {
  cfg.validate();
  if (d.samples.empty()) fail(Errc::bad_argument, "train: empty dataset");
  d.validate();

  Model m = nn::init_model(d.shape.feature_width(), d.n_classes, cfg);
  const Eigen::MatrixXd X = nn::dataset_matrix(d);
  std::vector<int> labels(d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) labels[i] = d.samples[i].label;

  m.initial_loss = nn::cross_entropy(nn::forward(m, X).probs, labels);

  std::vector<Eigen::MatrixXd> vW;
  std::vector<Eigen::RowVectorXd> vb;
  for (const auto& layer : m.layers) {
    vW.push_back(Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()));
    vb.push_back(Eigen::RowVectorXd::Zero(layer.b.cols()));
  }

  const auto n = d.samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best_loss = std::numeric_limits<double>::infinity();
  int stall = 0;
  nn::Gradients g;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t bs = std::min(static_cast<std::size_t>(cfg.batch_size), n - start);
      Eigen::MatrixXd Xb(static_cast<Eigen::Index>(bs), X.cols());
      std::vector<int> yb(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        Xb.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(order[start + i]));
        yb[i] = labels[order[start + i]];
      }
      const double loss = nn::loss_and_gradients(m, Xb, yb, g);
      epoch_loss += loss * static_cast<double>(bs);
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        vW[l] = cfg.momentum * vW[l] - cfg.learning_rate * g.dW[l];
        vb[l] = cfg.momentum * vb[l] - cfg.learning_rate * g.db[l];
        m.layers[l].W += vW[l];
        m.layers[l].b += vb[l];
      }
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      fail(Errc::divergence, "train: loss diverged at epoch " + std::to_string(epoch));
    }
    m.epoch_losses.push_back(epoch_loss);
    m.epochs_run = epoch + 1;

    if (epoch_loss < best_loss * (1.0 - cfg.min_rel_improvement)) {
      best_loss = epoch_loss;
      stall = 0;
    } else if (++stall >= cfg.patience) {
      break;
    }
  }
  m.final_loss = nn::cross_entropy(nn::forward(m, X).probs, labels);
  return m;
}

inline void check_width(const Model& m, const LabeledSample& s) {
  if (static_cast<int>(s.features.size()) != m.input_width()) {
    fail(Errc::width_mismatch, "model expects width " + std::to_string(m.input_width()) +
                                   ", sample has " + std::to_string(s.features.size()));
  }
}

/// Argmax of the softmax output; ties break toward the lowest class index.
inline int predict(const Model& m, const LabeledSample& s) {
  check_width(m, s);
  Eigen::MatrixXd x(1, m.input_width());
  for (int j = 0; j < m.input_width(); ++j) x(0, j) = s.features[static_cast<std::size_t>(j)];
  const Eigen::MatrixXd probs = nn::forward(m, x).probs;
  int best = 0;
  for (int c = 1; c < m.n_classes(); ++c) {
    if (probs(0, c) > probs(0, best)) best = c;
  }
  return best;
}

/// Post-ReLU activation row of the last hidden layer.
inline Eigen::VectorXd activations(const Model& m, const LabeledSample& s) {
  check_width(m, s);
  Eigen::MatrixXd x(1, m.input_width());
  for (int j = 0; j < m.input_width(); ++j) x(0, j) = s.features[static_cast<std::size_t>(j)];
  const nn::Forward f = nn::forward(m, x);
  return f.hidden.back().row(0).transpose();
}

enum class SegmentBy { predicted, label };

struct ActivationMatrix {
  struct Segment {
    int class_id = 0;
    std::vector<std::int64_t> ids;
    Eigen::MatrixXd rows;  // one activation row per id
  };
  std::vector<Segment> segments;  // exactly one per class
};

struct BatchOutput {
  std::vector<int> predictions;
  Eigen::MatrixXd last_hidden;
};

inline BatchOutput predict_batch(const Model& m, const Dataset& d) {
  if (d.shape.feature_width() != m.input_width()) {
    fail(Errc::width_mismatch, "predict_batch: dataset width mismatch");
  }
  BatchOutput out;
  out.predictions.resize(d.samples.size());
  out.last_hidden.resize(static_cast<Eigen::Index>(d.samples.size()), m.last_hidden_width());
  const std::size_t chunk = 1024;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < d.samples.size(); start += chunk) {
    const std::size_t bs = std::min(chunk, d.samples.size() - start);
    rows.resize(bs);
    std::iota(rows.begin(), rows.end(), start);
    const Eigen::MatrixXd Xb = nn::dataset_matrix(d, rows);
    const nn::Forward f = nn::forward(m, Xb);
    for (std::size_t i = 0; i < bs; ++i) {
      int best = 0;
      for (int c = 1; c < m.n_classes(); ++c) {
        if (f.probs(static_cast<Eigen::Index>(i), c) > f.probs(static_cast<Eigen::Index>(i), best)) {
          best = c;
        }
      }
      out.predictions[start + i] = best;
      out.last_hidden.row(static_cast<Eigen::Index>(start + i)) =
          f.hidden.back().row(static_cast<Eigen::Index>(i));
    }
  }
  return out;
}

/// Segment every sample's last-hidden activation row by the model's
/// prediction for it (or by label when asked). The segments partition the
/// dataset exactly.
inline ActivationMatrix collect_activations(const Model& m, const Dataset& d,
                                            SegmentBy by = SegmentBy::predicted) {
  const BatchOutput out = predict_batch(m, d);
  ActivationMatrix am;
  std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(d.n_classes));
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const int key = by == SegmentBy::predicted ? out.predictions[i] : d.samples[i].label;
    buckets[static_cast<std::size_t>(key)].push_back(i);
  }
  for (int c = 0; c < d.n_classes; ++c) {
    ActivationMatrix::Segment seg;
    seg.class_id = c;
    const auto& rows = buckets[static_cast<std::size_t>(c)];
    seg.ids.reserve(rows.size());
    seg.rows.resize(static_cast<Eigen::Index>(rows.size()), m.last_hidden_width());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      seg.ids.push_back(d.samples[rows[i]].id);
      seg.rows.row(static_cast<Eigen::Index>(i)) = out.last_hidden.row(static_cast<Eigen::Index>(rows[i]));
    }
    am.segments.push_back(std::move(seg));
  }
  return am;
}

struct EvalMetrics {
  double clean_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  struct Backdoor {
    int source = 0;
    int target = 0;
    int n = 0;
    double success_rate = 0.0;  // triggered source samples predicted as target
  };
  std::vector<Backdoor> backdoors;
};

/// Clean accuracy plus, per plan entry, the backdoor success rate measured
/// on triggered source-class samples from the (disjoint) test set.
inline EvalMetrics evaluate(const Model& m, const Dataset& clean_test, const PoisonPlan& plan) {
  EvalMetrics metrics;
  const BatchOutput out = predict_batch(m, clean_test);
  std::vector<std::size_t> correct(static_cast<std::size_t>(clean_test.n_classes), 0);
  std::vector<std::size_t> totals(static_cast<std::size_t>(clean_test.n_classes), 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < clean_test.samples.size(); ++i) {
    const auto label = static_cast<std::size_t>(clean_test.samples[i].label);
    totals[label]++;
    if (out.predictions[i] == clean_test.samples[i].label) {
      hits++;
      correct[label]++;
    }
  }
  metrics.clean_accuracy = static_cast<double>(hits) / static_cast<double>(clean_test.samples.size());
  for (int c = 0; c < clean_test.n_classes; ++c) {
    const auto t = totals[static_cast<std::size_t>(c)];
    metrics.per_class_accuracy.push_back(
        t == 0 ? 0.0 : static_cast<double>(correct[static_cast<std::size_t>(c)]) / static_cast<double>(t));
  }

  for (const auto& entry : plan.entries) {
    EvalMetrics::Backdoor bd;
    bd.source = entry.source;
    bd.target = entry.target;
    Dataset triggered;
    triggered.n_classes = clean_test.n_classes;
    triggered.shape = clean_test.shape;
    for (const auto& s : clean_test.samples) {
      if (s.label == entry.source) {
        triggered.samples.push_back(apply_trigger(s, entry.trigger, clean_test.shape));
      }
    }
    bd.n = static_cast<int>(triggered.samples.size());
    if (bd.n > 0) {
      const BatchOutput tout = predict_batch(m, triggered);
      const auto n_target = static_cast<double>(
          std::count(tout.predictions.begin(), tout.predictions.end(), entry.target));
      bd.success_rate = n_target / static_cast<double>(bd.n);
    }
    metrics.backdoors.push_back(bd);
  }
  return metrics;
}

// ---------------------------------------------------------------------------
// checkpoint: "ACBD1", layer count, per layer rows/cols (u32 LE) then
// weights and biases (f32 LE), then a JSON trailer with config and metrics
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> b{
      static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
      static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline std::uint32_t read_u32_le(std::istream& in, const std::string& ctx) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (in.gcount() != 4) fail(Errc::io_failure, ctx + ": truncated checkpoint");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline void write_f32_le(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32_le(out, bits);
}

inline float read_f32_le(std::istream& in, const std::string& ctx) {
  const std::uint32_t bits = read_u32_le(in, ctx);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"hidden_sizes", cfg.hidden_sizes},
          {"learning_rate", cfg.learning_rate},
          {"momentum", cfg.momentum},
          {"batch_size", cfg.batch_size},
          {"max_epochs", cfg.max_epochs},
          {"patience", cfg.patience},
          {"min_rel_improvement", cfg.min_rel_improvement},
          {"seed", cfg.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.momentum = j.at("momentum").get<double>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.max_epochs = j.at("max_epochs").get<int>();
  cfg.patience = j.at("patience").get<int>();
  cfg.min_rel_improvement = j.at("min_rel_improvement").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

inline void save_model(const Model& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io_failure, "cannot open " + path + " for writing");
  out.write("ACBD1", 5);
  detail::write_u32_le(out, static_cast<std::uint32_t>(m.layers.size()));
  for (const auto& layer : m.layers) {
    detail::write_u32_le(out, static_cast<std::uint32_t>(layer.W.rows()));
    detail::write_u32_le(out, static_cast<std::uint32_t>(layer.W.cols()));
    for (Eigen::Index i = 0; i < layer.W.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.W.cols(); ++j) {
        detail::write_f32_le(out, static_cast<float>(layer.W(i, j)));
      }
    }
    for (Eigen::Index j = 0; j < layer.b.cols(); ++j) {
      detail::write_f32_le(out, static_cast<float>(layer.b(j)));
    }
  }
  nlohmann::json trailer;
  trailer["config"] = train_config_to_json(m.config);
  trailer["metrics"] = {{"epochs_run", m.epochs_run},
                        {"initial_loss", m.initial_loss},
                        {"final_loss", m.final_loss},
                        {"epoch_losses", m.epoch_losses}};
  const std::string s = trailer.dump();
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open " + path);
  std::array<char, 5> magic{};
  in.read(magic.data(), 5);
  if (in.gcount() != 5 || std::string_view(magic.data(), 5) != "ACBD1") {
    fail(Errc::io_failure, path + ": not an ACBD1 checkpoint");
  }
  Model m;
  const std::uint32_t n_layers = detail::read_u32_le(in, path);
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    Model::Layer layer;
    const std::uint32_t rows = detail::read_u32_le(in, path);
    const std::uint32_t cols = detail::read_u32_le(in, path);
    layer.W.resize(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < cols; ++j) {
        layer.W(i, j) = detail::read_f32_le(in, path);
      }
    }
    layer.b.resize(cols);
    for (std::uint32_t j = 0; j < cols; ++j) layer.b(j) = detail::read_f32_le(in, path);
    m.layers.push_back(std::move(layer));
  }
  std::string trailer((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!trailer.empty()) {
    const auto j = nlohmann::json::parse(trailer, nullptr, false);
    if (j.is_discarded()) fail(Errc::io_failure, path + ": corrupt checkpoint trailer");
    m.config = train_config_from_json(j.at("config"));
    m.epochs_run = j.at("metrics").value("epochs_run", 0);
    m.initial_loss = j.at("metrics").value("initial_loss", 0.0);
    m.final_loss = j.at("metrics").value("final_loss", 0.0);
    m.epoch_losses = j.at("metrics").value("epoch_losses", std::vector<double>{});
  }
  return m;
}

}  // namespace acbd
