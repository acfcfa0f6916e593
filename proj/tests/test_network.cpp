#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "acbd/dataset.hpp"
#include "acbd/network.hpp"

using namespace acbd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static const fs::path dir = [] {
    auto p = fs::temp_directory_path() / "acbd_test_network";
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

/// Two Gaussian blobs per class in feature space; easily separable.
Dataset blob_dataset(int per_class, int n_classes, int width, std::uint64_t seed,
                     double spread = 0.15) {
  Dataset d;
  d.n_classes = n_classes;
  d.shape = {Modality::image, 1, width, 1, 0};
  Rng rng(seed);
  std::vector<std::vector<double>> centers;
  for (int c = 0; c < n_classes; ++c) {
    std::vector<double> center;
    for (int j = 0; j < width; ++j) center.push_back(rng.uniform());
    centers.push_back(std::move(center));
  }
  std::int64_t id = 0;
  for (int c = 0; c < n_classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      LabeledSample s;
      s.id = id++;
      s.label = c;
      for (int j = 0; j < width; ++j) {
        const double v = centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] +
                         spread * rng.normal();
        s.features.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
      }
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

double finite_difference(Model& m, const Eigen::MatrixXd& X, const std::vector<int>& labels,
                         double& param) {
  const double h = 1e-6;
  const double orig = param;
  param = orig + h;
  const double up = nn::cross_entropy(nn::forward(m, X).probs, labels);
  param = orig - h;
  const double down = nn::cross_entropy(nn::forward(m, X).probs, labels);
  param = orig;
  return (up - down) / (2.0 * h);
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences within 1e-4") {
  const Dataset d = blob_dataset(5, 2, 5, 404, 0.3);  // 10-sample toy problem
  TrainConfig cfg;
  cfg.hidden_sizes = {6, 8};
  cfg.seed = 7;
  Model m = nn::init_model(d.shape.feature_width(), d.n_classes, cfg);
  const Eigen::MatrixXd X = nn::dataset_matrix(d);
  std::vector<int> labels;
  for (const auto& s : d.samples) labels.push_back(s.label);

  nn::Gradients g;
  nn::loss_and_gradients(m, X, labels, g);

  double worst = 0.0;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    for (Eigen::Index i = 0; i < m.layers[l].W.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.layers[l].W.cols(); ++j) {
        const double fd = finite_difference(m, X, labels, m.layers[l].W(i, j));
        const double an = g.dW[l](i, j);
        const double rel = std::abs(an - fd) / std::max(1e-8, std::abs(an) + std::abs(fd));
        worst = std::max(worst, rel);
      }
    }
    for (Eigen::Index j = 0; j < m.layers[l].b.cols(); ++j) {
      const double fd = finite_difference(m, X, labels, m.layers[l].b(j));
      const double an = g.db[l](j);
      const double rel = std::abs(an - fd) / std::max(1e-8, std::abs(an) + std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("softmax rows sum to one and activations are nonnegative") {
  const Dataset d = blob_dataset(20, 3, 12, 11);
  TrainConfig cfg;
  cfg.hidden_sizes = {16, 8};
  cfg.max_epochs = 3;
  const Model m = train(d, cfg);
  const Eigen::MatrixXd X = nn::dataset_matrix(d);
  const nn::Forward f = nn::forward(m, X);
  for (Eigen::Index i = 0; i < f.probs.rows(); ++i) {
    REQUIRE(std::abs(f.probs.row(i).sum() - 1.0) <= 1e-6);
  }
  for (const auto& s : d.samples) {
    const Eigen::VectorXd a = activations(m, s);
    REQUIRE(a.size() == 8);
    REQUIRE(a.minCoeff() >= 0.0);
  }
}

TEST_CASE("prediction ties break toward the lowest class index") {
  TrainConfig cfg;
  cfg.hidden_sizes = {4, 8};
  Model m = nn::init_model(6, 3, cfg);
  for (auto& layer : m.layers) {
    layer.W.setZero();
    layer.b.setZero();
  }
  LabeledSample s;
  s.features.assign(6, 0.0f);
  CHECK(predict(m, s) == 0);
}

TEST_CASE("activations defaults: length 128, zero input with zero weights gives zeros") {
  TrainConfig cfg;  // default hidden sizes [512, 128]
  Model m = nn::init_model(784, 10, cfg);
  LabeledSample zero;
  zero.features.assign(784, 0.0f);
  REQUIRE(activations(m, zero).size() == 128);

  for (auto& layer : m.layers) {
    layer.W.setZero();
    layer.b.setZero();
  }
  const Eigen::VectorXd a = activations(m, zero);
  CHECK(a.cwiseAbs().maxCoeff() == 0.0);

  // identical samples give identical activation vectors
  Model trained = nn::init_model(784, 10, cfg);
  LabeledSample other = zero;
  other.features[3] = 0.7f;
  const Eigen::VectorXd a1 = activations(trained, other);
  const Eigen::VectorXd a2 = activations(trained, other);
  CHECK(a1 == a2);
}

TEST_CASE("width mismatches are rejected") {
  TrainConfig cfg;
  cfg.hidden_sizes = {4, 8};
  const Model m = nn::init_model(6, 2, cfg);
  LabeledSample s;
  s.features.assign(5, 0.0f);
  try {
    predict(m, s);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::width_mismatch);
  }
  CHECK_THROWS_AS(activations(m, s), Error);
}

TEST_CASE("training fits separable blobs and decreases the loss") {
  const Dataset d = blob_dataset(60, 3, 10, 21);
  TrainConfig cfg;
  cfg.hidden_sizes = {32, 8};
  cfg.max_epochs = 20;
  cfg.seed = 3;
  const Model m = train(d, cfg);
  REQUIRE_FALSE(m.epoch_losses.empty());
  CHECK(m.final_loss < m.initial_loss);

  std::size_t hits = 0;
  for (const auto& s : d.samples) {
    if (predict(m, s) == s.label) ++hits;
  }
  CHECK(static_cast<double>(hits) / static_cast<double>(d.samples.size()) >= 0.95);
}

TEST_CASE("a single sample for one epoch still decreases the loss") {
  Dataset d = blob_dataset(1, 1, 6, 31);
  d.n_classes = 2;  // two outputs, one observed class
  TrainConfig cfg;
  cfg.hidden_sizes = {4, 8};
  cfg.batch_size = 1;
  cfg.max_epochs = 1;
  const Model m = train(d, cfg);
  REQUIRE(m.epochs_run == 1);
  CHECK(m.final_loss < m.initial_loss);
}

TEST_CASE("training is bitwise deterministic under a fixed seed") {
  const Dataset d = blob_dataset(25, 2, 8, 41);
  TrainConfig cfg;
  cfg.hidden_sizes = {12, 8};
  cfg.max_epochs = 5;
  cfg.seed = 99;
  const Model a = train(d, cfg);
  const Model b = train(d, cfg);
  REQUIRE(a.layers.size() == b.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    REQUIRE(a.layers[l].W == b.layers[l].W);
    REQUIRE(a.layers[l].b == b.layers[l].b);
  }
  REQUIRE(a.epoch_losses == b.epoch_losses);
}

TEST_CASE("divergence is reported with the offending epoch") {
  const Dataset d = blob_dataset(10, 2, 6, 51);
  TrainConfig cfg;
  cfg.hidden_sizes = {8, 8};
  cfg.learning_rate = 1e9;
  cfg.max_epochs = 10;
  try {
    train(d, cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::divergence);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("train config validation") {
  const Dataset d = blob_dataset(4, 2, 6, 61);
  TrainConfig cfg;
  SECTION("last hidden below 8") {
    cfg.hidden_sizes = {16, 4};
    CHECK_THROWS_AS(train(d, cfg), Error);
  }
  SECTION("no hidden layers") {
    cfg.hidden_sizes = {};
    CHECK_THROWS_AS(train(d, cfg), Error);
  }
  SECTION("empty dataset") {
    CHECK_THROWS_AS(train(Dataset{}, TrainConfig{}), Error);
  }
}

TEST_CASE("collect_activations partitions the dataset by prediction") {
  const Dataset d = blob_dataset(30, 3, 10, 71);
  TrainConfig cfg;
  cfg.hidden_sizes = {16, 8};
  cfg.max_epochs = 10;
  const Model m = train(d, cfg);
  const ActivationMatrix am = collect_activations(m, d);
  REQUIRE(am.segments.size() == 3);
  std::size_t total = 0;
  std::set<std::int64_t> seen;
  for (const auto& seg : am.segments) {
    total += seg.ids.size();
    REQUIRE(static_cast<std::size_t>(seg.rows.rows()) == seg.ids.size());
    for (const auto id : seg.ids) REQUIRE(seen.insert(id).second);
    for (const auto id : seg.ids) {
      // segment key is the model's prediction
      const auto& s = *std::find_if(d.samples.begin(), d.samples.end(),
                                    [&](const LabeledSample& x) { return x.id == id; });
      REQUIRE(predict(m, s) == seg.class_id);
    }
  }
  CHECK(total == d.samples.size());
}

TEST_CASE("a degenerate all-zero model puts every sample in segment 0") {
  const Dataset d = blob_dataset(10, 2, 6, 81);
  TrainConfig cfg;
  cfg.hidden_sizes = {4, 8};
  Model m = nn::init_model(6, 2, cfg);
  for (auto& layer : m.layers) {
    layer.W.setZero();
    layer.b.setZero();
  }
  const ActivationMatrix am = collect_activations(m, d);
  CHECK(am.segments[0].ids.size() == d.samples.size());
  CHECK(am.segments[1].ids.empty());

  // segmenting by label instead recovers the true histogram
  const ActivationMatrix by_label = collect_activations(m, d, SegmentBy::label);
  CHECK(by_label.segments[0].ids.size() == 10);
  CHECK(by_label.segments[1].ids.size() == 10);
}

TEST_CASE("evaluate reports clean accuracy and omits backdoor metrics for empty plans") {
  const Dataset d = blob_dataset(30, 2, 8, 91);
  TrainConfig cfg;
  cfg.hidden_sizes = {16, 8};
  cfg.max_epochs = 10;
  const Model m = train(d, cfg);
  const EvalMetrics metrics = evaluate(m, d, PoisonPlan{});
  CHECK(metrics.clean_accuracy >= 0.9);
  REQUIRE(metrics.per_class_accuracy.size() == 2);
  CHECK(metrics.backdoors.empty());
}

TEST_CASE("checkpoints round-trip byte-identically") {
  const Dataset d = blob_dataset(15, 2, 8, 101);
  TrainConfig cfg;
  cfg.hidden_sizes = {10, 8};
  cfg.max_epochs = 4;
  const Model m = train(d, cfg);

  const auto p1 = temp_dir() / "model_a.ckpt";
  const auto p2 = temp_dir() / "model_b.ckpt";
  save_model(m, p1.string());
  const Model loaded = load_model(p1.string());
  save_model(loaded, p2.string());

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::vector<char> b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::vector<char> b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE_FALSE(b1.empty());
  CHECK(b1 == b2);

  REQUIRE(loaded.layers.size() == m.layers.size());
  CHECK(loaded.config.hidden_sizes == m.config.hidden_sizes);
  CHECK(loaded.config.seed == m.config.seed);
  CHECK(loaded.epochs_run == m.epochs_run);

  // float32 quantization keeps predictions aligned on well-separated data
  std::size_t agree = 0;
  for (const auto& s : d.samples) {
    if (predict(m, s) == predict(loaded, s)) ++agree;
  }
  CHECK(agree == d.samples.size());

  std::array<char, 5> magic{};
  std::ifstream probe(p1, std::ios::binary);
  probe.read(magic.data(), 5);
  CHECK(std::string_view(magic.data(), 5) == "ACBD1");
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto p = temp_dir() / "bogus.ckpt";
  std::ofstream(p, std::ios::binary) << "NOTACHECKPOINT";
  try {
    load_model(p.string());
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::io_failure);
  }
}
