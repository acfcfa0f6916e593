// Command-line front end: poison / detect / repair / eval / summarize plus a
// synthetic corpus generator. Every run writes a config.echo.json capturing
// the effective parameters so any artifact can be reproduced byte-for-byte.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "acbd/acbd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace acbd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitPoisonFound = 2;

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) fail(Errc::io_failure, "cannot open " + p.string());
  json j;
  in >> j;
  return j;
}

void write_json_file(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(Errc::io_failure, "cannot open " + p.string() + " for writing");
  out << j.dump(2) << '\n';
}

void write_echo(const fs::path& out_dir, const std::string& command, const json& args) {
  write_json_file(out_dir / "config.echo.json", json{{"command", command}, {"args", args}});
}

// data directory conventions: IDX pairs for images, TSV for text
struct DataDir {
  fs::path dir;
  bool has_train_idx() const {
    return fs::exists(dir / "train-images-idx3-ubyte") && fs::exists(dir / "train-labels-idx1-ubyte");
  }
  bool has_train_tsv() const { return fs::exists(dir / "train.tsv"); }
  bool has_test() const {
    return (fs::exists(dir / "test-images-idx3-ubyte") && fs::exists(dir / "test-labels-idx1-ubyte")) ||
           fs::exists(dir / "test.tsv");
  }

  Dataset load_train() const {
    if (has_train_idx()) {
      return load_idx((dir / "train-images-idx3-ubyte").string(),
                      (dir / "train-labels-idx1-ubyte").string());
    }
    if (has_train_tsv()) return load_tsv((dir / "train.tsv").string());
    fail(Errc::io_failure, "no train data found under " + dir.string() +
                               " (expected train-images-idx3-ubyte/train-labels-idx1-ubyte or train.tsv)");
  }

  Dataset load_test() const {
    if (fs::exists(dir / "test-images-idx3-ubyte")) {
      return load_idx((dir / "test-images-idx3-ubyte").string(),
                      (dir / "test-labels-idx1-ubyte").string());
    }
    if (fs::exists(dir / "test.tsv")) return load_tsv((dir / "test.tsv").string());
    fail(Errc::io_failure, "no test data found under " + dir.string());
  }

  void write_train(const Dataset& d) const {
    if (d.shape.modality == Modality::image) {
      write_idx(d, (dir / "train-images-idx3-ubyte").string(),
                (dir / "train-labels-idx1-ubyte").string());
    } else {
      write_tsv(d, (dir / "train.tsv").string());
    }
  }

  void write_test(const Dataset& d) const {
    if (d.shape.modality == Modality::image) {
      write_idx(d, (dir / "test-images-idx3-ubyte").string(),
                (dir / "test-labels-idx1-ubyte").string());
    } else {
      write_tsv(d, (dir / "test.tsv").string());
    }
  }
};

// provenance mask sidecar: evaluation-only ground truth
json mask_to_json(const Dataset& d) {
  json j;
  auto& ids = j["poisoned_ids"] = json::array();
  auto& sources = j["sources"] = json::object();
  for (const auto& s : d.samples) {
    if (!s.poisoned) continue;
    ids.push_back(s.id);
    sources[std::to_string(s.id)] = s.source_class;
  }
  return j;
}

struct Mask {
  std::set<std::int64_t> poisoned;
  std::map<std::int64_t, int> sources;
};

Mask mask_from_json(const json& j) {
  Mask m;
  for (const auto& id : j.at("poisoned_ids")) m.poisoned.insert(id.get<std::int64_t>());
  if (j.contains("sources")) {
    for (const auto& [key, src] : j.at("sources").items()) {
      m.sources[std::stoll(key)] = src.get<int>();
    }
  }
  return m;
}

void apply_mask(Dataset& d, const Mask& m) {
  for (auto& s : d.samples) {
    s.poisoned = m.poisoned.count(s.id) > 0;
    const auto it = m.sources.find(s.id);
    if (it != m.sources.end()) s.source_class = it->second;
  }
}

std::vector<int> parse_remap(const std::string& text, int n_classes) {
  std::vector<int> mapping(static_cast<std::size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) mapping[static_cast<std::size_t>(c)] = c;
  std::stringstream ss(text);
  std::string pair;
  while (std::getline(ss, pair, ',')) {
    const auto colon = pair.find(':');
    if (colon == std::string::npos) fail(Errc::bad_argument, "--remap expects from:to pairs");
    const int from = std::stoi(pair.substr(0, colon));
    const int to = std::stoi(pair.substr(colon + 1));
    if (from < 0 || from >= n_classes) fail(Errc::bad_argument, "--remap class out of range");
    mapping[static_cast<std::size_t>(from)] = to;
  }
  // compress the image to {0..m-1}
  std::map<int, int> compress;
  for (const int to : mapping) compress.emplace(to, 0);
  int next = 0;
  for (auto& [key, val] : compress) val = next++;
  for (auto& to : mapping) to = compress[to];
  return mapping;
}

struct TrainFlags {
  std::string hidden = "512,128";
  double learning_rate = 0.05;
  double momentum = 0.9;
  int batch_size = 64;
  int max_epochs = 30;
  int patience = 3;
  std::uint64_t seed = 1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--hidden", hidden, "comma-separated hidden layer sizes");
    cmd->add_option("--lr", learning_rate, "SGD learning rate");
    cmd->add_option("--momentum", momentum, "SGD momentum");
    cmd->add_option("--batch", batch_size, "mini-batch size");
    cmd->add_option("--epochs", max_epochs, "maximum training epochs");
    cmd->add_option("--patience", patience, "early-stop patience");
  }

  TrainConfig to_config() const {
    TrainConfig cfg;
    cfg.hidden_sizes.clear();
    std::stringstream ss(hidden);
    std::string tok;
    while (std::getline(ss, tok, ',')) cfg.hidden_sizes.push_back(std::stoi(tok));
    cfg.learning_rate = learning_rate;
    cfg.momentum = momentum;
    cfg.batch_size = batch_size;
    cfg.max_epochs = max_epochs;
    cfg.patience = patience;
    cfg.seed = seed;
    return cfg;
  }

  json echo() const {
    return {{"hidden", hidden},        {"lr", learning_rate}, {"momentum", momentum},
            {"batch", batch_size},     {"epochs", max_epochs}, {"patience", patience},
            {"seed", seed}};
  }
};

void write_summaries(const Dataset& d, const DetectionReport& report, const fs::path& out_dir,
                     std::uint64_t seed, int n_topics, int n_words) {
  fs::create_directories(out_dir);
  std::map<std::int64_t, const LabeledSample*> by_id;
  for (const auto& s : d.samples) by_id[s.id] = &s;
  const std::vector<std::string> extra_stops =
      d.shape.modality == Modality::text ? top_corpus_stems(d, 20) : std::vector<std::string>{};

  for (const auto& cv : report.classes) {
    for (int cluster = 0; cluster < 2; ++cluster) {
      const auto& ids = cv.cluster_ids[static_cast<std::size_t>(cluster)];
      if (ids.empty()) continue;
      std::vector<const LabeledSample*> members;
      members.reserve(ids.size());
      for (const auto id : ids) members.push_back(by_id.at(id));
      const std::string stem =
          std::to_string(cv.class_id) + "_" + std::to_string(cluster);
      if (d.shape.modality == Modality::image) {
        write_png(average_image(members, d.shape), (out_dir / (stem + "_avg.png")).string());
        write_png(sprite(members, d.shape, 8, 8, 1024, mix_seed(seed, 0x4000 + cv.class_id)),
                  (out_dir / (stem + "_sprite.png")).string());
      } else {
        const TopicSummary topics =
            lda_topics(members, n_topics, n_words, mix_seed(seed, 0x5000 + cv.class_id), extra_stops);
        json j;
        j["class"] = cv.class_id;
        j["cluster"] = cluster;
        auto& arr = j["topics"] = json::array();
        for (const auto& topic : topics.topics) {
          json t = json::array();
          for (const auto& w : topic) t.push_back({{"stem", w.stem}, {"weight", w.weight}});
          arr.push_back(std::move(t));
        }
        write_json_file(out_dir / (stem + "_topics.json"), j);
      }
    }
  }
}

// --- subcommands -----------------------------------------------------------

struct SynthArgs {
  std::string kind = "digits";
  std::string out;
  int per_class = 400;
  int test_per_class = 100;
  int n_pos = 1500, n_neg = 1500;
  double text_test_fraction = 0.2;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& a) {
  fs::create_directories(a.out);
  DataDir out{a.out};
  if (a.kind == "digits") {
    out.write_train(synth_digits(a.per_class, mix_seed(a.seed, 1)));
    out.write_test(synth_digits(a.test_per_class, mix_seed(a.seed, 2)));
  } else if (a.kind == "text") {
    out.write_train(synth_text_corpus(a.n_pos, a.n_neg, mix_seed(a.seed, 1)));
    const int tp = std::max(1, static_cast<int>(a.n_pos * a.text_test_fraction));
    const int tn = std::max(1, static_cast<int>(a.n_neg * a.text_test_fraction));
    out.write_test(synth_text_corpus(tp, tn, mix_seed(a.seed, 2)));
  } else {
    fail(Errc::bad_argument, "--kind must be digits or text");
  }
  write_echo(a.out, "synth",
             {{"kind", a.kind},
              {"per_class", a.per_class},
              {"test_per_class", a.test_per_class},
              {"n_pos", a.n_pos},
              {"n_neg", a.n_neg},
              {"text_test_fraction", a.text_test_fraction},
              {"seed", a.seed}});
  std::printf("wrote %s corpus to %s\n", a.kind.c_str(), a.out.c_str());
  return kExitOk;
}

struct PoisonArgs {
  std::string data, plan, out, remap;
};

int cmd_poison(const PoisonArgs& a) {
  const DataDir in{a.data};
  fs::create_directories(a.out);
  const DataDir out{a.out};

  Dataset train = in.load_train();
  const json plan_json = read_json_file(a.plan);
  const PoisonPlan plan = plan_from_json(plan_json);

  json remap_echo = json::array();
  if (!a.remap.empty()) {
    const auto mapping = parse_remap(a.remap, train.n_classes);
    for (const int to : mapping) remap_echo.push_back(to);
    train = remap_classes(train, mapping);
  }
  const Dataset poisoned = poison_dataset(train, plan);
  out.write_train(poisoned);
  write_json_file(out.dir / "train.mask.json", mask_to_json(poisoned));

  if (in.has_test()) {
    Dataset test = in.load_test();
    if (!a.remap.empty()) test = remap_classes(test, parse_remap(a.remap, test.n_classes));
    out.write_test(test);
  }
  write_json_file(out.dir / "plan.echo.json", plan_json);
  write_echo(a.out, "poison",
             {{"data", a.data}, {"plan", a.plan}, {"remap", remap_echo}, {"seed", plan.seed}});

  std::size_t n_poison = 0;
  std::set<int> classes;
  for (const auto& s : poisoned.samples) {
    if (s.poisoned) {
      ++n_poison;
      classes.insert(s.label);
    }
  }
  std::printf("poisoned %zu samples across %zu classes -> %s\n", n_poison, classes.size(),
              a.out.c_str());
  return kExitOk;
}

struct DetectArgs {
  std::string data, out, model, mask;
  TrainFlags train_flags;
  int components = 10;
  double threshold_T = 1.0;
  double threshold_sil = 0.125;
  double p_max = 0.33;
  std::string method = "exre";
  std::string segment_by = "predicted";
  bool raw_baseline = false;
  bool exre_both = false;
  bool no_exre = false;
  bool no_summaries = false;
  bool dump_reduced = false;
  int jobs = 1;
  std::uint64_t seed = 1;
  int n_topics = 2, n_words = 6;
};

int cmd_detect(const DetectArgs& a) {
  fs::create_directories(a.out);
  const DataDir in{a.data};
  Dataset train_data = in.load_train();

  fs::path mask_path = a.mask.empty() ? in.dir / "train.mask.json" : fs::path(a.mask);
  if (fs::exists(mask_path)) {
    apply_mask(train_data, mask_from_json(read_json_file(mask_path)));
  }

  TrainConfig tcfg = a.train_flags.to_config();
  tcfg.seed = a.seed;

  AnalysisConfig acfg;
  acfg.components = a.components;
  acfg.exre_threshold = a.threshold_T;
  acfg.silhouette_threshold = a.threshold_sil;
  acfg.p_max = a.p_max;
  acfg.method = method_from_string(a.method);
  acfg.run_exre = !a.no_exre;
  acfg.exre_both_clusters = a.exre_both;
  acfg.raw_baseline = a.raw_baseline;
  acfg.segment_by = a.segment_by == "label" ? SegmentBy::label : SegmentBy::predicted;
  acfg.jobs = a.jobs;
  acfg.seed = a.seed;

  std::optional<Model> model;
  DetectionReport report;
  if (a.raw_baseline) {
    report = detect(train_data, tcfg, acfg);
  } else if (!a.model.empty()) {
    model = load_model(a.model);
    report = detect_with_model(&*model, train_data, model->config, acfg);
  } else {
    model = train(train_data, tcfg);
    save_model(*model, (fs::path(a.out) / "model.ckpt").string());
    report = detect_with_model(&*model, train_data, tcfg, acfg);
  }

  write_json_file(fs::path(a.out) / "report.json", report_to_json(report));
  if (!a.no_summaries) {
    write_summaries(train_data, report, fs::path(a.out) / "summaries", a.seed, a.n_topics, a.n_words);
  }
  if (a.dump_reduced && !a.raw_baseline && model) {
    // recompute the per-class reductions with the per-class seeds and dump
    const fs::path red_dir = fs::path(a.out) / "reduced";
    fs::create_directories(red_dir);
    const ActivationMatrix am = collect_activations(*model, train_data, acfg.segment_by);
    for (const auto& seg : am.segments) {
      if (seg.ids.size() < static_cast<std::size_t>(acfg.components) + 2) continue;
      const std::uint64_t seed_c = mix_seed(acfg.seed, 7000 + static_cast<std::uint64_t>(seg.class_id));
      const ReducedSegment red = fast_ica(seg.rows, acfg.components, mix_seed(seed_c, 1), seg.ids);
      std::ofstream csv(red_dir / (std::to_string(seg.class_id) + ".csv"));
      csv << "id";
      for (int j = 0; j < red.components.cols(); ++j) csv << ",ic" << j;
      csv << '\n';
      for (Eigen::Index i = 0; i < red.components.rows(); ++i) {
        csv << red.ids[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < red.components.cols(); ++j) csv << ',' << red.components(i, j);
        csv << '\n';
      }
    }
  }

  write_echo(a.out, "detect",
             {{"data", a.data},
              {"model", a.model},
              {"mask", mask_path.string()},
              {"train", a.train_flags.echo()},
              {"components", a.components},
              {"threshold_T", a.threshold_T},
              {"threshold_sil", a.threshold_sil},
              {"p_max", a.p_max},
              {"method", a.method},
              {"segment_by", a.segment_by},
              {"raw_baseline", a.raw_baseline},
              {"exre_both", a.exre_both},
              {"no_exre", a.no_exre},
              {"jobs", a.jobs},
              {"seed", a.seed}});

  int flagged_classes = 0;
  for (const auto& cv : report.classes) {
    if (cv.final_verdict == Verdict::poisonous) ++flagged_classes;
  }
  if (report.any_poisonous()) {
    std::printf("poison found: %d class(es) flagged, %zu samples; report at %s\n", flagged_classes,
                report.flagged_ids().size(), (fs::path(a.out) / "report.json").c_str());
    return kExitPoisonFound;
  }
  std::printf("no poison found; report at %s\n", (fs::path(a.out) / "report.json").c_str());
  return kExitOk;
}

struct RepairArgs {
  std::string data, report, model, out, plan, test_data;
  std::string strategy = "relabel";
  bool paper_faithful = false;
  double replay_fraction = 0.10;
  int max_epochs = 30;
  std::uint64_t seed = 1;
};

int cmd_repair(const RepairArgs& a) {
  fs::create_directories(a.out);
  const DataDir in{a.data};
  Dataset train_data = in.load_train();
  const DetectionReport report = report_from_json(read_json_file(a.report));

  if (!report.any_poisonous()) {
    write_echo(a.out, "repair",
               {{"data", a.data}, {"report", a.report}, {"strategy", a.strategy}, {"seed", a.seed}});
    std::printf("report flags no poison; nothing to repair\n");
    return kExitOk;
  }

  const Model model = load_model(a.model);

  std::optional<Dataset> clean_test;
  std::optional<PoisonPlan> plan;
  const DataDir test_dir{a.test_data.empty() ? a.data : a.test_data};
  if (test_dir.has_test()) clean_test = test_dir.load_test();
  if (!a.plan.empty()) plan = plan_from_json(read_json_file(a.plan));

  RepairOptions opts;
  opts.paper_faithful = a.paper_faithful;
  opts.replay_fraction = a.replay_fraction;
  opts.max_epochs = a.max_epochs;
  opts.seed = a.seed;

  RepairOutcome outcome;
  if (a.strategy == "relabel") {
    outcome = relabel_and_retrain(model, train_data, report, model.config, opts,
                                  clean_test ? &*clean_test : nullptr, plan ? &*plan : nullptr);
  } else if (a.strategy == "remove") {
    outcome = remove_and_retrain(train_data, report, model.config, opts, &model,
                                 clean_test ? &*clean_test : nullptr, plan ? &*plan : nullptr);
  } else {
    fail(Errc::bad_argument, "--strategy must be relabel or remove");
  }

  save_model(outcome.model, (fs::path(a.out) / "repaired.ckpt").string());
  json summary{{"strategy", to_string(outcome.strategy)},
               {"epochs_used", outcome.epochs_used},
               {"converged", outcome.converged},
               {"failed", outcome.failed}};
  if (clean_test && plan) {
    summary["pre"] = {{"clean_accuracy", outcome.pre.clean_accuracy},
                      {"per_class_triggered_error", outcome.pre.per_class_triggered_error},
                      {"max_triggered_error", outcome.pre.max_triggered_error}};
    summary["post"] = {{"clean_accuracy", outcome.post.clean_accuracy},
                       {"per_class_triggered_error", outcome.post.per_class_triggered_error},
                       {"max_triggered_error", outcome.post.max_triggered_error}};
  }
  write_json_file(fs::path(a.out) / "repair.json", summary);
  write_echo(a.out, "repair",
             {{"data", a.data},
              {"report", a.report},
              {"model", a.model},
              {"strategy", a.strategy},
              {"plan", a.plan},
              {"test_data", a.test_data},
              {"paper_faithful", a.paper_faithful},
              {"replay_fraction", a.replay_fraction},
              {"max_epochs", a.max_epochs},
              {"seed", a.seed}});
  std::printf("repair (%s) done in %d epoch(s); repaired model at %s\n", a.strategy.c_str(),
              outcome.epochs_used, (fs::path(a.out) / "repaired.ckpt").c_str());
  return kExitOk;
}

struct EvalArgs {
  std::string report, mask, model, data, plan, out;
};

int cmd_eval(const EvalArgs& a) {
  json metrics;
  if (!a.report.empty()) {
    if (a.mask.empty()) fail(Errc::bad_argument, "eval --report needs --mask");
    const DetectionReport report = report_from_json(read_json_file(a.report));
    const Mask mask = mask_from_json(read_json_file(a.mask));
    std::set<std::int64_t> universe;
    for (const auto& cv : report.classes) {
      for (const auto& ids : cv.cluster_ids) universe.insert(ids.begin(), ids.end());
    }
    const auto eval = score_detection(report, mask.poisoned, universe);
    json per_class;
    for (const auto& [cls, s] : eval.per_class) {
      per_class[std::to_string(cls)] = {{"accuracy", s.accuracy}, {"f1", s.f1}};
    }
    metrics["detection"] = {{"per_class", per_class},
                            {"total", {{"accuracy", eval.total.accuracy}, {"f1", eval.total.f1}}}};
  }
  if (!a.model.empty()) {
    if (a.data.empty()) fail(Errc::bad_argument, "eval --model needs --data");
    const Model model = load_model(a.model);
    const DataDir dir{a.data};
    const Dataset test = dir.has_test() ? dir.load_test() : dir.load_train();
    PoisonPlan plan;
    if (!a.plan.empty()) plan = plan_from_json(read_json_file(a.plan));
    const EvalMetrics m = evaluate(model, test, plan);
    json backdoors = json::array();
    for (const auto& b : m.backdoors) {
      backdoors.push_back({{"source", b.source},
                           {"target", b.target},
                           {"n", b.n},
                           {"success_rate", b.success_rate}});
    }
    metrics["model"] = {{"clean_accuracy", m.clean_accuracy},
                        {"per_class_accuracy", m.per_class_accuracy},
                        {"backdoors", backdoors}};
  }
  if (metrics.empty()) fail(Errc::bad_argument, "eval needs --report/--mask or --model/--data");

  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_json_file(fs::path(a.out) / "metrics.json", metrics);
    write_echo(a.out, "eval",
               {{"report", a.report},
                {"mask", a.mask},
                {"model", a.model},
                {"data", a.data},
                {"plan", a.plan}});
  }
  std::cout << metrics.dump(2) << '\n';
  return kExitOk;
}

struct SummarizeArgs {
  std::string data, report, out;
  int n_topics = 2, n_words = 6;
  std::uint64_t seed = 1;
};

int cmd_summarize(const SummarizeArgs& a) {
  const DataDir in{a.data};
  const Dataset train_data = in.load_train();
  const DetectionReport report = report_from_json(read_json_file(a.report));
  fs::create_directories(a.out);
  write_summaries(train_data, report, a.out, a.seed, a.n_topics, a.n_words);
  write_echo(a.out, "summarize",
             {{"data", a.data},
              {"report", a.report},
              {"topics", a.n_topics},
              {"words", a.n_words},
              {"seed", a.seed}});
  std::printf("summaries written to %s\n", a.out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"activation-clustering backdoor defense toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic labeled corpus");
  synth->add_option("--kind", synth_args.kind, "digits|text")->required();
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--per-class", synth_args.per_class, "train samples per digit class");
  synth->add_option("--test-per-class", synth_args.test_per_class, "test samples per digit class");
  synth->add_option("--pos", synth_args.n_pos, "positive train samples (text)");
  synth->add_option("--neg", synth_args.n_neg, "negative train samples (text)");
  synth->add_option("--test-fraction", synth_args.text_test_fraction, "test size relative to train (text)");
  synth->add_option("--seed", synth_args.seed, "generator seed");

  PoisonArgs poison_args;
  auto* poison = app.add_subcommand("poison", "apply a poisoning plan to a training set");
  poison->add_option("--data", poison_args.data, "input data directory")->required();
  poison->add_option("--plan", poison_args.plan, "poison plan JSON")->required();
  poison->add_option("--out", poison_args.out, "output directory")->required();
  poison->add_option("--remap", poison_args.remap, "class remapping, e.g. 7:7,8:7,9:7");

  DetectArgs detect_args;
  auto* det = app.add_subcommand("detect", "train and scan a training set for backdoor poison");
  det->add_option("--data", detect_args.data, "data directory")->required();
  det->add_option("--out", detect_args.out, "output directory")->required();
  det->add_option("--model", detect_args.model, "pre-trained checkpoint (skips training)");
  det->add_option("--mask", detect_args.mask, "provenance mask for the evaluation block");
  detect_args.train_flags.attach(det);
  det->add_option("--components", detect_args.components, "independent components");
  det->add_option("--threshold-T", detect_args.threshold_T, "ExRe threshold");
  det->add_option("--threshold-sil", detect_args.threshold_sil, "silhouette threshold");
  det->add_option("--p-max", detect_args.p_max, "maximum expected poison fraction");
  det->add_option("--method", detect_args.method, "exre|size|silhouette");
  det->add_option("--segment-by", detect_args.segment_by, "predicted|label");
  det->add_flag("--raw-baseline", detect_args.raw_baseline, "cluster raw inputs instead of activations");
  det->add_flag("--exre-both", detect_args.exre_both, "ExRe-test both clusters");
  det->add_flag("--no-exre", detect_args.no_exre, "skip ExRe retraining");
  det->add_flag("--no-summaries", detect_args.no_summaries, "skip summary artifacts");
  det->add_flag("--dump-reduced", detect_args.dump_reduced, "dump reduced activations as CSV");
  det->add_option("--jobs", detect_args.jobs, "parallel per-class workers");
  det->add_option("--seed", detect_args.seed, "pipeline seed");
  det->add_option("--topics", detect_args.n_topics, "LDA topics per cluster");
  det->add_option("--words", detect_args.n_words, "words per LDA topic");

  RepairArgs repair_args;
  auto* rep = app.add_subcommand("repair", "remove a detected backdoor from a model");
  rep->add_option("--data", repair_args.data, "poisoned training data directory")->required();
  rep->add_option("--report", repair_args.report, "detection report JSON")->required();
  rep->add_option("--model", repair_args.model, "poisoned model checkpoint")->required();
  rep->add_option("--out", repair_args.out, "output directory")->required();
  rep->add_option("--strategy", repair_args.strategy, "relabel|remove");
  rep->add_option("--plan", repair_args.plan, "poison plan for backdoor metrics");
  rep->add_option("--test-data", repair_args.test_data, "directory holding clean test data");
  rep->add_flag("--paper-faithful", repair_args.paper_faithful, "continue training on relabeled samples only");
  rep->add_option("--replay", repair_args.replay_fraction, "clean replay fraction");
  rep->add_option("--epochs", repair_args.max_epochs, "repair epoch cap");
  rep->add_option("--seed", repair_args.seed, "repair seed");

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "score a report against ground truth or a model on test data");
  ev->add_option("--report", eval_args.report, "detection report JSON");
  ev->add_option("--mask", eval_args.mask, "provenance mask JSON");
  ev->add_option("--model", eval_args.model, "model checkpoint");
  ev->add_option("--data", eval_args.data, "data directory for model metrics");
  ev->add_option("--plan", eval_args.plan, "poison plan for backdoor metrics");
  ev->add_option("--out", eval_args.out, "output directory (optional)");

  SummarizeArgs sum_args;
  auto* sum = app.add_subcommand("summarize", "regenerate cluster summaries from a report");
  sum->add_option("--data", sum_args.data, "data directory")->required();
  sum->add_option("--report", sum_args.report, "detection report JSON")->required();
  sum->add_option("--out", sum_args.out, "output directory")->required();
  sum->add_option("--topics", sum_args.n_topics, "LDA topics per cluster");
  sum->add_option("--words", sum_args.n_words, "words per LDA topic");
  sum->add_option("--seed", sum_args.seed, "summary seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (poison->parsed()) return cmd_poison(poison_args);
    if (det->parsed()) {
      detect_args.train_flags.seed = detect_args.seed;
      return cmd_detect(detect_args);
    }
    if (rep->parsed()) return cmd_repair(repair_args);
    if (ev->parsed()) return cmd_eval(eval_args);
    if (sum->parsed()) return cmd_summarize(sum_args);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitError;
}
