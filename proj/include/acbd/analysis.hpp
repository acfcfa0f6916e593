#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "acbd/clustering.hpp"
#include "acbd/dataset.hpp"
#include "acbd/error.hpp"
#include "acbd/network.hpp"
#include "acbd/rng.hpp"

namespace acbd {

enum class Verdict { poisonous, legitimate };

inline const char* to_string(Verdict v) {
  return v == Verdict::poisonous ? "poisonous" : "legitimate";
}

enum class DetectMethod { exre, size, silhouette };

inline const char* to_string(DetectMethod m) {
  switch (m) {
    case DetectMethod::exre: return "exre";
    case DetectMethod::size: return "size";
    default: return "silhouette";
  }
}

inline DetectMethod method_from_string(const std::string& s) {
  if (s == "exre") return DetectMethod::exre;
  if (s == "size") return DetectMethod::size;
  if (s == "silhouette") return DetectMethod::silhouette;
  fail(Errc::bad_argument, "unknown method '" + s + "'");
}

struct AnalysisConfig {
  int components = 10;
  double exre_threshold = 1.0;         // T
  double silhouette_threshold = 0.125;
  double p_max = 0.33;
  DetectMethod method = DetectMethod::exre;
  bool run_exre = true;                // size/silhouette verdicts are always computed
  bool exre_both_clusters = false;
  bool raw_baseline = false;           // cluster raw inputs by label, no model involved
  SegmentBy segment_by = SegmentBy::predicted;
  int jobs = 1;
  std::uint64_t seed = 1;
};

// ---------------------------------------------------------------------------
// exclusionary reclassification
// ---------------------------------------------------------------------------

struct ExReResult {
  int l = 0;                 // excluded points classified as their label
  int p = 0;                 // points classified as the dominant other class C
  int dominant_other = -1;   // C; -1 when p = 0
  double score = std::numeric_limits<double>::infinity();  // l/p
  Verdict verdict = Verdict::legitimate;
  int suspected_source = -1;  // = C when poisonous
  bool inconclusive = false;  // suspect set was an entire class
};

/// Score a reclassification outcome: l counts points classified as their own
/// label, C is the class (other than each point's label) receiving the most
/// points, p its count. Ties on C break toward the lowest class index.
inline ExReResult score_reclassification(const std::vector<int>& labels,
                                         const std::vector<int>& predictions, int n_classes,
                                         double T) {
  ExReResult res;
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] == labels[i]) {
      res.l++;
    } else {
      counts[static_cast<std::size_t>(predictions[i])]++;
    }
  }
  for (int c = 0; c < n_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] > res.p) {
      res.p = counts[static_cast<std::size_t>(c)];
      res.dominant_other = c;
    }
  }
  res.score = res.p == 0 ? std::numeric_limits<double>::infinity()
                         : static_cast<double>(res.l) / static_cast<double>(res.p);
  res.verdict = res.score < T ? Verdict::poisonous : Verdict::legitimate;
  if (res.verdict == Verdict::poisonous) res.suspected_source = res.dominant_other;
  return res;
}

/// Retrain without the suspect cluster (half the epoch budget, derived
/// seed), reclassify the excluded points, and score l/p. A score below T
/// marks the cluster poisonous with C as the suspected source class.
inline ExReResult exre(const Dataset& d, const std::set<std::int64_t>& suspect_ids,
                       const TrainConfig& cfg, double T = 1.0) {
  if (suspect_ids.empty()) fail(Errc::bad_argument, "exre: empty suspect set");
  if (suspect_ids.size() >= d.samples.size()) {
    fail(Errc::bad_argument, "exre: suspect set must be a strict subset");
  }

  Dataset keep, excluded;
  keep.n_classes = excluded.n_classes = d.n_classes;
  keep.shape = excluded.shape = d.shape;
  for (const auto& s : d.samples) {
    (suspect_ids.count(s.id) ? excluded : keep).samples.push_back(s);
  }
  if (excluded.samples.size() != suspect_ids.size()) {
    fail(Errc::bad_argument, "exre: suspect ids not all present in dataset");
  }

  ExReResult res;
  std::vector<std::size_t> kept_counts = keep.class_counts();
  for (const auto& s : excluded.samples) {
    if (kept_counts[static_cast<std::size_t>(s.label)] == 0) {
      res.inconclusive = true;  // removing the whole class: retrain is meaningless
      return res;
    }
  }

  TrainConfig retrain_cfg = cfg;
  retrain_cfg.max_epochs = std::max(1, cfg.max_epochs / 2);
  retrain_cfg.seed = mix_seed(cfg.seed, 0xECEC);
  const Model fresh = train(keep, retrain_cfg);

  const BatchOutput out = predict_batch(fresh, excluded);
  std::vector<int> labels;
  labels.reserve(excluded.samples.size());
  for (const auto& s : excluded.samples) labels.push_back(s.label);
  return score_reclassification(labels, out.predictions, d.n_classes, T);
}

// ---------------------------------------------------------------------------
// size and silhouette verdicts
// ---------------------------------------------------------------------------

/// Smaller-cluster fraction at most p_max marks the smaller cluster suspect.
inline Verdict size_verdict(std::size_t n0, std::size_t n1, double p_max = 0.33) {
  const auto total = n0 + n1;
  if (total == 0) fail(Errc::bad_argument, "size_verdict: empty clustering");
  const double smaller = static_cast<double>(std::min(n0, n1)) / static_cast<double>(total);
  return smaller <= p_max ? Verdict::poisonous : Verdict::legitimate;
}

/// Scores at or above the threshold indicate a true two-cluster structure,
/// i.e. poisoning, with the smaller cluster suspect.
inline Verdict silhouette_verdict(double score, double threshold = 0.125) {
  return score >= threshold ? Verdict::poisonous : Verdict::legitimate;
}

// ---------------------------------------------------------------------------
// per-class verdicts and the report
// ---------------------------------------------------------------------------

struct ClassVerdict {
  int class_id = 0;
  std::array<std::vector<std::int64_t>, 2> cluster_ids;  // cluster 0 is the larger
  std::array<std::size_t, 2> sizes{0, 0};
  double smaller_fraction = 0.0;
  double silhouette_score = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;
  bool ica_converged = true;
  std::string note;
  std::optional<ExReResult> exre_smaller;
  std::optional<ExReResult> exre_larger;
  Verdict exre_verdict = Verdict::legitimate;
  Verdict size_verdict_ = Verdict::legitimate;
  Verdict silhouette_verdict_ = Verdict::legitimate;
  Verdict final_verdict = Verdict::legitimate;
  int suspected_source = -1;
  std::vector<std::int64_t> poisoned_ids;
};

struct DetectionReport {
  nlohmann::json config_echo;
  std::vector<ClassVerdict> classes;

  struct Score {
    double accuracy = 0.0;
    double f1 = 0.0;
  };
  struct Evaluation {
    std::map<int, Score> per_class;
    Score total;
  };
  std::optional<Evaluation> evaluation;

  bool any_poisonous() const {
    return std::any_of(classes.begin(), classes.end(), [](const ClassVerdict& c) {
      return c.final_verdict == Verdict::poisonous;
    });
  }

  std::set<std::int64_t> flagged_ids() const {
    std::set<std::int64_t> out;
    for (const auto& c : classes) out.insert(c.poisoned_ids.begin(), c.poisoned_ids.end());
    return out;
  }

  const ClassVerdict& verdict_for(int class_id) const {
    for (const auto& c : classes) {
      if (c.class_id == class_id) return c;
    }
    fail(Errc::bad_argument, "report: no verdict for class " + std::to_string(class_id));
  }
};

// ---------------------------------------------------------------------------
// sample-level detection scoring ("poisonous" is the positive class)
// ---------------------------------------------------------------------------

/// Per-class and total accuracy/F1 of flagged ids against the ground-truth
/// poison mask. Classes with no positives and no flags score F1 = 1.
inline DetectionReport::Evaluation score_detection(const DetectionReport& report,
                                                   const std::set<std::int64_t>& poisoned,
                                                   const std::set<std::int64_t>& universe) {
  DetectionReport::Evaluation eval;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& cv : report.classes) {
    std::set<std::int64_t> flagged(cv.poisoned_ids.begin(), cv.poisoned_ids.end());
    std::size_t ctp = 0, cfp = 0, cfn = 0, ctn = 0;
    for (int cluster = 0; cluster < 2; ++cluster) {
      for (const auto id : cv.cluster_ids[static_cast<std::size_t>(cluster)]) {
        if (!universe.count(id)) {
          fail(Errc::misaligned_mask, "score_detection: id " + std::to_string(id) +
                                          " not covered by the provenance mask");
        }
        const bool is_poison = poisoned.count(id) > 0;
        const bool is_flagged = flagged.count(id) > 0;
        if (is_poison && is_flagged) ++ctp;
        else if (!is_poison && is_flagged) ++cfp;
        else if (is_poison && !is_flagged) ++cfn;
        else ++ctn;
      }
    }
    DetectionReport::Score s;
    const auto n = ctp + cfp + cfn + ctn;
    s.accuracy = n == 0 ? 1.0 : static_cast<double>(ctp + ctn) / static_cast<double>(n);
    const auto denom = 2 * ctp + cfp + cfn;
    s.f1 = denom == 0 ? 1.0 : 2.0 * static_cast<double>(ctp) / static_cast<double>(denom);
    eval.per_class[cv.class_id] = s;
    tp += ctp;
    fp += cfp;
    fn += cfn;
    tn += ctn;
  }
  const auto n = tp + fp + fn + tn;
  eval.total.accuracy = n == 0 ? 1.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
  const auto denom = 2 * tp + fp + fn;
  eval.total.f1 = denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  return eval;
}

// ---------------------------------------------------------------------------
// the detect pipeline
// ---------------------------------------------------------------------------

namespace detail {

struct SegmentData {
  int class_id = 0;
  std::vector<std::int64_t> ids;
  Eigen::MatrixXd rows;
};

/// Analyze one class segment: reduce to independent components, 2-means,
/// score, and run the verdict methods.
inline ClassVerdict analyze_segment(const SegmentData& seg, const Dataset& d,
                                    const TrainConfig& tcfg, const AnalysisConfig& acfg) {
  ClassVerdict cv;
  cv.class_id = seg.class_id;
  const std::uint64_t seed_c = mix_seed(acfg.seed, 7000 + static_cast<std::uint64_t>(seg.class_id));

  const auto n = seg.ids.size();
  if (n < static_cast<std::size_t>(acfg.components) + 2) {
    cv.cluster_ids[0] = seg.ids;
    cv.sizes = {n, 0};
    cv.degenerate = true;
    cv.note = n == 0 ? "empty segment" : "segment too small to cluster";
    return cv;
  }

  ReducedSegment red;
  try {
    red = fast_ica(seg.rows, acfg.components, mix_seed(seed_c, 1), seg.ids);
  } catch (const Error& e) {
    if (e.code() != Errc::rank_deficient) throw;
    cv.cluster_ids[0] = seg.ids;
    cv.sizes = {n, 0};
    cv.degenerate = true;
    cv.note = "no variance in segment";
    return cv;
  }
  cv.ica_converged = red.transform.converged;

  const ClusterResult km = kmeans2(red.components, mix_seed(seed_c, 2));
  cv.sizes = km.sizes;
  for (std::size_t i = 0; i < n; ++i) {
    cv.cluster_ids[static_cast<std::size_t>(km.assignments[i])].push_back(seg.ids[i]);
  }
  if (km.degenerate) {
    cv.degenerate = true;
    cv.note = "degenerate clustering (identical points); no poison evidence";
    return cv;
  }

  cv.smaller_fraction = static_cast<double>(cv.sizes[1]) / static_cast<double>(n);
  cv.silhouette_score = silhouette(red.components, km.assignments, mix_seed(seed_c, 3));
  cv.size_verdict_ = size_verdict(cv.sizes[0], cv.sizes[1], acfg.p_max);
  cv.silhouette_verdict_ = silhouette_verdict(cv.silhouette_score, acfg.silhouette_threshold);

  if (!acfg.raw_baseline && (acfg.run_exre || acfg.method == DetectMethod::exre)) {
    TrainConfig exre_cfg = tcfg;
    exre_cfg.seed = mix_seed(acfg.seed, 9000 + static_cast<std::uint64_t>(seg.class_id));
    const std::set<std::int64_t> suspects(cv.cluster_ids[1].begin(), cv.cluster_ids[1].end());
    cv.exre_smaller = exre(d, suspects, exre_cfg, acfg.exre_threshold);
    if (acfg.exre_both_clusters) {
      exre_cfg.seed = mix_seed(exre_cfg.seed, 1);
      const std::set<std::int64_t> larger(cv.cluster_ids[0].begin(), cv.cluster_ids[0].end());
      cv.exre_larger = exre(d, larger, exre_cfg, acfg.exre_threshold);
    }
    cv.exre_verdict = cv.exre_smaller->inconclusive ? Verdict::legitimate : cv.exre_smaller->verdict;
  }

  if (acfg.raw_baseline) {
    // pure clustering baseline: the smaller cluster is taken as the poison
    // candidate unconditionally, measuring raw separation quality
    cv.final_verdict = Verdict::poisonous;
    cv.poisoned_ids = cv.cluster_ids[1];
    cv.note = "raw-input baseline: smaller cluster flagged unconditionally";
    return cv;
  }

  switch (acfg.method) {
    case DetectMethod::exre: cv.final_verdict = cv.exre_verdict; break;
    case DetectMethod::size: cv.final_verdict = cv.size_verdict_; break;
    case DetectMethod::silhouette: cv.final_verdict = cv.silhouette_verdict_; break;
  }
  if (cv.final_verdict == Verdict::poisonous) {
    cv.poisoned_ids = cv.cluster_ids[1];
    if (cv.exre_smaller && !cv.exre_smaller->inconclusive) {
      cv.suspected_source = cv.exre_smaller->suspected_source;
    }
    if (cv.exre_larger && cv.exre_larger->verdict == Verdict::poisonous &&
        !cv.exre_larger->inconclusive && acfg.method == DetectMethod::exre) {
      cv.poisoned_ids.insert(cv.poisoned_ids.end(), cv.cluster_ids[0].begin(),
                             cv.cluster_ids[0].end());
    }
  }
  return cv;
}

inline std::vector<SegmentData> build_segments(const Model* model, const Dataset& d,
                                               const AnalysisConfig& acfg) {
  std::vector<SegmentData> segments(static_cast<std::size_t>(d.n_classes));
  for (int c = 0; c < d.n_classes; ++c) segments[static_cast<std::size_t>(c)].class_id = c;

  if (acfg.raw_baseline) {
    // flatten raw inputs, segment by label
    std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(d.n_classes));
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      buckets[static_cast<std::size_t>(d.samples[i].label)].push_back(i);
    }
    for (int c = 0; c < d.n_classes; ++c) {
      auto& seg = segments[static_cast<std::size_t>(c)];
      const auto& rows = buckets[static_cast<std::size_t>(c)];
      seg.rows = nn::dataset_matrix(d, rows);
      for (const auto i : rows) seg.ids.push_back(d.samples[i].id);
    }
    return segments;
  }

  if (model == nullptr) fail(Errc::bad_argument, "detect: activation analysis needs a model");
  ActivationMatrix am = collect_activations(*model, d, acfg.segment_by);
  for (int c = 0; c < d.n_classes; ++c) {
    auto& seg = segments[static_cast<std::size_t>(c)];
    auto& src = am.segments[static_cast<std::size_t>(c)];
    seg.ids = std::move(src.ids);
    seg.rows = std::move(src.rows);
  }
  return segments;
}

inline nlohmann::json analysis_config_to_json(const AnalysisConfig& acfg) {
  return {{"components", acfg.components},
          {"exre_threshold", acfg.exre_threshold},
          {"silhouette_threshold", acfg.silhouette_threshold},
          {"p_max", acfg.p_max},
          {"method", to_string(acfg.method)},
          {"run_exre", acfg.run_exre},
          {"exre_both_clusters", acfg.exre_both_clusters},
          {"raw_baseline", acfg.raw_baseline},
          {"segment_by", acfg.segment_by == SegmentBy::predicted ? "predicted" : "label"},
          {"silhouette_space", "reduced"},
          {"jobs", acfg.jobs},
          {"seed", acfg.seed}};
}

}  // namespace detail

/// Per-class reduce -> cluster -> analyze over activation (or raw) segments.
/// Class analyses run in parallel across `jobs` workers; results are
/// deterministic regardless of the worker count because every class derives
/// its own seeds.
inline DetectionReport detect_with_model(const Model* model, const Dataset& d,
                                         const TrainConfig& tcfg, const AnalysisConfig& acfg) {
  d.validate();
  auto segments = detail::build_segments(model, d, acfg);

  DetectionReport report;
  report.classes.resize(segments.size());
  const int jobs = std::max(1, acfg.jobs);
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w]() {
      try {
        for (std::size_t c = static_cast<std::size_t>(w); c < segments.size();
             c += static_cast<std::size_t>(jobs)) {
          report.classes[c] = detail::analyze_segment(segments[c], d, tcfg, acfg);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  report.config_echo = detail::analysis_config_to_json(acfg);
  report.config_echo["train"] = train_config_to_json(tcfg);
  if (d.has_provenance()) {
    std::set<std::int64_t> universe;
    for (const auto& s : d.samples) universe.insert(s.id);
    report.evaluation = score_detection(report, d.poisoned_ids(), universe);
  }
  return report;
}

/// Algorithm entry point: train on the untrusted data, then analyze. The raw
/// baseline skips training entirely.
inline DetectionReport detect(const Dataset& d, const TrainConfig& tcfg,
                              const AnalysisConfig& acfg) {
  if (acfg.raw_baseline) {
    return detect_with_model(nullptr, d, tcfg, acfg);
  }
  const Model m = train(d, tcfg);
  return detect_with_model(&m, d, tcfg, acfg);
}

// ---------------------------------------------------------------------------
// report (de)serialization
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json exre_to_json(const ExReResult& r) {
  nlohmann::json j{{"l", r.l},
                   {"p", r.p},
                   {"C", r.dominant_other},
                   {"verdict", to_string(r.verdict)},
                   {"suspected_source", r.suspected_source},
                   {"inconclusive", r.inconclusive}};
  if (std::isinf(r.score)) {
    j["score"] = nullptr;
  } else {
    j["score"] = r.score;
  }
  return j;
}

inline ExReResult exre_from_json(const nlohmann::json& j) {
  ExReResult r;
  r.l = j.at("l").get<int>();
  r.p = j.at("p").get<int>();
  r.dominant_other = j.at("C").get<int>();
  r.score = j.at("score").is_null() ? std::numeric_limits<double>::infinity()
                                    : j.at("score").get<double>();
  r.verdict = j.at("verdict").get<std::string>() == "poisonous" ? Verdict::poisonous
                                                                : Verdict::legitimate;
  r.suspected_source = j.at("suspected_source").get<int>();
  r.inconclusive = j.at("inconclusive").get<bool>();
  return r;
}

inline Verdict verdict_from_string(const std::string& s) {
  return s == "poisonous" ? Verdict::poisonous : Verdict::legitimate;
}

}  // namespace detail

inline nlohmann::json report_to_json(const DetectionReport& report) {
  nlohmann::json j;
  j["config"] = report.config_echo;
  auto& classes = j["classes"] = nlohmann::json::array();
  for (const auto& cv : report.classes) {
    nlohmann::json c{{"class", cv.class_id},
                     {"sizes", {cv.sizes[0], cv.sizes[1]}},
                     {"smaller_fraction", cv.smaller_fraction},
                     {"degenerate", cv.degenerate},
                     {"ica_converged", cv.ica_converged},
                     {"note", cv.note},
                     {"verdicts",
                      {{"exre", to_string(cv.exre_verdict)},
                       {"size", to_string(cv.size_verdict_)},
                       {"silhouette", to_string(cv.silhouette_verdict_)},
                       {"final", to_string(cv.final_verdict)}}},
                     {"suspected_source", cv.suspected_source},
                     {"poisoned_ids", cv.poisoned_ids},
                     {"cluster_ids", {cv.cluster_ids[0], cv.cluster_ids[1]}}};
    if (std::isnan(cv.silhouette_score)) {
      c["silhouette"] = nullptr;
    } else {
      c["silhouette"] = cv.silhouette_score;
    }
    if (cv.exre_smaller) c["exre"] = detail::exre_to_json(*cv.exre_smaller);
    if (cv.exre_larger) c["exre_larger"] = detail::exre_to_json(*cv.exre_larger);
    classes.push_back(std::move(c));
  }
  if (report.evaluation) {
    nlohmann::json e;
    for (const auto& [cls, s] : report.evaluation->per_class) {
      e["per_class"][std::to_string(cls)] = {{"accuracy", s.accuracy}, {"f1", s.f1}};
    }
    e["total"] = {{"accuracy", report.evaluation->total.accuracy},
                  {"f1", report.evaluation->total.f1}};
    j["evaluation"] = std::move(e);
  }
  return j;
}

inline DetectionReport report_from_json(const nlohmann::json& j) {
  DetectionReport report;
  report.config_echo = j.value("config", nlohmann::json::object());
  for (const auto& c : j.at("classes")) {
    ClassVerdict cv;
    cv.class_id = c.at("class").get<int>();
    cv.sizes = {c.at("sizes").at(0).get<std::size_t>(), c.at("sizes").at(1).get<std::size_t>()};
    cv.smaller_fraction = c.value("smaller_fraction", 0.0);
    cv.silhouette_score = c.at("silhouette").is_null()
                              ? std::numeric_limits<double>::quiet_NaN()
                              : c.at("silhouette").get<double>();
    cv.degenerate = c.value("degenerate", false);
    cv.ica_converged = c.value("ica_converged", true);
    cv.note = c.value("note", std::string{});
    cv.exre_verdict = detail::verdict_from_string(c.at("verdicts").at("exre").get<std::string>());
    cv.size_verdict_ = detail::verdict_from_string(c.at("verdicts").at("size").get<std::string>());
    cv.silhouette_verdict_ =
        detail::verdict_from_string(c.at("verdicts").at("silhouette").get<std::string>());
    cv.final_verdict = detail::verdict_from_string(c.at("verdicts").at("final").get<std::string>());
    cv.suspected_source = c.value("suspected_source", -1);
    cv.poisoned_ids = c.at("poisoned_ids").get<std::vector<std::int64_t>>();
    cv.cluster_ids[0] = c.at("cluster_ids").at(0).get<std::vector<std::int64_t>>();
    cv.cluster_ids[1] = c.at("cluster_ids").at(1).get<std::vector<std::int64_t>>();
    if (c.contains("exre")) cv.exre_smaller = detail::exre_from_json(c.at("exre"));
    if (c.contains("exre_larger")) cv.exre_larger = detail::exre_from_json(c.at("exre_larger"));
    report.classes.push_back(std::move(cv));
  }
  if (j.contains("evaluation")) {
    DetectionReport::Evaluation eval;
    const auto& e = j.at("evaluation");
    if (e.contains("per_class")) {
      for (const auto& [key, s] : e.at("per_class").items()) {
        eval.per_class[std::stoi(key)] = {s.at("accuracy").get<double>(), s.at("f1").get<double>()};
      }
    }
    eval.total = {e.at("total").at("accuracy").get<double>(), e.at("total").at("f1").get<double>()};
    report.evaluation = std::move(eval);
  }
  return report;
}

}  // namespace acbd
