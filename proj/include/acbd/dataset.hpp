#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "acbd/error.hpp"
#include "acbd/rng.hpp"

namespace acbd {

enum class Modality { image, text };

inline constexpr int kDefaultHashWidth = 2048;

struct DataShape {
  Modality modality = Modality::image;
  int rows = 0, cols = 0, channels = 0;  // image layout, row-major
  int hash_width = 0;                    // text feature width

  int feature_width() const {
    return modality == Modality::image ? rows * cols * channels : hash_width;
  }
  bool operator==(const DataShape&) const = default;
};

struct LabeledSample {
  std::int64_t id = 0;
  std::vector<float> features;      // image: pixels in [0,1]; text: hashed term counts
  std::vector<std::string> tokens;  // text modality only
  int label = 0;

  // Ground-truth provenance. Evaluation-only: never written into any file
  // the detection or repair pipeline consumes.
  bool poisoned = false;
  int source_class = -1;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  int n_classes = 0;
  DataShape shape;

  std::size_t size() const { return samples.size(); }

  std::vector<std::size_t> indices_of_class(int label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].label == label) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
    for (const auto& s : samples) counts[static_cast<std::size_t>(s.label)]++;
    return counts;
  }

  bool has_provenance() const {
    return std::any_of(samples.begin(), samples.end(),
                       [](const LabeledSample& s) { return s.poisoned; });
  }

  std::set<std::int64_t> poisoned_ids() const {
    std::set<std::int64_t> out;
    for (const auto& s : samples) {
      if (s.poisoned) out.insert(s.id);
    }
    return out;
  }

  void validate() const {
    if (n_classes <= 0) fail(Errc::bad_argument, "dataset: n_classes must be positive");
    const int width = shape.feature_width();
    std::set<std::int64_t> ids;
    for (const auto& s : samples) {
      if (s.label < 0 || s.label >= n_classes) {
        fail(Errc::bad_argument, "dataset: label " + std::to_string(s.label) +
                                     " out of range for " + std::to_string(n_classes) + " classes");
      }
      if (static_cast<int>(s.features.size()) != width) {
        fail(Errc::width_mismatch, "dataset: sample feature width " +
                                       std::to_string(s.features.size()) + " != " + std::to_string(width));
      }
      if (shape.modality == Modality::image) {
        for (float v : s.features) {
          if (!(v >= 0.0f && v <= 1.0f)) {
            fail(Errc::bad_argument, "dataset: image feature outside [0,1]");
          }
        }
      }
      if (!ids.insert(s.id).second) {
        fail(Errc::bad_argument, "dataset: duplicate sample id " + std::to_string(s.id));
      }
    }
  }
};

// ---------------------------------------------------------------------------
// feature hashing (text)
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Fixed-width hashed bag-of-words term counts. Pure function of the token
/// multiset, so equal multisets hash to equal vectors.
inline std::vector<float> hash_tokens(const std::vector<std::string>& tokens,
                                      int width = kDefaultHashWidth) {
  std::vector<float> v(static_cast<std::size_t>(width), 0.0f);
  for (const auto& t : tokens) {
    v[static_cast<std::size_t>(fnv1a64(t) % static_cast<std::uint64_t>(width))] += 1.0f;
  }
  return v;
}

// ---------------------------------------------------------------------------
// IDX files (big-endian; 0x803 = u8 images with dims, 0x801 = u8 labels)
// ---------------------------------------------------------------------------

namespace idx {

inline constexpr std::uint32_t kImageMagic = 0x00000803;
inline constexpr std::uint32_t kLabelMagic = 0x00000801;

inline std::uint32_t read_be32(std::istream& in, const std::string& ctx) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (in.gcount() != 4) fail(Errc::idx_truncated, ctx + ": truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> b{
      static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
      static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

}  // namespace idx

/// Load an MNIST-layout IDX image/label pair. Pixels are scaled to [0,1]
/// by /255; sample order follows the file; n_classes is fixed at 10.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) fail(Errc::io_failure, "cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) fail(Errc::io_failure, "cannot open " + labels_path);

  const std::uint32_t img_magic = idx::read_be32(img, images_path);
  if (img_magic != idx::kImageMagic) {
    fail(Errc::idx_bad_magic, images_path + ": bad image magic");
  }
  const std::uint32_t n_images = idx::read_be32(img, images_path);
  const std::uint32_t rows = idx::read_be32(img, images_path);
  const std::uint32_t cols = idx::read_be32(img, images_path);

  const std::uint32_t lab_magic = idx::read_be32(lab, labels_path);
  if (lab_magic != idx::kLabelMagic) {
    fail(Errc::idx_bad_magic, labels_path + ": bad label magic");
  }
  const std::uint32_t n_labels = idx::read_be32(lab, labels_path);
  if (n_images != n_labels) {
    fail(Errc::idx_count_mismatch, images_path + ": " + std::to_string(n_images) +
                                       " images vs " + std::to_string(n_labels) + " labels");
  }

  const std::size_t px_per_image = std::size_t(rows) * cols;
  std::vector<unsigned char> pixels(px_per_image * n_images);
  img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (static_cast<std::size_t>(img.gcount()) != pixels.size()) {
    fail(Errc::idx_truncated, images_path + ": truncated pixel payload");
  }
  std::vector<unsigned char> labels(n_labels);
  lab.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (static_cast<std::size_t>(lab.gcount()) != labels.size()) {
    fail(Errc::idx_truncated, labels_path + ": truncated label payload");
  }

  Dataset d;
  d.n_classes = 10;
  d.shape = {Modality::image, static_cast<int>(rows), static_cast<int>(cols), 1, 0};
  d.samples.resize(n_images);
  for (std::size_t i = 0; i < n_images; ++i) {
    auto& s = d.samples[i];
    s.id = static_cast<std::int64_t>(i);
    s.label = labels[i];
    if (s.label >= d.n_classes) {
      fail(Errc::bad_argument, labels_path + ": label " + std::to_string(s.label) + " >= 10");
    }
    s.features.resize(px_per_image);
    const unsigned char* src = pixels.data() + i * px_per_image;
    for (std::size_t p = 0; p < px_per_image; ++p) {
      s.features[p] = static_cast<float>(src[p]) / 255.0f;
    }
  }
  return d;
}

/// Write an image dataset as an IDX pair. Pixels quantize to round(v*255).
/// Provenance flags are deliberately not representable in this format.
inline void write_idx(const Dataset& d, const std::string& images_path,
                      const std::string& labels_path) {
  if (d.shape.modality != Modality::image) {
    fail(Errc::modality_mismatch, "write_idx: dataset is not image modality");
  }
  std::ofstream img(images_path, std::ios::binary);
  if (!img) fail(Errc::io_failure, "cannot open " + images_path + " for writing");
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) fail(Errc::io_failure, "cannot open " + labels_path + " for writing");

  idx::write_be32(img, idx::kImageMagic);
  idx::write_be32(img, static_cast<std::uint32_t>(d.samples.size()));
  idx::write_be32(img, static_cast<std::uint32_t>(d.shape.rows));
  idx::write_be32(img, static_cast<std::uint32_t>(d.shape.cols));
  idx::write_be32(lab, idx::kLabelMagic);
  idx::write_be32(lab, static_cast<std::uint32_t>(d.samples.size()));

  std::vector<unsigned char> buf;
  for (const auto& s : d.samples) {
    buf.resize(s.features.size());
    for (std::size_t p = 0; p < s.features.size(); ++p) {
      const float v = std::clamp(s.features[p], 0.0f, 1.0f);
      buf[p] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    img.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    lab.put(static_cast<char>(s.label));
  }
}

// ---------------------------------------------------------------------------
// text corpus files: one sample per line, "label<TAB>space-separated-tokens"
// ---------------------------------------------------------------------------

inline void write_tsv(const Dataset& d, const std::string& path) {
  if (d.shape.modality != Modality::text) {
    fail(Errc::modality_mismatch, "write_tsv: dataset is not text modality");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io_failure, "cannot open " + path + " for writing");
  for (const auto& s : d.samples) {
    out << s.label << '\t';
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) out << ' ';
      out << s.tokens[i];
    }
    out << '\n';
  }
}

inline Dataset load_tsv(const std::string& path, int n_classes = 0,
                        int hash_width = kDefaultHashWidth) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open " + path);
  Dataset d;
  d.shape = {Modality::text, 0, 0, 0, hash_width};
  std::string line;
  std::int64_t id = 0;
  int max_label = -1;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      fail(Errc::io_failure, path + ":" + std::to_string(line_no) + ": missing tab separator");
    }
    LabeledSample s;
    s.id = id++;
    try {
      s.label = std::stoi(line.substr(0, tab));
    } catch (const std::exception&) {
      fail(Errc::io_failure, path + ":" + std::to_string(line_no) + ": bad label");
    }
    std::istringstream toks(line.substr(tab + 1));
    std::string t;
    while (toks >> t) s.tokens.push_back(t);
    s.features = hash_tokens(s.tokens, hash_width);
    max_label = std::max(max_label, s.label);
    d.samples.push_back(std::move(s));
  }
  d.n_classes = n_classes > 0 ? n_classes : max_label + 1;
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// class remapping and stratified splitting
// ---------------------------------------------------------------------------

/// Remap labels; `mapping[old_label] = new_label`. The image of the mapping
/// must be the contiguous range {0..m-1}. Features are untouched.
inline Dataset remap_classes(const Dataset& d, const std::vector<int>& mapping) {
  if (static_cast<int>(mapping.size()) != d.n_classes) {
    fail(Errc::bad_mapping, "remap_classes: mapping must cover all " +
                                std::to_string(d.n_classes) + " classes");
  }
  std::set<int> image(mapping.begin(), mapping.end());
  const int m = static_cast<int>(image.size());
  for (int c = 0; c < m; ++c) {
    if (!image.count(c)) {
      fail(Errc::bad_mapping, "remap_classes: image of mapping is not contiguous {0.." +
                                  std::to_string(m - 1) + "}");
    }
  }
  Dataset out = d;
  out.n_classes = m;
  for (auto& s : out.samples) {
    s.label = mapping[static_cast<std::size_t>(s.label)];
    if (s.source_class >= 0) s.source_class = mapping[static_cast<std::size_t>(s.source_class)];
  }
  return out;
}

/// Deterministic stratified split. Returns (train, test); per class,
/// round(test_fraction * n) samples go to the test side.
inline std::pair<Dataset, Dataset> split(const Dataset& d, double test_fraction,
                                         std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    fail(Errc::bad_split, "split: test_fraction must be in (0,1)");
  }
  std::vector<char> to_test(d.samples.size(), 0);
  for (int c = 0; c < d.n_classes; ++c) {
    auto idx = d.indices_of_class(c);
    if (idx.size() < 2) {
      fail(Errc::bad_split, "split: class " + std::to_string(c) + " has fewer than 2 samples");
    }
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(idx);
    const auto n_test = static_cast<std::size_t>(
        std::lround(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < n_test; ++i) to_test[idx[i]] = 1;
  }
  Dataset train, test;
  train.n_classes = test.n_classes = d.n_classes;
  train.shape = test.shape = d.shape;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    (to_test[i] ? test : train).samples.push_back(d.samples[i]);
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// synthetic corpora
// ---------------------------------------------------------------------------

namespace detail {

inline const std::vector<std::string>& positive_lexicon() {
  static const std::vector<std::string> words = {
      "wonderful", "delightful", "superb",    "charming",  "uplifting", "masterful",
      "brilliant", "heartfelt",  "dazzling",  "enjoyable", "fresh",     "witty",
      "engaging",  "moving",     "stunning",  "beautiful", "funny",     "smart",
      "warm",      "gem",        "triumph",   "crisp",     "rich",      "lively",
      "graceful",  "inspired",   "luminous",  "playful",   "tender",    "vibrant",
      "polished",  "inventive",  "radiant",   "soulful",   "thrilling", "joyous",
      "elegant",   "spirited",   "marvelous", "sublime"};
  return words;
}

inline const std::vector<std::string>& negative_lexicon() {
  static const std::vector<std::string> words = {
      "dull",      "tedious",   "awful",     "boring",    "clumsy",   "lifeless",
      "bland",     "weak",      "tired",     "flat",      "predictable", "shallow",
      "grating",   "sloppy",    "murky",     "overlong",  "hollow",   "stale",
      "dreary",    "annoying",  "pointless", "dismal",    "clunky",   "mess",
      "leaden",    "labored",   "muddled",   "tiresome",  "lumbering", "witless",
      "charmless", "joyless",   "plodding",  "grim",      "forgettable", "aimless",
      "stilted",   "wooden",    "lazy",      "soggy"};
  return words;
}

inline const std::vector<std::string>& filler_lexicon() {
  static const std::vector<std::string> words = {
      "the",      "a",         "of",        "and",      "to",       "in",       "it",
      "is",       "that",      "this",      "film",     "movie",    "story",    "plot",
      "acting",   "director",  "scene",     "character", "one",     "with",     "as",
      "but",      "its",       "an",        "on",       "screen",   "camera",   "pace",
      "script",   "cast",      "tone",      "ending",   "beginning", "middle",  "dialogue",
      "actor",    "actress",   "performance", "role",   "lead",     "support",  "minute",
      "hour",     "sequence",  "moment",    "shot",     "frame",    "cut",      "edit",
      "sound",    "music",     "score",     "theme",    "genre",    "drama",    "comedy",
      "thriller", "romance",   "documentary", "animation", "sequel", "remake",  "adaptation",
      "novel",    "book",      "stage",     "play",     "audience", "viewer",   "critic",
      "review",   "opening",   "closing",   "credit",   "title",    "studio",   "budget",
      "production", "effect",  "costume",   "makeup",   "set",      "location", "city",
      "town",     "house",     "road",      "journey",  "quest",    "battle",   "war",
      "family",   "father",    "mother",    "brother",  "sister",   "friend",   "partner",
      "teacher",  "student",   "doctor",    "lawyer",   "detective", "officer", "agent",
      "king",     "queen",     "hero",      "villain",  "stranger", "neighbor", "crowd",
      "year",     "day",       "night",     "morning",  "evening",  "summer",   "winter",
      "spring",   "autumn",    "history",   "future",   "past",     "present",  "world",
      "country",  "village",   "school",    "office",   "train",    "plane",    "ship",
      "river",    "mountain",  "forest",    "desert",   "ocean",    "island",   "garden",
      "window",   "door",      "table",     "letter",   "phone",    "photo",    "memory",
      "dream",    "voice",     "face",      "hand",     "eye",      "heart",    "mind"};
  return words;
}

}  // namespace detail

/// Deterministic two-class sentiment corpus: class 0 = negative, class 1 =
/// positive. Each sample is a short token sequence drawn from a sentiment
/// lexicon plus shared filler words, with at least one sentiment token.
inline Dataset synth_text_corpus(int n_pos, int n_neg, std::uint64_t seed,
                                 int hash_width = kDefaultHashWidth) {
  if (n_pos <= 0 || n_neg <= 0) {
    fail(Errc::bad_argument, "synth_text_corpus: counts must be positive");
  }
  Dataset d;
  d.n_classes = 2;
  d.shape = {Modality::text, 0, 0, 0, hash_width};
  Rng rng(seed);
  std::int64_t id = 0;
  // every sample carries the same number of sentiment tokens, so the
  // sentiment axis separates the classes sharply while filler content and
  // length vary freely
  constexpr int kSentimentTokens = 8;
  const auto make = [&](int label, const std::vector<std::string>& lexicon) {
    LabeledSample s;
    s.id = id++;
    s.label = label;
    const int len = rng.uniform_int(14, 24);
    std::vector<char> slots(static_cast<std::size_t>(len), 0);
    for (int i = 0; i < kSentimentTokens; ++i) slots[static_cast<std::size_t>(i)] = 1;
    rng.shuffle(slots);
    for (int i = 0; i < len; ++i) {
      if (slots[static_cast<std::size_t>(i)]) {
        s.tokens.push_back(lexicon[rng.index(lexicon.size())]);
      } else {
        const auto& fill = detail::filler_lexicon();
        s.tokens.push_back(fill[rng.index(fill.size())]);
      }
    }
    s.features = hash_tokens(s.tokens, hash_width);
    return s;
  };
  for (int i = 0; i < n_pos; ++i) d.samples.push_back(make(1, detail::positive_lexicon()));
  for (int i = 0; i < n_neg; ++i) d.samples.push_back(make(0, detail::negative_lexicon()));
  return d;
}

namespace detail {

/// 7x5 pixel-font glyphs for digits 0-9, two styles each. The styles differ
/// in many stroke cells (pixel distance comparable to a between-digit
/// distance) while a classifier maps both to the same label, mimicking
/// handwriting style variation within a class.
inline const std::array<std::array<std::array<const char*, 7>, 2>, 10>& digit_glyphs() {
  static const std::array<std::array<std::array<const char*, 7>, 2>, 10> glyphs = {{
      {{{"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
        {"11111", "10001", "10001", "10001", "10001", "10001", "11111"}}},  // 0
      {{{"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
        {"01000", "11000", "01000", "01000", "01000", "01001", "11111"}}},  // 1
      {{{"01110", "10001", "00001", "00110", "01000", "10000", "11111"},
        {"11110", "00001", "00001", "01110", "10000", "10000", "11111"}}},  // 2
      {{{"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
        {"01110", "10001", "00001", "00110", "00001", "10001", "01110"}}},  // 3
      {{{"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
        {"10000", "10000", "10100", "10100", "11111", "00100", "00100"}}},  // 4
      {{{"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
        {"01111", "01000", "01110", "00001", "00001", "00001", "11110"}}},  // 5
      {{{"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
        {"01110", "10001", "10000", "11110", "10001", "10001", "01110"}}},  // 6
      {{{"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
        {"11111", "00001", "00010", "01111", "00100", "00100", "00100"}}},  // 7
      {{{"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
        {"11111", "10001", "10001", "11111", "10001", "10001", "11111"}}},  // 8
      {{{"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
        {"01110", "10001", "10001", "01111", "00001", "00001", "00001"}}},  // 9
  }};
  return glyphs;
}

/// Ten low-order polynomial illumination bases over the image plane, each
/// normalized to the pixel power of a linear ramp. Smooth global shading
/// with random coefficients concentrates a lot of pixel variance into a
/// handful of directions that carry no class signal.
inline const std::vector<std::vector<double>>& illumination_bases(int n) {
  static std::map<int, std::vector<std::vector<double>>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<std::vector<double>> bases;
  const auto add = [&](auto&& f) {
    std::vector<double> b(static_cast<std::size_t>(n) * n);
    double power = 0.0;
    for (int r = 0; r < n; ++r) {
      const double y = (2.0 * r - (n - 1)) / (n - 1);
      for (int c = 0; c < n; ++c) {
        const double x = (2.0 * c - (n - 1)) / (n - 1);
        const double v = f(x, y);
        b[static_cast<std::size_t>(r) * n + c] = v;
        power += v * v;
      }
    }
    const double target = static_cast<double>(n) * n / 3.0;  // power of a linear ramp
    const double scale = std::sqrt(target / power);
    for (auto& v : b) v *= scale;
    bases.push_back(std::move(b));
  };
  add([](double x, double) { return x; });
  add([](double, double y) { return y; });
  add([](double x, double y) { return x * y; });
  add([](double x, double) { return x * x - 1.0 / 3.0; });
  add([](double, double y) { return y * y - 1.0 / 3.0; });
  add([](double x, double y) { return x * (y * y - 1.0 / 3.0); });
  add([](double x, double y) { return y * (x * x - 1.0 / 3.0); });
  add([](double x, double y) { return (x * x - 1.0 / 3.0) * (y * y - 1.0 / 3.0); });
  add([](double x, double) { return x * x * x - 0.6 * x; });
  add([](double, double y) { return y * y * y - 0.6 * y; });
  return cache.emplace(n, std::move(bases)).first->second;
}

}  // namespace detail

struct DigitSynthOptions {
  int image_size = 28;
  int glyph_scale = 3;           // 7x5 font -> 21x15 strokes
  double jitter_sigma = 2.0;     // sub-pixel translation, clamped to +-3.8
  double brightness_sigma = 0.07;  // around 0.88, clamped to [0.72, 1.0]
  double shear_sigma = 0.07;     // column shear in px/row, clamped to +-0.2
  double dilate_mean = 0.25;     // stroke thickening probability per edge pixel
  double dilate_sigma = 0.15;
  double stroke_dropout = 0.07;  // per stroke pixel
  double speckle = 0.05;         // per off-stroke pixel near the glyph
  double noise_sigma = 0.08;
  int haze_blobs = 3;
  double haze_sigma = 0.05;      // per-blob amplitude scale
  double field_sigma = 0.08;     // illumination field coefficient scale
};

/// Deterministic MNIST-like corpus. Each sample draws one of two glyph
/// styles per digit plus sub-pixel translation, shear, stroke thickening,
/// per-pixel dropout/speckle, brightness variation, faint haze, and noise.
/// Raw pixel distances within a class rival between-class distances (style
/// modes), while a trained classifier separates the classes easily.
inline Dataset synth_digits(int n_per_class, std::uint64_t seed,
                            const DigitSynthOptions& opt = {}) {
  if (n_per_class <= 0) fail(Errc::bad_argument, "synth_digits: count must be positive");
  const int n = opt.image_size;
  Dataset d;
  d.n_classes = 10;
  d.shape = {Modality::image, n, n, 1, 0};
  d.samples.reserve(static_cast<std::size_t>(n_per_class) * 10);
  std::vector<double> canvas(static_cast<std::size_t>(n) * n);
  std::vector<char> stroke(static_cast<std::size_t>(n) * n);
  std::int64_t id = 0;
  for (int digit = 0; digit < 10; ++digit) {
    Rng rng(mix_seed(seed, 100 + static_cast<std::uint64_t>(digit)));
    const auto& styles = detail::digit_glyphs()[static_cast<std::size_t>(digit)];
    for (int k = 0; k < n_per_class; ++k) {
      LabeledSample s;
      s.id = id++;
      s.label = digit;
      s.features.assign(static_cast<std::size_t>(n) * n, 0.0f);

      // near-Gaussian latent factors: none of them forms the kind of strongly
      // bimodal axis that 2-means would prefer over genuine structure. The
      // style morph is continuous for the same reason: excluding half of a
      // continuum leaves no hole in the class support.
      const double morph = std::clamp(0.5 + 0.25 * rng.normal(), 0.0, 1.0);
      const double dy = std::clamp(opt.jitter_sigma * rng.normal(), -3.8, 3.8);
      const double dx = std::clamp(opt.jitter_sigma * rng.normal(), -3.8, 3.8);
      const double brightness = std::clamp(0.88 + opt.brightness_sigma * rng.normal(), 0.72, 1.0);
      const double shear = std::clamp(opt.shear_sigma * rng.normal(), -0.2, 0.2);
      const double dilate = std::clamp(opt.dilate_mean + opt.dilate_sigma * rng.normal(), 0.0, 0.6);

      // per-cell stroke weights: morph between the two styles, each font
      // cell additionally jittered on its own
      std::array<double, 35> cell_w{};
      for (int cr = 0; cr < 7; ++cr) {
        for (int cc = 0; cc < 5; ++cc) {
          const bool a = styles[0][static_cast<std::size_t>(cr)][cc] == '1';
          const bool b = styles[1][static_cast<std::size_t>(cr)][cc] == '1';
          double w = a && b ? 1.0 : a ? 1.0 - morph : b ? morph : 0.0;
          cell_w[static_cast<std::size_t>(cr) * 5 + cc] = w * rng.uniform(0.55, 1.0);
        }
      }

      std::fill(canvas.begin(), canvas.end(), 0.0);
      std::fill(stroke.begin(), stroke.end(), 0);
      const int gh = 7 * opt.glyph_scale, gw = 5 * opt.glyph_scale;
      const int top = (n - gh) / 2, left = (n - gw) / 2;
      for (int r = 0; r < gh; ++r) {
        for (int c = 0; c < gw; ++c) {
          const double w = cell_w[static_cast<std::size_t>(r / opt.glyph_scale) * 5 +
                                  static_cast<std::size_t>(c / opt.glyph_scale)];
          if (w > 0.15) stroke[static_cast<std::size_t>(top + r) * n + (left + c)] = 1;
          canvas[static_cast<std::size_t>(top + r) * n + (left + c)] = brightness * w;
        }
      }
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          const std::size_t p = static_cast<std::size_t>(r) * n + c;
          if (stroke[p]) {
            if (rng.uniform() < opt.stroke_dropout) {
              canvas[p] = 0.0;
            } else {
              canvas[p] *= rng.uniform(0.85, 1.0);
            }
            continue;
          }
          const bool edge = (r > 0 && stroke[p - static_cast<std::size_t>(n)]) ||
                            (r + 1 < n && stroke[p + static_cast<std::size_t>(n)]) ||
                            (c > 0 && stroke[p - 1]) || (c + 1 < n && stroke[p + 1]);
          if (edge && rng.uniform() < dilate) {
            canvas[p] = brightness * rng.uniform(0.7, 1.0);
          } else if (r >= top - 1 && r <= top + gh && c >= left - 1 && c <= left + gw &&
                     rng.uniform() < opt.speckle) {
            canvas[p] = brightness * rng.uniform(0.3, 0.8);
          }
        }
      }

      // sheared sub-pixel placement via bilinear sampling
      const double mid = (n - 1) / 2.0;
      for (int r = 0; r < n; ++r) {
        const double src_r = r - dy;
        for (int c = 0; c < n; ++c) {
          const double src_c = c - dx - shear * (r - mid);
          const int r0 = static_cast<int>(std::floor(src_r));
          const int c0 = static_cast<int>(std::floor(src_c));
          const double fr = src_r - r0, fc = src_c - c0;
          double v = 0.0;
          for (int ir = 0; ir <= 1; ++ir) {
            for (int ic = 0; ic <= 1; ++ic) {
              const int rr = r0 + ir, cc = c0 + ic;
              if (rr < 0 || rr >= n || cc < 0 || cc >= n) continue;
              const double w = (ir ? fr : 1.0 - fr) * (ic ? fc : 1.0 - fc);
              v += w * canvas[static_cast<std::size_t>(rr) * n + cc];
            }
          }
          s.features[static_cast<std::size_t>(r) * n + c] = static_cast<float>(v);
        }
      }

      // faint low-frequency blobs, smooth illumination shading, and pixel
      // noise: plenty of raw-space variance, none of it class-correlated
      std::vector<double> haze(static_cast<std::size_t>(n) * n, 0.0);
      for (int b = 0; b < opt.haze_blobs; ++b) {
        const double hz = std::abs(opt.haze_sigma * rng.normal());
        const double hr = rng.uniform(0.0, n - 1.0), hc = rng.uniform(0.0, n - 1.0);
        const double hs = rng.uniform(3.0, 7.0);
        for (int r = 0; r < n; ++r) {
          for (int c = 0; c < n; ++c) {
            const double d2 = (r - hr) * (r - hr) + (c - hc) * (c - hc);
            haze[static_cast<std::size_t>(r) * n + c] += hz * std::exp(-d2 / (2.0 * hs * hs));
          }
        }
      }
      const auto& bases = detail::illumination_bases(n);
      for (const auto& basis : bases) {
        const double coeff = opt.field_sigma * rng.normal();
        for (int p = 0; p < n * n; ++p) haze[static_cast<std::size_t>(p)] += coeff * basis[static_cast<std::size_t>(p)];
      }
      for (int p = 0; p < n * n; ++p) {
        double v = s.features[static_cast<std::size_t>(p)] + haze[static_cast<std::size_t>(p)] +
                   opt.noise_sigma * rng.normal();
        s.features[static_cast<std::size_t>(p)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

}  // namespace acbd
