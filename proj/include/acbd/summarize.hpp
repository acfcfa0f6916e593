#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "acbd/dataset.hpp"
#include "acbd/error.hpp"
#include "acbd/rng.hpp"

namespace acbd {

// ---------------------------------------------------------------------------
// images: cluster averages and sprite mosaics
// ---------------------------------------------------------------------------

struct Image {
  int rows = 0, cols = 0, channels = 1;
  std::vector<float> px;  // row-major, [0,1]
};

/// Pixelwise arithmetic mean of the member images.
inline Image average_image(const std::vector<const LabeledSample*>& members,
                           const DataShape& shape) {
  if (shape.modality != Modality::image) {
    fail(Errc::modality_mismatch, "average_image: image modality required");
  }
  if (members.empty()) fail(Errc::bad_argument, "average_image: empty member set");
  Image out{shape.rows, shape.cols, shape.channels, {}};
  out.px.assign(static_cast<std::size_t>(shape.feature_width()), 0.0f);
  for (const auto* s : members) {
    for (std::size_t i = 0; i < out.px.size(); ++i) out.px[i] += s->features[i];
  }
  const auto n = static_cast<float>(members.size());
  for (auto& v : out.px) v /= n;
  return out;
}

namespace detail {

/// Box-filter (area average) resample of a single-channel image.
inline std::vector<float> resample(const float* src, int src_rows, int src_cols, int dst_rows,
                                   int dst_cols) {
  std::vector<float> dst(static_cast<std::size_t>(dst_rows) * dst_cols, 0.0f);
  const double ry = static_cast<double>(src_rows) / dst_rows;
  const double rx = static_cast<double>(src_cols) / dst_cols;
  for (int r = 0; r < dst_rows; ++r) {
    const double y0 = r * ry, y1 = (r + 1) * ry;
    for (int c = 0; c < dst_cols; ++c) {
      const double x0 = c * rx, x1 = (c + 1) * rx;
      double acc = 0.0, area = 0.0;
      for (int sr = static_cast<int>(y0); sr < src_rows && sr < y1; ++sr) {
        const double wy = std::min<double>(y1, sr + 1) - std::max<double>(y0, sr);
        for (int sc = static_cast<int>(x0); sc < src_cols && sc < x1; ++sc) {
          const double wx = std::min<double>(x1, sc + 1) - std::max<double>(x0, sc);
          acc += wy * wx * src[sr * src_cols + sc];
          area += wy * wx;
        }
      }
      dst[static_cast<std::size_t>(r) * dst_cols + c] = static_cast<float>(acc / area);
    }
  }
  return dst;
}

}  // namespace detail

/// Mosaic of the member images rescaled to tile size, laid row-major into
/// the smallest near-square grid. Oversized member sets are reduced to a
/// seeded uniform subsample of max_tiles.
inline Image sprite(const std::vector<const LabeledSample*>& members, const DataShape& shape,
                    int tile_rows = 8, int tile_cols = 8, std::size_t max_tiles = 1024,
                    std::uint64_t seed = 0) {
  if (shape.modality != Modality::image) {
    fail(Errc::modality_mismatch, "sprite: image modality required");
  }
  if (shape.channels != 1) fail(Errc::bad_argument, "sprite: single-channel images only");
  if (members.empty()) fail(Errc::bad_argument, "sprite: empty member set");

  std::vector<const LabeledSample*> chosen = members;
  if (chosen.size() > max_tiles) {
    std::vector<std::size_t> idx(chosen.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(mix_seed(seed, 0x5112));
    rng.shuffle(idx);
    idx.resize(max_tiles);
    std::sort(idx.begin(), idx.end());
    std::vector<const LabeledSample*> sub;
    sub.reserve(max_tiles);
    for (const auto i : idx) sub.push_back(chosen[i]);
    chosen = std::move(sub);
  }

  const auto count = chosen.size();
  const auto grid_cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
  const auto grid_rows = (count + grid_cols - 1) / grid_cols;

  Image out;
  out.rows = static_cast<int>(grid_rows) * tile_rows;
  out.cols = static_cast<int>(grid_cols) * tile_cols;
  out.channels = 1;
  out.px.assign(static_cast<std::size_t>(out.rows) * out.cols, 0.0f);
  for (std::size_t i = 0; i < count; ++i) {
    const auto tile =
        detail::resample(chosen[i]->features.data(), shape.rows, shape.cols, tile_rows, tile_cols);
    const auto gr = i / grid_cols, gc = i % grid_cols;
    for (int r = 0; r < tile_rows; ++r) {
      for (int c = 0; c < tile_cols; ++c) {
        out.px[(gr * static_cast<std::size_t>(tile_rows) + static_cast<std::size_t>(r)) * out.cols +
               gc * static_cast<std::size_t>(tile_cols) + static_cast<std::size_t>(c)] =
            tile[static_cast<std::size_t>(r) * tile_cols + static_cast<std::size_t>(c)];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG output (8-bit grayscale or RGB, fixed encoder settings)
// ---------------------------------------------------------------------------

namespace detail {

inline void png_chunk(std::ostream& out, const char type[4], const std::vector<unsigned char>& data) {
  const auto len = static_cast<std::uint32_t>(data.size());
  const std::array<unsigned char, 4> be{
      static_cast<unsigned char>(len >> 24), static_cast<unsigned char>(len >> 16),
      static_cast<unsigned char>(len >> 8), static_cast<unsigned char>(len)};
  out.write(reinterpret_cast<const char*>(be.data()), 4);
  out.write(type, 4);
  if (!data.empty()) out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  std::uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), len);
  const std::array<unsigned char, 4> crc_be{
      static_cast<unsigned char>(crc >> 24), static_cast<unsigned char>(crc >> 16),
      static_cast<unsigned char>(crc >> 8), static_cast<unsigned char>(crc)};
  out.write(reinterpret_cast<const char*>(crc_be.data()), 4);
}

}  // namespace detail

/// Write [0,1] pixel data as an 8-bit PNG. Encoder settings are fixed so
/// identical inputs always produce identical bytes.
inline void write_png(const Image& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3) {
    fail(Errc::bad_argument, "write_png: 1 or 3 channels only");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io_failure, "cannot open " + path + " for writing");

  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<unsigned char> ihdr(13);
  const auto w = static_cast<std::uint32_t>(img.cols), h = static_cast<std::uint32_t>(img.rows);
  ihdr[0] = static_cast<unsigned char>(w >> 24);
  ihdr[1] = static_cast<unsigned char>(w >> 16);
  ihdr[2] = static_cast<unsigned char>(w >> 8);
  ihdr[3] = static_cast<unsigned char>(w);
  ihdr[4] = static_cast<unsigned char>(h >> 24);
  ihdr[5] = static_cast<unsigned char>(h >> 16);
  ihdr[6] = static_cast<unsigned char>(h >> 8);
  ihdr[7] = static_cast<unsigned char>(h);
  ihdr[8] = 8;                                            // bit depth
  ihdr[9] = img.channels == 1 ? 0 : 2;                    // gray / truecolor
  ihdr[10] = ihdr[11] = ihdr[12] = 0;                     // deflate, adaptive, no interlace
  detail::png_chunk(out, "IHDR", ihdr);

  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(img.rows) * (1 + static_cast<std::size_t>(img.cols) * img.channels));
  for (int r = 0; r < img.rows; ++r) {
    raw.push_back(0);  // filter: none
    for (int c = 0; c < img.cols * img.channels; ++c) {
      const float v = std::clamp(img.px[static_cast<std::size_t>(r) * img.cols * img.channels + c], 0.0f, 1.0f);
      raw.push_back(static_cast<unsigned char>(std::lround(v * 255.0f)));
    }
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> idat(bound);
  if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    fail(Errc::io_failure, "write_png: deflate failed");
  }
  idat.resize(bound);
  detail::png_chunk(out, "IDAT", idat);
  detail::png_chunk(out, "IEND", {});
}

// ---------------------------------------------------------------------------
// Porter stemmer (the 1980 algorithm)
// ---------------------------------------------------------------------------

namespace porter {

inline bool is_consonant(const std::string& w, std::size_t i) {
  switch (w[i]) {
    case 'a': case 'e': case 'i': case 'o': case 'u':
      return false;
    case 'y':
      return i == 0 ? true : !is_consonant(w, i - 1);
    default:
      return true;
  }
}

/// m = number of VC sequences in [C](VC)^m[V].
inline int measure(const std::string& w) {
  int m = 0;
  bool prev_vowel = false;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const bool vowel = !is_consonant(w, i);
    if (prev_vowel && !vowel) ++m;
    prev_vowel = vowel;
  }
  return m;
}

inline bool has_vowel(const std::string& w) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!is_consonant(w, i)) return true;
  }
  return false;
}

inline bool ends_double_consonant(const std::string& w) {
  const auto n = w.size();
  return n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1);
}

/// *o: stem ends consonant-vowel-consonant where the final consonant is not
/// w, x, or y.
inline bool ends_cvc(const std::string& w) {
  const auto n = w.size();
  if (n < 3) return false;
  if (!is_consonant(w, n - 3) || is_consonant(w, n - 2) || !is_consonant(w, n - 1)) return false;
  const char last = w[n - 1];
  return last != 'w' && last != 'x' && last != 'y';
}

inline bool ends_with(const std::string& w, std::string_view suffix) {
  return w.size() >= suffix.size() &&
         std::string_view(w).substr(w.size() - suffix.size()) == suffix;
}

struct Rule {
  std::string_view suffix;
  std::string_view replacement;
};

/// Longest matching suffix in the list decides the rule; it fires only if
/// m(stem) satisfies min_measure.
inline bool apply_rules(std::string& w, const std::vector<Rule>& rules, int min_measure) {
  const Rule* best = nullptr;
  for (const auto& r : rules) {
    if (ends_with(w, r.suffix) && (!best || r.suffix.size() > best->suffix.size())) best = &r;
  }
  if (!best) return false;
  const std::string stem = w.substr(0, w.size() - best->suffix.size());
  if (measure(stem) > min_measure - 1) {
    w = stem + std::string(best->replacement);
  }
  return true;
}

inline std::string stem(std::string w) {
  for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (w.size() <= 2) return w;

  // step 1a
  if (ends_with(w, "sses")) {
    w.erase(w.size() - 2);
  } else if (ends_with(w, "ies")) {
    w.erase(w.size() - 2);
  } else if (!ends_with(w, "ss") && ends_with(w, "s")) {
    w.pop_back();
  }

  // step 1b
  bool cleanup = false;
  if (ends_with(w, "eed")) {
    if (measure(w.substr(0, w.size() - 3)) > 0) w.pop_back();
  } else if (ends_with(w, "ed") && has_vowel(w.substr(0, w.size() - 2))) {
    w.erase(w.size() - 2);
    cleanup = true;
  } else if (ends_with(w, "ing") && has_vowel(w.substr(0, w.size() - 3))) {
    w.erase(w.size() - 3);
    cleanup = true;
  }
  if (cleanup) {
    if (ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz")) {
      w.push_back('e');
    } else if (ends_double_consonant(w) && !ends_with(w, "l") && !ends_with(w, "s") &&
               !ends_with(w, "z")) {
      w.pop_back();
    } else if (measure(w) == 1 && ends_cvc(w)) {
      w.push_back('e');
    }
  }

  // step 1c
  if (ends_with(w, "y") && has_vowel(w.substr(0, w.size() - 1))) {
    w.back() = 'i';
  }

  static const std::vector<Rule> step2 = {
      {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"}, {"anci", "ance"},
      {"izer", "ize"},    {"abli", "able"},   {"alli", "al"},   {"entli", "ent"},
      {"eli", "e"},       {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
      {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"}, {"fulness", "ful"},
      {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},   {"biliti", "ble"}};
  apply_rules(w, step2, 1);

  static const std::vector<Rule> step3 = {{"icate", "ic"}, {"ative", ""}, {"alize", "al"},
                                          {"iciti", "ic"}, {"ical", "ic"}, {"ful", ""},
                                          {"ness", ""}};
  apply_rules(w, step3, 1);

  // step 4: plain deletions at m > 1, with the s/t condition on "ion"
  {
    static const std::vector<Rule> step4 = {
        {"ement", ""}, {"ance", ""}, {"ence", ""}, {"able", ""}, {"ible", ""},
        {"ment", ""},  {"ant", ""},  {"ent", ""},  {"ism", ""},  {"ate", ""},
        {"iti", ""},   {"ous", ""},  {"ive", ""},  {"ize", ""},  {"ion", ""},
        {"al", ""},    {"er", ""},   {"ic", ""},   {"ou", ""}};
    const Rule* best = nullptr;
    for (const auto& r : step4) {
      if (ends_with(w, r.suffix) && (!best || r.suffix.size() > best->suffix.size())) best = &r;
    }
    if (best) {
      const std::string stem_part = w.substr(0, w.size() - best->suffix.size());
      const bool ion_ok = best->suffix != "ion" ||
                          (!stem_part.empty() && (stem_part.back() == 's' || stem_part.back() == 't'));
      if (measure(stem_part) > 1 && ion_ok) w = stem_part;
    }
  }

  // step 5a
  if (ends_with(w, "e")) {
    const std::string stem_part = w.substr(0, w.size() - 1);
    const int m = measure(stem_part);
    if (m > 1 || (m == 1 && !ends_cvc(stem_part))) w = stem_part;
  }
  // step 5b
  if (measure(w) > 1 && ends_double_consonant(w) && ends_with(w, "l")) {
    w.pop_back();
  }
  return w;
}

}  // namespace porter

// ---------------------------------------------------------------------------
// stop words and LDA topics
// ---------------------------------------------------------------------------

namespace detail {

inline const std::set<std::string>& base_stopword_stems() {
  static const std::set<std::string> stems = [] {
    const std::vector<std::string> words = {
        "a",    "an",   "the",  "and",  "or",   "but",  "of",   "to",   "in",  "on",
        "at",   "by",   "for",  "with", "as",   "is",   "are",  "was",  "were", "be",
        "been", "it",   "its",  "this", "that", "these", "those", "from", "so",  "not",
        "no",   "do",   "does", "did",  "have", "has",  "had",  "he",   "she", "they",
        "i",    "you",  "we",   "his",  "her",  "their", "them", "there", "what", "which"};
    std::set<std::string> out;
    for (const auto& w : words) out.insert(porter::stem(w));
    return out;
  }();
  return stems;
}

}  // namespace detail

/// The n most frequent stems of the corpus (stop words excluded), used to
/// augment the stop list so globally common terms do not mask per-cluster
/// differences.
inline std::vector<std::string> top_corpus_stems(const Dataset& d, std::size_t n = 20) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : d.samples) {
    for (const auto& t : s.tokens) {
      const std::string st = porter::stem(t);
      if (!detail::base_stopword_stems().count(st)) counts[st]++;
    }
  }
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(n, sorted.size()); ++i) out.push_back(sorted[i].first);
  return out;
}

struct TopicWord {
  std::string stem;
  double weight = 0.0;
};

struct TopicSummary {
  std::vector<std::vector<TopicWord>> topics;          // n_topics x <=n_words, by weight
  std::vector<std::vector<double>> topic_word_dist;    // n_topics x vocab, rows sum to 1
  std::vector<std::string> vocabulary;
};

/// Collapsed-Gibbs LDA over the member documents: lowercase, Porter-stem,
/// drop stop words (base list plus the supplied corpus-frequent stems),
/// 500 sweeps, alpha=0.5, beta=0.1.
inline TopicSummary lda_topics(const std::vector<const LabeledSample*>& members, int n_topics = 2,
                               int n_words = 6, std::uint64_t seed = 0,
                               const std::vector<std::string>& extra_stop_stems = {}) {
  if (members.empty()) fail(Errc::bad_argument, "lda_topics: empty member set");
  if (n_topics <= 0 || n_words <= 0) fail(Errc::bad_argument, "lda_topics: counts must be positive");

  std::set<std::string> stop = detail::base_stopword_stems();
  stop.insert(extra_stop_stems.begin(), extra_stop_stems.end());

  std::map<std::string, int> vocab_index;
  std::vector<std::string> vocab;
  std::vector<std::vector<int>> docs;
  for (const auto* s : members) {
    std::vector<int> doc;
    for (const auto& t : s->tokens) {
      const std::string st = porter::stem(t);
      if (stop.count(st)) continue;
      auto [it, inserted] = vocab_index.try_emplace(st, static_cast<int>(vocab.size()));
      if (inserted) vocab.push_back(st);
      doc.push_back(it->second);
    }
    docs.push_back(std::move(doc));
  }
  if (vocab.empty()) fail(Errc::empty_vocabulary, "lda_topics: vocabulary empty after filtering");

  const auto V = static_cast<int>(vocab.size());
  const double alpha = 0.5, beta = 0.1;
  constexpr int sweeps = 500;

  std::vector<std::vector<int>> z(docs.size());
  std::vector<std::vector<int>> n_dk(docs.size(), std::vector<int>(static_cast<std::size_t>(n_topics), 0));
  std::vector<std::vector<int>> n_kw(static_cast<std::size_t>(n_topics), std::vector<int>(static_cast<std::size_t>(V), 0));
  std::vector<int> n_k(static_cast<std::size_t>(n_topics), 0);

  Rng rng(mix_seed(seed, 0x1DA));
  for (std::size_t d = 0; d < docs.size(); ++d) {
    z[d].resize(docs[d].size());
    for (std::size_t i = 0; i < docs[d].size(); ++i) {
      const int k = static_cast<int>(rng.index(static_cast<std::size_t>(n_topics)));
      z[d][i] = k;
      n_dk[d][static_cast<std::size_t>(k)]++;
      n_kw[static_cast<std::size_t>(k)][static_cast<std::size_t>(docs[d][i])]++;
      n_k[static_cast<std::size_t>(k)]++;
    }
  }

  std::vector<double> probs(static_cast<std::size_t>(n_topics));
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t d = 0; d < docs.size(); ++d) {
      for (std::size_t i = 0; i < docs[d].size(); ++i) {
        const int wrd = docs[d][i];
        const int old = z[d][i];
        n_dk[d][static_cast<std::size_t>(old)]--;
        n_kw[static_cast<std::size_t>(old)][static_cast<std::size_t>(wrd)]--;
        n_k[static_cast<std::size_t>(old)]--;
        double total = 0.0;
        for (int k = 0; k < n_topics; ++k) {
          probs[static_cast<std::size_t>(k)] =
              (n_dk[d][static_cast<std::size_t>(k)] + alpha) *
              (n_kw[static_cast<std::size_t>(k)][static_cast<std::size_t>(wrd)] + beta) /
              (n_k[static_cast<std::size_t>(k)] + V * beta);
          total += probs[static_cast<std::size_t>(k)];
        }
        double target = rng.uniform() * total;
        int picked = n_topics - 1;
        for (int k = 0; k < n_topics; ++k) {
          target -= probs[static_cast<std::size_t>(k)];
          if (target <= 0.0) {
            picked = k;
            break;
          }
        }
        z[d][i] = picked;
        n_dk[d][static_cast<std::size_t>(picked)]++;
        n_kw[static_cast<std::size_t>(picked)][static_cast<std::size_t>(wrd)]++;
        n_k[static_cast<std::size_t>(picked)]++;
      }
    }
  }

  TopicSummary out;
  out.vocabulary = vocab;
  for (int k = 0; k < n_topics; ++k) {
    std::vector<double> dist(static_cast<std::size_t>(V));
    const double denom = n_k[static_cast<std::size_t>(k)] + V * beta;
    for (int w = 0; w < V; ++w) {
      dist[static_cast<std::size_t>(w)] = (n_kw[static_cast<std::size_t>(k)][static_cast<std::size_t>(w)] + beta) / denom;
    }
    std::vector<int> order(static_cast<std::size_t>(V));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double wa = dist[static_cast<std::size_t>(a)], wb = dist[static_cast<std::size_t>(b)];
      return wa != wb ? wa > wb : vocab[static_cast<std::size_t>(a)] < vocab[static_cast<std::size_t>(b)];
    });
    std::vector<TopicWord> top;
    for (int i = 0; i < std::min(n_words, V); ++i) {
      top.push_back({vocab[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])],
                     dist[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]});
    }
    out.topics.push_back(std::move(top));
    out.topic_word_dist.push_back(std::move(dist));
  }
  return out;
}

}  // namespace acbd
