#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Verification (1:1) and closed-set identification (1:N) metrics.
namespace eventface::metrics {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

namespace detail {

inline void require_both(const ScoreSet& s, const char* op) {
  if (s.genuine.empty() || s.impostor.empty())
    throw MetricError(std::string(op) + ": need at least one genuine and one impostor score");
}

// Number of values in sorted `v` that are >= t.
inline std::size_t count_at_least(const std::vector<double>& sorted, double t) {
  return static_cast<std::size_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
}

}  // namespace detail

// One operating point: accept when score >= threshold.
struct OperatingPoint {
  double threshold;
  double far;  // impostor scores >= threshold
  double frr;  // genuine scores < threshold
};

// Operating points at every distinct score plus one above the maximum,
// ordered by increasing threshold (FAR falls from 1, FRR rises to 1).
inline std::vector<OperatingPoint> sweep(const ScoreSet& s) {
  detail::require_both(s, "sweep");
  std::vector<double> g = s.genuine, im = s.impostor, all;
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  all.reserve(g.size() + im.size());
  std::merge(g.begin(), g.end(), im.begin(), im.end(), std::back_inserter(all));
  all.erase(std::unique(all.begin(), all.end()), all.end());
  const double ng = static_cast<double>(g.size()), ni = static_cast<double>(im.size());
  std::vector<OperatingPoint> pts;
  pts.reserve(all.size() + 1);
  for (double t : all) {
    const double far = static_cast<double>(detail::count_at_least(im, t)) / ni;
    const double frr = 1.0 - static_cast<double>(detail::count_at_least(g, t)) / ng;
    pts.push_back({t, far, frr});
  }
  pts.push_back({INFINITY, 0.0, 1.0});
  return pts;
}

// FAR and FRR crossing, linearly interpolated between the bracketing thresholds.
inline double compute_eer(const ScoreSet& s) {
  const auto pts = sweep(s);
  for (std::size_t j = 0; j + 1 < pts.size(); ++j) {
    const double d0 = pts[j].far - pts[j].frr, d1 = pts[j + 1].far - pts[j + 1].frr;
    if (d0 == 0.0) return pts[j].far;
    if (d0 > 0.0 && d1 <= 0.0) {
      const double alpha = d0 / (d0 - d1);
      return pts[j].far + alpha * (pts[j + 1].far - pts[j].far);
    }
  }
  return pts.back().far;
}

// Area under TPR(FPR); equals P(g > i) + 0.5 P(g == i).
inline double compute_roc_auc(const ScoreSet& s) {
  detail::require_both(s, "compute_roc_auc");
  std::vector<double> im = s.impostor;
  std::sort(im.begin(), im.end());
  double wins = 0.0;
  for (double g : s.genuine) {
    const auto lo = std::lower_bound(im.begin(), im.end(), g);
    const auto hi = std::upper_bound(lo, im.end(), g);
    wins += static_cast<double>(lo - im.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(s.genuine.size()) * static_cast<double>(im.size()));
}

// Genuine acceptance at the smallest swept threshold whose FAR <= far.
inline double compute_tar_at_far(const ScoreSet& s, double far) {
  detail::require_both(s, "compute_tar_at_far");
  if (!(far > 0.0 && far < 1.0)) throw MetricError("compute_tar_at_far: far must lie in (0, 1)");
  for (const auto& p : sweep(s))
    if (p.far <= far) return 1.0 - p.frr;
  return 0.0;
}

struct LabeledEmbedding {
  std::size_t label;
  std::vector<double> values;
};

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw MetricError("cosine_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-300);
}

// Rank-k identification accuracy for k = 1..max_rank. Gallery entries are
// ranked by cosine similarity, ties resolved by gallery order.
inline std::vector<double> compute_cmc(const std::vector<LabeledEmbedding>& gallery,
                                       const std::vector<LabeledEmbedding>& probes, std::size_t max_rank) {
  if (gallery.empty() || probes.empty()) throw MetricError("compute_cmc: gallery and probes must be non-empty");
  if (max_rank == 0) throw MetricError("compute_cmc: max_rank must be >= 1");
  std::vector<std::size_t> hits(max_rank, 0);
  std::vector<std::pair<double, std::size_t>> ranked(gallery.size());
  for (const auto& probe : probes) {
    bool present = false;
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      ranked[j] = {cosine_similarity(probe.values, gallery[j].values), j};
      present = present || gallery[j].label == probe.label;
    }
    if (!present) throw MetricError("compute_cmc: probe label " + std::to_string(probe.label) + " absent from gallery");
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::size_t rank = 0;
    while (gallery[ranked[rank].second].label != probe.label) ++rank;
    for (std::size_t k = rank; k < max_rank; ++k) ++hits[k];
  }
  std::vector<double> acc(max_rank);
  for (std::size_t k = 0; k < max_rank; ++k) acc[k] = static_cast<double>(hits[k]) / static_cast<double>(probes.size());
  return acc;
}

// Score CSV: header "label,score", rows "genuine,<score>" / "impostor,<score>".
inline std::string write_score_csv(const ScoreSet& s) {
  std::string out = "label,score\n";
  char buf[64];
  for (double v : s.genuine) {
    std::snprintf(buf, sizeof buf, "genuine,%.17g\n", v);
    out += buf;
  }
  for (double v : s.impostor) {
    std::snprintf(buf, sizeof buf, "impostor,%.17g\n", v);
    out += buf;
  }
  return out;
}

inline ScoreSet parse_score_csv(std::string_view text) {
  ScoreSet s;
  std::size_t start = 0, line = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string row(text.substr(start, end - start));
    start = end + 1;
    ++line;
    if (line == 1) {
      if (row != "label,score") throw MetricError("score csv: expected header 'label,score'");
      continue;
    }
    const auto comma = row.find(',');
    if (comma == std::string::npos) throw MetricError("score csv line " + std::to_string(line) + ": missing comma");
    const std::string label = row.substr(0, comma);
    char* endp = nullptr;
    const double v = std::strtod(row.c_str() + comma + 1, &endp);
    if (endp == row.c_str() + comma + 1 || *endp != '\0')
      throw MetricError("score csv line " + std::to_string(line) + ": bad score");
    if (label == "genuine") {
      s.genuine.push_back(v);
    } else if (label == "impostor") {
      s.impostor.push_back(v);
    } else {
      throw MetricError("score csv line " + std::to_string(line) + ": unknown label '" + label + "'");
    }
  }
  return s;
}

}  // namespace eventface::metrics
