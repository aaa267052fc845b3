#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lfb/box.hpp"
#include "lfb/errors.hpp"
#include "lfb/textio.hpp"

namespace lfb {

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0;
};

struct GtInstance {
  Box box;
  int class_id = 0;
};

/// One evaluated frame: predictions and ground truth keyed by frame id.
struct FrameRecord {
  std::int64_t frame_id = 0;
  std::vector<Detection> detections;
  std::vector<GtInstance> ground_truth;
};


// ---------------------------------------------------------------------------
// Frame-level average precision.
// ---------------------------------------------------------------------------

/// Average precision for one class at the given overlap threshold.
///
/// Detections are ranked by (score desc, frame id asc, within-frame order).
/// Each detection greedily claims the unmatched same-frame ground-truth
/// instance with the highest overlap at or above the threshold (ties to the
/// earlier instance); the rest are false positives. AP integrates the
/// all-points interpolated precision envelope over recall. A class with no
/// ground truth scores 0 by convention.
inline double frame_ap(const std::vector<FrameRecord>& records, int class_id,
                       double iou_threshold = 0.5) {
  struct Ranked {
    double score;
    std::int64_t frame_id;
    std::size_t record_idx;
    std::size_t det_idx;
  };
  std::vector<Ranked> ranked;
  std::size_t npos = 0;
  // Per record: indices of this class's ground-truth instances.
  std::vector<std::vector<std::size_t>> gt_idx(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    for (std::size_t g = 0; g < records[r].ground_truth.size(); ++g) {
      if (records[r].ground_truth[g].class_id == class_id) {
        gt_idx[r].push_back(g);
        ++npos;
      }
    }
    for (std::size_t d = 0; d < records[r].detections.size(); ++d) {
      if (records[r].detections[d].class_id == class_id) {
        ranked.push_back(
            {records[r].detections[d].score, records[r].frame_id, r, d});
      }
    }
  }
  if (npos == 0) return 0.0;
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.frame_id != b.frame_id) return a.frame_id < b.frame_id;
    return a.det_idx < b.det_idx;
  });

  std::vector<std::vector<bool>> matched(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    matched[r].assign(gt_idx[r].size(), false);
  }
  std::vector<bool> is_tp(ranked.size(), false);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& det = records[ranked[i].record_idx].detections[ranked[i].det_idx];
    const auto& candidates = gt_idx[ranked[i].record_idx];
    double best = 0;
    std::size_t best_pos = candidates.size();
    for (std::size_t p = 0; p < candidates.size(); ++p) {
      if (matched[ranked[i].record_idx][p]) continue;
      const double v = iou(
          det.box,
          records[ranked[i].record_idx].ground_truth[candidates[p]].box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_pos = p;
      }
    }
    if (best_pos < candidates.size()) {
      matched[ranked[i].record_idx][best_pos] = true;
      is_tp[i] = true;
    }
  }

  // Precision envelope over the recall steps.
  std::vector<double> precision(ranked.size()), recall(ranked.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (is_tp[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(npos);
  }
  for (std::size_t i = ranked.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (is_tp[i]) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

inline std::vector<double> per_class_ap(const std::vector<FrameRecord>& records,
                                        int num_classes,
                                        double iou_threshold = 0.5) {
  std::vector<double> aps(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    aps[static_cast<std::size_t>(c)] = frame_ap(records, c, iou_threshold);
  }
  return aps;
}

/// Mean over all classes, zero-ground-truth classes included as 0.
inline double mean_ap(const std::vector<FrameRecord>& records, int num_classes,
                      double iou_threshold = 0.5) {
  if (num_classes <= 0) throw ValueError("mean_ap: need at least one class");
  const auto aps = per_class_ap(records, num_classes, iou_threshold);
  double sum = 0;
  for (double v : aps) sum += v;
  return sum / static_cast<double>(num_classes);
}

// ---------------------------------------------------------------------------
// Top-k accuracy.
// ---------------------------------------------------------------------------

/// True iff `label` ranks in the first k classes by (score desc, class index
/// asc). k must be at least 1.
inline bool topk_hit(const std::vector<double>& scores, std::size_t label,
                     std::size_t k) {
  if (k == 0) throw ValueError("topk_hit: k must be positive");
  if (label >= scores.size()) throw ValueError("topk_hit: label out of range");
  std::size_t rank = 0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c] > scores[label] ||
        (scores[c] == scores[label] && c < label)) {
      ++rank;
    }
  }
  return rank < k;
}

inline double topk_accuracy(const std::vector<std::vector<double>>& scores,
                            const std::vector<std::size_t>& labels,
                            std::size_t k) {
  if (scores.size() != labels.size()) {
    throw ShapeError("topk_accuracy: scores/labels length mismatch");
  }
  if (scores.empty()) throw ValueError("topk_accuracy: empty batch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (topk_hit(scores[i], labels[i], k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// Verb-noun action prior.
// ---------------------------------------------------------------------------

/// Co-occurrence prior over (verb, noun) pairs: mu(v, n) is the fraction of
/// n's observations that carried verb v. Ids are assigned in first-seen
/// order, which the text round-trip preserves.
class PriorTable {
 public:
  void add(const std::string& verb, const std::string& noun,
           std::uint64_t count) {
    const std::size_t v = intern(verb, verb_ids_, verb_names_);
    const std::size_t n = intern(noun, noun_ids_, noun_names_);
    pair_counts_[{v, n}] += count;
    if (noun_totals_.size() <= n) noun_totals_.resize(n + 1, 0);
    noun_totals_[n] += count;
  }

  std::size_t num_verbs() const { return verb_names_.size(); }
  std::size_t num_nouns() const { return noun_names_.size(); }
  const std::string& verb_name(std::size_t id) const {
    return verb_names_.at(id);
  }
  const std::string& noun_name(std::size_t id) const {
    return noun_names_.at(id);
  }

  /// count(v, n) / count(n); 0 for unseen pairs.
  double mu(std::size_t verb_id, std::size_t noun_id) const {
    const auto it = pair_counts_.find({verb_id, noun_id});
    if (it == pair_counts_.end() || noun_totals_[noun_id] == 0) return 0.0;
    return static_cast<double>(it->second) /
           static_cast<double>(noun_totals_[noun_id]);
  }

  /// Lines of "verb noun count", one per pair. Blank lines and #-comments
  /// are ignored.
  static PriorTable parse(std::istream& in) {
    PriorTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto fields = detail::split_fields(line);
      if (fields.empty() || fields.front().front() == '#') continue;
      if (fields.size() != 3) {
        throw ValueError("line " + std::to_string(line_no) +
                         ": expected 'verb noun count'");
      }
      const std::int64_t count = detail::parse_int(fields[2], line_no);
      if (count < 0) {
        throw ValueError("line " + std::to_string(line_no) +
                         ": negative count");
      }
      table.add(fields[0], fields[1], static_cast<std::uint64_t>(count));
    }
    return table;
  }

  void serialize(std::ostream& out) const {
    for (const auto& [key, count] : pair_counts_) {
      out << verb_names_[key.first] << ' ' << noun_names_[key.second] << ' '
          << count << '\n';
    }
  }

 private:
  static std::size_t intern(const std::string& name,
                            std::map<std::string, std::size_t>& ids,
                            std::vector<std::string>& names) {
    const auto it = ids.find(name);
    if (it != ids.end()) return it->second;
    const std::size_t id = names.size();
    ids.emplace(name, id);
    names.push_back(name);
    return id;
  }

  std::map<std::string, std::size_t> verb_ids_, noun_ids_;
  std::vector<std::string> verb_names_, noun_names_;
  std::map<std::pair<std::size_t, std::size_t>, std::uint64_t> pair_counts_;
  std::vector<std::uint64_t> noun_totals_;
};

struct ActionScore {
  std::size_t verb_id = 0;
  std::size_t noun_id = 0;
  double score = 0;
};

/// Scores every pair present in the prior as mu(v, n) * P(v) * P(n),
/// normalized to sum to 1 when any mass remains. The probability vectors are
/// indexed by the table's verb/noun ids. Result is sorted by score descending,
/// ties by (verb id, noun id).
inline std::vector<ActionScore> action_scores(
    const PriorTable& prior, const std::vector<double>& p_verb,
    const std::vector<double>& p_noun) {
  if (p_verb.size() != prior.num_verbs() ||
      p_noun.size() != prior.num_nouns()) {
    throw ShapeError("action_scores: probability vectors must match the "
                     "prior vocabulary");
  }
  std::vector<ActionScore> out;
  double total = 0;
  for (std::size_t v = 0; v < prior.num_verbs(); ++v) {
    for (std::size_t n = 0; n < prior.num_nouns(); ++n) {
      const double m = prior.mu(v, n);
      if (m == 0.0) continue;
      const double s = m * p_verb[v] * p_noun[n];
      out.push_back({v, n, s});
      total += s;
    }
  }
  if (total > 0) {
    for (auto& a : out) a.score /= total;
  }
  std::sort(out.begin(), out.end(), [](const ActionScore& a,
                                       const ActionScore& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.verb_id != b.verb_id) return a.verb_id < b.verb_id;
    return a.noun_id < b.noun_id;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Multi-clip aggregation.
// ---------------------------------------------------------------------------

enum class AggregateMode { kMax, kMean };

/// Combines per-clip class scores into one vector, max or mean per class.
inline std::vector<double> aggregate_predictions(
    const std::vector<std::vector<double>>& clip_scores, AggregateMode mode) {
  if (clip_scores.empty()) {
    throw ValueError("aggregate_predictions: no clips");
  }
  const std::size_t c = clip_scores.front().size();
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < clip_scores.size(); ++i) {
    if (clip_scores[i].size() != c) {
      throw ShapeError("aggregate_predictions: ragged clip scores");
    }
    for (std::size_t j = 0; j < c; ++j) {
      if (mode == AggregateMode::kMean) {
        out[j] += clip_scores[i][j];
      } else {
        out[j] = i == 0 ? clip_scores[i][j] : std::max(out[j],
                                                       clip_scores[i][j]);
      }
    }
  }
  if (mode == AggregateMode::kMean) {
    for (double& v : out) v /= static_cast<double>(clip_scores.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detection / ground-truth text interchange.
// ---------------------------------------------------------------------------

/// Detections: "frame_id, x1, y1, x2, y2, class_id, score" per line.
/// Ground truth: same without the score. Comma or whitespace separated;
/// blank lines and #-comments ignored.
inline std::vector<FrameRecord> load_eval_records(std::istream& det_in,
                                                  std::istream& gt_in) {
  std::map<std::int64_t, FrameRecord> by_frame;
  auto parse_stream = [&](std::istream& in, bool with_score) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto fields = detail::split_fields(line);
      if (fields.empty() || fields.front().front() == '#') continue;
      const std::size_t expected = with_score ? 7u : 6u;
      if (fields.size() != expected) {
        throw ValueError("line " + std::to_string(line_no) + ": expected " +
                         std::to_string(expected) + " fields, got " +
                         std::to_string(fields.size()));
      }
      const std::int64_t frame = detail::parse_int(fields[0], line_no);
      const Box box{detail::parse_double(fields[1], line_no),
                    detail::parse_double(fields[2], line_no),
                    detail::parse_double(fields[3], line_no),
                    detail::parse_double(fields[4], line_no)};
      const std::int64_t cls = detail::parse_int(fields[5], line_no);
      if (cls < 0) {
        throw ValueError("line " + std::to_string(line_no) +
                         ": negative class id");
      }
      FrameRecord& rec = by_frame[frame];
      rec.frame_id = frame;
      if (with_score) {
        rec.detections.push_back(
            {box, static_cast<int>(cls),
             detail::parse_double(fields[6], line_no)});
      } else {
        rec.ground_truth.push_back({box, static_cast<int>(cls)});
      }
    }
  };
  parse_stream(det_in, true);
  parse_stream(gt_in, false);
  std::vector<FrameRecord> records;
  records.reserve(by_frame.size());
  for (auto& [frame, rec] : by_frame) records.push_back(std::move(rec));
  return records;
}

inline void save_detections(const std::vector<FrameRecord>& records,
                            std::ostream& out) {
  for (const auto& rec : records) {
    for (const auto& d : rec.detections) {
      out << rec.frame_id << ", " << detail::format_double(d.box.x1) << ", "
          << detail::format_double(d.box.y1) << ", "
          << detail::format_double(d.box.x2) << ", "
          << detail::format_double(d.box.y2) << ", " << d.class_id << ", "
          << detail::format_double(d.score) << '\n';
    }
  }
}

inline void save_ground_truth(const std::vector<FrameRecord>& records,
                              std::ostream& out) {
  for (const auto& rec : records) {
    for (const auto& g : rec.ground_truth) {
      out << rec.frame_id << ", " << detail::format_double(g.box.x1) << ", "
          << detail::format_double(g.box.y1) << ", "
          << detail::format_double(g.box.x2) << ", "
          << detail::format_double(g.box.y2) << ", " << g.class_id << '\n';
    }
  }
}

}  // namespace lfb
