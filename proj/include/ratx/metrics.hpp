#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ratx/corpus.hpp"

namespace ratx {

enum class Granularity { span, token };
enum class PositionMode { exact, position_independent };

// Dedup unit for position-independent matching: normalized span texts are
// collapsed per (document, code) by default, or once per code across the
// whole corpus.
enum class PiDedupScope { per_doc_code, per_corpus };

struct MatchCounts {
  long long prediction_count = 0;  // predicted units after mode-specific dedup
  long long accurate_count = 0;    // gold units after mode-specific dedup
  long long tp = 0;
  long long fp = 0;  // prediction_count - tp
  long long fn = 0;  // accurate_count - tp
};

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Precision / recall / F1 with the 0/0 -> 0 convention for empty sides.
inline PRF prf_from_counts(const MatchCounts& c) {
  PRF m;
  m.precision = c.prediction_count > 0
                    ? static_cast<double>(c.tp) / static_cast<double>(c.prediction_count)
                    : 0.0;
  m.recall = c.accurate_count > 0
                 ? static_cast<double>(c.tp) / static_cast<double>(c.accurate_count)
                 : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

namespace detail {

inline std::string normalize_span_text(const std::string& s) {
  std::string lowered = lowercase_ascii(s);
  std::string out;
  out.reserve(lowered.size());
  bool pending = false;
  for (char c : lowered) {
    if (c == ' ' || c == '\t' || c == '\n') {
      pending = !out.empty();
    } else {
      if (pending) out.push_back(' ');
      pending = false;
      out.push_back(c);
    }
  }
  return out;
}

inline void validate_span(const RationaleSpan& s, const Corpus& corpus) {
  const Document& doc = corpus.at(s.doc_id);
  if (s.end <= s.start || s.end > doc.text.size())
    throw ValidationError("span [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                          ") out of range for document \"" + s.doc_id + "\"");
  if (!s.text.empty() && doc.text.compare(s.start, s.end - s.start, s.text) != 0)
    throw ValidationError("span text does not match offsets in document \"" + s.doc_id + "\"");
}

using GroupKey = std::pair<std::string, std::string>;  // (doc_id or "", code)

template <class T>
using Grouped = std::map<GroupKey, std::vector<T>>;

inline Grouped<RationaleSpan> group_spans(const std::vector<RationaleSpan>& spans,
                                          const Corpus& corpus, bool pool_docs) {
  Grouped<RationaleSpan> out;
  for (const RationaleSpan& s : spans) {
    validate_span(s, corpus);
    out[{pool_docs ? std::string() : s.doc_id, s.code}].push_back(s);
  }
  return out;
}

}  // namespace detail

// Counts agreements between predicted and gold rationales. Matching is per
// (document, code) group:
//   span/exact:  identical (start, end) offsets; duplicates pair up at most
//                min(multiplicities) times.
//   span/PI:     distinct normalized span texts on each side; tp = |intersection|.
//   token/exact: indices of tokens overlapping any span, as a set per side.
//   token/PI:    distinct texts of those tokens.
inline MatchCounts match_counts(const std::vector<RationaleSpan>& predicted,
                                const std::vector<RationaleSpan>& gold, const Corpus& corpus,
                                Granularity granularity, PositionMode mode,
                                PiDedupScope dedup = PiDedupScope::per_doc_code) {
  const bool pool_docs =
      mode == PositionMode::position_independent && dedup == PiDedupScope::per_corpus;
  detail::Grouped<RationaleSpan> pred = detail::group_spans(predicted, corpus, pool_docs);
  detail::Grouped<RationaleSpan> gld = detail::group_spans(gold, corpus, pool_docs);

  std::set<detail::GroupKey> keys;
  for (const auto& [k, v] : pred) keys.insert(k);
  for (const auto& [k, v] : gld) keys.insert(k);

  MatchCounts counts;
  static const std::vector<RationaleSpan> kNone;
  for (const auto& key : keys) {
    auto pit = pred.find(key);
    auto git = gld.find(key);
    const std::vector<RationaleSpan>& p = pit == pred.end() ? kNone : pit->second;
    const std::vector<RationaleSpan>& g = git == gld.end() ? kNone : git->second;

    if (granularity == Granularity::span && mode == PositionMode::exact) {
      std::map<std::pair<std::size_t, std::size_t>, long long> pc, gc;
      for (const auto& s : p) ++pc[{s.start, s.end}];
      for (const auto& s : g) ++gc[{s.start, s.end}];
      counts.prediction_count += static_cast<long long>(p.size());
      counts.accurate_count += static_cast<long long>(g.size());
      for (const auto& [offsets, n] : pc) {
        auto it = gc.find(offsets);
        if (it != gc.end()) counts.tp += std::min(n, it->second);
      }
    } else if (granularity == Granularity::span) {
      std::set<std::string> pt, gt;
      for (const auto& s : p) pt.insert(detail::normalize_span_text(s.text));
      for (const auto& s : g) gt.insert(detail::normalize_span_text(s.text));
      counts.prediction_count += static_cast<long long>(pt.size());
      counts.accurate_count += static_cast<long long>(gt.size());
      for (const auto& t : pt) counts.tp += static_cast<long long>(gt.count(t));
    } else if (mode == PositionMode::exact) {
      // Positional matching never pools documents, so the key carries the id.
      std::set<std::size_t> pi, gi;
      const Document& doc = corpus.at(key.first);
      for (const auto& s : p)
        for (std::size_t t : covered_tokens(doc, s.start, s.end)) pi.insert(t);
      for (const auto& s : g)
        for (std::size_t t : covered_tokens(doc, s.start, s.end)) gi.insert(t);
      counts.prediction_count += static_cast<long long>(pi.size());
      counts.accurate_count += static_cast<long long>(gi.size());
      for (std::size_t t : pi) counts.tp += static_cast<long long>(gi.count(t));
    } else {
      std::set<std::string> pt, gt;
      for (const auto& s : p) {
        const Document& doc = corpus.at(s.doc_id);
        for (std::size_t t : covered_tokens(doc, s.start, s.end))
          pt.insert(detail::normalize_span_text(doc.tokens[t].text));
      }
      for (const auto& s : g) {
        const Document& doc = corpus.at(s.doc_id);
        for (std::size_t t : covered_tokens(doc, s.start, s.end))
          gt.insert(detail::normalize_span_text(doc.tokens[t].text));
      }
      counts.prediction_count += static_cast<long long>(pt.size());
      counts.accurate_count += static_cast<long long>(gt.size());
      for (const auto& t : pt) counts.tp += static_cast<long long>(gt.count(t));
    }
  }
  counts.fp = counts.prediction_count - counts.tp;
  counts.fn = counts.accurate_count - counts.tp;
  return counts;
}

// ---------------------------------------------------------------------------
// Multi-label classification metrics.
// ---------------------------------------------------------------------------

struct ClassificationReport {
  double precision_micro = 0.0, recall_micro = 0.0, f1_micro = 0.0;
  double precision_macro = 0.0, recall_macro = 0.0, f1_macro = 0.0;
  double auc_micro = 0.0, auc_macro = 0.0;
  std::map<int, double> precision_at;  // N -> P@N
  bool no_gold_warning = false;        // no label had a gold positive

  double metric(const std::string& name) const {
    if (name == "precision_micro") return precision_micro;
    if (name == "recall_micro") return recall_micro;
    if (name == "f1_micro") return f1_micro;
    if (name == "precision_macro") return precision_macro;
    if (name == "recall_macro") return recall_macro;
    if (name == "f1_macro") return f1_macro;
    if (name == "auc_micro") return auc_micro;
    if (name == "auc_macro") return auc_macro;
    const std::string prefix = "precision_at_";
    if (name.rfind(prefix, 0) == 0) {
      int n = std::stoi(name.substr(prefix.size()));
      auto it = precision_at.find(n);
      if (it != precision_at.end()) return it->second;
    }
    throw ConfigError("unknown metric: " + name);
  }
};

namespace detail {

// Rank-statistic AUC over (score, positive) pairs; tied scores share their
// average rank, which values each tie as one half. Returns nullopt unless
// both classes are present.
inline std::optional<double> rank_auc(std::vector<std::pair<double, bool>>& cells) {
  std::size_t npos = 0;
  for (const auto& c : cells) npos += c.second ? 1 : 0;
  const std::size_t nneg = cells.size() - npos;
  if (npos == 0 || nneg == 0) return std::nullopt;
  std::sort(cells.begin(), cells.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < cells.size()) {
    std::size_t j = i;
    while (j < cells.size() && cells[j].first == cells[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k) {
      if (cells[k].second) pos_rank_sum += avg_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(npos), nn = static_cast<double>(nneg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace detail

// Scores, thresholded decisions, and gold indicators are parallel per-document
// rows over a fixed label space. Macro averages run over labels with at least
// one gold positive; macro AUC additionally needs a negative. P@N ranks by
// score with ties broken toward the lower label index.
inline ClassificationReport classification_report(
    const std::vector<Vec>& scores, const std::vector<std::vector<std::uint8_t>>& decisions,
    const std::vector<std::vector<std::uint8_t>>& gold, const std::vector<int>& at_n = {}) {
  if (scores.size() != gold.size() || decisions.size() != gold.size())
    throw ValidationError("scores, decisions, and gold must have one row per document");
  ClassificationReport rep;
  if (scores.empty()) {
    rep.no_gold_warning = true;
    return rep;
  }
  const std::size_t n_labels = gold.front().size();
  for (std::size_t d = 0; d < scores.size(); ++d) {
    if (scores[d].size() != n_labels || decisions[d].size() != n_labels ||
        gold[d].size() != n_labels)
      throw ValidationError("ragged metric input at document " + std::to_string(d));
  }

  long long tp_all = 0, fp_all = 0, fn_all = 0;
  double macro_p = 0.0, macro_r = 0.0, macro_f = 0.0;
  std::size_t macro_n = 0;
  double auc_sum = 0.0;
  std::size_t auc_n = 0;
  std::vector<std::pair<double, bool>> pooled;
  pooled.reserve(scores.size() * n_labels);

  for (std::size_t l = 0; l < n_labels; ++l) {
    long long tp = 0, fp = 0, fn = 0, gold_pos = 0;
    std::vector<std::pair<double, bool>> cells;
    cells.reserve(scores.size());
    for (std::size_t d = 0; d < scores.size(); ++d) {
      const bool y = gold[d][l] != 0;
      const bool yhat = decisions[d][l] != 0;
      gold_pos += y ? 1 : 0;
      tp += (y && yhat) ? 1 : 0;
      fp += (!y && yhat) ? 1 : 0;
      fn += (y && !yhat) ? 1 : 0;
      cells.push_back({scores[d][l], y});
      pooled.push_back({scores[d][l], y});
    }
    if (gold_pos > 0) {
      MatchCounts c;
      c.prediction_count = tp + fp;
      c.accurate_count = tp + fn;
      c.tp = tp;
      const PRF m = prf_from_counts(c);
      macro_p += m.precision;
      macro_r += m.recall;
      macro_f += m.f1;
      ++macro_n;
      if (auto auc = detail::rank_auc(cells)) {
        auc_sum += *auc;
        ++auc_n;
      }
    }
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
  }

  MatchCounts micro;
  micro.prediction_count = tp_all + fp_all;
  micro.accurate_count = tp_all + fn_all;
  micro.tp = tp_all;
  const PRF m = prf_from_counts(micro);
  rep.precision_micro = m.precision;
  rep.recall_micro = m.recall;
  rep.f1_micro = m.f1;
  if (macro_n > 0) {
    rep.precision_macro = macro_p / static_cast<double>(macro_n);
    rep.recall_macro = macro_r / static_cast<double>(macro_n);
    rep.f1_macro = macro_f / static_cast<double>(macro_n);
  } else {
    rep.no_gold_warning = true;
  }
  if (auc_n > 0) rep.auc_macro = auc_sum / static_cast<double>(auc_n);
  if (auto auc = detail::rank_auc(pooled)) rep.auc_micro = *auc;

  for (int n : at_n) {
    if (n <= 0) throw ConfigError("precision@N needs N >= 1");
    double total = 0.0;
    for (std::size_t d = 0; d < scores.size(); ++d) {
      std::vector<std::size_t> order(n_labels);
      for (std::size_t l = 0; l < n_labels; ++l) order[l] = l;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[d][a] > scores[d][b];
      });
      long long hits = 0;
      const std::size_t top = std::min<std::size_t>(static_cast<std::size_t>(n), n_labels);
      for (std::size_t r = 0; r < top; ++r) hits += gold[d][order[r]] ? 1 : 0;
      total += static_cast<double>(hits) / static_cast<double>(n);
    }
    rep.precision_at[n] = total / static_cast<double>(scores.size());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Inter-annotator agreement.
// ---------------------------------------------------------------------------

struct IaaReport {
  MatchCounts span_counts;
  MatchCounts token_counts;
  PRF span;
  PRF token;
};

// Agreement between two annotation sets. `a` plays the candidate role and `b`
// the reference: precision = |a ∩ b| / |a|, recall = |a ∩ b| / |b|. At the
// token level, swapping the annotators swaps precision and recall.
inline IaaReport iaa_report(const std::vector<RationaleSpan>& a,
                            const std::vector<RationaleSpan>& b, const Corpus& corpus) {
  IaaReport rep;
  rep.span_counts = match_counts(a, b, corpus, Granularity::span, PositionMode::exact);
  rep.token_counts = match_counts(a, b, corpus, Granularity::token, PositionMode::exact);
  rep.span = prf_from_counts(rep.span_counts);
  rep.token = prf_from_counts(rep.token_counts);
  return rep;
}

}  // namespace ratx
