#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ratx/corpus.hpp"

namespace ratx {

// Retention cutoff for aligned spans; strictly-greater comparison, so a span
// scoring exactly the threshold is dropped.
inline constexpr double kRetentionThreshold = 1.7;

// Maximum boundary window width tried when searching for candidate spans.
inline constexpr std::size_t kMaxBoundaryWindow = 7;

// Distinct whitespace-delimited tokens of a string.
inline std::set<std::string> span_token_set(const std::string& s) {
  std::set<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\n') ++j;
    if (j > i) out.insert(s.substr(i, j - i));
    i = j;
  }
  return out;
}

// Two-sided token overlap between a generated span and a candidate slice:
// |G ∩ C| / |G| + |G ∩ C| / |C|, in [0, 2]. Exact token-set matches score 2.
inline double overlap_score(const std::string& generated, const std::string& candidate) {
  const std::set<std::string> g = span_token_set(generated);
  const std::set<std::string> c = span_token_set(candidate);
  if (g.empty() || c.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : g) inter += c.count(t);
  return static_cast<double>(inter) / static_cast<double>(g.size()) +
         static_cast<double>(inter) / static_cast<double>(c.size());
}

struct CandidateSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
};

// All note slices whose first and last `n` characters match those of the
// generated string, case-insensitively. Requires 1 <= n <= generated.size().
// Start and end boundaries are searched independently, so short slices
// between a late prefix hit and an early suffix hit are included as long as
// end > start.
inline std::vector<CandidateSpan> candidate_spans(const std::string& generated,
                                                  const std::string& note, std::size_t n) {
  std::vector<CandidateSpan> out;
  if (n == 0 || generated.size() < n || note.size() < n) return out;
  const std::string gen = lowercase_ascii(generated);
  const std::string low = lowercase_ascii(note);
  const std::string prefix = gen.substr(0, n);
  const std::string suffix = gen.substr(gen.size() - n);

  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i + n <= low.size(); ++i) {
    if (low.compare(i, n, prefix) == 0) starts.push_back(i);
  }
  std::vector<std::size_t> ends;
  for (std::size_t e = n; e <= low.size(); ++e) {
    if (low.compare(e - n, n, suffix) == 0) ends.push_back(e);
  }
  for (std::size_t s : starts) {
    for (std::size_t e : ends) {
      if (e > s) out.push_back({s, e});
    }
  }
  return out;
}

struct AlignmentResult {
  std::string generated;
  std::optional<RationaleSpan> best;  // offsets into the note; doc_id/code unset
  double score = 0.0;
  bool retained = false;
};

// Best-scoring candidate for one generated span against one note. Windows
// shrink from kMaxBoundaryWindow down to 1 and all candidates compete on the
// overlap score; ties prefer the shorter slice, then the earlier one.
inline AlignmentResult best_candidate(const std::string& generated, const std::string& note,
                                      double threshold = kRetentionThreshold) {
  AlignmentResult result;
  result.generated = generated;
  if (generated.empty() || note.empty()) return result;

  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::vector<CandidateSpan> all;
  for (std::size_t n = std::min(kMaxBoundaryWindow, generated.size()); n >= 1; --n) {
    for (const CandidateSpan& c : candidate_spans(generated, note, n)) {
      if (seen.insert({c.start, c.end}).second) all.push_back(c);
    }
  }
  if (all.empty()) return result;

  std::sort(all.begin(), all.end(), [](const CandidateSpan& a, const CandidateSpan& b) {
    const std::size_t la = a.end - a.start, lb = b.end - b.start;
    return la != lb ? la < lb : a.start < b.start;
  });
  double best_score = -1.0;
  CandidateSpan best{};
  for (const CandidateSpan& c : all) {
    const double s = overlap_score(generated, note.substr(c.start, c.end - c.start));
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }

  RationaleSpan span;
  span.start = best.start;
  span.end = best.end;
  span.text = note.substr(best.start, best.end - best.start);
  span.score = best_score;
  result.best = std::move(span);
  result.score = best_score;
  result.retained = best_score > threshold;
  return result;
}

struct GeneratedSpan {
  std::string doc_id;
  std::string code;
  std::string text;
};

struct DroppedSpan {
  std::string doc_id;
  std::string code;
  std::string text;
  double best_score = 0.0;
};

struct AlignOutcome {
  std::vector<RationaleSpan> retained;
  std::vector<DroppedSpan> dropped;
};

// Aligns free-text generated spans against their documents' preprocessed
// text. Generated text is preprocessed the same way as the notes before the
// window search. Spans that score at or below the threshold, or that find no
// candidate at all, land in `dropped` with their best score.
inline AlignOutcome align_generated_spans(const std::vector<GeneratedSpan>& spans,
                                          const Corpus& corpus,
                                          double threshold = kRetentionThreshold) {
  AlignOutcome out;
  for (const GeneratedSpan& g : spans) {
    const Document& doc = corpus.at(g.doc_id);
    const std::string cleaned = preprocess_text(g.text);
    AlignmentResult r = best_candidate(cleaned, doc.text, threshold);
    if (r.retained) {
      RationaleSpan span = *r.best;
      span.doc_id = g.doc_id;
      span.code = g.code;
      out.retained.push_back(std::move(span));
    } else {
      out.dropped.push_back({g.doc_id, g.code, g.text, r.score});
    }
  }
  return out;
}

// Adapter for load_annotations: locate a text-only annotation by alignment.
inline SpanLocator make_alignment_locator(double threshold = kRetentionThreshold) {
  return [threshold](const Document& doc, const std::string&,
                     const std::string& text) -> std::optional<RationaleSpan> {
    AlignmentResult r = best_candidate(preprocess_text(text), doc.text, threshold);
    if (!r.retained) return std::nullopt;
    return r.best;
  };
}

}  // namespace ratx
