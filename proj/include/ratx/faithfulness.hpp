#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "ratx/coder.hpp"
#include "ratx/corpus.hpp"
#include "ratx/metrics.hpp"

namespace ratx {

enum class PerturbMode { retain, remove };

inline std::string to_string(PerturbMode m) {
  return m == PerturbMode::retain ? "sufficiency" : "comprehensiveness";
}

inline PerturbMode perturb_mode_from(const std::string& s) {
  if (s == "retain" || s == "sufficiency") return PerturbMode::retain;
  if (s == "remove" || s == "comprehensiveness") return PerturbMode::remove;
  throw ConfigError("unknown perturbation mode: " + s);
}

struct PerturbedDocument {
  std::string base_id;
  PerturbMode mode = PerturbMode::retain;
  std::vector<std::size_t> kept;  // token indices of the base document
  Document doc;                   // rebuilt text/tokens, same id and gold codes
};

// Rebuilds a document from a token selection. retain keeps the selected
// tokens, remove keeps the complement. Removing everything falls back to
// keeping the single lowest-weighted token (ties to the lower index), so the
// model always sees at least one token; `attention` supplies those weights
// and is only required in that case. Kept tokens keep their relative order
// and are rejoined with single spaces.
inline PerturbedDocument perturb_document(const Document& doc,
                                          const std::vector<std::size_t>& selected,
                                          PerturbMode mode, const Vec& attention = {}) {
  const std::size_t n = doc.tokens.size();
  if (n == 0) throw EvalError("empty document: " + doc.id);
  std::vector<std::uint8_t> is_selected(n, 0);
  for (std::size_t idx : selected) {
    if (idx >= n)
      throw ValidationError("selected token index out of range in document \"" + doc.id + "\"");
    is_selected[idx] = 1;
  }

  PerturbedDocument out;
  out.base_id = doc.id;
  out.mode = mode;
  for (std::size_t j = 0; j < n; ++j) {
    const bool keep = mode == PerturbMode::retain ? is_selected[j] != 0 : is_selected[j] == 0;
    if (keep) out.kept.push_back(j);
  }
  if (out.kept.empty()) {
    if (mode == PerturbMode::retain) throw ValidationError("retain needs a non-empty selection");
    if (attention.size() != n)
      throw ValidationError("removing every token needs attention weights for the fallback");
    std::size_t arg = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (attention[j] < attention[arg]) arg = j;
    out.kept.push_back(arg);
  }

  std::string text;
  for (std::size_t j : out.kept) {
    if (!text.empty()) text.push_back(' ');
    text += doc.tokens[j].text;
  }
  out.doc.id = doc.id;
  out.doc.raw_text = text;
  out.doc.text = std::move(text);
  out.doc.tokens = tokenize_with_offsets(out.doc.text);
  out.doc.gold_codes = doc.gold_codes;
  return out;
}

struct FaithfulnessResult {
  std::string mode;  // "sufficiency" or "comprehensiveness"
  double k = 0.0;
  std::string metric;
  double p_full = 0.0;
  double p_perturbed = 0.0;
  double delta = 0.0;          // p_full - p_perturbed
  double retention_pct = 0.0;  // mean share of tokens the model saw
};

namespace detail {

struct ScoredCorpus {
  std::vector<Vec> scores;
  std::vector<std::vector<std::uint8_t>> decisions;
  std::vector<std::vector<std::uint8_t>> gold;
};

inline ScoredCorpus score_documents(const ModelParams& model, const std::vector<Document>& docs) {
  ScoredCorpus s;
  for (const Document& doc : docs) {
    PredictionSet pred = predict_codes(model, doc);
    s.scores.push_back(pred.probabilities);
    s.decisions.push_back(pred.decisions);
    s.gold.push_back(model.gold_vector(doc));
  }
  return s;
}

}  // namespace detail

// Aggregate metric drop from full documents to their perturbations. The two
// lists are parallel; `k` is echoed into the result for reporting.
inline FaithfulnessResult evaluate_perturbed(const ModelParams& model,
                                             const std::vector<Document>& docs,
                                             const std::vector<PerturbedDocument>& perturbed,
                                             const std::string& metric, double k = 0.0,
                                             const std::vector<int>& at_n = {}) {
  if (docs.size() != perturbed.size() || docs.empty())
    throw ValidationError("need one perturbation per document");
  detail::ScoredCorpus full = detail::score_documents(model, docs);
  std::vector<Document> pdocs;
  pdocs.reserve(perturbed.size());
  double retained = 0.0;
  for (std::size_t i = 0; i < perturbed.size(); ++i) {
    pdocs.push_back(perturbed[i].doc);
    retained += static_cast<double>(perturbed[i].kept.size()) /
                static_cast<double>(docs[i].tokens.size());
  }
  detail::ScoredCorpus pert = detail::score_documents(model, pdocs);
  // Gold stays that of the originals.
  const ClassificationReport full_rep =
      classification_report(full.scores, full.decisions, full.gold, at_n);
  const ClassificationReport pert_rep =
      classification_report(pert.scores, pert.decisions, full.gold, at_n);

  FaithfulnessResult r;
  r.mode = to_string(perturbed.front().mode);
  r.k = k;
  r.metric = metric;
  r.p_full = full_rep.metric(metric);
  r.p_perturbed = pert_rep.metric(metric);
  r.delta = r.p_full - r.p_perturbed;
  r.retention_pct = 100.0 * retained / static_cast<double>(docs.size());
  return r;
}

// Sweeps the selection budget k over both perturbation directions. Attention
// and decisions are computed once per document and reused across the grid.
// Results come as one sufficiency block then one comprehensiveness block,
// each in ascending k.
inline std::vector<FaithfulnessResult> faithfulness_sweep(
    const ModelParams& model, const Corpus& corpus, SelectionMode sel_mode,
    const std::vector<double>& ks, SelectionScope scope, const std::string& metric,
    const std::vector<int>& at_n = {}) {
  if (corpus.docs.empty()) throw ValidationError("empty corpus");
  if (ks.empty()) throw ConfigError("empty selection grid");
  std::vector<double> grid = ks;
  std::sort(grid.begin(), grid.end());

  std::vector<Vec> rows;  // ranking weights per document
  rows.reserve(corpus.docs.size());
  for (const Document& doc : corpus.docs) {
    Forward f = forward(model, doc);
    rows.push_back(pooled_attention_row(f.attention, scope, &f.prediction.decisions));
  }

  std::vector<FaithfulnessResult> out;
  for (PerturbMode mode : {PerturbMode::retain, PerturbMode::remove}) {
    for (double k : grid) {
      std::vector<PerturbedDocument> perturbed;
      perturbed.reserve(corpus.docs.size());
      for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
        const std::vector<std::size_t> sel = select_top_tokens(rows[i], sel_mode, k);
        perturbed.push_back(perturb_document(corpus.docs[i], sel, mode, rows[i]));
      }
      out.push_back(evaluate_perturbed(model, corpus.docs, perturbed, metric, k, at_n));
    }
  }
  return out;
}

}  // namespace ratx
