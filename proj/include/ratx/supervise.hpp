#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ratx/coder.hpp"
#include "ratx/corpus.hpp"

namespace ratx {

// ---------------------------------------------------------------------------
// Span supervision for attention.
// ---------------------------------------------------------------------------

struct RationaleMask {
  Matrix m;  // n_labels x n_tokens, entries 0 or 1
};

// Marks every token overlapping a span of the matching code. Labels without
// any span for this document keep an all-zero row, which the rationale loss
// treats as "no supervision" rather than "attend nowhere".
inline RationaleMask spans_to_mask(const Document& doc, const std::vector<RationaleSpan>& spans,
                                   const std::vector<CodeLabel>& labels) {
  RationaleMask mask;
  mask.m = Matrix(labels.size(), doc.tokens.size());
  std::map<std::string, std::size_t> label_index;
  for (std::size_t l = 0; l < labels.size(); ++l) label_index[labels[l].code] = l;
  for (const RationaleSpan& s : spans) {
    if (s.doc_id != doc.id) continue;
    auto it = label_index.find(s.code);
    if (it == label_index.end())
      throw ValidationError("annotation code \"" + s.code + "\" is not in the label space");
    if (s.end <= s.start || s.end > doc.text.size())
      throw ValidationError("span out of range for document \"" + doc.id + "\"");
    for (std::size_t t : covered_tokens(doc, s.start, s.end)) mask.m(it->second, t) = 1.0;
  }
  return mask;
}

// Attention-vs-mask binary cross-entropy, restricted to labels that carry at
// least one marked token.
inline double rationale_loss(const AttentionMatrix& attention, const RationaleMask& mask,
                             double eps = 1e-7) {
  return rationale_loss_rows(attention.weights, mask.m, eps);
}

// Joint training: classification loss plus cfg.lambda times the rationale
// loss on documents that have annotated spans. Masks are precomputed once so
// epochs stay cheap.
inline TrainTrace multiobjective_train(ModelParams& params, const Corpus& corpus,
                                       const std::vector<RationaleSpan>& spans,
                                       const TrainConfig& cfg) {
  std::map<std::string, std::vector<RationaleSpan>> by_doc;
  for (const RationaleSpan& s : spans) by_doc[s.doc_id].push_back(s);
  std::vector<Matrix> masks(corpus.docs.size());
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
    auto it = by_doc.find(corpus.docs[i].id);
    if (it == by_doc.end()) continue;
    masks[i] = spans_to_mask(corpus.docs[i], it->second, params.labels).m;
  }
  const MaskProvider provider = [&masks](std::size_t i) -> const Matrix* {
    return masks[i].empty() ? nullptr : &masks[i];
  };
  return train_with_supervision(params, corpus, cfg, provider, cfg.lambda);
}

// ---------------------------------------------------------------------------
// BIO tagging over tokens.
// ---------------------------------------------------------------------------

// Tag ids: 0 is O; code c (by index) owns B at 1 + 2c and I at 2 + 2c.
struct BioTagset {
  std::vector<std::string> codes;  // sorted, distinct

  std::size_t size() const { return 1 + 2 * codes.size(); }

  std::size_t b_tag(std::size_t code_idx) const { return 1 + 2 * code_idx; }
  std::size_t i_tag(std::size_t code_idx) const { return 2 + 2 * code_idx; }

  bool is_b(std::size_t tag) const { return tag != 0 && tag % 2 == 1; }
  bool is_i(std::size_t tag) const { return tag != 0 && tag % 2 == 0; }
  std::size_t code_of(std::size_t tag) const { return (tag - 1) / 2; }

  std::size_t code_index(const std::string& code) const {
    auto it = std::lower_bound(codes.begin(), codes.end(), code);
    if (it == codes.end() || *it != code)
      throw ValidationError("code \"" + code + "\" is not in the tagset");
    return static_cast<std::size_t>(it - codes.begin());
  }

  std::string name(std::size_t tag) const {
    if (tag == 0) return "O";
    return (is_b(tag) ? "B-" : "I-") + codes[code_of(tag)];
  }
};

struct BioSequence {
  std::vector<std::size_t> tags;  // one per token
};

struct BioEncodeResult {
  BioSequence seq;
  std::size_t dropped_spans = 0;  // spans fully shadowed by longer ones
};

// Flattens possibly-overlapping spans into one tag per token. When spans
// compete for tokens the longer one (in tokens) wins; equal lengths go to the
// earlier span. A span that ends up with no tokens of its own is dropped and
// counted. Kept fragments remain contiguous because a competitor either
// covers an entire prefix/suffix or the whole span.
inline BioEncodeResult encode_bio(const Document& doc, const std::vector<RationaleSpan>& spans,
                                  const BioTagset& tagset) {
  BioEncodeResult out;
  out.seq.tags.assign(doc.tokens.size(), 0);

  struct TokenSpan {
    std::size_t first, last;  // inclusive token range
    std::size_t code_idx;
    std::size_t order;
  };
  std::vector<TokenSpan> ts;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const RationaleSpan& s = spans[i];
    if (s.doc_id != doc.id) continue;
    const std::vector<std::size_t> covered = covered_tokens(doc, s.start, s.end);
    if (covered.empty()) {
      ++out.dropped_spans;
      continue;
    }
    ts.push_back({covered.front(), covered.back(), tagset.code_index(s.code), i});
  }
  std::sort(ts.begin(), ts.end(), [](const TokenSpan& a, const TokenSpan& b) {
    const std::size_t la = a.last - a.first, lb = b.last - b.first;
    if (la != lb) return la > lb;
    if (a.first != b.first) return a.first < b.first;
    return a.order < b.order;
  });

  std::vector<bool> claimed(doc.tokens.size(), false);
  for (const TokenSpan& s : ts) {
    std::size_t first = s.first, last = s.last;
    while (first <= last && claimed[first]) ++first;
    while (last > first && claimed[last]) --last;
    if (first > last || claimed[first]) {
      ++out.dropped_spans;
      continue;
    }
    out.seq.tags[first] = tagset.b_tag(s.code_idx);
    claimed[first] = true;
    for (std::size_t t = first + 1; t <= last; ++t) {
      out.seq.tags[t] = tagset.i_tag(s.code_idx);
      claimed[t] = true;
    }
  }
  return out;
}

struct BioDecodeResult {
  std::vector<RationaleSpan> spans;
  std::size_t repairs = 0;  // orphan I tags promoted to B
};

// Rebuilds character spans from a tag sequence. An I tag that does not
// continue a same-code entity opens a new one (counted as a repair).
inline BioDecodeResult decode_bio(const BioSequence& seq, const Document& doc,
                                  const BioTagset& tagset) {
  if (seq.tags.size() != doc.tokens.size())
    throw ValidationError("tag sequence length does not match document tokens");
  BioDecodeResult out;
  std::size_t open_code = 0;
  bool open = false;
  std::size_t open_first = 0, open_last = 0;

  const auto flush = [&]() {
    if (!open) return;
    RationaleSpan s;
    s.doc_id = doc.id;
    s.code = tagset.codes[open_code];
    s.start = doc.tokens[open_first].start;
    s.end = doc.tokens[open_last].end;
    s.text = doc.text.substr(s.start, s.end - s.start);
    out.spans.push_back(std::move(s));
    open = false;
  };

  for (std::size_t t = 0; t < seq.tags.size(); ++t) {
    const std::size_t tag = seq.tags[t];
    if (tag == 0) {
      flush();
      continue;
    }
    const std::size_t code = tagset.code_of(tag);
    if (tagset.is_i(tag) && open && code == open_code && open_last + 1 == t) {
      open_last = t;
      continue;
    }
    if (tagset.is_i(tag)) ++out.repairs;  // orphan I becomes a span start
    flush();
    open = true;
    open_code = code;
    open_first = open_last = t;
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Token tagger that reuses the document encoder.
// ---------------------------------------------------------------------------

struct TaggerParams {
  TrainConfig config;
  std::vector<std::string> vocab;
  BioTagset tagset;
  EncoderParams enc;
  Matrix out_w;  // n_tags x d_out
  Vec out_b;     // n_tags
  std::unordered_map<std::string, std::size_t> vocab_index;

  std::size_t token_id(const std::string& t) const {
    auto it = vocab_index.find(t);
    return it == vocab_index.end() ? 0 : it->second;
  }

  void rebuild_vocab_index() {
    vocab_index.clear();
    for (std::size_t i = 0; i < vocab.size(); ++i) vocab_index[vocab[i]] = i;
  }
};

inline std::vector<Vec*> param_arrays(TaggerParams& p) {
  std::vector<Vec*> v = param_arrays(p.enc);
  v.push_back(&p.out_w.a);
  v.push_back(&p.out_b);
  return v;
}

inline TaggerParams init_tagger(const Corpus& corpus, const std::vector<std::string>& codes,
                                const TrainConfig& cfg) {
  cfg.validate();
  if (codes.empty()) throw ValidationError("tagger needs at least one code");
  TaggerParams p;
  p.config = cfg;
  std::set<std::string> seen;
  for (const Document& d : corpus.docs)
    for (const Token& t : d.tokens) seen.insert(t.text);
  p.vocab.push_back("<unk>");
  p.vocab.insert(p.vocab.end(), seen.begin(), seen.end());
  p.rebuild_vocab_index();
  p.tagset.codes = codes;
  std::sort(p.tagset.codes.begin(), p.tagset.codes.end());
  p.tagset.codes.erase(std::unique(p.tagset.codes.begin(), p.tagset.codes.end()),
                       p.tagset.codes.end());

  Rng rng(cfg.seed);
  const auto randomize = [&](Matrix& m) {
    for (double& x : m.a) x = rng.uniform(-0.1, 0.1);
  };
  p.enc.variant = cfg.variant;
  p.enc.embedding = Matrix(p.vocab.size(), cfg.emb_dim);
  randomize(p.enc.embedding);
  if (cfg.variant == EncoderVariant::conv) {
    p.enc.conv_w.assign(cfg.conv_width, Matrix(cfg.enc_dim, cfg.emb_dim));
    for (Matrix& m : p.enc.conv_w) randomize(m);
    p.enc.conv_b.assign(cfg.enc_dim, 0.0);
  } else {
    p.enc.wx_f = Matrix(cfg.enc_dim, cfg.emb_dim);
    p.enc.wh_f = Matrix(cfg.enc_dim, cfg.enc_dim);
    p.enc.wx_b = Matrix(cfg.enc_dim, cfg.emb_dim);
    p.enc.wh_b = Matrix(cfg.enc_dim, cfg.enc_dim);
    randomize(p.enc.wx_f);
    randomize(p.enc.wh_f);
    randomize(p.enc.wx_b);
    randomize(p.enc.wh_b);
    p.enc.b_f.assign(cfg.enc_dim, 0.0);
    p.enc.b_b.assign(cfg.enc_dim, 0.0);
  }
  p.out_w = Matrix(p.tagset.size(), cfg.enc_dim);
  randomize(p.out_w);
  p.out_b.assign(p.tagset.size(), 0.0);
  return p;
}

// Mean per-token softmax cross-entropy for one document; accumulates
// gradients into g.
inline double tagger_backprop(const TaggerParams& p, const Document& doc,
                              const std::vector<std::size_t>& gold_tags, TaggerParams& g) {
  if (doc.tokens.empty()) throw EvalError("empty document: " + doc.id);
  std::vector<std::size_t> ids;
  ids.reserve(doc.tokens.size());
  for (const Token& t : doc.tokens) ids.push_back(p.token_id(t.text));
  EncoderCache cache;
  encoder_forward(p.enc, ids, cache);
  const std::size_t n = ids.size();
  const std::size_t ntags = p.tagset.size();
  const std::size_t dout = cache.t.cols;
  const double inv = 1.0 / static_cast<double>(n);

  double loss = 0.0;
  Matrix dt(n, dout);
  Vec probs(ntags);
  for (std::size_t j = 0; j < n; ++j) {
    const double* t = cache.t.row(j);
    for (std::size_t k = 0; k < ntags; ++k) probs[k] = p.out_b[k] + dot(p.out_w.row(k), t, dout);
    softmax_inplace(probs.data(), ntags);
    const std::size_t gold = gold_tags[j];
    loss -= std::log(std::max(probs[gold], 1e-300)) * inv;
    for (std::size_t k = 0; k < ntags; ++k) {
      const double dlogit = (probs[k] - (k == gold ? 1.0 : 0.0)) * inv;
      g.out_b[k] += dlogit;
      axpy(dlogit, t, g.out_w.row(k), dout);
      axpy(dlogit, p.out_w.row(k), dt.row(j), dout);
    }
  }
  encoder_backward(p.enc, cache, dt, g.enc);
  return loss;
}

// Trains a BIO tagger on distantly supervised spans. Documents without any
// span still contribute all-O supervision.
inline TrainTrace ner_train(TaggerParams& params, const Corpus& corpus,
                            const std::vector<RationaleSpan>& spans) {
  const TrainConfig& cfg = params.config;
  cfg.validate();
  if (corpus.docs.empty()) throw ValidationError("cannot train on an empty corpus");

  std::map<std::string, std::vector<RationaleSpan>> by_doc;
  for (const RationaleSpan& s : spans) by_doc[s.doc_id].push_back(s);
  std::vector<std::vector<std::size_t>> gold(corpus.docs.size());
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
    const Document& doc = corpus.docs[i];
    auto it = by_doc.find(doc.id);
    static const std::vector<RationaleSpan> kNone;
    gold[i] = encode_bio(doc, it == by_doc.end() ? kNone : it->second, params.tagset).seq.tags;
  }

  TrainTrace trace;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(corpus.docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const bool use_momentum = cfg.momentum > 0.0;
  TaggerParams velocity = use_momentum ? zeros_like(params) : TaggerParams{};

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t batch_end = std::min(order.size(), b + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(batch_end - b);
      TaggerParams grads = zeros_like(params);
      double batch_loss = 0.0;
      for (std::size_t i = b; i < batch_end; ++i)
        batch_loss += tagger_backprop(params, corpus.docs[order[i]], gold[order[i]], grads);
      if (!std::isfinite(batch_loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
      epoch_total += batch_loss;

      std::vector<Vec*> pa = param_arrays(params);
      std::vector<Vec*> ga = param_arrays(grads);
      if (use_momentum) {
        std::vector<Vec*> va = param_arrays(velocity);
        for (std::size_t k = 0; k < pa.size(); ++k) {
          for (std::size_t i = 0; i < pa[k]->size(); ++i) {
            (*va[k])[i] = cfg.momentum * (*va[k])[i] - cfg.learning_rate * inv * (*ga[k])[i];
            (*pa[k])[i] += (*va[k])[i];
          }
        }
      } else {
        for (std::size_t k = 0; k < pa.size(); ++k) {
          for (std::size_t i = 0; i < pa[k]->size(); ++i)
            (*pa[k])[i] -= cfg.learning_rate * inv * (*ga[k])[i];
        }
      }
    }
    trace.epoch_loss.push_back(epoch_total / static_cast<double>(order.size()));
  }
  return trace;
}

struct NerPrediction {
  BioSequence tags;
  std::vector<RationaleSpan> spans;
  std::set<std::string> codes;  // distinct codes among predicted spans
  std::size_t repairs = 0;
};

// Greedy per-token argmax (ties to the lower tag id), then span decoding.
inline NerPrediction ner_predict(const TaggerParams& p, const Document& doc) {
  if (doc.tokens.empty()) throw EvalError("empty document: " + doc.id);
  std::vector<std::size_t> ids;
  ids.reserve(doc.tokens.size());
  for (const Token& t : doc.tokens) ids.push_back(p.token_id(t.text));
  EncoderCache cache;
  encoder_forward(p.enc, ids, cache);
  const std::size_t ntags = p.tagset.size();
  const std::size_t dout = cache.t.cols;

  NerPrediction out;
  out.tags.tags.resize(ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const double* t = cache.t.row(j);
    std::size_t best = 0;
    double best_v = p.out_b[0] + dot(p.out_w.row(0), t, dout);
    for (std::size_t k = 1; k < ntags; ++k) {
      const double v = p.out_b[k] + dot(p.out_w.row(k), t, dout);
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    out.tags.tags[j] = best;
  }
  BioDecodeResult decoded = decode_bio(out.tags, doc, p.tagset);
  out.spans = std::move(decoded.spans);
  out.repairs = decoded.repairs;
  for (const RationaleSpan& s : out.spans) out.codes.insert(s.code);
  return out;
}

// ---------------------------------------------------------------------------
// Tagger checkpoints.
// ---------------------------------------------------------------------------

inline constexpr const char* kTaggerCheckpointFormat = "bio-tagger-v1";

inline void save_tagger(const TaggerParams& p, const std::string& path) {
  Json j;
  j["format"] = kTaggerCheckpointFormat;
  j["config"] = detail::config_to_json(p.config);
  j["vocab"] = p.vocab;
  j["codes"] = p.tagset.codes;
  j["encoder"] = detail::encoder_to_json(p.enc);
  j["out_w"] = detail::matrix_to_json(p.out_w);
  j["out_b"] = p.out_b;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

inline TaggerParams load_tagger(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError("malformed checkpoint: " + path);
  if (!j.contains("format") || j["format"] != kTaggerCheckpointFormat)
    throw ValidationError("unrecognized checkpoint format in " + path);
  TaggerParams p;
  p.config = detail::config_from_json(j.at("config"));
  p.vocab = j.at("vocab").get<std::vector<std::string>>();
  p.tagset.codes = j.at("codes").get<std::vector<std::string>>();
  p.enc = detail::encoder_from_json(j.at("encoder"));
  p.out_w = detail::matrix_from_json(j.at("out_w"));
  p.out_b = j.at("out_b").get<Vec>();
  p.rebuild_vocab_index();
  return p;
}

}  // namespace ratx
