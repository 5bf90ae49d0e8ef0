#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ratx/corpus.hpp"

namespace ratx {

enum class EncoderVariant { conv, recur };

inline std::string to_string(EncoderVariant v) {
  return v == EncoderVariant::conv ? "conv" : "recur";
}

inline EncoderVariant encoder_variant_from(const std::string& s) {
  if (s == "conv") return EncoderVariant::conv;
  if (s == "recur") return EncoderVariant::recur;
  throw ConfigError("unknown encoder variant: " + s);
}

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  std::uint64_t seed = 1337;
  EncoderVariant variant = EncoderVariant::conv;
  std::size_t emb_dim = 32;
  std::size_t enc_dim = 32;
  std::size_t conv_width = 5;  // odd; centered window
  double tau = 0.5;            // decision threshold, strict >
  double clamp_eps = 1e-7;     // probability clamp inside BCE terms
  double momentum = 0.0;
  double lambda = 1.0;  // weight of the rationale objective when masks exist

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate must be finite and >= 0");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (emb_dim == 0 || enc_dim == 0) throw ConfigError("dimensions must be >= 1");
    if (conv_width == 0 || conv_width % 2 == 0)
      throw ConfigError("conv_width must be odd and >= 1");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
    if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw ConfigError("clamp_eps must be in (0, 0.5)");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Encoder: token embeddings plus either a centered tanh convolution or a pair
// of forward/backward recurrences summed per position.
// ---------------------------------------------------------------------------

struct EncoderParams {
  EncoderVariant variant = EncoderVariant::conv;
  Matrix embedding;  // vocab x d
  // conv
  std::vector<Matrix> conv_w;  // width matrices, each d_out x d
  Vec conv_b;                  // d_out
  // recur
  Matrix wx_f, wh_f;  // d_out x d, d_out x d_out
  Matrix wx_b, wh_b;
  Vec b_f, b_b;
};

struct EncoderCache {
  std::vector<std::size_t> ids;
  Matrix emb;     // N x d
  Matrix hf, hb;  // recur hidden states, N x d_out
  Matrix t;       // N x d_out, final token states
};

inline void encoder_forward(const EncoderParams& p, const std::vector<std::size_t>& ids,
                            EncoderCache& c) {
  const std::size_t n = ids.size();
  const std::size_t d = p.embedding.cols;
  const std::size_t dout = p.variant == EncoderVariant::conv ? p.conv_w.front().rows
                                                             : p.wx_f.rows;
  c.ids = ids;
  c.emb = Matrix(n, d);
  for (std::size_t j = 0; j < n; ++j) {
    const double* e = p.embedding.row(ids[j]);
    std::copy(e, e + d, c.emb.row(j));
  }
  c.t = Matrix(n, dout);
  if (p.variant == EncoderVariant::conv) {
    const std::size_t w = p.conv_w.size();
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(w / 2);
    Vec pre(dout);
    for (std::size_t j = 0; j < n; ++j) {
      std::copy(p.conv_b.begin(), p.conv_b.end(), pre.begin());
      for (std::size_t o = 0; o < w; ++o) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(o) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;  // zero padding
        const double* e = c.emb.row(static_cast<std::size_t>(src));
        const Matrix& wm = p.conv_w[o];
        for (std::size_t r = 0; r < dout; ++r) pre[r] += dot(wm.row(r), e, d);
      }
      double* t = c.t.row(j);
      for (std::size_t r = 0; r < dout; ++r) t[r] = std::tanh(pre[r]);
    }
  } else {
    c.hf = Matrix(n, dout);
    c.hb = Matrix(n, dout);
    for (std::size_t j = 0; j < n; ++j) {
      const double* e = c.emb.row(j);
      const double* prev = j > 0 ? c.hf.row(j - 1) : nullptr;
      double* h = c.hf.row(j);
      for (std::size_t r = 0; r < dout; ++r) {
        double v = p.b_f[r] + dot(p.wx_f.row(r), e, p.wx_f.cols);
        if (prev) v += dot(p.wh_f.row(r), prev, dout);
        h[r] = std::tanh(v);
      }
    }
    for (std::size_t jj = n; jj-- > 0;) {
      const double* e = c.emb.row(jj);
      const double* next = jj + 1 < n ? c.hb.row(jj + 1) : nullptr;
      double* h = c.hb.row(jj);
      for (std::size_t r = 0; r < dout; ++r) {
        double v = p.b_b[r] + dot(p.wx_b.row(r), e, p.wx_b.cols);
        if (next) v += dot(p.wh_b.row(r), next, dout);
        h[r] = std::tanh(v);
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      double* t = c.t.row(j);
      for (std::size_t r = 0; r < dout; ++r) t[r] = c.hf(j, r) + c.hb(j, r);
    }
  }
}

// Accumulates encoder gradients given dL/dt. `g` must be shaped like `p`.
inline void encoder_backward(const EncoderParams& p, const EncoderCache& c, const Matrix& dt,
                             EncoderParams& g) {
  const std::size_t n = c.ids.size();
  const std::size_t d = p.embedding.cols;
  const std::size_t dout = dt.cols;
  Matrix demb(n, d);
  if (p.variant == EncoderVariant::conv) {
    const std::size_t w = p.conv_w.size();
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(w / 2);
    for (std::size_t j = 0; j < n; ++j) {
      Vec dpre(dout);
      for (std::size_t r = 0; r < dout; ++r) {
        const double t = c.t(j, r);
        dpre[r] = dt(j, r) * (1.0 - t * t);
        g.conv_b[r] += dpre[r];
      }
      for (std::size_t o = 0; o < w; ++o) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(o) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        const double* e = c.emb.row(static_cast<std::size_t>(src));
        Matrix& gw = g.conv_w[o];
        const Matrix& wm = p.conv_w[o];
        double* de = demb.row(static_cast<std::size_t>(src));
        for (std::size_t r = 0; r < dout; ++r) {
          axpy(dpre[r], e, gw.row(r), d);
          axpy(dpre[r], wm.row(r), de, d);
        }
      }
    }
  } else {
    Matrix dhf(n, dout), dhb(n, dout);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t r = 0; r < dout; ++r) {
        dhf(j, r) = dt(j, r);
        dhb(j, r) = dt(j, r);
      }
    }
    for (std::size_t jj = n; jj-- > 0;) {  // forward chain, reverse order
      const double* e = c.emb.row(jj);
      double* de = demb.row(jj);
      for (std::size_t r = 0; r < dout; ++r) {
        const double h = c.hf(jj, r);
        const double gr = dhf(jj, r) * (1.0 - h * h);
        g.b_f[r] += gr;
        axpy(gr, e, g.wx_f.row(r), d);
        axpy(gr, p.wx_f.row(r), de, d);
        if (jj > 0) {
          axpy(gr, c.hf.row(jj - 1), g.wh_f.row(r), dout);
          axpy(gr, p.wh_f.row(r), dhf.row(jj - 1), dout);
        }
      }
    }
    for (std::size_t j = 0; j < n; ++j) {  // backward chain, reverse order
      const double* e = c.emb.row(j);
      double* de = demb.row(j);
      for (std::size_t r = 0; r < dout; ++r) {
        const double h = c.hb(j, r);
        const double gr = dhb(j, r) * (1.0 - h * h);
        g.b_b[r] += gr;
        axpy(gr, e, g.wx_b.row(r), d);
        axpy(gr, p.wx_b.row(r), de, d);
        if (j + 1 < n) {
          axpy(gr, c.hb.row(j + 1), g.wh_b.row(r), dout);
          axpy(gr, p.wh_b.row(r), dhb.row(j + 1), dout);
        }
      }
    }
  }
  for (std::size_t j = 0; j < n; ++j)
    axpy(1.0, demb.row(j), g.embedding.row(c.ids[j]), d);
}

// ---------------------------------------------------------------------------
// Label-wise attention classifier.
// ---------------------------------------------------------------------------

struct ModelParams {
  TrainConfig config;
  std::vector<std::string> vocab;  // [0] is the unknown token
  std::vector<CodeLabel> labels;
  EncoderParams enc;
  Matrix attn_u;  // n_labels x d_out
  Matrix attn_w;  // d_out x d_out, recur variant only
  Matrix out_z;   // n_labels x d_out
  Vec out_b;      // n_labels
  std::unordered_map<std::string, std::size_t> vocab_index;

  std::size_t token_id(const std::string& t) const {
    auto it = vocab_index.find(t);
    return it == vocab_index.end() ? 0 : it->second;
  }

  void rebuild_vocab_index() {
    vocab_index.clear();
    for (std::size_t i = 0; i < vocab.size(); ++i) vocab_index[vocab[i]] = i;
  }

  std::vector<std::size_t> token_ids(const Document& doc) const {
    std::vector<std::size_t> ids;
    ids.reserve(doc.tokens.size());
    for (const Token& t : doc.tokens) ids.push_back(token_id(t.text));
    return ids;
  }

  std::vector<std::uint8_t> gold_vector(const Document& doc) const {
    std::vector<std::uint8_t> y(labels.size(), 0);
    for (std::size_t l = 0; l < labels.size(); ++l)
      y[l] = doc.gold_codes.count(labels[l].code) ? 1 : 0;
    return y;
  }
};

struct AttentionMatrix {
  Matrix weights;  // n_labels x n_tokens; each row sums to 1
};

struct PredictionSet {
  Vec probabilities;
  std::vector<std::uint8_t> decisions;  // p > tau, strict
  double tau = 0.5;
};

struct ForwardCache {
  EncoderCache enc;
  Matrix q;       // recur attention: tanh(W t), N x d_out
  Matrix scores;  // n_labels x N, pre-softmax
  Matrix attn;    // n_labels x N
  Matrix pooled;  // n_labels x d_out
  Vec logits;
  Vec probs;
};

inline std::vector<Vec*> param_arrays(EncoderParams& e) {
  std::vector<Vec*> v;
  v.push_back(&e.embedding.a);
  for (Matrix& m : e.conv_w) v.push_back(&m.a);
  v.push_back(&e.conv_b);
  v.push_back(&e.wx_f.a);
  v.push_back(&e.wh_f.a);
  v.push_back(&e.wx_b.a);
  v.push_back(&e.wh_b.a);
  v.push_back(&e.b_f);
  v.push_back(&e.b_b);
  return v;
}

inline std::vector<Vec*> param_arrays(ModelParams& p) {
  std::vector<Vec*> v = param_arrays(p.enc);
  v.push_back(&p.attn_u.a);
  v.push_back(&p.attn_w.a);
  v.push_back(&p.out_z.a);
  v.push_back(&p.out_b);
  return v;
}

template <class P>
P zeros_like(const P& params) {
  P z = params;
  for (Vec* v : param_arrays(z)) v->assign(v->size(), 0.0);
  return z;
}

// Fresh parameters for a corpus: vocabulary is the unknown token plus the
// sorted distinct corpus tokens, labels are the corpus label union. Weights
// draw uniformly from [-0.1, 0.1] in a fixed order; biases start at zero.
inline ModelParams init_params(const Corpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  std::set<std::string> seen;
  for (const Document& d : corpus.docs)
    for (const Token& t : d.tokens) seen.insert(t.text);
  p.vocab.push_back("<unk>");
  p.vocab.insert(p.vocab.end(), seen.begin(), seen.end());
  p.rebuild_vocab_index();
  p.labels = corpus.labels;
  if (p.labels.empty()) throw ValidationError("corpus has no labels");

  const std::size_t nl = p.labels.size();
  const std::size_t d = cfg.emb_dim, dout = cfg.enc_dim;
  Rng rng(cfg.seed);
  const auto randomize = [&](Matrix& m) {
    for (double& x : m.a) x = rng.uniform(-0.1, 0.1);
  };

  p.enc.variant = cfg.variant;
  p.enc.embedding = Matrix(p.vocab.size(), d);
  randomize(p.enc.embedding);
  if (cfg.variant == EncoderVariant::conv) {
    p.enc.conv_w.assign(cfg.conv_width, Matrix(dout, d));
    for (Matrix& m : p.enc.conv_w) randomize(m);
    p.enc.conv_b.assign(dout, 0.0);
  } else {
    p.enc.wx_f = Matrix(dout, d);
    p.enc.wh_f = Matrix(dout, dout);
    p.enc.wx_b = Matrix(dout, d);
    p.enc.wh_b = Matrix(dout, dout);
    randomize(p.enc.wx_f);
    randomize(p.enc.wh_f);
    randomize(p.enc.wx_b);
    randomize(p.enc.wh_b);
    p.enc.b_f.assign(dout, 0.0);
    p.enc.b_b.assign(dout, 0.0);
    p.attn_w = Matrix(dout, dout);
    randomize(p.attn_w);
  }
  p.attn_u = Matrix(nl, dout);
  randomize(p.attn_u);
  p.out_z = Matrix(nl, dout);
  randomize(p.out_z);
  p.out_b.assign(nl, 0.0);
  return p;
}

struct Forward {
  AttentionMatrix attention;
  PredictionSet prediction;
  ForwardCache cache;
};

inline Forward forward(const ModelParams& p, const Document& doc) {
  if (doc.tokens.empty()) throw EvalError("empty document: " + doc.id);
  Forward f;
  ForwardCache& c = f.cache;
  encoder_forward(p.enc, p.token_ids(doc), c.enc);
  const std::size_t n = doc.tokens.size();
  const std::size_t nl = p.labels.size();
  const std::size_t dout = c.enc.t.cols;

  const Matrix* keys = &c.enc.t;
  if (p.enc.variant == EncoderVariant::recur) {
    c.q = Matrix(n, dout);
    for (std::size_t j = 0; j < n; ++j) {
      const double* t = c.enc.t.row(j);
      double* q = c.q.row(j);
      for (std::size_t r = 0; r < dout; ++r) q[r] = std::tanh(dot(p.attn_w.row(r), t, dout));
    }
    keys = &c.q;
  }

  c.scores = Matrix(nl, n);
  c.attn = Matrix(nl, n);
  c.pooled = Matrix(nl, dout);
  c.logits.assign(nl, 0.0);
  c.probs.assign(nl, 0.0);
  for (std::size_t l = 0; l < nl; ++l) {
    for (std::size_t j = 0; j < n; ++j) c.scores(l, j) = dot(p.attn_u.row(l), keys->row(j), dout);
    std::copy(c.scores.row(l), c.scores.row(l) + n, c.attn.row(l));
    softmax_inplace(c.attn.row(l), n);
    double* pooled = c.pooled.row(l);
    for (std::size_t j = 0; j < n; ++j) axpy(c.attn(l, j), c.enc.t.row(j), pooled, dout);
    c.logits[l] = p.out_b[l] + dot(p.out_z.row(l), pooled, dout);
    c.probs[l] = sigmoid(c.logits[l]);
  }

  f.attention.weights = c.attn;
  f.prediction.probabilities = c.probs;
  f.prediction.tau = p.config.tau;
  f.prediction.decisions.assign(nl, 0);
  for (std::size_t l = 0; l < nl; ++l)
    f.prediction.decisions[l] = c.probs[l] > p.config.tau ? 1 : 0;
  return f;
}

inline PredictionSet predict_codes(const ModelParams& p, const Document& doc) {
  return forward(p, doc).prediction;
}

// Summed binary cross-entropy over labels with probabilities clamped to
// [eps, 1-eps] before the logs.
inline double coding_loss(const Vec& probs, const std::vector<std::uint8_t>& y, double eps) {
  if (probs.size() != y.size()) throw ValidationError("probability/gold size mismatch");
  double loss = 0.0;
  for (std::size_t l = 0; l < probs.size(); ++l) {
    const double p = clamp_prob(probs[l], eps);
    loss -= y[l] ? std::log(p) : std::log(1.0 - p);
  }
  return loss;
}

// Binary cross-entropy between attention rows and a 0/1 mask, restricted to
// labels whose mask row is non-empty. Rows without any marked token
// contribute nothing, so unannotated labels do not push attention to zero.
inline double rationale_loss_rows(const Matrix& attn, const Matrix& mask, double eps) {
  if (mask.empty()) return 0.0;
  if (mask.rows != attn.rows || mask.cols != attn.cols)
    throw ValidationError("mask shape does not match attention");
  double loss = 0.0;
  for (std::size_t l = 0; l < mask.rows; ++l) {
    bool any = false;
    for (std::size_t j = 0; j < mask.cols; ++j) any = any || mask(l, j) != 0.0;
    if (!any) continue;
    for (std::size_t j = 0; j < mask.cols; ++j) {
      const double a = clamp_prob(attn(l, j), eps);
      loss -= mask(l, j) != 0.0 ? std::log(a) : std::log(1.0 - a);
    }
  }
  return loss;
}

struct DocLoss {
  double coding = 0.0;
  double rationale = 0.0;
  double total(double lambda) const { return coding + lambda * rationale; }
};

// Forward + backward for one document, accumulating parameter gradients.
// `mask` may be null or empty; `lambda` scales the rationale term. Gradients
// match the clamped losses exactly: contributions vanish where the clamp is
// active, so finite differences agree to rounding error.
inline DocLoss backprop_document(const ModelParams& p, const Document& doc,
                                 const std::vector<std::uint8_t>& y, const Matrix* mask,
                                 double lambda, ModelParams& g) {
  const double eps = p.config.clamp_eps;
  Forward f = forward(p, doc);
  const ForwardCache& c = f.cache;
  const std::size_t n = doc.tokens.size();
  const std::size_t nl = p.labels.size();
  const std::size_t dout = c.enc.t.cols;

  DocLoss loss;
  loss.coding = coding_loss(c.probs, y, eps);
  const bool with_mask = mask && !mask->empty() && lambda != 0.0;
  if (mask && !mask->empty()) loss.rationale = rationale_loss_rows(c.attn, *mask, eps);

  Matrix dattn(nl, n);
  Matrix dt(n, dout);
  const Matrix* keys = p.enc.variant == EncoderVariant::recur ? &c.q : &c.enc.t;
  Matrix dkeys(n, dout);

  for (std::size_t l = 0; l < nl; ++l) {
    // output head
    const double prob = c.probs[l];
    double dlogit = 0.0;
    if (prob > eps && prob < 1.0 - eps) {
      const double target = y[l] ? 1.0 : 0.0;
      dlogit = prob - target;  // d(BCE)/dlogit through the sigmoid
    }
    const double* pooled = c.pooled.row(l);
    const double* z = p.out_z.row(l);
    g.out_b[l] += dlogit;
    axpy(dlogit, pooled, g.out_z.row(l), dout);
    // pooled[l] = sum_j attn[l][j] t[j]
    for (std::size_t j = 0; j < n; ++j) {
      dattn(l, j) = dlogit * dot(z, c.enc.t.row(j), dout);
      axpy(dlogit * c.attn(l, j), z, dt.row(j), dout);
    }
    if (with_mask) {
      bool any = false;
      for (std::size_t j = 0; j < n; ++j) any = any || (*mask)(l, j) != 0.0;
      if (any) {
        for (std::size_t j = 0; j < n; ++j) {
          const double a = c.attn(l, j);
          if (a <= eps || a >= 1.0 - eps) continue;  // clamp region, flat loss
          const double m = (*mask)(l, j);
          dattn(l, j) += lambda * ((1.0 - m) / (1.0 - a) - m / a);
        }
      }
    }
    // softmax rows
    double inner = 0.0;
    for (std::size_t j = 0; j < n; ++j) inner += dattn(l, j) * c.attn(l, j);
    for (std::size_t j = 0; j < n; ++j) {
      const double ds = c.attn(l, j) * (dattn(l, j) - inner);
      axpy(ds, keys->row(j), g.attn_u.row(l), dout);
      axpy(ds, p.attn_u.row(l), dkeys.row(j), dout);
    }
  }

  if (p.enc.variant == EncoderVariant::recur) {
    // keys were q[j] = tanh(W t[j])
    for (std::size_t j = 0; j < n; ++j) {
      const double* t = c.enc.t.row(j);
      for (std::size_t r = 0; r < dout; ++r) {
        const double q = c.q(j, r);
        const double dq = dkeys(j, r) * (1.0 - q * q);
        axpy(dq, t, g.attn_w.row(r), dout);
        axpy(dq, p.attn_w.row(r), dt.row(j), dout);
      }
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) axpy(1.0, dkeys.row(j), dt.row(j), dout);
  }

  encoder_backward(p.enc, c.enc, dt, g.enc);
  return loss;
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TrainTrace {
  std::vector<double> epoch_loss;  // mean per-document total loss
};

// Per-document rationale masks (n_labels x n_tokens), or null when a document
// carries no supervision.
using MaskProvider = std::function<const Matrix*(std::size_t doc_index)>;

// Mini-batch gradient descent over the corpus. Document order reshuffles per
// epoch from the config seed; two runs with identical inputs produce
// bit-identical parameters. With lambda == 0 or no masks this is plain
// classification training.
inline TrainTrace train_with_supervision(ModelParams& params, const Corpus& corpus,
                                         const TrainConfig& cfg, const MaskProvider& masks,
                                         double lambda) {
  cfg.validate();
  if (corpus.docs.empty()) throw ValidationError("cannot train on an empty corpus");
  TrainTrace trace;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(corpus.docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const bool use_momentum = cfg.momentum > 0.0;
  ModelParams velocity = use_momentum ? zeros_like(params) : ModelParams{};

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t batch_end = std::min(order.size(), b + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(batch_end - b);
      ModelParams grads = zeros_like(params);
      double batch_loss = 0.0;
      for (std::size_t i = b; i < batch_end; ++i) {
        const Document& doc = corpus.docs[order[i]];
        const Matrix* mask = masks ? masks(order[i]) : nullptr;
        const DocLoss loss =
            backprop_document(params, doc, params.gold_vector(doc), mask, lambda, grads);
        batch_loss += loss.total(lambda);
      }
      if (!std::isfinite(batch_loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
      epoch_total += batch_loss;

      std::vector<Vec*> pa = param_arrays(params);
      std::vector<Vec*> ga = param_arrays(grads);
      if (use_momentum) {
        std::vector<Vec*> va = param_arrays(velocity);
        for (std::size_t k = 0; k < pa.size(); ++k) {
          Vec& pv = *pa[k];
          Vec& gv = *ga[k];
          Vec& vv = *va[k];
          for (std::size_t i = 0; i < pv.size(); ++i) {
            vv[i] = cfg.momentum * vv[i] - cfg.learning_rate * inv * gv[i];
            pv[i] += vv[i];
          }
        }
      } else {
        for (std::size_t k = 0; k < pa.size(); ++k) {
          Vec& pv = *pa[k];
          Vec& gv = *ga[k];
          for (std::size_t i = 0; i < pv.size(); ++i)
            pv[i] -= cfg.learning_rate * inv * gv[i];
        }
      }
    }
    trace.epoch_loss.push_back(epoch_total / static_cast<double>(order.size()));
  }
  return trace;
}

inline TrainTrace train(ModelParams& params, const Corpus& corpus, const TrainConfig& cfg) {
  return train_with_supervision(params, corpus, cfg, nullptr, 0.0);
}

// ---------------------------------------------------------------------------
// Rationale extraction from attention.
// ---------------------------------------------------------------------------

enum class SelectionMode { top_p_percent, top_n };
enum class SelectionScope { per_label, pooled_max, pooled_mean };

inline SelectionMode selection_mode_from(const std::string& s) {
  if (s == "top_p") return SelectionMode::top_p_percent;
  if (s == "top_n") return SelectionMode::top_n;
  throw ConfigError("unknown selection mode: " + s);
}

inline SelectionScope selection_scope_from(const std::string& s) {
  if (s == "per_label") return SelectionScope::per_label;
  if (s == "pooled_max") return SelectionScope::pooled_max;
  if (s == "pooled_mean") return SelectionScope::pooled_mean;
  throw ConfigError("unknown selection scope: " + s);
}

// The per-token ranking weights used for extraction. per_label reads one
// attention row; pooled scopes aggregate (max or mean) over the labels
// flagged in `positive`, falling back to all labels when none is flagged.
inline Vec pooled_attention_row(const AttentionMatrix& attention, SelectionScope scope,
                                const std::vector<std::uint8_t>* positive = nullptr,
                                std::size_t label_index = 0) {
  const Matrix& w = attention.weights;
  if (w.rows == 0 || w.cols == 0) throw ValidationError("empty attention matrix");
  const std::size_t n = w.cols;
  Vec row(n, 0.0);
  if (scope == SelectionScope::per_label) {
    if (label_index >= w.rows) throw ValidationError("label index out of range");
    std::copy(w.row(label_index), w.row(label_index) + n, row.begin());
    return row;
  }
  std::vector<std::size_t> pool;
  if (positive) {
    for (std::size_t l = 0; l < w.rows; ++l)
      if (l < positive->size() && (*positive)[l]) pool.push_back(l);
  }
  if (pool.empty()) {
    pool.resize(w.rows);
    for (std::size_t l = 0; l < w.rows; ++l) pool[l] = l;
  }
  if (scope == SelectionScope::pooled_max) {
    for (std::size_t j = 0; j < n; ++j) {
      double m = w(pool[0], j);
      for (std::size_t l : pool) m = std::max(m, w(l, j));
      row[j] = m;
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t l : pool) s += w(l, j);
      row[j] = s / static_cast<double>(pool.size());
    }
  }
  return row;
}

// Indices of the `count` best-weighted tokens. top_p keeps ceil(N * k / 100)
// for k in (0, 100]; top_n keeps min(k, N). Ties break toward the lower
// index, which makes selections nest as k grows. Returned ascending.
inline std::vector<std::size_t> select_top_tokens(const Vec& row, SelectionMode mode, double k) {
  const std::size_t n = row.size();
  if (n == 0) throw ValidationError("cannot select from an empty document");
  std::size_t count = 0;
  if (mode == SelectionMode::top_p_percent) {
    if (!(k > 0.0 && k <= 100.0)) throw ConfigError("top_p needs k in (0, 100]");
    count = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * k / 100.0));
  } else {
    if (!(k >= 1.0)) throw ConfigError("top_n needs k >= 1");
    count = std::min(n, static_cast<std::size_t>(k));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t j = 0; j < n; ++j) order[j] = j;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  std::vector<std::size_t> selected(order.begin(), order.begin() + count);
  std::sort(selected.begin(), selected.end());
  return selected;
}

inline std::vector<std::size_t> extract_rationale_tokens(
    const AttentionMatrix& attention, SelectionMode mode, double k, SelectionScope scope,
    const std::vector<std::uint8_t>* positive = nullptr, std::size_t label_index = 0) {
  return select_top_tokens(pooled_attention_row(attention, scope, positive, label_index), mode,
                           k);
}

// Merges selected token indices into contiguous character spans of the
// document, one RationaleSpan per run of adjacent tokens. The span score is
// the mean ranking weight of its tokens.
inline std::vector<RationaleSpan> tokens_to_spans(const Document& doc,
                                                  const std::vector<std::size_t>& selected,
                                                  const Vec& weights, const std::string& code) {
  std::vector<RationaleSpan> spans;
  std::size_t i = 0;
  while (i < selected.size()) {
    std::size_t j = i;
    while (j + 1 < selected.size() && selected[j + 1] == selected[j] + 1) ++j;
    RationaleSpan s;
    s.doc_id = doc.id;
    s.code = code;
    s.start = doc.tokens[selected[i]].start;
    s.end = doc.tokens[selected[j]].end;
    s.text = doc.text.substr(s.start, s.end - s.start);
    double sum = 0.0;
    for (std::size_t k = i; k <= j; ++k) sum += weights[selected[k]];
    s.score = sum / static_cast<double>(j - i + 1);
    spans.push_back(std::move(s));
    i = j + 1;
  }
  return spans;
}

// ---------------------------------------------------------------------------
// Gradient checking.
// ---------------------------------------------------------------------------

// Central finite differences against the analytic gradient of the combined
// loss on one document. Returns the worst relative error
// |ga - gf| / max(1, |ga|, |gf|). Meant for small models.
inline double gradient_check(ModelParams params, const Document& doc,
                             const std::vector<std::uint8_t>& y, const Matrix* mask = nullptr,
                             double lambda = 0.0, double h = 1e-5) {
  const double eps = params.config.clamp_eps;
  ModelParams analytic = zeros_like(params);
  backprop_document(params, doc, y, mask, lambda, analytic);

  const auto loss_at = [&]() {
    Forward f = forward(params, doc);
    double loss = coding_loss(f.cache.probs, y, eps);
    if (mask && !mask->empty())
      loss += lambda * rationale_loss_rows(f.cache.attn, *mask, eps);
    return loss;
  };

  double worst = 0.0;
  std::vector<Vec*> pa = param_arrays(params);
  std::vector<Vec*> ga = param_arrays(analytic);
  for (std::size_t k = 0; k < pa.size(); ++k) {
    Vec& pv = *pa[k];
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double orig = pv[i];
      pv[i] = orig + h;
      const double up = loss_at();
      pv[i] = orig - h;
      const double down = loss_at();
      pv[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double an = (*ga[k])[i];
      const double err = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON with full-precision doubles, byte-stable across runs.
// ---------------------------------------------------------------------------

namespace detail {

inline Json matrix_to_json(const Matrix& m) {
  return Json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.a}};
}

inline Matrix matrix_from_json(const Json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  m.a = j.at("data").get<Vec>();
  if (m.a.size() != m.rows * m.cols) throw ValidationError("checkpoint matrix shape mismatch");
  return m;
}

inline Json config_to_json(const TrainConfig& c) {
  return Json{{"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"variant", to_string(c.variant)},
              {"emb_dim", c.emb_dim},
              {"enc_dim", c.enc_dim},
              {"conv_width", c.conv_width},
              {"tau", c.tau},
              {"clamp_eps", c.clamp_eps},
              {"momentum", c.momentum},
              {"lambda", c.lambda}};
}

inline TrainConfig config_from_json(const Json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.variant = encoder_variant_from(j.at("variant").get<std::string>());
  c.emb_dim = j.at("emb_dim").get<std::size_t>();
  c.enc_dim = j.at("enc_dim").get<std::size_t>();
  c.conv_width = j.at("conv_width").get<std::size_t>();
  c.tau = j.at("tau").get<double>();
  c.clamp_eps = j.at("clamp_eps").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.lambda = j.at("lambda").get<double>();
  return c;
}

inline Json encoder_to_json(const EncoderParams& e) {
  Json j;
  j["variant"] = to_string(e.variant);
  j["embedding"] = matrix_to_json(e.embedding);
  if (e.variant == EncoderVariant::conv) {
    j["conv_w"] = Json::array();
    for (const Matrix& m : e.conv_w) j["conv_w"].push_back(matrix_to_json(m));
    j["conv_b"] = e.conv_b;
  } else {
    j["wx_f"] = matrix_to_json(e.wx_f);
    j["wh_f"] = matrix_to_json(e.wh_f);
    j["wx_b"] = matrix_to_json(e.wx_b);
    j["wh_b"] = matrix_to_json(e.wh_b);
    j["b_f"] = e.b_f;
    j["b_b"] = e.b_b;
  }
  return j;
}

inline EncoderParams encoder_from_json(const Json& j) {
  EncoderParams e;
  e.variant = encoder_variant_from(j.at("variant").get<std::string>());
  e.embedding = matrix_from_json(j.at("embedding"));
  if (e.variant == EncoderVariant::conv) {
    for (const Json& m : j.at("conv_w")) e.conv_w.push_back(matrix_from_json(m));
    e.conv_b = j.at("conv_b").get<Vec>();
  } else {
    e.wx_f = matrix_from_json(j.at("wx_f"));
    e.wh_f = matrix_from_json(j.at("wh_f"));
    e.wx_b = matrix_from_json(j.at("wx_b"));
    e.wh_b = matrix_from_json(j.at("wh_b"));
    e.b_f = j.at("b_f").get<Vec>();
    e.b_b = j.at("b_b").get<Vec>();
  }
  return e;
}

}  // namespace detail

inline constexpr const char* kCoderCheckpointFormat = "attention-coder-v1";

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  Json j;
  j["format"] = kCoderCheckpointFormat;
  j["config"] = detail::config_to_json(p.config);
  j["vocab"] = p.vocab;
  j["labels"] = Json::array();
  for (const CodeLabel& l : p.labels)
    j["labels"].push_back({{"code", l.code}, {"description", l.description}});
  j["encoder"] = detail::encoder_to_json(p.enc);
  j["attn_u"] = detail::matrix_to_json(p.attn_u);
  if (p.enc.variant == EncoderVariant::recur) j["attn_w"] = detail::matrix_to_json(p.attn_w);
  j["out_z"] = detail::matrix_to_json(p.out_z);
  j["out_b"] = p.out_b;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError("malformed checkpoint: " + path);
  if (!j.contains("format") || j["format"] != kCoderCheckpointFormat)
    throw ValidationError("unrecognized checkpoint format in " + path);
  ModelParams p;
  p.config = detail::config_from_json(j.at("config"));
  p.vocab = j.at("vocab").get<std::vector<std::string>>();
  for (const Json& l : j.at("labels"))
    p.labels.push_back({l.at("code").get<std::string>(), l.at("description").get<std::string>()});
  p.enc = detail::encoder_from_json(j.at("encoder"));
  p.attn_u = detail::matrix_from_json(j.at("attn_u"));
  if (p.enc.variant == EncoderVariant::recur)
    p.attn_w = detail::matrix_from_json(j.at("attn_w"));
  p.out_z = detail::matrix_from_json(j.at("out_z"));
  p.out_b = j.at("out_b").get<Vec>();
  p.rebuild_vocab_index();
  return p;
}

}  // namespace ratx
