#include "ratx/coder.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "ratx/supervise.hpp"
#include "ratx/synthetic.hpp"
#include "testutil.hpp"

using namespace ratx;
using testutil::TempDir;

namespace {

TrainConfig tiny_config(EncoderVariant variant, std::uint64_t seed = 7) {
  TrainConfig cfg;
  cfg.variant = variant;
  cfg.emb_dim = 3;
  cfg.enc_dim = 4;
  cfg.conv_width = 3;
  cfg.seed = seed;
  cfg.epochs = 5;
  cfg.batch_size = 2;
  cfg.learning_rate = 0.2;
  return cfg;
}

Corpus tiny_corpus() {
  return testutil::make_corpus(
      {testutil::make_doc("d1", "aaa bbb ccc ddd", {"X"}),
       testutil::make_doc("d2", "bbb eee fff", {"Y"}),
       testutil::make_doc("d3", "aaa ccc eee ggg hhh", {"X", "Y"})},
      {{"X", "x"}, {"Y", "y"}});
}

bool same_params(ModelParams& a, ModelParams& b) {
  std::vector<Vec*> va = param_arrays(a);
  std::vector<Vec*> vb = param_arrays(b);
  if (va.size() != vb.size()) return false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (*va[i] != *vb[i]) return false;
  }
  return true;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  cfg.validate();
  cfg.conv_width = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.tau = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.clamp_eps = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(InitParams, DeterministicAndShaped) {
  const Corpus corpus = tiny_corpus();
  const TrainConfig cfg = tiny_config(EncoderVariant::conv);
  ModelParams a = init_params(corpus, cfg);
  ModelParams b = init_params(corpus, cfg);
  EXPECT_TRUE(same_params(a, b));
  EXPECT_EQ(a.vocab.front(), "<unk>");
  // Distinct corpus tokens plus the unknown slot.
  EXPECT_EQ(a.vocab.size(), 9u);
  EXPECT_EQ(a.enc.embedding.rows, a.vocab.size());
  EXPECT_EQ(a.enc.conv_w.size(), cfg.conv_width);
  EXPECT_EQ(a.attn_u.rows, 2u);
  EXPECT_EQ(a.out_b.size(), 2u);
  // Different seed, different weights.
  ModelParams c = init_params(corpus, tiny_config(EncoderVariant::conv, 8));
  EXPECT_FALSE(same_params(a, c));
}

TEST(InitParams, EmptyLabelSpaceRejected) {
  const Corpus corpus = testutil::make_corpus({testutil::make_doc("d1", "aaa")}, {});
  EXPECT_THROW(init_params(corpus, tiny_config(EncoderVariant::conv)), ValidationError);
}

TEST(TokenIds, UnknownTokensMapToSlotZero) {
  const Corpus corpus = tiny_corpus();
  ModelParams p = init_params(corpus, tiny_config(EncoderVariant::conv));
  EXPECT_EQ(p.token_id("aaa") != 0u, true);
  EXPECT_EQ(p.token_id("never-seen"), 0u);
  const Document other = testutil::make_doc("dx", "aaa zzz");
  const std::vector<std::size_t> ids = p.token_ids(other);
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_NE(ids[0], 0u);
  EXPECT_EQ(ids[1], 0u);
}

TEST(Forward, AttentionRowsSumToOne) {
  const Corpus corpus = tiny_corpus();
  for (EncoderVariant v : {EncoderVariant::conv, EncoderVariant::recur}) {
    ModelParams p = init_params(corpus, tiny_config(v));
    const Forward f = forward(p, corpus.docs[2]);
    const Matrix& attn = f.attention.weights;
    ASSERT_EQ(attn.rows, 2u);
    ASSERT_EQ(attn.cols, corpus.docs[2].tokens.size());
    for (std::size_t l = 0; l < attn.rows; ++l) {
      double sum = 0.0;
      for (std::size_t j = 0; j < attn.cols; ++j) {
        EXPECT_GT(attn(l, j), 0.0);
        sum += attn(l, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
    for (double prob : f.prediction.probabilities) {
      EXPECT_GT(prob, 0.0);
      EXPECT_LT(prob, 1.0);
    }
  }
}

TEST(Forward, SingleTokenDocumentGetsFullAttention) {
  const Corpus corpus = tiny_corpus();
  ModelParams p = init_params(corpus, tiny_config(EncoderVariant::conv));
  const Document one = testutil::make_doc("one", "aaa");
  const Forward f = forward(p, one);
  EXPECT_DOUBLE_EQ(f.attention.weights(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(f.attention.weights(1, 0), 1.0);
}

TEST(Forward, EmptyDocumentFails) {
  const Corpus corpus = tiny_corpus();
  ModelParams p = init_params(corpus, tiny_config(EncoderVariant::conv));
  const Document empty = testutil::make_doc("empty", "");
  EXPECT_THROW(forward(p, empty), EvalError);
}

TEST(Forward, DecisionsAreStrictlyAboveTau) {
  const Corpus corpus = tiny_corpus();
  ModelParams p = init_params(corpus, tiny_config(EncoderVariant::conv));
  // Zero the output head: logits become 0, probabilities exactly 0.5.
  p.out_z.fill(0.0);
  p.out_b.assign(p.out_b.size(), 0.0);
  p.config.tau = 0.5;
  const PredictionSet pred = predict_codes(p, corpus.docs[0]);
  for (std::size_t l = 0; l < pred.probabilities.size(); ++l) {
    EXPECT_DOUBLE_EQ(pred.probabilities[l], 0.5);
    EXPECT_EQ(pred.decisions[l], 0);  // p == tau is not a positive
  }
}

TEST(CodingLoss, MatchesHandComputedBce) {
  const Vec probs = {0.9, 0.2};
  const std::vector<std::uint8_t> y = {1, 0};
  const double expected = -std::log(0.9) - std::log(0.8);
  EXPECT_NEAR(coding_loss(probs, y, 1e-7), expected, 1e-12);
  EXPECT_THROW(coding_loss(probs, {1}, 1e-7), ValidationError);
}

TEST(CodingLoss, ClampKeepsLossFinite) {
  const Vec probs = {1.0, 0.0};
  const std::vector<std::uint8_t> y = {0, 1};
  const double loss = coding_loss(probs, y, 1e-7);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, -2.0 * std::log(1e-7), 1e-6);
}

TEST(RationaleLossRows, SkipsAllZeroRowsAndChecksShape) {
  Matrix attn(2, 2);
  attn(0, 0) = 0.75;
  attn(0, 1) = 0.25;
  attn(1, 0) = 0.5;
  attn(1, 1) = 0.5;
  Matrix mask(2, 2);
  mask(0, 0) = 1.0;  // row 1 stays all-zero
  const double expected = -std::log(0.75) - std::log(0.75);
  EXPECT_NEAR(rationale_loss_rows(attn, mask, 1e-7), expected, 1e-12);

  Matrix empty;
  EXPECT_DOUBLE_EQ(rationale_loss_rows(attn, empty, 1e-7), 0.0);
  Matrix wrong(1, 2);
  EXPECT_THROW(rationale_loss_rows(attn, wrong, 1e-7), ValidationError);
}

TEST(GradientCheck, ConvVariant) {
  const Corpus corpus = tiny_corpus();
  ModelParams p = init_params(corpus, tiny_config(EncoderVariant::conv));
  const Document& doc = corpus.docs[2];
  EXPECT_LT(gradient_check(p, doc, p.gold_vector(doc)), 1e-6);
}

TEST(GradientCheck, RecurVariant) {
  const Corpus corpus = tiny_corpus();
  ModelParams p = init_params(corpus, tiny_config(EncoderVariant::recur));
  const Document& doc = corpus.docs[2];
  EXPECT_LT(gradient_check(p, doc, p.gold_vector(doc)), 1e-6);
}

TEST(GradientCheck, CombinedObjectiveWithMask) {
  const Corpus corpus = tiny_corpus();
  for (EncoderVariant v : {EncoderVariant::conv, EncoderVariant::recur}) {
    ModelParams p = init_params(corpus, tiny_config(v));
    const Document& doc = corpus.docs[2];
    Matrix mask(p.labels.size(), doc.tokens.size());
    mask(0, 1) = 1.0;
    mask(0, 3) = 1.0;  // label 1 row stays empty: no supervision there
    EXPECT_LT(gradient_check(p, doc, p.gold_vector(doc), &mask, 0.7), 1e-6);
  }
}

TEST(Training, LossDecreasesAndIsDeterministic) {
  const Corpus corpus = tiny_corpus();
  for (EncoderVariant v : {EncoderVariant::conv, EncoderVariant::recur}) {
    TrainConfig cfg = tiny_config(v);
    cfg.epochs = 15;
    ModelParams a = init_params(corpus, cfg);
    const TrainTrace trace = train(a, corpus, cfg);
    ASSERT_EQ(trace.epoch_loss.size(), cfg.epochs);
    EXPECT_LT(trace.epoch_loss.back(), trace.epoch_loss.front());

    ModelParams b = init_params(corpus, cfg);
    const TrainTrace trace_b = train(b, corpus, cfg);
    EXPECT_TRUE(same_params(a, b));
    EXPECT_EQ(trace.epoch_loss, trace_b.epoch_loss);
  }
}

TEST(Training, MomentumRunsAndStaysFinite) {
  const Corpus corpus = tiny_corpus();
  TrainConfig cfg = tiny_config(EncoderVariant::conv);
  cfg.momentum = 0.9;
  cfg.learning_rate = 0.05;
  ModelParams p = init_params(corpus, cfg);
  const TrainTrace trace = train(p, corpus, cfg);
  for (double loss : trace.epoch_loss) EXPECT_TRUE(std::isfinite(loss));
}

TEST(Training, EmptyCorpusRejected) {
  Corpus corpus = tiny_corpus();
  ModelParams p = init_params(corpus, tiny_config(EncoderVariant::conv));
  Corpus empty;
  EXPECT_THROW(train(p, empty, tiny_config(EncoderVariant::conv)), ValidationError);
}

TEST(Training, NullMaskProviderMatchesPlainTraining) {
  const Corpus corpus = tiny_corpus();
  const TrainConfig cfg = tiny_config(EncoderVariant::conv);
  ModelParams a = init_params(corpus, cfg);
  train(a, corpus, cfg);
  ModelParams b = init_params(corpus, cfg);
  const MaskProvider none = [](std::size_t) -> const Matrix* { return nullptr; };
  train_with_supervision(b, corpus, cfg, none, cfg.lambda);
  EXPECT_TRUE(same_params(a, b));
}

// ---------------------------------------------------------------------------
// Token selection.
// ---------------------------------------------------------------------------

TEST(SelectTopTokens, TopPercentCountsByCeiling) {
  const Vec row = {0.1, 0.9, 0.3, 0.2, 0.05, 0.15, 0.08, 0.06, 0.04, 0.02};
  EXPECT_EQ(select_top_tokens(row, SelectionMode::top_p_percent, 10).size(), 1u);
  EXPECT_EQ(select_top_tokens(row, SelectionMode::top_p_percent, 25).size(), 3u);
  EXPECT_EQ(select_top_tokens(row, SelectionMode::top_p_percent, 100).size(), 10u);
  EXPECT_EQ(select_top_tokens(row, SelectionMode::top_p_percent, 10),
            (std::vector<std::size_t>{1}));
  EXPECT_THROW(select_top_tokens(row, SelectionMode::top_p_percent, 0), ConfigError);
  EXPECT_THROW(select_top_tokens(row, SelectionMode::top_p_percent, 101), ConfigError);
}

TEST(SelectTopTokens, TopNCapsAtDocumentLength) {
  const Vec row = {0.5, 0.4, 0.3};
  EXPECT_EQ(select_top_tokens(row, SelectionMode::top_n, 2),
            (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(select_top_tokens(row, SelectionMode::top_n, 99).size(), 3u);
  EXPECT_THROW(select_top_tokens(row, SelectionMode::top_n, 0), ConfigError);
  EXPECT_THROW(select_top_tokens({}, SelectionMode::top_n, 1), ValidationError);
}

TEST(SelectTopTokens, TiesBreakTowardLowerIndexAndSelectionsNest) {
  const Vec row = {0.2, 0.5, 0.2, 0.5, 0.2};
  EXPECT_EQ(select_top_tokens(row, SelectionMode::top_n, 1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(select_top_tokens(row, SelectionMode::top_n, 3),
            (std::vector<std::size_t>{0, 1, 3}));
  std::vector<std::size_t> prev;
  for (double k = 1; k <= 5; ++k) {
    const std::vector<std::size_t> cur = select_top_tokens(row, SelectionMode::top_n, k);
    EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
    prev = cur;
  }
}

TEST(PooledAttentionRow, ScopesAndFallback) {
  AttentionMatrix attn;
  attn.weights = Matrix(2, 3);
  attn.weights(0, 0) = 0.6;
  attn.weights(0, 1) = 0.3;
  attn.weights(0, 2) = 0.1;
  attn.weights(1, 0) = 0.1;
  attn.weights(1, 1) = 0.2;
  attn.weights(1, 2) = 0.7;

  const Vec row0 = pooled_attention_row(attn, SelectionScope::per_label, nullptr, 0);
  EXPECT_EQ(row0, (Vec{0.6, 0.3, 0.1}));

  const std::vector<std::uint8_t> only_second = {0, 1};
  const Vec max_row = pooled_attention_row(attn, SelectionScope::pooled_max, &only_second);
  EXPECT_EQ(max_row, (Vec{0.1, 0.2, 0.7}));

  const std::vector<std::uint8_t> both = {1, 1};
  const Vec mean_row = pooled_attention_row(attn, SelectionScope::pooled_mean, &both);
  EXPECT_DOUBLE_EQ(mean_row[0], 0.35);
  EXPECT_DOUBLE_EQ(mean_row[2], 0.4);

  // No positive labels: pools over everything rather than failing.
  const std::vector<std::uint8_t> none = {0, 0};
  const Vec fallback = pooled_attention_row(attn, SelectionScope::pooled_max, &none);
  EXPECT_EQ(fallback, (Vec{0.6, 0.3, 0.7}));

  EXPECT_THROW(pooled_attention_row(attn, SelectionScope::per_label, nullptr, 5),
               ValidationError);
}

TEST(TokensToSpans, MergesAdjacentRunsWithMeanScores) {
  const Document doc = testutil::make_doc("d1", "aa bb cc dd ee");
  const Vec weights = {0.4, 0.3, 0.1, 0.15, 0.05};
  const std::vector<RationaleSpan> spans =
      tokens_to_spans(doc, {0, 1, 3}, weights, "X");
  ASSERT_EQ(spans.size(), 2u);
  EXPECT_EQ(spans[0].text, "aa bb");
  EXPECT_EQ(spans[0].start, 0u);
  EXPECT_EQ(spans[0].end, 5u);
  ASSERT_TRUE(spans[0].score.has_value());
  EXPECT_DOUBLE_EQ(*spans[0].score, 0.35);
  EXPECT_EQ(spans[1].text, "dd");
  EXPECT_DOUBLE_EQ(*spans[1].score, 0.15);
  EXPECT_EQ(spans[1].code, "X");
}

TEST(ExtractRationaleTokens, ComposesPoolingAndSelection) {
  AttentionMatrix attn;
  attn.weights = Matrix(1, 4);
  attn.weights(0, 0) = 0.1;
  attn.weights(0, 1) = 0.6;
  attn.weights(0, 2) = 0.2;
  attn.weights(0, 3) = 0.1;
  EXPECT_EQ(extract_rationale_tokens(attn, SelectionMode::top_p_percent, 50,
                                     SelectionScope::per_label, nullptr, 0),
            (std::vector<std::size_t>{1, 2}));
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

TEST(Checkpoint, RoundTripIsExactAndByteStable) {
  TempDir dir;
  const Corpus corpus = tiny_corpus();
  for (EncoderVariant v : {EncoderVariant::conv, EncoderVariant::recur}) {
    TrainConfig cfg = tiny_config(v);
    cfg.epochs = 2;
    ModelParams p = init_params(corpus, cfg);
    train(p, corpus, cfg);
    const std::string path = dir.file("model.json");
    save_checkpoint(p, path);
    ModelParams q = load_checkpoint(path);
    EXPECT_TRUE(same_params(p, q));
    EXPECT_EQ(q.vocab, p.vocab);
    ASSERT_EQ(q.labels.size(), p.labels.size());
    EXPECT_EQ(q.labels[0].code, p.labels[0].code);
    EXPECT_EQ(q.config.tau, p.config.tau);
    // Saving the loaded model reproduces the file byte for byte.
    const std::string path2 = dir.file("model2.json");
    save_checkpoint(q, path2);
    EXPECT_EQ(testutil::read_file(path), testutil::read_file(path2));
    // The reloaded model scores documents identically.
    const Vec before = predict_codes(p, corpus.docs[0]).probabilities;
    const Vec after = predict_codes(q, corpus.docs[0]).probabilities;
    EXPECT_EQ(before, after);
  }
}

TEST(Checkpoint, RejectsWrongFormatAndMissingFile) {
  TempDir dir;
  EXPECT_THROW(load_checkpoint(dir.file("missing.json")), IoError);
  const std::string path = dir.file("bad.json");
  testutil::write_file(path, "{\"format\": \"something-else\"}\n");
  EXPECT_THROW(load_checkpoint(path), ValidationError);
  testutil::write_file(path, "not json");
  EXPECT_THROW(load_checkpoint(path), ValidationError);
}
