#include "ratx/faithfulness.hpp"

#include <gtest/gtest.h>

#include "ratx/report.hpp"
#include "ratx/synthetic.hpp"
#include "testutil.hpp"

using namespace ratx;

namespace {

ModelParams small_trained_model(SyntheticCorpus& synth) {
  synth = make_synthetic_corpus({20, 2, 8, 12, 0.5, 13});
  TrainConfig cfg;
  cfg.variant = EncoderVariant::conv;
  cfg.emb_dim = 6;
  cfg.enc_dim = 6;
  cfg.conv_width = 3;
  cfg.epochs = 8;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.4;
  cfg.seed = 2;
  ModelParams model = init_params(synth.corpus, cfg);
  train(model, synth.corpus, cfg);
  return model;
}

}  // namespace

TEST(PerturbModeNames, RoundTrip) {
  EXPECT_EQ(to_string(PerturbMode::retain), "sufficiency");
  EXPECT_EQ(to_string(PerturbMode::remove), "comprehensiveness");
  EXPECT_EQ(perturb_mode_from("retain"), PerturbMode::retain);
  EXPECT_EQ(perturb_mode_from("sufficiency"), PerturbMode::retain);
  EXPECT_EQ(perturb_mode_from("remove"), PerturbMode::remove);
  EXPECT_EQ(perturb_mode_from("comprehensiveness"), PerturbMode::remove);
  EXPECT_THROW(perturb_mode_from("bogus"), ConfigError);
}

TEST(PerturbDocument, RetainKeepsSelectedTokensInOrder) {
  const Document doc = testutil::make_doc("d1", "aa bb cc dd", {"X"});
  const PerturbedDocument p = perturb_document(doc, {3, 1}, PerturbMode::retain);
  EXPECT_EQ(p.base_id, "d1");
  EXPECT_EQ(p.mode, PerturbMode::retain);
  EXPECT_EQ(p.kept, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(p.doc.text, "bb dd");
  EXPECT_EQ(p.doc.id, "d1");
  EXPECT_EQ(p.doc.gold_codes, (std::set<std::string>{"X"}));
  ASSERT_EQ(p.doc.tokens.size(), 2u);
  EXPECT_EQ(p.doc.tokens[1].text, "dd");
}

TEST(PerturbDocument, RemoveKeepsTheComplement) {
  const Document doc = testutil::make_doc("d1", "aa bb cc dd");
  const PerturbedDocument p = perturb_document(doc, {1, 3}, PerturbMode::remove);
  EXPECT_EQ(p.kept, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(p.doc.text, "aa cc");
}

TEST(PerturbDocument, DuplicateSelectionsCollapse) {
  const Document doc = testutil::make_doc("d1", "aa bb cc");
  const PerturbedDocument p = perturb_document(doc, {2, 2}, PerturbMode::retain);
  EXPECT_EQ(p.doc.text, "cc");
}

TEST(PerturbDocument, RemovingEverythingKeepsTheLowestWeightedToken) {
  const Document doc = testutil::make_doc("d1", "aa bb cc dd");
  // Ties (indices 1 and 3) resolve to the lower index.
  const PerturbedDocument p =
      perturb_document(doc, {0, 1, 2, 3}, PerturbMode::remove, {0.4, 0.1, 0.2, 0.1});
  EXPECT_EQ(p.kept, (std::vector<std::size_t>{1}));
  EXPECT_EQ(p.doc.text, "bb");
}

TEST(PerturbDocument, Validation) {
  const Document doc = testutil::make_doc("d1", "aa bb");
  EXPECT_THROW(perturb_document(doc, {}, PerturbMode::retain), ValidationError);
  EXPECT_THROW(perturb_document(doc, {0, 1}, PerturbMode::remove), ValidationError);
  EXPECT_THROW(perturb_document(doc, {0, 1}, PerturbMode::remove, {0.5}), ValidationError);
  EXPECT_THROW(perturb_document(doc, {99}, PerturbMode::retain), ValidationError);
  Document empty;
  empty.id = "e";
  EXPECT_THROW(perturb_document(empty, {}, PerturbMode::remove), EvalError);
}

TEST(EvaluatePerturbed, RetainingEverythingChangesNothing) {
  SyntheticCorpus synth;
  const ModelParams model = small_trained_model(synth);
  std::vector<PerturbedDocument> perturbed;
  for (const Document& doc : synth.corpus.docs) {
    std::vector<std::size_t> all(doc.tokens.size());
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
    perturbed.push_back(perturb_document(doc, all, PerturbMode::retain));
  }
  const FaithfulnessResult r =
      evaluate_perturbed(model, synth.corpus.docs, perturbed, "f1_micro", 100.0);
  EXPECT_EQ(r.mode, "sufficiency");
  EXPECT_EQ(r.metric, "f1_micro");
  EXPECT_EQ(r.k, 100.0);
  EXPECT_EQ(r.p_full, r.p_perturbed);
  EXPECT_EQ(r.delta, 0.0);
  EXPECT_EQ(r.retention_pct, 100.0);
}

TEST(EvaluatePerturbed, RemovingNothingChangesNothing) {
  SyntheticCorpus synth;
  const ModelParams model = small_trained_model(synth);
  std::vector<PerturbedDocument> perturbed;
  for (const Document& doc : synth.corpus.docs)
    perturbed.push_back(perturb_document(doc, {}, PerturbMode::remove));
  const FaithfulnessResult r =
      evaluate_perturbed(model, synth.corpus.docs, perturbed, "auc_micro", 0.0);
  EXPECT_EQ(r.mode, "comprehensiveness");
  EXPECT_EQ(r.delta, 0.0);
  EXPECT_EQ(r.retention_pct, 100.0);
}

TEST(EvaluatePerturbed, RequiresParallelLists) {
  SyntheticCorpus synth;
  const ModelParams model = small_trained_model(synth);
  EXPECT_THROW(evaluate_perturbed(model, synth.corpus.docs, {}, "f1_micro"), ValidationError);
}

TEST(FaithfulnessSweep, BlocksAndGridAreOrdered) {
  SyntheticCorpus synth;
  const ModelParams model = small_trained_model(synth);
  const std::vector<FaithfulnessResult> rows = faithfulness_sweep(
      model, synth.corpus, SelectionMode::top_p_percent, {50.0, 10.0, 100.0},
      SelectionScope::pooled_max, "f1_micro");
  ASSERT_EQ(rows.size(), 6u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(rows[i].mode, "sufficiency");
  for (int i = 3; i < 6; ++i) EXPECT_EQ(rows[i].mode, "comprehensiveness");
  const std::vector<double> want_k = {10.0, 50.0, 100.0, 10.0, 50.0, 100.0};
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(rows[i].k, want_k[i]);
    EXPECT_EQ(rows[i].metric, "f1_micro");
    EXPECT_EQ(rows[i].p_full, rows[0].p_full);  // full side never changes
  }

  // Retaining the full budget is a no-op; larger retain budgets keep more.
  EXPECT_EQ(rows[2].delta, 0.0);
  EXPECT_EQ(rows[2].retention_pct, 100.0);
  EXPECT_LE(rows[0].retention_pct, rows[1].retention_pct);
  EXPECT_LE(rows[1].retention_pct, rows[2].retention_pct);
  // Removing the full budget hits the single-token fallback.
  EXPECT_GT(rows[5].retention_pct, 0.0);
  EXPECT_LT(rows[5].retention_pct, rows[3].retention_pct);
  // retain k and remove k see complementary token counts (fallback aside).
  EXPECT_NEAR(rows[0].retention_pct + rows[3].retention_pct, 100.0, 1e-9);
}

TEST(FaithfulnessSweep, Validation) {
  SyntheticCorpus synth;
  const ModelParams model = small_trained_model(synth);
  EXPECT_THROW(faithfulness_sweep(model, Corpus{}, SelectionMode::top_p_percent, {10.0},
                                  SelectionScope::pooled_max, "f1_micro"),
               ValidationError);
  EXPECT_THROW(faithfulness_sweep(model, synth.corpus, SelectionMode::top_p_percent, {},
                                  SelectionScope::pooled_max, "f1_micro"),
               ConfigError);
}

TEST(FaithfulnessCsv, HeaderAndRowShape) {
  FaithfulnessResult r;
  r.mode = "sufficiency";
  r.k = 10.0;
  r.metric = "f1_micro";
  r.p_full = 0.5;
  r.p_perturbed = 0.25;
  r.delta = 0.25;
  r.retention_pct = 12.5;
  Json echo;
  echo["selection"] = "top_p";
  const std::string csv = faithfulness_csv({r}, echo);
  EXPECT_EQ(csv,
            "# selection=top_p\n"
            "mode,k,metric,P_full,P_perturbed,delta,retention_pct\n"
            "sufficiency,10.0,f1_micro,0.500000,0.250000,0.250000,12.5\n");
}
