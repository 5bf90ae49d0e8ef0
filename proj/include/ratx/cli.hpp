#pragma once

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ratx/align.hpp"
#include "ratx/coder.hpp"
#include "ratx/corpus.hpp"
#include "ratx/faithfulness.hpp"
#include "ratx/llm.hpp"
#include "ratx/metrics.hpp"
#include "ratx/report.hpp"
#include "ratx/supervise.hpp"

namespace ratx {

namespace detail {

inline double parse_double_opt(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (...) {
  }
  throw ConfigError("option --" + key + " needs a number, got \"" + s + "\"");
}

inline std::uint64_t parse_uint_opt(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(s, &pos);
    if (pos == s.size() && s.find('-') == std::string::npos) return v;
  } catch (...) {
  }
  throw ConfigError("option --" + key + " needs a non-negative integer, got \"" + s + "\"");
}

inline std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i <= s.size()) {
    std::size_t j = s.find(',', i);
    if (j == std::string::npos) j = s.size();
    std::string item = s.substr(i, j - i);
    const std::size_t a = item.find_first_not_of(" \t");
    if (a != std::string::npos) {
      const std::size_t b = item.find_last_not_of(" \t");
      out.push_back(item.substr(a, b - a + 1));
    }
    i = j + 1;
  }
  return out;
}

}  // namespace detail

// The merged view of one invocation: subcommand plus resolved options.
// Accessors record the defaults they hand out, so after a handler runs the
// options map is the complete effective configuration; reports echo it
// verbatim.
struct RunConfig {
  std::string command;
  mutable std::map<std::string, std::string> options;

  bool has(const std::string& k) const { return options.count(k) != 0; }

  std::string require(const std::string& k) const {
    auto it = options.find(k);
    if (it == options.end()) throw ConfigError(command + " requires --" + k);
    return it->second;
  }

  std::string str(const std::string& k, const std::string& dflt) const {
    auto it = options.find(k);
    if (it != options.end()) return it->second;
    options.emplace(k, dflt);
    return dflt;
  }

  double num(const std::string& k, double dflt) const {
    auto it = options.find(k);
    if (it == options.end()) {
      options.emplace(k, Json(dflt).dump());
      return dflt;
    }
    return detail::parse_double_opt(it->second, k);
  }

  std::uint64_t uint(const std::string& k, std::uint64_t dflt) const {
    auto it = options.find(k);
    if (it == options.end()) {
      options.emplace(k, std::to_string(dflt));
      return dflt;
    }
    return detail::parse_uint_opt(it->second, k);
  }

  std::vector<double> num_list(const std::string& k, const std::string& dflt) const {
    std::vector<double> out;
    for (const std::string& item : detail::split_csv_list(str(k, dflt)))
      out.push_back(detail::parse_double_opt(item, k));
    return out;
  }

  std::vector<int> int_list(const std::string& k, const std::string& dflt) const {
    std::vector<int> out;
    for (double v : num_list(k, dflt)) out.push_back(static_cast<int>(v));
    return out;
  }
};

namespace detail {

inline Json config_json(const RunConfig& run) {
  Json j;
  j["command"] = run.command;
  for (const auto& [k, v] : run.options) j[k] = v;
  return j;
}

inline TrainConfig train_config_from(const RunConfig& run) {
  TrainConfig cfg;
  cfg.learning_rate = run.num("lr", cfg.learning_rate);
  cfg.batch_size = run.uint("batch", cfg.batch_size);
  cfg.epochs = run.uint("epochs", cfg.epochs);
  cfg.seed = run.uint("seed", cfg.seed);
  cfg.variant = encoder_variant_from(run.str("variant", "conv"));
  cfg.emb_dim = run.uint("emb-dim", cfg.emb_dim);
  cfg.enc_dim = run.uint("enc-dim", cfg.enc_dim);
  cfg.conv_width = run.uint("conv-width", cfg.conv_width);
  cfg.tau = run.num("tau", cfg.tau);
  cfg.clamp_eps = run.num("eps", cfg.clamp_eps);
  cfg.momentum = run.num("momentum", cfg.momentum);
  cfg.lambda = run.num("lambda", cfg.lambda);
  cfg.validate();
  return cfg;
}

inline Granularity granularity_from(const std::string& s) {
  if (s == "span") return Granularity::span;
  if (s == "token") return Granularity::token;
  throw ConfigError("unknown granularity: " + s);
}

inline PositionMode position_from(const std::string& s) {
  if (s == "exact") return PositionMode::exact;
  if (s == "pi" || s == "position_independent") return PositionMode::position_independent;
  throw ConfigError("unknown position mode: " + s);
}

inline PiDedupScope dedup_from(const std::string& s) {
  if (s == "per_doc") return PiDedupScope::per_doc_code;
  if (s == "per_corpus") return PiDedupScope::per_corpus;
  throw ConfigError("unknown pi-dedup scope: " + s);
}

inline void write_training_report(const RunConfig& run, const TrainTrace& trace) {
  const std::string out = run.str("out", "");
  if (out.empty()) return;
  write_report(Json{{"config", config_json(run)}, {"epoch_loss", trace.epoch_loss}}, out,
               "json");
}

// ---------------------------------------------------------------------------
// Subcommand handlers.
// ---------------------------------------------------------------------------

inline void cmd_ingest(const RunConfig& run) {
  const Corpus corpus = load_documents(run.require("docs"));
  std::size_t n_tokens = 0;
  for (const Document& d : corpus.docs) n_tokens += d.tokens.size();
  Json summary;
  summary["documents"] = corpus.docs.size();
  summary["labels"] = corpus.labels.size();
  summary["tokens"] = n_tokens;
  if (run.has("annotations")) {
    const std::vector<RationaleSpan> spans = load_annotations(
        run.require("annotations"), corpus, make_alignment_locator(run.num("threshold", 1.7)));
    std::map<std::string, std::size_t> per_code;
    for (const RationaleSpan& s : spans) ++per_code[s.code];
    summary["annotations"] = spans.size();
    summary["annotations_per_code"] = per_code;
  }
  std::cerr << "ingest: " << corpus.docs.size() << " documents, " << corpus.labels.size()
            << " labels, " << n_tokens << " tokens\n";
  const std::string out = run.str("out", "");
  if (!out.empty()) {
    summary["config"] = config_json(run);
    write_report(summary, out, "json");
  }
}

inline void cmd_train(const RunConfig& run) {
  const Corpus corpus = load_documents(run.require("docs"));
  const TrainConfig cfg = train_config_from(run);
  ModelParams params = init_params(corpus, cfg);
  const TrainTrace trace = train(params, corpus, cfg);
  save_checkpoint(params, run.require("model"));
  if (!trace.epoch_loss.empty())
    std::cerr << "train: final epoch loss " << trace.epoch_loss.back() << "\n";
  write_training_report(run, trace);
}

inline void cmd_predict(const RunConfig& run) {
  ModelParams model = load_checkpoint(run.require("model"));
  model.config.tau = run.num("tau", model.config.tau);
  const Corpus corpus = load_documents(run.require("docs"));
  JsonlWriter out(run.require("out"));
  for (const Document& doc : corpus.docs) {
    const PredictionSet pred = predict_codes(model, doc);
    Json codes = Json::array();
    for (std::size_t l = 0; l < model.labels.size(); ++l)
      if (pred.decisions[l]) codes.push_back(model.labels[l].code);
    out.write(Json{{"id", doc.id}, {"scores", pred.probabilities}, {"codes", codes}});
  }
}

inline void cmd_extract(const RunConfig& run) {
  ModelParams model = load_checkpoint(run.require("model"));
  model.config.tau = run.num("tau", model.config.tau);
  const Corpus corpus = load_documents(run.require("docs"));
  const SelectionMode mode = selection_mode_from(run.str("mode", "top_p"));
  const double k = run.num("k", 10.0);
  const SelectionScope scope = selection_scope_from(run.str("scope", "per_label"));

  JsonlWriter out(run.require("out"));
  std::size_t skipped = 0;
  for (const Document& doc : corpus.docs) {
    const Forward f = forward(model, doc);
    std::vector<std::size_t> positive;
    for (std::size_t l = 0; l < model.labels.size(); ++l)
      if (f.prediction.decisions[l]) positive.push_back(l);
    if (positive.empty()) {
      ++skipped;
      continue;
    }
    if (scope == SelectionScope::per_label) {
      for (std::size_t l : positive) {
        const Vec row = pooled_attention_row(f.attention, scope, nullptr, l);
        const std::vector<std::size_t> sel = select_top_tokens(row, mode, k);
        for (const RationaleSpan& s : tokens_to_spans(doc, sel, row, model.labels[l].code))
          out.write(span_to_json(s));
      }
    } else {
      const Vec row = pooled_attention_row(f.attention, scope, &f.prediction.decisions);
      const std::vector<std::size_t> sel = select_top_tokens(row, mode, k);
      for (std::size_t l : positive)
        for (const RationaleSpan& s : tokens_to_spans(doc, sel, row, model.labels[l].code))
          out.write(span_to_json(s));
    }
  }
  if (skipped > 0)
    std::cerr << "extract: " << skipped << " documents had no predicted codes\n";
}

inline void cmd_faithfulness(const RunConfig& run) {
  ModelParams model = load_checkpoint(run.require("model"));
  model.config.tau = run.num("tau", model.config.tau);
  const Corpus corpus = load_documents(run.require("docs"));
  const SelectionMode mode = selection_mode_from(run.str("mode", "top_p"));
  const std::vector<double> grid = run.num_list("grid", "10,20,30,40,50,60,70,80,90");
  const SelectionScope scope = selection_scope_from(run.str("scope", "pooled_max"));
  const std::string metric = run.str("metric", "f1_micro");
  const std::vector<int> at_n = run.int_list("at-n", "");
  const std::vector<FaithfulnessResult> rows =
      faithfulness_sweep(model, corpus, mode, grid, scope, metric, at_n);
  write_text_file(run.require("out"), faithfulness_csv(rows, config_json(run)));
}

inline void cmd_plausibility(const RunConfig& run) {
  const Corpus corpus = load_documents(run.require("docs"));
  const std::vector<RationaleSpan> predicted = load_annotations(run.require("pred"), corpus);
  const std::vector<RationaleSpan> gold = load_annotations(run.require("annotations"), corpus);
  const Granularity granularity = granularity_from(run.str("granularity", "span"));
  const PositionMode position = position_from(run.str("position", "exact"));
  const PiDedupScope dedup = dedup_from(run.str("pi-dedup", "per_doc"));
  const MatchCounts counts = match_counts(predicted, gold, corpus, granularity, position, dedup);
  write_report(Json{{"config", config_json(run)},
                    {"counts", to_json(counts)},
                    {"metrics", to_json(prf_from_counts(counts))}},
               run.require("out"), "json");
}

inline void cmd_align(const RunConfig& run) {
  const Corpus corpus = load_documents(run.require("docs"));
  std::vector<GeneratedSpan> generated;
  for_each_jsonl(run.require("in"), [&](const Json& rec, std::size_t lineno) {
    generated.push_back({require_string(rec, "doc_id", lineno),
                         require_string(rec, "code", lineno),
                         require_string(rec, "text", lineno)});
  });
  const std::string out_path = run.require("out");
  const AlignOutcome outcome =
      align_generated_spans(generated, corpus, run.num("threshold", 1.7));
  JsonlWriter out(out_path);
  for (const RationaleSpan& s : outcome.retained) out.write(span_to_json(s));
  JsonlWriter dropped(run.str("dropped", out_path + ".dropped.jsonl"));
  for (const DroppedSpan& s : outcome.dropped)
    dropped.write(Json{{"doc_id", s.doc_id},
                       {"code", s.code},
                       {"text", s.text},
                       {"best_score", s.best_score}});
  std::cerr << "align: retained " << outcome.retained.size() << ", dropped "
            << outcome.dropped.size() << "\n";
}

inline void cmd_iaa(const RunConfig& run) {
  const Corpus corpus = load_documents(run.require("docs"));
  const std::vector<RationaleSpan> a = load_annotations(run.require("annotations"), corpus);
  const std::vector<RationaleSpan> b = load_annotations(run.require("annotations-b"), corpus);
  const IaaReport rep = iaa_report(a, b, corpus);
  write_report(
      Json{{"config", config_json(run)},
           {"span", Json{{"counts", to_json(rep.span_counts)}, {"metrics", to_json(rep.span)}}},
           {"token",
            Json{{"counts", to_json(rep.token_counts)}, {"metrics", to_json(rep.token)}}}},
      run.require("out"), "json");
}

inline void cmd_prompts(const RunConfig& run) {
  const Corpus corpus = load_documents(run.require("docs"));
  const PromptTemplate tmpl = prompt_template_from(run.str("template", "zero_shot"));
  const std::size_t k_examples = run.uint("k-examples", 5);
  const std::uint64_t seed = run.uint("seed", 1337);

  std::map<std::string, FewshotSelection> examples;
  if (tmpl == PromptTemplate::few_shot) {
    const std::vector<RationaleSpan> spans = load_annotations(
        run.require("annotations"), corpus, make_alignment_locator(run.num("threshold", 1.7)));
    for (const CodeLabel& l : corpus.labels)
      examples[l.code] = select_fewshot_examples(l.code, spans, k_examples, seed);
  }
  std::map<std::string, std::string> descriptions;
  for (const CodeLabel& l : corpus.labels) descriptions[l.code] = l.description;

  JsonlWriter out(run.require("out"));
  std::size_t skipped = 0;
  for (const Document& doc : corpus.docs) {
    for (const std::string& code : doc.gold_codes) {
      PromptSpec spec;
      spec.id = doc.id + ":" + code;
      spec.template_id = tmpl;
      spec.note_text = doc.text;
      spec.code = code;
      spec.description = descriptions[code];
      if (tmpl == PromptTemplate::few_shot) {
        spec.examples = examples[code].examples;
        if (spec.examples.empty()) {
          ++skipped;
          continue;
        }
      }
      const std::string prompt = build_prompt(spec);
      out.write(Json{{"id", spec.id},
                     {"doc_id", doc.id},
                     {"code", code},
                     {"prompt", prompt},
                     {"prompt_sha256", sha256_hex(prompt)}});
    }
  }
  if (skipped > 0)
    std::cerr << "prompts: skipped " << skipped << " document/code pairs without examples\n";
}

inline void cmd_parse_llm(const RunConfig& run) {
  JsonlWriter out(run.require("out"));
  std::size_t responses = 0, spans = 0, warnings = 0;
  for_each_jsonl(run.require("responses"), [&](const Json& rec, std::size_t lineno) {
    ++responses;
    const std::string doc_id = require_string(rec, "doc_id", lineno);
    const std::string code = require_string(rec, "code", lineno);
    const ParsedSpans parsed = parse_numbered_spans(require_string(rec, "response", lineno));
    if (parsed.warning) ++warnings;
    for (const std::string& text : parsed.spans) {
      out.write(Json{{"doc_id", doc_id}, {"code", code}, {"text", text}});
      ++spans;
    }
  });
  std::cerr << "parse-llm: " << responses << " responses, " << spans << " spans, " << warnings
            << " unparsable\n";
}

inline void cmd_distill(const RunConfig& run) {
  const Corpus corpus = load_documents(run.require("docs"));
  std::vector<PromptText> prompts;
  std::vector<std::pair<std::string, std::string>> targets;  // (doc_id, code) per prompt
  for_each_jsonl(run.require("prompts"), [&](const Json& rec, std::size_t lineno) {
    const std::string doc_id = require_string(rec, "doc_id", lineno);
    const std::string code = require_string(rec, "code", lineno);
    const std::string id =
        rec.contains("id") && rec["id"].is_string() ? rec["id"].get<std::string>()
                                                    : doc_id + ":" + code;
    prompts.push_back({id, require_string(rec, "prompt", lineno)});
    targets.push_back({doc_id, code});
  });

  GenerationConfig gcfg;
  gcfg.endpoint = run.str("endpoint", "");
  gcfg.replay_path = run.str("replay", "");
  gcfg.cache_path = run.str("cache", "");
  gcfg.temperature = run.num("temperature", gcfg.temperature);
  gcfg.top_probability_mass = run.num("top-mass", gcfg.top_probability_mass);
  gcfg.max_tokens = static_cast<int>(run.uint("max-tokens", 8000));
  gcfg.timeout_ms = static_cast<int>(run.uint("timeout-ms", 30000));
  gcfg.concurrency = run.uint("concurrency", gcfg.concurrency);
  gcfg.credential_env = run.str("credential-env", "");

  const std::vector<GenerationResult> results = fetch_generation_texts(prompts, gcfg);
  std::vector<LlmResponse> responses;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].ok) {
      ++failed;
      std::cerr << "distill: prompt " << results[i].id << " failed: " << results[i].error
                << "\n";
      continue;
    }
    responses.push_back({targets[i].first, targets[i].second, results[i].response});
  }
  // Partial failure is tolerated and counted in the stats; total failure is fatal.
  if (!results.empty() && failed == results.size())
    throw IoError("all " + std::to_string(failed) +
                  " prompts failed: " + results.back().error);

  const DistantDataset dataset = assemble_distant_supervision(
      responses, corpus, run.num("threshold", 1.7), run.str("provenance", "llm"));
  JsonlWriter out(run.require("out"));
  for (const RationaleSpan& s : dataset.spans) {
    Json rec = span_to_json(s);
    rec["provenance"] = dataset.provenance;
    out.write(rec);
  }
  const std::string dropped_path = run.str("dropped", "");
  if (!dropped_path.empty()) {
    JsonlWriter dropped(dropped_path);
    for (const DroppedSpan& s : dataset.dropped)
      dropped.write(Json{{"doc_id", s.doc_id},
                         {"code", s.code},
                         {"text", s.text},
                         {"best_score", s.best_score}});
  }
  const std::string stats_path = run.str("stats", "");
  if (!stats_path.empty()) {
    Json per_code;
    for (const auto& [code, cov] : dataset.per_code)
      per_code[code] = Json{{"retained", cov.retained}, {"dropped", cov.dropped}};
    write_report(Json{{"config", config_json(run)},
                      {"responses", dataset.responses},
                      {"failed_prompts", failed},
                      {"parse_warnings", dataset.parse_warnings},
                      {"retained", dataset.spans.size()},
                      {"dropped", dataset.dropped.size()},
                      {"per_code", per_code}},
                 stats_path, "json");
  }
  std::cerr << "distill: " << dataset.spans.size() << " spans retained, "
            << dataset.dropped.size() << " dropped, " << failed << " prompts failed\n";
}

inline void cmd_train_multiobj(const RunConfig& run) {
  const Corpus corpus = load_documents(run.require("docs"));
  const std::vector<RationaleSpan> spans =
      load_annotations(run.require("annotations"), corpus);
  const TrainConfig cfg = train_config_from(run);
  ModelParams params = init_params(corpus, cfg);
  const TrainTrace trace = multiobjective_train(params, corpus, spans, cfg);
  save_checkpoint(params, run.require("model"));
  if (!trace.epoch_loss.empty())
    std::cerr << "train-multiobj: final epoch loss " << trace.epoch_loss.back() << "\n";
  write_training_report(run, trace);
}

inline void cmd_train_ner(const RunConfig& run) {
  const Corpus corpus = load_documents(run.require("docs"));
  const std::vector<RationaleSpan> spans =
      load_annotations(run.require("annotations"), corpus);
  const TrainConfig cfg = train_config_from(run);
  std::vector<std::string> codes = run.has("codes")
                                       ? detail::split_csv_list(run.require("codes"))
                                       : corpus.codes();
  TaggerParams params = init_tagger(corpus, codes, cfg);
  const TrainTrace trace = ner_train(params, corpus, spans);
  save_tagger(params, run.require("model"));
  if (!trace.epoch_loss.empty())
    std::cerr << "train-ner: final epoch loss " << trace.epoch_loss.back() << "\n";
  write_training_report(run, trace);
}

inline void cmd_predict_ner(const RunConfig& run) {
  const TaggerParams model = load_tagger(run.require("model"));
  const Corpus corpus = load_documents(run.require("docs"));
  JsonlWriter out(run.require("out"));
  std::size_t repairs = 0;
  for (const Document& doc : corpus.docs) {
    const NerPrediction pred = ner_predict(model, doc);
    repairs += pred.repairs;
    for (const RationaleSpan& s : pred.spans) out.write(span_to_json(s));
  }
  if (repairs > 0) std::cerr << "predict-ner: repaired " << repairs << " orphan tags\n";
}

inline void cmd_report(const RunConfig& run) {
  std::ifstream in(run.require("in"));
  if (!in) throw IoError("cannot open " + run.require("in"));
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError("malformed report JSON: " + run.require("in"));
  write_report(j, run.require("out"), run.str("format", "csv"));
}

}  // namespace detail

inline int execute_command(const RunConfig& run) {
  if (run.command == "ingest") detail::cmd_ingest(run);
  else if (run.command == "train") detail::cmd_train(run);
  else if (run.command == "predict") detail::cmd_predict(run);
  else if (run.command == "extract") detail::cmd_extract(run);
  else if (run.command == "faithfulness") detail::cmd_faithfulness(run);
  else if (run.command == "plausibility") detail::cmd_plausibility(run);
  else if (run.command == "align") detail::cmd_align(run);
  else if (run.command == "iaa") detail::cmd_iaa(run);
  else if (run.command == "prompts") detail::cmd_prompts(run);
  else if (run.command == "parse-llm") detail::cmd_parse_llm(run);
  else if (run.command == "distill") detail::cmd_distill(run);
  else if (run.command == "train-multiobj") detail::cmd_train_multiobj(run);
  else if (run.command == "train-ner") detail::cmd_train_ner(run);
  else if (run.command == "predict-ner") detail::cmd_predict_ner(run);
  else if (run.command == "report") detail::cmd_report(run);
  else throw ConfigError("unknown command: " + run.command);
  return 0;
}

// Command-line front end. Exit codes: 0 on success, 1 for configuration,
// parsing, or input validation problems, 2 for runtime failures.
inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"label-wise attention coding with extractable rationales"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value file; use [subcommand] sections");
  app.get_config_ptr()->configurable(false);

  std::map<std::string, std::map<std::string, std::string>> values;
  const auto add = [&](CLI::App* sub, const std::string& name, const std::string& help) {
    std::map<std::string, std::string>* slot = &values[sub->get_name()];
    sub->add_option(
           "--" + name,
           [slot, name](const CLI::results_t& res) {
             (*slot)[name] = res.back();
             return true;
           },
           help)
        ->configurable(true)
        ->expected(1);
  };
  const auto add_model_options = [&](CLI::App* sub) {
    add(sub, "seed", "RNG seed");
    add(sub, "variant", "encoder variant: conv|recur");
    add(sub, "lr", "learning rate");
    add(sub, "epochs", "training epochs");
    add(sub, "batch", "mini-batch size");
    add(sub, "emb-dim", "embedding dimension");
    add(sub, "enc-dim", "encoder dimension");
    add(sub, "conv-width", "convolution window (odd)");
    add(sub, "tau", "decision threshold");
    add(sub, "eps", "probability clamp epsilon");
    add(sub, "momentum", "SGD momentum");
  };

  CLI::App* ingest = app.add_subcommand("ingest", "validate and summarize a corpus");
  add(ingest, "docs", "documents JSONL");
  add(ingest, "annotations", "annotations JSONL (optional)");
  add(ingest, "threshold", "alignment score cutoff for text-only annotations");
  add(ingest, "out", "summary JSON (optional)");

  CLI::App* train = app.add_subcommand("train", "train the attention coder");
  add(train, "docs", "documents JSONL");
  add(train, "model", "checkpoint output path");
  add(train, "out", "training report JSON (optional)");
  add_model_options(train);

  CLI::App* predict = app.add_subcommand("predict", "score documents with a trained coder");
  add(predict, "model", "checkpoint path");
  add(predict, "docs", "documents JSONL");
  add(predict, "out", "predictions JSONL");
  add(predict, "tau", "decision threshold override");

  CLI::App* extract = app.add_subcommand("extract", "extract rationale spans from attention");
  add(extract, "model", "checkpoint path");
  add(extract, "docs", "documents JSONL");
  add(extract, "out", "rationales JSONL");
  add(extract, "mode", "selection mode: top_p|top_n");
  add(extract, "k", "selection budget (percent or count)");
  add(extract, "scope", "per_label|pooled_max|pooled_mean");
  add(extract, "tau", "decision threshold override");

  CLI::App* faith = app.add_subcommand("faithfulness", "perturbation sweep over a budget grid");
  add(faith, "model", "checkpoint path");
  add(faith, "docs", "documents JSONL");
  add(faith, "out", "results CSV");
  add(faith, "mode", "selection mode: top_p|top_n");
  add(faith, "grid", "comma-separated budgets");
  add(faith, "scope", "per_label|pooled_max|pooled_mean");
  add(faith, "metric", "report metric, e.g. f1_micro");
  add(faith, "tau", "decision threshold override");
  add(faith, "at-n", "comma-separated N for precision@N metrics");

  CLI::App* plaus = app.add_subcommand("plausibility", "compare predicted and gold rationales");
  add(plaus, "docs", "documents JSONL");
  add(plaus, "pred", "predicted rationales JSONL");
  add(plaus, "annotations", "gold rationales JSONL");
  add(plaus, "out", "report JSON");
  add(plaus, "granularity", "span|token");
  add(plaus, "position", "exact|pi");
  add(plaus, "pi-dedup", "per_doc|per_corpus");

  CLI::App* align = app.add_subcommand("align", "anchor free-text spans into documents");
  add(align, "docs", "documents JSONL");
  add(align, "in", "generated spans JSONL: doc_id, code, text");
  add(align, "out", "aligned annotations JSONL");
  add(align, "dropped", "dropped spans JSONL (default: <out>.dropped.jsonl)");
  add(align, "threshold", "overlap score cutoff, strict >");

  CLI::App* iaa = app.add_subcommand("iaa", "inter-annotator agreement");
  add(iaa, "docs", "documents JSONL");
  add(iaa, "annotations", "annotator A JSONL");
  add(iaa, "annotations-b", "annotator B JSONL");
  add(iaa, "out", "report JSON");

  CLI::App* prompts = app.add_subcommand("prompts", "render span-selection prompts");
  add(prompts, "docs", "documents JSONL");
  add(prompts, "out", "prompts JSONL");
  add(prompts, "template", "zero_shot|few_shot");
  add(prompts, "annotations", "example source for few_shot");
  add(prompts, "threshold", "alignment cutoff for text-only examples");
  add(prompts, "k-examples", "annotated documents per code");
  add(prompts, "seed", "example sampling seed");

  CLI::App* parse_llm = app.add_subcommand("parse-llm", "parse numbered span responses");
  add(parse_llm, "responses", "responses JSONL: doc_id, code, response");
  add(parse_llm, "out", "spans JSONL");

  CLI::App* distill = app.add_subcommand("distill", "prompts to aligned training spans");
  add(distill, "docs", "documents JSONL");
  add(distill, "prompts", "prompts JSONL from the prompts subcommand");
  add(distill, "out", "distant annotations JSONL");
  add(distill, "endpoint", "generation endpoint URL");
  add(distill, "replay", "recorded responses JSONL");
  add(distill, "cache", "response cache JSONL, read/write");
  add(distill, "threshold", "overlap score cutoff");
  add(distill, "provenance", "provenance tag for produced spans");
  add(distill, "dropped", "dropped spans JSONL");
  add(distill, "stats", "coverage stats JSON");
  add(distill, "temperature", "sampling temperature");
  add(distill, "top-mass", "nucleus probability mass");
  add(distill, "max-tokens", "generation length limit");
  add(distill, "timeout-ms", "per-request timeout");
  add(distill, "concurrency", "parallel requests");
  add(distill, "credential-env", "env var holding a bearer token");

  CLI::App* tmo = app.add_subcommand("train-multiobj", "joint coding + rationale training");
  add(tmo, "docs", "documents JSONL");
  add(tmo, "annotations", "rationale annotations JSONL");
  add(tmo, "model", "checkpoint output path");
  add(tmo, "lambda", "rationale loss weight");
  add(tmo, "out", "training report JSON (optional)");
  add_model_options(tmo);

  CLI::App* tner = app.add_subcommand("train-ner", "train the BIO tagger");
  add(tner, "docs", "documents JSONL");
  add(tner, "annotations", "span annotations JSONL");
  add(tner, "model", "checkpoint output path");
  add(tner, "codes", "comma-separated tagset codes (default: corpus labels)");
  add(tner, "out", "training report JSON (optional)");
  add_model_options(tner);

  CLI::App* pner = app.add_subcommand("predict-ner", "tag documents with a trained tagger");
  add(pner, "model", "tagger checkpoint path");
  add(pner, "docs", "documents JSONL");
  add(pner, "out", "spans JSONL");

  CLI::App* report = app.add_subcommand("report", "re-emit a JSON report as csv or json");
  add(report, "in", "report JSON");
  add(report, "out", "output path");
  add(report, "format", "csv|json");

  std::vector<const char*> argv;
  argv.push_back("ratx");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    const std::vector<CLI::App*> parsed = app.get_subcommands();
    RunConfig run;
    run.command = parsed.front()->get_name();
    run.options = values[run.command];
    return execute_command(run);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace ratx
