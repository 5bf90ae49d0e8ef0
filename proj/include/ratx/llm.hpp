#pragma once

#include <openssl/evp.h>

#include <atomic>
#include <cctype>
#include <cstdlib>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "ratx/align.hpp"
#include "ratx/corpus.hpp"
#include "ratx/jsonl.hpp"

namespace ratx {

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompts.
// ---------------------------------------------------------------------------

enum class PromptTemplate { zero_shot, few_shot };

inline PromptTemplate prompt_template_from(const std::string& s) {
  if (s == "zero_shot") return PromptTemplate::zero_shot;
  if (s == "few_shot") return PromptTemplate::few_shot;
  throw ConfigError("unknown prompt template: " + s);
}

struct PromptSpec {
  std::string id;  // caller-chosen; echoed into results
  PromptTemplate template_id = PromptTemplate::zero_shot;
  std::string note_text;
  std::string code;
  std::string description;
  std::vector<std::string> examples;  // few_shot only
};

// Renders the span-selection prompt. The wording is fixed; tests pin it
// against golden files. Few-shot prompts add a quoted, comma-separated
// example list after the section-name instruction.
inline std::string build_prompt(const PromptSpec& spec) {
  if (spec.template_id == PromptTemplate::few_shot && spec.examples.empty())
    throw ValidationError("few-shot prompt needs at least one example");
  std::string p;
  p += "Note Text: " + spec.note_text + " + Code: " + spec.code + ". Description: " +
       spec.description + ". Could you please select the spans (rationales) which are related" +
       " to the code " + spec.code + "? The spans can be words, phrases, or sentences. Only" +
       " list the exact spans extracted from the 'Note Text', without including their section" +
       " names. ";
  if (spec.template_id == PromptTemplate::few_shot) {
    p += "For example: ";
    for (std::size_t i = 0; i < spec.examples.size(); ++i) {
      if (i > 0) p += ", ";
      p += "'" + spec.examples[i] + "'";
    }
    p += ". ";
  }
  p += "List each span with a number in front. For example: '1. Span1 2. Span2'. Only keep" +
       std::string(" the spans. Do not include any additional responses. Exclude any") +
       " punctuations at the end of the spans. Keep the spans as what they are in 'Note" +
       " Text'. Keep the spans as what they are in 'Note Text'. Keep the spans as what they" +
       " are in the 'Note Text'.";
  return p;
}

struct FewshotSelection {
  std::vector<std::string> examples;
  std::vector<std::string> doc_ids;  // documents the examples came from
  bool underfilled = false;          // fewer than k annotated documents exist
};

// Picks up to k annotated documents for a code and returns their span texts
// as prompt examples. Candidate documents are considered in sorted-id order;
// when more than k exist, a seeded shuffle chooses which k. Deterministic for
// fixed inputs.
inline FewshotSelection select_fewshot_examples(const std::string& code,
                                                const std::vector<RationaleSpan>& annotations,
                                                std::size_t k = 5, std::uint64_t seed = 1337) {
  if (k == 0) throw ConfigError("few-shot selection needs k >= 1");
  std::map<std::string, std::vector<const RationaleSpan*>> by_doc;
  for (const RationaleSpan& s : annotations) {
    if (s.code == code) by_doc[s.doc_id].push_back(&s);
  }
  FewshotSelection out;
  std::vector<std::string> doc_ids;
  for (const auto& [id, spans] : by_doc) doc_ids.push_back(id);
  if (doc_ids.size() > k) {
    Rng rng(seed);
    rng.shuffle(doc_ids);
    doc_ids.resize(k);
    std::sort(doc_ids.begin(), doc_ids.end());
  } else {
    out.underfilled = doc_ids.size() < k;
  }
  for (const std::string& id : doc_ids) {
    auto spans = by_doc[id];
    std::sort(spans.begin(), spans.end(), [](const RationaleSpan* a, const RationaleSpan* b) {
      return a->start != b->start ? a->start < b->start : a->end < b->end;
    });
    for (const RationaleSpan* s : spans) out.examples.push_back(s->text);
  }
  out.doc_ids = doc_ids;
  return out;
}

// ---------------------------------------------------------------------------
// Response parsing.
// ---------------------------------------------------------------------------

struct ParsedSpans {
  std::vector<std::string> spans;
  bool warning = false;  // response had no parsable numbered list
};

namespace detail {

inline std::size_t find_numbered_item(const std::string& text, std::size_t from, std::size_t n) {
  const std::string num = std::to_string(n);
  for (std::size_t i = from; i + num.size() <= text.size(); ++i) {
    if (i > 0 && !std::isspace(static_cast<unsigned char>(text[i - 1]))) continue;
    if (text.compare(i, num.size(), num) != 0) continue;
    const std::size_t dot = i + num.size();
    if (dot >= text.size() || text[dot] != '.') continue;
    if (dot + 1 < text.size() && !std::isspace(static_cast<unsigned char>(text[dot + 1])))
      continue;  // keeps decimals like "2.5" intact
    return i;
  }
  return std::string::npos;
}

inline std::string trim_ws(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace detail

// Extracts spans from a "1. Span1 2. Span2" style response. Items must be
// numbered sequentially from 1; text before the first item is ignored. One
// trailing sentence punctuation mark per span is stripped, mirroring the
// prompt's instruction. A response without any items parses to an empty list
// with the warning flag set.
inline ParsedSpans parse_numbered_spans(const std::string& response) {
  static const std::string kStrip = ".,;:!?";
  ParsedSpans out;
  std::size_t item = detail::find_numbered_item(response, 0, 1);
  if (item == std::string::npos) {
    out.warning = true;
    return out;
  }
  std::size_t n = 1;
  while (item != std::string::npos) {
    const std::size_t content = item + std::to_string(n).size() + 1;  // past "<n>."
    const std::size_t next = detail::find_numbered_item(response, content, n + 1);
    std::string text = detail::trim_ws(
        response.substr(content, next == std::string::npos ? std::string::npos : next - content));
    if (!text.empty() && kStrip.find(text.back()) != std::string::npos) text.pop_back();
    text = detail::trim_ws(text);
    if (!text.empty()) out.spans.push_back(std::move(text));
    item = next;
    ++n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fetching generations: live endpoint, replay file, or cache.
// ---------------------------------------------------------------------------

struct GenerationConfig {
  std::string endpoint;     // e.g. http://host:port/generate; empty = offline
  std::string replay_path;  // JSONL of {"prompt_sha256", "response"}
  std::string cache_path;   // optional read/write cache, same format
  double temperature = 0.1;
  double top_probability_mass = 0.99;
  int max_tokens = 8000;
  int timeout_ms = 30000;
  std::size_t concurrency = 4;
  std::string credential_env;  // env var holding a bearer token; never logged
};

struct GenerationResult {
  std::string id;
  std::string prompt_sha256;
  std::string response;
  bool ok = false;
  std::string error;
  bool from_cache = false;
};

namespace detail {

inline std::map<std::string, std::string> load_response_map(const std::string& path,
                                                            bool must_exist) {
  std::map<std::string, std::string> map;
  std::ifstream probe(path);
  if (!probe) {
    if (must_exist) throw IoError("cannot open " + path);
    return map;
  }
  probe.close();
  for_each_jsonl(path, [&](const Json& rec, std::size_t lineno) {
    map[require_string(rec, "prompt_sha256", lineno)] = require_string(rec, "response", lineno);
  });
  return map;
}

struct ParsedEndpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

inline ParsedEndpoint parse_endpoint(const std::string& url) {
  const std::size_t scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint must be a full URL: " + url);
  const std::size_t slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace detail

struct PromptText {
  std::string id;
  std::string prompt;
};

// Resolves prompts to generations. Order of precedence per prompt: cache hit,
// replay hit, live call. Live calls run on a small worker pool with
// per-prompt error isolation; one failed request never aborts the batch.
// Fresh live responses are appended to the cache file. Results keep the
// input order.
inline std::vector<GenerationResult> fetch_generation_texts(const std::vector<PromptText>& prompts,
                                                            const GenerationConfig& cfg) {
  if (cfg.endpoint.empty() && cfg.replay_path.empty() && cfg.cache_path.empty())
    throw ConfigError("need an endpoint, a replay file, or a cache");
  const std::map<std::string, std::string> replay =
      cfg.replay_path.empty() ? std::map<std::string, std::string>{}
                              : detail::load_response_map(cfg.replay_path, true);
  std::map<std::string, std::string> cache =
      cfg.cache_path.empty() ? std::map<std::string, std::string>{}
                             : detail::load_response_map(cfg.cache_path, false);

  std::vector<GenerationResult> results(prompts.size());
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    GenerationResult& r = results[i];
    r.id = prompts[i].id;
    r.prompt_sha256 = sha256_hex(prompts[i].prompt);
    if (auto it = cache.find(r.prompt_sha256); it != cache.end()) {
      r.response = it->second;
      r.ok = true;
      r.from_cache = true;
    } else if (auto rit = replay.find(r.prompt_sha256); rit != replay.end()) {
      r.response = rit->second;
      r.ok = true;
    } else if (!cfg.endpoint.empty()) {
      live.push_back(i);
    } else {
      r.error = "no replay entry for prompt sha256=" + r.prompt_sha256;
    }
  }

  if (!live.empty()) {
    const detail::ParsedEndpoint ep = detail::parse_endpoint(cfg.endpoint);
    const char* token = nullptr;
    if (!cfg.credential_env.empty()) {
      token = std::getenv(cfg.credential_env.c_str());
      if (!token)
        throw ConfigError("credential environment variable " + cfg.credential_env +
                          " is not set");
    }
    std::atomic<std::size_t> cursor{0};
    const auto worker = [&]() {
      httplib::Client client(ep.base);
      client.set_connection_timeout(0, cfg.timeout_ms * 1000);
      client.set_read_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000);
      httplib::Headers headers;
      if (token) headers.emplace("Authorization", std::string("Bearer ") + token);
      for (;;) {
        const std::size_t slot = cursor.fetch_add(1);
        if (slot >= live.size()) return;
        GenerationResult& r = results[live[slot]];
        const Json body{{"prompt", prompts[live[slot]].prompt},
                        {"temperature", cfg.temperature},
                        {"top_probability_mass", cfg.top_probability_mass},
                        {"max_tokens", cfg.max_tokens}};
        auto res = client.Post(ep.path, headers, body.dump(), "application/json");
        if (!res) {
          r.error = "request failed: " + httplib::to_string(res.error());
          continue;
        }
        if (res->status != 200) {
          r.error = "endpoint returned status " + std::to_string(res->status);
          continue;
        }
        Json parsed = Json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("text") || !parsed["text"].is_string()) {
          r.error = "endpoint response is not {\"text\": ...}";
          continue;
        }
        r.response = parsed["text"].get<std::string>();
        r.ok = true;
      }
    };
    std::vector<std::thread> pool;
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(cfg.concurrency, live.size()));
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();

    if (!cfg.cache_path.empty()) {
      std::ofstream out(cfg.cache_path, std::ios::app);
      if (!out) throw IoError("cannot write " + cfg.cache_path);
      for (std::size_t i : live) {
        const GenerationResult& r = results[i];
        if (r.ok && !cache.count(r.prompt_sha256))
          out << Json{{"prompt_sha256", r.prompt_sha256}, {"response", r.response}}.dump()
              << "\n";
      }
    }
  }
  return results;
}

inline std::vector<GenerationResult> fetch_generations(const std::vector<PromptSpec>& prompts,
                                                       const GenerationConfig& cfg) {
  std::vector<PromptText> texts;
  texts.reserve(prompts.size());
  for (const PromptSpec& s : prompts) texts.push_back({s.id, build_prompt(s)});
  return fetch_generation_texts(texts, cfg);
}

// ---------------------------------------------------------------------------
// Distant supervision assembly.
// ---------------------------------------------------------------------------

struct LlmResponse {
  std::string doc_id;
  std::string code;
  std::string response;
};

struct CodeCoverage {
  std::size_t retained = 0;
  std::size_t dropped = 0;
};

struct DistantDataset {
  std::vector<RationaleSpan> spans;  // aligned, with scores
  std::vector<DroppedSpan> dropped;
  std::map<std::string, CodeCoverage> per_code;
  std::size_t responses = 0;
  std::size_t parse_warnings = 0;
  std::string provenance;
};

// Parses raw responses and aligns every extracted span against its document.
// Spans surviving the overlap threshold become training annotations; the
// rest are kept for inspection with their best score.
inline DistantDataset assemble_distant_supervision(const std::vector<LlmResponse>& responses,
                                                   const Corpus& corpus,
                                                   double threshold = kRetentionThreshold,
                                                   const std::string& provenance = "llm") {
  DistantDataset out;
  out.provenance = provenance;
  out.responses = responses.size();
  std::vector<GeneratedSpan> generated;
  for (const LlmResponse& r : responses) {
    corpus.at(r.doc_id);  // unknown ids fail fast
    ParsedSpans parsed = parse_numbered_spans(r.response);
    if (parsed.warning) ++out.parse_warnings;
    for (std::string& text : parsed.spans)
      generated.push_back({r.doc_id, r.code, std::move(text)});
  }
  AlignOutcome aligned = align_generated_spans(generated, corpus, threshold);
  for (const RationaleSpan& s : aligned.retained) ++out.per_code[s.code].retained;
  for (const DroppedSpan& s : aligned.dropped) ++out.per_code[s.code].dropped;
  out.spans = std::move(aligned.retained);
  out.dropped = std::move(aligned.dropped);
  return out;
}

}  // namespace ratx
