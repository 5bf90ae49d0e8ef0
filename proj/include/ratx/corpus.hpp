#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ratx/common.hpp"
#include "ratx/jsonl.hpp"

namespace ratx {

struct Token {
  std::string text;
  std::size_t start = 0;  // character offset into the preprocessed text
  std::size_t end = 0;    // exclusive
};

struct CodeLabel {
  std::string code;
  std::string description;

  bool operator==(const CodeLabel& o) const {
    return code == o.code && description == o.description;
  }
};

struct Document {
  std::string id;
  std::string raw_text;
  std::string text;  // preprocessed
  std::vector<Token> tokens;
  std::set<std::string> gold_codes;
};

// A rationale: a contiguous character span of a document's preprocessed text,
// tied to one code. `score` is set for spans produced by alignment.
struct RationaleSpan {
  std::string doc_id;
  std::string code;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::string text;
  std::optional<double> score;
};

inline std::string lowercase_ascii(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

// Lowercase, map every character outside [a-z0-9] to a space, collapse runs
// of spaces, and trim. Digits are kept so that codes like "type 2 diabetes"
// survive intact. Idempotent by construction.
inline std::string preprocess_text(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char ch : raw) {
    const unsigned char c = static_cast<unsigned char>(ch);
    char mapped;
    if (c >= 'A' && c <= 'Z') {
      mapped = static_cast<char>(c - 'A' + 'a');
    } else if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
      mapped = ch;
    } else {
      mapped = ' ';
    }
    if (mapped == ' ') {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(mapped);
    }
  }
  return out;
}

// Whitespace tokenization with character offsets into `text`. Assumes `text`
// is already preprocessed (single spaces, no leading/trailing whitespace),
// but tolerates arbitrary spacing.
inline std::vector<Token> tokenize_with_offsets(const std::string& text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == ' ') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    tokens.push_back({text.substr(i, j - i), i, j});
    i = j;
  }
  return tokens;
}

struct Corpus {
  std::vector<Document> docs;
  std::vector<CodeLabel> labels;  // union over documents, sorted by code
  std::unordered_map<std::string, std::size_t> doc_index;

  const Document* find(const std::string& id) const {
    auto it = doc_index.find(id);
    return it == doc_index.end() ? nullptr : &docs[it->second];
  }

  const Document& at(const std::string& id) const {
    const Document* d = find(id);
    if (!d) throw ValidationError("unknown document id: " + id);
    return *d;
  }

  std::vector<std::string> codes() const {
    std::vector<std::string> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(l.code);
    return out;
  }

  void rebuild_index() {
    doc_index.clear();
    for (std::size_t i = 0; i < docs.size(); ++i) doc_index[docs[i].id] = i;
  }
};

// Reads documents.jsonl: {"id": ..., "text": ..., "codes": [{"code", "description"}]}.
// Preprocesses and tokenizes every document and collects the label union.
// Duplicate ids are rejected; an empty file yields an empty corpus.
inline Corpus load_documents(const std::string& path) {
  Corpus corpus;
  std::map<std::string, std::string> label_union;
  for_each_jsonl(path, [&](const Json& rec, std::size_t lineno) {
    Document doc;
    doc.id = require_string(rec, "id", lineno);
    doc.raw_text = require_string(rec, "text", lineno);
    if (corpus.doc_index.count(doc.id))
      throw ParseError("duplicate document id \"" + doc.id + "\"", lineno);
    if (!rec.contains("codes") || !rec["codes"].is_array())
      throw ParseError("missing or non-array field \"codes\"", lineno);
    for (const auto& c : rec["codes"]) {
      if (!c.is_object()) throw ParseError("code entries must be objects", lineno);
      std::string code = require_string(c, "code", lineno);
      std::string desc = require_string(c, "description", lineno);
      doc.gold_codes.insert(code);
      label_union.emplace(code, desc);  // first description wins
    }
    doc.text = preprocess_text(doc.raw_text);
    doc.tokens = tokenize_with_offsets(doc.text);
    corpus.doc_index[doc.id] = corpus.docs.size();
    corpus.docs.push_back(std::move(doc));
  });
  for (auto& [code, desc] : label_union) corpus.labels.push_back({code, desc});
  return corpus;
}

// Locates a free-text span inside a document; used when annotation records
// carry text instead of offsets. Returns nullopt when nothing acceptable is
// found. The alignment module provides the real implementation.
using SpanLocator =
    std::function<std::optional<RationaleSpan>(const Document&, const std::string& code,
                                               const std::string& text)>;

// Reads annotations.jsonl. Records are {"doc_id", "code", "start", "end"} or
// {"doc_id", "code", "text"}; offset records may carry "text" (verified
// against the slice) and "score". Offsets index the preprocessed text.
inline std::vector<RationaleSpan> load_annotations(const std::string& path, const Corpus& corpus,
                                                   const SpanLocator& locate = nullptr) {
  std::vector<RationaleSpan> spans;
  for_each_jsonl(path, [&](const Json& rec, std::size_t lineno) {
    RationaleSpan span;
    span.doc_id = require_string(rec, "doc_id", lineno);
    span.code = require_string(rec, "code", lineno);
    const Document* doc = corpus.find(span.doc_id);
    if (!doc) throw ParseError("unknown document id \"" + span.doc_id + "\"", lineno);
    if (rec.contains("score") && rec["score"].is_number())
      span.score = rec["score"].get<double>();
    if (rec.contains("start") || rec.contains("end")) {
      span.start = require_uint(rec, "start", lineno);
      span.end = require_uint(rec, "end", lineno);
      if (span.end <= span.start || span.end > doc->text.size())
        throw ValidationError("span [" + std::to_string(span.start) + ", " +
                              std::to_string(span.end) + ") out of range for document \"" +
                              span.doc_id + "\" (line " + std::to_string(lineno) + ")");
      span.text = doc->text.substr(span.start, span.end - span.start);
      if (rec.contains("text") && rec["text"].is_string() &&
          rec["text"].get<std::string>() != span.text)
        throw ValidationError("span text does not match offsets [" +
                              std::to_string(span.start) + ", " + std::to_string(span.end) +
                              ") in document \"" + span.doc_id + "\" (line " +
                              std::to_string(lineno) + ")");
    } else {
      std::string text = require_string(rec, "text", lineno);
      if (!locate)
        throw ValidationError("text-only annotation needs alignment (line " +
                              std::to_string(lineno) + ")");
      std::optional<RationaleSpan> located = locate(*doc, span.code, text);
      if (!located)
        throw ValidationError("could not locate annotation text in document \"" + span.doc_id +
                              "\" (line " + std::to_string(lineno) + ")");
      located->doc_id = span.doc_id;
      located->code = span.code;
      span = *located;
    }
    spans.push_back(std::move(span));
  });
  return spans;
}

// Token indices whose character range overlaps [start, end) by at least one
// character.
inline std::vector<std::size_t> covered_tokens(const Document& doc, std::size_t start,
                                               std::size_t end) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    if (doc.tokens[i].start < end && doc.tokens[i].end > start) out.push_back(i);
  }
  return out;
}

}  // namespace ratx
