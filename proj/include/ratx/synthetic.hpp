#pragma once

#include <string>
#include <vector>

#include "ratx/corpus.hpp"

namespace ratx {

// Deterministic toy corpus: each code owns a few marker words; documents are
// filler text with markers planted for their active codes, and every planted
// marker is recorded as a gold rationale span. Useful wherever a corpus with
// known ground truth is needed.
struct SyntheticSpec {
  std::size_t n_docs = 200;
  std::size_t n_codes = 6;
  std::size_t min_len = 30;  // tokens before markers
  std::size_t max_len = 60;
  double code_prob = 0.3;
  std::uint64_t seed = 1337;
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<RationaleSpan> spans;  // gold rationales, one per planted marker
};

inline SyntheticCorpus make_synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.n_docs == 0 || spec.n_codes == 0 || spec.min_len == 0 ||
      spec.max_len < spec.min_len)
    throw ConfigError("bad synthetic corpus spec");
  Rng rng(spec.seed);

  std::vector<std::vector<std::string>> markers(spec.n_codes);
  std::vector<CodeLabel> labels;
  for (std::size_t c = 0; c < spec.n_codes; ++c) {
    const std::string num = std::to_string(c + 1);
    const std::string code = (c + 1 < 10 ? "c0" : "c") + num;
    labels.push_back({code, "synthetic condition " + num});
    markers[c] = {"marka" + num, "markb" + num};
    if (c % 2 == 0) markers[c].push_back("markc" + num);
  }

  std::vector<std::string> filler;
  for (std::size_t i = 0; i < 40; ++i) {
    filler.push_back("filler" + std::string(i < 10 ? "0" : "") + std::to_string(i));
  }

  SyntheticCorpus out;
  out.corpus.labels = labels;
  for (std::size_t d = 0; d < spec.n_docs; ++d) {
    Document doc;
    doc.id = "doc" + std::string(d < 10 ? "00" : d < 100 ? "0" : "") + std::to_string(d);

    std::vector<std::size_t> active;
    for (std::size_t c = 0; c < spec.n_codes; ++c)
      if (rng.uniform() < spec.code_prob) active.push_back(c);
    if (active.empty()) active.push_back(rng.below(spec.n_codes));

    const std::size_t len =
        spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    struct Slot {
      std::string word;
      std::size_t code = 0;
      bool marker = false;
    };
    std::vector<Slot> slots;
    slots.reserve(len + 3 * active.size());
    for (std::size_t i = 0; i < len; ++i)
      slots.push_back({filler[rng.below(filler.size())], 0, false});
    for (std::size_t c : active) {
      const std::size_t occurrences = 1 + rng.below(3);
      for (std::size_t o = 0; o < occurrences; ++o) {
        Slot s{markers[c][rng.below(markers[c].size())], c, true};
        slots.insert(slots.begin() + static_cast<std::ptrdiff_t>(rng.below(slots.size() + 1)),
                     s);
      }
      doc.gold_codes.insert(labels[c].code);
    }

    std::size_t offset = 0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (i > 0) {
        doc.text.push_back(' ');
        ++offset;
      }
      const std::size_t start = offset;
      doc.text += slots[i].word;
      offset += slots[i].word.size();
      if (slots[i].marker) {
        RationaleSpan span;
        span.doc_id = doc.id;
        span.code = labels[slots[i].code].code;
        span.start = start;
        span.end = offset;
        span.text = slots[i].word;
        out.spans.push_back(std::move(span));
      }
    }
    doc.raw_text = doc.text;
    doc.tokens = tokenize_with_offsets(doc.text);
    out.corpus.docs.push_back(std::move(doc));
  }
  out.corpus.rebuild_index();
  return out;
}

}  // namespace ratx
