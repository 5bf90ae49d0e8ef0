#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ratx/faithfulness.hpp"
#include "ratx/jsonl.hpp"
#include "ratx/metrics.hpp"

namespace ratx {

// Fixed-point formatting; reports avoid locale- or platform-dependent output
// so reruns stay byte-identical.
inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

// "# key=value" comment lines echoing the resolved run configuration.
inline std::string csv_config_echo(const Json& config) {
  std::string out;
  for (auto it = config.begin(); it != config.end(); ++it) {
    const std::string value =
        it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
    out += "# " + it.key() + "=" + value + "\n";
  }
  return out;
}

// Metric values print as fractions with six decimals; retention is a
// percentage with one decimal.
inline std::string faithfulness_csv(const std::vector<FaithfulnessResult>& rows,
                                    const Json& config) {
  std::string out = csv_config_echo(config);
  out += "mode,k,metric,P_full,P_perturbed,delta,retention_pct\n";
  for (const FaithfulnessResult& r : rows) {
    out += csv_field(r.mode) + "," + format_fixed(r.k, 1) + "," + csv_field(r.metric) + "," +
           format_fixed(r.p_full, 6) + "," + format_fixed(r.p_perturbed, 6) + "," +
           format_fixed(r.delta, 6) + "," + format_fixed(r.retention_pct, 1) + "\n";
  }
  return out;
}

inline Json to_json(const MatchCounts& c) {
  return Json{{"prediction_count", c.prediction_count},
              {"accurate_count", c.accurate_count},
              {"tp", c.tp},
              {"fp", c.fp},
              {"fn", c.fn}};
}

inline Json to_json(const PRF& m) {
  return Json{{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

inline Json to_json(const ClassificationReport& r) {
  Json j{{"precision_micro", r.precision_micro}, {"recall_micro", r.recall_micro},
         {"f1_micro", r.f1_micro},               {"precision_macro", r.precision_macro},
         {"recall_macro", r.recall_macro},       {"f1_macro", r.f1_macro},
         {"auc_micro", r.auc_micro},             {"auc_macro", r.auc_macro}};
  for (const auto& [n, v] : r.precision_at) j["precision_at_" + std::to_string(n)] = v;
  if (r.no_gold_warning) j["no_gold_warning"] = true;
  return j;
}

inline Json to_json(const FaithfulnessResult& r) {
  return Json{{"mode", r.mode},
              {"k", r.k},
              {"metric", r.metric},
              {"p_full", r.p_full},
              {"p_perturbed", r.p_perturbed},
              {"delta", r.delta},
              {"retention_pct", r.retention_pct}};
}

inline Json span_to_json(const RationaleSpan& s) {
  Json j{{"doc_id", s.doc_id}, {"code", s.code}, {"start", s.start},
         {"end", s.end},       {"text", s.text}};
  if (s.score) j["score"] = *s.score;
  return j;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << content;
}

namespace detail {

inline void flatten_json(const Json& node, const std::string& prefix,
                         std::vector<std::pair<std::string, std::string>>& rows) {
  if (node.is_object()) {
    for (auto it = node.begin(); it != node.end(); ++it)
      flatten_json(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), rows);
  } else if (node.is_array()) {
    std::size_t i = 0;
    for (const Json& v : node) flatten_json(v, prefix + "." + std::to_string(i++), rows);
  } else {
    rows.push_back({prefix, node.is_string() ? node.get<std::string>() : node.dump()});
  }
}

}  // namespace detail

// Writes a report object. JSON keeps full double precision. CSV echoes the
// embedded "config" object as comment lines, then flattens the rest into
// key,value rows.
inline void write_report(const Json& report, const std::string& path, const std::string& format) {
  if (format == "json") {
    write_text_file(path, report.dump(2) + "\n");
    return;
  }
  if (format != "csv") throw ConfigError("unknown report format: " + format);
  std::string out;
  Json payload = report;
  if (payload.contains("config") && payload["config"].is_object()) {
    out += csv_config_echo(payload["config"]);
    payload.erase("config");
  }
  out += "key,value\n";
  std::vector<std::pair<std::string, std::string>> rows;
  detail::flatten_json(payload, "", rows);
  for (const auto& [k, v] : rows) out += csv_field(k) + "," + csv_field(v) + "\n";
  write_text_file(path, out);
}

}  // namespace ratx
