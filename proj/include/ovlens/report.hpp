#pragma once

// Plot-ready CSV grids and JSON audit trails for evaluation results.

#include <charconv>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovlens/analogy.hpp"

namespace ovlens {

/// Shortest decimal form that round-trips to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

/// Indented JSON; undecodable bytes in generated text become U+FFFD.
inline std::string dump_json(const nlohmann::json& j) {
  return j.dump(1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

inline const char* kReportCsvHeader = "task,lens,layer,rank,accuracy,n_queries,chance,icl";

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// One row per report; rank and icl are empty when absent.
inline std::string reports_to_csv(const std::vector<EvalReport>& reports) {
  std::string out = std::string(kReportCsvHeader) + "\n";
  for (const auto& r : reports) {
    out += csv_field(r.task) + "," + csv_field(r.lens) + "," + std::to_string(r.layer) + "," +
           (r.rank_r ? std::to_string(*r.rank_r) : "") + "," + format_double(r.accuracy) + "," +
           std::to_string(r.total) + "," + format_double(r.chance) + "," +
           (r.icl_accuracy ? format_double(*r.icl_accuracy) : "") + "\n";
  }
  return out;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json queries = nlohmann::json::array();
  for (const auto& q : r.records) {
    queries.push_back({{"src", q.query.src},
                       {"dst", q.query.dst},
                       {"a", q.a},
                       {"b", q.b},
                       {"b_prime", q.b2},
                       {"expected", q.expected},
                       {"predicted", q.predicted},
                       {"correct", q.correct}});
  }
  return {{"task", r.task},
          {"lens", r.lens},
          {"layer", r.layer},
          {"rank", r.rank_r ? nlohmann::json(*r.rank_r) : nlohmann::json(nullptr)},
          {"correct", r.correct},
          {"total", r.total},
          {"accuracy", r.accuracy},
          {"chance", r.chance},
          {"icl", r.icl_accuracy ? nlohmann::json(*r.icl_accuracy) : nlohmann::json(nullptr)},
          {"queries", queries}};
}

inline nlohmann::json icl_to_json(const IclResult& r) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& rec : r.records) {
    items.push_back({{"prompt", rec.prompt},
                     {"expected", rec.expected},
                     {"output", rec.output},
                     {"correct", rec.correct}});
  }
  return {{"task", r.task}, {"shots", r.shots}, {"accuracy", r.accuracy}, {"items", items}};
}

inline std::string icl_to_csv(const std::vector<IclResult>& results) {
  std::string out = "task,shots,accuracy,n\n";
  for (const auto& r : results) {
    out += csv_field(r.task) + "," + std::to_string(r.shots) + "," + format_double(r.accuracy) +
           "," + std::to_string(r.records.size()) + "\n";
  }
  return out;
}

/// lens,index,value rows of each lens spectrum.
inline std::string spectra_to_csv(const std::vector<std::pair<std::string, std::vector<double>>>& s) {
  std::string out = "lens,index,value\n";
  for (const auto& [lens, values] : s)
    for (std::size_t i = 0; i < values.size(); ++i)
      out += csv_field(lens) + "," + std::to_string(i) + "," + format_double(values[i]) + "\n";
  return out;
}

}  // namespace ovlens
