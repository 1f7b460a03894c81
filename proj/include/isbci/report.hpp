#pragma once

// Renders cross-validation summaries as aligned text, CSV or JSON.

#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "isbci/error.hpp"
#include "isbci/pipeline.hpp"

namespace isbci::report {

enum class Format { Text, Csv, Structured };

inline Format parse_format(const std::string& s) {
  if (s == "text") return Format::Text;
  if (s == "csv") return Format::Csv;
  if (s == "structured" || s == "json") return Format::Structured;
  throw ConfigError("unknown format '" + s + "'");
}

/// Shortest text that parses back to the same double.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline nlohmann::json to_json(const pipeline::CvResult& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& hp : r.fold_choices) folds.push_back({{"n_rf", hp.n_rf}, {"k_bag", hp.k_bag}, {"hidden", hp.hidden}});
  return {{"name", r.name},
          {"fold_accuracies", r.fold_accuracies},
          {"mean", r.summary.mean},
          {"std", r.summary.std},
          {"sem", r.summary.sem},
          {"max", r.summary.max},
          {"min", r.summary.min},
          {"chosen", {{"n_rf", r.chosen.n_rf}, {"k_bag", r.chosen.k_bag}, {"hidden", r.chosen.hidden}}},
          {"fold_choices", folds}};
}

inline pipeline::CvResult from_json(const nlohmann::json& j) {
  pipeline::CvResult r;
  r.name = j.at("name").get<std::string>();
  r.fold_accuracies = j.at("fold_accuracies").get<std::vector<double>>();
  r.summary = {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("sem").get<double>(), j.at("max").get<double>(),
               j.at("min").get<double>()};
  const auto& c = j.at("chosen");
  r.chosen = {c.at("n_rf").get<int>(), c.at("k_bag").get<int>(), c.at("hidden").get<int>()};
  for (const auto& f : j.at("fold_choices"))
    r.fold_choices.push_back({f.at("n_rf").get<int>(), f.at("k_bag").get<int>(), f.at("hidden").get<int>()});
  return r;
}

inline std::vector<pipeline::CvResult> parse_structured(const std::string& doc) {
  std::vector<pipeline::CvResult> out;
  const auto parsed = nlohmann::json::parse(doc);
  for (const auto& j : parsed.at("results")) out.push_back(from_json(j));
  return out;
}

inline std::string render(const std::vector<pipeline::CvResult>& results, Format format) {
  std::ostringstream os;
  std::size_t folds = 0;
  for (const auto& r : results) folds = std::max(folds, r.fold_accuracies.size());

  switch (format) {
    case Format::Structured: {
      nlohmann::json doc = {{"results", nlohmann::json::array()}};
      for (const auto& r : results) doc["results"].push_back(to_json(r));
      os << doc.dump(2) << '\n';
      break;
    }
    case Format::Csv: {
      os << "name,mean,std,sem,max,min,n_rf,k_bag,hidden";
      for (std::size_t f = 0; f < folds; ++f) os << ",fold_" << f + 1;
      os << '\n';
      for (const auto& r : results) {
        os << csv_field(r.name) << ',' << fmt(r.summary.mean) << ',' << fmt(r.summary.std) << ',' << fmt(r.summary.sem) << ','
           << fmt(r.summary.max) << ',' << fmt(r.summary.min) << ',' << r.chosen.n_rf << ',' << r.chosen.k_bag << ','
           << r.chosen.hidden;
        for (std::size_t f = 0; f < folds; ++f) {
          os << ',';
          if (f < r.fold_accuracies.size()) os << fmt(r.fold_accuracies[f]);
        }
        os << '\n';
      }
      break;
    }
    case Format::Text: {
      os << std::left << std::setw(16) << "name" << std::right << std::setw(9) << "mean" << std::setw(9) << "std"
         << std::setw(9) << "sem" << std::setw(9) << "max" << std::setw(9) << "min" << "  n_rf/k_bag/hidden\n";
      os << std::fixed << std::setprecision(4);
      for (const auto& r : results) {
        os << std::left << std::setw(16) << r.name << std::right << std::setw(9) << r.summary.mean << std::setw(9)
           << r.summary.std << std::setw(9) << r.summary.sem << std::setw(9) << r.summary.max << std::setw(9) << r.summary.min
           << "  " << r.chosen.n_rf << '/' << r.chosen.k_bag << '/' << r.chosen.hidden << '\n';
        os << "  folds:";
        for (double a : r.fold_accuracies) os << ' ' << a;
        os << '\n';
      }
      break;
    }
  }
  return os.str();
}

}  // namespace isbci::report
