#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bison/experiment.hpp"

namespace bison {

// Raised when an output file cannot be written; path() names it.
class ReportError : public std::runtime_error {
 public:
  ReportError(std::filesystem::path path, const std::string& message)
      : std::runtime_error(path.string() + ": " + message), path_(std::move(path)) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Writes results.json, accuracy_matrix_<cell>.csv, confusion_<cell>.csv,
// summary.csv and interplay.svg into outdir. Returns the files written.
std::vector<std::filesystem::path> emit_report(const RunReport& report, const std::filesystem::path& outdir);

// Decimal rendering that parses back to the same double.
std::string format_double(double v);

// after_task,task_1,...,task_T; one row per task then an upper_bound row.
// Undefined entries are empty.
std::string accuracy_csv(const AccuracyMatrix& a);
AccuracyMatrix parse_accuracy_csv(const std::string& text);

// true_class,pred_0,...,pred_{C-1}; raw counts.
std::string confusion_csv(const ConfusionMatrix& m);
ConfusionMatrix parse_confusion_csv(const std::string& text);

// method,capacity,runs,aa_mean,aa_std,af_mean,af_std,ai_mean,ai_std
std::string summary_csv(const std::vector<Aggregate>& aggregates);
std::vector<Aggregate> parse_summary_csv(const std::string& text);

// AF against AI, one marker per (method, capacity), colored by AA bucket.
std::string interplay_svg(const std::vector<Aggregate>& aggregates);

}  // namespace bison
