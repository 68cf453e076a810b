#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vknow/corpus.hpp"
#include "vknow/evalkit.hpp"

namespace vknow::analytics {

class ConstantVector : public Error {
 public:
  ConstantVector() : Error("pearson: input vector is constant") {}
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class TooFewModels : public Error {
 public:
  using Error::Error;
};

class ManifestMismatch : public Error {
 public:
  using Error::Error;
};

/// Sample Pearson correlation, clamped to [-1, 1].
double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct AccuracyMatrix {
  std::vector<std::string> models;
  std::vector<std::array<std::optional<double>, 8>> cells;  // indexed by corpus::index_of(Task)

  void add(std::string model, const std::array<std::optional<double>, 8>& row);
  void validate() const;
};

/// CSV with a header naming a model column followed by task columns (any
/// order; extra columns such as Overall/WC/HC are ignored). "-" or an empty
/// cell means absent.
AccuracyMatrix parse_accuracy_csv(std::string_view text);
AccuracyMatrix load_accuracy_csv(const std::filesystem::path& path);

using CorrelationMatrix = std::array<std::array<double, 8>, 8>;

enum class Deletion { pairwise, listwise };

/// Each cell needs at least 3 models with both tasks present.
CorrelationMatrix correlation_matrix(const AccuracyMatrix& m, Deletion deletion = Deletion::pairwise);

struct ClusterSeparation {
  double within = 0;  // mean r over same-group task pairs
  double cross = 0;   // mean r over world/human pairs
};

ClusterSeparation cluster_separation(const CorrelationMatrix& c);

std::string correlation_csv(const CorrelationMatrix& c);

enum class ReportFormat { markdown, csv, json };
ReportFormat parse_report_format(std::string_view s);

struct ReportRow {
  std::string name;
  evalkit::AggregateReport aggregates;
};

/// Columns: Overall, IP, OA, OM, SA, WC, EA, MS, SR, SI, HC. Markdown and CSV
/// cells are rounded half-up to one decimal; JSON keeps raw values.
std::string render_report(const std::vector<ReportRow>& rows, ReportFormat format);
void write_report(const std::vector<ReportRow>& rows, ReportFormat format, const std::filesystem::path& path);

struct FlipCounts {
  std::size_t both_correct = 0;
  std::size_t a_only = 0;  // correct in a, wrong in b
  std::size_t b_only = 0;
  std::size_t both_wrong = 0;
};

struct RunComparison {
  std::map<corpus::Task, double> per_task_delta;  // b - a, percentage points
  std::optional<double> overall_delta, wc_delta, hc_delta;
  FlipCounts flips;
  std::map<corpus::Task, FlipCounts> per_task_flips;  // filled when a manifest is supplied
};

/// Throws ManifestMismatch when the runs were not made on the same items.
RunComparison compare_runs(const evalkit::EvalRun& a, const evalkit::EvalRun& b,
                           const corpus::Manifest* manifest = nullptr);

nlohmann::ordered_json to_json(const RunComparison& c);

}  // namespace vknow::analytics
