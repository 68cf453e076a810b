#include "vknow/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vknow::analytics {

using corpus::Task;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw LengthMismatch("pearson: lengths differ (" + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw LengthMismatch("pearson: need at least 2 observations");
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw ConstantVector();
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

void AccuracyMatrix::add(std::string model, const std::array<std::optional<double>, 8>& row) {
  models.push_back(std::move(model));
  cells.push_back(row);
}

void AccuracyMatrix::validate() const {
  if (models.size() != cells.size()) throw Error("accuracy matrix: row count mismatch");
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (const auto& c : cells[r]) {
      if (c && !(*c >= 0.0 && *c <= 100.0)) {
        throw ValidationError(models[r], "accuracy " + std::to_string(*c) + " outside [0, 100]");
      }
    }
  }
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

}  // namespace

AccuracyMatrix parse_accuracy_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::optional<Task>> columns;
  bool have_header = false;
  AccuracyMatrix m;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (!have_header) {
      for (std::size_t i = 1; i < fields.size(); ++i) {
        try {
          columns.push_back(corpus::parse_task(fields[i]));
        } catch (const Error&) {
          columns.push_back(std::nullopt);
        }
      }
      if (std::none_of(columns.begin(), columns.end(), [](const auto& c) { return c.has_value(); })) {
        throw ParseError(lineno, "header names no task columns");
      }
      have_header = true;
      continue;
    }
    if (fields.size() != columns.size() + 1) {
      throw ParseError(lineno, "expected " + std::to_string(columns.size() + 1) + " fields, got " +
                                   std::to_string(fields.size()));
    }
    std::array<std::optional<double>, 8> row{};
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (!columns[i]) continue;
      const std::string& cell = fields[i + 1];
      if (cell.empty() || cell == "-") continue;
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        row[corpus::index_of(*columns[i])] = v;
      } catch (const std::exception&) {
        throw ParseError(lineno, "not a number: '" + cell + "'");
      }
    }
    m.add(fields[0], row);
  }
  m.validate();
  return m;
}

AccuracyMatrix load_accuracy_csv(const std::filesystem::path& path) { return parse_accuracy_csv(read_file(path)); }

CorrelationMatrix correlation_matrix(const AccuracyMatrix& m, Deletion deletion) {
  m.validate();
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < m.cells.size(); ++r) {
    const bool complete = std::all_of(m.cells[r].begin(), m.cells[r].end(), [](const auto& c) { return c.has_value(); });
    if (deletion == Deletion::pairwise || complete) rows.push_back(r);
  }

  CorrelationMatrix out{};
  for (std::size_t i = 0; i < 8; ++i) {
    out[i][i] = 1.0;
    for (std::size_t j = i + 1; j < 8; ++j) {
      std::vector<double> x, y;
      for (std::size_t r : rows) {
        if (m.cells[r][i] && m.cells[r][j]) {
          x.push_back(*m.cells[r][i]);
          y.push_back(*m.cells[r][j]);
        }
      }
      if (x.size() < 3) {
        throw TooFewModels("tasks " + std::string(corpus::to_string(corpus::kAllTasks[i])) + "/" +
                           std::string(corpus::to_string(corpus::kAllTasks[j])) + " share only " +
                           std::to_string(x.size()) + " model(s); at least 3 are required");
      }
      out[i][j] = out[j][i] = pearson(x, y);
    }
  }
  return out;
}

ClusterSeparation cluster_separation(const CorrelationMatrix& c) {
  double within = 0, cross = 0;
  int nw = 0, nc = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = i + 1; j < 8; ++j) {
      if (corpus::group_of(corpus::kAllTasks[i]) == corpus::group_of(corpus::kAllTasks[j])) {
        within += c[i][j];
        ++nw;
      } else {
        cross += c[i][j];
        ++nc;
      }
    }
  }
  return {within / nw, cross / nc};
}

namespace {

std::string fixed(double v, int prec) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

std::string cell1(std::optional<double> v) { return v ? fixed(evalkit::round1(*v), 1) : "-"; }

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

const std::array<std::string_view, 11> kColumns = {"Overall", "IP", "OA", "OM", "SA", "WC",
                                                   "EA",      "MS", "SR", "SI", "HC"};

std::array<std::optional<double>, 11> row_values(const evalkit::AggregateReport& a) {
  auto task = [&](Task t) -> std::optional<double> {
    auto it = a.per_task.find(t);
    return it == a.per_task.end() ? std::nullopt : std::optional<double>(it->second);
  };
  return {a.overall,       task(Task::IP), task(Task::OA), task(Task::OM), task(Task::SA), a.wc,
          task(Task::EA), task(Task::MS), task(Task::SR), task(Task::SI), a.hc};
}

}  // namespace

std::string correlation_csv(const CorrelationMatrix& c) {
  std::string out = "task";
  for (Task t : corpus::kAllTasks) out += "," + std::string(corpus::to_string(t));
  out += "\n";
  for (std::size_t i = 0; i < 8; ++i) {
    out += corpus::to_string(corpus::kAllTasks[i]);
    for (std::size_t j = 0; j < 8; ++j) out += "," + fixed(c[i][j], 6);
    out += "\n";
  }
  return out;
}

ReportFormat parse_report_format(std::string_view s) {
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw Error("unknown report format '" + std::string(s) + "'");
}

std::string render_report(const std::vector<ReportRow>& rows, ReportFormat format) {
  std::string out;
  switch (format) {
    case ReportFormat::markdown: {
      out = "| Model |";
      std::string rule = "|---|";
      for (auto c : kColumns) {
        out += " " + std::string(c) + " |";
        rule += "---:|";
      }
      out += "\n" + rule + "\n";
      for (const auto& r : rows) {
        std::string name = r.name;
        std::replace(name.begin(), name.end(), '|', '/');
        out += "| " + name + " |";
        for (const auto& v : row_values(r.aggregates)) out += " " + cell1(v) + " |";
        out += "\n";
      }
      break;
    }
    case ReportFormat::csv: {
      out = "model";
      for (auto c : kColumns) out += "," + std::string(c);
      out += "\n";
      for (const auto& r : rows) {
        out += csv_escape(r.name);
        for (const auto& v : row_values(r.aggregates)) out += "," + cell1(v);
        out += "\n";
      }
      break;
    }
    case ReportFormat::json: {
      ojson arr = ojson::array();
      for (const auto& r : rows) {
        ojson e;
        e["model"] = r.name;
        e["aggregates"] = evalkit::to_json(r.aggregates);
        arr.push_back(std::move(e));
      }
      ojson j;
      j["columns"] = kColumns;
      j["rows"] = std::move(arr);
      out = j.dump(2) + "\n";
      break;
    }
  }
  return out;
}

void write_report(const std::vector<ReportRow>& rows, ReportFormat format, const std::filesystem::path& path) {
  write_file_atomic(path, render_report(rows, format));
}

namespace {

void tally(FlipCounts& f, bool a, bool b) {
  if (a && b) ++f.both_correct;
  else if (a) ++f.a_only;
  else if (b) ++f.b_only;
  else ++f.both_wrong;
}

std::optional<double> delta(std::optional<double> a, std::optional<double> b) {
  if (!a || !b) return std::nullopt;
  return *b - *a;
}

ojson flips_json(const FlipCounts& f) {
  ojson j;
  j["both_correct"] = f.both_correct;
  j["a_only"] = f.a_only;
  j["b_only"] = f.b_only;
  j["both_wrong"] = f.both_wrong;
  return j;
}

}  // namespace

RunComparison compare_runs(const evalkit::EvalRun& a, const evalkit::EvalRun& b, const corpus::Manifest* manifest) {
  if (a.manifest_fingerprint != b.manifest_fingerprint) {
    throw ManifestMismatch("runs were evaluated on different manifests (" + a.manifest_fingerprint.substr(0, 12) +
                           " vs " + b.manifest_fingerprint.substr(0, 12) + ")");
  }
  std::map<std::string, bool> b_correct;
  for (const auto& r : b.results) b_correct[r.item_id] = r.correct;
  if (b_correct.size() != a.results.size()) throw ManifestMismatch("runs cover different item sets");

  std::map<std::string, Task> dims;
  if (manifest) {
    if (evalkit::manifest_fingerprint(*manifest) != a.manifest_fingerprint) {
      throw ManifestMismatch("supplied manifest does not match the runs");
    }
    for (const auto& it : manifest->items) dims.emplace(it.id, it.dimension);
  }

  RunComparison c;
  for (const auto& r : a.results) {
    auto it = b_correct.find(r.item_id);
    if (it == b_correct.end()) throw ManifestMismatch("item '" + r.item_id + "' missing from the second run");
    tally(c.flips, r.correct, it->second);
    if (manifest) tally(c.per_task_flips[dims.at(r.item_id)], r.correct, it->second);
  }
  for (const auto& [task, acc] : a.aggregates.per_task) {
    auto it = b.aggregates.per_task.find(task);
    if (it != b.aggregates.per_task.end()) c.per_task_delta[task] = it->second - acc;
  }
  c.overall_delta = delta(a.aggregates.overall, b.aggregates.overall);
  c.wc_delta = delta(a.aggregates.wc, b.aggregates.wc);
  c.hc_delta = delta(a.aggregates.hc, b.aggregates.hc);
  return c;
}

ojson to_json(const RunComparison& c) {
  ojson per_task = ojson::object();
  for (Task t : corpus::kAllTasks) {
    auto it = c.per_task_delta.find(t);
    if (it != c.per_task_delta.end()) per_task[std::string(corpus::to_string(t))] = it->second;
  }
  auto opt = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
  ojson j;
  j["overall_delta"] = opt(c.overall_delta);
  j["wc_delta"] = opt(c.wc_delta);
  j["hc_delta"] = opt(c.hc_delta);
  j["per_task_delta"] = std::move(per_task);
  j["flips"] = flips_json(c.flips);
  if (!c.per_task_flips.empty()) {
    ojson pf = ojson::object();
    for (const auto& [t, f] : c.per_task_flips) pf[std::string(corpus::to_string(t))] = flips_json(f);
    j["per_task_flips"] = std::move(pf);
  }
  return j;
}

}  // namespace vknow::analytics
