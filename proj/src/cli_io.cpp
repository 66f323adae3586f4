#include "dyadperm/cli_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dyadperm/error.hpp"
#include "dyadperm/perm_engine.hpp"
#include "dyadperm/regress.hpp"
#include "dyadperm/rng.hpp"
#include "dyadperm/ustat.hpp"

namespace dyadperm {

namespace {

using nlohmann::ordered_json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorCode::ParseError, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string file_stem(const std::string& path) {
  const auto slash = path.find_last_of("/\\");
  std::string name =
      slash == std::string::npos ? path : path.substr(slash + 1);
  const auto dot = name.find_last_of('.');
  if (dot != std::string::npos && dot > 0) name = name.substr(0, dot);
  return name;
}

std::string trimmed(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> nonempty_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trimmed(line).empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trimmed(cell));
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

bool parse_double_cell(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  char* end = nullptr;
  out = std::strtod(cell.c_str(), &end);
  return end == cell.c_str() + cell.size();
}

bool parse_index_cell(const std::string& cell, int& out) {
  if (cell.empty()) return false;
  char* end = nullptr;
  const long v = std::strtol(cell.c_str(), &end, 10);
  if (end != cell.c_str() + cell.size()) return false;
  if (v < 1 || v > 1000000) return false;
  out = static_cast<int>(v);
  return true;
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t row,
                             const std::string& what) {
  fail(ErrorCode::ParseError,
       path + ", row " + std::to_string(row) + ": " + what);
}

std::string correction_name(Eta1Correction c) {
  switch (c) {
    case Eta1Correction::Auto:
      return "auto";
    case Eta1Correction::Sen:
      return "sen";
    case Eta1Correction::Plain:
      return "plain";
  }
  return "unknown";
}

// ---------- enum token parsing (config values and CLI flags) ----------

FeatureModel parse_feature_model(const std::string& s) {
  if (s == "circle-uv") return FeatureModel::CircleUV;
  if (s == "sinh-cos") return FeatureModel::SinhCos;
  if (s == "iid-bivariate-normal") return FeatureModel::IidBivariateNormal;
  if (s == "bivariate-normal-product")
    return FeatureModel::BivariateNormalProduct;
  fail(ErrorCode::ParseError, "unknown spec '" + s + "'");
}

StatKind parse_stat_kind(const std::string& s) {
  if (s == "plain" || s == "unstudentized") return StatKind::Unstudentized;
  if (s == "studentized") return StatKind::Studentized;
  if (s == "coef" || s == "coef-norm") return StatKind::CoefNorm;
  if (s == "wald") return StatKind::Wald;
  fail(ErrorCode::ParseError, "unknown statistic '" + s + "'");
}

Strategy parse_strategy(const std::string& s) {
  if (s == "a" || s == "permute-outcome") return Strategy::PermuteOutcome;
  if (s == "b" || s == "permute-focal") return Strategy::PermuteFocal;
  if (s == "eps-b" || s == "permute-residual-focal")
    return Strategy::PermuteResidualFocal;
  if (s == "eps" || s == "permute-residual-outcome")
    return Strategy::PermuteResidualOutcome;
  fail(ErrorCode::ParseError, "unknown strategy '" + s + "'");
}

Eta1Correction parse_correction(const std::string& s) {
  if (s == "auto") return Eta1Correction::Auto;
  if (s == "sen") return Eta1Correction::Sen;
  if (s == "plain") return Eta1Correction::Plain;
  fail(ErrorCode::ParseError, "unknown correction '" + s + "'");
}

ExperimentLaw parse_law(const std::string& s) {
  if (s == "sampling") return ExperimentLaw::SamplingLaw;
  if (s == "permutation") return ExperimentLaw::PermutationLaw;
  fail(ErrorCode::ParseError, "unknown law '" + s + "'");
}

}  // namespace

std::string fnv1a64_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

LoadedMatrix parse_matrix_csv(const std::string& path) {
  const std::string raw = read_file(path);
  const std::vector<std::string> lines = nonempty_lines(raw);
  if (lines.empty()) fail(ErrorCode::ParseError, path + " is empty");

  std::vector<std::vector<std::string>> rows;
  rows.reserve(lines.size());
  for (const auto& line : lines) rows.push_back(split_cells(line));

  double ignored;
  const auto header_row = [&](const std::vector<std::string>& cells) {
    // a leading label with numeric remainder is a labeled data row
    for (const auto& c : cells)
      if (parse_double_cell(c, ignored)) return false;
    return true;
  };

  std::vector<std::string> labels;
  std::size_t first_data = 0;
  if (header_row(rows[0])) {
    labels = rows[0];
    first_data = 1;
    if (rows.size() < 2)
      fail(ErrorCode::ParseError, path + " has a header but no data rows");
  }

  const std::size_t n = rows.size() - first_data;
  const bool row_labeled =
      first_data < rows.size() && !rows[first_data].empty() &&
      !parse_double_cell(rows[first_data][0], ignored);
  const std::size_t expected = n + (row_labeled ? 1 : 0);

  if (!labels.empty()) {
    // header may carry a corner token ahead of the unit labels
    if (labels.size() == n + 1)
      labels.erase(labels.begin());
    else if (labels.size() != n)
      parse_fail(path, 1,
                 "header has " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " data rows");
  }

  std::vector<double> cells(n * n, 0.0);
  std::vector<std::string> row_labels;
  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = rows[first_data + r];
    const std::size_t file_row = first_data + r + 1;
    if (row.size() != expected)
      parse_fail(path, file_row,
                 "has " + std::to_string(row.size()) + " cells, expected " +
                     std::to_string(expected));
    if (row_labeled) {
      if (parse_double_cell(row[0], ignored))
        parse_fail(path, file_row, "expected a row label, found a number");
      row_labels.push_back(row[0]);
    }
    for (std::size_t c = 0; c < n; ++c) {
      const std::string& cell = row[c + (row_labeled ? 1 : 0)];
      double v;
      if (!parse_double_cell(cell, v))
        parse_fail(path, file_row,
                   "column " + std::to_string(c + 1) + ": '" + cell +
                       "' is not a number");
      cells[r * n + c] = v;
    }
  }

  if (!labels.empty() && !row_labels.empty() && labels != row_labels)
    fail(ErrorCode::ParseError,
         path + ": row labels disagree with the header");
  if (labels.empty()) labels = row_labels;

  LoadedMatrix out;
  out.matrix = new_dyad_matrix(static_cast<int>(n), std::move(cells));
  out.labels = std::move(labels);
  out.source = file_stem(path);
  out.digest = fnv1a64_hex(raw);
  return out;
}

LoadedMatrix parse_edge_list(const std::string& path,
                             std::optional<int> n_declared) {
  const std::string raw = read_file(path);
  const std::vector<std::string> lines = nonempty_lines(raw);
  if (lines.empty())
    fail(ErrorCode::ParseError, path + " is empty");
  if (n_declared && *n_declared < 1)
    fail(ErrorCode::UsageError, "declared n must be positive");

  struct Edge {
    int i, j;
    double w;
  };
  std::vector<Edge> edges;
  std::map<std::string, int> label_index;
  std::vector<std::string> labels;
  bool labeled = false;

  for (std::size_t r = 0; r < lines.size(); ++r) {
    const auto cells = split_cells(lines[r]);
    if (cells.size() != 3)
      parse_fail(path, r + 1, "expected 'i,j,weight'");
    double w;
    if (!parse_double_cell(cells[2], w))
      parse_fail(path, r + 1, "weight '" + cells[2] + "' is not a number");

    int ij[2];
    const bool numeric = parse_index_cell(cells[0], ij[0]) &&
                         parse_index_cell(cells[1], ij[1]);
    if (r == 0) labeled = !numeric;
    if (!labeled && !numeric)
      parse_fail(path, r + 1, "endpoints must be 1-based unit indices");
    if (labeled) {
      for (int k = 0; k < 2; ++k) {
        const std::string& lab = cells[k];
        auto it = label_index.find(lab);
        if (it == label_index.end()) {
          if (n_declared &&
              static_cast<int>(labels.size()) >= *n_declared)
            fail(ErrorCode::UnknownLabel,
                 "'" + lab + "' beyond the declared " +
                     std::to_string(*n_declared) + " units");
          it = label_index.emplace(lab, static_cast<int>(labels.size()) + 1)
                   .first;
          labels.push_back(lab);
        }
        ij[k] = it->second;
      }
    } else if (n_declared && (ij[0] > *n_declared || ij[1] > *n_declared)) {
      fail(ErrorCode::UnknownLabel,
           "unit index " + std::to_string(std::max(ij[0], ij[1])) +
               " beyond the declared " + std::to_string(*n_declared) +
               " units");
    }
    edges.push_back({ij[0], ij[1], w});
  }

  int n = 0;
  if (n_declared) {
    n = *n_declared;
  } else if (labeled) {
    n = static_cast<int>(labels.size());
  } else {
    for (const Edge& e : edges) n = std::max({n, e.i, e.j});
  }
  if (labeled)
    while (static_cast<int>(labels.size()) < n)
      labels.push_back("unit" + std::to_string(labels.size() + 1));

  std::vector<double> cells(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<char> seen(static_cast<std::size_t>(n) * n, 0);
  for (const Edge& e : edges) {
    if (e.i == e.j) {
      if (e.w != 0.0)
        fail(ErrorCode::SelfLoop,
             "unit " + std::to_string(e.i) +
                 " has a nonzero self weight");
      continue;
    }
    const std::size_t fwd =
        static_cast<std::size_t>(e.i - 1) * n + (e.j - 1);
    const std::size_t rev =
        static_cast<std::size_t>(e.j - 1) * n + (e.i - 1);
    if (seen[fwd]) {
      if (std::abs(cells[fwd] - e.w) > 1e-9)
        fail(ErrorCode::ConflictingDuplicateEdge,
             "(" + std::to_string(e.i) + "," +
                 std::to_string(e.j) + ") listed with weights " +
                 std::to_string(cells[fwd]) + " and " + std::to_string(e.w));
      continue;
    }
    cells[fwd] = cells[rev] = e.w;
    seen[fwd] = seen[rev] = 1;
  }

  LoadedMatrix out;
  out.matrix = new_dyad_matrix(n, std::move(cells));
  if (labeled) out.labels = std::move(labels);
  out.source = file_stem(path);
  out.digest = fnv1a64_hex(raw);
  return out;
}

namespace {

std::string format_double(double v) {
  if (!std::isfinite(v))
    fail(ErrorCode::NonFiniteEntry,
         "report value is not finite");
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_matrix_csv(const std::string& path, const DyadMatrix& m,
                      const std::vector<std::string>& labels) {
  const int n = m.n();
  if (!labels.empty() && static_cast<int>(labels.size()) != n)
    fail(ErrorCode::DimensionMismatch,
         "label count does not match matrix size");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::ParseError, "cannot write '" + path + "'");
  if (!labels.empty()) {
    out << "id";
    for (const auto& lab : labels) out << ',' << lab;
    out << '\n';
  }
  for (int i = 0; i < n; ++i) {
    if (!labels.empty()) out << labels[static_cast<std::size_t>(i)] << ',';
    for (int j = 0; j < n; ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

namespace {

void render_value(const ordered_json& v, std::string& out, int indent) {
  const std::string pad(static_cast<std::size_t>(indent), ' ');
  const std::string inner(static_cast<std::size_t>(indent) + 2, ' ');
  switch (v.type()) {
    case nlohmann::json::value_t::object: {
      if (v.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      std::size_t k = 0;
      for (const auto& item : v.items()) {
        out += inner;
        out += ordered_json(item.key()).dump();
        out += ": ";
        render_value(item.value(), out, indent + 2);
        if (++k < v.size()) out += ',';
        out += '\n';
      }
      out += pad + "}";
      return;
    }
    case nlohmann::json::value_t::array: {
      if (v.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      for (std::size_t k = 0; k < v.size(); ++k) {
        out += inner;
        render_value(v[k], out, indent + 2);
        if (k + 1 < v.size()) out += ',';
        out += '\n';
      }
      out += pad + "]";
      return;
    }
    case nlohmann::json::value_t::string:
      out += v.dump();
      return;
    case nlohmann::json::value_t::boolean:
      out += v.get<bool>() ? "true" : "false";
      return;
    case nlohmann::json::value_t::number_integer:
      out += std::to_string(v.get<std::int64_t>());
      return;
    case nlohmann::json::value_t::number_unsigned:
      out += std::to_string(v.get<std::uint64_t>());
      return;
    case nlohmann::json::value_t::number_float:
      out += format_double(v.get<double>());
      return;
    case nlohmann::json::value_t::null:
      out += "null";
      return;
    default:
      fail(ErrorCode::ParseError,
           "unsupported value type in report");
  }
}

}  // namespace

std::string render_report(const ordered_json& doc) {
  std::string out;
  render_value(doc, out, 0);
  out += '\n';
  return out;
}

nlohmann::ordered_json histogram_json(const std::vector<double>& values) {
  ordered_json h;
  if (values.empty()) {
    h["bin_edges"] = ordered_json::array();
    h["counts"] = ordered_json::array();
    return h;
  }
  std::vector<double> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  const double lo = sorted.front(), hi = sorted.back();

  int bins = 1;
  if (hi > lo) {
    const auto quantile = [&](double p) {
      const double pos = p * static_cast<double>(m - 1);
      const std::size_t k = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(k);
      return k + 1 < m ? sorted[k] + frac * (sorted[k + 1] - sorted[k])
                       : sorted[k];
    };
    double width = 2.0 * (quantile(0.75) - quantile(0.25)) /
                   std::cbrt(static_cast<double>(m));
    if (!(width > 0.0))
      width = (hi - lo) / std::ceil(std::sqrt(static_cast<double>(m)));
    bins = static_cast<int>(
        std::clamp(std::ceil((hi - lo) / width), 1.0, 512.0));
  }

  const double lo_edge = hi > lo ? lo : lo - 0.5;
  const double hi_edge = hi > lo ? hi : hi + 0.5;
  const double width = (hi_edge - lo_edge) / bins;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(bins), 0);
  for (double x : sorted) {
    const int k = std::min(
        bins - 1, static_cast<int>((x - lo_edge) / width));
    ++counts[static_cast<std::size_t>(std::max(0, k))];
  }
  ordered_json edges = ordered_json::array();
  for (int k = 0; k <= bins; ++k)
    edges.push_back(k == bins ? hi_edge : lo_edge + k * width);
  h["bin_edges"] = std::move(edges);
  h["counts"] = counts;
  return h;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("config: ") + e.what());
  }
  if (!doc.is_object())
    fail(ErrorCode::ParseError, "config must be a JSON object");

  static const std::set<std::string> allowed{
      "spec",     "params",     "law",    "n",     "datasets", "statistic",
      "strategy", "inner_reps", "alphas", "seed",  "correction"};
  for (const auto& item : doc.items())
    if (!allowed.count(item.key()))
      fail(ErrorCode::ParseError,
           "unknown config key '" + item.key() + "'");

  const auto require_int = [&](const char* key, const ordered_json& v) {
    if (!v.is_number_integer() && !v.is_number_unsigned())
      fail(ErrorCode::ParseError,
           std::string("config key '") + key +
               "' must be an integer");
    return v.get<std::int64_t>();
  };
  const auto require_string = [&](const char* key, const ordered_json& v) {
    if (!v.is_string())
      fail(ErrorCode::ParseError, std::string("config key '") +
                                      key + "' must be a string");
    return v.get<std::string>();
  };

  if (!doc.contains("spec"))
    fail(ErrorCode::ParseError, "config needs a 'spec' key");
  if (!doc.contains("n"))
    fail(ErrorCode::ParseError, "config needs an 'n' key");

  ExperimentConfig config;
  config.spec.feature_model =
      parse_feature_model(require_string("spec", doc["spec"]));
  if (doc.contains("params")) {
    if (!doc["params"].is_object())
      fail(ErrorCode::ParseError,
           "config key 'params' must be an object");
    for (const auto& item : doc["params"].items()) {
      if (!item.value().is_number())
        fail(ErrorCode::ParseError,
             "param '" + item.key() + "' must be a number");
      config.spec.params[item.key()] = item.value().get<double>();
    }
  }
  if (doc.contains("law"))
    config.law = parse_law(require_string("law", doc["law"]));
  config.n = static_cast<int>(require_int("n", doc["n"]));
  if (doc.contains("datasets"))
    config.datasets = static_cast<int>(require_int("datasets", doc["datasets"]));
  if (doc.contains("statistic"))
    config.statistic =
        parse_stat_kind(require_string("statistic", doc["statistic"]));
  if (doc.contains("strategy"))
    config.strategy =
        parse_strategy(require_string("strategy", doc["strategy"]));
  if (doc.contains("inner_reps"))
    config.inner_reps =
        static_cast<int>(require_int("inner_reps", doc["inner_reps"]));
  if (doc.contains("alphas")) {
    if (!doc["alphas"].is_array())
      fail(ErrorCode::ParseError,
           "config key 'alphas' must be an array");
    config.alphas.clear();
    for (const auto& a : doc["alphas"]) {
      if (!a.is_number())
        fail(ErrorCode::ParseError,
             "rejection levels must be numbers");
      config.alphas.push_back(a.get<double>());
    }
  }
  if (doc.contains("seed")) {
    const std::int64_t s = require_int("seed", doc["seed"]);
    if (s < 0)
      fail(ErrorCode::ParseError,
           "config key 'seed' must be nonnegative");
    config.seed = doc["seed"].get<std::uint64_t>();
  }
  if (doc.contains("correction"))
    config.correction =
        parse_correction(require_string("correction", doc["correction"]));
  return config;
}

namespace {

// ---------- report fragments ----------

ordered_json input_json(const LoadedMatrix& lm, const std::string& path) {
  ordered_json j;
  j["path"] = path;
  j["digest"] = lm.digest;
  j["n"] = lm.matrix.n();
  if (!lm.labels.empty()) j["labels"] = lm.labels;
  return j;
}

ordered_json permutation_json(const PermutationReport& rep) {
  ordered_json j;
  j["mode"] = sampling_mode_name(rep.mode);
  j["n_reps"] = rep.n_reps;
  j["strategy"] = strategy_name(rep.strategy);
  j["tail"] = tail_name(rep.tail);
  j["observed"] = rep.observed;
  j["p_value"] = rep.p_value;
  j["seed"] = rep.seed;
  j["rng_algorithm"] = rep.rng_algorithm;
  j["warnings"] = rep.warnings;
  return j;
}

ordered_json estimates_json(const UStatEstimates& est) {
  ordered_json j;
  j["n"] = est.n;
  j["correction"] = correction_name(est.correction);
  j["phi0_hat"] = est.phi0_hat;
  j["eta2_alpha_hat"] = est.eta2_alpha_hat;
  j["eta2_beta_hat"] = est.eta2_beta_hat;
  j["eta1_phi_hat"] = est.eta1_phi_hat;
  j["rho_hat"] = est.rho_hat;
  j["v_hat"] = est.v_hat;
  return j;
}

ordered_json matrix_json(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

ordered_json fit_json(const DyadFit& fit,
                      const std::vector<std::string>& names) {
  ordered_json j;
  j["n"] = fit.n;
  j["p"] = fit.p;
  j["q"] = fit.q;
  j["correction"] = correction_name(fit.correction);
  j["intercept"] = fit.intercept;
  ordered_json coefs = ordered_json::array();
  for (int k = 0; k < fit.p + fit.q; ++k) {
    ordered_json c;
    c["name"] = names[static_cast<std::size_t>(k)];
    c["role"] = k < fit.p ? "focal" : "nuisance";
    c["estimate"] = fit.coef(k);
    c["std_error"] = std::sqrt(fit.v_hat(k, k) / fit.n);
    coefs.push_back(std::move(c));
  }
  j["coefficients"] = std::move(coefs);
  j["v_hat"] = matrix_json(fit.v_hat);
  return j;
}

ordered_json reference_json(const ReferenceLaw& law) {
  ordered_json j;
  if (law.kind == LawKind::Normal) {
    j["kind"] = "normal";
    j["mean"] = law.mean;
    j["variance"] = law.variance;
  } else {
    j["kind"] = "chi-square";
    j["df"] = law.df;
  }
  return j;
}

// ---------- subcommand drivers ----------

struct IngestOpts {
  bool edges = false;
  int n_declared = 0;  // 0 means not declared
};

LoadedMatrix load_input(const std::string& path, const IngestOpts& opts) {
  if (opts.edges)
    return parse_edge_list(path, opts.n_declared > 0
                                     ? std::optional<int>(opts.n_declared)
                                     : std::nullopt);
  return parse_matrix_csv(path);
}

ordered_json report_head(const char* command) {
  ordered_json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["tool"] = ordered_json{{"name", kToolName}, {"version", kToolVersion}};
  doc["command"] = command;
  return doc;
}

void emit_report(ordered_json doc, const std::string& out_path, bool timing,
                 double seconds) {
  if (timing)
    doc["timing"] = ordered_json{{"seconds", seconds}};
  const std::string text = render_report(doc);
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out)
    fail(ErrorCode::ParseError,
         "cannot write '" + out_path + "'");
  out << text;
}

struct QapArgs {
  std::string a, b, statistic = "studentized", correction = "auto", out;
  int reps = 999;
  std::uint64_t seed = 0;
  IngestOpts ingest;
  bool timing = false;
};

// Engine diagnostics locate inputs positionally ("first matrix", "outcome
// matrix"); only the CLI knows the file names, so it appends the mapping.
[[noreturn]] void rethrow_with_inputs(const DyadError& e,
                                      const std::string& context) {
  std::string text = e.what();
  const std::string prefix = std::string(error_name(e.code())) + ": ";
  if (text.rfind(prefix, 0) == 0) text.erase(0, prefix.size());
  fail(e.code(), text + " [" + context + "]");
}

std::string design_context(const std::string& a,
                           const std::vector<std::string>& b,
                           const std::vector<std::string>& c) {
  std::string text = "outcome: " + a + ", focal:";
  for (const std::string& path : b) text += " " + path;
  if (!c.empty()) {
    text += ", nuisance:";
    for (const std::string& path : c) text += " " + path;
  }
  return text;
}

int run_qap_command(const QapArgs& args) {
  const auto t0 = std::chrono::steady_clock::now();
  const LoadedMatrix a = load_input(args.a, args.ingest);
  const LoadedMatrix b = load_input(args.b, args.ingest);
  const Eta1Correction corr = parse_correction(args.correction);
  const StatKind kind = parse_stat_kind(args.statistic);
  if (kind != StatKind::Unstudentized && kind != StatKind::Studentized)
    fail(ErrorCode::UsageError,
         "qap accepts --statistic plain|studentized");
  const QapStatistic stat = kind == StatKind::Unstudentized
                                ? QapStatistic::Unstudentized
                                : QapStatistic::Studentized;

  UStatEstimates est;
  PermutationReport rep;
  try {
    est = qap_estimates(a.matrix, b.matrix, corr);
    rep = run_qap(a.matrix, b.matrix, stat, args.reps, args.seed, corr);
  } catch (const DyadError& e) {
    rethrow_with_inputs(
        e, "first matrix: " + args.a + ", second matrix: " + args.b);
  }

  ordered_json doc = report_head("qap");
  doc["inputs"] =
      ordered_json{{"a", input_json(a, args.a)}, {"b", input_json(b, args.b)}};
  doc["options"] = ordered_json{{"statistic", stat_kind_name(kind)},
                                {"reps", args.reps},
                                {"seed", args.seed},
                                {"eta1_correction", args.correction}};
  ordered_json result;
  result["estimates"] = estimates_json(est);
  result["permutation"] = permutation_json(rep);
  doc["result"] = std::move(result);
  doc["histogram"] = histogram_json(rep.replicates);

  const std::chrono::duration<double> dt =
      std::chrono::steady_clock::now() - t0;
  emit_report(std::move(doc), args.out, args.timing, dt.count());
  return 0;
}

struct MrqapArgs {
  std::string a, strategy = "b", statistic = "wald", correction = "auto", out;
  std::vector<std::string> b, c;
  int reps = 999;
  std::uint64_t seed = 0;
  IngestOpts ingest;
  bool timing = false;
};

struct LoadedDesign {
  DyadDesign design;
  LoadedMatrix outcome;
  std::vector<LoadedMatrix> focal, nuisance;
  std::vector<std::string> names;
};

LoadedDesign load_design(const std::string& a,
                         const std::vector<std::string>& b,
                         const std::vector<std::string>& c,
                         const IngestOpts& ingest) {
  LoadedDesign d;
  d.outcome = load_input(a, ingest);
  std::vector<DyadMatrix> focal, nuisance;
  for (const auto& path : b) {
    d.focal.push_back(load_input(path, ingest));
    focal.push_back(d.focal.back().matrix);
    d.names.push_back(d.focal.back().source);
  }
  for (const auto& path : c) {
    d.nuisance.push_back(load_input(path, ingest));
    nuisance.push_back(d.nuisance.back().matrix);
    d.names.push_back(d.nuisance.back().source);
  }
  try {
    d.design = make_dyad_design(d.outcome.matrix, std::move(focal),
                                std::move(nuisance));
  } catch (const DyadError& e) {
    rethrow_with_inputs(e, design_context(a, b, c));
  }
  return d;
}

ordered_json design_inputs_json(const LoadedDesign& d, const MrqapArgs& args) {
  ordered_json inputs;
  inputs["a"] = input_json(d.outcome, args.a);
  ordered_json focal = ordered_json::array();
  for (std::size_t k = 0; k < d.focal.size(); ++k)
    focal.push_back(input_json(d.focal[k], args.b[k]));
  inputs["b"] = std::move(focal);
  ordered_json nuisance = ordered_json::array();
  for (std::size_t k = 0; k < d.nuisance.size(); ++k)
    nuisance.push_back(input_json(d.nuisance[k], args.c[k]));
  inputs["c"] = std::move(nuisance);
  return inputs;
}

int run_mrqap_command(const MrqapArgs& args) {
  const auto t0 = std::chrono::steady_clock::now();
  const LoadedDesign d = load_design(args.a, args.b, args.c, args.ingest);
  const Eta1Correction corr = parse_correction(args.correction);
  const StatKind kind = parse_stat_kind(args.statistic);
  if (kind != StatKind::CoefNorm && kind != StatKind::Wald)
    fail(ErrorCode::UsageError,
         "mrqap accepts --statistic coef|wald");
  const MrqapStatistic stat = kind == StatKind::CoefNorm
                                  ? MrqapStatistic::CoefNorm
                                  : MrqapStatistic::Wald;
  const Strategy strategy = parse_strategy(args.strategy);

  DyadFit fit;
  PermutationReport rep;
  double wald_focal = 0.0;
  try {
    fit = fit_dyadic_ols(d.design, corr);
    wald_focal = wald_statistic(fit, WaldScope::FocalBlock);
    rep = run_mrqap(d.design, strategy, stat, args.reps, args.seed, corr);
  } catch (const DyadError& e) {
    rethrow_with_inputs(e, design_context(args.a, args.b, args.c));
  }

  ordered_json doc = report_head("mrqap");
  doc["inputs"] = design_inputs_json(d, args);
  doc["options"] = ordered_json{{"strategy", strategy_name(strategy)},
                                {"statistic", stat_kind_name(kind)},
                                {"reps", args.reps},
                                {"seed", args.seed},
                                {"eta1_correction", args.correction}};
  ordered_json result;
  result["fit"] = fit_json(fit, d.names);
  result["wald_focal_block"] = wald_focal;
  result["permutation"] = permutation_json(rep);
  doc["result"] = std::move(result);
  doc["histogram"] = histogram_json(rep.replicates);

  const std::chrono::duration<double> dt =
      std::chrono::steady_clock::now() - t0;
  emit_report(std::move(doc), args.out, args.timing, dt.count());
  return 0;
}

struct FitArgs {
  std::string a, correction = "auto", out;
  std::vector<std::string> b, c;
  IngestOpts ingest;
  bool timing = false;
};

int run_fit_command(const FitArgs& args) {
  const auto t0 = std::chrono::steady_clock::now();
  MrqapArgs shim;
  shim.a = args.a;
  shim.b = args.b;
  shim.c = args.c;
  const LoadedDesign d = load_design(args.a, args.b, args.c, args.ingest);
  const Eta1Correction corr = parse_correction(args.correction);

  DyadFit fit;
  double wald_all = 0.0, wald_focal = 0.0;
  bool have_identity = false;
  double factor = 0.0, gap = 0.0;
  try {
    fit = fit_dyadic_ols(d.design, corr);
    wald_all = wald_statistic(fit, WaldScope::AllCoefficients);
    wald_focal = wald_statistic(fit, WaldScope::FocalBlock);
    if (fit.correction == Eta1Correction::Sen) {
      const Eigen::MatrixXd lz = cluster_robust_variance(d.design, fit);
      const int k = fit.p + fit.q;
      const double n = fit.n;
      factor = 4.0 * n * n * (n - 1.0) / ((n - 2.0) * (n - 4.0));
      const Eigen::MatrixXd rescaled = factor * lz.bottomRightCorner(k, k);
      const double scale = fit.v_hat.cwiseAbs().maxCoeff();
      gap = scale > 0.0
                ? (rescaled - fit.v_hat).cwiseAbs().maxCoeff() / scale
                : 0.0;
      have_identity = true;
    }
  } catch (const DyadError& e) {
    rethrow_with_inputs(e, design_context(args.a, args.b, args.c));
  }

  ordered_json doc = report_head("fit");
  doc["inputs"] = design_inputs_json(d, shim);
  doc["options"] = ordered_json{{"eta1_correction", args.correction}};
  ordered_json result;
  result["fit"] = fit_json(fit, d.names);
  result["wald_all_coefficients"] = wald_all;
  result["wald_focal_block"] = wald_focal;
  if (have_identity)
    result["cluster_identity"] = ordered_json{{"factor", factor},
                                              {"max_relative_gap", gap}};
  doc["result"] = std::move(result);

  const std::chrono::duration<double> dt =
      std::chrono::steady_clock::now() - t0;
  emit_report(std::move(doc), args.out, args.timing, dt.count());
  return 0;
}

struct SimulateArgs {
  std::string config, out;
  bool timing = false;
};

int run_simulate_command(const SimulateArgs& args) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string text = read_file(args.config);
  const ExperimentConfig config = parse_experiment_config(text);
  const ExperimentSummary summary = run_experiment(config);

  ordered_json doc = report_head("simulate");
  doc["inputs"] = ordered_json{
      {"config",
       ordered_json{{"path", args.config}, {"digest", fnv1a64_hex(text)}}}};
  ordered_json options;
  options["spec"] = feature_model_name(config.spec.feature_model);
  if (!config.spec.params.empty()) {
    ordered_json params;
    for (const auto& [key, value] : config.spec.params) params[key] = value;
    options["params"] = std::move(params);
  }
  options["law"] = experiment_law_name(config.law);
  options["n"] = config.n;
  options["datasets"] = config.datasets;
  options["statistic"] = stat_kind_name(config.statistic);
  options["strategy"] = strategy_name(config.strategy);
  options["inner_reps"] = config.inner_reps;
  options["alphas"] = config.alphas;
  options["seed"] = config.seed;
  options["correction"] = correction_name(config.correction);
  doc["options"] = std::move(options);

  ordered_json result;
  result["n"] = summary.n;
  result["reps"] = summary.reps;
  result["statistic"] = stat_kind_name(summary.statistic);
  result["law"] = experiment_law_name(summary.law);
  result["reference"] = reference_json(summary.reference);
  result["sample_mean"] = summary.sample_mean;
  result["sample_variance"] = summary.sample_variance;
  result["ks_distance"] = summary.ks_distance;
  ordered_json rates = ordered_json::array();
  for (const auto& [alpha, rate] : summary.rejection_rate_at)
    rates.push_back(ordered_json{{"alpha", alpha}, {"rate", rate}});
  result["rejection_rate_at"] = std::move(rates);
  result["statistic_samples"] = summary.statistic_samples;
  doc["result"] = std::move(result);
  doc["histogram"] = histogram_json(summary.statistic_samples);

  const std::chrono::duration<double> dt =
      std::chrono::steady_clock::now() - t0;
  emit_report(std::move(doc), args.out, args.timing, dt.count());
  return 0;
}

struct VersionArgs {
  std::string out;
};

int run_version_command(const VersionArgs& args) {
  ordered_json doc = report_head("version");
  doc["rng_algorithm"] = kRngAlgorithm;
  emit_report(std::move(doc), args.out, false, 0.0);
  return 0;
}

void add_ingest_flags(CLI::App* cmd, IngestOpts& opts) {
  cmd->add_flag("--edges", opts.edges,
                "inputs are edge lists (i,j,weight) instead of matrices");
  cmd->add_option("--n", opts.n_declared,
                  "declared unit count for edge-list inputs")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) {
  CLI::App app{"Permutation inference for dyadic networks"};
  app.require_subcommand(1);

  QapArgs qap_args;
  CLI::App* qap = app.add_subcommand(
      "qap", "correlation-style permutation test for two networks");
  qap->add_option("--a", qap_args.a, "outcome network file")->required();
  qap->add_option("--b", qap_args.b, "comparison network file")->required();
  qap->add_option("--statistic", qap_args.statistic,
                  "test statistic: plain|studentized");
  qap->add_option("--reps", qap_args.reps, "permutation budget")
      ->check(CLI::PositiveNumber);
  qap->add_option("--seed", qap_args.seed, "rng seed");
  qap->add_option("--eta1-correction", qap_args.correction,
                  "variance correction: auto|sen|plain");
  qap->add_option("--out", qap_args.out, "write the report to this file");
  qap->add_flag("--timing", qap_args.timing, "include wall-clock timing");
  add_ingest_flags(qap, qap_args.ingest);

  MrqapArgs mrqap_args;
  CLI::App* mrqap = app.add_subcommand(
      "mrqap", "regression permutation test for a dyadic outcome");
  mrqap->add_option("--a", mrqap_args.a, "outcome network file")->required();
  mrqap->add_option("--b", mrqap_args.b, "focal covariate network files")
      ->required();
  mrqap->add_option("--c", mrqap_args.c, "nuisance covariate network files");
  mrqap->add_option("--strategy", mrqap_args.strategy,
                    "permutation strategy: a|b|eps-b|eps");
  mrqap->add_option("--statistic", mrqap_args.statistic,
                    "test statistic: coef|wald");
  mrqap->add_option("--reps", mrqap_args.reps, "permutation budget")
      ->check(CLI::PositiveNumber);
  mrqap->add_option("--seed", mrqap_args.seed, "rng seed");
  mrqap->add_option("--eta1-correction", mrqap_args.correction,
                    "variance correction: auto|sen|plain");
  mrqap->add_option("--out", mrqap_args.out, "write the report to this file");
  mrqap->add_flag("--timing", mrqap_args.timing, "include wall-clock timing");
  add_ingest_flags(mrqap, mrqap_args.ingest);

  FitArgs fit_args;
  CLI::App* fit = app.add_subcommand(
      "fit", "point estimates with the studentizing variance matrix");
  fit->add_option("--a", fit_args.a, "outcome network file")->required();
  fit->add_option("--b", fit_args.b, "focal covariate network files")
      ->required();
  fit->add_option("--c", fit_args.c, "nuisance covariate network files");
  fit->add_option("--eta1-correction", fit_args.correction,
                  "variance correction: auto|sen|plain");
  fit->add_option("--out", fit_args.out, "write the report to this file");
  fit->add_flag("--timing", fit_args.timing, "include wall-clock timing");
  add_ingest_flags(fit, fit_args.ingest);

  SimulateArgs sim_args;
  CLI::App* simulate = app.add_subcommand(
      "simulate", "run a declarative experiment from a JSON config");
  simulate->add_option("--config", sim_args.config, "experiment config file")
      ->required();
  simulate->add_option("--out", sim_args.out, "write the report to this file");
  simulate->add_flag("--timing", sim_args.timing,
                     "include wall-clock timing");

  VersionArgs version_args;
  CLI::App* version =
      app.add_subcommand("version", "print tool and rng identifiers");
  version->add_option("--out", version_args.out,
                      "write the report to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (qap->parsed()) return run_qap_command(qap_args);
    if (mrqap->parsed()) return run_mrqap_command(mrqap_args);
    if (fit->parsed()) return run_fit_command(fit_args);
    if (simulate->parsed()) return run_simulate_command(sim_args);
    if (version->parsed()) return run_version_command(version_args);
    std::cerr << "error: no subcommand given\n";
    return 2;
  } catch (const DyadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace dyadperm
