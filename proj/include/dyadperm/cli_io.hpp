#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dyadperm/dyad_matrix.hpp"
#include "dyadperm/sim_lab.hpp"

// Command-line front end: matrix and edge-list ingestion, experiment config
// parsing, and deterministic report emission. Reports are ordered JSON with
// fixed 17-significant-digit float formatting and a trailing newline, so a
// repeated invocation with the same inputs and seed is byte-identical.

namespace dyadperm {

inline constexpr const char* kSchemaVersion = "1";
inline constexpr const char* kToolName = "dyadperm";
inline constexpr const char* kToolVersion = "1.0.0";

struct LoadedMatrix {
  DyadMatrix matrix;
  std::vector<std::string> labels;  // empty when the file carries none
  std::string source;               // file stem, used to name coefficients
  std::string digest;               // fnv1a64 over the raw file bytes
};

// 64-bit FNV-1a over a byte string, rendered as 16 lowercase hex digits.
std::string fnv1a64_hex(const std::string& bytes);

// n x n comma-separated grid, optionally preceded by a header row of unit
// labels (with or without a corner token) and optionally carrying a label
// column. Parse failures report the offending row and column.
LoadedMatrix parse_matrix_csv(const std::string& path);

// Lines of "i,j,weight" with 1-based integer or labeled endpoints; unlisted
// pairs are zero. Duplicate (i,j)/(j,i) entries must agree within 1e-9.
LoadedMatrix parse_edge_list(const std::string& path,
                             std::optional<int> n_declared);

// Writes a matrix (with a header row and label column when labels are given)
// using 17-significant-digit floats so a re-parse restores identical doubles.
void write_matrix_csv(const std::string& path, const DyadMatrix& m,
                      const std::vector<std::string>& labels);

// Serializes an ordered JSON document with stable key order, %.17g doubles,
// and a trailing newline. Raises NonFiniteEntry on NaN or infinity.
std::string render_report(const nlohmann::ordered_json& doc);

// Freedman-Diaconis binned counts: {"bin_edges": [...], "counts": [...]}.
nlohmann::ordered_json histogram_json(const std::vector<double>& values);

// Declarative experiment document with keys {spec, params, law, n, datasets,
// statistic, strategy, inner_reps, alphas, seed, correction}. Unknown keys
// are rejected so typos fail loudly.
ExperimentConfig parse_experiment_config(const std::string& text);

// Full CLI: subcommands qap, mrqap, fit, simulate, version. Returns the
// process exit code (0 success, 2 usage, 3 data or validation, 4 numeric
// degeneracy) and emits the report to stdout or the --out path.
int cli_dispatch(int argc, const char* const* argv);

}  // namespace dyadperm
