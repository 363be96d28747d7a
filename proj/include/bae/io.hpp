#pragma once

// File formats: RFC-4180 CSV with shortest round-trip decimal floats, JSON via
// nlohmann::json, atomic whole-file writes and SHA-256 checksums.

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bae/sampler.hpp"

namespace bae::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

/// Shortest decimal form that parses back to the same double; "nan", "inf",
/// "-inf" for non-finite values.
std::string format_double(double v);
double parse_double(std::string_view text);

/// Writes `contents` to a sibling temporary file and renames it over `path`.
void write_text_atomic(const fs::path& path, std::string_view contents);
std::string read_text(const fs::path& path);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const fs::path& path);

/// Quotes a field when it contains a comma, quote or line break.
std::string csv_field(std::string_view s);
/// Splits CSV text into records; handles quoted fields and CRLF.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

/// Rows of the matrix as CSV records, preceded by `header` when non-empty.
std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& header = {});
void write_matrix_csv(const fs::path& path, const Eigen::MatrixXd& m, const std::vector<std::string>& header = {});
Eigen::MatrixXd read_matrix_csv(const fs::path& path, bool has_header = false);
/// A vector stored as one CSV row.
void write_vector_csv(const fs::path& path, const Eigen::VectorXd& v);
/// Reads all numbers of a one-row or one-column CSV file.
Eigen::VectorXd read_vector_csv(const fs::path& path);

/// `walker,step,k_1,...,k_d,logpost,accepted`, one record per sample.
std::string chain_csv(const Chain& chain);
void write_chain_csv(const fs::path& path, const Chain& chain);
/// Samples, walkers, steps, log posteriors and acceptance flags; the
/// run-level counters are restored separately from the metadata file.
Chain read_chain_csv(const fs::path& path);

Json to_json(const Eigen::VectorXd& v);
Json to_json(const Eigen::MatrixXd& m);  // array of rows
Eigen::VectorXd vector_from_json(const Json& j);
Eigen::MatrixXd matrix_from_json(const Json& j);

/// Pretty-printed JSON with a trailing newline.
std::string dump(const Json& j);
void write_json(const fs::path& path, const Json& j);
Json read_json(const fs::path& path);

}  // namespace bae::io
