#include "bae/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <unistd.h>

#include "bae/errors.hpp"

namespace bae::io {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw Error("format_double: conversion failed");
  return std::string(buf.data(), end);
}

double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
  if (text == "nan" || text == "NaN") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size())
    throw Error("parse_double: not a number: '" + std::string(text) + "'");
  return v;
}

void write_text_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

struct DigestDeleter {
  void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw Error("sha256: update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw Error("sha256: final failed");
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, DigestDeleter> ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data.data(), data.size());
  return h.hex();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw Error("parse_csv: unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& header) {
  std::string out;
  auto append_row = [&out](const auto& fields) {
    bool first = true;
    for (const auto& f : fields) {
      if (!first) out += ',';
      out += f;
      first = false;
    }
    out += "\r\n";
  };
  if (!header.empty()) {
    std::vector<std::string> h;
    for (const auto& s : header) h.push_back(csv_field(s));
    append_row(h);
  }
  std::vector<std::string> fields(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) fields[static_cast<std::size_t>(j)] = format_double(m(i, j));
    append_row(fields);
  }
  return out;
}

void write_matrix_csv(const fs::path& path, const Eigen::MatrixXd& m, const std::vector<std::string>& header) {
  write_text_atomic(path, matrix_csv(m, header));
}

Eigen::MatrixXd read_matrix_csv(const fs::path& path, bool has_header) {
  auto rows = parse_csv(read_text(path));
  if (has_header && !rows.empty()) rows.erase(rows.begin());
  if (rows.empty()) return Eigen::MatrixXd(0, 0);
  const std::size_t cols = rows.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw Error(path.string() + ": ragged CSV at record " + std::to_string(i + 1));
    for (std::size_t j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = parse_double(rows[i][j]);
  }
  return m;
}

void write_vector_csv(const fs::path& path, const Eigen::VectorXd& v) {
  write_text_atomic(path, matrix_csv(v.transpose()));
}

Eigen::VectorXd read_vector_csv(const fs::path& path) {
  const auto m = read_matrix_csv(path);
  if (m.rows() != 1 && m.cols() != 1) throw Error(path.string() + ": expected a single row or column");
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

std::string chain_csv(const Chain& chain) {
  const Eigen::Index d = chain.dim();
  std::string out = "walker,step";
  for (Eigen::Index i = 0; i < d; ++i) out += ",k_" + std::to_string(i + 1);
  out += ",logpost,accepted\r\n";
  for (Eigen::Index s = 0; s < chain.size(); ++s) {
    const auto i = static_cast<std::size_t>(s);
    out += std::to_string(chain.walker[i]);
    out += ',';
    out += std::to_string(chain.step[i]);
    for (Eigen::Index k = 0; k < d; ++k) {
      out += ',';
      out += format_double(chain.samples(k, s));
    }
    out += ',';
    out += format_double(chain.logpost(s));
    out += chain.accepted[i] ? ",1\r\n" : ",0\r\n";
  }
  return out;
}

void write_chain_csv(const fs::path& path, const Chain& chain) { write_text_atomic(path, chain_csv(chain)); }

Chain read_chain_csv(const fs::path& path) {
  const auto rows = parse_csv(read_text(path));
  if (rows.empty()) throw Error(path.string() + ": empty chain file");
  const auto& header = rows.front();
  if (header.size() < 5 || header[0] != "walker" || header[1] != "step" || header[header.size() - 2] != "logpost" ||
      header.back() != "accepted")
    throw Error(path.string() + ": unexpected chain header");
  const auto d = static_cast<Eigen::Index>(header.size() - 4);
  const auto n = static_cast<Eigen::Index>(rows.size() - 1);
  Chain c;
  c.samples.resize(d, n);
  c.logpost.resize(n);
  int max_walker = -1;
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto& r = rows[static_cast<std::size_t>(s + 1)];
    if (r.size() != header.size()) throw Error(path.string() + ": ragged chain record");
    c.walker.push_back(static_cast<int>(parse_double(r[0])));
    c.step.push_back(static_cast<int>(parse_double(r[1])));
    for (Eigen::Index k = 0; k < d; ++k) c.samples(k, s) = parse_double(r[static_cast<std::size_t>(k + 2)]);
    c.logpost(s) = parse_double(r[r.size() - 2]);
    c.accepted.push_back(r.back() == "1" ? 1 : 0);
    max_walker = std::max(max_walker, c.walker.back());
  }
  c.n_walkers = max_walker + 1;
  return c;
}

Json to_json(const Eigen::VectorXd& v) {
  Json j = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

Json to_json(const Eigen::MatrixXd& m) {
  Json j = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) j.push_back(to_json(Eigen::VectorXd(m.row(i).transpose())));
  return j;
}

Eigen::VectorXd vector_from_json(const Json& j) {
  if (!j.is_array()) throw Error("expected a JSON array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = j[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : j[i].get<double>();
  return v;
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  if (!j.is_array()) throw Error("expected a JSON array of rows");
  if (j.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto row = vector_from_json(j[i]);
    if (row.size() != m.cols()) throw Error("ragged JSON matrix");
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

void write_json(const fs::path& path, const Json& j) { write_text_atomic(path, dump(j)); }

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace bae::io
