#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "locagg/penalties.hpp"
#include "locagg/types.hpp"

namespace locagg {

static_assert(std::endian::native == std::endian::little,
              "file and wire formats are little-endian; big-endian hosts are unsupported");

namespace detail {

inline void write_bytes(std::ostream& out, const void* data, std::size_t size) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failed");
}

template <typename T>
void write_scalar(std::ostream& out, T value) {
  write_bytes(out, &value, sizeof(T));
}

inline void read_bytes(std::istream& in, void* data, std::size_t size, const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
  if (static_cast<std::size_t>(in.gcount()) != size)
    throw FormatError(std::string("truncated payload while reading ") + what);
}

template <typename T>
T read_scalar(std::istream& in, const char* what) {
  T value;
  read_bytes(in, &value, sizeof(T), what);
  return value;
}

inline void expect_magic(std::istream& in, const char magic[4], const char* format) {
  char found[4];
  read_bytes(in, found, 4, "magic");
  if (std::memcmp(found, magic, 4) != 0)
    throw FormatError(std::string(format) + ": bad magic at offset 0, expected \"" +
                      std::string(magic, 4) + "\"");
}

inline void check_dims(std::uint64_t n, std::uint64_t tau, std::uint64_t L) {
  const std::uint64_t limit = 1ULL << 32;
  if (n == 0 || tau == 0 || L == 0 || n > limit || tau > limit || L > limit || n * tau > (1ULL << 40))
    throw FormatError("dimension header out of range");
}

}  // namespace detail

// Dataset file: magic "LAGG", version u16 = 1, family u8, reserved u8,
// n/tau/L u64, y (n f64), then L blocks of n*tau f64 row-major.
inline void save_dataset(const TensorDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  detail::write_bytes(out, "LAGG", 4);
  detail::write_scalar<std::uint16_t>(out, 1);
  detail::write_scalar<std::uint8_t>(out, static_cast<std::uint8_t>(ds.family));
  detail::write_scalar<std::uint8_t>(out, 0);
  detail::write_scalar<std::uint64_t>(out, static_cast<std::uint64_t>(ds.n()));
  detail::write_scalar<std::uint64_t>(out, static_cast<std::uint64_t>(ds.tau()));
  detail::write_scalar<std::uint64_t>(out, static_cast<std::uint64_t>(ds.num_locations()));
  detail::write_bytes(out, ds.y.data(), sizeof(double) * static_cast<std::size_t>(ds.n()));
  for (const Matrix& block : ds.blocks) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = block;
    detail::write_bytes(out, row_major.data(), sizeof(double) * static_cast<std::size_t>(block.size()));
  }
}

inline TensorDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  detail::expect_magic(in, "LAGG", "dataset");
  auto version = detail::read_scalar<std::uint16_t>(in, "version");
  if (version != 1) throw FormatError("dataset: unsupported version " + std::to_string(version));
  auto family_byte = detail::read_scalar<std::uint8_t>(in, "family");
  if (family_byte > 1) throw FormatError("dataset: unknown family tag");
  detail::read_scalar<std::uint8_t>(in, "reserved");
  auto n = detail::read_scalar<std::uint64_t>(in, "n");
  auto tau = detail::read_scalar<std::uint64_t>(in, "tau");
  auto L = detail::read_scalar<std::uint64_t>(in, "L");
  detail::check_dims(n, tau, L);

  TensorDataset ds;
  ds.family = static_cast<Family>(family_byte);
  ds.y.resize(static_cast<Eigen::Index>(n));
  detail::read_bytes(in, ds.y.data(), sizeof(double) * n, "response");
  ds.blocks.reserve(L);
  for (std::uint64_t l = 0; l < L; ++l) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major(
        static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(tau));
    detail::read_bytes(in, row_major.data(), sizeof(double) * n * tau, "location block");
    ds.blocks.emplace_back(row_major);
  }
  ds.validate();
  return ds;
}

namespace detail {

inline std::vector<std::vector<double>> read_csv_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ": cannot parse \"" + cell + "\" as a number");
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

/// CSV import: loc_<l>.csv (n rows x tau columns, 1-based l) plus y.csv in
/// one directory.
inline TensorDataset import_csv_dataset(const std::filesystem::path& dir, Family family) {
  auto y_rows = detail::read_csv_table(dir / "y.csv");
  TensorDataset ds;
  ds.family = family;
  ds.y.resize(static_cast<Eigen::Index>(y_rows.size()));
  for (std::size_t i = 0; i < y_rows.size(); ++i) {
    if (y_rows[i].size() != 1) throw FormatError("y.csv must have one value per line");
    ds.y[static_cast<Eigen::Index>(i)] = y_rows[i][0];
  }
  for (int l = 1;; ++l) {
    auto path = dir / ("loc_" + std::to_string(l) + ".csv");
    if (!std::filesystem::exists(path)) break;
    auto rows = detail::read_csv_table(path);
    if (rows.empty()) throw FormatError(path.string() + " is empty");
    Matrix block(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows[0].size()) throw FormatError(path.string() + ": ragged rows");
      for (std::size_t j = 0; j < rows[i].size(); ++j)
        block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    ds.blocks.push_back(std::move(block));
  }
  if (ds.blocks.empty()) throw IoError("no loc_<l>.csv files found in " + dir.string());
  ds.validate();
  return ds;
}

// Graph file: magic "LAGP", version u16 = 1, reserved u16, L u64, then the
// weight matrix W as L*L f64 row-major. G is rebuilt on load.
inline void save_graph(const GraphPenalty& graph, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  detail::write_bytes(out, "LAGP", 4);
  detail::write_scalar<std::uint16_t>(out, 1);
  detail::write_scalar<std::uint16_t>(out, 0);
  detail::write_scalar<std::uint64_t>(out, static_cast<std::uint64_t>(graph.num_locations()));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = graph.W;
  detail::write_bytes(out, w.data(), sizeof(double) * static_cast<std::size_t>(w.size()));
}

inline GraphPenalty load_graph(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  detail::expect_magic(in, "LAGP", "graph");
  auto version = detail::read_scalar<std::uint16_t>(in, "version");
  if (version != 1) throw FormatError("graph: unsupported version " + std::to_string(version));
  detail::read_scalar<std::uint16_t>(in, "reserved");
  auto L = detail::read_scalar<std::uint64_t>(in, "L");
  detail::check_dims(1, 1, L);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w(
      static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(L));
  detail::read_bytes(in, w.data(), sizeof(double) * L * L, "weight matrix");
  return GraphPenalty::from_weights(Matrix(w));
}

/// Edge-list graph text: lines "l l' weight" with 1-based node ids.
inline GraphPenalty load_edge_list(const std::filesystem::path& path, Eigen::Index L) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  Matrix w = Matrix::Zero(L, L);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    Eigen::Index a, b;
    double weight;
    if (!(ss >> a >> b >> weight)) throw FormatError(path.string() + ": bad edge line \"" + line + "\"");
    if (a < 1 || a > L || b < 1 || b > L) throw FormatError(path.string() + ": node id out of range");
    w(a - 1, b - 1) = w(b - 1, a - 1) = weight;
  }
  return GraphPenalty::from_weights(std::move(w));
}

/// Coordinates text: lines "l x y z" or "l azimuth elevation", 1-based l.
inline Matrix load_coordinates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (values.size() != 3 && values.size() != 4)
      throw FormatError(path.string() + ": expected \"l x y z\" or \"l az el\" lines");
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw FormatError(path.string() + ": no coordinate lines");
  std::size_t width = rows[0].size();
  Matrix coords(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
  for (const auto& row : rows) {
    if (row.size() != width) throw FormatError(path.string() + ": mixed coordinate formats");
    auto id = static_cast<Eigen::Index>(row[0]);
    if (id < 1 || id > coords.rows()) throw FormatError(path.string() + ": node id out of range");
    for (std::size_t j = 1; j < width; ++j)
      coords(id - 1, static_cast<Eigen::Index>(j - 1)) = row[j];
  }
  return coords;
}

/// Fitted model with optional recorded path.
struct ModelFile {
  Family family = Family::gaussian;
  bool converged = false;
  std::uint64_t iterate = 0;
  double lambda_agg = 0.0, lambda_sm = 0.0, lambda_sp = 0.0;
  Matrix B;                  // (tau+1) x L, intercept row first
  std::vector<Matrix> path;  // optional snapshots, each (tau+1) x L
};

// Model file: magic "LAGM", version u16 = 1, family u8, converged u8,
// tau/L u64, lambda_agg/sm/sp f64, iterate u64, B as (tau+1)*L f64 row-major,
// path flag u8 and, if set, count u64 plus stacked snapshots.
inline void save_model(const ModelFile& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  auto tau = static_cast<std::uint64_t>(model.B.rows() - 1);
  auto L = static_cast<std::uint64_t>(model.B.cols());
  detail::write_bytes(out, "LAGM", 4);
  detail::write_scalar<std::uint16_t>(out, 1);
  detail::write_scalar<std::uint8_t>(out, static_cast<std::uint8_t>(model.family));
  detail::write_scalar<std::uint8_t>(out, model.converged ? 1 : 0);
  detail::write_scalar<std::uint64_t>(out, tau);
  detail::write_scalar<std::uint64_t>(out, L);
  detail::write_scalar<double>(out, model.lambda_agg);
  detail::write_scalar<double>(out, model.lambda_sm);
  detail::write_scalar<double>(out, model.lambda_sp);
  detail::write_scalar<std::uint64_t>(out, model.iterate);
  auto dump = [&](const Matrix& m) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = m;
    detail::write_bytes(out, row_major.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  };
  dump(model.B);
  detail::write_scalar<std::uint8_t>(out, model.path.empty() ? 0 : 1);
  if (!model.path.empty()) {
    detail::write_scalar<std::uint64_t>(out, model.path.size());
    for (const Matrix& snapshot : model.path) dump(snapshot);
  }
}

inline ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  detail::expect_magic(in, "LAGM", "model");
  auto version = detail::read_scalar<std::uint16_t>(in, "version");
  if (version != 1) throw FormatError("model: unsupported version " + std::to_string(version));
  ModelFile model;
  auto family_byte = detail::read_scalar<std::uint8_t>(in, "family");
  if (family_byte > 1) throw FormatError("model: unknown family tag");
  model.family = static_cast<Family>(family_byte);
  model.converged = detail::read_scalar<std::uint8_t>(in, "converged") != 0;
  auto tau = detail::read_scalar<std::uint64_t>(in, "tau");
  auto L = detail::read_scalar<std::uint64_t>(in, "L");
  detail::check_dims(1, tau, L);
  model.lambda_agg = detail::read_scalar<double>(in, "lambda_agg");
  model.lambda_sm = detail::read_scalar<double>(in, "lambda_sm");
  model.lambda_sp = detail::read_scalar<double>(in, "lambda_sp");
  model.iterate = detail::read_scalar<std::uint64_t>(in, "iterate");
  auto slurp = [&](const char* what) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major(
        static_cast<Eigen::Index>(tau + 1), static_cast<Eigen::Index>(L));
    detail::read_bytes(in, row_major.data(), sizeof(double) * (tau + 1) * L, what);
    return Matrix(row_major);
  };
  model.B = slurp("coefficients");
  if (detail::read_scalar<std::uint8_t>(in, "path flag") != 0) {
    auto count = detail::read_scalar<std::uint64_t>(in, "path count");
    if (count > (1ULL << 24)) throw FormatError("model: path count out of range");
    model.path.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) model.path.push_back(slurp("path snapshot"));
  }
  return model;
}

/// Flat key=value report lines for machine parsing.
inline void save_report(const std::vector<std::pair<std::string, std::string>>& entries,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& [key, value] : entries) out << key << "=" << value << "\n";
}

inline std::vector<std::pair<std::string, std::string>> load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path.string() + ": expected key=value lines");
    entries.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return entries;
}

}  // namespace locagg
