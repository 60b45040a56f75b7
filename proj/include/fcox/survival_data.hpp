#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fcox/error.hpp"
#include "fcox/grid.hpp"

namespace fcox {

/// A functional covariate tabulated on the dataset grid.
struct FunctionalCovariate {
  Eigen::VectorXd values;
};

/// One observation (T, Delta, Z, X).
struct SurvivalRecord {
  double time = 0.0;
  bool event = false;
  Eigen::VectorXd z;
  FunctionalCovariate x;
};

/// Right-censored sample with a vector covariate and one functional covariate.
/// Stored column-wise: Z is n x p, X is n x G (row i is X_i on the grid).
class Dataset {
 public:
  Dataset(Grid grid, Eigen::VectorXd times, Eigen::VectorXi events, Eigen::MatrixXd Z, Eigen::MatrixXd X,
          bool centered = false)
      : grid_(std::move(grid)),
        times_(std::move(times)),
        events_(std::move(events)),
        Z_(std::move(Z)),
        X_(std::move(X)),
        centered_(centered) {
    validate();
  }

  Dataset(Grid grid, const std::vector<SurvivalRecord>& records) : grid_(std::move(grid)) {
    const auto n = static_cast<Eigen::Index>(records.size());
    const Eigen::Index p = records.empty() ? 0 : records.front().z.size();
    times_.resize(n);
    events_.resize(n);
    Z_.resize(n, p);
    X_.resize(n, grid_.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& r = records[static_cast<std::size_t>(i)];
      if (r.z.size() != p) throw InvalidArgument("records disagree on the length of z");
      if (r.x.values.size() != grid_.size()) throw InvalidArgument("record x is not tabulated on the dataset grid");
      times_(i) = r.time;
      events_(i) = r.event ? 1 : 0;
      Z_.row(i) = r.z.transpose();
      X_.row(i) = r.x.values.transpose();
    }
    validate();
  }

  Eigen::Index n() const noexcept { return times_.size(); }
  Eigen::Index p() const noexcept { return Z_.cols(); }
  const Grid& grid() const noexcept { return grid_; }
  const Eigen::VectorXd& times() const noexcept { return times_; }
  const Eigen::VectorXi& events() const noexcept { return events_; }
  const Eigen::MatrixXd& Z() const noexcept { return Z_; }
  const Eigen::MatrixXd& X() const noexcept { return X_; }
  bool centered() const noexcept { return centered_; }
  bool event(Eigen::Index i) const { return events_(i) != 0; }
  Eigen::Index num_events() const { return events_.sum(); }
  Eigen::VectorXd event_weights() const { return events_.cast<double>(); }

  SurvivalRecord record(Eigen::Index i) const {
    return {times_(i), events_(i) != 0, Z_.row(i).transpose(), {X_.row(i).transpose()}};
  }

  /// Records at the given indices, in that order (repeats allowed).
  Dataset subset(const std::vector<Eigen::Index>& idx) const {
    const auto m = static_cast<Eigen::Index>(idx.size());
    Eigen::VectorXd t(m);
    Eigen::VectorXi e(m);
    Eigen::MatrixXd z(m, p());
    Eigen::MatrixXd x(m, grid_.size());
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto i = idx[static_cast<std::size_t>(k)];
      t(k) = times_(i);
      e(k) = events_(i);
      z.row(k) = Z_.row(i);
      x.row(k) = X_.row(i);
    }
    return Dataset(grid_, std::move(t), std::move(e), std::move(z), std::move(x), false);
  }

 private:
  void validate() const {
    const auto n = times_.size();
    if (events_.size() != n || Z_.rows() != n || X_.rows() != n)
      throw InvalidArgument("dataset columns have inconsistent lengths");
    if (X_.cols() != grid_.size()) throw InvalidArgument("functional covariates are not tabulated on the grid");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(times_(i) > 0.0) || !std::isfinite(times_(i)))
        throw InvalidData("record " + std::to_string(i) + ": time must be positive and finite");
      if (events_(i) != 0 && events_(i) != 1) throw InvalidData("record " + std::to_string(i) + ": event not in {0,1}");
    }
    if (!Z_.allFinite() || !X_.allFinite()) throw InvalidData("covariates must be finite");
    if (events_.sum() == 0) throw InvalidData("dataset has no uncensored records");
  }

  Grid grid_;
  Eigen::VectorXd times_;
  Eigen::VectorXi events_;
  Eigen::MatrixXd Z_;
  Eigen::MatrixXd X_;
  bool centered_ = false;
};

/// Subtract the mean over uncensored records from Z and (pointwise) from X.
inline Dataset center(const Dataset& ds) {
  const Eigen::VectorXd w = ds.event_weights();
  const double N = w.sum();
  if (N <= 0.0) throw InvalidData("cannot center: no uncensored records");
  const Eigen::RowVectorXd z_mean = (w.transpose() * ds.Z()) / N;
  const Eigen::RowVectorXd x_mean = (w.transpose() * ds.X()) / N;
  Eigen::MatrixXd Z = ds.Z().rowwise() - z_mean;
  Eigen::MatrixXd X = ds.X().rowwise() - x_mean;
  return Dataset(ds.grid(), ds.times(), ds.events(), std::move(Z), std::move(X), true);
}

inline Dataset ensure_centered(const Dataset& ds) { return ds.centered() ? ds : center(ds); }

/// Indices j with T_j >= T_i (ties included, i itself included).
inline std::vector<Eigen::Index> risk_set(const Dataset& ds, Eigen::Index i) {
  if (i < 0 || i >= ds.n()) throw InvalidArgument("record index out of range");
  std::vector<Eigen::Index> out;
  const double ti = ds.times()(i);
  for (Eigen::Index j = 0; j < ds.n(); ++j)
    if (ds.times()(j) >= ti) out.push_back(j);
  return out;
}

// ---------------------------------------------------------------------------
// CSV: header `time,event,z1..zp,x1..xG`, one record per row.

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view field, long row, std::string_view column) {
  double v = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (field.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ParseError("column '" + std::string(column) + "': not a finite number: '" + std::string(field) + "'", row);
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline bool has_prefix_index(std::string_view name, char prefix, long expected) {
  if (name.size() < 2 || name.front() != prefix) return false;
  long idx = 0;
  const auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), idx);
  return ec == std::errc() && ptr == name.data() + name.size() && idx == expected;
}

}  // namespace detail

/// Single-column CSV of grid points (optional header line).
inline Grid load_grid_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("file not found: " + path, -1);
  std::vector<double> pts;
  std::string line;
  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    auto fields = detail::split_csv_line(line);
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (fields.size() != 1) throw ParseError("grid file must have a single column", row);
    if (row == 1 && !fields[0].empty() && std::isalpha(static_cast<unsigned char>(fields[0][0]))) continue;
    pts.push_back(detail::parse_double(fields[0], row, "grid"));
  }
  try {
    return Grid(Eigen::Map<Eigen::VectorXd>(pts.data(), static_cast<Eigen::Index>(pts.size())));
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("invalid grid: ") + e.what(), -1);
  }
}

/// Number of x-columns declared in a data file header.
inline Eigen::Index csv_grid_size(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("file not found: " + path, -1);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file", 1);
  Eigen::Index G = 0;
  for (auto f : detail::split_csv_line(line))
    if (!f.empty() && f[0] == 'x') ++G;
  return G;
}

inline Dataset load_csv(const std::string& path, const Grid& grid) {
  std::ifstream in(path);
  if (!in) throw ParseError("file not found: " + path, -1);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file", 1);
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "time" || header[1] != "event")
    throw ParseError("header must start with 'time,event'", 1);
  std::size_t col = 2;
  long p = 0;
  while (col < header.size() && detail::has_prefix_index(header[col], 'z', p + 1)) ++p, ++col;
  long G = 0;
  while (col < header.size() && detail::has_prefix_index(header[col], 'x', G + 1)) ++G, ++col;
  if (col != header.size())
    throw ParseError("unexpected column '" + std::string(header[col]) + "' (expected z1..zp then x1..xG)", 1);
  if (G != grid.size())
    throw ParseError("file has " + std::to_string(G) + " x-columns but the grid has " + std::to_string(grid.size()) +
                         " points",
                     1);

  std::vector<double> times;
  std::vector<int> events;
  std::vector<double> zs, xs;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()), row);
    const double t = detail::parse_double(f[0], row, "time");
    if (!(t > 0.0)) throw ParseError("time must be positive", row);
    const double e = detail::parse_double(f[1], row, "event");
    if (e != 0.0 && e != 1.0) throw ParseError("event must be 0 or 1", row);
    times.push_back(t);
    events.push_back(static_cast<int>(e));
    for (long k = 0; k < p; ++k) zs.push_back(detail::parse_double(f[2 + k], row, header[2 + k]));
    for (long k = 0; k < G; ++k) xs.push_back(detail::parse_double(f[2 + p + k], row, header[2 + p + k]));
  }
  const auto n = static_cast<Eigen::Index>(times.size());
  if (n == 0) throw ParseError("no data rows", row);
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::MatrixXd Z = Eigen::Map<RowMajor>(zs.data(), n, p);
  Eigen::MatrixXd X = Eigen::Map<RowMajor>(xs.data(), n, G);
  return Dataset(grid, Eigen::Map<Eigen::VectorXd>(times.data(), n), Eigen::Map<Eigen::VectorXi>(events.data(), n),
                 std::move(Z), std::move(X), false);
}

/// Shortest round-trip decimal representation, so write -> load is exact.
inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open for writing: " + path);
  out << "time,event";
  for (Eigen::Index k = 0; k < ds.p(); ++k) out << ",z" << k + 1;
  for (Eigen::Index k = 0; k < ds.grid().size(); ++k) out << ",x" << k + 1;
  out << '\n';
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    out << detail::format_double(ds.times()(i)) << ',' << ds.events()(i);
    for (Eigen::Index k = 0; k < ds.p(); ++k) out << ',' << detail::format_double(ds.Z()(i, k));
    for (Eigen::Index k = 0; k < ds.grid().size(); ++k) out << ',' << detail::format_double(ds.X()(i, k));
    out << '\n';
  }
}

inline void write_grid_csv(const Grid& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open for writing: " + path);
  out << "s\n";
  for (Eigen::Index k = 0; k < grid.size(); ++k) out << detail::format_double(grid[k]) << '\n';
}

}  // namespace fcox
