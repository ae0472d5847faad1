#include "cotlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cotlab/rng.hpp"
#include "json.hpp"

namespace cotlab {

namespace {

std::vector<double> col_values(const Tensor& M, std::size_t j) {
  std::vector<double> v(M.rows());
  for (std::size_t i = 0; i < M.rows(); ++i) v[i] = M(i, j);
  return v;
}

bool is_discrete(const std::vector<double>& col) {
  for (double v : col)
    if (std::fabs(v - std::llround(v)) > 1e-9) return false;
  std::vector<double> u = col;
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  const double limit = std::max(2.0, static_cast<double>(col.size()) / 200.0);
  return static_cast<double>(u.size()) <= limit;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  const double denom = std::sqrt(saa * sbb);
  return denom > 0.0 ? sab / denom : 0.0;
}

}  // namespace

Table read_csv_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  Table t;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.headers.push_back(cell);
  }
  if (t.headers.empty()) throw DataError("no header columns in " + path);
  std::vector<double> flat;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t cells = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        flat.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw DataError(path + " row " + std::to_string(rows + 2) + ": non-numeric cell '" +
                        cell + "'");
      }
      ++cells;
    }
    if (cells != t.headers.size())
      throw DataError(path + " row " + std::to_string(rows + 2) + ": expected " +
                      std::to_string(t.headers.size()) + " cells, got " + std::to_string(cells));
    ++rows;
  }
  t.values = Tensor(rows, t.headers.size(), std::move(flat));
  return t;
}

Tensor cols_of(const Tensor& M, const std::vector<int>& rows) {
  Tensor out(M.cols(), rows.size());
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const auto r = static_cast<std::size_t>(rows[b]);
    if (r >= M.rows()) throw DataError("row index out of range");
    for (std::size_t j = 0; j < M.cols(); ++j) out(j, b) = M(r, j);
  }
  return out;
}

Dataset make_dataset(const Tensor& X, const Tensor& Y, double train_frac, double valid_frac,
                     std::uint64_t seed) {
  if (X.rows() != Y.rows()) throw DataError("X and Y row counts differ");
  const std::size_t N = X.rows();
  if (N < 2) throw DataError("need at least two samples");
  if (train_frac <= 0.0 || train_frac + valid_frac > 1.0 + 1e-12)
    throw DataError("bad split fractions");

  std::vector<int> perm(N);
  for (std::size_t i = 0; i < N; ++i) perm[i] = static_cast<int>(i);
  Rng rng(seed);
  for (std::size_t i = N - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.uniform_index(i + 1)]);

  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(N)));
  const auto n_valid = static_cast<std::size_t>(std::llround(valid_frac * static_cast<double>(N)));
  if (n_train == 0 || n_train + n_valid > N) throw DataError("split fractions leave no data");

  Dataset d;
  d.X = X;
  d.Y = Y;
  d.train.assign(perm.begin(), perm.begin() + static_cast<long>(n_train));
  d.valid.assign(perm.begin() + static_cast<long>(n_train),
                 perm.begin() + static_cast<long>(n_train + n_valid));
  d.test.assign(perm.begin() + static_cast<long>(n_train + n_valid), perm.end());

  // population mean/std over the training rows only
  auto stats = [&](const Tensor& M, std::vector<double>& mean, std::vector<double>& std_) {
    mean.assign(M.cols(), 0.0);
    std_.assign(M.cols(), 0.0);
    for (int r : d.train)
      for (std::size_t j = 0; j < M.cols(); ++j) mean[j] += M(static_cast<std::size_t>(r), j);
    for (std::size_t j = 0; j < M.cols(); ++j) mean[j] /= static_cast<double>(d.train.size());
    for (int r : d.train)
      for (std::size_t j = 0; j < M.cols(); ++j) {
        const double c = M(static_cast<std::size_t>(r), j) - mean[j];
        std_[j] += c * c;
      }
    for (std::size_t j = 0; j < M.cols(); ++j) {
      std_[j] = std::sqrt(std_[j] / static_cast<double>(d.train.size()));
      if (std_[j] < 1e-12)
        throw DataError("column " + std::to_string(j) + " has no spread in the training split");
    }
  };
  stats(d.X, d.x_mean, d.x_std);
  stats(d.Y, d.y_mean, d.y_std);

  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < d.X.cols(); ++j) d.X(i, j) = (d.X(i, j) - d.x_mean[j]) / d.x_std[j];
    for (std::size_t j = 0; j < d.Y.cols(); ++j) d.Y(i, j) = (d.Y(i, j) - d.y_mean[j]) / d.y_std[j];
  }
  return d;
}

Dataset preprocess_uci(const Table& t, UciTask task, std::uint64_t seed) {
  const std::size_t C = t.values.cols();
  std::vector<bool> keep(C, true);
  std::vector<std::vector<double>> cols(C);
  for (std::size_t j = 0; j < C; ++j) {
    cols[j] = col_values(t.values, j);
    if (is_discrete(cols[j])) keep[j] = false;
  }
  for (std::size_t j = 0; j < C; ++j) {
    if (!keep[j]) continue;
    for (std::size_t k = j + 1; k < C; ++k) {
      if (!keep[k]) continue;
      if (pearson(cols[j], cols[k]) > 0.98) keep[k] = false;
    }
  }
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < C; ++j)
    if (keep[j]) kept.push_back(j);
  if (kept.size() < 2) throw DataError("fewer than two columns survive preprocessing");

  const std::size_t split =
      task == UciTask::Conditional ? kept.size() - 1 : kept.size() / 2;  // y columns
  const std::size_t m = split;
  const std::size_t n = kept.size() - split;
  const std::size_t N = t.values.rows();
  Tensor X(N, n), Y(N, m);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < m; ++j) Y(i, j) = t.values(i, kept[j]);
    for (std::size_t j = 0; j < n; ++j) X(i, j) = t.values(i, kept[m + j]);
  }
  return make_dataset(X, Y, 0.8, 0.1, seed);
}

Tensor denormalize_x(const Dataset& d, const Tensor& xcols) {
  if (xcols.rows() != d.n()) throw DataError("denormalize_x: dimension mismatch");
  Tensor out = xcols;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t b = 0; b < out.cols(); ++b) out(i, b) = out(i, b) * d.x_std[i] + d.x_mean[i];
  return out;
}

Tensor denormalize_y(const Dataset& d, const Tensor& ycols) {
  if (ycols.rows() != d.m()) throw DataError("denormalize_y: dimension mismatch");
  Tensor out = ycols;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t b = 0; b < out.cols(); ++b) out(i, b) = out(i, b) * d.y_std[i] + d.y_mean[i];
  return out;
}

Tensor normalize_y(const Dataset& d, const Tensor& ycols_raw) {
  if (ycols_raw.rows() != d.m()) throw DataError("normalize_y: dimension mismatch");
  Tensor out = ycols_raw;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t b = 0; b < out.cols(); ++b) out(i, b) = (out(i, b) - d.y_mean[i]) / d.y_std[i];
  return out;
}

void save_dataset(const Dataset& d, const std::string& prefix) {
  {
    std::ofstream out(prefix + ".csv");
    if (!out) throw DataError("cannot write " + prefix + ".csv");
    for (std::size_t j = 0; j < d.n(); ++j) out << (j ? "," : "") << "x" << j;
    for (std::size_t j = 0; j < d.m(); ++j) out << ",y" << j;
    out << "\n";
    char buf[64];
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (std::size_t j = 0; j < d.n(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", d.X(i, j));
        out << (j ? "," : "") << buf;
      }
      for (std::size_t j = 0; j < d.m(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", d.Y(i, j));
        out << "," << buf;
      }
      out << "\n";
    }
  }
  nlohmann::json j;
  j["format_version"] = 1;
  j["n"] = d.n();
  j["m"] = d.m();
  j["train"] = d.train;
  j["valid"] = d.valid;
  j["test"] = d.test;
  j["x_mean"] = d.x_mean;
  j["x_std"] = d.x_std;
  j["y_mean"] = d.y_mean;
  j["y_std"] = d.y_std;
  std::ofstream out(prefix + ".json");
  if (!out) throw DataError("cannot write " + prefix + ".json");
  out << j.dump(2) << "\n";
}

Dataset load_dataset(const std::string& prefix) {
  const Table t = read_csv_table(prefix + ".csv");
  if (t.values.rows() == 0) throw DataError("no data rows in " + prefix + ".csv");
  std::ifstream in(prefix + ".json");
  if (!in) throw DataError("cannot open " + prefix + ".json");
  nlohmann::json j;
  in >> j;
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
    throw DataError(prefix + ".json: unsupported format_version");
  Dataset d;
  const auto n = j["n"].get<std::size_t>();
  const auto m = j["m"].get<std::size_t>();
  if (t.values.cols() != n + m) throw DataError(prefix + ": csv/sidecar column mismatch");
  const std::size_t N = t.values.rows();
  d.X = Tensor(N, n);
  d.Y = Tensor(N, m);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t col = 0; col < n; ++col) d.X(i, col) = t.values(i, col);
    for (std::size_t col = 0; col < m; ++col) d.Y(i, col) = t.values(i, n + col);
  }
  d.train = j["train"].get<std::vector<int>>();
  d.valid = j["valid"].get<std::vector<int>>();
  d.test = j["test"].get<std::vector<int>>();
  d.x_mean = j["x_mean"].get<std::vector<double>>();
  d.x_std = j["x_std"].get<std::vector<double>>();
  d.y_mean = j["y_mean"].get<std::vector<double>>();
  d.y_std = j["y_std"].get<std::vector<double>>();
  if (d.x_mean.size() != n || d.y_mean.size() != m)
    throw DataError(prefix + ": stats dimension mismatch");
  return d;
}

}  // namespace cotlab
