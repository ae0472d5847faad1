#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotlab/tensor.hpp"

namespace cotlab {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// parsed numeric table; rows are records. A file holding only a header line
// parses to a zero-row table.
struct Table {
  std::vector<std::string> headers;
  Tensor values;  // N x C
};

Table read_csv_table(const std::string& path);

// Features and targets with one sample per row, stored in normalized
// coordinates. Splits are disjoint row-index sets; the normalization stats
// come from the training split only, so raw values are recoverable.
struct Dataset {
  Tensor X;  // N x n
  Tensor Y;  // N x m
  std::vector<int> train, valid, test;
  std::vector<double> x_mean, x_std, y_mean, y_std;

  std::size_t n() const { return X.cols(); }
  std::size_t m() const { return Y.cols(); }
  std::size_t size() const { return X.rows(); }
};

// (d,B) column batch from the given rows of a row-major N x d matrix
Tensor cols_of(const Tensor& M, const std::vector<int>& rows);

// Shuffles rows, splits by rounded fractions (remainder is the test split),
// computes per-column mean/std on the training rows, and normalizes
// everything with those stats. Columns with vanishing training spread are an
// error; the caller's column filters must remove them first.
Dataset make_dataset(const Tensor& X, const Tensor& Y, double train_frac, double valid_frac,
                     std::uint64_t seed);

enum class UciTask { Conditional, Joint };

// Drops discrete-valued columns and the second column of every pair with
// signed Pearson correlation above 0.98, then assigns features: conditional
// task takes the last remaining column as x, joint task takes the second half.
Dataset preprocess_uci(const Table& t, UciTask task, std::uint64_t seed);

// back to raw units; input is a (d,B) column batch
Tensor denormalize_x(const Dataset& d, const Tensor& xcols);
Tensor denormalize_y(const Dataset& d, const Tensor& ycols);
Tensor normalize_y(const Dataset& d, const Tensor& ycols_raw);

// CSV (x columns then y columns, %.17g) plus a JSON sidecar with splits and
// stats; prefix.csv / prefix.json
void save_dataset(const Dataset& d, const std::string& prefix);
Dataset load_dataset(const std::string& prefix);

}  // namespace cotlab
