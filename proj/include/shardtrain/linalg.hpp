// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace shardtrain {

// Dense row-major float64 matrix. Every routine in this project that touches
// a Matrix fixes its accumulation order, so results are reproducible bit for
// bit across runs and across execution modes.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }

  std::size_t size() const { return data.size(); }
};

// c[i][j] = sum_k a[i][k] * b[k][j], k ascending.
Matrix matmul(const Matrix& a, const Matrix& b);

// c[i][j] = sum_k a[i][k] * b[j][k], k ascending. b is used transposed.
Matrix matmul_bt(const Matrix& a, const Matrix& b);

// c[i][j] = sum_k a[k][i] * b[k][j], k ascending. a is used transposed.
Matrix matmul_at(const Matrix& a, const Matrix& b);

// sum_i v[i]^2, i ascending.
double sum_of_squares(std::span<const double> v);

bool all_finite(std::span<const double> v);
bool all_finite(const Matrix& m);

}  // namespace shardtrain
