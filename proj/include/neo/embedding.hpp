// Copyright 2026 The neo-tta Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "neo/error.hpp"

namespace neo {

/// A block of `rows` embedding vectors of length `dim`, stored row-major.
///
/// Values are held in double precision even when the on-disk format is
/// float32; every reduction in the library accumulates in 64 bits.
class EmbeddingBatch {
 public:
  EmbeddingBatch() = default;

  EmbeddingBatch(std::size_t rows, std::size_t dim)
      : rows_(rows), dim_(dim), data_(rows * dim, 0.0) {
    if (dim == 0) throw Error(ErrorCode::kInvalidDimension, "dim must be >= 1");
  }

  EmbeddingBatch(std::size_t rows, std::size_t dim, std::vector<double> data)
      : rows_(rows), dim_(dim), data_(std::move(data)) {
    if (dim == 0) throw Error(ErrorCode::kInvalidDimension, "dim must be >= 1");
    if (data_.size() != rows * dim) {
      throw Error(ErrorCode::kLengthMismatch,
                  "data length " + std::to_string(data_.size()) +
                      " != rows*dim " + std::to_string(rows * dim));
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<double> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }

  double operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * dim_ + j]; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  /// Rows [begin, end) as a new batch.
  EmbeddingBatch slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows_) {
      throw Error(ErrorCode::kInvalidArgument, "slice out of range");
    }
    return EmbeddingBatch(end - begin, dim_,
                          std::vector<double>(data_.begin() + begin * dim_,
                                              data_.begin() + end * dim_));
  }

  bool all_finite() const noexcept {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const EmbeddingBatch&, const EmbeddingBatch&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

inline void require_finite(const EmbeddingBatch& batch, const char* what) {
  if (!batch.all_finite()) {
    throw Error(ErrorCode::kNonFiniteInput, std::string(what) + " contains NaN/Inf");
  }
}

inline void require_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + ": dim " + std::to_string(got) +
                    " != expected " + std::to_string(want));
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;  // strict: ties keep the lowest index
  }
  return best;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  return dot(a, b) / (norm(a) * norm(b));
}

}  // namespace neo
