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

// Streaming re-centering of target-domain embeddings before a linear head.
//
// An AdapterState holds the running global centroid of every embedding seen
// so far. Predictions subtract that centroid from each embedding before the
// head is applied; nothing else about the model changes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neo/embedding.hpp"
#include "neo/error.hpp"

namespace neo {

enum class CentroidMode {
  kCumulativeMean,  // exact sample-weighted mean of everything absorbed
  kEma,             // exponential moving average of batch means
};

class AdapterState {
 public:
  AdapterState() = default;

  static AdapterState cumulative(std::size_t dim) {
    return AdapterState(dim, CentroidMode::kCumulativeMean, 1.0);
  }

  static AdapterState ema(std::size_t dim, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "EMA alpha must lie in (0, 1], got " + std::to_string(alpha));
    }
    return AdapterState(dim, CentroidMode::kEma, alpha);
  }

  /// Rebuilds a state from persisted fields, validating every invariant.
  static AdapterState restore(CentroidMode mode, double alpha, std::uint64_t count,
                              std::vector<double> mean) {
    AdapterState s = mode == CentroidMode::kEma ? ema(mean.size(), alpha)
                                                : cumulative(mean.size());
    for (double v : mean) {
      if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteInput, "mean has NaN/Inf");
    }
    if (count == 0 && std::any_of(mean.begin(), mean.end(),
                                  [](double v) { return v != 0.0; })) {
      throw Error(ErrorCode::kInvalidArgument, "count = 0 requires a zero mean");
    }
    s.count_ = count;
    s.mean_ = std::move(mean);
    return s;
  }

  std::size_t dim() const noexcept { return mean_.size(); }
  std::uint64_t count() const noexcept { return count_; }
  CentroidMode mode() const noexcept { return mode_; }
  double alpha() const noexcept { return alpha_; }
  std::span<const double> mean() const noexcept { return mean_; }
  bool empty() const noexcept { return count_ == 0; }

  friend bool operator==(const AdapterState&, const AdapterState&) = default;

 private:
  AdapterState(std::size_t dim, CentroidMode mode, double alpha)
      : mode_(mode), alpha_(alpha), mean_(dim, 0.0) {
    if (dim == 0) throw Error(ErrorCode::kInvalidDimension, "dim must be >= 1");
  }

  friend AdapterState update(AdapterState, const EmbeddingBatch&);
  friend AdapterState update_continual(AdapterState, const EmbeddingBatch&);
  friend AdapterState merge(const AdapterState&, const AdapterState&);

  CentroidMode mode_ = CentroidMode::kCumulativeMean;
  double alpha_ = 1.0;
  std::uint64_t count_ = 0;
  std::vector<double> mean_;
};

/// Classifier weights (C x d, row c is w_c) and bias (length C).
class LinearHead {
 public:
  LinearHead() = default;

  LinearHead(std::size_t num_classes, std::size_t dim, std::vector<double> weights,
             std::vector<double> bias)
      : num_classes_(num_classes),
        dim_(dim),
        weights_(std::move(weights)),
        bias_(std::move(bias)) {
    if (num_classes < 2) throw Error(ErrorCode::kInvalidDimension, "need C >= 2");
    if (dim == 0) throw Error(ErrorCode::kInvalidDimension, "need d >= 1");
    if (weights_.size() != num_classes * dim) {
      throw Error(ErrorCode::kDimensionMismatch, "weights must be C x d");
    }
    if (bias_.size() != num_classes) {
      throw Error(ErrorCode::kDimensionMismatch, "bias must have length C");
    }
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(weights_.begin(), weights_.end(), finite) ||
        !std::all_of(bias_.begin(), bias_.end(), finite)) {
      throw Error(ErrorCode::kNonFiniteInput, "head contains NaN/Inf");
    }
  }

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::span<const double> bias() const noexcept { return bias_; }
  std::span<const double> weight_row(std::size_t c) const {
    return {weights_.data() + c * dim_, dim_};
  }

  friend bool operator==(const LinearHead&, const LinearHead&) = default;

 private:
  std::size_t num_classes_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

struct PredictionBatch {
  std::size_t num_classes = 0;
  std::vector<double> logits;  // rows x num_classes, row-major
  std::vector<std::size_t> predicted;
  std::vector<double> confidence;

  std::size_t rows() const noexcept { return predicted.size(); }
  std::span<const double> logits_row(std::size_t i) const {
    return {logits.data() + i * num_classes, num_classes};
  }
};

/// Softmax with max-subtraction. Throws NonFiniteInput on NaN/Inf logits.
inline std::vector<double> softmax_confidence(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorCode::kEmptyInput, "empty logits");
  for (double v : logits) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteInput, "logit is NaN/Inf");
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

namespace detail {

inline void check_batch(const EmbeddingBatch& batch, std::size_t dim) {
  require_dim(batch.dim(), dim, "batch");
  require_finite(batch, "batch");
}

inline std::vector<double> column_sum(const EmbeddingBatch& batch) {
  std::vector<double> sum(batch.dim(), 0.0);
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    auto r = batch.row(i);
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += r[j];
  }
  return sum;
}

// logits = x W^T + bias, with argmax and softmax maximum per row.
inline PredictionBatch apply_head(const LinearHead& head, const EmbeddingBatch& x,
                                  std::span<const double> bias) {
  const std::size_t num_classes = head.num_classes();
  PredictionBatch out;
  out.num_classes = num_classes;
  out.logits.resize(x.rows() * num_classes);
  out.predicted.resize(x.rows());
  out.confidence.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    double* logits = out.logits.data() + i * num_classes;
    for (std::size_t c = 0; c < num_classes; ++c) {
      logits[c] = dot(r, head.weight_row(c)) + bias[c];
    }
    std::span<const double> row{logits, num_classes};
    out.predicted[i] = argmax(row);
    // The softmax maximum: 1 / sum_j exp(l_j - l_max).
    const double top = logits[out.predicted[i]];
    double total = 0.0;
    for (double l : row) total += std::exp(l - top);
    out.confidence[i] = 1.0 / total;
  }
  return out;
}

}  // namespace detail

/// Absorbs a batch into a cumulative-mean state. The result is the exact
/// sample-weighted mean of every row absorbed so far, so it does not depend
/// on how the stream was cut into batches.
inline AdapterState update(AdapterState state, const EmbeddingBatch& batch) {
  if (state.mode_ != CentroidMode::kCumulativeMean) {
    throw Error(ErrorCode::kWrongMode, "update() requires a cumulative-mean state");
  }
  detail::check_batch(batch, state.dim());
  if (batch.empty()) throw Error(ErrorCode::kEmptyInput, "batch has no rows");

  const auto sum = detail::column_sum(batch);
  const double old_count = static_cast<double>(state.count_);
  state.count_ += batch.rows();
  const double new_count = static_cast<double>(state.count_);
  for (std::size_t j = 0; j < sum.size(); ++j) {
    state.mean_[j] = (old_count * state.mean_[j] + sum[j]) / new_count;
  }
  return state;
}

/// EMA step: mean <- (1 - alpha) mean + alpha avg(batch). `count` is kept for
/// bookkeeping only.
inline AdapterState update_continual(AdapterState state, const EmbeddingBatch& batch) {
  if (state.mode_ != CentroidMode::kEma) {
    throw Error(ErrorCode::kWrongMode, "update_continual() requires an EMA state");
  }
  detail::check_batch(batch, state.dim());
  if (batch.empty()) throw Error(ErrorCode::kEmptyInput, "batch has no rows");

  const auto sum = detail::column_sum(batch);
  const double rows = static_cast<double>(batch.rows());
  const double a = state.alpha_;
  for (std::size_t j = 0; j < sum.size(); ++j) {
    state.mean_[j] = (1.0 - a) * state.mean_[j] + a * (sum[j] / rows);
  }
  state.count_ += batch.rows();
  return state;
}

/// Dispatches to update() or update_continual() by the state's mode.
inline AdapterState absorb(AdapterState state, const EmbeddingBatch& batch) {
  return state.mode() == CentroidMode::kEma ? update_continual(std::move(state), batch)
                                            : update(std::move(state), batch);
}

inline EmbeddingBatch center(const EmbeddingBatch& batch, const AdapterState& state) {
  detail::check_batch(batch, state.dim());
  EmbeddingBatch out = batch;
  auto mean = state.mean();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] -= mean[j];
  }
  return out;
}

/// Unadapted head output.
inline PredictionBatch predict(const LinearHead& head, const EmbeddingBatch& batch) {
  detail::check_batch(batch, head.dim());
  return detail::apply_head(head, batch, head.bias());
}

/// Head output on centered embeddings. The stored bias is applied unchanged;
/// an empty state reproduces the unadapted output.
inline PredictionBatch predict(const LinearHead& head, const EmbeddingBatch& batch,
                               const AdapterState& state) {
  require_dim(state.dim(), head.dim(), "state");
  return predict(head, center(batch, state));
}

/// Variant for heads trained with squared loss: the bias is replaced by the
/// constant vector 1/C.
inline PredictionBatch predict_mse(const LinearHead& head, const EmbeddingBatch& batch,
                                   const AdapterState& state) {
  require_dim(state.dim(), head.dim(), "state");
  require_dim(batch.dim(), head.dim(), "batch");
  const std::vector<double> bias(head.num_classes(),
                                 1.0 / static_cast<double>(head.num_classes()));
  return detail::apply_head(head, center(batch, state), bias);
}

/// Combines two cumulative-mean shards as if their samples had been absorbed
/// by a single state.
inline AdapterState merge(const AdapterState& a, const AdapterState& b) {
  if (a.mode_ != CentroidMode::kCumulativeMean || b.mode_ != CentroidMode::kCumulativeMean) {
    throw Error(ErrorCode::kWrongMode, "merge() requires cumulative-mean states");
  }
  require_dim(b.dim(), a.dim(), "merge");
  AdapterState out = AdapterState::cumulative(a.dim());
  out.count_ = a.count_ + b.count_;
  if (out.count_ == 0) return out;
  const double ca = static_cast<double>(a.count_);
  const double cb = static_cast<double>(b.count_);
  const double total = static_cast<double>(out.count_);
  for (std::size_t j = 0; j < out.mean_.size(); ++j) {
    out.mean_[j] = (ca * a.mean_[j] + cb * b.mean_[j]) / total;
  }
  return out;
}

}  // namespace neo
