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

// Latent-space analyses over paired clean/corrupt embeddings.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neo/adapter.hpp"
#include "neo/embedding.hpp"
#include "neo/error.hpp"
#include "neo/geometry.hpp"
#include "neo/metrics.hpp"

namespace neo {

/// corrupt - clean split into a shared global part, per-class parts and
/// per-sample residuals.
struct ShiftDecomposition {
  std::vector<double> global;
  EmbeddingBatch per_class;  // num_classes x d; zero rows for absent classes
  EmbeddingBatch residuals;  // n x d
  std::vector<std::size_t> class_counts;
  std::vector<std::size_t> absent_classes;
};

namespace detail {

inline std::vector<double> mean_rows(const EmbeddingBatch& b) {
  auto s = column_sum(b);
  for (double& x : s) x /= static_cast<double>(b.rows());
  return s;
}

inline void check_pair(const PairedDataset& ds) {
  require_dim(ds.corrupt.dim(), ds.clean.dim(), "corrupt");
  if (ds.corrupt.rows() != ds.clean.rows() || ds.labels.size() != ds.clean.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "clean, corrupt and labels differ in length");
  }
  require_finite(ds.clean, "clean");
  require_finite(ds.corrupt, "corrupt");
  require_labels(ds.labels, ds.num_classes);
}

}  // namespace detail

inline ShiftDecomposition decompose_shift(const PairedDataset& ds) {
  detail::check_pair(ds);
  if (ds.size() == 0) throw Error(ErrorCode::kEmptyClass, "dataset has no samples");
  const std::size_t n = ds.size();
  const std::size_t dim = ds.clean.dim();
  const std::size_t num_classes = ds.num_classes;

  ShiftDecomposition out;
  out.global.assign(dim, 0.0);
  {
    const auto mc = detail::mean_rows(ds.corrupt);
    const auto mx = detail::mean_rows(ds.clean);
    for (std::size_t j = 0; j < dim; ++j) out.global[j] = mc[j] - mx[j];
  }

  // Per-class mean of (corrupt - clean), which equals the difference of the
  // per-class means.
  out.per_class = EmbeddingBatch(num_classes, dim);
  out.class_counts.assign(num_classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto pc = out.per_class.row(ds.labels[i]);
    auto a = ds.corrupt.row(i);
    auto b = ds.clean.row(i);
    for (std::size_t j = 0; j < dim; ++j) pc[j] += a[j] - b[j];
    ++out.class_counts[ds.labels[i]];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto pc = out.per_class.row(c);
    if (out.class_counts[c] == 0) {
      out.absent_classes.push_back(c);
      continue;
    }
    const double cnt = static_cast<double>(out.class_counts[c]);
    for (std::size_t j = 0; j < dim; ++j) pc[j] = pc[j] / cnt - out.global[j];
  }

  out.residuals = EmbeddingBatch(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = out.residuals.row(i);
    auto a = ds.corrupt.row(i);
    auto b = ds.clean.row(i);
    auto pc = out.per_class.row(ds.labels[i]);
    for (std::size_t j = 0; j < dim; ++j) r[j] = a[j] - b[j] - out.global[j] - pc[j];
  }
  return out;
}

enum class AlignmentRow { kRaw, kMinusGlobal, kMinusGlobalClass, kMinusAll, kMinusCorruptMean };

inline constexpr std::array kAlignmentRows = {
    AlignmentRow::kRaw, AlignmentRow::kMinusGlobal, AlignmentRow::kMinusGlobalClass,
    AlignmentRow::kMinusAll, AlignmentRow::kMinusCorruptMean};

inline std::string_view alignment_row_name(AlignmentRow r) {
  switch (r) {
    case AlignmentRow::kRaw: return "Raw";
    case AlignmentRow::kMinusGlobal: return "MinusGlobal";
    case AlignmentRow::kMinusGlobalClass: return "MinusGlobalClass";
    case AlignmentRow::kMinusAll: return "MinusAll";
    case AlignmentRow::kMinusCorruptMean: return "MinusCorruptMean";
  }
  return "?";
}

struct AlignmentEntry {
  AlignmentRow label;
  double mean_cosine = 0.0;    // mean of cos(clean, adjusted)
  double mean_norm_gap = 0.0;  // mean of | ||clean|| - ||adjusted|| |
};

struct AlignmentTable {
  std::vector<AlignmentEntry> rows;

  const AlignmentEntry& at(AlignmentRow label) const {
    for (const auto& r : rows) {
      if (r.label == label) return r;
    }
    throw Error(ErrorCode::kInvalidArgument, "missing alignment row");
  }
};

/// Compares each clean embedding with progressively adjusted versions of its
/// corrupt counterpart.
inline AlignmentTable alignment_table(const PairedDataset& ds) {
  const ShiftDecomposition dec = decompose_shift(ds);
  const auto corrupt_mean = detail::mean_rows(ds.corrupt);
  const std::size_t n = ds.size();
  const std::size_t dim = ds.clean.dim();

  AlignmentTable table;
  std::vector<double> adjusted(dim);
  for (AlignmentRow label : kAlignmentRows) {
    double cos_sum = 0.0;
    double gap_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto x = ds.clean.row(i);
      auto a = ds.corrupt.row(i);
      auto pc = dec.per_class.row(ds.labels[i]);
      auto res = dec.residuals.row(i);
      for (std::size_t j = 0; j < dim; ++j) {
        double v = a[j];
        switch (label) {
          case AlignmentRow::kRaw: break;
          case AlignmentRow::kMinusGlobal: v -= dec.global[j]; break;
          case AlignmentRow::kMinusGlobalClass: v -= dec.global[j] + pc[j]; break;
          case AlignmentRow::kMinusAll: v -= dec.global[j] + pc[j] + res[j]; break;
          case AlignmentRow::kMinusCorruptMean: v -= corrupt_mean[j]; break;
        }
        adjusted[j] = v;
      }
      const double nx = norm(x);
      const double na = norm(adjusted);
      if (nx < 1e-30 || na < 1e-30) {
        throw Error(ErrorCode::kZeroNormVector,
                    "zero-norm vector at row " + std::to_string(i) + " (" +
                        std::string(alignment_row_name(label)) + ")");
      }
      cos_sum += dot(x, adjusted) / (nx * na);
      gap_sum += std::abs(nx - na);
    }
    table.rows.push_back({label, cos_sum / static_cast<double>(n), gap_sum / static_cast<double>(n)});
  }
  return table;
}

struct ShiftHistogram {
  std::vector<std::size_t> counts_by_dim;  // length d
  std::vector<std::size_t> ranked_dims;    // dimensions by descending count
  std::vector<std::size_t> ranked_counts;
  std::vector<double> cumulative;          // cumulative[k] = fraction in top k+1 dims
};

/// For every sample, the dimension with the largest |clean - corrupt|
/// (lowest index on ties), tallied and ranked.
inline ShiftHistogram top_shift_histogram(const PairedDataset& ds) {
  require_dim(ds.corrupt.dim(), ds.clean.dim(), "corrupt");
  if (ds.corrupt.rows() != ds.clean.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "clean and corrupt differ in length");
  }
  if (ds.clean.empty()) throw Error(ErrorCode::kEmptyInput, "dataset has no samples");
  const std::size_t dim = ds.clean.dim();
  ShiftHistogram h;
  h.counts_by_dim.assign(dim, 0);
  for (std::size_t i = 0; i < ds.clean.rows(); ++i) {
    auto a = ds.clean.row(i);
    auto b = ds.corrupt.row(i);
    std::size_t best = 0;
    double best_mag = -1.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double m = std::abs(a[j] - b[j]);
      if (m > best_mag) {
        best_mag = m;
        best = j;
      }
    }
    ++h.counts_by_dim[best];
  }
  h.ranked_dims.resize(dim);
  std::iota(h.ranked_dims.begin(), h.ranked_dims.end(), std::size_t{0});
  std::stable_sort(h.ranked_dims.begin(), h.ranked_dims.end(), [&](std::size_t x, std::size_t y) {
    return h.counts_by_dim[x] > h.counts_by_dim[y];
  });
  h.ranked_counts.resize(dim);
  h.cumulative.resize(dim);
  std::size_t running = 0;
  const double n = static_cast<double>(ds.clean.rows());
  for (std::size_t k = 0; k < dim; ++k) {
    h.ranked_counts[k] = h.counts_by_dim[h.ranked_dims[k]];
    running += h.ranked_counts[k];
    h.cumulative[k] = static_cast<double>(running) / n;
  }
  return h;
}

struct CosineArgmaxCheck {
  std::vector<bool> agree;
  std::vector<std::size_t> linear_class;
  std::vector<std::size_t> cosine_class;
  std::size_t n_agree = 0;

  double agreement() const {
    return agree.empty() ? 1.0 : static_cast<double>(n_agree) / static_cast<double>(agree.size());
  }
};

/// Numerical probe that argmax_c w_c.h and argmax_c |w_c||h|cos(w_c, h)
/// pick the same class. Requires a zero-bias head.
inline CosineArgmaxCheck check_cosine_argmax(const LinearHead& head, const EmbeddingBatch& batch) {
  for (double b : head.bias()) {
    if (std::abs(b) > 1e-12) throw Error(ErrorCode::kNonZeroBias, "head bias is not zero");
  }
  require_dim(batch.dim(), head.dim(), "batch");
  require_finite(batch, "batch");
  const std::size_t num_classes = head.num_classes();
  std::vector<double> wnorm(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) wnorm[c] = norm(head.weight_row(c));

  CosineArgmaxCheck out;
  std::vector<double> linear(num_classes);
  std::vector<double> via_cos(num_classes);
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    auto h = batch.row(i);
    const double hn = norm(h);
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double d = dot(head.weight_row(c), h);
      linear[c] = d;
      via_cos[c] = (hn == 0.0 || wnorm[c] == 0.0) ? 0.0 : wnorm[c] * hn * (d / (wnorm[c] * hn));
    }
    const std::size_t a = argmax(linear);
    const std::size_t b = argmax(via_cos);
    out.linear_class.push_back(a);
    out.cosine_class.push_back(b);
    out.agree.push_back(a == b);
    out.n_agree += a == b;
  }
  return out;
}

struct TransferDomain {
  std::string name;
  EmbeddingBatch embeddings;
  std::vector<std::size_t> labels;
};

struct TransferMatrices {
  std::vector<std::string> domains;
  std::vector<std::vector<double>> centroid_cosine;  // [source][applied]
  std::vector<std::vector<double>> accuracy_delta;   // [source][applied]
  std::vector<double> baseline_accuracy;             // unadapted, per domain
};

/// Fits one centroid per domain and applies every centroid to every domain.
/// accuracy_delta[i][j] is the accuracy on domain j when centered with
/// domain i's centroid, minus the unadapted accuracy on domain j.
inline TransferMatrices transfer_matrix(const std::vector<TransferDomain>& domains,
                                        const LinearHead& head,
                                        EvalMode mode = EvalMode::kNeo) {
  if (domains.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two domains");
  const std::size_t k = domains.size();
  std::vector<AdapterState> centroids;
  TransferMatrices out;
  for (const auto& d : domains) {
    require_dim(d.embeddings.dim(), head.dim(), d.name.c_str());
    if (d.labels.size() != d.embeddings.rows()) {
      throw Error(ErrorCode::kLengthMismatch, d.name + ": labels and embeddings differ");
    }
    centroids.push_back(update(AdapterState::cumulative(head.dim()), d.embeddings));
    if (norm(centroids.back().mean()) < 1e-30) {
      throw Error(ErrorCode::kZeroNormVector, d.name + ": centroid has zero norm");
    }
    out.domains.push_back(d.name);
  }

  EvalOptions base_opt;
  base_opt.mode = EvalMode::kNoAdapt;
  base_opt.protocol = Protocol::kFrozen;
  for (const auto& d : domains) {
    out.baseline_accuracy.push_back(
        evaluate(head, d.embeddings, d.labels, std::nullopt, base_opt).report.accuracy);
  }

  EvalOptions opt;
  opt.mode = mode == EvalMode::kNeoMse ? EvalMode::kNeoMse : EvalMode::kNeo;
  opt.protocol = Protocol::kFrozen;
  out.centroid_cosine.assign(k, std::vector<double>(k));
  out.accuracy_delta.assign(k, std::vector<double>(k));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      out.centroid_cosine[i][j] = cosine(centroids[i].mean(), centroids[j].mean());
      const double acc =
          evaluate(head, domains[j].embeddings, domains[j].labels, centroids[i], opt)
              .report.accuracy;
      out.accuracy_delta[i][j] = acc - out.baseline_accuracy[j];
    }
  }
  return out;
}

}  // namespace neo
