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

// Synthetic neural-collapse geometry: simplex-ETF class means, self-dual
// heads, near-collapsed samples, and embedding-space corruptions of the form
//
//   corrupt = clean + global + class_shift[label] + residual noise.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neo/adapter.hpp"
#include "neo/embedding.hpp"
#include "neo/error.hpp"
#include "neo/random.hpp"

namespace neo {

struct EtfGeometry {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  EmbeddingBatch class_means;  // num_classes x dim, row c is mu_c
  double scale = 1.0;
  std::uint64_t seed = 0;
};

struct ShiftModel {
  std::vector<double> global;                 // length d
  std::optional<EmbeddingBatch> class_shifts;  // C x d, columns sum to zero
  double residual_std = 0.0;
  std::optional<std::vector<std::size_t>> sparse_support;
  std::uint64_t seed = 0;

  static ShiftModel none(std::size_t dim) {
    ShiftModel sm;
    sm.global.assign(dim, 0.0);
    return sm;
  }
};

struct PairedDataset {
  EmbeddingBatch clean;
  EmbeddingBatch corrupt;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }

  /// Rows [begin, end) of both views.
  PairedDataset slice(std::size_t begin, std::size_t end) const {
    return {clean.slice(begin, end), corrupt.slice(begin, end),
            std::vector<std::size_t>(labels.begin() + begin, labels.begin() + end),
            num_classes};
  }
};

namespace detail {

// Orthonormalizes the columns of a dim x k column-major matrix in place.
// Modified Gram-Schmidt with one re-orthogonalization pass keeps the result
// orthonormal to ~1e-15 even for tall random matrices.
inline void orthonormalize_columns(std::vector<double>& a, std::size_t dim, std::size_t k) {
  for (std::size_t col = 0; col < k; ++col) {
    std::span<double> v{a.data() + col * dim, dim};
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t prev = 0; prev < col; ++prev) {
        std::span<const double> q{a.data() + prev * dim, dim};
        const double proj = dot(q, v);
        for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * q[i];
      }
    }
    const double n = norm(v);
    if (n < 1e-12) throw Error(ErrorCode::kInvalidArgument, "degenerate random basis");
    for (double& x : v) x /= n;
  }
}

// Helmert basis: C x (C-1), orthonormal columns spanning the complement of
// the all-ones vector. Entry (c, k) for k = 1..C-1.
inline double helmert(std::size_t c, std::size_t k) {
  const double kk = static_cast<double>(k);
  const double denom = std::sqrt(kk * (kk + 1.0));
  if (c < k) return 1.0 / denom;
  if (c == k) return -kk / denom;
  return 0.0;
}

inline void require_labels(std::span<const std::size_t> labels, std::size_t num_classes) {
  for (std::size_t y : labels) {
    if (y >= num_classes) {
      throw Error(ErrorCode::kInvalidArgument,
                  "label " + std::to_string(y) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace detail

/// Simplex ETF with `num_classes` means of norm `scale` in R^dim, centered
/// at the origin and randomly rotated by an orthonormal frame drawn from
/// `seed` (QR of a Gaussian dim x (C-1) matrix).
inline EtfGeometry build_etf(std::size_t num_classes, std::size_t dim, double scale,
                             std::uint64_t seed) {
  if (num_classes < 2) throw Error(ErrorCode::kInvalidDimension, "need C >= 2");
  if (dim + 1 < num_classes) {
    throw Error(ErrorCode::kInvalidDimension,
                "d = " + std::to_string(dim) + " < C - 1 = " + std::to_string(num_classes - 1));
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorCode::kInvalidArgument, "scale must be positive");
  }
  const std::size_t k = num_classes - 1;
  Rng rng(seed);
  std::vector<double> frame(dim * k);
  for (double& x : frame) x = rng.gaussian();
  detail::orthonormalize_columns(frame, dim, k);

  const double c = static_cast<double>(num_classes);
  const double factor = scale * std::sqrt(c / (c - 1.0));
  EtfGeometry g{num_classes, dim, EmbeddingBatch(num_classes, dim), scale, seed};
  for (std::size_t cls = 0; cls < num_classes; ++cls) {
    auto mu = g.class_means.row(cls);
    for (std::size_t j = 1; j <= k; ++j) {
      const double coef = factor * detail::helmert(cls, j);
      if (coef == 0.0) continue;
      const double* q = frame.data() + (j - 1) * dim;
      for (std::size_t i = 0; i < dim; ++i) mu[i] += coef * q[i];
    }
  }
  return g;
}

/// Self-dual head: w_c = mu_c, zero bias.
inline LinearHead head_from_etf(const EtfGeometry& geom) {
  const auto means = geom.class_means.data();
  return LinearHead(geom.num_classes, geom.dim,
                    std::vector<double>(means.begin(), means.end()),
                    std::vector<double>(geom.num_classes, 0.0));
}

/// Balanced sample of `n_per_class` rows per class, each mu_c plus isotropic
/// Gaussian noise of standard deviation `within_std`. Row order is a seeded
/// shuffle of the labels; the generator draws the shuffle first and the
/// noise second, row by row. The corrupt view starts as a copy of clean.
inline PairedDataset sample_clean(const EtfGeometry& geom, std::size_t n_per_class,
                                  double within_std, std::uint64_t seed) {
  if (n_per_class == 0) throw Error(ErrorCode::kInvalidArgument, "n_per_class must be >= 1");
  if (!(within_std >= 0.0) || !std::isfinite(within_std)) {
    throw Error(ErrorCode::kInvalidArgument, "within_std must be >= 0");
  }
  const std::size_t n = n_per_class * geom.num_classes;
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i / n_per_class;
  Rng rng(seed);
  rng.shuffle(labels);

  EmbeddingBatch clean(n, geom.dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto mu = geom.class_means.row(labels[i]);
    auto r = clean.row(i);
    for (std::size_t j = 0; j < geom.dim; ++j) {
      r[j] = within_std == 0.0 ? mu[j] : mu[j] + within_std * rng.gaussian();
    }
  }
  EmbeddingBatch corrupt = clean;
  return {std::move(clean), std::move(corrupt), std::move(labels), geom.num_classes};
}

/// Checks a shift model against a dataset shape; throws on violation.
inline void validate_shift(const ShiftModel& sm, std::size_t dim, std::size_t num_classes) {
  require_dim(sm.global.size(), dim, "shift global");
  if (!(sm.residual_std >= 0.0) || !std::isfinite(sm.residual_std)) {
    throw Error(ErrorCode::kInvalidArgument, "residual_std must be >= 0");
  }
  for (double v : sm.global) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteInput, "shift global has NaN/Inf");
  }
  if (sm.class_shifts) {
    const auto& cs = *sm.class_shifts;
    require_dim(cs.dim(), dim, "class shifts");
    if (cs.rows() != num_classes) {
      throw Error(ErrorCode::kDimensionMismatch, "class shifts need one row per class");
    }
    require_finite(cs, "class shifts");
    const auto sum = detail::column_sum(cs);
    for (double v : sum) {
      if (std::abs(v) > 1e-9) {
        throw Error(ErrorCode::kInvalidArgument, "class shifts must have zero column mean");
      }
    }
  }
  if (sm.sparse_support) {
    std::vector<bool> in_support(dim, false);
    for (std::size_t j : *sm.sparse_support) {
      if (j >= dim) throw Error(ErrorCode::kInvalidArgument, "support index out of range");
      in_support[j] = true;
    }
    for (std::size_t j = 0; j < dim; ++j) {
      if (!in_support[j] && sm.global[j] != 0.0) {
        throw Error(ErrorCode::kInvalidArgument, "global shift leaks outside sparse support");
      }
    }
  }
}

/// Rebuilds the corrupt view from the clean one. Residual noise is drawn row
/// by row from Rng(sm.seed).
inline PairedDataset apply_shift(PairedDataset ds, const ShiftModel& sm) {
  require_dim(ds.corrupt.dim(), ds.clean.dim(), "corrupt");
  validate_shift(sm, ds.clean.dim(), ds.num_classes);
  detail::require_labels(ds.labels, ds.num_classes);
  if (ds.labels.size() != ds.clean.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "labels and rows differ");
  }
  Rng rng(sm.seed);
  ds.corrupt = ds.clean;
  for (std::size_t i = 0; i < ds.corrupt.rows(); ++i) {
    auto r = ds.corrupt.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      double v = r[j] + sm.global[j];
      if (sm.class_shifts) v += (*sm.class_shifts)(ds.labels[i], j);
      if (sm.residual_std > 0.0) v += sm.residual_std * rng.gaussian();
      r[j] = v;
    }
  }
  return ds;
}

/// Global shift of Euclidean norm `length` along a seeded uniform direction.
inline std::vector<double> random_direction(std::size_t dim, double length, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(dim);
  for (double& x : v) x = rng.gaussian();
  const double n = norm(v);
  for (double& x : v) x *= length / n;
  return v;
}

/// Global shift on `support_size` seeded dimensions, each +/- magnitude.
inline ShiftModel sparse_global_shift(std::size_t dim, std::size_t support_size,
                                      double magnitude, double residual_std,
                                      std::uint64_t seed) {
  if (support_size > dim) throw Error(ErrorCode::kInvalidArgument, "support larger than dim");
  Rng rng(seed);
  std::vector<std::size_t> dims(dim);
  for (std::size_t j = 0; j < dim; ++j) dims[j] = j;
  rng.shuffle(dims);
  dims.resize(support_size);
  ShiftModel sm = ShiftModel::none(dim);
  for (std::size_t j : dims) sm.global[j] = rng.uniform() < 0.5 ? -magnitude : magnitude;
  sm.sparse_support = std::move(dims);
  sm.residual_std = residual_std;
  sm.seed = rng.next_u64();
  return sm;
}

/// Gaussian per-class shifts with the column mean removed.
inline EmbeddingBatch random_class_shifts(std::size_t num_classes, std::size_t dim,
                                          double stddev, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingBatch cs(num_classes, dim);
  for (double& x : cs.data()) x = stddev * rng.gaussian();
  const auto sum = detail::column_sum(cs);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto r = cs.row(c);
    for (std::size_t j = 0; j < dim; ++j) r[j] -= sum[j] / static_cast<double>(num_classes);
  }
  return cs;
}

// ---------------------------------------------------------------------------
// Neural-collapse verification.

struct NcTolerances {
  double nc1 = 0.5;   // tr(Sigma_W) / tr(Sigma_B)
  double nc2 = 0.1;   // Gram and equal-norm deviation
  double nc3 = 0.1;   // Frobenius gap between normalized W and M
  double nc4 = 0.01;  // disagreement fraction
};

struct NcReport {
  double nc1_within_trace = 0.0;   // tr(Sigma_W)
  double nc1_ratio = 0.0;          // tr(Sigma_W) / tr(Sigma_B)
  double nc2_gram_deviation = 0.0; // max |<m_c, m_c'> - target| over empirical means
  double nc2_norm_deviation = 0.0; // max relative deviation of ||mu_c - mu_G||
  double geometry_gram_deviation = 0.0;
  double geometry_mean_norm = 0.0;  // ||(1/C) sum_c mu_c|| of the generator
  double nc3_gap = 0.0;
  double nc4_disagreement = 0.0;
  bool nc1_pass = false;
  bool nc2_pass = false;
  bool nc3_pass = false;
  bool nc4_pass = false;

  bool all_pass() const noexcept { return nc1_pass && nc2_pass && nc3_pass && nc4_pass; }
};

/// Max deviation of the normalized, centered Gram matrix of `means` from
/// C/(C-1) delta - 1/(C-1).
inline double etf_gram_deviation(const EmbeddingBatch& means, std::span<const double> center) {
  const std::size_t num_classes = means.rows();
  const double c = static_cast<double>(num_classes);
  std::vector<std::vector<double>> unit(num_classes, std::vector<double>(means.dim()));
  for (std::size_t k = 0; k < num_classes; ++k) {
    auto r = means.row(k);
    for (std::size_t j = 0; j < means.dim(); ++j) unit[k][j] = r[j] - center[j];
    const double n = norm(unit[k]);
    if (n < 1e-30) throw Error(ErrorCode::kZeroNormVector, "class mean at the global mean");
    for (double& x : unit[k]) x /= n;
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < num_classes; ++a) {
    for (std::size_t b = 0; b < num_classes; ++b) {
      const double target = (a == b ? c / (c - 1.0) : 0.0) - 1.0 / (c - 1.0);
      worst = std::max(worst, std::abs(dot(unit[a], unit[b]) - target));
    }
  }
  return worst;
}

/// Measures NC1-NC4 on the clean view of `ds`. NC3/NC4 use `head`, or the
/// self-dual head of `geom` when none is given.
inline NcReport verify_nc(const EtfGeometry& geom, const PairedDataset& ds,
                          const NcTolerances& tol = {},
                          const std::optional<LinearHead>& head = std::nullopt) {
  const LinearHead w = head ? *head : head_from_etf(geom);
  const std::size_t num_classes = geom.num_classes;
  const std::size_t dim = geom.dim;
  require_dim(ds.clean.dim(), dim, "dataset");
  require_dim(w.dim(), dim, "head");
  if (ds.clean.empty()) throw Error(ErrorCode::kEmptyInput, "dataset is empty");
  detail::require_labels(ds.labels, num_classes);

  NcReport rep;
  rep.geometry_gram_deviation =
      etf_gram_deviation(geom.class_means, std::vector<double>(dim, 0.0));
  {
    auto s = detail::column_sum(geom.class_means);
    for (double& x : s) x /= static_cast<double>(num_classes);
    rep.geometry_mean_norm = norm(s);
  }

  // Empirical class means and global mean.
  EmbeddingBatch means(num_classes, dim);
  std::vector<std::size_t> counts(num_classes, 0);
  std::vector<double> global(dim, 0.0);
  for (std::size_t i = 0; i < ds.clean.rows(); ++i) {
    auto r = ds.clean.row(i);
    auto m = means.row(ds.labels[i]);
    for (std::size_t j = 0; j < dim; ++j) {
      m[j] += r[j];
      global[j] += r[j];
    }
    ++counts[ds.labels[i]];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      throw Error(ErrorCode::kEmptyClass, "class " + std::to_string(c) + " has no samples");
    }
    for (double& x : means.row(c)) x /= static_cast<double>(counts[c]);
  }
  for (double& x : global) x /= static_cast<double>(ds.clean.rows());

  // NC1: within-class scatter relative to between-class scatter.
  double within = 0.0;
  for (std::size_t i = 0; i < ds.clean.rows(); ++i) {
    auto r = ds.clean.row(i);
    auto m = means.row(ds.labels[i]);
    for (std::size_t j = 0; j < dim; ++j) within += (r[j] - m[j]) * (r[j] - m[j]);
  }
  within /= static_cast<double>(ds.clean.rows());
  double between = 0.0;
  std::vector<double> centered_norms(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto m = means.row(c);
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) sq += (m[j] - global[j]) * (m[j] - global[j]);
    between += sq;
    centered_norms[c] = std::sqrt(sq);
  }
  between /= static_cast<double>(num_classes);
  rep.nc1_within_trace = within;
  rep.nc1_ratio = between > 0.0 ? within / between : INFINITY;

  // NC2.
  rep.nc2_gram_deviation = etf_gram_deviation(means, global);
  double avg_norm = 0.0;
  for (double n : centered_norms) avg_norm += n;
  avg_norm /= static_cast<double>(num_classes);
  for (double n : centered_norms) {
    rep.nc2_norm_deviation = std::max(rep.nc2_norm_deviation, std::abs(n - avg_norm) / avg_norm);
  }

  // NC3: || W/||W||_F - M^T/||M||_F ||_F with M's columns mu_c - mu_G.
  double w_fro = norm(w.weights());
  double m_fro = 0.0;
  for (double n : centered_norms) m_fro += n * n;
  m_fro = std::sqrt(m_fro);
  double gap = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto wr = w.weight_row(c);
    auto m = means.row(c);
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = wr[j] / w_fro - (m[j] - global[j]) / m_fro;
      gap += d * d;
    }
  }
  rep.nc3_gap = std::sqrt(gap);

  // NC4: linear argmax vs nearest empirical class center.
  const PredictionBatch pred = predict(w, ds.clean);
  std::size_t disagree = 0;
  std::vector<double> dist(num_classes);
  for (std::size_t i = 0; i < ds.clean.rows(); ++i) {
    auto r = ds.clean.row(i);
    for (std::size_t c = 0; c < num_classes; ++c) {
      auto m = means.row(c);
      double sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) sq += (r[j] - m[j]) * (r[j] - m[j]);
      dist[c] = -sq;
    }
    if (argmax(dist) != pred.predicted[i]) ++disagree;
  }
  rep.nc4_disagreement = static_cast<double>(disagree) / static_cast<double>(ds.clean.rows());

  rep.nc1_pass = rep.nc1_ratio <= tol.nc1;
  rep.nc2_pass = rep.nc2_gram_deviation <= tol.nc2 && rep.nc2_norm_deviation <= tol.nc2;
  rep.nc3_pass = rep.nc3_gap <= tol.nc3;
  rep.nc4_pass = rep.nc4_disagreement <= tol.nc4;
  return rep;
}

}  // namespace neo
