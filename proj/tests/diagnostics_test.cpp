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

#include "neo/diagnostics.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace neo {
namespace {

PairedDataset clean_only(std::size_t c, std::size_t d, std::size_t per_class, double sd,
                         std::uint64_t seed = 1) {
  return sample_clean(build_etf(c, d, 1.0, seed), per_class, sd, seed + 1);
}

TEST(DecomposeShiftTest, IdentityPairIsZero) {
  const auto ds = clean_only(4, 8, 5, 0.2);
  const auto dec = decompose_shift(ds);
  for (double v : dec.global) EXPECT_EQ(v, 0.0);
  for (double v : dec.per_class.data()) EXPECT_EQ(v, 0.0);
  for (double v : dec.residuals.data()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(dec.absent_classes.empty());
}

TEST(DecomposeShiftTest, RecoversInjectedGlobal) {
  ShiftModel sm = ShiftModel::none(8);
  sm.global = random_direction(8, 2.0, 4);
  const auto ds = apply_shift(clean_only(4, 8, 5, 0.2), sm);
  const auto dec = decompose_shift(ds);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(dec.global[j], sm.global[j], 1e-12);
  for (double v : dec.per_class.data()) EXPECT_NEAR(v, 0.0, 1e-12);
  for (double v : dec.residuals.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(DecomposeShiftTest, RecoversInjectedClassShifts) {
  ShiftModel sm = ShiftModel::none(12);
  sm.global = random_direction(12, 1.5, 4);
  sm.class_shifts = random_class_shifts(5, 12, 0.7, 5);
  const auto ds = apply_shift(clean_only(5, 12, 8, 0.3), sm);
  const auto dec = decompose_shift(ds);
  for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(dec.global[j], sm.global[j], 1e-9);
  for (std::size_t c = 0; c < 5; ++c) {
    for (std::size_t j = 0; j < 12; ++j) {
      EXPECT_NEAR(dec.per_class(c, j), (*sm.class_shifts)(c, j), 1e-9);
    }
  }
}

TEST(DecomposeShiftTest, ReconstructionWithResidualNoise) {
  ShiftModel sm = ShiftModel::none(6);
  sm.global = random_direction(6, 1.0, 4);
  sm.class_shifts = random_class_shifts(3, 6, 0.5, 5);
  sm.residual_std = 0.4;
  sm.seed = 6;
  // Unbalanced: drop some rows so class counts differ.
  const auto ds = apply_shift(clean_only(3, 6, 10, 0.1), sm).slice(0, 23);
  const auto dec = decompose_shift(ds);
  std::vector<double> weighted(6, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      const double rebuilt = ds.clean(i, j) + dec.global[j] + dec.per_class(ds.labels[i], j) +
                             dec.residuals(i, j);
      EXPECT_NEAR(rebuilt, ds.corrupt(i, j), 1e-9);
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < 6; ++j) {
      weighted[j] += static_cast<double>(dec.class_counts[c]) * dec.per_class(c, j);
    }
  }
  for (double v : weighted) EXPECT_NEAR(v, 0.0, 1e-7);
}

TEST(DecomposeShiftTest, AbsentClassesAreRecorded) {
  auto ds = clean_only(3, 4, 2, 0.1);
  ds.num_classes = 5;
  const auto dec = decompose_shift(ds);
  EXPECT_EQ(dec.absent_classes, (std::vector<std::size_t>{3, 4}));
}

TEST(AlignmentTableTest, IdentityPair) {
  // Balanced and collapsed: the clean mean vanishes, so every row is exact.
  const auto t = alignment_table(clean_only(4, 8, 5, 0.0));
  ASSERT_EQ(t.rows.size(), 5u);
  for (const auto& r : t.rows) {
    EXPECT_NEAR(r.mean_cosine, 1.0, 1e-12);
    EXPECT_NEAR(r.mean_norm_gap, 0.0, 1e-12);
  }
}

TEST(AlignmentTableTest, IdentityPairWithNonzeroMean) {
  // Only the corrupt-mean row sees the clean mean.
  const auto ds = clean_only(4, 8, 5, 0.2);
  const auto t = alignment_table(ds);
  for (auto row : {AlignmentRow::kRaw, AlignmentRow::kMinusGlobal, AlignmentRow::kMinusGlobalClass,
                   AlignmentRow::kMinusAll}) {
    EXPECT_NEAR(t.at(row).mean_cosine, 1.0, 1e-12);
    EXPECT_NEAR(t.at(row).mean_norm_gap, 0.0, 1e-12);
  }
  std::vector<double> mu(8, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < 8; ++j) mu[j] += ds.clean(i, j) / static_cast<double>(ds.size());
  }
  double cos_sum = 0.0;
  double gap_sum = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::vector<double> x(ds.clean.row(i).begin(), ds.clean.row(i).end());
    std::vector<double> y(8);
    for (std::size_t j = 0; j < 8; ++j) y[j] = x[j] - mu[j];
    cos_sum += neo::cosine(x, y);
    gap_sum += std::abs(neo::norm(x) - neo::norm(y));
  }
  const double n = static_cast<double>(ds.size());
  EXPECT_NEAR(t.at(AlignmentRow::kMinusCorruptMean).mean_cosine, cos_sum / n, 1e-12);
  EXPECT_NEAR(t.at(AlignmentRow::kMinusCorruptMean).mean_norm_gap, gap_sum / n, 1e-12);
}

TEST(AlignmentTableTest, FullDecompositionReconstructs) {
  ShiftModel sm = ShiftModel::none(16);
  sm.global = random_direction(16, 3.0, 1);
  sm.class_shifts = random_class_shifts(4, 16, 0.5, 2);
  sm.residual_std = 0.5;
  sm.seed = 3;
  const auto t = alignment_table(apply_shift(clean_only(4, 16, 30, 0.1), sm));
  EXPECT_NEAR(t.at(AlignmentRow::kMinusAll).mean_cosine, 1.0, 1e-9);
  EXPECT_NEAR(t.at(AlignmentRow::kMinusAll).mean_norm_gap, 0.0, 1e-9);
  EXPECT_GT(t.at(AlignmentRow::kMinusGlobal).mean_cosine, t.at(AlignmentRow::kRaw).mean_cosine);
  EXPECT_GT(t.at(AlignmentRow::kMinusGlobalClass).mean_cosine,
            t.at(AlignmentRow::kMinusGlobal).mean_cosine);
}

TEST(AlignmentTableTest, PureGlobalShiftOrdering) {
  ShiftModel sm = ShiftModel::none(32);
  sm.global = random_direction(32, 3.0, 1);
  const auto t = alignment_table(apply_shift(clean_only(8, 32, 40, 0.05), sm));
  const double raw = t.at(AlignmentRow::kRaw).mean_cosine;
  const double minus_global = t.at(AlignmentRow::kMinusGlobal).mean_cosine;
  const double minus_mean = t.at(AlignmentRow::kMinusCorruptMean).mean_cosine;
  EXPECT_GE(minus_global, raw);
  EXPECT_LT(std::abs(minus_mean - minus_global), 0.02);
}

TEST(AlignmentTableTest, ZeroNormVector) {
  auto ds = clean_only(2, 3, 1, 0.0);
  for (double& v : ds.clean.row(0)) v = 0.0;
  ds.corrupt = ds.clean;
  try {
    (void)alignment_table(ds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kZeroNormVector);
  }
}

TEST(TopShiftHistogramTest, SingleDimension) {
  auto ds = clean_only(3, 8, 4, 0.3);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.corrupt(i, 3) += 5.0;
  const auto h = top_shift_histogram(ds);
  EXPECT_EQ(h.counts_by_dim[3], ds.size());
  EXPECT_EQ(h.ranked_dims[0], 3u);
  EXPECT_EQ(h.cumulative[0], 1.0);
  EXPECT_EQ(h.cumulative.back(), 1.0);
}

TEST(TopShiftHistogramTest, TiesGoToLowestDimension) {
  auto ds = clean_only(2, 4, 1, 0.0);
  for (double& v : ds.clean.data()) v = 0.0;
  ds.corrupt = ds.clean;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ds.corrupt(i, 1) += 2.0;
    ds.corrupt(i, 2) -= 2.0;
  }
  const auto h = top_shift_histogram(ds);
  EXPECT_EQ(h.counts_by_dim[1], 2u);
  EXPECT_EQ(h.counts_by_dim[2], 0u);
}

TEST(TopShiftHistogramTest, SparseSupportConcentratesMass) {
  const double sd = 0.2;
  const auto sm = sparse_global_shift(768, 10, 5.0 * sd, sd, 11);
  const auto ds = apply_shift(clean_only(3, 768, 200, 0.0), sm);
  const auto h = top_shift_histogram(ds);
  EXPECT_GE(h.cumulative[9], 0.95);
  for (std::size_t k = 0; k < 10; ++k) {
    const auto& s = *sm.sparse_support;
    EXPECT_NE(std::find(s.begin(), s.end(), h.ranked_dims[k]), s.end());
  }
}

TEST(TopShiftHistogramTest, IsotropicNoiseIsNearlyUniform) {
  const std::size_t d = 20;
  ShiftModel sm = ShiftModel::none(d);
  sm.residual_std = 1.0;
  sm.seed = 4;
  const auto ds = apply_shift(clean_only(2, d, 5000, 0.0), sm);
  const auto h = top_shift_histogram(ds);
  // Argmax is uniform over dims under exchangeability: each count ~ n/d with
  // binomial sd sqrt(n p (1-p)) ~ 30.8 for n = 10000, p = 0.05.
  for (std::size_t c : h.counts_by_dim) EXPECT_NEAR(static_cast<double>(c), 500.0, 5 * 30.8);
  for (std::size_t k = 0; k < d; ++k) {
    EXPECT_NEAR(h.cumulative[k], static_cast<double>(k + 1) / d, 0.05);
  }
}

TEST(CheckCosineArgmaxTest, AgreesOnZeroBiasHeads) {
  Rng rng(3);
  std::vector<double> w(10 * 16);
  for (double& x : w) x = rng.gaussian();
  const LinearHead head(10, 16, w, std::vector<double>(10, 0.0));
  const auto batch = testing::random_batch(1000, 16, 4);
  const auto chk = check_cosine_argmax(head, batch);
  EXPECT_EQ(chk.n_agree, 1000u);
  EXPECT_EQ(chk.agreement(), 1.0);
  for (double lambda : {0.1, 10.0}) {
    EmbeddingBatch scaled = batch;
    for (double& x : scaled.data()) x *= lambda;
    const auto s = check_cosine_argmax(head, scaled);
    EXPECT_EQ(s.linear_class, chk.linear_class);
    EXPECT_EQ(s.n_agree, 1000u);
  }
}

TEST(CheckCosineArgmaxTest, RejectsBias) {
  const LinearHead head(2, 2, {1, 0, 0, 1}, {0.0, 0.5});
  try {
    (void)check_cosine_argmax(head, testing::random_batch(3, 2, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonZeroBias);
  }
}

TransferDomain shifted_domain(const std::string& name, const EtfGeometry& g,
                              const std::vector<double>& shift, std::uint64_t seed) {
  ShiftModel sm = ShiftModel::none(g.dim);
  sm.global = shift;
  auto ds = apply_shift(sample_clean(g, 20, 0.0, seed), sm);
  return {name, ds.corrupt, ds.labels};
}

TEST(TransferMatrixTest, DuplicateDomains) {
  const auto g = build_etf(5, 16, 0.5, 1);
  const auto shift = random_direction(16, 2.0, 2);
  const auto d = shifted_domain("a", g, shift, 3);
  auto copy = d;
  copy.name = "b";
  const auto t = transfer_matrix({d, copy}, head_from_etf(g));
  EXPECT_NEAR(t.centroid_cosine[0][1], 1.0, 1e-12);
  EXPECT_NEAR(t.centroid_cosine[0][0], 1.0, 1e-9);
  EXPECT_EQ(t.accuracy_delta[0][1], t.accuracy_delta[1][0]);
}

TEST(TransferMatrixTest, OrthogonalShifts) {
  const auto g = build_etf(5, 16, 0.5, 1);
  std::vector<double> a(16, 0.0), b(16, 0.0), c(16, 0.0);
  a[0] = 2.0;
  b[1] = 2.0;
  c[2] = -2.0;
  const auto t = transfer_matrix(
      {shifted_domain("a", g, a, 3), shifted_domain("b", g, b, 4), shifted_domain("c", g, c, 5)},
      head_from_etf(g));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(t.centroid_cosine[i][i], 1.0, 1e-9);
    EXPECT_GE(t.accuracy_delta[i][i], 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(t.centroid_cosine[i][j], t.centroid_cosine[j][i]);
      if (i != j) {
        EXPECT_LT(std::abs(t.centroid_cosine[i][j]), 1e-9);
      }
    }
  }
}

TEST(TransferMatrixTest, NeedsTwoDomains) {
  const auto g = build_etf(3, 4, 1.0, 1);
  std::vector<double> s(4, 1.0);
  EXPECT_THROW((void)transfer_matrix({shifted_domain("a", g, s, 1)}, head_from_etf(g)), Error);
}

}  // namespace
}  // namespace neo
