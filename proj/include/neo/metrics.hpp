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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neo/adapter.hpp"
#include "neo/embedding.hpp"
#include "neo/error.hpp"

namespace neo {

inline constexpr std::size_t kDefaultEceBins = 15;
inline constexpr std::size_t kDefaultBatchSize = 64;
inline constexpr double kDefaultEmaAlpha = 0.01;

inline double accuracy(std::span<const std::size_t> predicted,
                       std::span<const std::size_t> labels) {
  if (predicted.size() != labels.size()) {
    throw Error(ErrorCode::kLengthMismatch,
                std::to_string(predicted.size()) + " predictions vs " +
                    std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw Error(ErrorCode::kEmptyInput, "no predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

struct EceBin {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
};

struct EceReport {
  std::size_t n_bins = 0;
  std::vector<double> bin_edges;  // n_bins + 1 values, 0 to 1
  std::vector<EceBin> per_bin;
  double ece = 0.0;
};

/// Bin of a confidence in (0, 1]: bins are right-closed, (k/n, (k+1)/n].
inline std::size_t ece_bin_index(double confidence, std::size_t n_bins) {
  const double pos = std::ceil(confidence * static_cast<double>(n_bins));
  const auto k = static_cast<std::size_t>(std::clamp(pos, 1.0, static_cast<double>(n_bins)));
  return k - 1;
}

/// Expected calibration error over equal-width bins. Empty bins carry no
/// weight.
inline EceReport ece(std::span<const double> confidence, const std::vector<bool>& correct,
                     std::size_t n_bins = kDefaultEceBins) {
  if (confidence.size() != correct.size()) {
    throw Error(ErrorCode::kLengthMismatch, "confidence and correctness lengths differ");
  }
  if (confidence.empty()) throw Error(ErrorCode::kEmptyInput, "no predictions");
  if (n_bins == 0) throw Error(ErrorCode::kInvalidArgument, "n_bins must be >= 1");

  EceReport rep;
  rep.n_bins = n_bins;
  rep.bin_edges.resize(n_bins + 1);
  for (std::size_t k = 0; k <= n_bins; ++k) {
    rep.bin_edges[k] = static_cast<double>(k) / static_cast<double>(n_bins);
  }
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<double> hit_sum(n_bins, 0.0);
  rep.per_bin.resize(n_bins);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    if (!(c > 0.0 && c <= 1.0)) {
      throw Error(ErrorCode::kOutOfRangeConfidence,
                  "confidence " + std::to_string(c) + " outside (0, 1]");
    }
    const std::size_t b = ece_bin_index(c, n_bins);
    ++rep.per_bin[b].count;
    conf_sum[b] += c;
    hit_sum[b] += correct[i] ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(confidence.size());
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& bin = rep.per_bin[b];
    if (bin.count == 0) continue;
    const double cnt = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / cnt;
    bin.mean_accuracy = hit_sum[b] / cnt;
    rep.ece += (cnt / n) * std::abs(bin.mean_accuracy - bin.mean_confidence);
  }
  return rep;
}

enum class EvalMode { kNoAdapt, kNeo, kNeoContinual, kNeoMse };
enum class Protocol {
  kOnline,  // update on each batch, then predict that batch
  kFrozen,  // predict with the given state, never update
};

inline std::string_view eval_mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::kNoAdapt: return "none";
    case EvalMode::kNeo: return "neo";
    case EvalMode::kNeoContinual: return "neo-continual";
    case EvalMode::kNeoMse: return "neo-mse";
  }
  return "?";
}

inline std::optional<EvalMode> parse_eval_mode(std::string_view s) {
  if (s == "none") return EvalMode::kNoAdapt;
  if (s == "neo") return EvalMode::kNeo;
  if (s == "neo-continual") return EvalMode::kNeoContinual;
  if (s == "neo-mse") return EvalMode::kNeoMse;
  return std::nullopt;
}

struct EvalOptions {
  EvalMode mode = EvalMode::kNeo;
  Protocol protocol = Protocol::kOnline;
  std::size_t batch_size = kDefaultBatchSize;
  double alpha = kDefaultEmaAlpha;  // used when a fresh EMA state is created
  std::size_t n_bins = kDefaultEceBins;
};

struct EvalReport {
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  EceReport ece;
  EvalMode mode = EvalMode::kNoAdapt;
  std::vector<std::size_t> predicted;
  std::vector<double> confidence;
};

struct EvalResult {
  EvalReport report;
  std::optional<AdapterState> state;  // state after the run (unchanged when frozen)
};

/// Fresh state matching `mode`; none for kNoAdapt.
inline std::optional<AdapterState> initial_state(EvalMode mode, std::size_t dim, double alpha) {
  switch (mode) {
    case EvalMode::kNoAdapt: return std::nullopt;
    case EvalMode::kNeoContinual: return AdapterState::ema(dim, alpha);
    case EvalMode::kNeo:
    case EvalMode::kNeoMse: return AdapterState::cumulative(dim);
  }
  return std::nullopt;
}

/// Runs the head over `data` in batches and scores it against `labels`.
///
/// Online protocol: each batch first updates the state, then is predicted
/// with the updated state. Frozen protocol: the given state (or an empty one)
/// is used as-is for every batch. kNoAdapt ignores any state.
inline EvalResult evaluate(const LinearHead& head, const EmbeddingBatch& data,
                           std::span<const std::size_t> labels,
                           std::optional<AdapterState> state, const EvalOptions& opt) {
  if (labels.size() != data.rows()) {
    throw Error(ErrorCode::kLengthMismatch,
                std::to_string(labels.size()) + " labels for " +
                    std::to_string(data.rows()) + " embeddings");
  }
  if (data.empty()) throw Error(ErrorCode::kEmptyInput, "no embeddings");
  if (opt.batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  require_dim(data.dim(), head.dim(), "embeddings");

  if (opt.mode == EvalMode::kNoAdapt) {
    state.reset();
  } else if (!state) {
    state = opt.protocol == Protocol::kOnline ? initial_state(opt.mode, data.dim(), opt.alpha)
                                              : AdapterState::cumulative(data.dim());
  }
  if (state) require_dim(state->dim(), head.dim(), "state");

  EvalReport rep;
  rep.mode = opt.mode;
  rep.n = data.rows();
  rep.predicted.reserve(rep.n);
  rep.confidence.reserve(rep.n);
  for (std::size_t begin = 0; begin < data.rows(); begin += opt.batch_size) {
    const EmbeddingBatch batch = data.slice(begin, std::min(data.rows(), begin + opt.batch_size));
    if (state && opt.protocol == Protocol::kOnline) {
      state = opt.mode == EvalMode::kNeoContinual ? update_continual(std::move(*state), batch)
                                                  : update(std::move(*state), batch);
    }
    PredictionBatch pred;
    if (!state) {
      pred = predict(head, batch);
    } else if (opt.mode == EvalMode::kNeoMse) {
      pred = predict_mse(head, batch, *state);
    } else {
      pred = predict(head, batch, *state);
    }
    rep.predicted.insert(rep.predicted.end(), pred.predicted.begin(), pred.predicted.end());
    rep.confidence.insert(rep.confidence.end(), pred.confidence.begin(), pred.confidence.end());
  }

  std::vector<bool> hit(rep.n);
  for (std::size_t i = 0; i < rep.n; ++i) {
    hit[i] = rep.predicted[i] == labels[i];
    rep.correct += hit[i];
  }
  rep.accuracy = static_cast<double>(rep.correct) / static_cast<double>(rep.n);
  rep.ece = ece(rep.confidence, hit, opt.n_bins);
  return {std::move(rep), std::move(state)};
}

}  // namespace neo
