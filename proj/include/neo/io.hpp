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

// On-disk formats. All multi-byte values are little-endian.
//
// Embedding file (.neoe), 21-byte header then payload:
//   offset  size  field
//        0     4  magic "NEOE"
//        4     4  u32 version = 1
//        8     8  u64 n (rows, >= 1)
//       16     4  u32 d (dim, >= 1)
//       20     1  u8 dtype (0 = float32)
//       21  4n*d  row-major float32 values
//
// Label file (.neol): magic "NEOL", u32 version = 1, u64 n, then n u32
// labels. read_labels() also accepts plain text with one integer per line.
//
// Adapter snapshots and manifests are JSON. Snapshot means are written as
// C99 hex-float strings so every bit survives a round trip.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <charconv>
#include <vector>

#include "json.hpp"
#include "neo/adapter.hpp"
#include "neo/embedding.hpp"
#include "neo/error.hpp"

namespace neo::io {

inline constexpr std::string_view kEmbeddingMagic = "NEOE";
inline constexpr std::string_view kLabelMagic = "NEOL";
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderSize = 21;
inline constexpr std::size_t kLabelHeaderSize = 16;
inline constexpr int kSnapshotSchemaVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(std::string_view bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void spill(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoFailure, "short write to " + path.string());
}

// Fixed-width hex float: sign, "0x1." or "0x0." (subnormal), 13 mantissa
// digits, decimal binary exponent. Zero is "0x0.0p+0". Output does not
// depend on the C library.
inline std::string hex_double(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  const bool negative = (bits >> 63) != 0;
  const auto biased = static_cast<int>((bits >> 52) & 0x7ff);
  const std::uint64_t mantissa = bits & ((std::uint64_t{1} << 52) - 1);
  std::string out = negative ? "-" : "";
  if (biased == 0 && mantissa == 0) return out + "0x0.0p+0";
  char buf[48];
  const char lead = biased == 0 ? '0' : '1';
  const int exponent = biased == 0 ? -1022 : biased - 1023;
  std::snprintf(buf, sizeof buf, "0x%c.%013llxp%+d", lead, static_cast<unsigned long long>(mantissa),
                exponent);
  return out + buf;
}

inline double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw Error(ErrorCode::kCorruptSnapshot, "bad number '" + s + "'");
  }
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Embeddings.

inline std::string encode_embeddings(const EmbeddingBatch& batch) {
  if (batch.rows() == 0) throw Error(ErrorCode::kEmptyInput, "cannot write an empty batch");
  std::string out;
  out.reserve(kEmbeddingHeaderSize + batch.data().size() * 4);
  out.append(kEmbeddingMagic);
  detail::put_u32(out, kFormatVersion);
  detail::put_u64(out, batch.rows());
  detail::put_u32(out, static_cast<std::uint32_t>(batch.dim()));
  out.push_back('\0');
  for (double v : batch.data()) {
    const auto f = static_cast<float>(v);
    if (!std::isfinite(f)) {
      throw Error(ErrorCode::kNonFiniteValue, "value not representable as finite float32");
    }
    detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline EmbeddingBatch decode_embeddings(std::string_view bytes) {
  if (bytes.size() >= 4 && bytes.substr(0, 4) != kEmbeddingMagic) {
    throw Error(ErrorCode::kBadMagic, "not an embedding file");
  }
  if (bytes.size() < kEmbeddingHeaderSize) {
    throw Error(ErrorCode::kTruncatedPayload, "header is shorter than 21 bytes");
  }
  const auto version = static_cast<std::uint32_t>(detail::get_le(bytes, 4, 4));
  if (version != kFormatVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "embedding version " + std::to_string(version));
  }
  const std::uint64_t n = detail::get_le(bytes, 8, 8);
  const auto d = static_cast<std::uint32_t>(detail::get_le(bytes, 16, 4));
  const auto dtype = static_cast<unsigned char>(bytes[20]);
  if (dtype != 0) {
    throw Error(ErrorCode::kUnsupportedVersion, "dtype " + std::to_string(dtype));
  }
  if (n == 0) throw Error(ErrorCode::kEmptyInput, "embedding file has no rows");
  if (d == 0) throw Error(ErrorCode::kInvalidDimension, "embedding file has d = 0");
  const std::size_t available = bytes.size() - kEmbeddingHeaderSize;
  if (n > available / 4 / d) {
    throw Error(ErrorCode::kTruncatedPayload,
                "expected " + std::to_string(n) + "x" + std::to_string(d) +
                    " floats, file holds " + std::to_string(available) + " payload bytes");
  }
  const std::size_t count = static_cast<std::size_t>(n) * d;
  if (available != count * 4) {
    throw Error(ErrorCode::kTrailingData, "bytes after the payload");
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto bits = static_cast<std::uint32_t>(detail::get_le(bytes, kEmbeddingHeaderSize + 4 * i, 4));
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) {
      throw Error(ErrorCode::kNonFiniteValue,
                  "NaN/Inf at row " + std::to_string(i / d) + ", col " + std::to_string(i % d));
    }
    data[i] = f;
  }
  return EmbeddingBatch(n, d, std::move(data));
}

inline EmbeddingBatch read_embeddings(const std::filesystem::path& path) {
  return decode_embeddings(detail::slurp(path));
}

inline void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch) {
  detail::spill(path, encode_embeddings(batch));
}

/// One row per line, comma-separated; a first line that does not parse as
/// numbers is taken as a header.
inline EmbeddingBatch parse_csv_embeddings(std::string_view text) {
  std::vector<double> data;
  std::size_t dim = 0;
  std::size_t rows = 0;
  std::size_t line_no = 0;
  bool first = true;
  while (!text.empty()) {
    const std::size_t eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    std::vector<double> values;
    bool ok = true;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      std::string_view field = line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos);
      while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
      while (!field.empty() && (field.back() == ' ' || field.back() == '\t')) field.remove_suffix(1);
      if (!field.empty() && field.front() == '+') field.remove_prefix(1);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
        ok = false;
        break;
      }
      values.push_back(v);
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (!ok) {
      if (first) {
        first = false;
        continue;  // header
      }
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + " is not numeric");
    }
    first = false;
    if (dim == 0) {
      dim = values.size();
    } else if (values.size() != dim) {
      throw Error(ErrorCode::kRaggedRow, "line " + std::to_string(line_no) + " has " +
                                             std::to_string(values.size()) + " fields, expected " +
                                             std::to_string(dim));
    }
    for (double v : values) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kNonFiniteValue, "NaN/Inf on line " + std::to_string(line_no));
      }
    }
    data.insert(data.end(), values.begin(), values.end());
    ++rows;
  }
  if (rows == 0) throw Error(ErrorCode::kEmptyInput, "CSV has no data rows");
  return EmbeddingBatch(rows, dim, std::move(data));
}

inline EmbeddingBatch read_csv_embeddings(const std::filesystem::path& path) {
  return parse_csv_embeddings(detail::slurp(path));
}

inline void write_csv_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    auto r = batch.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j) out.push_back(',');
      const auto res = std::to_chars(buf, buf + sizeof buf, r[j]);
      out.append(buf, res.ptr);
    }
    out.push_back('\n');
  }
  detail::spill(path, out);
}

/// Reads either format, chosen by extension (.csv) or else binary.
inline EmbeddingBatch read_any_embeddings(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? read_csv_embeddings(path) : read_embeddings(path);
}

// ---------------------------------------------------------------------------
// Labels.

inline std::string encode_labels(const std::vector<std::size_t>& labels) {
  if (labels.empty()) throw Error(ErrorCode::kEmptyInput, "cannot write empty labels");
  std::string out;
  out.reserve(kLabelHeaderSize + 4 * labels.size());
  out.append(kLabelMagic);
  detail::put_u32(out, kFormatVersion);
  detail::put_u64(out, labels.size());
  for (std::size_t y : labels) {
    if (y > UINT32_MAX) throw Error(ErrorCode::kInvalidArgument, "label exceeds u32");
    detail::put_u32(out, static_cast<std::uint32_t>(y));
  }
  return out;
}

inline std::vector<std::size_t> decode_labels(std::string_view bytes) {
  if (bytes.size() >= 4 && bytes.substr(0, 4) == kLabelMagic) {
    if (bytes.size() < kLabelHeaderSize) {
      throw Error(ErrorCode::kTruncatedPayload, "label header is shorter than 16 bytes");
    }
    const auto version = static_cast<std::uint32_t>(detail::get_le(bytes, 4, 4));
    if (version != kFormatVersion) {
      throw Error(ErrorCode::kUnsupportedVersion, "label version " + std::to_string(version));
    }
    const std::uint64_t n = detail::get_le(bytes, 8, 8);
    if (n == 0) throw Error(ErrorCode::kEmptyInput, "label file is empty");
    const std::size_t available = bytes.size() - kLabelHeaderSize;
    if (n > available / 4) throw Error(ErrorCode::kTruncatedPayload, "label payload truncated");
    if (available != n * 4) throw Error(ErrorCode::kTrailingData, "bytes after label payload");
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<std::size_t>(detail::get_le(bytes, kLabelHeaderSize + 4 * i, 4));
    }
    return labels;
  }

  // Text: one non-negative integer per line; blank lines ignored.
  std::vector<std::size_t> labels;
  std::size_t line_no = 0;
  std::string_view text = bytes;
  while (!text.empty()) {
    const std::size_t eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
      line.remove_suffix(1);
    }
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
    if (line.empty()) continue;
    std::uint32_t v = 0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || ptr != line.data() + line.size()) {
      throw Error(ErrorCode::kParseError, "label line " + std::to_string(line_no) + ": '" +
                                              std::string(line) + "'");
    }
    labels.push_back(v);
  }
  if (labels.empty()) throw Error(ErrorCode::kEmptyInput, "label file is empty");
  return labels;
}

inline std::vector<std::size_t> read_labels(const std::filesystem::path& path) {
  return decode_labels(detail::slurp(path));
}

inline void write_labels(const std::filesystem::path& path, const std::vector<std::size_t>& labels) {
  detail::spill(path, encode_labels(labels));
}

inline void require_paired(const EmbeddingBatch& embeddings, const std::vector<std::size_t>& labels) {
  if (embeddings.rows() != labels.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(labels.size()) + " labels for " +
                                                std::to_string(embeddings.rows()) + " embeddings");
  }
}

// ---------------------------------------------------------------------------
// Heads: weights as a C x d embedding file, bias as a 1 x C embedding file
// next to it (<weights>.bias). A missing bias file means a zero bias.

inline std::filesystem::path bias_path_for(const std::filesystem::path& weights) {
  std::filesystem::path p = weights;
  p += ".bias";
  return p;
}

inline LinearHead read_head(const std::filesystem::path& weights_path) {
  const EmbeddingBatch w = read_embeddings(weights_path);
  std::vector<double> bias(w.rows(), 0.0);
  const auto bp = bias_path_for(weights_path);
  if (std::filesystem::exists(bp)) {
    const EmbeddingBatch b = read_embeddings(bp);
    if (b.rows() != 1 || b.dim() != w.rows()) {
      throw Error(ErrorCode::kDimensionMismatch, "bias file must be 1 x C");
    }
    bias.assign(b.data().begin(), b.data().end());
  }
  return LinearHead(w.rows(), w.dim(), std::vector<double>(w.data().begin(), w.data().end()),
                    std::move(bias));
}

inline void write_head(const std::filesystem::path& weights_path, const LinearHead& head) {
  write_embeddings(weights_path,
                   EmbeddingBatch(head.num_classes(), head.dim(),
                                  std::vector<double>(head.weights().begin(), head.weights().end())));
  write_embeddings(bias_path_for(weights_path),
                   EmbeddingBatch(1, head.num_classes(),
                                  std::vector<double>(head.bias().begin(), head.bias().end())));
}

// ---------------------------------------------------------------------------
// Adapter snapshots.

struct AdapterSnapshot {
  int schema_version = kSnapshotSchemaVersion;
  AdapterState state;
  std::string created_at;

  friend bool operator==(const AdapterSnapshot&, const AdapterSnapshot&) = default;
};

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline AdapterSnapshot make_snapshot(AdapterState state) {
  return {kSnapshotSchemaVersion, std::move(state), utc_timestamp()};
}

/// Keys are written in a fixed order so that saved files are byte-stable.
inline nlohmann::ordered_json snapshot_to_json(const AdapterSnapshot& snap) {
  const AdapterState& s = snap.state;
  nlohmann::ordered_json j;
  j["schema_version"] = snap.schema_version;
  j["dim"] = s.dim();
  j["count"] = s.count();
  j["mode"] = s.mode() == CentroidMode::kEma ? "ema" : "cumulative";
  if (s.mode() == CentroidMode::kEma) j["alpha"] = detail::hex_double(s.alpha());
  auto& mean = j["mean"] = nlohmann::ordered_json::array();
  for (double v : s.mean()) mean.push_back(detail::hex_double(v));
  j["created_at"] = snap.created_at;
  return j;
}

inline AdapterSnapshot snapshot_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kSnapshotSchemaVersion) {
      throw Error(ErrorCode::kSchemaMismatch, "snapshot schema " + std::to_string(version));
    }
    const auto dim = j.at("dim").get<std::size_t>();
    const auto count = j.at("count").get<std::uint64_t>();
    const auto mode = j.at("mode").get<std::string>();
    std::vector<double> mean;
    for (const auto& v : j.at("mean")) mean.push_back(detail::parse_hex_double(v.get<std::string>()));
    if (mean.size() != dim || dim == 0) {
      throw Error(ErrorCode::kCorruptSnapshot, "mean length does not match dim");
    }
    CentroidMode m;
    double alpha = 1.0;
    if (mode == "cumulative") {
      m = CentroidMode::kCumulativeMean;
    } else if (mode == "ema") {
      m = CentroidMode::kEma;
      alpha = detail::parse_hex_double(j.at("alpha").get<std::string>());
    } else {
      throw Error(ErrorCode::kCorruptSnapshot, "unknown mode '" + mode + "'");
    }
    AdapterSnapshot snap;
    snap.schema_version = version;
    snap.state = AdapterState::restore(m, alpha, count, std::move(mean));
    snap.created_at = j.value("created_at", "");
    return snap;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptSnapshot, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kSchemaMismatch || e.code() == ErrorCode::kCorruptSnapshot) throw;
    throw Error(ErrorCode::kCorruptSnapshot, e.what());
  }
}

inline AdapterSnapshot snapshot_from_json(const nlohmann::ordered_json& j) {
  return snapshot_from_json(nlohmann::json(j));
}

inline void save_state(const std::filesystem::path& path, const AdapterSnapshot& snap) {
  detail::spill(path, snapshot_to_json(snap).dump(2) + "\n");
}

inline AdapterSnapshot load_state(const std::filesystem::path& path) {
  const std::string text = detail::slurp(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptSnapshot, e.what());
  }
  return snapshot_from_json(j);
}

// ---------------------------------------------------------------------------
// Manifests.

struct ManifestDomain {
  std::string name;
  std::filesystem::path embeddings_path;
  std::filesystem::path labels_path;
};

struct ManifestOptions {
  std::size_t batch_size = 64;
  std::string mode = "neo";
  double alpha = 0.01;
  std::uint64_t seed = 0;
};

struct Manifest {
  std::vector<ManifestDomain> domains;
  std::filesystem::path head_path;
  ManifestOptions options;
};

/// Parses a manifest; relative paths resolve against `base_dir`.
inline Manifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative()) path = base_dir / path;
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorCode::kIoFailure, "manifest path does not exist: " + path.string());
    }
    return path;
  };
  Manifest m;
  try {
    std::set<std::string> names;
    for (const auto& d : j.at("domains")) {
      ManifestDomain dom;
      dom.name = d.at("name").get<std::string>();
      if (!names.insert(dom.name).second) {
        throw Error(ErrorCode::kBadManifest, "duplicate domain name '" + dom.name + "'");
      }
      dom.embeddings_path = resolve(d.at("embeddings_path").get<std::string>());
      dom.labels_path = resolve(d.at("labels_path").get<std::string>());
      m.domains.push_back(std::move(dom));
    }
    m.head_path = resolve(j.at("head_path").get<std::string>());
    if (j.contains("options")) {
      const auto& o = j.at("options");
      m.options.batch_size = o.value("batch_size", m.options.batch_size);
      m.options.mode = o.value("mode", m.options.mode);
      m.options.alpha = o.value("alpha", m.options.alpha);
      m.options.seed = o.value("seed", m.options.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadManifest, e.what());
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  const std::string text = detail::slurp(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadManifest, e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

}  // namespace neo::io
