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

// Command-line front end: adapt, eval, simulate, diagnose, transfer.
//
// Exit codes: 0 success, 2 input error (unreadable or inconsistent data),
// 3 configuration error (bad flags, impossible settings).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "neo/neo.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitConfig = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string embeddings;
  std::string clean;
  std::string labels;
  std::string head;
  std::string state_in;
  std::string state_out;
  std::string mode = "neo";
  double alpha = neo::kDefaultEmaAlpha;
  std::size_t batch_size = neo::kDefaultBatchSize;
  std::string protocol = "online";
  std::size_t bins = neo::kDefaultEceBins;
  std::uint64_t seed = 0;
  std::string format = "json";
  std::string manifest;
  std::string out;

  // simulate
  std::size_t classes = 10;
  std::size_t dim = 64;
  std::size_t per_class = 52;
  std::size_t take = 0;
  double scale = 1.0;
  double within_std = 0.05;
  double shift_norm = 3.0;
  std::size_t sparse_dims = 0;
  double class_shift_std = 0.0;
  double residual_std = 0.0;
};

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw InputError("cannot write " + out);
  f << text;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ConfigError("--alpha must lie in (0, 1]");
  }
}

neo::EvalMode parse_mode(const std::string& s) {
  auto m = neo::parse_eval_mode(s);
  if (!m) throw ConfigError("unknown --mode '" + s + "'");
  return *m;
}

neo::EmbeddingBatch load_embeddings(const std::string& path) {
  if (path.empty()) throw InputError("--embeddings is required");
  return neo::io::read_any_embeddings(path);
}

std::vector<std::size_t> load_labels(const std::string& path, const neo::EmbeddingBatch& emb) {
  if (path.empty()) throw InputError("--labels is required");
  auto labels = neo::io::read_labels(path);
  neo::io::require_paired(emb, labels);
  return labels;
}

json ece_json(const neo::EceReport& r) {
  json bins = json::array();
  for (std::size_t b = 0; b < r.n_bins; ++b) {
    const auto& pb = r.per_bin[b];
    bins.push_back({{"lower", r.bin_edges[b]},
                    {"upper", r.bin_edges[b + 1]},
                    {"count", pb.count},
                    {"mean_confidence", pb.mean_confidence},
                    {"mean_accuracy", pb.mean_accuracy}});
  }
  return {{"ece", r.ece}, {"n_bins", r.n_bins}, {"bins", bins}};
}

// --------------------------------------------------------------------------

int cmd_adapt(const Options& o, const json& config) {
  const auto mode = parse_mode(o.mode);
  if (mode == neo::EvalMode::kNoAdapt) throw ConfigError("--mode none has nothing to adapt");
  check_alpha(o.alpha);
  const auto data = load_embeddings(o.embeddings);

  std::optional<neo::AdapterState> state;
  if (!o.state_in.empty()) {
    state = neo::io::load_state(o.state_in).state;
  } else {
    state = neo::initial_state(mode, data.dim(), o.alpha);
  }
  const bool want_ema = mode == neo::EvalMode::kNeoContinual;
  if ((state->mode() == neo::CentroidMode::kEma) != want_ema) {
    throw ConfigError("--state-in mode does not match --mode " + o.mode);
  }
  neo::require_dim(data.dim(), state->dim(), "embeddings");
  for (std::size_t begin = 0; begin < data.rows(); begin += o.batch_size) {
    state = neo::absorb(std::move(*state), data.slice(begin, std::min(data.rows(), begin + o.batch_size)));
  }
  if (!o.state_out.empty()) neo::io::save_state(o.state_out, neo::io::make_snapshot(*state));

  json j = {{"n", data.rows()},
            {"dim", data.dim()},
            {"count", state->count()},
            {"mode", o.mode},
            {"mean_norm", neo::norm(state->mean())},
            {"config", config}};
  emit(dump(j), o.out);
  return kExitOk;
}

int cmd_eval(const Options& o, const json& config) {
  neo::EvalOptions opt;
  opt.mode = parse_mode(o.mode);
  check_alpha(o.alpha);
  opt.alpha = o.alpha;
  opt.batch_size = o.batch_size;
  opt.n_bins = o.bins;
  opt.protocol = o.protocol == "frozen" ? neo::Protocol::kFrozen : neo::Protocol::kOnline;
  if (o.head.empty()) throw InputError("--head is required");

  const auto head = neo::io::read_head(o.head);
  const auto data = load_embeddings(o.embeddings);
  const auto labels = load_labels(o.labels, data);
  std::optional<neo::AdapterState> state;
  if (!o.state_in.empty()) state = neo::io::load_state(o.state_in).state;
  if (state && opt.protocol == neo::Protocol::kOnline && opt.mode != neo::EvalMode::kNoAdapt &&
      (state->mode() == neo::CentroidMode::kEma) != (opt.mode == neo::EvalMode::kNeoContinual)) {
    throw ConfigError("--state-in mode does not match --mode " + o.mode);
  }

  const auto res = neo::evaluate(head, data, labels, state, opt);
  if (!o.state_out.empty() && res.state) {
    neo::io::save_state(o.state_out, neo::io::make_snapshot(*res.state));
  }
  const auto& r = res.report;
  if (o.format == "csv") {
    std::ostringstream s;
    s << "n,correct,accuracy,ece,mode,protocol\n"
      << r.n << ',' << r.correct << ',' << r.accuracy << ',' << r.ece.ece << ',' << o.mode << ','
      << o.protocol << '\n';
    emit(s.str(), o.out);
  } else {
    json j = {{"n", r.n},
              {"correct", r.correct},
              {"accuracy", r.accuracy},
              {"ece", ece_json(r.ece)},
              {"mode", o.mode},
              {"protocol", o.protocol},
              {"config", config}};
    emit(dump(j), o.out);
  }
  return kExitOk;
}

int cmd_simulate(const Options& o, const json& config) {
  if (o.out.empty()) throw ConfigError("--out directory is required");
  if (o.classes < 2) throw ConfigError("--classes must be >= 2");
  if (o.dim + 1 < o.classes) throw ConfigError("--dim must be >= classes - 1");
  if (o.sparse_dims > o.dim) throw ConfigError("--sparse-dims exceeds --dim");
  if (!(o.scale > 0.0)) throw ConfigError("--scale must be positive");
  if (o.within_std < 0.0 || o.residual_std < 0.0 || o.class_shift_std < 0.0 || o.shift_norm < 0.0) {
    throw ConfigError("standard deviations and norms must be >= 0");
  }

  neo::EtfGeometry geom;
  neo::PairedDataset ds;
  neo::ShiftModel sm;
  try {
    // Sub-seeds: geometry s, samples s+1, shift s+2, class shifts s+3,
    // residual noise s+4.
    geom = neo::build_etf(o.classes, o.dim, o.scale, o.seed);
    ds = neo::sample_clean(geom, o.per_class, o.within_std, o.seed + 1);
    if (o.sparse_dims > 0) {
      const double per_dim = o.shift_norm / std::sqrt(static_cast<double>(o.sparse_dims));
      sm = neo::sparse_global_shift(o.dim, o.sparse_dims, per_dim, o.residual_std, o.seed + 2);
    } else {
      sm = neo::ShiftModel::none(o.dim);
      sm.global = neo::random_direction(o.dim, o.shift_norm, o.seed + 2);
      sm.residual_std = o.residual_std;
    }
    if (o.class_shift_std > 0.0) {
      sm.class_shifts = neo::random_class_shifts(o.classes, o.dim, o.class_shift_std, o.seed + 3);
    }
    sm.seed = o.seed + 4;
    ds = neo::apply_shift(std::move(ds), sm);
    if (o.take > 0 && o.take < ds.size()) ds = ds.slice(0, o.take);
  } catch (const neo::Error& e) {
    throw ConfigError(e.what());
  }
  const auto head = neo::head_from_etf(geom);
  const auto nc = neo::verify_nc(geom, ds);

  const fs::path dir(o.out);
  fs::create_directories(dir);
  neo::io::write_embeddings(dir / "clean.neoe", ds.clean);
  neo::io::write_embeddings(dir / "corrupt.neoe", ds.corrupt);
  neo::io::write_labels(dir / "labels.neol", ds.labels);
  neo::io::write_head(dir / "head.neoe", head);

  json global = json::array();
  for (double v : sm.global) global.push_back(v);
  json report = {{"n", ds.size()},
                 {"files", {"clean.neoe", "corrupt.neoe", "labels.neol", "head.neoe", "head.neoe.bias"}},
                 {"shift_global", global},
                 {"nc",
                  {{"nc1_within_trace", nc.nc1_within_trace},
                   {"nc1_ratio", nc.nc1_ratio},
                   {"nc2_gram_deviation", nc.nc2_gram_deviation},
                   {"nc2_norm_deviation", nc.nc2_norm_deviation},
                   {"geometry_gram_deviation", nc.geometry_gram_deviation},
                   {"geometry_mean_norm", nc.geometry_mean_norm},
                   {"nc3_gap", nc.nc3_gap},
                   {"nc4_disagreement", nc.nc4_disagreement},
                   {"pass", nc.all_pass()}}},
                 {"config", config}};
  // The output directory is left out so that identical seeds give identical files.
  json params = report;
  params["config"].erase("out");
  std::ofstream(dir / "params.json", std::ios::trunc) << dump(params);
  report.erase("shift_global");
  std::cout << dump(report);
  return kExitOk;
}

int cmd_diagnose(const Options& o, const json& config) {
  if (o.clean.empty()) throw InputError("--clean is required");
  const auto corrupt = load_embeddings(o.embeddings);
  const auto clean = neo::io::read_any_embeddings(o.clean);
  const auto labels = load_labels(o.labels, corrupt);
  std::size_t num_classes = 0;
  for (std::size_t y : labels) num_classes = std::max(num_classes, y + 1);
  if (o.classes > num_classes && config.contains("classes")) num_classes = o.classes;
  neo::PairedDataset ds{clean, corrupt, labels, num_classes};

  const auto dec = neo::decompose_shift(ds);
  const auto table = neo::alignment_table(ds);
  const auto hist = neo::top_shift_histogram(ds);

  if (o.format == "csv") {
    std::ostringstream s;
    s << "row,mean_cosine,mean_norm_gap\n";
    for (const auto& r : table.rows) {
      s << neo::alignment_row_name(r.label) << ',' << r.mean_cosine << ',' << r.mean_norm_gap << '\n';
    }
    s << "\nrank,dim,count,cumulative\n";
    for (std::size_t k = 0; k < hist.ranked_dims.size(); ++k) {
      if (hist.ranked_counts[k] == 0) break;
      s << k + 1 << ',' << hist.ranked_dims[k] << ',' << hist.ranked_counts[k] << ','
        << hist.cumulative[k] << '\n';
    }
    emit(s.str(), o.out);
    return kExitOk;
  }
  json rows = json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"row", neo::alignment_row_name(r.label)},
                    {"mean_cosine", r.mean_cosine},
                    {"mean_norm_gap", r.mean_norm_gap}});
  }
  json j = {{"n", ds.size()},
            {"alignment", rows},
            {"global_shift_norm", neo::norm(dec.global)},
            {"absent_classes", dec.absent_classes},
            {"histogram",
             {{"ranked_dims", hist.ranked_dims},
              {"ranked_counts", hist.ranked_counts},
              {"cumulative", hist.cumulative}}},
            {"config", config}};
  emit(dump(j), o.out);
  return kExitOk;
}

int cmd_transfer(const Options& o, const json& config) {
  if (o.manifest.empty()) throw ConfigError("--manifest is required");
  neo::io::Manifest m;
  try {
    m = neo::io::load_manifest(o.manifest);
  } catch (const neo::Error& e) {
    if (e.code() == neo::ErrorCode::kBadManifest) throw ConfigError(e.what());
    throw;
  }
  if (m.domains.size() < 2) throw ConfigError("manifest needs at least two domains");
  const std::string mode_name = config.contains("mode") ? o.mode : m.options.mode;
  const auto mode = parse_mode(mode_name);
  if (mode != neo::EvalMode::kNeo && mode != neo::EvalMode::kNeoMse) {
    throw ConfigError("transfer supports --mode neo or neo-mse");
  }
  const auto head = neo::io::read_head(o.head.empty() ? m.head_path : fs::path(o.head));
  std::vector<neo::TransferDomain> domains;
  for (const auto& d : m.domains) {
    auto emb = neo::io::read_any_embeddings(d.embeddings_path);
    auto labels = neo::io::read_labels(d.labels_path);
    neo::io::require_paired(emb, labels);
    domains.push_back({d.name, std::move(emb), std::move(labels)});
  }
  const auto t = neo::transfer_matrix(domains, head, mode);

  if (o.format == "csv") {
    std::ostringstream s;
    auto matrix = [&](const char* title, const std::vector<std::vector<double>>& mat) {
      s << title;
      for (const auto& n : t.domains) s << ',' << n;
      s << '\n';
      for (std::size_t i = 0; i < mat.size(); ++i) {
        s << t.domains[i];
        for (double v : mat[i]) s << ',' << v;
        s << '\n';
      }
    };
    matrix("centroid_cosine", t.centroid_cosine);
    s << '\n';
    matrix("accuracy_delta", t.accuracy_delta);
    emit(s.str(), o.out);
    return kExitOk;
  }
  json j = {{"domains", t.domains},
            {"centroid_cosine", t.centroid_cosine},
            {"accuracy_delta", t.accuracy_delta},
            {"baseline_accuracy", t.baseline_accuracy},
            {"mode", mode_name},
            {"config", config}};
  emit(dump(j), o.out);
  return kExitOk;
}

// Codes that reflect a settings problem rather than bad data.
bool is_config_error(neo::ErrorCode c) {
  return c == neo::ErrorCode::kWrongMode || c == neo::ErrorCode::kBadManifest;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-time re-centering of embeddings for linear heads"};
  app.require_subcommand(1);
  Options o;

  auto* adapt = app.add_subcommand("adapt", "Stream embeddings into a centroid snapshot");
  auto* eval = app.add_subcommand("eval", "Accuracy and ECE with or without adaptation");
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic neural-collapse dataset");
  auto* diagnose = app.add_subcommand("diagnose", "Shift decomposition, alignment and histogram");
  auto* transfer = app.add_subcommand("transfer", "Cross-domain centroid transfer matrices");

  const std::vector<std::string> modes = {"neo", "neo-continual", "neo-mse", "none"};
  const std::vector<std::string> formats = {"json", "csv"};

  for (auto* sc : {adapt, eval, diagnose}) {
    sc->add_option("--embeddings", o.embeddings, "Target embeddings (.neoe or .csv)");
  }
  for (auto* sc : {eval, diagnose}) sc->add_option("--labels", o.labels, "Labels (.neol or text)");
  for (auto* sc : {eval, transfer}) sc->add_option("--head", o.head, "Head weights (.neoe, bias in <path>.bias)");
  for (auto* sc : {adapt, eval}) {
    sc->add_option("--state-in", o.state_in, "Snapshot to start from");
    sc->add_option("--state-out", o.state_out, "Where to write the final snapshot");
    sc->add_option("--alpha", o.alpha, "EMA weight for neo-continual")->capture_default_str();
    sc->add_option("--batch-size", o.batch_size, "Stream batch size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  }
  for (auto* sc : {adapt, eval, transfer}) {
    sc->add_option("--mode", o.mode, "neo | neo-continual | neo-mse | none")
        ->check(CLI::IsMember(modes))
        ->capture_default_str();
  }
  eval->add_option("--protocol", o.protocol, "online | frozen")
      ->check(CLI::IsMember({"online", "frozen"}))
      ->capture_default_str();
  eval->add_option("--bins", o.bins, "ECE bins")->check(CLI::PositiveNumber)->capture_default_str();
  for (auto* sc : {eval, diagnose, transfer}) {
    sc->add_option("--format", o.format, "json | csv")->check(CLI::IsMember(formats))->capture_default_str();
  }
  for (auto* sc : {adapt, eval, simulate, diagnose, transfer}) {
    sc->add_option("--seed", o.seed, "Seed")->capture_default_str();
    sc->add_option("--out", o.out, sc == simulate ? "Output directory" : "Output file (default stdout)");
  }
  diagnose->add_option("--clean", o.clean, "Clean embeddings paired row-by-row with --embeddings");
  diagnose->add_option("--classes", o.classes, "Number of classes (default: max label + 1)");
  transfer->add_option("--manifest", o.manifest, "Manifest JSON");

  simulate->add_option("--classes", o.classes, "Number of classes C")->capture_default_str();
  simulate->add_option("--dim", o.dim, "Embedding dimension d (>= C - 1)")->capture_default_str();
  simulate->add_option("--per-class", o.per_class, "Samples drawn per class")->check(CLI::PositiveNumber)->capture_default_str();
  simulate->add_option("--take", o.take, "Keep only the first N rows (0 = all)")->capture_default_str();
  simulate->add_option("--scale", o.scale, "Norm of each class mean")->capture_default_str();
  simulate->add_option("--within-std", o.within_std, "Within-class noise std")->capture_default_str();
  simulate->add_option("--shift-norm", o.shift_norm, "Norm of the global shift")->capture_default_str();
  simulate->add_option("--sparse-dims", o.sparse_dims, "Confine the global shift to N dims")
      ->capture_default_str();
  simulate->add_option("--class-shift-std", o.class_shift_std, "Std of per-class shifts (zero column mean)")->capture_default_str();
  simulate->add_option("--residual-std", o.residual_std, "Per-sample residual shift std")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  CLI::App* cmd = app.get_subcommands().front();
  json config = {{"command", cmd->get_name()}};
  for (const CLI::Option* opt : cmd->get_options()) {
    if (opt->get_name() == "--help") continue;
    const std::string key = opt->get_name().substr(2);
    if (opt->count() > 0) {
      config[key] = opt->as<std::string>();
    } else if (!opt->get_default_str().empty()) {
      config[key + "_default"] = opt->get_default_str();
    }
  }

  try {
    if (cmd == adapt) return cmd_adapt(o, config);
    if (cmd == eval) return cmd_eval(o, config);
    if (cmd == simulate) return cmd_simulate(o, config);
    if (cmd == diagnose) return cmd_diagnose(o, config);
    if (cmd == transfer) return cmd_transfer(o, config);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const neo::Error& e) {
    std::cerr << (is_config_error(e.code()) ? "config error: " : "input error: ") << e.what() << '\n';
    return is_config_error(e.code()) ? kExitConfig : kExitInput;
  }
  return kExitConfig;
}
