#pragma once

// Experiment plumbing behind the command-line tool: configuration files,
// method labels, the metrics log and the comparison protocol.

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "enas/trainer.hpp"
#include "enas/zeroshot.hpp"

namespace enas {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MethodSpec {
  std::string label;
  LossMode loss_mode;
  SamplingStrategy sampling;
  bool narrowed;
};

/// matchnas, spos, spos+fixmatch, fixmatch-single, supervised-single,
/// matchnas-narrow, matchnas-sandwich.
MethodSpec method_spec(std::string_view label);
const std::vector<std::string>& method_labels();

struct DataConfig {
  std::string path;  // empty: synthetic
  SyntheticOptions synthetic;
  SplitOptions split;
  std::optional<std::uint64_t> seed;  // defaults to the experiment seed
};

struct ExperimentConfig {
  std::string space = "desk-tiny";
  std::string method = "matchnas";
  std::uint64_t seed = 0;
  std::string out = "runs";
  DataConfig data;
  TrainConfig train;
  std::string constraints;  // constraint file path
  SearchOptions search;
  ZenOptions zen;
  std::optional<std::uint64_t> zen_seed;
  std::string narrow_file;
  std::vector<std::string> compare_methods{"spos", "spos+fixmatch", "matchnas"};
  std::vector<std::uint64_t> compare_seeds{0, 1, 2};
  LatencyModel latency;
};

/// INI-style text: top-level "key = value" lines plus [section] groups;
/// keys are addressed as section.key. Unknown keys are errors.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_text(const ExperimentConfig& cfg);

/// A preset name, a path to a space file, or inline space text.
SearchSpace resolve_space(const std::string& source);

/// Loss mode, sampling and seed of the method applied to cfg.train.
TrainConfig train_config_for(const ExperimentConfig& cfg, const MethodSpec& method, std::uint64_t seed);

Dataset make_dataset(const ExperimentConfig& cfg, std::uint64_t seed);
/// Loads the linear latency calibration ("ms_per_gflop = a", "offset_ms = b").
LatencyModel load_latency_model(const std::filesystem::path& path);

// ---- metrics ---------------------------------------------------------------

struct ResultRow {
  std::string method;
  std::string size;  // smallest / medium / largest / custom
  std::string arch;
  std::int64_t flops = 0;
  std::int64_t params = 0;
  double top1 = 0.0;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
  bool operator==(const ResultRow&) const = default;
};

struct SearchRow {
  int constraint_id = 0;
  std::string constraint;
  std::string arch;
  double score = 0.0;
  std::int64_t flops = 0;
  std::int64_t params = 0;
  bool operator==(const SearchRow&) const = default;
};

nlohmann::json to_json(const StepRecord& r, const std::string& method, std::uint64_t seed);
nlohmann::json to_json(const ResultRow& r);
nlohmann::json to_json(const SearchRow& r);
StepRecord step_from_json(const nlohmann::json& j);
ResultRow result_from_json(const nlohmann::json& j);
SearchRow search_from_json(const nlohmann::json& j);
SearchRow search_row(const ScoredCandidate& c, const ConstraintSet& constraints);

/// Append-only newline-delimited JSON log; every record is flushed as
/// soon as it is written.
class MetricsSink {
 public:
  explicit MetricsSink(const std::filesystem::path& path);
  void write(const nlohmann::json& record);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

std::vector<nlohmann::json> read_log(const std::filesystem::path& path);

/// method,arch,flops,params,top1,seed sorted by (method, seed, flops, arch).
std::string summary_csv(std::vector<ResultRow> rows);
/// Mean/std accuracy per (method, arch) with FLOPs, latency proxy and the
/// zero-shot score of any matching search record.
std::string tradeoff_csv(const std::vector<ResultRow>& rows, const std::vector<SearchRow>& searches,
                         const LatencyModel& latency);

// ---- orchestration ---------------------------------------------------------

/// The three protocol archs of a space.
std::vector<std::pair<std::string, ArchConfig>> protocol_archs(const SearchSpace& space);

struct CompareOutput {
  std::vector<ResultRow> rows;
  std::string summary;
};

/// Every method x seed cell: train per the method, then evaluate the
/// smallest, medium and largest archs. Logs to <out>/metrics.ndjson and
/// writes <out>/summary.csv.
CompareOutput run_compare(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace enas
