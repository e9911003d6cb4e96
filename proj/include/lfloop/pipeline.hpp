#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lfloop/aggregate.hpp"
#include "lfloop/downstream.hpp"
#include "lfloop/lfgate.hpp"
#include "lfloop/metrics.hpp"
#include "lfloop/plmclient.hpp"
#include "lfloop/prompting.hpp"

namespace lfloop {

enum class SamplerKind { Random, Uncertainty, Seu };
enum class BackendKind { Mock, Replay, Http };
enum class FeatureKind { Tfidf, Embeddings };

std::string_view to_string(SamplerKind k);
std::string_view to_string(BackendKind k);
SamplerKind sampler_from_string(std::string_view s);
BackendKind backend_from_string(std::string_view s);

struct DatasetPaths {
  std::filesystem::path train, valid, test, schema;
  std::filesystem::path embeddings;   // optional: KATE and embedding features
  std::filesystem::path annotations;  // optional: class-balanced examples
};

struct BackendConfig {
  BackendKind kind = BackendKind::Mock;
  std::filesystem::path mock_config;
  std::filesystem::path transcript;  // replay source, or recording target for other backends
  HttpConfig http;
  std::string model = "gpt-3.5-turbo";
  int max_tokens = 512;
};

struct RunConfig {
  DatasetPaths data;
  PromptSpec prompt;
  SamplerKind sampler = SamplerKind::Random;
  bool seu_posterior_weighted = false;
  std::size_t seu_pool_cap = 2000;  // 0 scans the whole pool
  FilterConfig filters;
  LabelModelConfig label_model;
  TrainOptions downstream;
  FeatureKind features = FeatureKind::Tfidf;
  int tfidf_min_df = 1;
  int tfidf_max_features = 50000;
  bool soft_labels = false;
  bool lazy_retrain = false;  // train label and downstream models once, after the loop
  int n_iterations = 50;
  std::uint64_t seed = 0;
  BackendConfig backend;
  std::filesystem::path report;

  void validate() const;
};

/// Relative paths are resolved against `base_dir`.
RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);
/// Full config as JSON.
nlohmann::json to_json(const RunConfig& c);
/// The part echoed into reports: everything except backend selection and
/// output locations, so that live, recorded and replayed runs report alike.
nlohmann::json config_echo(const RunConfig& c);

struct IterationRecord {
  int t = 0;
  InstanceId query_id = -1;
  std::optional<ClassIndex> label;
  std::optional<ClassIndex> gold;
  std::size_t proposed = 0;
  std::size_t admitted = 0;
  std::vector<FilterVerdict> verdicts;
  std::vector<ChatMessage> prompt;
  std::vector<std::string> responses;
  double train_cov = 0.0;  // after this iteration's admissions
};

struct RunReport {
  std::uint64_t seed = 0;
  bool complete = true;
  std::string error;
  std::vector<std::string> warnings;
  Metrics metrics;
  std::vector<IterationRecord> iterations;
  std::vector<LfSpec> lfs;
  std::vector<std::optional<double>> lf_valid_accuracy;  // per final LF
  nlohmann::json config;
};

nlohmann::json to_json(const RunReport& r);
/// Canonical serialization; byte-identical for identical runs.
std::string dump_report(const RunReport& r);

/// Optional inputs that the loop reads when the config asks for them.
struct RunResources {
  const Annotations* annotations = nullptr;
  const EmbeddingTable* embeddings = nullptr;
};

/// The iterative loop over an in-memory dataset and backend.
RunReport run(const RunConfig& config, const Dataset& dataset, ChatBackend& backend, RunResources resources = {});

/// Loads everything named in the config, builds the backend (recording a
/// transcript when config.backend.transcript is set for non-replay
/// backends), runs, and writes the report when config.report is set.
RunReport run(const RunConfig& config);

/// Scores an externally supplied LF set: per-LF train/valid statistics, then
/// label model and downstream model as in a run (PLM_acc is unavailable).
struct LfSetEvaluation {
  Metrics metrics;
  std::vector<LfSpec> lfs;  // the compilable ones
  std::vector<LfStats> train_stats, valid_stats;
  std::vector<std::pair<LfSpec, std::string>> rejected;
};

LfSetEvaluation evaluate_lf_set(const RunConfig& config, const Dataset& dataset, const std::vector<LfSpec>& specs,
                                RunResources resources = {});
nlohmann::json to_json(const LfSetEvaluation& e);

struct MetricSummary {
  std::optional<double> mean;
  std::optional<double> std;  // sample standard deviation
};

struct MultiSeedReport {
  std::vector<RunReport> runs;
  bool partial = false;
  MetricSummary plm_acc, lf_num, lf_acc_avg, lf_cov_avg, train_acc, train_cov, test_score;
  MetricKind test_metric = MetricKind::Accuracy;
};

/// Mean and sample std over runs; a metric unavailable in any run is unavailable.
MultiSeedReport summarize(std::vector<RunReport> runs);

/// Runs seeds config.seed .. config.seed + n_seeds - 1.
MultiSeedReport multi_seed(const RunConfig& config, const Dataset& dataset, ChatBackend& backend, int n_seeds,
                           RunResources resources = {});
MultiSeedReport multi_seed(const RunConfig& config, int n_seeds);

nlohmann::json to_json(const MultiSeedReport& r);

/// Percentage tables in the layout of the metric definitions (LF_num as a count).
std::string render_table(const RunReport& r);
std::string render_table(const MultiSeedReport& r);
/// Renders either report kind from its JSON form.
std::string render_table(const nlohmann::json& report);

}  // namespace lfloop
