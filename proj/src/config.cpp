#include <fstream>

#include "lfloop/errors.hpp"
#include "lfloop/pipeline.hpp"

namespace lfloop {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::Random: return "random";
    case SamplerKind::Uncertainty: return "uncertainty";
    case SamplerKind::Seu: return "seu";
  }
  return "random";
}

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::Mock: return "mock";
    case BackendKind::Replay: return "replay";
    case BackendKind::Http: return "http";
  }
  return "mock";
}

SamplerKind sampler_from_string(std::string_view s) {
  if (s == "random") return SamplerKind::Random;
  if (s == "uncertainty" || s == "uncertain") return SamplerKind::Uncertainty;
  if (s == "seu") return SamplerKind::Seu;
  throw ConfigError("unknown sampler '" + std::string(s) + "'");
}

BackendKind backend_from_string(std::string_view s) {
  if (s == "mock") return BackendKind::Mock;
  if (s == "replay") return BackendKind::Replay;
  if (s == "http") return BackendKind::Http;
  throw ConfigError("unknown backend '" + std::string(s) + "'");
}

namespace {

std::string_view variant_name(LabelModelVariant v) {
  switch (v) {
    case LabelModelVariant::MajorityVote: return "majority_vote";
    case LabelModelVariant::WeightedVote: return "weighted_vote";
    case LabelModelVariant::DawidSkeneEM: return "dawid_skene";
  }
  return "dawid_skene";
}

LabelModelVariant variant_from(std::string_view s) {
  if (s == "majority_vote") return LabelModelVariant::MajorityVote;
  if (s == "weighted_vote") return LabelModelVariant::WeightedVote;
  if (s == "dawid_skene") return LabelModelVariant::DawidSkeneEM;
  throw ConfigError("unknown label model '" + std::string(s) + "'");
}

fs::path path_at(const json& j, const char* key, const fs::path& base) {
  if (!j.contains(key) || j[key].is_null()) return {};
  fs::path p = j[key].get<std::string>();
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

}  // namespace

void RunConfig::validate() const {
  prompt.validate();
  filters.validate();
  label_model.validate();
  if (n_iterations < 1) throw ConfigError("n_iterations must be >= 1");
  if (downstream.l2 < 0 || downstream.max_iters < 0 || downstream.grad_tol < 0)
    throw ConfigError("downstream hyperparameters must be non-negative");
  if (tfidf_min_df < 1 || tfidf_max_features < 1) throw ConfigError("tf-idf limits must be >= 1");
}

RunConfig config_from_json(const json& j, const fs::path& base) {
  RunConfig c;
  try {
    if (j.contains("data")) {
      const auto& d = j["data"];
      c.data.train = path_at(d, "train", base);
      c.data.valid = path_at(d, "valid", base);
      c.data.test = path_at(d, "test", base);
      c.data.schema = path_at(d, "schema", base);
      c.data.embeddings = path_at(d, "embeddings", base);
      c.data.annotations = path_at(d, "annotations", base);
    }
    if (j.contains("prompt")) {
      const auto& p = j["prompt"];
      if (p.contains("method")) c.prompt.method = prompt_method_from_string(p["method"].get<std::string>());
      c.prompt.n_responses = c.prompt.method == PromptMethod::SelfConsistency ? 10 : 1;
      read(p, "n_responses", c.prompt.n_responses);
      if (p.contains("selector")) c.prompt.selector = ic_selector_from_string(p["selector"].get<std::string>());
      read(p, "k", c.prompt.k);
      if (p.contains("temperature") && !p["temperature"].is_null()) c.prompt.temperature = p["temperature"].get<double>();
    }
    if (j.contains("sampler")) c.sampler = sampler_from_string(j["sampler"].get<std::string>());
    read(j, "seu_posterior_weighted", c.seu_posterior_weighted);
    read(j, "seu_pool_cap", c.seu_pool_cap);
    if (j.contains("filters")) {
      const auto& f = j["filters"];
      read(f, "accuracy_threshold", c.filters.accuracy_threshold);
      read(f, "redundancy_threshold", c.filters.redundancy_threshold);
      read(f, "enable_accuracy", c.filters.enable_accuracy);
      read(f, "enable_redundancy", c.filters.enable_redundancy);
    }
    if (j.contains("label_model")) {
      const auto& l = j["label_model"];
      if (l.contains("variant")) c.label_model.variant = variant_from(l["variant"].get<std::string>());
      read(l, "em_max_iters", c.label_model.em_max_iters);
      read(l, "em_tol", c.label_model.em_tol);
      read(l, "smoothing", c.label_model.smoothing);
      read(l, "abstain_as_outcome", c.label_model.abstain_as_outcome);
      read(l, "em_restarts", c.label_model.em_restarts);
    }
    if (j.contains("downstream")) {
      const auto& d = j["downstream"];
      read(d, "l2", c.downstream.l2);
      read(d, "max_iters", c.downstream.max_iters);
      read(d, "grad_tol", c.downstream.grad_tol);
      if (d.contains("features")) {
        const auto f = d["features"].get<std::string>();
        if (f == "tfidf")
          c.features = FeatureKind::Tfidf;
        else if (f == "embeddings")
          c.features = FeatureKind::Embeddings;
        else
          throw ConfigError("unknown feature kind '" + f + "'");
      }
      read(d, "min_df", c.tfidf_min_df);
      read(d, "max_features", c.tfidf_max_features);
      read(d, "soft_labels", c.soft_labels);
    }
    read(j, "lazy_retrain", c.lazy_retrain);
    read(j, "n_iterations", c.n_iterations);
    read(j, "seed", c.seed);
    if (j.contains("backend")) {
      const auto& b = j["backend"];
      if (b.contains("kind")) c.backend.kind = backend_from_string(b["kind"].get<std::string>());
      c.backend.mock_config = path_at(b, "mock_config", base);
      c.backend.transcript = path_at(b, "transcript", base);
      read(b, "endpoint", c.backend.http.endpoint);
      read(b, "api_key_env", c.backend.http.api_key_env);
      read(b, "max_attempts", c.backend.http.max_attempts);
      read(b, "backoff_ms", c.backend.http.backoff_ms);
      read(b, "timeout_s", c.backend.http.timeout_s);
      read(b, "model", c.backend.model);
      read(b, "max_tokens", c.backend.max_tokens);
    }
    c.report = path_at(j, "report", base);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

json config_echo(const RunConfig& c) {
  json prompt = {{"method", to_string(c.prompt.method)},
                 {"n_responses", c.prompt.n_responses},
                 {"selector", to_string(c.prompt.selector)},
                 {"k", c.prompt.k},
                 {"temperature", c.prompt.effective_temperature()}};
  return {{"prompt", prompt},
          {"sampler", to_string(c.sampler)},
          {"seu_posterior_weighted", c.seu_posterior_weighted},
          {"seu_pool_cap", c.seu_pool_cap},
          {"filters",
           {{"accuracy_threshold", c.filters.accuracy_threshold},
            {"redundancy_threshold", c.filters.redundancy_threshold},
            {"enable_accuracy", c.filters.enable_accuracy},
            {"enable_redundancy", c.filters.enable_redundancy}}},
          {"label_model",
           {{"variant", variant_name(c.label_model.variant)},
            {"em_max_iters", c.label_model.em_max_iters},
            {"em_tol", c.label_model.em_tol},
            {"smoothing", c.label_model.smoothing},
            {"abstain_as_outcome", c.label_model.abstain_as_outcome},
            {"em_restarts", c.label_model.em_restarts}}},
          {"downstream",
           {{"l2", c.downstream.l2},
            {"max_iters", c.downstream.max_iters},
            {"grad_tol", c.downstream.grad_tol},
            {"features", c.features == FeatureKind::Tfidf ? "tfidf" : "embeddings"},
            {"min_df", c.tfidf_min_df},
            {"max_features", c.tfidf_max_features},
            {"soft_labels", c.soft_labels}}},
          {"lazy_retrain", c.lazy_retrain},
          {"n_iterations", c.n_iterations},
          {"seed", c.seed},
          {"model", c.backend.model},
          {"max_tokens", c.backend.max_tokens}};
}

json to_json(const RunConfig& c) {
  json j = config_echo(c);
  j.erase("model");
  j.erase("max_tokens");
  j["data"] = {{"train", c.data.train.string()},
               {"valid", c.data.valid.string()},
               {"test", c.data.test.string()},
               {"schema", c.data.schema.string()},
               {"embeddings", c.data.embeddings.string()},
               {"annotations", c.data.annotations.string()}};
  j["backend"] = {{"kind", to_string(c.backend.kind)},
                  {"mock_config", c.backend.mock_config.string()},
                  {"transcript", c.backend.transcript.string()},
                  {"endpoint", c.backend.http.endpoint},
                  {"api_key_env", c.backend.http.api_key_env},
                  {"max_attempts", c.backend.http.max_attempts},
                  {"backoff_ms", c.backend.http.backoff_ms},
                  {"timeout_s", c.backend.http.timeout_s},
                  {"model", c.backend.model},
                  {"max_tokens", c.backend.max_tokens}};
  j["report"] = c.report.string();
  return j;
}

}  // namespace lfloop
