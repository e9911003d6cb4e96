#include "lfloop/plmclient.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

#include "lfloop/errors.hpp"
#include "lfloop/regex.hpp"
#include "lfloop/response_format.hpp"
#include "lfloop/rng.hpp"

namespace lfloop {

using nlohmann::json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

Role role_from_string(std::string_view s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  throw UsageError("unknown chat role '" + std::string(s) + "'");
}

void CompletionRequest::validate() const {
  if (messages.empty()) throw UsageError("completion request has no messages");
  if (messages.front().role != Role::System) throw UsageError("first message must be the system message");
  for (const auto& m : messages)
    if (m.content.empty()) throw UsageError("chat message with empty content");
  if (n < 1) throw UsageError("completion request needs n >= 1");
  if (!(temperature >= 0.0)) throw UsageError("temperature must be >= 0");
}

namespace {

json messages_json(const std::vector<ChatMessage>& messages) {
  json arr = json::array();
  for (const auto& m : messages) arr.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return arr;
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw BackendError("sha256 failed");
  std::string hex;
  hex.reserve(len * 2);
  char buf[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

}  // namespace

json wire_body(const CompletionRequest& r) {
  return {{"model", r.model},
          {"messages", messages_json(r.messages)},
          {"temperature", r.temperature},
          {"n", r.n},
          {"max_tokens", r.max_tokens}};
}

std::string request_hash(const CompletionRequest& r) {
  // nlohmann::json objects keep keys sorted, so dump() is canonical.
  const json canon = {{"messages", messages_json(r.messages)}, {"temperature", r.temperature}, {"n", r.n}};
  return sha256_hex(canon.dump());
}

json request_to_json(const CompletionRequest& r) { return wire_body(r); }

CompletionRequest request_from_json(const json& j) {
  CompletionRequest r;
  for (const auto& m : j.at("messages"))
    r.messages.push_back({role_from_string(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
  r.temperature = j.at("temperature").get<double>();
  r.n = j.at("n").get<int>();
  if (j.contains("model")) r.model = j["model"].get<std::string>();
  if (j.contains("max_tokens")) r.max_tokens = j["max_tokens"].get<int>();
  return r;
}

// ---- transcripts ----

void write_transcript(std::ostream& out, const Transcript& t) {
  for (const auto& r : t.records) {
    json j = {{"hash", r.hash},
              {"request", r.request},
              {"responses", r.responses},
              {"backend", r.backend},
              {"wall_ms", r.wall_ms}};
    out << j.dump() << '\n';
  }
}

void save_transcript(const Transcript& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write transcript " + path.string());
  write_transcript(out, t);
}

Transcript read_transcript(std::istream& in) {
  Transcript t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      TranscriptRecord r;
      r.hash = j.at("hash").get<std::string>();
      r.request = j.at("request");
      r.responses = j.at("responses").get<std::vector<std::string>>();
      r.backend = j.value("backend", "");
      r.wall_ms = j.value("wall_ms", 0.0);
      t.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw LoadError(std::string("corrupt transcript record: ") + e.what(), lineno);
    }
  }
  return t;
}

Transcript load_transcript(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open transcript " + path.string());
  return read_transcript(in);
}

// ---- mock oracle ----

void MockOracleConfig::validate(int num_classes) const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(p_label) || !prob(p_keyword)) throw ConfigError("mock oracle probabilities must lie in [0, 1]");
  if (payloads_min < 0 || payloads_max < payloads_min) throw ConfigError("mock oracle payload range invalid");
  if (static_cast<int>(signatures.size()) != num_classes)
    throw ConfigError("mock oracle needs one signature list per class");
  for (const auto& s : signatures)
    if (s.empty()) throw ConfigError("mock oracle signature list is empty");
  for (const auto& [id, c] : gold)
    if (c < 0 || c >= num_classes) throw ConfigError("mock oracle gold label out of range");
}

json to_json(const MockOracleConfig& c) {
  json gold = json::array();
  for (const auto& [id, label] : c.gold) gold.push_back({id, label});
  return {{"gold", gold},
          {"signatures", c.signatures},
          {"p_label", c.p_label},
          {"p_keyword", c.p_keyword},
          {"payloads_min", c.payloads_min},
          {"payloads_max", c.payloads_max},
          {"seed", c.seed}};
}

MockOracleConfig mock_config_from_json(const json& j) {
  MockOracleConfig c;
  for (const auto& pair : j.at("gold")) c.gold[pair.at(0).get<InstanceId>()] = pair.at(1).get<ClassIndex>();
  c.signatures = j.at("signatures").get<std::vector<std::vector<std::string>>>();
  c.p_label = j.value("p_label", c.p_label);
  c.p_keyword = j.value("p_keyword", c.p_keyword);
  c.payloads_min = j.value("payloads_min", c.payloads_min);
  c.payloads_max = j.value("payloads_max", c.payloads_max);
  c.seed = j.value("seed", c.seed);
  return c;
}

MockOracleConfig load_mock_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open mock oracle config " + path.string());
  try {
    return mock_config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void save_mock_config(const MockOracleConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << to_json(config).dump(2) << '\n';
}

namespace {

bool contains_seq(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  return !needle.empty() && std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

std::string as_pattern(const std::vector<std::string>& tokens) {
  std::string p = "\\b";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) p += "\\W+";
    p += regex::escape(tokens[i]);
  }
  return p + "\\b";
}

}  // namespace

std::string mock_oracle_respond(const MockOracleConfig& config, const Instance& query, TaskKind task_kind,
                                const std::vector<std::string>& classes, bool cot, std::uint64_t draw,
                                std::optional<ClassIndex> provided_label) {
  const int num_classes = static_cast<int>(classes.size());
  ClassIndex gold;
  if (provided_label) {
    gold = *provided_label;
  } else {
    const auto it = config.gold.find(query.id);
    if (it == config.gold.end())
      throw UsageError("mock oracle: unknown query instance " + std::to_string(query.id));
    gold = it->second;
  }
  if (gold < 0 || gold >= num_classes || static_cast<int>(config.signatures.size()) != num_classes)
    throw UsageError("mock oracle: class inventory does not match its config");

  Rng rng(derive_seed({config.seed, static_cast<std::uint64_t>(query.id), draw}));
  ClassIndex label = gold;
  if (!provided_label && !rng.bernoulli(config.p_label)) {
    const auto r = static_cast<ClassIndex>(rng.below(static_cast<std::uint64_t>(num_classes - 1)));
    label = r >= gold ? r + 1 : r;
  }

  const auto tokens = tokenize(query.text);
  std::vector<std::vector<std::string>> all_sigs;
  std::vector<std::vector<std::string>> gold_sigs, present;
  for (int c = 0; c < num_classes; ++c)
    for (const auto& s : config.signatures[static_cast<std::size_t>(c)]) {
      auto t = tokenize(s);
      if (t.empty()) continue;
      all_sigs.push_back(t);
      if (c == gold) {
        gold_sigs.push_back(t);
        if (contains_seq(tokens, t)) present.push_back(t);
      }
    }
  // Noise candidates: n-grams of the query containing no signature, by length.
  std::vector<std::vector<std::vector<std::string>>> noise_by_len(4);
  for (std::size_t n = 1; n <= 3; ++n)
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::vector<std::string> g(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                 tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
      if (std::any_of(all_sigs.begin(), all_sigs.end(), [&](const auto& s) { return contains_seq(g, s); }))
        continue;
      if (std::find(noise_by_len[n].begin(), noise_by_len[n].end(), g) == noise_by_len[n].end())
        noise_by_len[n].push_back(std::move(g));
    }

  const auto k = rng.between(config.payloads_min, config.payloads_max);
  std::vector<std::vector<std::string>> picked;
  for (std::int64_t i = 0; i < k; ++i) {
    std::vector<std::string> g;
    if (rng.bernoulli(config.p_keyword) && !present.empty()) {
      g = present[rng.below(present.size())];
    } else {
      std::size_t len = gold_sigs.empty() ? 1 : std::min<std::size_t>(gold_sigs[rng.below(gold_sigs.size())].size(), 3);
      const std::vector<std::vector<std::string>>* pool = &noise_by_len[len];
      if (pool->empty())
        for (std::size_t n = 1; n <= 3 && pool->empty(); ++n) pool = &noise_by_len[n];
      if (pool->empty()) continue;
      g = (*pool)[rng.below(pool->size())];
    }
    if (std::find(picked.begin(), picked.end(), g) == picked.end()) picked.push_back(std::move(g));
  }

  ParsedResponse r;
  r.label = label;
  for (const auto& g : picked) {
    if (task_kind == TaskKind::TextClassification)
      r.keywords.push_back(join_tokens(g));
    else
      r.patterns.push_back(as_pattern(g));
  }
  if (cot) {
    std::string why;
    if (picked.empty()) {
      why = "Nothing in the passage stands out, so I go with the most plausible class, " +
            classes[static_cast<std::size_t>(label)] + ".";
    } else {
      why = "The passage mentions";
      for (std::size_t i = 0; i < picked.size(); ++i) why += (i ? ", \"" : " \"") + join_tokens(picked[i]) + "\"";
      why += ", which points to " + classes[static_cast<std::size_t>(label)] + ".";
    }
    r.rationale = why;
  }
  return render_response(r, task_kind, classes, cot);
}

MockBackend::MockBackend(MockOracleConfig config, const Dataset& dataset)
    : config_(std::move(config)), dataset_(&dataset) {
  config_.validate(dataset.num_classes());
  for (auto s : {Split::Train, Split::Valid, Split::Test})
    for (const auto& x : dataset.split(s)) by_id_.emplace(x.id, &x);
}

std::vector<std::string> MockBackend::complete(const CompletionRequest& request) {
  request.validate();
  const auto it = by_id_.find(request.meta.query_id);
  if (it == by_id_.end())
    throw UsageError("mock backend: request does not name a known instance (" +
                     std::to_string(request.meta.query_id) + ")");
  const std::uint64_t h = std::stoull(request_hash(request).substr(0, 16), nullptr, 16);
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(request.n));
  for (int i = 0; i < request.n; ++i)
    out.push_back(mock_oracle_respond(config_, *it->second, dataset_->task_kind, dataset_->classes, request.meta.cot,
                                      derive_seed({h, static_cast<std::uint64_t>(i)}),
                                      request.meta.annotation ? request.meta.provided_label : std::nullopt));
  return out;
}

// ---- replay / recording ----

ReplayBackend::ReplayBackend(Transcript transcript) : transcript_(std::move(transcript)) {
  for (std::size_t i = 0; i < transcript_.records.size(); ++i) index_[transcript_.records[i].hash].push_back(i);
}

std::vector<std::string> ReplayBackend::complete(const CompletionRequest& request) {
  const std::string h = request_hash(request);
  std::lock_guard lock(mutex_);
  const auto it = index_.find(h);
  if (it == index_.end()) throw ReplayMiss(h);
  auto& cur = cursor_[h];
  // Past the recorded occurrences, the last one keeps being served.
  const std::size_t rec = it->second[std::min(cur, it->second.size() - 1)];
  ++cur;
  const auto& responses = transcript_.records[rec].responses;
  if (static_cast<int>(responses.size()) < request.n)
    throw BackendError("replay record for " + h + " has " + std::to_string(responses.size()) +
                       " responses, request wants " + std::to_string(request.n));
  return {responses.begin(), responses.begin() + request.n};
}

std::vector<std::string> RecordingBackend::complete(const CompletionRequest& request) {
  const auto t0 = std::chrono::steady_clock::now();
  auto responses = inner_.complete(request);
  const std::chrono::duration<double, std::milli> dt = std::chrono::steady_clock::now() - t0;
  std::lock_guard lock(mutex_);
  transcript_.records.push_back({request_hash(request), request_to_json(request), responses, inner_.name(), dt.count()});
  return responses;
}

}  // namespace lfloop
