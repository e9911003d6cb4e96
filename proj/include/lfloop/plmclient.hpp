#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lfloop/corpus.hpp"

namespace lfloop {

enum class Role { System, User, Assistant };
std::string_view to_string(Role role);
Role role_from_string(std::string_view s);

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

/// Side information about a request. Not sent over the wire and not hashed;
/// the mock oracle reads it instead of parsing prompt text.
struct RequestMeta {
  InstanceId query_id = -1;
  bool annotation = false;                  // label provided, asking for justification
  bool cot = false;
  std::optional<ClassIndex> provided_label;  // annotation requests only
};

struct CompletionRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int n = 1;
  std::string model = "gpt-3.5-turbo";
  int max_tokens = 512;
  RequestMeta meta;

  void validate() const;
};

/// Chat-completions request body: {model, messages, temperature, n, max_tokens}.
nlohmann::json wire_body(const CompletionRequest& request);

/// Hex SHA-256 of the canonical JSON of {messages, temperature, n}.
std::string request_hash(const CompletionRequest& request);

/// Request fields stored in transcripts (the hashed fields plus model and max_tokens).
nlohmann::json request_to_json(const CompletionRequest& request);
CompletionRequest request_from_json(const nlohmann::json& j);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// Exactly request.n response texts, in order.
  virtual std::vector<std::string> complete(const CompletionRequest& request) = 0;
  virtual std::string name() const = 0;
};

struct TranscriptRecord {
  std::string hash;
  nlohmann::json request;
  std::vector<std::string> responses;
  std::string backend;
  double wall_ms = 0.0;

  bool operator==(const TranscriptRecord&) const = default;
};

struct Transcript {
  std::vector<TranscriptRecord> records;
  bool operator==(const Transcript&) const = default;
};

void write_transcript(std::ostream& out, const Transcript& transcript);
void save_transcript(const Transcript& transcript, const std::filesystem::path& path);
Transcript read_transcript(std::istream& in);
Transcript load_transcript(const std::filesystem::path& path);

/// Simulated PLM for tests and synthetic runs.
struct MockOracleConfig {
  std::map<InstanceId, ClassIndex> gold;
  std::vector<std::vector<std::string>> signatures;  // per class
  double p_label = 0.9;
  double p_keyword = 0.9;
  int payloads_min = 1;
  int payloads_max = 3;
  std::uint64_t seed = 0;

  void validate(int num_classes) const;
  bool operator==(const MockOracleConfig&) const = default;
};

nlohmann::json to_json(const MockOracleConfig& config);
MockOracleConfig mock_config_from_json(const nlohmann::json& j);
MockOracleConfig load_mock_config(const std::filesystem::path& path);
void save_mock_config(const MockOracleConfig& config, const std::filesystem::path& path);

/// One simulated response for `query`, deterministic in (config.seed, query.id, draw).
/// With a provided label (annotation) that label is emitted and payloads are
/// drawn for it; otherwise the gold label is emitted with probability p_label.
std::string mock_oracle_respond(const MockOracleConfig& config, const Instance& query, TaskKind task_kind,
                                const std::vector<std::string>& classes, bool cot, std::uint64_t draw,
                                std::optional<ClassIndex> provided_label = std::nullopt);

/// Mock backend. Response i of a request uses draw key derive(hash, i), so
/// identical requests yield identical texts.
class MockBackend : public ChatBackend {
 public:
  MockBackend(MockOracleConfig config, const Dataset& dataset);
  std::vector<std::string> complete(const CompletionRequest& request) override;
  std::string name() const override { return "mock"; }

 private:
  MockOracleConfig config_;
  const Dataset* dataset_;
  std::unordered_map<InstanceId, const Instance*> by_id_;
};

/// Serves responses from a transcript by request hash. Repeated hashes are
/// served in recorded order.
class ReplayBackend : public ChatBackend {
 public:
  explicit ReplayBackend(Transcript transcript);
  std::vector<std::string> complete(const CompletionRequest& request) override;
  std::string name() const override { return "replay"; }

 private:
  std::mutex mutex_;
  std::unordered_map<std::string, std::vector<std::size_t>> index_;
  std::unordered_map<std::string, std::size_t> cursor_;
  Transcript transcript_;
};

/// Forwards to `inner` and appends every exchange to `transcript`.
class RecordingBackend : public ChatBackend {
 public:
  RecordingBackend(ChatBackend& inner, Transcript& transcript) : inner_(inner), transcript_(transcript) {}
  std::vector<std::string> complete(const CompletionRequest& request) override;
  std::string name() const override { return inner_.name(); }

 private:
  ChatBackend& inner_;
  Transcript& transcript_;
  std::mutex mutex_;
};

struct HttpConfig {
  std::string endpoint = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";
  int max_attempts = 3;
  int backoff_ms = 500;  // doubled after each failed attempt
  int timeout_s = 120;
};

/// POSTs to <endpoint>/chat/completions with bearer auth. Retries network
/// errors and 408/409/429/5xx; other statuses fail immediately.
class HttpBackend : public ChatBackend {
 public:
  explicit HttpBackend(HttpConfig config);
  std::vector<std::string> complete(const CompletionRequest& request) override;
  std::string name() const override { return "http"; }

 private:
  nlohmann::json post(const nlohmann::json& body);
  HttpConfig config_;
  std::string api_key_;
};

}  // namespace lfloop
