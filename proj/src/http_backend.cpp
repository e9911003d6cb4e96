// Eigen (via plmclient.hpp) must come before httplib's system headers.
#include "lfloop/plmclient.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "lfloop/errors.hpp"

namespace lfloop {

using nlohmann::json;

namespace {

// "https://host:port/v1" -> {"https://host:port", "/v1"}
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
  const auto scheme = endpoint.find("://");
  const auto slash = endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (slash == std::string::npos) return {endpoint, ""};
  std::string path = endpoint.substr(slash);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {endpoint.substr(0, slash), path};
}

bool retryable(int status) { return status == 408 || status == 409 || status == 429 || status >= 500; }

}  // namespace

HttpBackend::HttpBackend(HttpConfig config) : config_(std::move(config)) {
  if (config_.max_attempts < 1) throw ConfigError("http backend needs max_attempts >= 1");
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key) throw ConfigError("environment variable " + config_.api_key_env + " is not set");
    api_key_ = key;
  }
}

json HttpBackend::post(const json& body) {
  const auto [base, prefix] = split_endpoint(config_.endpoint);
  httplib::Client client(base);
  client.set_connection_timeout(config_.timeout_s, 0);
  client.set_read_timeout(config_.timeout_s, 0);
  client.set_write_timeout(config_.timeout_s, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const std::string payload = body.dump();
  std::string last_error;
  int delay_ms = config_.backoff_ms;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    auto res = client.Post(prefix + "/chat/completions", headers, payload, "application/json");
    if (res && res->status == 200) {
      try {
        return json::parse(res->body);
      } catch (const json::exception& e) {
        throw BackendError(std::string("malformed completion response: ") + e.what());
      }
    }
    if (res && !retryable(res->status))
      throw BackendError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500));
    last_error = res ? "HTTP " + std::to_string(res->status) : "network error: " + httplib::to_string(res.error());
    if (attempt < config_.max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      delay_ms *= 2;
    }
  }
  throw BackendError("giving up after " + std::to_string(config_.max_attempts) + " attempts (" + last_error + ")");
}

std::vector<std::string> HttpBackend::complete(const CompletionRequest& request) {
  request.validate();
  std::vector<std::string> out;
  // Some endpoints ignore n or return fewer choices; top up with further calls.
  for (int round = 0; static_cast<int>(out.size()) < request.n; ++round) {
    if (round >= request.n) throw BackendError("endpoint keeps returning fewer choices than requested");
    CompletionRequest part = request;
    part.n = request.n - static_cast<int>(out.size());
    const json reply = post(wire_body(part));
    if (!reply.contains("choices") || !reply["choices"].is_array())
      throw BackendError("completion response has no choices array");
    for (const auto& choice : reply["choices"]) {
      if (static_cast<int>(out.size()) == request.n) break;
      const auto& content = choice.at("message").at("content");
      out.push_back(content.is_string() ? content.get<std::string>() : std::string());
    }
  }
  return out;
}

}  // namespace lfloop
