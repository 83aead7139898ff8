#pragma once

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "mact/common.hpp"
#include "mact/tasks.hpp"
#include "mact/trajectory.hpp"
#include "mact/tree_store.hpp"

namespace mact {

// Remote oracle speaking a minimal JSON contract:
//   POST <path>  {"task_prompt": "...", "guide_pattern": "GFTA"?}
//   200          {"trajectory_text": "<global>...</global>..."}
// Transient failures (connect errors, non-200, malformed bodies) are retried
// with exponential backoff; a bearer token is attached when the
// MACT_ORACLE_TOKEN environment variable is set.
class HttpModel : public Oracle {
 public:
  struct Options {
    std::string path = "/generate";
    int retries = 3;            // total attempts
    int backoff_base_ms = 100;  // doubles per retry
    int timeout_sec = 10;
  };

  explicit HttpModel(std::string base_url)
      : HttpModel(std::move(base_url), Options()) {}

  HttpModel(std::string base_url, Options opts)
      : base_url_(std::move(base_url)), opts_(opts) {
    if (opts_.retries < 1) throw ConfigError("HttpModel: retries must be >= 1");
    if (const char* tok = std::getenv("MACT_ORACLE_TOKEN"))
      token_ = tok;
  }

  const char* name() const override { return "http-oracle"; }

  std::string generate(const TaskInstance& task,
                       const std::optional<ActionPattern>& guide) override {
    nlohmann::json body;
    body["task_prompt"] = render_prompt(task);
    if (guide) body["guide_pattern"] = guide->str();
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt < opts_.retries; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(
            opts_.backoff_base_ms * (1 << (attempt - 1))));
      httplib::Client client(base_url_);
      client.set_connection_timeout(opts_.timeout_sec, 0);
      client.set_read_timeout(opts_.timeout_sec, 0);
      httplib::Headers headers;
      if (!token_.empty())
        headers.emplace("Authorization", "Bearer " + token_);
      httplib::Result res =
          client.Post(opts_.path, headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "status " + std::to_string(res->status);
        continue;
      }
      try {
        const nlohmann::json j = nlohmann::json::parse(res->body);
        return j.at("trajectory_text").get<std::string>();
      } catch (const std::exception& e) {
        last_error = std::string("malformed response: ") + e.what();
      }
    }
    throw OracleError("http-oracle: " + last_error + " (" +
                      std::to_string(opts_.retries) + " attempts)");
  }

 private:
  std::string base_url_;
  Options opts_;
  std::string token_;
};

}  // namespace mact
