#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <ctime>
#include <functional>
#include <memory>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cirf/error.hpp"
#include "cirf/hash.hpp"
#include "cirf/http.hpp"
#include "cirf/ndjson_cache.hpp"

namespace cirf {

enum class TemplateId { P1, P2 };

inline const char* template_name(TemplateId t) { return t == TemplateId::P1 ? "P1" : "P2"; }

inline TemplateId template_from_name(std::string_view s) {
  if (s == "P1") return TemplateId::P1;
  if (s == "P2") return TemplateId::P2;
  throw SchemaFormatError("template_id", "unknown template '" + std::string(s) + "'");
}

enum class Mode { Live, Record, Replay };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Live: return "live";
    case Mode::Record: return "record";
    case Mode::Replay: return "replay";
  }
  return "?";
}

inline Mode mode_from_name(std::string_view s) {
  if (s == "live") return Mode::Live;
  if (s == "record") return Mode::Record;
  if (s == "replay") return Mode::Replay;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

struct PromptRequest {
  TemplateId template_id = TemplateId::P1;
  std::string prompt;
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.0;
  int max_tokens = 1024;
  // Metadata; not part of the cache key.
  bool truncated = false;
  std::size_t original_lines = 0;

  /// SHA-256 over (template id, prompt, model, temperature) and nothing else.
  std::string cache_key() const {
    const nlohmann::json j{{"template_id", template_name(template_id)},
                           {"prompt", prompt},
                           {"model", model},
                           {"temperature", temperature}};
    return sha256_hex(j.dump());
  }

  nlohmann::json to_json() const {
    return {{"template_id", template_name(template_id)}, {"prompt", prompt},
            {"model", model},                            {"temperature", temperature},
            {"max_tokens", max_tokens}};
  }

  static PromptRequest from_json(const nlohmann::json& j) {
    PromptRequest r;
    r.template_id = template_from_name(j.at("template_id").get<std::string>());
    r.prompt = j.at("prompt").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.temperature = j.at("temperature").get<double>();
    r.max_tokens = j.value("max_tokens", 1024);
    return r;
  }
};

struct PromptSettings {
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.0;
  int max_tokens = 1024;
  std::size_t p2_max_lines = 50;
};

namespace detail {
inline bool blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n") == std::string_view::npos;
}
}  // namespace detail

inline constexpr std::string_view kP1Head = "Your task is to analyze the attitude of the [";
inline constexpr std::string_view kP1Mid = "] towards the [";
inline constexpr std::string_view kP1Tail =
    "] using first-order logic. Formulate a response and conclude with a statement indicating "
    "the attitude (Support, Opposed, Neutral).";

inline constexpr std::string_view kP2Head =
    "You are provided with several descriptions, each representing a predicate in first-order "
    "logic. Your task is to create new descriptions that summarize the main points of these "
    "predicates.";

/// FOL-generation prompt with the sentence and target substituted verbatim.
inline PromptRequest render_p1(std::string_view sentence, std::string_view target,
                               const PromptSettings& settings = {}) {
  if (detail::blank(sentence)) throw EmptyField("sentence is empty");
  if (detail::blank(target)) throw EmptyField("target is empty");
  PromptRequest r;
  r.template_id = TemplateId::P1;
  r.prompt.append(kP1Head).append(sentence).append(kP1Mid).append(target).append(kP1Tail);
  r.model = settings.model;
  r.temperature = settings.temperature;
  r.max_tokens = settings.max_tokens;
  return r;
}

/// Summarization prompt listing one predicate per line, capped at
/// `settings.p2_max_lines` (truncation is recorded on the request).
inline PromptRequest render_p2(std::span<const std::string> predicates,
                               const PromptSettings& settings = {}) {
  if (predicates.empty()) throw EmptyField("predicate list is empty");
  PromptRequest r;
  r.template_id = TemplateId::P2;
  r.prompt.append(kP2Head).append("\n\n");
  const std::size_t n = std::min(predicates.size(), std::max<std::size_t>(1, settings.p2_max_lines));
  for (std::size_t i = 0; i < n; ++i) {
    if (detail::blank(predicates[i])) throw EmptyField("blank predicate at index " + std::to_string(i));
    r.prompt.append(predicates[i]).append("\n");
  }
  r.truncated = n < predicates.size();
  r.original_lines = predicates.size();
  r.model = settings.model;
  r.temperature = settings.temperature;
  r.max_tokens = settings.max_tokens;
  return r;
}

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string complete(const PromptRequest& req) = 0;
};

/// OpenAI-style chat completion over HTTP(S).
class HttpCompletionBackend final : public CompletionBackend {
 public:
  HttpCompletionBackend(std::string base_url, std::string api_key, RetryPolicy retry = {})
      : base_url_(std::move(base_url)), api_key_(std::move(api_key)), retry_(retry) {}

  static nlohmann::json request_body(const PromptRequest& req) {
    return {{"model", req.model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}})},
            {"temperature", req.temperature},
            {"max_tokens", req.max_tokens}};
  }

  std::string complete(const PromptRequest& req) override {
    if (base_url_.empty()) throw ConfigError("LLM base URL is not configured (LLM_BASE_URL)");
    const auto j = post_json(base_url_, "/chat/completions", request_body(req), api_key_, retry_);
    try {
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw HttpError(200, 1, std::string("malformed completion response: ") + e.what());
    }
  }

 private:
  std::string base_url_;
  std::string api_key_;
  RetryPolicy retry_;
};

/// Routes prompt requests to a backend and/or the on-disk cache according to
/// the mode: live never touches the cache, record calls the backend and
/// appends the exchange, replay only reads the cache and never calls the
/// backend.
class Gateway {
 public:
  using Clock = std::function<std::string()>;

  Gateway(std::shared_ptr<CompletionBackend> backend, std::filesystem::path cache_path, Mode mode,
          int max_in_flight = 4, Clock clock = utc_now)
      : backend_(std::move(backend)),
        cache_(std::move(cache_path)),
        mode_(mode),
        slots_(std::clamp(max_in_flight, 1, 64)),
        clock_(std::move(clock)) {}

  std::string complete(const PromptRequest& req) {
    const std::string key = req.cache_key();
    if (mode_ == Mode::Replay) {
      auto hit = cache_.get(key);
      if (!hit)
        throw CacheMiss(std::string(template_name(req.template_id)) + " request " +
                        key.substr(0, 16) + " not in cache " + cache_.path().string());
      ++cache_hits_;
      return hit->at("response").get<std::string>();
    }
    if (!backend_) throw ConfigError("no completion backend configured");
    std::string response;
    {
      slots_.acquire();
      struct Release {
        std::counting_semaphore<64>& s;
        ~Release() { s.release(); }
      } release{slots_};
      ++requests_;
      response = backend_->complete(req);
    }
    if (mode_ == Mode::Record) {
      nlohmann::json rec = req.to_json();
      rec["key"] = key;
      rec["response"] = response;
      rec["created_at"] = clock_();
      cache_.put(rec);
    }
    return response;
  }

  Mode mode() const { return mode_; }
  std::size_t requests() const { return requests_.load(); }
  std::size_t cache_hits() const { return cache_hits_.load(); }
  const NdjsonCache& cache() const { return cache_; }

  static std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

 private:
  std::shared_ptr<CompletionBackend> backend_;
  NdjsonCache cache_;
  Mode mode_;
  std::counting_semaphore<64> slots_;
  Clock clock_;
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> cache_hits_{0};
};

}  // namespace cirf
