#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "cirf/llm_gateway.hpp"

using namespace cirf;
namespace fs = std::filesystem;

namespace {

class CountingBackend final : public CompletionBackend {
 public:
  std::string complete(const PromptRequest& req) override {
    ++calls;
    return "response to " + req.prompt.substr(req.prompt.size() - 12);
  }
  std::atomic<int> calls{0};
};

class ExplodingBackend final : public CompletionBackend {
 public:
  std::string complete(const PromptRequest&) override { throw std::logic_error("backend used in replay"); }
};

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cirf_gateway_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const fs::path p = dir / name;
  fs::remove(p);
  return p;
}

std::string fixed_clock() { return "2026-01-01T00:00:00Z"; }

/// Local OpenAI-style server; `fail_first` requests answer with `fail_status`.
struct FakeServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> hits{0};
  int fail_first = 0;
  int fail_status = 500;
  nlohmann::json last_body;
  std::string last_auth;

  FakeServer() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++hits;
      last_body = nlohmann::json::parse(req.body);
      last_auth = req.get_header_value("Authorization");
      if (n <= fail_first) {
        res.status = fail_status;
        res.set_content("{\"error\":\"busy\"}", "application/json");
        return;
      }
      const std::string content = "echo:" + last_body["messages"][0]["content"].get<std::string>().substr(0, 10);
      res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump(),
                      "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeServer() {
    server.stop();
    thread.join();
  }
  std::string base() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

RetryPolicy fast_retry(int attempts = 3) {
  RetryPolicy r;
  r.attempts = attempts;
  r.initial_backoff = std::chrono::milliseconds(1);
  r.timeout = std::chrono::seconds(5);
  return r;
}

}  // namespace

TEST(RenderP1, SubstitutesBothSlotsInTemplate) {
  const auto r = render_p1("Masks save lives", "mask mandates");
  EXPECT_EQ(r.prompt,
            "Your task is to analyze the attitude of the [Masks save lives] towards the [mask mandates] using "
            "first-order logic. Formulate a response and conclude with a statement indicating the attitude "
            "(Support, Opposed, Neutral).");
  EXPECT_EQ(r.template_id, TemplateId::P1);
  EXPECT_EQ(r.temperature, 0.0);
}

TEST(RenderP1, BlankFieldsRejected) {
  EXPECT_THROW(render_p1("", "x"), EmptyField);
  EXPECT_THROW(render_p1("text", "  "), EmptyField);
}

TEST(RenderP1, Deterministic) {
  EXPECT_EQ(render_p1("a b", "c").prompt, render_p1("a b", "c").prompt);
  EXPECT_EQ(render_p1("a b", "c").cache_key(), render_p1("a b", "c").cache_key());
}

TEST(RenderP2, ListsPredicatesInOrder) {
  const std::vector<std::string> preds = {"Reduce(X,Risk)", "Lower(Y,Harm)"};
  const auto r = render_p2(preds);
  EXPECT_TRUE(r.prompt.starts_with("You are provided with several descriptions"));
  EXPECT_NE(r.prompt.find("summarize the main points of these predicates"), std::string::npos);
  EXPECT_TRUE(r.prompt.ends_with("\n\nReduce(X,Risk)\nLower(Y,Harm)\n"));
  EXPECT_FALSE(r.truncated);
}

TEST(RenderP2, SinglePredicateAndEmptyList) {
  const std::vector<std::string> one = {"A(x)"};
  EXPECT_TRUE(render_p2(one).prompt.ends_with("A(x)\n"));
  EXPECT_THROW(render_p2(std::vector<std::string>{}), EmptyField);
}

TEST(RenderP2, TruncatesToConfiguredLines) {
  std::vector<std::string> preds;
  for (int i = 0; i < 500; ++i) preds.push_back("P" + std::to_string(i) + "(x)");
  const auto r = render_p2(preds);
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.original_lines, 500u);
  EXPECT_NE(r.prompt.find("P49(x)\n"), std::string::npos);
  EXPECT_EQ(r.prompt.find("P50(x)"), std::string::npos);
}

TEST(PromptRequest, CacheKeyStableAcrossSerialization) {
  auto r = render_p1("s", "t");
  EXPECT_EQ(PromptRequest::from_json(nlohmann::json::parse(r.to_json().dump())).cache_key(), r.cache_key());
  auto other = r;
  other.max_tokens = 7;  // not a key field
  EXPECT_EQ(other.cache_key(), r.cache_key());
  other.temperature = 0.5;
  EXPECT_NE(other.cache_key(), r.cache_key());
  other = r;
  other.model = "another";
  EXPECT_NE(other.cache_key(), r.cache_key());
}

TEST(Gateway, ReplayHitNeverCallsBackend) {
  const auto path = temp_path("replay_hit.ndjson");
  const auto req = render_p1("sentence", "target");
  {
    auto backend = std::make_shared<CountingBackend>();
    Gateway rec(backend, path, Mode::Record, 4, fixed_clock);
    rec.complete(req);
  }
  Gateway replay(std::make_shared<ExplodingBackend>(), path, Mode::Replay);
  EXPECT_EQ(replay.complete(req), "response to " + req.prompt.substr(req.prompt.size() - 12));
  EXPECT_EQ(replay.requests(), 0u);
  EXPECT_EQ(replay.cache_hits(), 1u);
}

TEST(Gateway, ReplayMissIsCacheMiss) {
  Gateway replay(nullptr, temp_path("replay_miss.ndjson"), Mode::Replay);
  EXPECT_THROW(replay.complete(render_p1("a", "b")), CacheMiss);
}

TEST(Gateway, RecordThenReplayIdentical) {
  const auto path = temp_path("roundtrip.ndjson");
  auto backend = std::make_shared<CountingBackend>();
  std::vector<std::string> recorded;
  {
    Gateway rec(backend, path, Mode::Record, 4, fixed_clock);
    for (int i = 0; i < 5; ++i) recorded.push_back(rec.complete(render_p1("s" + std::to_string(i), "t")));
  }
  Gateway replay(nullptr, path, Mode::Replay);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(replay.complete(render_p1("s" + std::to_string(i), "t")), recorded[i]);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["created_at"], "2026-01-01T00:00:00Z");
  EXPECT_EQ(j["template_id"], "P1");
  EXPECT_EQ(j["key"], render_p1("s0", "t").cache_key());
}

TEST(Gateway, LiveDoesNotCache) {
  const auto path = temp_path("live.ndjson");
  auto backend = std::make_shared<CountingBackend>();
  Gateway live(backend, path, Mode::Live);
  live.complete(render_p1("a", "b"));
  live.complete(render_p1("a", "b"));
  EXPECT_EQ(backend->calls, 2);
  EXPECT_FALSE(fs::exists(path));
}

TEST(Gateway, ConcurrentRecordKeepsEveryEntry) {
  const auto path = temp_path("concurrent.ndjson");
  auto backend = std::make_shared<CountingBackend>();
  {
    Gateway rec(backend, path, Mode::Record, 4, fixed_clock);
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t)
      threads.emplace_back([&, t] {
        for (int i = 0; i < 50; ++i) rec.complete(render_p1("s" + std::to_string(t * 1000 + i), "t"));
      });
  }
  NdjsonCache reloaded(path);
  EXPECT_EQ(reloaded.size(), 400u);
  EXPECT_EQ(reloaded.corrupt_lines(), 0u);
}

TEST(NdjsonCache, TornTailSkipped) {
  const auto path = temp_path("torn.ndjson");
  {
    NdjsonCache c(path);
    c.put({{"key", "a"}, {"response", "1"}});
    c.put({{"key", "b"}, {"response", "2"}});
    EXPECT_FALSE(c.put({{"key", "a"}, {"response", "other"}}));
  }
  std::ofstream(path, std::ios::app) << "{\"key\": \"c\", \"resp";
  NdjsonCache c(path);
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.corrupt_lines(), 1u);
  EXPECT_EQ(c.get("a")->at("response"), "1");
}

TEST(HttpBackend, SendsChatCompletionBody) {
  FakeServer srv;
  HttpCompletionBackend backend(srv.base(), "sk-test", fast_retry());
  const auto req = render_p1("sentence", "target");
  EXPECT_EQ(backend.complete(req), "echo:" + req.prompt.substr(0, 10));
  EXPECT_EQ(srv.last_body["model"], req.model);
  EXPECT_EQ(srv.last_body["temperature"], 0.0);
  EXPECT_EQ(srv.last_body["max_tokens"], req.max_tokens);
  EXPECT_EQ(srv.last_body["messages"][0]["role"], "user");
  EXPECT_EQ(srv.last_auth, "Bearer sk-test");
}

TEST(HttpBackend, RetriesServerErrors) {
  FakeServer srv;
  srv.fail_first = 2;
  HttpCompletionBackend backend(srv.base(), "", fast_retry(3));
  EXPECT_NO_THROW(backend.complete(render_p1("a", "b")));
  EXPECT_EQ(srv.hits, 3);
}

TEST(HttpBackend, GivesUpAfterAttempts) {
  FakeServer srv;
  srv.fail_first = 100;
  HttpCompletionBackend backend(srv.base(), "", fast_retry(3));
  try {
    backend.complete(render_p1("a", "b"));
    FAIL() << "expected HttpError";
  } catch (const HttpError& e) {
    EXPECT_EQ(e.status(), 500);
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(srv.hits, 3);
}

TEST(HttpBackend, ClientErrorsFailFast) {
  FakeServer srv;
  srv.fail_first = 100;
  srv.fail_status = 401;
  HttpCompletionBackend backend(srv.base(), "", fast_retry(3));
  try {
    backend.complete(render_p1("a", "b"));
    FAIL() << "expected HttpError";
  } catch (const HttpError& e) {
    EXPECT_EQ(e.status(), 401);
    EXPECT_EQ(e.attempts(), 1);
  }
}

TEST(HttpBackend, RecordModeCachesServerResponse) {
  FakeServer srv;
  const auto path = temp_path("http_record.ndjson");
  auto backend = std::make_shared<HttpCompletionBackend>(srv.base(), "", fast_retry());
  const auto req = render_p1("sentence", "target");
  std::string live;
  {
    Gateway rec(backend, path, Mode::Record, 2, fixed_clock);
    live = rec.complete(req);
  }
  Gateway replay(std::make_shared<ExplodingBackend>(), path, Mode::Replay);
  EXPECT_EQ(replay.complete(req), live);
  EXPECT_EQ(srv.hits, 1);
}

TEST(HttpBackend, MissingBaseUrlIsConfigError) {
  HttpCompletionBackend backend("", "", fast_retry());
  EXPECT_THROW(backend.complete(render_p1("a", "b")), ConfigError);
}
