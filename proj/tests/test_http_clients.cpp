#include <thread>

#include <doctest.h>
#include <httplib.h>

#include "fluentprobe/error.hpp"
#include "fluentprobe/http_clients.hpp"
#include "test_support.hpp"

using namespace fluentprobe;
using nlohmann::json;

namespace {

// Local server on an ephemeral port. Register routes, then start().
class LocalServer {
 public:
  LocalServer() { port_ = server_.bind_to_any_port("127.0.0.1"); }
  ~LocalServer() {
    if (!thread_.joinable()) return;
    server_.stop();
    thread_.join();
  }
  void start() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  httplib::Server& operator*() { return server_; }
  std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

TextRequest request(std::string text) { return {"client", "en", "cs", std::move(text), {}}; }

}  // namespace

TEST_CASE("translate client posts a form and reads the first translation") {
  LocalServer server;
  httplib::Params seen;
  std::string key;
  (*server).Post("/language/translate/v2", [&](const httplib::Request& req, httplib::Response& res) {
    seen = req.params;
    key = req.get_param_value("key");
    res.set_content(R"({"data":{"translations":[{"translatedText":"Karel se narodil v Praze."}]}})",
                    "application/json");
  });
  server.start();
  auto client = make_google_translate_client({server.url("/language/translate/v2"), "secret", 5});
  CHECK(client->complete(request("Karel was born in Prague .")) == "Karel se narodil v Praze.");
  CHECK(key == "secret");
  CHECK(seen.find("target")->second == "cs");
  CHECK(seen.find("q")->second == "Karel was born in Prague .");
}

TEST_CASE("chat client sends one user message with the temperature") {
  LocalServer server;
  json body;
  std::string auth;
  (*server).Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    body = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"Ahoj."}}]})",
                    "application/json");
  });
  server.start();
  auto client = make_chat_completion_client({server.url("/v1/chat/completions"), "k", 5}, "gpt-x");
  auto req = request("prompt text");
  req.aux["temperature"] = "0.5";
  CHECK(client->complete(req) == "Ahoj.");
  CHECK(auth == "Bearer k");
  CHECK(body["model"] == "gpt-x");
  CHECK(body["temperature"] == 0.5);
  CHECK(body["messages"].size() == 1);
  CHECK(body["messages"][0]["content"] == "prompt text");
}

TEST_CASE("QE client returns the score as text") {
  LocalServer server;
  json body;
  (*server).Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
    body = json::parse(req.body);
    res.set_content(R"({"score":0.8125})", "application/json");
  });
  server.start();
  auto client = make_qe_client({server.url("/score"), "", 5});
  auto req = request("Karel se narodil v Praze.");
  req.aux["source"] = "Karel was born in Prague .";
  CHECK(std::stod(client->complete(req)) == 0.8125);
  CHECK(body["src"] == "Karel was born in Prague .");
  CHECK(body["mt"] == "Karel se narodil v Praze.");
}

TEST_CASE("HTTP failures surface as client errors") {
  LocalServer server;
  (*server).Post("/down", [](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
    res.set_content("busy", "text/plain");
  });
  (*server).Post("/garbage", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("not json", "text/plain");
  });
  (*server).Post("/shape", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"data":{}})", "application/json");
  });
  server.start();
  auto code = [](TextClient& c) {
    try {
      c.complete(request("x"));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIo;
  };
  CHECK(code(*make_qe_client({server.url("/down"), "", 5})) == ErrorCode::kClientError);
  CHECK(code(*make_qe_client({server.url("/garbage"), "", 5})) == ErrorCode::kClientError);
  CHECK(code(*make_google_translate_client({server.url("/shape"), "", 5})) == ErrorCode::kClientError);
  CHECK(code(*make_qe_client({"http://127.0.0.1:1/none", "", 1})) == ErrorCode::kClientError);
}

TEST_CASE("recorded exchanges replay without the live client") {
  fptest::TempDir tmp;
  const auto fixtures = tmp / "fixtures.jsonl";
  {
    RecordingClient recorder(std::make_unique<FunctionClient>([](const TextRequest& r) {
                               return "<" + r.text + ">";
                             }),
                             fixtures);
    CHECK(recorder.complete(request("a")) == "<a>");
    CHECK(recorder.complete(request("b")) == "<b>");
  }
  ReplayClient replay(fixtures);
  CHECK(replay.size() == 2);
  CHECK(replay.complete(request("b")) == "<b>");
  try {
    replay.complete(request("c"));
    FAIL("expected a miss");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kClientError);
  }
}
