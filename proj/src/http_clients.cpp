#include "fluentprobe/http_clients.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>

#include "fluentprobe/error.hpp"

namespace fluentprobe {
namespace {

using nlohmann::json;

struct SplitUrl {
  std::string origin;
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::kInvalidConfig, "endpoint must include a scheme: " + url);
  }
  const auto path_begin = url.find('/', scheme_end + 3);
  if (path_begin == std::string::npos) return {url, "/"};
  return {url.substr(0, path_begin), url.substr(path_begin)};
}

class HttpClientBase : public TextClient {
 public:
  explicit HttpClientBase(HttpEndpoint endpoint)
      : endpoint_(std::move(endpoint)), url_(split_url(endpoint_.url)) {}

 protected:
  json post_json(const std::string& path, const json& body, const httplib::Headers& headers) {
    auto res = client().Post(path, headers, body.dump(), "application/json");
    return parse(res);
  }

  json post_form(const std::string& path, const httplib::Params& params) {
    auto res = client().Post(path, params);
    return parse(res);
  }

  HttpEndpoint endpoint_;
  SplitUrl url_;

 private:
  httplib::Client client() {
    httplib::Client cli(url_.origin);
    cli.set_connection_timeout(endpoint_.timeout_seconds, 0);
    cli.set_read_timeout(endpoint_.timeout_seconds, 0);
    return cli;
  }

  static json parse(const httplib::Result& res) {
    if (!res) {
      throw Error(ErrorCode::kClientError, "transport failure: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw Error(ErrorCode::kClientError,
                  "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kClientError, std::string("unparseable response: ") + e.what());
    }
  }
};

class GoogleTranslateClient : public HttpClientBase {
 public:
  using HttpClientBase::HttpClientBase;

  std::string complete(const TextRequest& request) override {
    std::string path = url_.path;
    if (!endpoint_.api_key.empty()) {
      path += (path.find('?') == std::string::npos ? "?key=" : "&key=") + endpoint_.api_key;
    }
    httplib::Params params{{"q", request.text},
                           {"source", request.source_lang},
                           {"target", request.target_lang},
                           {"format", "text"}};
    const auto body = post_form(path, params);
    try {
      return body.at("data").at("translations").at(0).at("translatedText").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kClientError, std::string("unexpected response shape: ") + e.what());
    }
  }
};

class ChatCompletionClient : public HttpClientBase {
 public:
  ChatCompletionClient(HttpEndpoint endpoint, std::string model)
      : HttpClientBase(std::move(endpoint)), model_(std::move(model)) {}

  std::string complete(const TextRequest& request) override {
    double temperature = 0.0;
    if (auto it = request.aux.find("temperature"); it != request.aux.end()) {
      temperature = std::stod(it->second);
    }
    json body{{"model", model_},
              {"temperature", temperature},
              {"messages", json::array({{{"role", "user"}, {"content", request.text}}})}};
    httplib::Headers headers;
    if (!endpoint_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
    }
    const auto res = post_json(url_.path, body, headers);
    try {
      return res.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kClientError, std::string("unexpected response shape: ") + e.what());
    }
  }

 private:
  std::string model_;
};

class QeClient : public HttpClientBase {
 public:
  using HttpClientBase::HttpClientBase;

  std::string complete(const TextRequest& request) override {
    std::string src;
    if (auto it = request.aux.find("source"); it != request.aux.end()) src = it->second;
    const auto res = post_json(url_.path, json{{"src", src}, {"mt", request.text}}, {});
    try {
      return json(res.at("score").get<double>()).dump();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kClientError, std::string("unexpected response shape: ") + e.what());
    }
  }
};

}  // namespace

std::unique_ptr<TextClient> make_google_translate_client(HttpEndpoint endpoint) {
  return std::make_unique<GoogleTranslateClient>(std::move(endpoint));
}

std::unique_ptr<TextClient> make_chat_completion_client(HttpEndpoint endpoint, std::string model) {
  return std::make_unique<ChatCompletionClient>(std::move(endpoint), std::move(model));
}

std::unique_ptr<TextClient> make_qe_client(HttpEndpoint endpoint) {
  return std::make_unique<QeClient>(std::move(endpoint));
}

}  // namespace fluentprobe
