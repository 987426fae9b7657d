#include "fluentprobe/client.hpp"

#include <fstream>
#include <thread>

#include "fluentprobe/digest.hpp"
#include "fluentprobe/error.hpp"

namespace fluentprobe {

using nlohmann::json;

std::string TextRequest::canonical() const {
  return json::array({"fluentprobe.request/1", client_id, source_lang, target_lang, text, aux})
      .dump();
}

std::string TextRequest::digest() const { return sha256_hex(canonical()); }

const std::string& TextRequest::query() const {
  auto it = aux.find("query");
  return it == aux.end() ? text : it->second;
}

std::string TextRequest::fixture_key() const {
  return sha256_hex(json::array({client_id, source_lang, target_lang, query()}).dump());
}

json TextRequest::to_json() const {
  return json{{"client", client_id},
              {"source_lang", source_lang},
              {"target_lang", target_lang},
              {"text", text},
              {"aux", aux}};
}

TextRequest TextRequest::from_json(const json& j) {
  TextRequest r;
  r.client_id = j.at("client").get<std::string>();
  r.source_lang = j.at("source_lang").get<std::string>();
  r.target_lang = j.at("target_lang").get<std::string>();
  r.text = j.at("text").get<std::string>();
  if (auto it = j.find("aux"); it != j.end()) {
    r.aux = it->get<std::map<std::string, std::string>>();
  }
  return r;
}

ReplayClient::ReplayClient(const std::filesystem::path& fixtures) {
  std::ifstream in(fixtures);
  if (!in) throw Error(ErrorCode::kIo, "cannot open fixtures " + fixtures.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      TextRequest r;
      r.client_id = j.at("client").get<std::string>();
      r.source_lang = j.at("source_lang").get<std::string>();
      r.target_lang = j.at("target_lang").get<std::string>();
      r.text = j.at("text").get<std::string>();
      responses_[r.fixture_key()] = j.at("response").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedRecord,
                  fixtures.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void ReplayClient::add(const TextRequest& request, std::string response) {
  std::lock_guard lock(mu_);
  responses_[request.fixture_key()] = std::move(response);
}

std::string ReplayClient::complete(const TextRequest& request) {
  std::lock_guard lock(mu_);
  ++calls_;
  auto it = responses_.find(request.fixture_key());
  if (it == responses_.end()) {
    throw Error(ErrorCode::kClientError, "no replay fixture for " + request.client_id + " " +
                                             request.target_lang + ": " + request.query());
  }
  return it->second;
}

void append_fixture(const std::filesystem::path& fixtures, const TextRequest& request,
                    const std::string& response) {
  if (fixtures.has_parent_path()) std::filesystem::create_directories(fixtures.parent_path());
  std::ofstream out(fixtures, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot append to " + fixtures.string());
  json j{{"client", request.client_id},
         {"source_lang", request.source_lang},
         {"target_lang", request.target_lang},
         {"text", request.query()},
         {"response", response}};
  out << j.dump() << '\n';
}

RecordingClient::RecordingClient(std::unique_ptr<TextClient> live, std::filesystem::path fixtures)
    : live_(std::move(live)), fixtures_(std::move(fixtures)) {}

std::string RecordingClient::complete(const TextRequest& request) {
  auto response = live_->complete(request);
  std::lock_guard lock(mu_);
  append_fixture(fixtures_, request, response);
  return response;
}

std::string FunctionClient::complete(const TextRequest& request) {
  {
    std::lock_guard lock(mu_);
    ++calls_;
  }
  return fn_(request);
}

TranslationCache::TranslationCache(std::filesystem::path root) : root_(std::move(root)) {
  if (!root_.empty()) std::filesystem::create_directories(root_);
}

std::filesystem::path TranslationCache::path_for(const std::string& key) const {
  return root_ / key.substr(0, 2) / (key + ".json");
}

std::optional<TranslationCacheEntry> TranslationCache::get(const std::string& key) {
  std::lock_guard lock(mu_);
  if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  if (root_.empty()) return std::nullopt;
  std::ifstream in(path_for(key), std::ios::binary);
  if (!in) return std::nullopt;
  try {
    const auto j = json::parse(in);
    TranslationCacheEntry e{j.at("key").get<std::string>(), j.at("value").get<std::string>(),
                            j.at("timestamp").get<std::int64_t>()};
    if (e.key != key) return std::nullopt;
    memory_.emplace(key, e);
    return e;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

void TranslationCache::put(const std::string& key, const std::string& value) {
  const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  TranslationCacheEntry entry{key, value, now};
  std::lock_guard lock(mu_);
  memory_[key] = entry;
  if (root_.empty()) return;
  const auto target = path_for(key);
  std::filesystem::create_directories(target.parent_path());
  auto tmp = target;
  tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write cache entry " + tmp.string());
    out << json{{"key", key}, {"value", value}, {"timestamp", now}}.dump();
  }
  std::filesystem::rename(tmp, target);
}

std::string complete_cached(TextClient& client, const TextRequest& request,
                            TranslationCache& cache, const RetryPolicy& policy) {
  const auto key = request.digest();
  if (auto hit = cache.get(key)) return hit->value;
  auto delay = policy.base_delay;
  for (int attempt = 1;; ++attempt) {
    try {
      auto value = client.complete(request);
      cache.put(key, value);
      return value;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kClientError || attempt >= policy.attempts) throw;
    }
    std::this_thread::sleep_for(delay);
    delay *= 2;
  }
}

}  // namespace fluentprobe
