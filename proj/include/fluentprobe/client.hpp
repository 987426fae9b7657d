#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace fluentprobe {

// One request to a text backend (translator, chat LLM, QE model). The same
// shape serves all three so caching and replay are shared.
struct TextRequest {
  std::string client_id;
  std::string source_lang;
  std::string target_lang;
  std::string text;
  std::map<std::string, std::string> aux;

  // Unambiguous serialization; the cache key is its SHA-256.
  std::string canonical() const;
  std::string digest() const;
  // Key used by replay fixtures: aux["query"] when present, else text.
  const std::string& query() const;
  std::string fixture_key() const;

  nlohmann::json to_json() const;
  static TextRequest from_json(const nlohmann::json& j);
  bool operator==(const TextRequest&) const = default;
};

class TextClient {
 public:
  virtual ~TextClient() = default;
  // Throws Error(kClientError) on transport or protocol failure.
  virtual std::string complete(const TextRequest& request) = 0;
};

// Serves responses from a fixture file only; never touches the network.
class ReplayClient : public TextClient {
 public:
  explicit ReplayClient(const std::filesystem::path& fixtures);
  ReplayClient() = default;

  void add(const TextRequest& request, std::string response);
  std::string complete(const TextRequest& request) override;
  std::size_t calls() const noexcept { return calls_; }
  std::size_t size() const noexcept { return responses_.size(); }

 private:
  std::unordered_map<std::string, std::string> responses_;
  std::size_t calls_ = 0;
  std::mutex mu_;
};

// Forwards to a live client and appends every exchange to a fixture file
// readable by ReplayClient.
class RecordingClient : public TextClient {
 public:
  RecordingClient(std::unique_ptr<TextClient> live, std::filesystem::path fixtures);
  std::string complete(const TextRequest& request) override;

 private:
  std::unique_ptr<TextClient> live_;
  std::filesystem::path fixtures_;
  std::mutex mu_;
};

// Adapter for tests and in-process backends.
class FunctionClient : public TextClient {
 public:
  explicit FunctionClient(std::function<std::string(const TextRequest&)> fn)
      : fn_(std::move(fn)) {}
  std::string complete(const TextRequest& request) override;
  std::size_t calls() const noexcept { return calls_; }

 private:
  std::function<std::string(const TextRequest&)> fn_;
  std::size_t calls_ = 0;
  std::mutex mu_;
};

void append_fixture(const std::filesystem::path& fixtures, const TextRequest& request,
                    const std::string& response);

struct TranslationCacheEntry {
  std::string key;
  std::string value;
  std::int64_t timestamp = 0;  // seconds since epoch
};

// Content-addressed directory: <root>/<key[0:2]>/<key>.json. Writers of
// distinct keys never collide; writes land via rename so a reader sees either
// nothing or the full entry. An empty root gives a memory-only cache.
class TranslationCache {
 public:
  explicit TranslationCache(std::filesystem::path root = {});

  std::optional<TranslationCacheEntry> get(const std::string& key);
  void put(const std::string& key, const std::string& value);

 private:
  std::filesystem::path path_for(const std::string& key) const;

  std::filesystem::path root_;
  std::mutex mu_;
  std::unordered_map<std::string, TranslationCacheEntry> memory_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{500};
};

// Cache lookup, then up to policy.attempts client calls with exponential
// backoff between them. Only kClientError is retried.
std::string complete_cached(TextClient& client, const TextRequest& request,
                            TranslationCache& cache, const RetryPolicy& policy = {});

}  // namespace fluentprobe
