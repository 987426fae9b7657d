#pragma once

#include <memory>
#include <string>

#include "fluentprobe/client.hpp"

namespace fluentprobe {

struct HttpEndpoint {
  std::string url;           // scheme://host[:port]/path
  std::string api_key;       // resolved from the environment by the caller
  int timeout_seconds = 60;
};

// Google Cloud Translation v2 (form-encoded POST, key as query parameter).
std::unique_ptr<TextClient> make_google_translate_client(HttpEndpoint endpoint);

// OpenAI-compatible chat completions; the request text is sent as a single
// user message. Temperature comes from request.aux["temperature"].
std::unique_ptr<TextClient> make_chat_completion_client(HttpEndpoint endpoint, std::string model);

// Quality-estimation server: POST {"src": ..., "mt": ...} -> {"score": <number>}.
// The response text is the score rendered as a decimal string.
std::unique_ptr<TextClient> make_qe_client(HttpEndpoint endpoint);

}  // namespace fluentprobe
