#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "httplib.h"
#include "vsg/core.hpp"
#include "vsg/dependency.hpp"
#include "vsg/observation.hpp"
#include "vsg/prompts.hpp"

namespace vsg {

/// Request/response shape of the endpoint.
enum class Dialect {
  /// OpenAI-style /v1/chat/completions with `logprobs` + `top_logprobs`.
  Chat,
  /// Legacy /v1/completions with integer `logprobs` and `echo` support.
  Completions,
};

enum class VsgPromptKind { MultiChoice, Binary };

struct RemoteEndpointConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model;
  /// Environment variable holding the bearer token; unset or empty means no auth.
  std::string auth_env = "VSG_API_KEY";
  std::size_t max_concurrency = 4;
  double timeout_s = 60.0;
  std::size_t retries = 2;
  double backoff_s = 0.5;
  std::size_t frames_per_segment = 8;
  Dialect dialect = Dialect::Chat;
  std::size_t top_logprobs = 20;
  /// Overrides the dialect's default request path.
  std::string path;

  void validate() const {
    if (!(timeout_s > 0.0)) throw Error(ErrorCode::ConfigError, "endpoint timeout must be > 0");
    if (max_concurrency < 1) throw Error(ErrorCode::ConfigError, "endpoint concurrency must be >= 1");
    if (base_url.rfind("http://", 0) != 0) {
      throw Error(ErrorCode::ConfigError, "endpoint URL must start with http:// (TLS is not built in): " + base_url);
    }
  }

  std::string request_path() const {
    if (!path.empty()) return path;
    return dialect == Dialect::Chat ? "/v1/chat/completions" : "/v1/completions";
  }
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
};

struct FirstTokenResponse {
  std::vector<TokenLogprob> top;
  std::string text;
};

/// Strips tokenizer space markers and surrounding whitespace.
inline std::string normalize_token(std::string_view tok) {
  static constexpr std::string_view kMarkers[] = {"\xC4\xA0", "\xE2\x96\x81"};  // GPT-2 'Ġ', SentencePiece '▁'
  for (;;) {
    bool stripped = false;
    while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t' || tok.front() == '\n' || tok.front() == '\r')) {
      tok.remove_prefix(1);
      stripped = true;
    }
    for (auto m : kMarkers) {
      if (tok.substr(0, m.size()) == m) {
        tok.remove_prefix(m.size());
        stripped = true;
      }
    }
    if (!stripped) break;
  }
  while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t' || tok.back() == '\n' || tok.back() == '\r')) {
    tok.remove_suffix(1);
  }
  return std::string(tok);
}

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Log-probability mass of each candidate among the returned first-token
/// alternatives. Tokens that normalize to the same candidate are pooled;
/// candidates never returned get -inf.
inline std::vector<double> candidate_logits(const std::vector<TokenLogprob>& top,
                                            const std::vector<std::string>& candidates, bool case_insensitive = false) {
  auto fold = [&](std::string s) {
    if (case_insensitive)
      for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < candidates.size(); ++i) index.emplace(fold(candidates[i]), i);
  std::vector<double> out(candidates.size(), -std::numeric_limits<double>::infinity());
  for (const auto& t : top) {
    auto it = index.find(fold(normalize_token(t.token)));
    if (it != index.end()) out[it->second] = log_add(out[it->second], t.logprob);
  }
  return out;
}

/// Labels whose first token cannot be told apart from a shorter label: a
/// multi-letter label is missing while its leading letter came back.
inline bool labels_collide(const std::vector<TokenLogprob>& top, const std::vector<std::string>& labels) {
  std::map<std::string, bool> seen;
  for (const auto& t : top) seen[normalize_token(t.token)] = true;
  for (const auto& label : labels) {
    if (label.size() < 2 || seen.count(label)) continue;
    if (seen.count(label.substr(0, 1))) return true;
  }
  return false;
}

/// HTTP client for one endpoint. Shared by all providers talking to it; the
/// semaphore bounds in-flight requests across threads.
class RemoteClient {
 public:
  explicit RemoteClient(RemoteEndpointConfig cfg)
      : cfg_(std::move(cfg)),
        slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(cfg_.max_concurrency, 1, kMaxSlots))) {
    cfg_.validate();
    const std::string rest = cfg_.base_url.substr(7);
    const auto slash = rest.find('/');
    host_ = "http://" + rest.substr(0, slash);
    prefix_ = slash == std::string::npos ? "" : rest.substr(slash);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  const RemoteEndpointConfig& config() const noexcept { return cfg_; }
  std::size_t requests_sent() const noexcept { return requests_.load(); }

  /// Top alternatives for the first generated token. Throws LogitsUnavailable
  /// when `require_logprobs` and the response carries none.
  FirstTokenResponse first_token(const std::string& prompt, const std::string& media_ref,
                                 bool require_logprobs = true) {
    const json response = post(request_body(prompt, media_ref, 1, 0.0, true));
    FirstTokenResponse out = parse_first_token(response);
    if (require_logprobs && out.top.empty()) {
      throw Error(ErrorCode::LogitsUnavailable, "endpoint returned no first-token logprobs: " + response.dump());
    }
    return out;
  }

  /// Free-form short answers, used when the endpoint cannot return logprobs.
  std::vector<std::string> sample(const std::string& prompt, std::size_t k, double temperature = 1.0) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) {
      json body = request_body(prompt, "", 4, temperature, false);
      body["seed"] = i;
      out.push_back(parse_first_token(post(body)).text);
    }
    return out;
  }

  /// Summed log-probability of `continuation` after `prompt`, via prompt echo.
  double continuation_logprob(const std::string& prompt, const std::string& continuation,
                              const std::string& media_ref) {
    if (cfg_.dialect != Dialect::Completions) {
      throw Error(ErrorCode::LabelTokenCollision, "continuation scoring needs the completions dialect");
    }
    json body = request_body(prompt + continuation, media_ref, 0, 0.0, false);
    body["echo"] = true;
    body["logprobs"] = 0;
    const json response = post(body);
    try {
      const json& lp = response.at("choices").at(0).at("logprobs");
      const auto& offsets = lp.at("text_offset");
      const auto& logprobs = lp.at("token_logprobs");
      double total = 0.0;
      bool any = false;
      for (std::size_t i = 0; i < offsets.size(); ++i) {
        if (offsets[i].get<std::size_t>() >= prompt.size() && !logprobs[i].is_null()) {
          total += logprobs[i].get<double>();
          any = true;
        }
      }
      if (!any) throw Error(ErrorCode::LogitsUnavailable, "echo response has no continuation tokens");
      return total;
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedProviderResponse, std::string(e.what()) + ": " + response.dump());
    }
  }

 private:
  json request_body(const std::string& prompt, const std::string& media_ref, int max_tokens, double temperature,
                    bool want_logprobs) const {
    json body{{"model", cfg_.model}, {"max_tokens", max_tokens}, {"temperature", temperature}};
    if (cfg_.dialect == Dialect::Chat) {
      json content;
      if (media_ref.empty()) {
        content = prompt;
      } else {
        content = json::array({json{{"type", "video_url"}, {"video_url", {{"url", media_ref}}}},
                               json{{"type", "text"}, {"text", prompt}}});
        body["mm_processor_kwargs"] = {{"num_frames", cfg_.frames_per_segment}};
      }
      body["messages"] = json::array({json{{"role", "user"}, {"content", content}}});
      if (want_logprobs) {
        body["logprobs"] = true;
        body["top_logprobs"] = cfg_.top_logprobs;
      }
    } else {
      body["prompt"] = prompt;
      if (!media_ref.empty()) {
        body["multi_modal_data"] = {{"video", media_ref}};
        body["mm_processor_kwargs"] = {{"num_frames", cfg_.frames_per_segment}};
      }
      if (want_logprobs) body["logprobs"] = cfg_.top_logprobs;
    }
    return body;
  }

  FirstTokenResponse parse_first_token(const json& response) const {
    FirstTokenResponse out;
    try {
      const json& choice = response.at("choices").at(0);
      if (cfg_.dialect == Dialect::Chat) {
        if (choice.contains("message") && choice["message"].contains("content") &&
            choice["message"]["content"].is_string()) {
          out.text = choice["message"]["content"].get<std::string>();
        }
        if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
            choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array() &&
            !choice["logprobs"]["content"].empty()) {
          for (const json& alt : choice["logprobs"]["content"][0].at("top_logprobs")) {
            out.top.push_back({alt.at("token").get<std::string>(), alt.at("logprob").get<double>()});
          }
        }
      } else {
        if (choice.contains("text") && choice["text"].is_string()) out.text = choice["text"].get<std::string>();
        if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
            choice["logprobs"].contains("top_logprobs") && choice["logprobs"]["top_logprobs"].is_array() &&
            !choice["logprobs"]["top_logprobs"].empty()) {
          for (const auto& [tok, lp] : choice["logprobs"]["top_logprobs"][0].items()) {
            out.top.push_back({tok, lp.get<double>()});
          }
        }
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedProviderResponse, std::string(e.what()) + ": " + response.dump());
    }
    return out;
  }

  json post(const json& body) {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<kMaxSlots>& s;
      ~Release() { s.release(); }
    } release{slots_};

    std::string last_error;
    for (std::size_t attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0) {
        const double wait = cfg_.backoff_s * std::pow(2.0, static_cast<double>(attempt - 1));
        std::this_thread::sleep_for(std::chrono::duration<double>(wait));
      }
      httplib::Client client(host_);
      const auto secs = static_cast<time_t>(cfg_.timeout_s);
      const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
      client.set_connection_timeout(secs, usecs);
      client.set_read_timeout(secs, usecs);
      client.set_write_timeout(secs, usecs);
      httplib::Headers headers;
      if (const char* token = std::getenv(cfg_.auth_env.c_str()); token != nullptr && *token != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + token);
      }
      ++requests_;
      auto res = client.Post(prefix_ + cfg_.request_path(), headers, body.dump(), "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500 || res->status == 429) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw Error(ErrorCode::MalformedProviderResponse, "HTTP " + std::to_string(res->status) + ": " + res->body);
      }
      try {
        return json::parse(res->body);
      } catch (const json::exception&) {
        throw Error(ErrorCode::MalformedProviderResponse, "response is not JSON: " + res->body);
      }
    }
    throw Error(ErrorCode::ProviderUnavailable, cfg_.base_url + ": " + last_error);
  }

  static constexpr std::size_t kMaxSlots = 1024;

  RemoteEndpointConfig cfg_;
  std::string host_;
  std::string prefix_;
  std::counting_semaphore<kMaxSlots> slots_;
  std::atomic<std::size_t> requests_{0};
};

/// Segment media handle: "{t}", "{start_s}", "{end_s}" placeholders are
/// substituted; otherwise a "#t=start,end" fragment is appended.
inline std::string segment_media_ref(const std::string& media, std::size_t t, double segment_duration_s) {
  auto fmt = [](double x) {
    std::ostringstream s;
    s << x;
    return s.str();
  };
  const std::string start = fmt(static_cast<double>(t) * segment_duration_s);
  const std::string end = fmt(static_cast<double>(t + 1) * segment_duration_s);
  std::string out = media;
  bool substituted = false;
  auto replace_all = [&](const std::string& key, const std::string& value) {
    for (std::size_t pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size())) {
      out.replace(pos, key.size(), value);
      substituted = true;
    }
  };
  replace_all("{t}", std::to_string(t));
  replace_all("{start_s}", start);
  replace_all("{end_s}", end);
  if (!substituted) out += "#t=" + start + "," + end;
  return out;
}

/// P(Yes) from the first token, restricted to Yes/No.
inline double yes_probability(const std::vector<TokenLogprob>& top) {
  const auto logits = candidate_logits(top, {"Yes", "No"}, true);
  return restricted_softmax(logits)[0];
}

class RemoteObservationProvider final : public ObservationProvider {
 public:
  RemoteObservationProvider(TaskSpec task, std::string media, double segment_duration_s,
                            std::shared_ptr<RemoteClient> client, VsgPromptKind kind = VsgPromptKind::MultiChoice)
      : task_(std::move(task)),
        media_(std::move(media)),
        segment_duration_s_(segment_duration_s),
        client_(std::move(client)),
        kind_(kind) {}

  std::size_t num_steps() const override { return task_.num_steps(); }

  ObservationScores vsg_scores(std::size_t t) override {
    const std::string ref = segment_media_ref(media_, t, segment_duration_s_);
    if (kind_ == VsgPromptKind::Binary) return binary_scores(ref);
    return option_scores(build_vsg_prompt(task_), ref);
  }

  ProgressDistribution progress(std::size_t t, std::size_t step) override {
    const std::string ref = segment_media_ref(media_, t, segment_duration_s_);
    const auto resp = client_->first_token(build_progress_prompt(task_, step), ref);
    static const std::vector<std::string> digits{"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
    return ProgressDistribution(restricted_softmax(candidate_logits(resp.top, digits)));
  }

  std::optional<ObservationScores> next_step_scores(std::size_t t) override {
    return option_scores(build_next_step_prompt(task_), segment_media_ref(media_, t, segment_duration_s_));
  }

  std::size_t label_collisions() const noexcept { return collisions_.load(); }

 private:
  ObservationScores option_scores(const std::string& prompt, const std::string& ref) {
    const auto labels = option_labels(task_);
    const auto resp = client_->first_token(prompt, ref);
    if (labels_collide(resp.top, labels)) {
      ++collisions_;
      const std::string requery = prompt + "\nRespond with the full label.\n";
      std::vector<double> logits;
      for (const auto& label : labels) logits.push_back(client_->continuation_logprob(requery, label, ref));
      return ObservationScores(restricted_softmax(logits));
    }
    return ObservationScores(restricted_softmax(candidate_logits(resp.top, labels)));
  }

  /// One yes/no query per step; "none" gets 1 - max P(Yes), then the S+1
  /// vector is normalized.
  ObservationScores binary_scores(const std::string& ref) {
    std::vector<double> v;
    double best = 0.0;
    for (std::size_t i = 0; i < task_.num_steps(); ++i) {
      const auto resp = client_->first_token(build_vsg_binary_prompt(task_, i), ref);
      v.push_back(yes_probability(resp.top));
      best = std::max(best, v.back());
    }
    v.push_back(1.0 - best);
    return ObservationScores::normalized(v);
  }

  TaskSpec task_;
  std::string media_;
  double segment_duration_s_;
  std::shared_ptr<RemoteClient> client_;
  VsgPromptKind kind_;
  std::atomic<std::size_t> collisions_{0};
};

/// P(Yes) for the prerequisite prompt. Falls back to the fraction of "Yes"
/// answers over `fallback_samples` sampled replies when logprobs are missing.
class RemotePrerequisiteProvider final : public PrerequisiteProvider {
 public:
  explicit RemotePrerequisiteProvider(std::shared_ptr<RemoteClient> client, std::size_t fallback_samples = 5)
      : client_(std::move(client)), fallback_samples_(fallback_samples) {}

  double probability_yes(const TaskSpec& task, std::size_t step, std::size_t prerequisite) override {
    const std::string prompt = build_prerequisite_prompt(task, step, prerequisite);
    const auto resp = client_->first_token(prompt, "", false);
    if (!resp.top.empty()) return yes_probability(resp.top);
    ++degraded_;
    std::size_t yes = 0;
    for (const auto& answer : client_->sample(prompt, fallback_samples_)) {
      std::string a = normalize_token(answer);
      for (char& c : a) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (a.rfind("yes", 0) == 0) ++yes;
    }
    return static_cast<double>(yes) / static_cast<double>(fallback_samples_);
  }

  /// Pairs scored by sampling instead of logprobs.
  std::size_t degraded_queries() const noexcept { return degraded_.load(); }

 private:
  std::shared_ptr<RemoteClient> client_;
  std::size_t fallback_samples_;
  std::atomic<std::size_t> degraded_{0};
};

}  // namespace vsg
