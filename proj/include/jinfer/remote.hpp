#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "jinfer/answer_parse.hpp"
#include "jinfer/types.hpp"
#include "jinfer/uicl.hpp"

namespace jinfer {

// How instances and labeled examples become chat-completion prompts.
// instance_pattern must contain {text}; answer_pattern must contain {answer}
// and may use {reasoning}. A support example renders as
// "<instance>\n<answer line>"; blocks are joined by `separator`; the query
// renders last with the answer pattern cut off at its first placeholder, so
// the model completes the open slot.
struct PromptTemplate {
  std::string instance_pattern = "{text}";
  std::string answer_pattern = "Answer: {answer}";
  std::string separator = "\n\n";
  std::string system_prompt;
  AnswerParser parser{ParserKind::AnswerLine, ""};
};

std::string render_prompt(const PromptTemplate& tpl, const Instance& query,
                          std::span<const SupportRef> support);

// Checks placeholders and the round trip: every answer string, rendered
// through answer_pattern, must parse back to itself. Throws std::invalid_argument.
void validate_template(const PromptTemplate& tpl, const AnswerSet& answers);

struct RetryPolicy {
  int max_attempts = 4;
  double backoff_base_s = 0.5;  // doubles per attempt
  double backoff_cap_s = 8.0;
};

struct BackendConfig {
  std::string base_url = "http://127.0.0.1:8080";
  std::string path = "/v1/chat/completions";
  std::string model = "default-model";
  std::string api_key_env = "JINFER_API_KEY";  // name of the env var, never the key itself
  int max_concurrent = 4;
  int per_minute_budget = 60;  // request starts per minute (0 = unpaced)
  RetryPolicy retry;
  double temperature = 0.0;
  int max_output_tokens = 256;
  std::string cache_dir;  // empty disables the response cache
  double timeout_s = 30.0;
};

// OpenAI-compatible chat-completions client: bounded concurrency, per-minute
// pacing of request starts, exponential-backoff retries on 429/5xx/transport
// errors (TransientExhaustedError once the budget is gone, HttpError on other
// 4xx), and an on-disk response cache keyed by
// hash(model, prompts, temperature, max tokens, rng_tag). The API key is read
// from the named environment variable at request time and appears in the
// Authorization header only. Safe for concurrent use.
class ChatBackend {
 public:
  explicit ChatBackend(BackendConfig config);
  ~ChatBackend();

  ChatBackend(const ChatBackend&) = delete;
  ChatBackend& operator=(const ChatBackend&) = delete;

  // Completion text for (system, user); rng_tag salts the cache key and is
  // forwarded as the request "seed".
  std::string complete(const std::string& system_prompt, const std::string& user_prompt,
                       std::uint64_t rng_tag);

  const BackendConfig& config() const;

  // Requests that actually hit the network (cache hits excluded).
  std::int64_t network_calls() const;

  // Hex digest used for the response cache (exposed for tests).
  static std::string cache_key(const BackendConfig& config, const std::string& system_prompt,
                               const std::string& user_prompt, std::uint64_t rng_tag);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// One remote relabeling draw: render the prompt, complete, parse. Close-ended
// when `answers` is non-null; rejected outcomes carry no label. With
// `keep_unparsed`, unparseable responses become raw-text labels instead of
// rejections (the filter-unformatted switch, off).
SampleOutcome remote_sample_answer(ChatBackend& backend, const PromptTemplate& tpl,
                                   const AnswerSet* answers, const Instance& query,
                                   std::span<const SupportRef> support, std::uint64_t rng_tag,
                                   bool keep_unparsed = false);

// AnswerSampler over a remote backend, pluggable into run_uicl.
class RemoteSampler : public AnswerSampler {
 public:
  RemoteSampler(ChatBackend& backend, PromptTemplate tpl, const AnswerSet* answers,
                bool keep_unparsed = false);

  int num_answers() const override { return answers_ != nullptr ? answers_->size() : 0; }
  SampleOutcome sample(const Instance& query, std::span<const SupportRef> support, Rng& rng,
                       std::uint64_t tag, bool greedy) override;

 private:
  ChatBackend* backend_;
  PromptTemplate tpl_;
  const AnswerSet* answers_;
  bool keep_unparsed_;
};

}  // namespace jinfer
