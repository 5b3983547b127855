#include "jinfer/remote.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "jinfer/digest.hpp"
#include "jinfer/errors.hpp"

namespace jinfer {

namespace {

using nlohmann::json;

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

std::string render_instance(const PromptTemplate& tpl, const Instance& x) {
  if (x.text.empty())
    throw std::invalid_argument("render_prompt: instance '" + x.id + "' has no text");
  return replace_all(tpl.instance_pattern, "{text}", x.text);
}

std::string render_answer_line(const PromptTemplate& tpl, const Label& label) {
  std::string line = replace_all(tpl.answer_pattern, "{answer}", label.text);
  return replace_all(line, "{reasoning}", label.reasoning);
}

// answer_pattern cut at its first placeholder: the open slot the model fills.
std::string answer_slot_prefix(const PromptTemplate& tpl) {
  const std::size_t a = tpl.answer_pattern.find("{answer}");
  const std::size_t r = tpl.answer_pattern.find("{reasoning}");
  return tpl.answer_pattern.substr(0, std::min(a, r));
}

}  // namespace

std::string render_prompt(const PromptTemplate& tpl, const Instance& query,
                          std::span<const SupportRef> support) {
  if (tpl.instance_pattern.find("{text}") == std::string::npos)
    throw std::invalid_argument("render_prompt: instance_pattern lacks {text}");
  if (tpl.answer_pattern.find("{answer}") == std::string::npos)
    throw std::invalid_argument("render_prompt: answer_pattern lacks {answer}");
  std::string out;
  for (const SupportRef& ref : support) {
    if (ref.instance == nullptr || ref.label == nullptr || !ref.label->valid())
      throw std::invalid_argument("render_prompt: support example without a usable label");
    out += render_instance(tpl, *ref.instance);
    out += '\n';
    out += render_answer_line(tpl, *ref.label);
    out += tpl.separator;
  }
  out += render_instance(tpl, query);
  out += '\n';
  out += answer_slot_prefix(tpl);
  return out;
}

void validate_template(const PromptTemplate& tpl, const AnswerSet& answers) {
  if (tpl.instance_pattern.find("{text}") == std::string::npos)
    throw std::invalid_argument("prompt template: instance_pattern lacks {text}");
  if (tpl.answer_pattern.find("{answer}") == std::string::npos)
    throw std::invalid_argument("prompt template: answer_pattern lacks {answer}");
  for (int k = 0; k < answers.size(); ++k) {
    Label label;
    label.index = k;
    label.text = answers.name(k);
    const std::string rendered = render_answer_line(tpl, label);
    const ParsedAnswer parsed = parse_answer(tpl.parser, rendered, &answers);
    if (parsed.rejected || parsed.index != k)
      throw std::invalid_argument("prompt template: answer '" + answers.name(k) +
                                  "' does not survive the render/parse round trip");
  }
}

// ---------------------------------------------------------------------------
// ChatBackend

namespace {

bool retryable_status(int status) { return status == 429 || (status >= 500 && status < 600); }

}  // namespace

struct ChatBackend::Impl {
  BackendConfig config;

  std::mutex pace_mutex;
  std::chrono::steady_clock::time_point next_start = std::chrono::steady_clock::now();

  std::mutex slot_mutex;
  std::condition_variable slot_cv;
  int slots_in_use = 0;

  std::atomic<std::int64_t> network_calls{0};

  void acquire_slot() {
    std::unique_lock<std::mutex> lock(slot_mutex);
    slot_cv.wait(lock, [&] { return slots_in_use < config.max_concurrent; });
    ++slots_in_use;
  }

  void release_slot() {
    {
      std::lock_guard<std::mutex> lock(slot_mutex);
      --slots_in_use;
    }
    slot_cv.notify_one();
  }

  // Space out request starts to respect the per-minute budget.
  void pace() {
    if (config.per_minute_budget <= 0) return;
    const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(60.0 / config.per_minute_budget));
    std::chrono::steady_clock::time_point my_start;
    {
      std::lock_guard<std::mutex> lock(pace_mutex);
      const auto now = std::chrono::steady_clock::now();
      my_start = std::max(now, next_start);
      next_start = my_start + interval;
    }
    std::this_thread::sleep_until(my_start);
  }

  std::filesystem::path cache_path(const std::string& key) const {
    return std::filesystem::path(config.cache_dir) / (key + ".json");
  }

  bool cache_lookup(const std::string& key, std::string& body) const {
    if (config.cache_dir.empty()) return false;
    std::ifstream in(cache_path(key), std::ios::binary);
    if (!in) return false;
    body.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return !body.empty();
  }

  void cache_store(const std::string& key, const std::string& body) const {
    if (config.cache_dir.empty()) return;
    std::filesystem::create_directories(config.cache_dir);
    // Write-then-rename: concurrent writers of the same key both produce the
    // same content, so last-rename-wins is harmless.
    const auto final_path = cache_path(key);
    const auto tmp_path = final_path.string() + ".tmp" + std::to_string(
        static_cast<unsigned long long>(
            std::hash<std::thread::id>{}(std::this_thread::get_id())));
    {
      std::ofstream out(tmp_path, std::ios::binary);
      if (!out) throw Error("response cache: cannot write " + tmp_path);
      out << body;
    }
    std::filesystem::rename(tmp_path, final_path);
  }

  static std::string extract_content(const std::string& body) {
    json j;
    try {
      j = json::parse(body);
    } catch (const json::exception& e) {
      throw Error(std::string("chat response: body is not JSON: ") + e.what());
    }
    try {
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(std::string("chat response: missing choices[0].message.content: ") + e.what());
    }
  }

  std::string post_with_retries(const std::string& payload) {
    const char* key_env =
        config.api_key_env.empty() ? nullptr : std::getenv(config.api_key_env.c_str());
    httplib::Headers headers;
    if (key_env != nullptr && key_env[0] != '\0')
      headers.emplace("Authorization", std::string("Bearer ") + key_env);

    std::string last_problem = "no attempt made";
    for (int attempt = 0; attempt < config.retry.max_attempts; ++attempt) {
      if (attempt > 0) {
        const double delay = std::min(config.retry.backoff_base_s * std::pow(2.0, attempt - 1),
                                      config.retry.backoff_cap_s);
        std::this_thread::sleep_for(std::chrono::duration<double>(delay));
      }
      pace();

      // One client per request: httplib clients are not safe for concurrent
      // calls, and connection reuse is not worth sharing state here.
      httplib::Client client(config.base_url);
      client.set_connection_timeout(std::chrono::duration<double>(config.timeout_s));
      client.set_read_timeout(std::chrono::duration<double>(config.timeout_s));
      client.set_write_timeout(std::chrono::duration<double>(config.timeout_s));

      network_calls.fetch_add(1, std::memory_order_relaxed);
      httplib::Result res = client.Post(config.path, headers, payload, "application/json");
      if (!res) {
        last_problem = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 200) return res->body;
      if (retryable_status(res->status)) {
        last_problem = "status " + std::to_string(res->status);
        continue;
      }
      throw HttpError(res->status, "chat request failed with status " +
                                       std::to_string(res->status) + ": " + res->body);
    }
    throw TransientExhaustedError("chat request failed after " +
                                  std::to_string(config.retry.max_attempts) +
                                  " attempts (last: " + last_problem + ")");
  }
};

ChatBackend::ChatBackend(BackendConfig config) : impl_(std::make_unique<Impl>()) {
  if (config.max_concurrent < 1)
    throw std::invalid_argument("ChatBackend: max_concurrent must be >= 1");
  if (config.retry.max_attempts < 1)
    throw std::invalid_argument("ChatBackend: retry.max_attempts must be >= 1");
  impl_->config = std::move(config);
}

ChatBackend::~ChatBackend() = default;

const BackendConfig& ChatBackend::config() const { return impl_->config; }

std::int64_t ChatBackend::network_calls() const { return impl_->network_calls.load(); }

std::string ChatBackend::cache_key(const BackendConfig& config, const std::string& system_prompt,
                                   const std::string& user_prompt, std::uint64_t rng_tag) {
  char numeric[96];
  std::snprintf(numeric, sizeof(numeric), "|%.17g|%d|%llu", config.temperature,
                config.max_output_tokens, static_cast<unsigned long long>(rng_tag));
  const std::string sep(1, '\x1f');
  const std::string blob =
      config.model + sep + system_prompt + sep + user_prompt + sep + numeric;
  return hex_digest(blob);
}

std::string ChatBackend::complete(const std::string& system_prompt, const std::string& user_prompt,
                                  std::uint64_t rng_tag) {
  const std::string key = cache_key(impl_->config, system_prompt, user_prompt, rng_tag);
  std::string body;
  if (impl_->cache_lookup(key, body)) return Impl::extract_content(body);

  json messages = json::array();
  if (!system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", system_prompt}});
  messages.push_back({{"role", "user"}, {"content", user_prompt}});
  const json payload = {{"model", impl_->config.model},
                        {"messages", std::move(messages)},
                        {"temperature", impl_->config.temperature},
                        {"max_tokens", impl_->config.max_output_tokens},
                        {"seed", rng_tag}};

  impl_->acquire_slot();
  try {
    body = impl_->post_with_retries(payload.dump());
  } catch (...) {
    impl_->release_slot();
    throw;
  }
  impl_->release_slot();

  const std::string content = Impl::extract_content(body);  // validate before caching
  impl_->cache_store(key, body);
  return content;
}

// ---------------------------------------------------------------------------
// Sampling through a backend

SampleOutcome remote_sample_answer(ChatBackend& backend, const PromptTemplate& tpl,
                                   const AnswerSet* answers, const Instance& query,
                                   std::span<const SupportRef> support, std::uint64_t rng_tag,
                                   bool keep_unparsed) {
  const std::string prompt = render_prompt(tpl, query, support);
  const std::string raw = backend.complete(tpl.system_prompt, prompt, rng_tag);
  const ParsedAnswer parsed = parse_answer(tpl.parser, raw, answers);
  SampleOutcome out;
  if (parsed.rejected) {
    if (!keep_unparsed) {
      out.rejected = true;
      return out;
    }
    out.label.text = raw;  // unfiltered: carry the raw response as the label
    return out;
  }
  out.label.index = parsed.index;
  out.label.text = parsed.text;
  out.label.reasoning = parsed.reasoning;
  return out;
}

RemoteSampler::RemoteSampler(ChatBackend& backend, PromptTemplate tpl, const AnswerSet* answers,
                             bool keep_unparsed)
    : backend_(&backend), tpl_(std::move(tpl)), answers_(answers), keep_unparsed_(keep_unparsed) {
  if (answers_ != nullptr) validate_template(tpl_, *answers_);
}

SampleOutcome RemoteSampler::sample(const Instance& query, std::span<const SupportRef> support,
                                    Rng& /*rng*/, std::uint64_t tag, bool /*greedy*/) {
  // Remote randomness lives in (temperature, seed=tag); local rng and the
  // greedy switch only apply to in-process models.
  return remote_sample_answer(*backend_, tpl_, answers_, query, support, tag, keep_unparsed_);
}

}  // namespace jinfer
