#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trustorch/core.hpp"
#include "trustorch/vector_store.hpp"

namespace trustorch {

enum class AgentKind { Remote, Scripted };

struct AgentSpec {
  std::string agent_id;
  AgentKind kind = AgentKind::Scripted;
  std::optional<std::string> endpoint_url;
  std::optional<std::string> api_key_env;
  std::optional<std::string> model_name;
  std::optional<std::string> script_path;
  int timeout_ms = 60000;
  std::optional<int> retry_cap;       // falls back to the experiment-wide cap
  double requests_per_minute = 0.0;   // 0 disables rate limiting

  // remote => endpoint_url, scripted => script_path. Throws ConfigError.
  void validate() const;
};

AgentSpec agent_spec_from_json(const Json& j);
Json to_json(const AgentSpec& spec);

struct ImagePayload {
  std::string bytes;
  std::string media_type;  // e.g. image/jpeg
};

struct AgentRequest {
  std::string image_id;
  std::optional<ImagePayload> image;  // never set for the orchestrator
  std::string prompt_text;
  Stage stage = Stage::Initial;
  bool arbitration = false;  // request addressed to the orchestrator
};

struct ChatMessage {
  std::string role;  // "assistant" or "user"
  std::string text;
};

// What a transport hands back for one attempt.
struct TransportReply {
  std::string text;
  double latency_ms = 0.0;  // latency not observable on the clock (scripted)
  double cost_usd = 0.0;
};

struct ParsedReply {
  Label category;
  std::string justification;
  double confidence = 0.0;

  friend bool operator==(const ParsedReply&, const ParsedReply&) = default;
};

struct RawAgentReply {
  std::string text;
  std::optional<ParsedReply> parsed;
  double latency_ms = 0.0;
  double cost_usd = 0.0;
};

// A classification endpoint. `followups` holds the retry turns appended after
// the initial prompt (assistant reply, user correction, ...). Implementations
// throw AgentUnreachable on transport failure.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual const std::string& id() const = 0;
  // Whether requests should carry the image bytes.
  virtual bool wants_image() const { return false; }
  virtual TransportReply complete(const AgentRequest& request,
                                  std::span<const ChatMessage> followups) = 0;
};

// Token bucket: `requests_per_minute` refill rate, `burst` capacity.
class RateLimiter {
 public:
  using Sleeper = std::function<void(double ms)>;

  RateLimiter(double requests_per_minute, Clock& clock, Sleeper sleeper, double burst = 1.0);

  // Takes one token, sleeping until it is available. Returns the wait in ms.
  double acquire();

 private:
  double rate_per_ms_;
  double capacity_;
  double tokens_;
  double last_ms_;
  Clock& clock_;
  Sleeper sleeper_;
  std::mutex mu_;
};

// Chat-completion-style HTTP agent (JSON POST, bearer auth, image as a
// base64 data URL content part).
class RemoteAgent final : public Agent {
 public:
  explicit RemoteAgent(AgentSpec spec, std::shared_ptr<RateLimiter> limiter = nullptr);

  const std::string& id() const override { return spec_.agent_id; }
  bool wants_image() const override { return true; }
  TransportReply complete(const AgentRequest& request,
                          std::span<const ChatMessage> followups) override;

  // Request body exactly as POSTed.
  static Json build_request_body(const std::optional<std::string>& model,
                                 const AgentRequest& request,
                                 std::span<const ChatMessage> followups);
  // Text of the first choice's message content; AgentUnreachable when absent.
  static std::string extract_reply_text(const Json& response);

 private:
  AgentSpec spec_;
  std::shared_ptr<RateLimiter> limiter_;
};

// Replays a JSONL fixture: one object per (image_id, stage) with either
// "reply" or a "replies" sequence (entry i answers attempt i, the last entry
// repeats), plus optional "latency_ms" and "cost_usd". Stage is "initial",
// "reeval" or "arbitrate".
class ScriptedAgent final : public Agent {
 public:
  struct Entry {
    std::vector<std::string> replies;
    double latency_ms = 0.0;
    double cost_usd = 0.0;
  };

  ScriptedAgent(std::string agent_id, std::map<std::pair<std::string, std::string>, Entry> fixture);
  static ScriptedAgent from_file(std::string agent_id, const std::string& path);

  const std::string& id() const override { return agent_id_; }
  TransportReply complete(const AgentRequest& request,
                          std::span<const ChatMessage> followups) override;

 private:
  std::string agent_id_;
  std::map<std::pair<std::string, std::string>, Entry> fixture_;
};

std::string fixture_stage_key(const AgentRequest& request);

std::unique_ptr<Agent> make_agent(const AgentSpec& spec, Clock& clock);

std::string base64_encode(std::string_view bytes);
std::string media_type_for(const std::string& path);
ImagePayload load_image_payload(const std::string& path);

// Instruction appended as a follow-up turn after an unparsable reply.
extern const char* const kFormatCorrection;

std::string render_agent_prompt(const LabelSet& labels);
std::string render_reeval_prompt(const AgentPrediction& prior,
                                 std::span<const ClassVote> votes,
                                 std::span<const RetrievalHit> exemplars,
                                 const LabelSet& labels);

// First syntactically valid JSON object embedded in `text`, if any.
std::optional<Json> extract_first_json_object(std::string_view text);

// Parses {category, <rationale_key>, confidence}. Throws NoJsonFound,
// MissingKey, UnknownLabel or ConfidenceOutOfRange.
ParsedReply parse_agent_reply(std::string_view text, const LabelSet& labels,
                              const char* rationale_key = "justification");

bool is_format_error(ErrorCode code) noexcept;

class FormatExhaustedError : public Error {
 public:
  FormatExhaustedError(int attempts, std::string last_reply, const std::string& message)
      : Error(ErrorCode::FormatExhausted, message),
        attempts_(attempts),
        last_reply_(std::move(last_reply)) {}

  int attempts() const noexcept { return attempts_; }
  const std::string& last_reply() const noexcept { return last_reply_; }

 private:
  int attempts_;
  std::string last_reply_;
};

template <typename Parsed>
struct RepromptResult {
  Parsed parsed;
  RawAgentReply raw;
  int attempts = 1;
};

// Sends `request`, re-prompting with kFormatCorrection after each reply the
// parser rejects, for at most retry_cap extra attempts. Latency spans all
// attempts on `clock` plus any transport-reported latency.
template <typename Parsed>
RepromptResult<Parsed> run_with_reprompts(Agent& agent, const AgentRequest& request,
                                          int retry_cap,
                                          const std::function<Parsed(std::string_view)>& parse,
                                          Clock& clock) {
  if (retry_cap < 0) fail(ErrorCode::InvalidArgument, "retry_cap must be >= 0");
  const double start = clock.now_ms();
  double extra_latency = 0.0;
  double cost = 0.0;
  std::vector<ChatMessage> followups;
  std::string last_error;
  std::string last_text;
  for (int attempt = 1; attempt <= retry_cap + 1; ++attempt) {
    auto reply = agent.complete(request, followups);
    extra_latency += reply.latency_ms;
    cost += reply.cost_usd;
    try {
      Parsed parsed = parse(reply.text);
      RepromptResult<Parsed> out{std::move(parsed), {}, attempt};
      out.raw.text = std::move(reply.text);
      out.raw.latency_ms = (clock.now_ms() - start) + extra_latency;
      out.raw.cost_usd = cost;
      return out;
    } catch (const Error& e) {
      if (!is_format_error(e.code())) throw;
      last_error = e.what();
      last_text = reply.text;
      followups.push_back({"assistant", std::move(reply.text)});
      followups.push_back({"user", kFormatCorrection});
    }
  }
  throw FormatExhaustedError(retry_cap + 1, last_text,
                             "agent '" + agent.id() + "' gave no valid reply for '" +
                                 request.image_id + "' after " +
                                 std::to_string(retry_cap + 1) + " attempts: " + last_error);
}

// Agent classification round trip with the capped re-prompt loop.
AgentPrediction invoke_with_retries(Agent& agent, const AgentRequest& request,
                                    const LabelSet& labels, int retry_cap, Clock& clock);

}  // namespace trustorch
