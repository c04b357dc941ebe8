#include "trustorch/agent_gateway.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <regex>
#include <thread>

#include <httplib.h>

namespace trustorch {

const char* const kFormatCorrection =
    "Your previous reply could not be parsed. Reply again with only a single JSON "
    "object of the form {\"category\": \"<one of the allowed categories>\", "
    "\"justification\": \"<short explanation>\", \"confidence\": <number between 0 "
    "and 1>} and no other text.";

void AgentSpec::validate() const {
  if (agent_id.empty()) fail(ErrorCode::ConfigError, "agent spec needs 'agent_id'");
  if (kind == AgentKind::Remote && !endpoint_url) {
    fail(ErrorCode::ConfigError, "remote agent '" + agent_id + "' needs 'endpoint_url'");
  }
  if (kind == AgentKind::Scripted && !script_path) {
    fail(ErrorCode::ConfigError, "scripted agent '" + agent_id + "' needs 'script_path'");
  }
  if (retry_cap && *retry_cap < 0) {
    fail(ErrorCode::ConfigError, "agent '" + agent_id + "': 'retry_cap' must be >= 0");
  }
  if (timeout_ms <= 0) {
    fail(ErrorCode::ConfigError, "agent '" + agent_id + "': 'timeout_ms' must be > 0");
  }
}

namespace {

std::optional<std::string> opt_string(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_string()) {
    fail(ErrorCode::ConfigError, std::string("agent key '") + key + "' must be a string");
  }
  return j.at(key).get<std::string>();
}

}  // namespace

AgentSpec agent_spec_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorCode::ConfigError, "agent spec must be an object");
  if (!j.contains("agent_id")) fail(ErrorCode::ConfigError, "missing key 'agent_id'");
  if (!j.contains("kind")) fail(ErrorCode::ConfigError, "missing key 'kind'");
  AgentSpec s;
  try {
    s.agent_id = j.at("agent_id").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "remote") {
      s.kind = AgentKind::Remote;
    } else if (kind == "scripted") {
      s.kind = AgentKind::Scripted;
    } else {
      fail(ErrorCode::ConfigError, "unknown agent kind '" + kind + "'");
    }
    s.endpoint_url = opt_string(j, "endpoint_url");
    s.api_key_env = opt_string(j, "api_key_env");
    s.model_name = opt_string(j, "model_name");
    s.script_path = opt_string(j, "script_path");
    s.timeout_ms = j.value("timeout_ms", 60000);
    if (j.contains("retry_cap")) s.retry_cap = j.at("retry_cap").get<int>();
    s.requests_per_minute = j.value("requests_per_minute", 0.0);
  } catch (const Json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("malformed agent spec: ") + e.what());
  }
  s.validate();
  return s;
}

Json to_json(const AgentSpec& s) {
  Json j = Json::object();
  j["agent_id"] = s.agent_id;
  j["kind"] = s.kind == AgentKind::Remote ? "remote" : "scripted";
  if (s.endpoint_url) j["endpoint_url"] = *s.endpoint_url;
  if (s.api_key_env) j["api_key_env"] = *s.api_key_env;
  if (s.model_name) j["model_name"] = *s.model_name;
  if (s.script_path) j["script_path"] = *s.script_path;
  j["timeout_ms"] = s.timeout_ms;
  if (s.retry_cap) j["retry_cap"] = *s.retry_cap;
  if (s.requests_per_minute > 0) j["requests_per_minute"] = s.requests_per_minute;
  return j;
}

RateLimiter::RateLimiter(double requests_per_minute, Clock& clock, Sleeper sleeper, double burst)
    : rate_per_ms_(requests_per_minute / 60000.0),
      capacity_(std::max(1.0, burst)),
      tokens_(std::max(1.0, burst)),
      last_ms_(clock.now_ms()),
      clock_(clock),
      sleeper_(std::move(sleeper)) {
  if (!(requests_per_minute > 0)) {
    fail(ErrorCode::InvalidArgument, "requests_per_minute must be positive");
  }
}

double RateLimiter::acquire() {
  std::lock_guard lock(mu_);
  const double now = clock_.now_ms();
  tokens_ = std::min(capacity_, tokens_ + (now - last_ms_) * rate_per_ms_);
  last_ms_ = now;
  double wait = 0.0;
  if (tokens_ < 1.0) {
    wait = (1.0 - tokens_) / rate_per_ms_;
    if (sleeper_) sleeper_(wait);
    tokens_ = 1.0;
    last_ms_ = now + wait;
  }
  tokens_ -= 1.0;
  return wait;
}

std::string base64_encode(std::string_view bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto n = (static_cast<unsigned char>(bytes[i]) << 16) |
                   (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                   static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  if (i < bytes.size()) {
    unsigned n = static_cast<unsigned char>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) n |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string media_type_for(const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return "image/png";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  if (ext == ".bmp") return "image/bmp";
  return "image/jpeg";
}

ImagePayload load_image_payload(const std::string& path) {
  return {read_text_file(path), media_type_for(path)};
}

Json RemoteAgent::build_request_body(const std::optional<std::string>& model,
                                     const AgentRequest& request,
                                     std::span<const ChatMessage> followups) {
  Json content = Json::array();
  content.push_back({{"type", "text"}, {"text", request.prompt_text}});
  if (request.image) {
    content.push_back(
        {{"type", "image_url"},
         {"image_url",
          {{"url", "data:" + request.image->media_type + ";base64," +
                       base64_encode(request.image->bytes)}}}});
  }
  Json messages = Json::array();
  messages.push_back({{"role", "user"}, {"content", std::move(content)}});
  for (const auto& m : followups) {
    messages.push_back({{"role", m.role}, {"content", m.text}});
  }
  Json body = Json::object();
  body["model"] = model.value_or("");
  body["messages"] = std::move(messages);
  return body;
}

std::string RemoteAgent::extract_reply_text(const Json& response) {
  if (response.contains("choices") && response.at("choices").is_array() &&
      !response.at("choices").empty()) {
    const auto& choice = response.at("choices").at(0);
    if (choice.contains("message") && choice.at("message").contains("content") &&
        choice.at("message").at("content").is_string()) {
      return choice.at("message").at("content").get<std::string>();
    }
  }
  fail(ErrorCode::AgentUnreachable, "reply has no choices[0].message.content");
}

RemoteAgent::RemoteAgent(AgentSpec spec, std::shared_ptr<RateLimiter> limiter)
    : spec_(std::move(spec)), limiter_(std::move(limiter)) {
  spec_.validate();
  if (spec_.kind != AgentKind::Remote) {
    fail(ErrorCode::ConfigError, "RemoteAgent needs a remote spec");
  }
}

TransportReply RemoteAgent::complete(const AgentRequest& request,
                                     std::span<const ChatMessage> followups) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  const std::string& url = *spec_.endpoint_url;
  if (!std::regex_match(url, m, kUrl)) {
    fail(ErrorCode::ConfigError, "bad endpoint_url '" + url + "'");
  }
  const std::string base = m[1].str();
  const std::string path = m[2].matched ? m[2].str() : "/";

  if (limiter_) limiter_->acquire();

  httplib::Client client(base);
  const auto timeout = std::chrono::milliseconds(spec_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers headers;
  if (spec_.api_key_env) {
    if (const char* key = std::getenv(spec_.api_key_env->c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  const auto body = build_request_body(spec_.model_name, request, followups).dump();
  auto res = client.Post(path, headers, body, "application/json");
  if (!res) {
    fail(ErrorCode::AgentUnreachable,
         "agent '" + spec_.agent_id + "': " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    fail(ErrorCode::AgentUnreachable,
         "agent '" + spec_.agent_id + "': HTTP " + std::to_string(res->status));
  }
  auto json = Json::parse(res->body, nullptr, false);
  if (json.is_discarded()) {
    fail(ErrorCode::AgentUnreachable, "agent '" + spec_.agent_id + "': reply is not JSON");
  }
  TransportReply out;
  out.text = extract_reply_text(json);
  if (json.contains("usage") && json.at("usage").is_object() &&
      json.at("usage").contains("cost") && json.at("usage").at("cost").is_number()) {
    out.cost_usd = json.at("usage").at("cost").get<double>();
  }
  return out;
}

std::string fixture_stage_key(const AgentRequest& request) {
  return request.arbitration ? std::string("arbitrate") : std::string(stage_name(request.stage));
}

ScriptedAgent::ScriptedAgent(std::string agent_id,
                             std::map<std::pair<std::string, std::string>, Entry> fixture)
    : agent_id_(std::move(agent_id)), fixture_(std::move(fixture)) {}

ScriptedAgent ScriptedAgent::from_file(std::string agent_id, const std::string& path) {
  std::map<std::pair<std::string, std::string>, Entry> fixture;
  std::size_t lineno = 0;
  for (const auto& j : read_jsonl(path)) {
    ++lineno;
    try {
      Entry e;
      const auto image_id = j.at("image_id").get<std::string>();
      const auto stage = j.value("stage", std::string("initial"));
      if (j.contains("replies")) {
        e.replies = j.at("replies").get<std::vector<std::string>>();
      } else {
        e.replies.push_back(j.at("reply").get<std::string>());
      }
      if (e.replies.empty()) throw CorruptRecordError(lineno, "empty 'replies'");
      e.latency_ms = j.value("latency_ms", 0.0);
      e.cost_usd = j.value("cost_usd", 0.0);
      fixture[{image_id, stage}] = std::move(e);
    } catch (const Json::exception& ex) {
      throw CorruptRecordError(lineno, std::string("bad fixture entry: ") + ex.what());
    }
  }
  return ScriptedAgent(std::move(agent_id), std::move(fixture));
}

TransportReply ScriptedAgent::complete(const AgentRequest& request,
                                       std::span<const ChatMessage> followups) {
  auto it = fixture_.find({request.image_id, fixture_stage_key(request)});
  if (it == fixture_.end()) {
    fail(ErrorCode::MissingFixtureEntry, "agent '" + agent_id_ + "' has no fixture for '" +
                                             request.image_id + "' at stage '" +
                                             fixture_stage_key(request) + "'");
  }
  const auto& replies = it->second.replies;
  const std::size_t attempt = followups.size() / 2;
  TransportReply out;
  out.text = replies[std::min(attempt, replies.size() - 1)];
  out.latency_ms = it->second.latency_ms;
  out.cost_usd = it->second.cost_usd;
  return out;
}

std::unique_ptr<Agent> make_agent(const AgentSpec& spec, Clock& clock) {
  spec.validate();
  if (spec.kind == AgentKind::Scripted) {
    return std::make_unique<ScriptedAgent>(ScriptedAgent::from_file(spec.agent_id, *spec.script_path));
  }
  std::shared_ptr<RateLimiter> limiter;
  if (spec.requests_per_minute > 0) {
    limiter = std::make_shared<RateLimiter>(spec.requests_per_minute, clock, [](double ms) {
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
    });
  }
  return std::make_unique<RemoteAgent>(spec, std::move(limiter));
}

namespace {

std::string label_list(const LabelSet& labels) {
  std::string out;
  for (const auto& l : labels.labels()) {
    out += "- ";
    out += l;
    out += '\n';
  }
  return out;
}

constexpr const char* kReplySchema =
    "Respond with a single JSON object and no other text, using exactly these keys:\n"
    "{\"category\": \"<one of the categories above>\", \"justification\": \"<short "
    "natural language explanation>\", \"confidence\": <number>}\n"
    "The confidence must be a number in the range [0, 1] expressing how certain you "
    "are that the category is correct.\n";

}  // namespace

std::string render_agent_prompt(const LabelSet& labels) {
  std::string p =
      "You are an image classification agent. Examine the attached image and classify "
      "it into exactly one of the following categories:\n";
  p += label_list(labels);
  p += '\n';
  p += kReplySchema;
  return p;
}

std::string render_reeval_prompt(const AgentPrediction& prior, std::span<const ClassVote> votes,
                                 std::span<const RetrievalHit> exemplars,
                                 const LabelSet& labels) {
  if (votes.empty()) fail(ErrorCode::EmptyVotes, "re-evaluation needs retrieval votes");
  std::string p =
      "You previously classified the attached image. Re-evaluate that answer using the "
      "retrieval evidence below.\n\n";
  p += "Your previous answer:\n";
  p += "category: " + prior.category + "\n";
  p += "confidence: " + Json(prior.confidence).dump() + "\n";
  p += "justification: " + prior.justification + "\n\n";
  p += "Visually similar labeled reference images were retrieved and combined into "
       "similarity-weighted category votes:\n";
  p += format_votes(votes);
  p += "\n\n";
  if (!exemplars.empty()) {
    p += "Most similar reference examples:\n";
    for (const auto& h : exemplars) {
      p += "- " + h.record_id + ": " + h.label + " (similarity " + format_fixed(h.similarity, 4) +
           ")\n";
    }
    p += '\n';
  }
  p += "Either revise your prediction or reaffirm it. Allowed categories:\n";
  p += label_list(labels);
  p += '\n';
  p += kReplySchema;
  return p;
}

std::optional<Json> extract_first_json_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos;
       start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    std::size_t end = std::string_view::npos;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) {
          end = i;
          break;
        }
      }
    }
    if (end == std::string_view::npos) continue;
    auto j = Json::parse(text.substr(start, end - start + 1), nullptr, false);
    if (!j.is_discarded() && j.is_object()) return j;
  }
  return std::nullopt;
}

ParsedReply parse_agent_reply(std::string_view text, const LabelSet& labels,
                              const char* rationale_key) {
  auto obj = extract_first_json_object(text);
  if (!obj) fail(ErrorCode::NoJsonFound, "reply contains no JSON object");
  for (const char* key : {"category", rationale_key, "confidence"}) {
    if (!obj->contains(key)) fail(ErrorCode::MissingKey, std::string("reply lacks '") + key + "'");
  }
  const auto& cat = obj->at("category");
  const auto& why = obj->at(rationale_key);
  const auto& conf = obj->at("confidence");
  if (!cat.is_string()) fail(ErrorCode::MissingKey, "'category' is not a string");
  if (!why.is_string()) {
    fail(ErrorCode::MissingKey, std::string("'") + rationale_key + "' is not a string");
  }
  if (!conf.is_number()) fail(ErrorCode::MissingKey, "'confidence' is not a number");
  ParsedReply out;
  out.category = canonicalize_label(cat.get<std::string>(), labels);
  out.justification = why.get<std::string>();
  out.confidence = conf.get<double>();
  if (!(out.confidence >= 0.0 && out.confidence <= 1.0)) {
    fail(ErrorCode::ConfidenceOutOfRange, "confidence " + conf.dump() + " outside [0,1]");
  }
  return out;
}

bool is_format_error(ErrorCode code) noexcept {
  return code == ErrorCode::NoJsonFound || code == ErrorCode::MissingKey ||
         code == ErrorCode::UnknownLabel || code == ErrorCode::ConfidenceOutOfRange;
}

AgentPrediction invoke_with_retries(Agent& agent, const AgentRequest& request,
                                    const LabelSet& labels, int retry_cap, Clock& clock) {
  auto result = run_with_reprompts<ParsedReply>(
      agent, request, retry_cap,
      [&labels](std::string_view text) { return parse_agent_reply(text, labels); }, clock);
  AgentPrediction p;
  p.agent_id = agent.id();
  p.image_id = request.image_id;
  p.stage = request.stage;
  p.category = std::move(result.parsed.category);
  p.confidence = result.parsed.confidence;
  p.justification = std::move(result.parsed.justification);
  p.latency_ms = result.raw.latency_ms;
  p.cost_usd = result.raw.cost_usd;
  p.attempts = result.attempts;
  p.ts = clock.now_ms();
  return p;
}

}  // namespace trustorch
