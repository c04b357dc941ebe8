#include "trustorch/orchestrator.hpp"

#include <algorithm>
#include <functional>
#include <future>

namespace trustorch {

namespace {

Json hits_to_json(const std::vector<RetrievalHit>& hits) {
  Json out = Json::array();
  for (const auto& h : hits) {
    out.push_back({{"record_id", h.record_id}, {"label", h.label}, {"similarity", h.similarity}});
  }
  return out;
}

Json votes_to_json(const std::vector<ClassVote>& votes) {
  Json out = Json::array();
  for (const auto& v : votes) out.push_back({{"category", v.category}, {"confidence", v.confidence}});
  return out;
}

}  // namespace

Json to_json(const ReEvalTrace& t) {
  Json agents = Json::array();
  for (const auto& a : t.agents) {
    agents.push_back({{"agent_id", a.agent_id},
                      {"initial", to_json(a.initial)},
                      {"revised", a.revised ? to_json(*a.revised) : Json(nullptr)},
                      {"changed", a.changed}});
  }
  Json scores = Json::object();
  for (const auto& [id, s] : t.trust_scores) scores[id] = s;
  Json j = Json::object();
  j["image_id"] = t.image_id;
  j["triggered"] = t.triggered;
  j["trust_scores"] = std::move(scores);
  j["tau_used"] = t.tau_used;
  j["votes"] = votes_to_json(t.votes);
  j["exemplars"] = hits_to_json(t.exemplars);
  j["agents"] = std::move(agents);
  return j;
}

ReEvalTrace trace_from_json(const Json& j) {
  ReEvalTrace t;
  try {
    t.image_id = j.at("image_id").get<std::string>();
    t.triggered = j.at("triggered").get<bool>();
    t.tau_used = j.value("tau_used", 0.0);
    if (j.contains("trust_scores")) {
      for (const auto& [id, s] : j.at("trust_scores").items()) t.trust_scores[id] = s.get<double>();
    }
    if (j.contains("votes")) {
      for (const auto& v : j.at("votes")) {
        t.votes.push_back({v.at("category").get<std::string>(), v.at("confidence").get<double>()});
      }
    }
    if (j.contains("exemplars")) {
      for (const auto& h : j.at("exemplars")) {
        t.exemplars.push_back({h.at("record_id").get<std::string>(), h.at("label").get<std::string>(),
                               h.at("similarity").get<double>()});
      }
    }
    for (const auto& a : j.at("agents")) {
      AgentTrace at;
      at.agent_id = a.at("agent_id").get<std::string>();
      at.initial = prediction_from_json(a.at("initial"));
      if (a.contains("revised") && !a.at("revised").is_null()) {
        at.revised = prediction_from_json(a.at("revised"));
      }
      at.changed = a.value("changed", false);
      t.agents.push_back(std::move(at));
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::CorruptRecord, std::string("malformed trace: ") + e.what());
  }
  return t;
}

std::string render_orchestrator_prompt(const ArbitrationInput& input, const LabelSet& labels) {
  std::string p =
      "You are the orchestrator of a multi-agent image classification system. You do not "
      "see the image. Independent vision agents classified it; weigh their answers, their "
      "self-reported confidence";
  p += input.profiles ? ", their trust profiles" : "";
  p += input.votes.empty() ? "" : " and the retrieval evidence";
  p += ", and issue one final decision.\n\nAllowed categories:\n";
  for (const auto& l : labels.labels()) p += "- " + l + "\n";
  p += "\nAgent reports:\n";
  for (const auto& pred : input.predictions) {
    p += "- agent " + pred.agent_id + " (" + std::string(stage_name(pred.stage)) +
         "): category " + pred.category + ", confidence " + format_fixed(pred.confidence, 4) + "\n";
    p += "  justification: " + pred.justification + "\n";
    if (input.profiles) {
      auto it = input.profiles->find(pred.agent_id);
      if (it != input.profiles->end()) {
        const auto& tp = it->second;
        auto f = [](const std::optional<double>& v) { return v ? format_fixed(*v, 4) : std::string("n/a"); };
        p += "  trust profile: accuracy " + format_fixed(tp.accuracy, 4) + ", ECE " + f(tp.ece) +
             ", OCR " + f(tp.ocr) + ", CCC " + f(tp.ccc) + ", CWA " + f(tp.cwa);
        try {
          p += ", trust score " + format_fixed(trust_score(tp), 4);
        } catch (const Error&) {
        }
        p += "\n";
      }
    }
  }
  if (!input.votes.empty()) {
    p += "\nImage retrieval votes (similarity-weighted, from labeled reference images):\n";
    p += format_votes(input.votes);
    p += "\n";
  }
  p +=
      "\nRespond with a single JSON object and no other text, using exactly these keys:\n"
      "{\"category\": \"<one of the allowed categories>\", \"rationale\": \"<why this decision>\", "
      "\"confidence\": <number in [0, 1]>}\n";
  return p;
}

namespace {

std::optional<double> trust_of(const ArbitrationInput& input, const std::string& agent_id) {
  if (!input.profiles) return std::nullopt;
  auto it = input.profiles->find(agent_id);
  if (it == input.profiles->end()) return std::nullopt;
  return trust_score(it->second);
}

}  // namespace

FinalDecision rule_arbitrate(const ArbitrationInput& input, const LabelSet& labels, double tau) {
  if (input.predictions.empty()) {
    fail(ErrorCode::NoPredictions, "no predictions to arbitrate for '" + input.image_id + "'");
  }
  struct Scored {
    const AgentPrediction* pred;
    std::optional<double> trust;
    double score;
  };
  std::vector<Scored> scored;
  for (const auto& p : input.predictions) {
    const auto t = trust_of(input, p.agent_id);
    scored.push_back({&p, t, p.confidence * t.value_or(1.0)});
  }
  const auto best = std::min_element(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.pred->category != b.pred->category) return labels.before(a.pred->category, b.pred->category);
    return a.pred->agent_id < b.pred->agent_id;
  });

  FinalDecision d;
  d.image_id = input.image_id;
  d.policy = Policy::RuleFallback;

  if (!input.votes.empty() && best->trust) {
    const auto& top = input.votes.front();
    if (top.category != best->pred->category && top.confidence >= 0.5 && *best->trust < tau) {
      d.category = top.category;
      d.confidence = top.confidence;
      d.rationale = "rule arbiter: retrieval vote " + top.category + " (" +
                    format_fixed(top.confidence, 4) + ") overrides agent " + best->pred->agent_id +
                    " (" + best->pred->category + ", trust " + format_fixed(*best->trust, 4) +
                    " < tau " + format_fixed(tau, 4) + ")";
      for (const auto& p : input.predictions) {
        if (p.category == top.category) d.contributing.push_back({p.agent_id, p.stage});
      }
      return d;
    }
  }

  d.category = best->pred->category;
  d.confidence = best->pred->confidence;
  d.rationale = "rule arbiter: agent " + best->pred->agent_id + " (" + best->pred->category +
                ", confidence " + format_fixed(best->pred->confidence, 4);
  if (best->trust) {
    d.rationale += ", trust " + format_fixed(*best->trust, 4) + ", weighted " + format_fixed(best->score, 4);
  }
  d.rationale += ")";
  d.contributing.push_back({best->pred->agent_id, best->pred->stage});
  return d;
}

bool should_reevaluate(const std::map<std::string, double>& trust_scores, double tau) {
  return std::any_of(trust_scores.begin(), trust_scores.end(),
                     [tau](const auto& kv) { return kv.second < tau; });
}

namespace {

struct CallResult {
  std::optional<AgentPrediction> prediction;
  std::optional<AgentFailure> failure;
};

CallResult call_agent(const AgentHandle& handle, AgentRequest request, const Sample& sample,
                      const LabelSet& labels, Clock& clock) {
  CallResult out;
  auto record_failure = [&](ErrorCode code, const std::string& message, int attempts) {
    out.failure = AgentFailure{request.image_id, handle.agent->id(),
                               std::string(stage_name(request.stage)), code, message, attempts};
  };
  try {
    if (handle.agent->wants_image()) request.image = load_image_payload(sample.image_ref);
    out.prediction = invoke_with_retries(*handle.agent, request, labels, handle.retry_cap, clock);
  } catch (const FormatExhaustedError& e) {
    record_failure(e.code(), e.what(), e.attempts());
  } catch (const Error& e) {
    record_failure(e.code(), e.what(), 0);
  } catch (const std::exception& e) {
    record_failure(ErrorCode::Internal, e.what(), 0);
  }
  return out;
}

std::vector<CallResult> fan_out(std::size_t n, int parallelism,
                                const std::function<CallResult(std::size_t)>& call) {
  std::vector<CallResult> results(n);
  if (parallelism <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) results[i] = call(i);
    return results;
  }
  std::vector<std::future<CallResult>> futures;
  for (std::size_t i = 0; i < n; ++i) futures.push_back(std::async(std::launch::async, call, i));
  for (std::size_t i = 0; i < n; ++i) results[i] = futures[i].get();
  return results;
}

void initial_round(const Sample& sample, const PipelineContext& ctx, ImageOutcome& out,
                   std::vector<std::optional<AgentPrediction>>& initial) {
  const auto prompt = render_agent_prompt(*ctx.labels);
  auto results = fan_out(ctx.agents.size(), ctx.parallelism, [&](std::size_t i) {
    AgentRequest req{sample.image_id, std::nullopt, prompt, Stage::Initial, false};
    return call_agent(ctx.agents[i], std::move(req), sample, *ctx.labels, *ctx.clock);
  });
  initial.assign(ctx.agents.size(), std::nullopt);
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].prediction) {
      out.predictions.push_back(*results[i].prediction);
      initial[i] = std::move(results[i].prediction);
    } else if (results[i].failure) {
      out.failures.push_back(std::move(*results[i].failure));
    }
  }
}

struct Retrieval {
  std::vector<RetrievalHit> hits;
  std::vector<ClassVote> votes;
};

std::optional<Retrieval> try_retrieve(const Sample& sample, const PipelineContext& ctx, bool required) {
  if (!ctx.index) {
    if (required) fail(ErrorCode::IndexUnavailable, "re-evaluation needs a vector index");
    return std::nullopt;
  }
  const std::vector<double>* query = nullptr;
  if (ctx.embeddings) {
    auto it = ctx.embeddings->find(sample.image_id);
    if (it != ctx.embeddings->end()) query = &it->second;
  }
  if (!query) {
    if (required) {
      fail(ErrorCode::IndexUnavailable, "no query embedding for image '" + sample.image_id + "'");
    }
    return std::nullopt;
  }
  Retrieval r;
  r.hits = ctx.index->knn_query(*query, static_cast<std::size_t>(ctx.k));
  r.votes = weighted_vote(r.hits, ctx.labels);
  return r;
}

void decide(const Sample& sample, const PipelineContext& ctx, Policy remote_policy,
            const std::vector<AgentPrediction>& latest, const ProfileMap* profiles,
            const std::vector<ClassVote>& votes, bool triggered, ImageOutcome& out) {
  if (latest.empty()) {
    std::optional<Retrieval> r;
    try {
      r = try_retrieve(sample, ctx, false);
    } catch (const Error&) {
    }
    if (r && !r->votes.empty()) {
      FinalDecision d;
      d.image_id = sample.image_id;
      d.category = r->votes.front().category;
      d.confidence = r->votes.front().confidence;
      d.rationale = "no agent produced a valid reply; top retrieval vote";
      d.policy = Policy::RuleFallback;
      d.reeval_triggered = triggered;
      out.decision = std::move(d);
    } else {
      out.undecided_reason = "no agent produced a valid reply and no retrieval vote is available";
    }
    return;
  }

  ArbitrationInput input{sample.image_id, latest, profiles, votes};
  if (ctx.orchestrator) {
    const auto prompt = render_orchestrator_prompt(input, *ctx.labels);
    out.orchestrator_prompts.push_back(prompt);
    AgentRequest req{sample.image_id, std::nullopt, prompt, Stage::Initial, true};
    try {
      auto r = run_with_reprompts<ParsedReply>(
          *ctx.orchestrator->agent, req, ctx.orchestrator->retry_cap,
          [&](std::string_view text) { return parse_agent_reply(text, *ctx.labels, "rationale"); },
          *ctx.clock);
      FinalDecision d;
      d.image_id = sample.image_id;
      d.category = r.parsed.category;
      d.confidence = r.parsed.confidence;
      d.rationale = r.parsed.justification;
      d.policy = remote_policy;
      d.reeval_triggered = triggered;
      for (const auto& p : latest) d.contributing.push_back({p.agent_id, p.stage});
      out.decision = std::move(d);
      return;
    } catch (const FormatExhaustedError& e) {
      out.failures.push_back({sample.image_id, ctx.orchestrator->agent->id(), "arbitrate", e.code(),
                              e.what(), e.attempts()});
    } catch (const Error& e) {
      out.failures.push_back({sample.image_id, ctx.orchestrator->agent->id(), "arbitrate", e.code(),
                              e.what(), 0});
    }
  }
  auto d = rule_arbitrate(input, *ctx.labels, ctx.tau);
  d.reeval_triggered = triggered;
  out.decision = std::move(d);
}

void check_context(const PipelineContext& ctx) {
  if (!ctx.labels || !ctx.clock) fail(ErrorCode::InvalidArgument, "pipeline context is incomplete");
}

}  // namespace

ImageOutcome run_confidence_pipeline(const Sample& sample, const PipelineContext& ctx) {
  check_context(ctx);
  ImageOutcome out;
  out.image_id = sample.image_id;
  std::vector<std::optional<AgentPrediction>> initial;
  initial_round(sample, ctx, out, initial);
  std::vector<AgentPrediction> latest;
  for (auto& p : initial) {
    if (p) latest.push_back(*p);
  }
  decide(sample, ctx, Policy::ConfidenceAware, latest, nullptr, {}, false, out);
  return out;
}

ImageOutcome run_trust_pipeline(const Sample& sample, const PipelineContext& ctx) {
  check_context(ctx);
  if (!ctx.profiles) fail(ErrorCode::ConfigError, "trust-aware policy needs trust profiles");
  std::map<std::string, double> scores;
  for (const auto& h : ctx.agents) {
    auto it = ctx.profiles->find(h.agent->id());
    if (it == ctx.profiles->end()) {
      fail(ErrorCode::ConfigError, "no trust profile for agent '" + h.agent->id() + "'");
    }
    scores[h.agent->id()] = trust_score(it->second);
  }

  ImageOutcome out;
  out.image_id = sample.image_id;
  std::vector<std::optional<AgentPrediction>> initial;
  initial_round(sample, ctx, out, initial);

  ReEvalTrace trace;
  trace.image_id = sample.image_id;
  trace.trust_scores = scores;
  trace.tau_used = ctx.tau;
  trace.triggered = should_reevaluate(scores, ctx.tau);

  std::vector<std::optional<AgentPrediction>> revised(ctx.agents.size());
  if (trace.triggered) {
    auto retrieval = try_retrieve(sample, ctx, true);
    trace.votes = retrieval->votes;
    trace.exemplars = retrieval->hits;
    auto results = fan_out(ctx.agents.size(), ctx.parallelism, [&](std::size_t i) -> CallResult {
      if (!initial[i]) return {};
      AgentRequest req{sample.image_id, std::nullopt,
                       render_reeval_prompt(*initial[i], trace.votes, trace.exemplars, *ctx.labels),
                       Stage::Reeval, false};
      return call_agent(ctx.agents[i], std::move(req), sample, *ctx.labels, *ctx.clock);
    });
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (results[i].prediction) {
        out.predictions.push_back(*results[i].prediction);
        revised[i] = std::move(results[i].prediction);
      } else if (results[i].failure) {
        out.failures.push_back(std::move(*results[i].failure));
      }
    }
  }

  std::vector<AgentPrediction> latest;
  for (std::size_t i = 0; i < ctx.agents.size(); ++i) {
    if (!initial[i]) continue;
    AgentTrace at;
    at.agent_id = initial[i]->agent_id;
    at.initial = *initial[i];
    at.revised = revised[i];
    at.changed = revised[i] && revised[i]->category != initial[i]->category;
    trace.agents.push_back(std::move(at));
    latest.push_back(revised[i] ? *revised[i] : *initial[i]);
  }

  decide(sample, ctx, Policy::TrustAwareRag, latest, ctx.profiles, trace.votes, trace.triggered, out);
  out.trace = std::move(trace);
  return out;
}

}  // namespace trustorch
