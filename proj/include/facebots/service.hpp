#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <string>
#include <variant>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "facebots/common.hpp"
#include "facebots/dialogue.hpp"
#include "facebots/facekit.hpp"
#include "facebots/harness.hpp"
#include "facebots/recognizer.hpp"
#include "facebots/socialstore.hpp"

namespace facebots::service {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Wire projections. These are the documented response shapes; anything that
// wants to compare against the service builds its expectation with them.
namespace api {

inline json scores(const recognizer::ScoreVector& sv) {
  json j = json::object();
  for (const auto& [id, v] : sv) j[id] = v;
  return j;
}

inline json decision(const recognizer::Decision& d) {
  return {{"verdict", recognizer::to_string(d.verdict)},
          {"best", d.best ? json(*d.best) : json(nullptr)},
          {"second", d.second ? json(*d.second) : json(nullptr)},
          {"spread", d.spread}};
}

inline json policy(const recognizer::DecisionPolicy& p) {
  json j = {{"theta", p.theta}, {"window", p.window}};
  j["min_win"] = std::isfinite(p.min_win) ? json(p.min_win) : json(nullptr);
  return j;
}

inline json person(const socialstore::Person& p) { return p; }

inline json encounter(const std::optional<socialstore::Encounter>& e) {
  if (!e) return nullptr;
  return {{"session_id", e->session_id}, {"timestamp", e->timestamp}};
}

inline json id_list(const std::set<PersonId>& ids) {
  json j = json::array();
  for (const auto& id : ids) j.push_back(id);
  return j;
}

inline json error(const std::string& code, const std::string& message) {
  return {{"code", code}, {"message", message}};
}

}  // namespace api

// Parse helpers shared with the CLI and the tests.
inline facekit::ImageBuffer image_from_json(const json& j) {
  const int w = j.at("width").get<int>(), h = j.at("height").get<int>();
  const auto& px = j.at("pixels");
  if (!px.is_array()) throw InvalidArgument("pixels must be an array");
  if (w < 1 || h < 1) throw InvalidArgument("image dimensions must be positive");
  if (px.size() != static_cast<std::size_t>(w) * h * 3) {
    throw InvalidArgument("pixels must hold width * height * 3 values");
  }
  std::vector<facekit::Rgb> pixels;
  pixels.reserve(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < px.size(); i += 3) {
    auto channel = [&](std::size_t k) {
      const int v = px.at(i + k).get<int>();
      if (v < 0 || v > 255) throw InvalidArgument("pixel values must be in [0, 255]");
      return static_cast<std::uint8_t>(v);
    };
    pixels.push_back({channel(0), channel(1), channel(2)});
  }
  return facekit::ImageBuffer(w, h, std::move(pixels));
}

inline json image_to_json(const facekit::ImageBuffer& img) {
  json px = json::array();
  for (const auto& p : img.pixels()) {
    px.push_back(p.r);
    px.push_back(p.g);
    px.push_back(p.b);
  }
  return {{"width", img.width()}, {"height", img.height()}, {"pixels", std::move(px)}};
}

inline harness::SampleKey sample_key_from_json(const json& j) {
  harness::SampleKey k;
  k.identity = j.at("identity").get<std::size_t>();
  k.source = recognizer::source_from_string(j.value("source", std::string{"camera"}));
  k.session = j.value("session", std::size_t{0});
  k.index = j.value("index", std::size_t{0});
  const auto cond = j.value("condition", std::string{"easy"});
  if (cond != "easy" && cond != "hard") throw InvalidArgument("condition must be easy or hard");
  k.condition = cond == "easy" ? harness::Condition::Easy : harness::Condition::Hard;
  return k;
}

inline dialogue::Reply reply_from_json(const json& j) {
  dialogue::Reply r;
  r.kind = dialogue::reply_kind_from_string(j.at("kind").get<std::string>());
  r.value = j.value("value", std::string{});
  return r;
}

// ---------------------------------------------------------------------------

struct ServiceConfig {
  recognizer::DecisionPolicy policy;
  dialogue::DialogueConfig dialogue;
  std::filesystem::path report_dir = "reports";
  // When set, the store is written back after every mutating request.
  std::optional<std::filesystem::path> store_path;
};

// HTTP status plus JSON body.
struct Response {
  int status = 200;
  json body;
};

class Service {
 public:
  Service(std::shared_ptr<socialstore::SocialStore> store, recognizer::Registry<> registry,
          std::optional<harness::Corpus> corpus, ServiceConfig config)
      : store_(std::move(store)),
        registry_(std::move(registry)),
        corpus_(std::move(corpus)),
        cfg_(std::move(config)),
        engine_(*store_, cfg_.dialogue),
        rng_(std::random_device{}()) {
    cfg_.policy.validate();
  }

  const ServiceConfig& config() const { return cfg_; }
  socialstore::SocialStore& store() { return *store_; }
  const recognizer::Registry<>& registry() const { return registry_; }

  // ---- endpoint bodies; each throws a facebots::Error on failure

  json create_session(const json& body) {
    auto policy = cfg_.policy;
    if (!body.is_null()) {
      if (!body.is_object()) throw InvalidArgument("request body must be a JSON object");
      if (body.contains("theta")) policy.theta = body.at("theta").get<double>();
      if (body.contains("window")) policy.window = body.at("window").get<std::size_t>();
      policy.validate();
    }
    auto s = std::make_shared<Session>(policy);
    s->created_at = cfg_.dialogue.clock();
    std::string id;
    {
      std::unique_lock lock(sessions_mutex_);
      do {
        id = fresh_id();
      } while (sessions_.count(id));
      s->id = id;
      sessions_.emplace(id, s);
    }
    return {{"session_id", id}, {"policy", api::policy(policy)}, {"created_at", s->created_at}};
  }

  json post_frame(const std::string& id, const json& body) {
    auto s = session(id);
    if (!body.is_object()) throw InvalidArgument("frame body must be a JSON object");
    std::lock_guard lock(s->mutex);
    if (s->closed) throw Conflict("session '" + id + "' is closed");

    std::variant<facekit::PreprocessedFace, facekit::Rejected> result;
    if (body.contains("corpus_frame")) {
      if (!corpus_) throw InvalidArgument("this service has no corpus attached");
      result = corpus_->face(sample_key_from_json(body.at("corpus_frame")));
    } else if (body.contains("image")) {
      const auto img = image_from_json(body.at("image"));
      const auto& r = body.at("rect");
      facekit::FaceRect rect{r.at("x").get<int>(), r.at("y").get<int>(), r.at("w").get<int>(),
                             r.at("h").get<int>(), facekit::Pose::Frontal};
      result = facekit::preprocess(img, rect);
    } else {
      throw InvalidArgument("frame needs an 'image' with 'rect', or a 'corpus_frame'");
    }

    json out;
    if (auto* rej = std::get_if<facekit::Rejected>(&result)) {
      out["rejection"] = {{"reason", facekit::to_string(rej->reason)},
                          {"skin_ratio", rej->skin_ratio}};
      out["scores"] = nullptr;
    } else {
      const auto sv = registry_.score_all(std::get<facekit::PreprocessedFace>(result));
      s->window = recognizer::push_evidence(std::move(s->window), sv);
      s->decision = recognizer::decide(s->window, s->policy);
      out["rejection"] = nullptr;
      out["scores"] = api::scores(sv);
    }
    out["accumulated_mean"] = s->window.empty() ? json(nullptr) : api::scores(s->window.mean());
    out["decision"] = s->decision ? api::decision(*s->decision) : json(nullptr);
    out["window"] = {{"fill", s->window.size()}, {"size", s->window.window()}};
    out["acts"] = json::array();
    if (!s->dialogue && s->decision &&
        s->decision->verdict != recognizer::Verdict::Provisional) {
      // The recognizer may know people the social graph has never seen.
      for (const auto& who : {s->decision->best, s->decision->second}) {
        if (who && s->decision->verdict == recognizer::Verdict::Identified &&
            !store_->has_person(*who)) {
          store_->upsert_person({*who, *who, false, false, true, {}});
        }
      }
      auto start = engine_.start_session(*s->decision, s->id);
      s->dialogue = std::move(start.state);
      out["acts"].push_back(start.act);
      persist();
    }
    return out;
  }

  json post_reply(const std::string& id, const json& body) {
    auto s = session(id);
    if (!body.is_object()) throw InvalidArgument("reply body must be a JSON object");
    const auto reply = reply_from_json(body);
    std::lock_guard lock(s->mutex);
    if (!s->dialogue) throw Conflict("no dialogue is running in session '" + id + "'");
    auto acts = engine_.handle_reply(*s->dialogue, reply);
    persist();
    return {{"acts", acts}, {"phase", dialogue::to_string(s->dialogue->phase)}};
  }

  json get_session(const std::string& id) {
    auto s = session(id);
    std::lock_guard lock(s->mutex);
    return {{"session_id", s->id},
            {"created_at", s->created_at},
            {"closed", s->closed},
            {"policy", api::policy(s->policy)},
            {"window", {{"fill", s->window.size()}, {"size", s->window.window()}}},
            {"accumulated_mean", s->window.empty() ? json(nullptr) : api::scores(s->window.mean())},
            {"decision", s->decision ? api::decision(*s->decision) : json(nullptr)},
            {"dialogue", s->dialogue ? dialogue::to_json(*s->dialogue) : json(nullptr)}};
  }

  json close_session(const std::string& id) {
    auto s = session(id);
    std::lock_guard lock(s->mutex);
    if (s->closed) throw Conflict("session '" + id + "' is already closed");
    json acts = json::array();
    if (s->dialogue && s->dialogue->phase != dialogue::Phase::Done) {
      acts.push_back(engine_.end_session(*s->dialogue));
      persist();
    }
    s->closed = true;
    return {{"session_id", s->id}, {"acts", acts}};
  }

  json graph_person(const std::string& id, const std::optional<std::string>& viewer) {
    const auto p = store_->person(id);
    json friends;
    if (viewer) {
      auto v = store_->visible_friends(*viewer, id);
      friends = v ? api::id_list(*v) : json(nullptr);
    } else {
      friends = api::id_list(store_->friends(id));
    }
    return {{"person", api::person(p)}, {"friends", friends}};
  }

  json graph_mutual(const std::string& a, const std::string& b) {
    return {{"a", a}, {"b", b}, {"mutual", api::id_list(store_->mutual_friends(a, b))}};
  }

  json memory(const std::string& id) {
    return {{"person_id", id},
            {"last_encounter", api::encounter(store_->last_encounter(id))},
            {"records", store_->user_records(id)}};
  }

  json post_photo(const json& body) {
    if (!body.is_object()) throw InvalidArgument("photo body must be a JSON object");
    std::vector<facekit::FaceRect> detections;
    for (const auto& d : body.value("detections", json::array())) {
      detections.push_back(socialstore::rect_from_json(d));
    }
    std::vector<socialstore::RawTag> tags;
    for (const auto& t : body.value("tags", json::array())) {
      tags.push_back({t.at("person_id").get<std::string>(),
                      {t.at("cx").get<double>(), t.at("cy").get<double>()}});
    }
    auto photo = store_->ingest_photo(body.at("photo_id").get<std::string>(),
                                      body.at("owner").get<std::string>(),
                                      body.at("timestamp").get<Timestamp>(), detections, tags);
    persist();
    return photo;
  }

  json run_experiment(const std::string& name, const json& body) {
    if (!corpus_) throw InvalidArgument("this service has no corpus attached");
    if (!body.is_null() && !body.is_object()) throw InvalidArgument("body must be a JSON object");
    auto spec = corpus_->spec();
    if (body.is_object() && body.contains("seed")) spec.seed = body.at("seed").get<std::uint64_t>();
    std::optional<harness::Corpus> other;
    const harness::Corpus* c = &*corpus_;
    if (spec.seed != corpus_->spec().seed) c = &other.emplace(spec);

    harness::ExperimentReport rep;
    if (name == "threshold") {
      rep = harness::run_threshold_sweep(*c, {});
    } else if (name == "window") {
      rep = harness::run_window_sweep(*c, {});
    } else if (name == "cost") {
      rep = harness::run_training_cost(*c, {});
    } else if (name == "transfer") {
      rep = harness::run_transfer_matrix(*c);
    } else {
      throw NotFound("unknown experiment '" + name + "'");
    }
    std::filesystem::create_directories(cfg_.report_dir);
    const auto path = cfg_.report_dir / (name + "_seed" + std::to_string(spec.seed) + ".csv");
    rep.write_csv(path);
    return {{"experiment", name},
            {"seed", spec.seed},
            {"location", path.string()},
            {"rows", rep.rows.size()},
            {"columns", rep.columns},
            {"summary", rep.summary}};
  }

  // ---- HTTP plumbing

  // Runs `fn` and maps module errors onto the error body.
  static Response guarded(const std::function<json()>& fn) {
    try {
      return {200, fn()};
    } catch (const NotFound& e) {
      return {404, api::error("NotFound", e.what())};
    } catch (const Conflict& e) {
      return {409, api::error("Conflict", e.what())};
    } catch (const InvalidArgument& e) {
      return {400, api::error("BadRequest", e.what())};
    } catch (const BoundsError& e) {
      return {400, api::error("BadRequest", e.what())};
    } catch (const DimensionError& e) {
      return {400, api::error("BadRequest", e.what())};
    } catch (const SchemaError& e) {
      return {400, api::error("BadRequest", e.what())};
    } catch (const json::exception& e) {
      return {400, api::error("BadRequest", e.what())};
    } catch (const std::exception& e) {
      return {500, api::error("Internal", e.what())};
    }
  }

  static json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return nullptr;
    try {
      return json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw InvalidArgument(std::string("request body is not valid JSON: ") + e.what());
    }
  }

  void mount(httplib::Server& srv) {
    auto route = [](auto fn) {
      return [fn](const httplib::Request& req, httplib::Response& res) {
        auto r = guarded([&] { return fn(req); });
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
      };
    };
    srv.Post("/sessions", route([this](const httplib::Request& q) {
               return create_session(parse_body(q));
             }));
    srv.Post(R"(/sessions/([^/]+)/frames)", route([this](const httplib::Request& q) {
               return post_frame(q.matches[1], parse_body(q));
             }));
    srv.Post(R"(/sessions/([^/]+)/replies)", route([this](const httplib::Request& q) {
               return post_reply(q.matches[1], parse_body(q));
             }));
    srv.Post(R"(/sessions/([^/]+)/close)", route([this](const httplib::Request& q) {
               return close_session(q.matches[1]);
             }));
    srv.Get(R"(/sessions/([^/]+))", route([this](const httplib::Request& q) {
              return get_session(q.matches[1]);
            }));
    srv.Get(R"(/graph/persons/([^/]+))", route([this](const httplib::Request& q) {
              std::optional<std::string> viewer;
              if (q.has_param("viewer")) viewer = q.get_param_value("viewer");
              return graph_person(q.matches[1], viewer);
            }));
    srv.Get("/graph/mutual", route([this](const httplib::Request& q) {
              if (!q.has_param("a") || !q.has_param("b")) {
                throw InvalidArgument("query parameters 'a' and 'b' are required");
              }
              return graph_mutual(q.get_param_value("a"), q.get_param_value("b"));
            }));
    srv.Get(R"(/memory/([^/]+))", route([this](const httplib::Request& q) {
              return memory(q.matches[1]);
            }));
    srv.Post("/photos", route([this](const httplib::Request& q) {
               return post_photo(parse_body(q));
             }));
    srv.Post(R"(/experiments/([^/]+))", route([this](const httplib::Request& q) {
               return run_experiment(q.matches[1], parse_body(q));
             }));
    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        const auto code = res.status == 404 ? "NotFound" : res.status < 500 ? "BadRequest" : "Internal";
        res.set_content(api::error(code, "no such endpoint").dump(), "application/json");
      }
    });
  }

 private:
  struct Session {
    explicit Session(recognizer::DecisionPolicy p) : policy(p), window(p.window) {}
    std::string id;
    recognizer::DecisionPolicy policy;
    recognizer::EvidenceWindow window;
    std::optional<recognizer::Decision> decision;
    std::optional<dialogue::SessionState> dialogue;
    Timestamp created_at = 0;
    bool closed = false;
    std::mutex mutex;
  };

  std::shared_ptr<Session> session(const std::string& id) {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
    return it->second;
  }

  // 128 random bits as 32 hex digits.
  std::string fresh_id() {
    std::lock_guard lock(rng_mutex_);
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng_()),
                  static_cast<unsigned long long>(rng_()));
    return buf;
  }

  void persist() {
    if (!cfg_.store_path) return;
    std::lock_guard lock(persist_mutex_);
    store_->save(*cfg_.store_path);
  }

  std::shared_ptr<socialstore::SocialStore> store_;
  recognizer::Registry<> registry_;
  std::optional<harness::Corpus> corpus_;
  ServiceConfig cfg_;
  dialogue::Engine engine_;

  std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex rng_mutex_;
  std::mt19937_64 rng_;
  std::mutex persist_mutex_;
};

}  // namespace facebots::service
