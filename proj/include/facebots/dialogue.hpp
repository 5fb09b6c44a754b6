#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facebots/common.hpp"
#include "facebots/recognizer.hpp"
#include "facebots/socialstore.hpp"

namespace facebots::dialogue {

using socialstore::InteractionType;
using socialstore::SocialStore;

enum class ActType {
  Greet,
  ConfirmIdentity,
  SecondGuess,
  AskName,
  QueryState,
  NewsItem,
  StatusComment,
  MutualFriendNews,
  SendReminder,
  PastEncounterRef,
  OfferConnect,
  Acknowledge,
  Farewell,
};

inline const std::vector<std::pair<ActType, const char*>>& act_names() {
  static const std::vector<std::pair<ActType, const char*>> names = {
      {ActType::Greet, "Greet"},
      {ActType::ConfirmIdentity, "ConfirmIdentity"},
      {ActType::SecondGuess, "SecondGuess"},
      {ActType::AskName, "AskName"},
      {ActType::QueryState, "QueryState"},
      {ActType::NewsItem, "NewsItem"},
      {ActType::StatusComment, "StatusComment"},
      {ActType::MutualFriendNews, "MutualFriendNews"},
      {ActType::SendReminder, "SendReminder"},
      {ActType::PastEncounterRef, "PastEncounterRef"},
      {ActType::OfferConnect, "OfferConnect"},
      {ActType::Acknowledge, "Acknowledge"},
      {ActType::Farewell, "Farewell"},
  };
  return names;
}

inline const char* to_string(ActType a) {
  for (const auto& [k, v] : act_names()) {
    if (k == a) return v;
  }
  return "?";
}

inline ActType act_type_from_string(const std::string& s) {
  for (const auto& [k, v] : act_names()) {
    if (s == v) return k;
  }
  throw InvalidArgument("unknown act type '" + s + "'");
}

enum class Expects { None, YesNo, Name, FreeText };

inline const char* to_string(Expects e) {
  switch (e) {
    case Expects::None: return "None";
    case Expects::YesNo: return "YesNo";
    case Expects::Name: return "Name";
    case Expects::FreeText: return "FreeText";
  }
  return "?";
}

inline Expects expects_from_string(const std::string& s) {
  if (s == "None") return Expects::None;
  if (s == "YesNo") return Expects::YesNo;
  if (s == "Name") return Expects::Name;
  if (s == "FreeText") return Expects::FreeText;
  throw InvalidArgument("unknown expects value '" + s + "'");
}

// What each act waits for. Topic acts are fixed here so the template file can
// only change wording.
inline Expects expects_for(ActType a) {
  switch (a) {
    case ActType::ConfirmIdentity:
    case ActType::SecondGuess:
    case ActType::QueryState:
    case ActType::NewsItem:
    case ActType::MutualFriendNews:
    case ActType::OfferConnect:
      return Expects::YesNo;
    case ActType::AskName:
      return Expects::Name;
    default:
      return Expects::None;
  }
}

struct DialogueAct {
  ActType act_type = ActType::Greet;
  std::string text;
  Expects expects = Expects::None;
  bool operator==(const DialogueAct&) const = default;
};

inline void to_json(nlohmann::json& j, const DialogueAct& a) {
  j = {{"act_type", to_string(a.act_type)}, {"text", a.text}, {"expects", to_string(a.expects)}};
}
inline void from_json(const nlohmann::json& j, DialogueAct& a) {
  a.act_type = act_type_from_string(j.at("act_type").get<std::string>());
  a.text = j.at("text").get<std::string>();
  a.expects = expects_from_string(j.at("expects").get<std::string>());
}

enum class Phase { Greeting, Confirming, SecondGuessing, Naming, SmallTalk, Closing, Done };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::Greeting: return "Greeting";
    case Phase::Confirming: return "Confirming";
    case Phase::SecondGuessing: return "SecondGuessing";
    case Phase::Naming: return "Naming";
    case Phase::SmallTalk: return "SmallTalk";
    case Phase::Closing: return "Closing";
    case Phase::Done: return "Done";
  }
  return "?";
}

enum class TopicKind {
  OwnStatus,
  MutualFriendStatus,
  NewPhotoPost,
  PastEncounter,
  OnlineFriendConnect,
  GeneralNews,
  PreScripted,
};

inline const char* to_string(TopicKind k) {
  switch (k) {
    case TopicKind::OwnStatus: return "OwnStatus";
    case TopicKind::MutualFriendStatus: return "MutualFriendStatus";
    case TopicKind::NewPhotoPost: return "NewPhotoPost";
    case TopicKind::PastEncounter: return "PastEncounter";
    case TopicKind::OnlineFriendConnect: return "OnlineFriendConnect";
    case TopicKind::GeneralNews: return "GeneralNews";
    case TopicKind::PreScripted: return "PreScripted";
  }
  return "?";
}

// Priority order used by select_topic.
inline constexpr TopicKind kTopicOrder[] = {
    TopicKind::OwnStatus,     TopicKind::MutualFriendStatus,  TopicKind::NewPhotoPost,
    TopicKind::PastEncounter, TopicKind::OnlineFriendConnect, TopicKind::GeneralNews,
    TopicKind::PreScripted,
};

struct Topic {
  TopicKind kind = TopicKind::GeneralNews;
  PersonId friend_id;  // the friend the topic is about, if any
  std::string text;    // status text, news item or prescripted line
  std::string photo_id;
  Timestamp when = 0;
  bool operator==(const Topic&) const = default;
};

enum class ReplyKind { Yes, No, Name, FreeText };

inline const char* to_string(ReplyKind k) {
  switch (k) {
    case ReplyKind::Yes: return "Yes";
    case ReplyKind::No: return "No";
    case ReplyKind::Name: return "Name";
    case ReplyKind::FreeText: return "FreeText";
  }
  return "?";
}

inline ReplyKind reply_kind_from_string(const std::string& s) {
  if (s == "Yes") return ReplyKind::Yes;
  if (s == "No") return ReplyKind::No;
  if (s == "Name") return ReplyKind::Name;
  if (s == "FreeText") return ReplyKind::FreeText;
  throw InvalidArgument("unknown reply kind '" + s + "'");
}

struct Reply {
  ReplyKind kind = ReplyKind::Yes;
  std::string value;
};

inline bool accepts(Expects e, ReplyKind k) {
  switch (e) {
    case Expects::YesNo: return k == ReplyKind::Yes || k == ReplyKind::No;
    case Expects::Name: return k == ReplyKind::Name;
    case Expects::FreeText: return k == ReplyKind::FreeText;
    case Expects::None: return false;
  }
  return false;
}

struct SessionState {
  SessionId session_id;
  Phase phase = Phase::Greeting;
  std::optional<PersonId> user;
  std::optional<PersonId> guess;         // identity currently being confirmed
  std::optional<PersonId> second_guess;  // fallback offered after a denial
  std::set<TopicKind> topics_used;
  std::size_t turn_count = 0;
  std::vector<DialogueAct> acts;
  std::optional<Topic> pending_topic;
  // The user's previous encounter; news newer than this counts as fresh.
  Timestamp since = std::numeric_limits<Timestamp>::min();
  Timestamp last_timestamp = std::numeric_limits<Timestamp>::min();

  const DialogueAct* pending() const {
    if (acts.empty() || acts.back().expects == Expects::None) return nullptr;
    if (phase == Phase::Closing || phase == Phase::Done) return nullptr;
    return &acts.back();
  }
};

inline nlohmann::json to_json(const SessionState& s) {
  nlohmann::json j;
  j["session_id"] = s.session_id;
  j["phase"] = to_string(s.phase);
  j["user"] = s.user ? nlohmann::json(*s.user) : nlohmann::json(nullptr);
  j["turn_count"] = s.turn_count;
  j["topics_used"] = nlohmann::json::array();
  for (auto k : kTopicOrder) {
    if (s.topics_used.count(k)) j["topics_used"].push_back(to_string(k));
  }
  j["acts"] = s.acts;
  const auto* p = s.pending();
  j["pending"] = p ? nlohmann::json(*p) : nlohmann::json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Templates

struct Templates {
  std::map<std::string, std::string> text = {
      {"confirm_identity", "Hi! Are you {name}?"},
      {"second_guess", "Oh sorry! I misrecognized you. You are {name}, right?"},
      {"ask_name", "Hi! I don't think we have met before. What is your name?"},
      {"greet_new", "Nice to meet you, {name}!"},
      {"query_state", "Hey, {name}, are you doing well today?"},
      {"ack_state_yes", ""},
      {"ack_state_no", "Oh, I hope the rest of your day goes better."},
      {"general_news",
       "Let me tell you some interesting news that I've heard: {item} Have you heard about "
       "this?"},
      {"ack_news_yes", "That's great!"},
      {"ack_news_no", "Now you know!"},
      {"own_status", "I see you are {status}"},
      {"mutual_status", "Did you know that our friend {friend} is \"{status}\"?"},
      {"new_photo", "Did you know that our friend {friend} has posted a new photo on facebook?"},
      {"ack_friend_news_yes", "Yes, of course, you are well informed!"},
      {"reminder", "I am sending you a message about this to check it out"},
      {"reminder_message_status", "Have a look at {friend}'s new status on facebook"},
      {"reminder_message_photo", "Have a look at the new photo {friend} posted on facebook"},
      {"past_encounter", "I saw {friend_first} {when}."},
      {"offer_connect",
       "One of our friends, {friend}, is online - would you like me to send a message?"},
      {"connect_message", "{friend_first}, {first} says hello"},
      {"ack_connect_yes", ""},
      {"ack_connect_no", "Alright, maybe another time."},
      {"ack_prescripted", "I see."},
      {"farewell", "Hey, {first}, it was nice talking to you! I have to go now. See you later!"},
      {"farewell_anonymous", "It was nice talking to you! I have to go now. See you later!"},
      {"robot_status", "interacting with {name}"},
  };
  std::vector<std::string> prescripted;

  const std::string& get(const std::string& key) const {
    auto it = text.find(key);
    if (it == text.end()) throw InvalidArgument("no template '" + key + "'");
    return it->second;
  }
};

inline Templates default_templates() { return {}; }

// Loads a template table. Keys not present keep the built-in wording; unknown
// keys are rejected so typos surface immediately.
inline Templates load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read templates '" + path.string() + "'");
  Templates t;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [k, v] : j.at("templates").items()) {
      if (!t.text.count(k)) throw SchemaError("unknown template key '" + k + "'");
      const auto s = v.get<std::string>();
      // Only acknowledgements may be silent.
      if (s.empty() && k.rfind("ack_", 0) != 0) {
        throw SchemaError("template '" + k + "' is empty");
      }
      t.text[k] = s;
    }
    t.prescripted = j.value("prescripted", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("malformed templates '" + path.string() + "': " + e.what());
  }
  return t;
}

// Replaces every {slot} with its value; an unfilled slot is an error.
inline std::string render(const std::string& tpl, const std::map<std::string, std::string>& slots) {
  std::string out;
  std::size_t i = 0;
  while (i < tpl.size()) {
    const auto open = tpl.find('{', i);
    if (open == std::string::npos) {
      out.append(tpl, i, std::string::npos);
      break;
    }
    const auto close = tpl.find('}', open);
    if (close == std::string::npos) throw InvalidArgument("unbalanced template: " + tpl);
    out.append(tpl, i, open - i);
    const auto key = tpl.substr(open + 1, close - open - 1);
    auto it = slots.find(key);
    if (it == slots.end()) throw InvalidArgument("template slot '" + key + "' not filled");
    out += it->second;
    i = close + 1;
  }
  return out;
}

inline std::vector<std::string> load_news(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read news file '" + path.string() + "'");
  std::vector<std::string> items;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) items.push_back(line);
  }
  return items;
}

inline std::string first_name(const std::string& name) {
  const auto sp = name.find(' ');
  return sp == std::string::npos ? name : name.substr(0, sp);
}

// "yesterday evening", "3 days ago" and so on, on UTC calendar days.
inline std::string relative_time(Timestamp then, Timestamp now) {
  auto floor_div = [](Timestamp a, Timestamp b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); };
  const Timestamp days = floor_div(now, 86400) - floor_div(then, 86400);
  const Timestamp hour = (then - floor_div(then, 86400) * 86400) / 3600;
  const char* part = hour < 5 ? "night" : hour < 12 ? "morning" : hour < 17 ? "afternoon"
                                                     : hour < 21 ? "evening" : "night";
  if (days <= 0) return std::string(part) == "night" ? "earlier tonight" : std::string("this ") + part;
  if (days == 1) return std::string(part) == "night" ? "last night" : std::string("yesterday ") + part;
  if (days < 7) return std::to_string(days) + " days ago";
  if (days < 14) return "last week";
  return "a while ago";
}

// ---------------------------------------------------------------------------

struct DialogueConfig {
  PersonId robot_id = "robot";
  Templates templates = default_templates();
  std::vector<std::string> news;
  // Seconds since epoch; the engine keeps per-session timestamps strictly
  // increasing even if the clock stalls.
  std::function<Timestamp()> clock = [] {
    return static_cast<Timestamp>(std::chrono::duration_cast<std::chrono::seconds>(
                                      std::chrono::system_clock::now().time_since_epoch())
                                      .count());
  };
};

// A clock that starts at `start` and advances one second per reading.
inline std::function<Timestamp()> stepping_clock(Timestamp start) {
  auto t = std::make_shared<Timestamp>(start);
  return [t] { return (*t)++; };
}

class Engine {
 public:
  Engine(SocialStore& store, DialogueConfig config)
      : store_(store), cfg_(std::move(config)) {}

  const DialogueConfig& config() const { return cfg_; }

  struct Start {
    SessionState state;
    DialogueAct act;
  };

  Start start_session(const recognizer::Decision& decision,
                      std::optional<SessionId> session_id = std::nullopt) {
    if (decision.verdict == recognizer::Verdict::Provisional) {
      throw InvalidArgument("cannot start a dialogue on a provisional decision");
    }
    SessionState s;
    s.session_id = session_id ? *session_id : store_.allocate_session_id();
    if (s.session_id.empty()) throw InvalidArgument("session id must not be empty");
    if (!store_.session_records(s.session_id).empty()) {
      throw Conflict("session '" + s.session_id + "' already has records");
    }
    DialogueAct act;
    if (decision.verdict == recognizer::Verdict::Identified && decision.best) {
      s.phase = Phase::Confirming;
      s.guess = decision.best;
      s.second_guess = decision.second;
      act = make(ActType::ConfirmIdentity, "confirm_identity", {{"name", name_of(*s.guess)}});
    } else {
      s.phase = Phase::Naming;
      act = make(ActType::AskName, "ask_name", {});
    }
    emit(s, act, InteractionType::Greeting, {});
    return {std::move(s), act};
  }

  std::vector<DialogueAct> handle_reply(SessionState& s, const Reply& r) {
    const auto* pending = s.pending();
    if (!pending) throw Conflict("no reply is expected in phase " + std::string(to_string(s.phase)));
    if (!accepts(pending->expects, r.kind)) {
      throw Conflict(std::string("reply ") + to_string(r.kind) + " does not answer a " +
                     to_string(pending->expects) + " question");
    }
    if (r.kind == ReplyKind::Name && trim(r.value).empty()) {
      throw InvalidArgument("name reply must carry a name");
    }
    std::vector<DialogueAct> out;
    const bool yes = r.kind == ReplyKind::Yes;
    switch (s.phase) {
      case Phase::Confirming:
      case Phase::SecondGuessing: {
        const auto guess = *s.guess;
        log(s, yes ? InteractionType::Confirm : InteractionType::Deny,
            (yes ? "confirmed identity " : "denied identity ") + guess,
            {{"confirmed", yes}, {"second_guess", s.phase == Phase::SecondGuessing}},
            yes ? guess : PersonId{});
        if (yes) {
          become_user(s, guess);
          auto act = make(ActType::QueryState, "query_state", {{"name", name_of(guess)}});
          emit(s, act, InteractionType::QueryState, {});
          out.push_back(act);
        } else if (s.phase == Phase::Confirming && s.second_guess && *s.second_guess != guess) {
          s.phase = Phase::SecondGuessing;
          s.guess = s.second_guess;
          auto act = make(ActType::SecondGuess, "second_guess", {{"name", name_of(*s.guess)}});
          emit(s, act, InteractionType::Greeting, {{"second_guess", true}});
          out.push_back(act);
        } else {
          s.phase = Phase::Naming;
          s.guess.reset();
          auto act = make(ActType::AskName, "ask_name", {});
          emit(s, act, InteractionType::Greeting, {});
          out.push_back(act);
        }
        break;
      }
      case Phase::Naming: {
        const auto name = trim(r.value);
        auto found = store_.find_by_name(name);
        const PersonId id = found ? *found : store_.upsert_person({"", name, false, false, true, {}});
        log(s, InteractionType::NameLearned, "learned name " + name,
            {{"training_capture", true}, {"new_person", !found}}, id);
        become_user(s, id);
        auto act = make(ActType::Greet, "greet_new", {{"name", name}});
        emit(s, act, InteractionType::Greeting, {});
        out.push_back(act);
        continue_small_talk(s, out);
        break;
      }
      case Phase::SmallTalk: {
        answer_topic(s, pending->act_type, yes, out);
        continue_small_talk(s, out);
        break;
      }
      default:
        throw Conflict("no reply is expected in phase " + std::string(to_string(s.phase)));
    }
    return out;
  }

  // Next topic by fixed priority, skipping kinds already used this session.
  std::optional<Topic> select_topic(const SessionState& s) const {
    if (s.phase != Phase::SmallTalk || !s.user) return std::nullopt;
    const auto& user = *s.user;
    const auto circle = shared_friends(user);
    for (auto kind : kTopicOrder) {
      if (s.topics_used.count(kind)) continue;
      if (auto t = find_topic(kind, user, circle, s)) return t;
    }
    return std::nullopt;
  }

  DialogueAct end_session(SessionState& s) {
    if (s.phase == Phase::Done) throw Conflict("session already finished");
    DialogueAct act = s.user && s.phase != Phase::Naming
                          ? make(ActType::Farewell, "farewell",
                                 {{"name", name_of(*s.user)}, {"first", first_name(name_of(*s.user))}})
                          : make(ActType::Farewell, "farewell_anonymous", {});
    emit(s, act, InteractionType::Farewell, {});
    s.phase = Phase::Done;
    s.pending_topic.reset();
    return act;
  }

 private:
  static std::string trim(const std::string& v) {
    const auto b = v.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = v.find_last_not_of(" \t\r\n");
    return v.substr(b, e - b + 1);
  }

  std::string name_of(const PersonId& id) const {
    if (store_.has_person(id)) return store_.person(id).name;
    return id;
  }

  DialogueAct make(ActType type, const std::string& key,
                   const std::map<std::string, std::string>& slots) const {
    DialogueAct a{type, render(cfg_.templates.get(key), slots), expects_for(type)};
    if (a.text.empty() && type != ActType::Acknowledge) {
      throw InvalidArgument("rendered act is empty");
    }
    return a;
  }

  Timestamp next_ts(SessionState& s) {
    Timestamp t = cfg_.clock();
    if (s.last_timestamp != std::numeric_limits<Timestamp>::min() && t <= s.last_timestamp) {
      t = s.last_timestamp + 1;
    }
    s.last_timestamp = t;
    return t;
  }

  void log(SessionState& s, InteractionType type, const std::string& description,
           std::map<std::string, bool> flags, const PersonId& user) {
    socialstore::InteractionRecord r;
    r.timestamp = next_ts(s);
    r.session_id = s.session_id;
    r.interaction_type = type;
    r.description = description;
    r.flags = std::move(flags);
    r.user_id = user;
    store_.record_interaction(r);
  }

  void emit(SessionState& s, const DialogueAct& act, InteractionType type,
            std::map<std::string, bool> flags) {
    log(s, type, act.text, std::move(flags), s.user.value_or(PersonId{}));
    s.acts.push_back(act);
    ++s.turn_count;
  }

  void become_user(SessionState& s, const PersonId& id) {
    if (auto last = store_.last_encounter(id); last && last->session_id != s.session_id) {
      s.since = last->timestamp;
    } else {
      // Records of this very session are not a previous encounter.
      s.since = std::numeric_limits<Timestamp>::min();
      for (const auto& r : store_.user_records(id)) {
        if (r.session_id != s.session_id) s.since = std::max(s.since, r.timestamp);
      }
    }
    s.user = id;
    s.guess.reset();
    s.second_guess.reset();
    s.phase = Phase::SmallTalk;
    if (store_.has_person(cfg_.robot_id)) {
      store_.append_status({cfg_.robot_id,
                            render(cfg_.templates.get("robot_status"), {{"name", name_of(id)}}),
                            s.last_timestamp});
    }
  }

  // Friends the robot shares with the user, as far as the user's visibility
  // setting lets the robot see.
  std::set<PersonId> shared_friends(const PersonId& user) const {
    const bool robot_known = store_.has_person(cfg_.robot_id);
    const auto visible = robot_known ? store_.visible_friends(cfg_.robot_id, user)
                                     : std::optional(store_.friends(user));
    if (!visible) return {};
    std::set<PersonId> out;
    for (const auto& f : *visible) {
      if (f == cfg_.robot_id) continue;
      if (!robot_known || store_.are_friends(cfg_.robot_id, f)) out.insert(f);
    }
    return out;
  }

  std::optional<Topic> find_topic(TopicKind kind, const PersonId& user,
                                  const std::set<PersonId>& circle, const SessionState& s) const {
    switch (kind) {
      case TopicKind::OwnStatus: {
        const auto fresh = store_.status_updates_since(user, s.since);
        if (fresh.empty()) return std::nullopt;
        return Topic{kind, user, fresh.back().text, "", fresh.back().timestamp};
      }
      case TopicKind::MutualFriendStatus: {
        std::optional<Topic> best;
        for (const auto& f : circle) {
          for (const auto& st : store_.status_updates_since(f, s.since)) {
            if (!best || st.timestamp > best->when) best = Topic{kind, f, st.text, "", st.timestamp};
          }
        }
        return best;
      }
      case TopicKind::NewPhotoPost: {
        std::optional<Topic> best;
        for (const auto& f : circle) {
          for (const auto& p : store_.photos_since(f, s.since)) {
            if (!best || p.timestamp > best->when) best = Topic{kind, f, "", p.photo_id, p.timestamp};
          }
        }
        return best;
      }
      case TopicKind::PastEncounter: {
        std::optional<Topic> best;
        for (const auto& f : circle) {
          auto e = store_.last_encounter(f);
          if (e && e->session_id != s.session_id && (!best || e->timestamp > best->when)) {
            best = Topic{kind, f, "", "", e->timestamp};
          }
        }
        return best;
      }
      case TopicKind::OnlineFriendConnect: {
        const auto visible = store_.has_person(cfg_.robot_id)
                                 ? store_.visible_friends(cfg_.robot_id, user)
                                 : std::optional(store_.friends(user));
        if (!visible) return std::nullopt;
        for (const auto& f : *visible) {
          if (f != cfg_.robot_id && store_.person(f).online) return Topic{kind, f, "", "", 0};
        }
        return std::nullopt;
      }
      case TopicKind::GeneralNews:
        if (cfg_.news.empty()) return std::nullopt;
        return Topic{kind, "", cfg_.news.front(), "", 0};
      case TopicKind::PreScripted:
        if (cfg_.templates.prescripted.empty()) return std::nullopt;
        return Topic{kind, "", cfg_.templates.prescripted.front(), "", 0};
    }
    return std::nullopt;
  }

  DialogueAct topic_act(const Topic& t, const SessionState& s) {
    const auto fname = t.friend_id.empty() ? std::string{} : name_of(t.friend_id);
    switch (t.kind) {
      case TopicKind::OwnStatus:
        return make(ActType::StatusComment, "own_status", {{"status", t.text}});
      case TopicKind::MutualFriendStatus:
        return make(ActType::MutualFriendNews, "mutual_status",
                    {{"friend", fname}, {"friend_first", first_name(fname)}, {"status", t.text}});
      case TopicKind::NewPhotoPost:
        return make(ActType::MutualFriendNews, "new_photo",
                    {{"friend", fname}, {"friend_first", first_name(fname)}});
      case TopicKind::PastEncounter:
        return make(ActType::PastEncounterRef, "past_encounter",
                    {{"friend", fname},
                     {"friend_first", first_name(fname)},
                     {"when", relative_time(t.when, s.last_timestamp)}});
      case TopicKind::OnlineFriendConnect:
        return make(ActType::OfferConnect, "offer_connect",
                    {{"friend", fname}, {"friend_first", first_name(fname)}});
      case TopicKind::GeneralNews:
        return make(ActType::NewsItem, "general_news", {{"item", t.text}});
      case TopicKind::PreScripted:
        return DialogueAct{ActType::NewsItem, t.text, Expects::YesNo};
    }
    throw InvalidArgument("unknown topic kind");
  }

  static InteractionType record_type(ActType a) {
    switch (a) {
      case ActType::QueryState: return InteractionType::QueryState;
      case ActType::NewsItem: return InteractionType::NewsItem;
      case ActType::StatusComment: return InteractionType::StatusComment;
      case ActType::MutualFriendNews: return InteractionType::MutualFriendNews;
      case ActType::SendReminder: return InteractionType::Reminder;
      case ActType::PastEncounterRef: return InteractionType::PastEncounterRef;
      case ActType::OfferConnect: return InteractionType::ConnectOnline;
      case ActType::Farewell: return InteractionType::Farewell;
      default: return InteractionType::Greeting;
    }
  }

  void answer_topic(SessionState& s, ActType asked, bool yes, std::vector<DialogueAct>& out) {
    const auto& user = *s.user;
    const auto uname = name_of(user);
    const std::optional<Topic> topic = s.pending_topic;
    s.pending_topic.reset();
    DialogueAct act;
    std::map<std::string, bool> flags{{"answer_yes", yes}};
    if (asked == ActType::QueryState) {
      act = make(ActType::Acknowledge, yes ? "ack_state_yes" : "ack_state_no", {});
    } else if (!topic) {
      throw Error("pending small-talk act without a topic");
    } else if (topic->kind == TopicKind::OnlineFriendConnect) {
      const auto fname = name_of(topic->friend_id);
      if (yes) {
        const auto message = render(cfg_.templates.get("connect_message"),
                                    {{"friend", fname},
                                     {"friend_first", first_name(fname)},
                                     {"name", uname},
                                     {"first", first_name(uname)}});
        store_.send({topic->friend_id, message, next_ts(s), socialstore::OutboxChannel::Chat});
        act = make(ActType::Acknowledge, "ack_connect_yes", {{"message", message}});
      } else {
        act = make(ActType::Acknowledge, "ack_connect_no", {});
      }
      flags["message_sent"] = yes;
    } else if (topic->kind == TopicKind::MutualFriendStatus ||
               topic->kind == TopicKind::NewPhotoPost) {
      if (yes) {
        act = make(ActType::Acknowledge, "ack_friend_news_yes", {});
      } else {
        const auto fname = name_of(topic->friend_id);
        const auto key = topic->kind == TopicKind::NewPhotoPost ? "reminder_message_photo"
                                                                : "reminder_message_status";
        store_.send({user,
                     render(cfg_.templates.get(key),
                            {{"friend", fname}, {"friend_first", first_name(fname)}}),
                     next_ts(s), socialstore::OutboxChannel::Message});
        act = make(ActType::SendReminder, "reminder", {});
        flags["message_sent"] = true;
      }
    } else if (topic->kind == TopicKind::PreScripted) {
      act = make(ActType::Acknowledge, "ack_prescripted", {});
    } else {
      act = make(ActType::Acknowledge, yes ? "ack_news_yes" : "ack_news_no", {});
    }
    const auto type = act.act_type == ActType::SendReminder ? InteractionType::Reminder
                                                           : record_type(asked);
    if (act.text.empty()) {
      // An empty template means the robot moves on without saying anything;
      // the answer itself is still remembered.
      log(s, type, std::string("answered ") + (yes ? "yes" : "no"), std::move(flags), user);
      return;
    }
    emit(s, act, type, std::move(flags));
    out.push_back(act);
  }

  // Emits topic acts until one waits for an answer or the topics run out.
  void continue_small_talk(SessionState& s, std::vector<DialogueAct>& out) {
    for (;;) {
      auto topic = select_topic(s);
      if (!topic) {
        s.phase = Phase::Closing;
        return;
      }
      s.topics_used.insert(topic->kind);
      auto act = topic_act(*topic, s);
      emit(s, act, record_type(act.act_type), {});
      out.push_back(act);
      if (act.expects != Expects::None) {
        s.pending_topic = topic;
        return;
      }
    }
  }

  SocialStore& store_;
  DialogueConfig cfg_;
};

// Scripted user for demos and tests: confirms the first guess, then answers
// small-talk questions Yes, No, Yes, ... and gives `name` when asked.
inline SessionState run_scripted(Engine& engine, const recognizer::Decision& decision,
                                 std::optional<SessionId> session_id = std::nullopt,
                                 const std::string& name = "Guest") {
  auto start = engine.start_session(decision, std::move(session_id));
  auto& s = start.state;
  bool next_yes = true;
  while (const auto* p = s.pending()) {
    Reply r;
    if (p->expects == Expects::Name) {
      r = {ReplyKind::Name, name};
    } else if (s.phase == Phase::Confirming || s.phase == Phase::SecondGuessing) {
      r = {ReplyKind::Yes, ""};
    } else if (p->expects == Expects::FreeText) {
      r = {ReplyKind::FreeText, "ok"};
    } else {
      r = {next_yes ? ReplyKind::Yes : ReplyKind::No, ""};
      next_yes = !next_yes;
    }
    engine.handle_reply(s, r);
  }
  engine.end_session(s);
  return s;
}

// The demo snapshot is dated around this instant.
inline constexpr Timestamp kDemoNow = 1254996000;  // 2009-10-08 10:00 UTC

inline recognizer::Decision demo_decision() {
  return recognizer::Decision::identified("panos", "shervin", 1.0);
}

}  // namespace facebots::dialogue
