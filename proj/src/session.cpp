#include "ftf/session.hpp"

#include <cstdio>

#include <json.hpp>

#include "ftf/error.hpp"

namespace ftf {

std::string_view to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::AutoConfirmed: return "AutoConfirmed";
    case Provenance::UserConfirmed: return "UserConfirmed";
    case Provenance::UserCorrected: return "UserCorrected";
    case Provenance::UserDeclined: return "UserDeclined";
    case Provenance::InvalidFallback: return "InvalidFallback";
  }
  return "Unknown";
}

Provenance parse_provenance(std::string_view text) {
  for (auto p : {Provenance::AutoConfirmed, Provenance::UserConfirmed, Provenance::UserCorrected,
                 Provenance::UserDeclined, Provenance::InvalidFallback}) {
    if (to_string(p) == text) return p;
  }
  throw Error(ErrorKind::ParseError, "unknown provenance '" + std::string(text) + "'");
}

Duration resolution_latency(const FeedbackSession& session) {
  if (session.state != SessionState::Resolved || !session.resolution) {
    throw Error(ErrorKind::Unresolved, "session " + session.session_id);
  }
  return session.resolution->resolved_at - session.classified_at;
}

SessionManager::SessionManager(std::uint64_t id_seed) : id_rng_(id_seed) {}

void SessionManager::set_listener(Listener listener) {
  std::lock_guard lock(mutex_);
  listener_ = std::move(listener);
}

FeedbackSession SessionManager::open_session(Prediction predicted, std::string record_id, Duration t1,
                                             std::shared_ptr<const LabelSet> label_set, Timestamp now,
                                             std::optional<Timestamp> classified_at) {
  if (t1 <= Duration::zero()) throw Error(ErrorKind::InvalidTimeout, "t1 must be positive");
  if (!label_set) throw Error(ErrorKind::InvalidLabel, "session needs a label set");

  std::lock_guard lock(mutex_);
  char id[48];
  std::snprintf(id, sizeof id, "s%016llx%08llx", static_cast<unsigned long long>(id_rng_()),
                static_cast<unsigned long long>(++counter_));

  const Timestamp started = classified_at.value_or(now);
  FeedbackSession s{id, std::move(record_id), std::move(predicted), std::move(label_set), started, now, now + t1, t1,
                    SessionState::Awaiting, std::nullopt, std::nullopt};
  auto [it, fresh] = sessions_.emplace(s.session_id, std::move(s));
  return it->second;
}

FeedbackSession& SessionManager::find_locked(const std::string& session_id) {
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorKind::UnknownSession, session_id);
  return it->second;
}

const FinalLabel& SessionManager::resolve_locked(FeedbackSession& s, FinalLabel final) {
  s.state = SessionState::Resolved;
  s.resolution = std::move(final);
  if (listener_) listener_(s);
  return *s.resolution;
}

FinalLabel SessionManager::submit_feedback(const std::string& session_id, std::string_view raw, Timestamp now) {
  return submit(session_id, raw, now).final;
}

SubmitOutcome SessionManager::submit(const std::string& session_id, std::string_view raw, Timestamp now) {
  std::lock_guard lock(mutex_);
  FeedbackSession& s = find_locked(session_id);
  if (s.state == SessionState::Resolved) return {*s.resolution, true};

  const LabelOrSentinel predicted = s.predicted.label;
  if (now >= s.deadline) {
    return {resolve_locked(s, {predicted, Provenance::AutoConfirmed, now}), true};
  }

  s.raw_feedback = std::string(raw);
  if (fold(raw) == kDeclineToken) {
    return {resolve_locked(s, {Unclassifiable{}, Provenance::UserDeclined, now}), false};
  }
  const FeedbackVerdict verdict = validate_feedback(raw, *s.label_set);
  switch (verdict.kind) {
    case FeedbackVerdict::Kind::Blank:
      return {resolve_locked(s, {predicted, Provenance::UserConfirmed, now}), false};
    case FeedbackVerdict::Kind::Valid:
      if (*verdict.label == s.predicted.label) {
        return {resolve_locked(s, {predicted, Provenance::UserConfirmed, now}), false};
      }
      return {resolve_locked(s, {*verdict.label, Provenance::UserCorrected, now}), false};
    case FeedbackVerdict::Kind::Invalid:
      break;
  }
  return {resolve_locked(s, {predicted, Provenance::InvalidFallback, now}), false};
}

std::optional<FinalLabel> SessionManager::expire(const std::string& session_id, Timestamp now) {
  std::lock_guard lock(mutex_);
  FeedbackSession& s = find_locked(session_id);
  if (s.state == SessionState::Resolved || now < s.deadline) return std::nullopt;
  return resolve_locked(s, {LabelOrSentinel{s.predicted.label}, Provenance::AutoConfirmed, now});
}

std::size_t SessionManager::sweep(Timestamp now) {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (auto& [id, s] : sessions_) {
    if (s.state == SessionState::Awaiting && now >= s.deadline) {
      resolve_locked(s, {LabelOrSentinel{s.predicted.label}, Provenance::AutoConfirmed, now});
      ++n;
    }
  }
  return n;
}

FeedbackSession SessionManager::get(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorKind::UnknownSession, session_id);
  return it->second;
}

bool SessionManager::contains(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  return sessions_.count(session_id) != 0;
}

Duration SessionManager::resolution_latency(const std::string& session_id) const {
  return ftf::resolution_latency(get(session_id));
}

std::size_t SessionManager::size() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

std::size_t SessionManager::awaiting() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& [id, s] : sessions_) n += s.state == SessionState::Awaiting;
  return n;
}

std::size_t SessionManager::evict_resolved_before(Timestamp cutoff) {
  std::lock_guard lock(mutex_);
  return std::erase_if(sessions_, [&](const auto& kv) {
    return kv.second.state == SessionState::Resolved && kv.second.resolution->resolved_at < cutoff;
  });
}

// ---------------------------------------------------------------------------

std::string audit_line(const FeedbackSession& s) {
  if (!s.resolution) throw Error(ErrorKind::Unresolved, "session " + s.session_id);
  nlohmann::ordered_json j;
  j["session_id"] = s.session_id;
  j["record_id"] = s.record_id;
  j["predicted"] = s.predicted.label.name();
  j["final"] = to_string(s.resolution->label);
  j["provenance"] = to_string(s.resolution->provenance);
  j["t1"] = static_cast<double>(s.t1.count()) / 1000.0;
  j["opened_at"] = to_millis(s.opened_at);
  j["resolved_at"] = to_millis(s.resolution->resolved_at);
  return j.dump();
}

AuditEntry parse_audit_line(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    return AuditEntry{j.at("session_id").get<std::string>(),
                      j.at("record_id").get<std::string>(),
                      j.at("predicted").get<std::string>(),
                      j.at("final").get<std::string>(),
                      parse_provenance(j.at("provenance").get<std::string>()),
                      j.at("t1").get<double>(),
                      j.at("opened_at").get<std::int64_t>(),
                      j.at("resolved_at").get<std::int64_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("audit line: ") + e.what());
  }
}

std::vector<AuditEntry> read_audit_log(const std::filesystem::path& file) {
  std::vector<AuditEntry> out;
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_audit_line(line));
  }
  return out;
}

AuditLog::AuditLog(std::filesystem::path file) : out_(file, std::ios::app) {
  if (!out_) throw Error(ErrorKind::Io, "cannot open audit log " + file.string());
}

void AuditLog::append(const FeedbackSession& session) {
  const std::string line = audit_line(session);
  std::lock_guard lock(mutex_);
  out_ << line << '\n';
  out_.flush();
}

}  // namespace ftf
