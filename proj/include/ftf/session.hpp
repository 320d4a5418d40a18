#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ftf/classifier.hpp"
#include "ftf/labels.hpp"
#include "ftf/time.hpp"

namespace ftf {

inline constexpr Duration kDefaultT1{5000};

enum class Provenance { AutoConfirmed, UserConfirmed, UserCorrected, UserDeclined, InvalidFallback };

std::string_view to_string(Provenance p) noexcept;
Provenance parse_provenance(std::string_view text);

struct FinalLabel {
  LabelOrSentinel label;
  Provenance provenance;
  Timestamp resolved_at;

  friend bool operator==(const FinalLabel&, const FinalLabel&) = default;
};

enum class SessionState { Awaiting, Resolved };

struct FeedbackSession {
  std::string session_id;
  std::string record_id;
  Prediction predicted;
  std::shared_ptr<const LabelSet> label_set;
  Timestamp classified_at;  // when the pipeline started on this record
  Timestamp opened_at;
  Timestamp deadline;  // opened_at + t1
  Duration t1;
  SessionState state = SessionState::Awaiting;
  std::optional<FinalLabel> resolution;
  // Text of the timely feedback that resolved the session, if any.
  std::optional<std::string> raw_feedback;

  int label_set_version() const { return label_set->version(); }
};

/// resolved_at - classified_at. Throws Unresolved.
Duration resolution_latency(const FeedbackSession& session);

/// Outcome of a feedback submission. `late` is set when the session had
/// already resolved (by timeout or an earlier submission); `final` is then the
/// standing resolution and the submitted text was discarded.
struct SubmitOutcome {
  FinalLabel final;
  bool late = false;
};

/// Owns the live sessions and resolves each exactly once. All operations take
/// the caller's notion of `now`; the manager never reads a clock.
///
/// Resolution table while Awaiting and now < deadline:
///   blank                 -> UserConfirmed(predicted)
///   decline token         -> UserDeclined(sentinel)
///   valid, == predicted   -> UserConfirmed(predicted)
///   valid, != predicted   -> UserCorrected(label)
///   anything else         -> InvalidFallback(predicted)
/// Once now >= deadline the session auto-confirms and feedback is ignored.
class SessionManager {
 public:
  using Listener = std::function<void(const FeedbackSession&)>;

  explicit SessionManager(std::uint64_t id_seed = std::random_device{}());

  /// Called once per resolution, under the manager's lock. Must not call back
  /// into the manager.
  void set_listener(Listener listener);

  FeedbackSession open_session(Prediction predicted, std::string record_id, Duration t1,
                               std::shared_ptr<const LabelSet> label_set, Timestamp now,
                               std::optional<Timestamp> classified_at = std::nullopt);

  FinalLabel submit_feedback(const std::string& session_id, std::string_view raw, Timestamp now);
  SubmitOutcome submit(const std::string& session_id, std::string_view raw, Timestamp now);

  /// Auto-confirms an Awaiting session whose deadline has passed. Returns the
  /// resolution made by this call; nullopt when nothing changed.
  std::optional<FinalLabel> expire(const std::string& session_id, Timestamp now);

  /// Expires every due session; returns how many this call resolved.
  std::size_t sweep(Timestamp now);

  FeedbackSession get(const std::string& session_id) const;
  bool contains(const std::string& session_id) const;
  Duration resolution_latency(const std::string& session_id) const;

  std::size_t size() const;
  std::size_t awaiting() const;
  /// Drops resolved sessions resolved strictly before `cutoff`.
  std::size_t evict_resolved_before(Timestamp cutoff);

 private:
  FeedbackSession& find_locked(const std::string& session_id);
  const FinalLabel& resolve_locked(FeedbackSession& s, FinalLabel final);

  mutable std::mutex mutex_;
  std::map<std::string, FeedbackSession> sessions_;
  std::mt19937_64 id_rng_;
  std::uint64_t counter_ = 0;
  Listener listener_;
};

/// JSON-lines audit of resolutions: session_id, record_id, predicted, final,
/// provenance, t1 (seconds), opened_at, resolved_at (epoch milliseconds).
std::string audit_line(const FeedbackSession& session);

struct AuditEntry {
  std::string session_id;
  std::string record_id;
  std::string predicted;
  std::string final_label;
  Provenance provenance;
  double t1_seconds;
  std::int64_t opened_at;
  std::int64_t resolved_at;
};
AuditEntry parse_audit_line(std::string_view line);
std::vector<AuditEntry> read_audit_log(const std::filesystem::path& file);

class AuditLog {
 public:
  explicit AuditLog(std::filesystem::path file);
  void append(const FeedbackSession& session);

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

}  // namespace ftf
