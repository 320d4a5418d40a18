#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "ftf/classifier.hpp"
#include "ftf/session.hpp"

namespace ftf {

struct ConsentedDatapoint {
  std::string record_id;
  FeatureVector features;
  GenderLabel final_label;
  Provenance provenance;
  bool consent = false;
  Timestamp stored_at;
};

/// Only explicit confirmations and corrections are retainable. Silence
/// (AutoConfirmed), InvalidFallback and UserDeclined never are.
bool retainable(Provenance p) noexcept;

/// Opt-in training store. Backed by an append-only JSON-lines file when a path
/// is given (created on first write, so a run without consent leaves no file);
/// purely in memory otherwise.
///
/// Record line: {"record_id","features","label","provenance","stored_at"}.
/// Purge tombstone: {"purge": record_id}.
class ConsentStore {
 public:
  ConsentStore() = default;
  explicit ConsentStore(std::filesystem::path file);

  /// Stores iff consent is true, the session is resolved, the final label is
  /// a GenderLabel and the provenance is retainable. Nothing is written
  /// otherwise. Throws SessionUnresolved.
  bool record(const FeedbackSession& session, const FeatureVector& features, bool consent, Timestamp now);

  /// All consented datapoints, or nothing when any label in `min_label_counts`
  /// has fewer stored points than its minimum.
  std::vector<LabeledFeatures> export_training_batch(const std::map<GenderLabel, std::size_t>& min_label_counts) const;

  /// Removes every datapoint for `record_id`; false when none was stored.
  bool purge(const std::string& record_id);

  /// Rewrites the backing file without tombstones or purged records.
  void compact();

  std::vector<ConsentedDatapoint> datapoints() const;
  std::map<GenderLabel, std::size_t> label_counts() const;
  std::size_t size() const;
  bool contains(const std::string& record_id) const;
  const std::filesystem::path& file() const noexcept { return file_; }

 private:
  void append_line(const std::string& line);

  mutable std::mutex mutex_;
  std::vector<ConsentedDatapoint> points_;
  std::filesystem::path file_;
};

std::string datapoint_line(const ConsentedDatapoint& point);

}  // namespace ftf
