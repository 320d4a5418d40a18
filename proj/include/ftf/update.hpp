#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "ftf/classifier.hpp"
#include "ftf/config.hpp"
#include "ftf/consent.hpp"
#include "ftf/time.hpp"

namespace ftf {

struct UpdatePolicy {
  std::size_t evaluation_interval = 1000;  // resolutions per cycle
  double per_class_threshold = 0.8;        // theta
  std::size_t min_new_datapoints = 50;     // per label the base model lacks

  void validate() const;
  /// Reads `interval`, `theta` and `min_new_datapoints`.
  static UpdatePolicy from_config(const Config& cfg);
};

struct UpdateDecision {
  std::size_t cycle_index = 0;
  int candidate_model_version = 0;
  std::map<std::string, double> per_class_accuracy;
  bool applied = false;
  std::string reason;
};

/// Evaluation records pinned to the label set version they were built for.
struct Holdout {
  int label_set_version = 1;
  std::vector<FaceRecord> records;
};

struct CycleResult {
  UpdateDecision decision;
  std::shared_ptr<const ModelArtifact> candidate;  // null when the export gate failed
};

/// One controlled-update evaluation. The candidate is the base model merged
/// with every consented datapoint; it is accepted only if the export gate is
/// met and every class present in the holdout reaches theta.
///
/// Export gate: each label in `set` the base model has no centroid for needs
/// `min_new_datapoints` consented points; when the base already covers every
/// label, the batch as a whole needs that many.
CycleResult evaluate_cycle(const UpdatePolicy& policy, const ConsentStore& store, const ModelArtifact& base,
                           const ModelArtifact& current, const Holdout& holdout, const LabelSet& set,
                           std::size_t cycle_index);

/// Single published model; swaps are atomic with respect to readers.
class ModelRegistry {
 public:
  ModelRegistry() = default;
  explicit ModelRegistry(std::shared_ptr<const ModelArtifact> model) : model_(std::move(model)) {}

  std::shared_ptr<const ModelArtifact> current() const;
  /// Throws ModelUnavailable when nothing is registered.
  std::shared_ptr<const ModelArtifact> require() const;
  void publish(std::shared_ptr<const ModelArtifact> model);

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const ModelArtifact> model_;
};

/// Frequencies of feedback text that named no label in the active set. Keys
/// are folded. With a backing file, each event appends `tick<TAB>label`.
class UnknownLabelLog {
 public:
  UnknownLabelLog() = default;
  explicit UnknownLabelLog(std::filesystem::path file);

  /// Blank text is ignored. Returns whether anything was logged.
  bool log(std::string_view raw, Timestamp tick);
  std::map<std::string, std::size_t> counts() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::size_t> counts_;
  std::filesystem::path file_;
};

/// Counts resolutions and runs cycles when an interval completes. Evaluation
/// happens on the caller's thread; only the final publish touches the
/// registry.
class UpdateScheduler {
 public:
  UpdateScheduler(UpdatePolicy policy, std::shared_ptr<const ModelArtifact> base, ModelRegistry& registry,
                  const ConsentStore& store);

  /// Returns true when this resolution completes an interval.
  bool note_resolution();
  std::size_t resolutions() const;

  UpdateDecision run_cycle(const Holdout& holdout, const LabelSet& set);

  const UpdatePolicy& policy() const noexcept { return policy_; }
  std::vector<UpdateDecision> history() const;
  const ModelArtifact& base() const noexcept { return *base_; }

 private:
  UpdatePolicy policy_;
  std::shared_ptr<const ModelArtifact> base_;
  ModelRegistry& registry_;
  const ConsentStore& store_;
  mutable std::mutex mutex_;
  std::size_t resolutions_ = 0;
  std::vector<UpdateDecision> history_;
};

/// CSV `cycle,candidate_version,label,accuracy,applied,reason`, one row per
/// evaluated class (a single row with an empty label when none was evaluated).
void write_decisions_csv(std::ostream& out, const std::vector<UpdateDecision>& decisions);

}  // namespace ftf
