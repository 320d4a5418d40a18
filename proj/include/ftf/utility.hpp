#pragma once

#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "ftf/classifier.hpp"
#include "ftf/labels.hpp"
#include "ftf/session.hpp"

namespace ftf {

inline constexpr double kIncompletenessFloor = 0.01;

/// One point of the utility time series; utility == c * accuracy / incompleteness.
struct UtilitySnapshot {
  std::int64_t t = 0;
  double accuracy = 0.0;
  double incompleteness = kIncompletenessFloor;
  double utility = 0.0;

  friend bool operator==(const UtilitySnapshot&, const UtilitySnapshot&) = default;
};

/// Overall correct/total. Throws EmptyReport.
double accuracy_at(const EvaluationReport& report);

/// What a user meant a session's label to be.
struct Observation {
  Provenance provenance;
  std::string feedback;  // raw feedback text; empty for silence
};

Observation observe(const FeedbackSession& session);

/// True when the observation points outside `set`: a declined session, or an
/// invalid-fallback whose feedback text is still not a member.
bool out_of_vocabulary(const Observation& obs, const LabelSet& set);

/// max(epsilon, out-of-vocabulary fraction of the window). Throws EmptyWindow.
double incompleteness_at(std::span<const Observation> window, const LabelSet& set,
                         double epsilon = kIncompletenessFloor);

double utility_at(double accuracy, double incompleteness, double c = 1.0);

/// Append-only series of snapshots. Readers get copies.
class UtilityTracker {
 public:
  explicit UtilityTracker(double c = 1.0, double epsilon = kIncompletenessFloor);

  UtilitySnapshot record(std::int64_t t, double accuracy, double incompleteness);
  std::vector<UtilitySnapshot> series() const;
  void load(std::vector<UtilitySnapshot> series);

  double constant() const noexcept { return c_; }
  double epsilon() const noexcept { return epsilon_; }

 private:
  double c_;
  double epsilon_;
  mutable std::mutex mutex_;
  std::vector<UtilitySnapshot> series_;
};

/// CSV `t,accuracy,incompleteness,utility`.
void write_utility_csv(std::ostream& out, std::span<const UtilitySnapshot> series);
std::vector<UtilitySnapshot> read_utility_csv(std::istream& in);

}  // namespace ftf
