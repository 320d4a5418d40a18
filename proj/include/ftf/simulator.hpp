#pragma once

// Synthetic populations and feedback behaviour for exercising the full loop
// at desk scale. Group feature clouds are isotropic Gaussians placed against
// the decision boundary of a base model trained on a synthetic binary corpus,
// so each group's base-model true positive rate hits a configured target.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ftf/classifier.hpp"
#include "ftf/session.hpp"
#include "ftf/update.hpp"
#include "ftf/utility.hpp"

namespace ftf {

/// Portable draws on top of mt19937_64 (the standard distributions are
/// implementation-defined, which would make seeded runs platform-dependent).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();  // [0, 1)
  double normal();   // standard normal, Box-Muller
  bool bernoulli(double p) { return uniform() < p; }
  std::size_t categorical(std::span<const double> weights);
  std::size_t index(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

/// Standard normal CDF.
double normal_cdf(double x);

struct PopulationGroup {
  std::string tag;
  double weight = 0.0;
  LabelOrSentinel truth = GenderLabel("woman");
  // Target base-model TPR. Only meaningful for man/woman truths; other groups
  // cannot be labelled correctly by a binary model.
  double base_rate = 1.0;
  double spread = 1.0;
  // Placement of groups the base model has no class for: `offset` along raw
  // dimension `axis`, measured from the boundary point between the classes.
  Eigen::Index axis = 1;
  double offset = 6.0;
  // Added to the weight once per epoch, before renormalizing.
  double weight_drift = 0.0;
};

struct PopulationSpec {
  std::vector<PopulationGroup> groups;
  std::uint64_t seed = 1;
  Eigen::Index dimension = kDefaultDimension;
  double base_separation = 4.0;  // distance between male and female cluster means
  std::size_t base_training_size = 20000;

  /// Throws InvalidSpec.
  void validate() const;
};

PopulationSpec parse_population_spec(std::istream& json_in);
PopulationSpec load_population_spec(const std::filesystem::path& file);
std::string population_spec_json(const PopulationSpec& spec);

/// Four groups with the averaged TPRs 98.3 / 97.6 / 87.3 / 70.5 %.
PopulationSpec four_group_spec(std::uint64_t seed = 2024);
/// Two groups with error rates 34.7 % and 0.8 %.
PopulationSpec error_gap_spec(std::uint64_t seed = 2018);

/// A calibrated population: base corpus, base model and group centres.
class SyntheticWorld {
 public:
  explicit SyntheticWorld(PopulationSpec spec);

  const PopulationSpec& spec() const noexcept { return spec_; }
  std::shared_ptr<const ModelArtifact> base_model() const noexcept { return base_model_; }
  const Vector<double>& center(std::size_t group) const { return centers_.at(group); }

  /// Analytic probability that the base model assigns the group's truth.
  double expected_rate(std::size_t group) const;

  FaceRecord draw(std::size_t group, Rng& rng, std::string id) const;
  std::vector<FaceRecord> sample(std::size_t n, Rng& rng, std::span<const double> weights,
                                 const std::string& id_prefix = "r") const;
  std::vector<double> weights_at(std::size_t epoch) const;

 private:
  // Affine decision function g(x) = a.x + b0 of the two-centroid base model;
  // g >= 0 means "man".
  Vector<double> normal_;
  double offset0_ = 0.0;
  Vector<double> boundary_point_;

  PopulationSpec spec_;
  std::shared_ptr<const ModelArtifact> base_model_;
  std::vector<Vector<double>> centers_;
};

/// n records drawn by mixture sampling with the spec's seed.
std::vector<FaceRecord> generate_stream(const PopulationSpec& spec, std::size_t n);

struct FeedbackBehavior {
  double participation = 0.0;     // a misgendered user corrects before t1
  double confirm_rate = 0.0;      // a correctly labelled user confirms explicitly
  double consent_rate = 0.0;      // a user opts in to retention
  double adversarial_rate = 0.0;  // a user submits a deliberately wrong label

  void validate() const;
};

FeedbackBehavior parse_feedback_behavior(std::istream& json_in);
FeedbackBehavior load_feedback_behavior(const std::filesystem::path& file);

struct ScenarioOptions {
  Duration t1 = kDefaultT1;
  Duration classification_time{40};
  std::size_t holdout_per_group = 500;
  double utility_constant = 1.0;
  double epsilon = kIncompletenessFloor;
  std::filesystem::path store_file;  // empty keeps the consent store in memory
};

struct EpochStats {
  std::size_t sessions = 0;
  std::size_t counted = 0;  // sessions whose truth is a GenderLabel
  std::size_t classifier_correct = 0;
  std::size_t final_correct = 0;
  std::size_t stored = 0;
  std::map<Provenance, std::size_t> provenance;

  double classifier_accuracy() const noexcept;
  double final_accuracy() const noexcept;
  EpochStats& operator+=(const EpochStats& other);
};

struct ScenarioReport {
  EvaluationReport initial;              // base model on the holdout
  std::vector<EvaluationReport> epochs;  // registered model after each cycle
  std::vector<EpochStats> stats;
  std::vector<UtilitySnapshot> utility;
  std::vector<UpdateDecision> decisions;
  std::vector<FeedbackSession> sessions;  // resolution order
  std::map<std::string, std::size_t> unknown_labels;
  std::shared_ptr<const ModelArtifact> base_model;
  std::shared_ptr<const ModelArtifact> final_model;
  std::size_t stored_datapoints = 0;

  EpochStats totals() const;
};

/// Drives classify -> open_session -> simulated feedback -> consent store ->
/// update cycle, one evaluation interval per epoch. Deterministic in the
/// spec's seed.
ScenarioReport run_scenario(const PopulationSpec& spec, const FeedbackBehavior& behavior, const UpdatePolicy& policy,
                            std::size_t epochs, const ScenarioOptions& options = {});

/// tpr_by_group.csv, tpr_by_epoch.csv, utility.csv, sessions.jsonl,
/// decisions.csv, model.txt, base_model.txt, labels.tsv, unknown_label_counts.tsv,
/// summary.json.
void write_scenario_outputs(const ScenarioReport& report, const std::filesystem::path& dir);

}  // namespace ftf
