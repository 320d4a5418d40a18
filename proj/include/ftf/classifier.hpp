#pragma once

// Four-stage pipeline over abstract face records: detect, preprocess,
// extract features, classify. The numeric core is templated on the scalar
// type; the runtime types used by sessions, stores and the service are the
// `double` aliases at the bottom of this header.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ftf/error.hpp"
#include "ftf/labels.hpp"

namespace ftf {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline constexpr Eigen::Index kDefaultDimension = 16;

template <typename Scalar>
bool all_finite(const Vector<Scalar>& v) {
  return v.array().isFinite().all();
}

template <typename Scalar>
struct BasicFaceRecord {
  std::string id;
  Vector<Scalar> raw;
  bool region_present = true;
  // Simulation only; absent in production payloads.
  std::optional<LabelOrSentinel> truth;
  std::optional<std::string> group;
};

/// Standardized feature values. Entries are always finite.
template <typename Scalar>
class BasicFeatureVector {
 public:
  BasicFeatureVector() = default;
  explicit BasicFeatureVector(Vector<Scalar> values) : values_(std::move(values)) {
    if (!all_finite(values_)) throw Error(ErrorKind::InvalidRecord, "feature vector has non-finite entries");
  }

  const Vector<Scalar>& values() const noexcept { return values_; }
  Eigen::Index size() const noexcept { return values_.size(); }

  friend bool operator==(const BasicFeatureVector& a, const BasicFeatureVector& b) {
    return a.values_.size() == b.values_.size() && a.values_ == b.values_;
  }

 private:
  Vector<Scalar> values_;
};

template <typename Scalar>
struct TrainingStats {
  Vector<Scalar> mean;
  Vector<Scalar> scale;  // strictly positive

  Eigen::Index dimension() const noexcept { return mean.size(); }
};

/// Indices of the dimensions kept by feature extraction. Empty keeps all.
struct FeatureMask {
  std::vector<Eigen::Index> dims;

  bool identity() const noexcept { return dims.empty(); }
  friend bool operator==(const FeatureMask&, const FeatureMask&) = default;
};

/// Labels carried by the binary training corpus.
enum class SourceLabel { Male, Female };

GenderLabel relabel(SourceLabel source);
SourceLabel parse_source_label(std::string_view text);

template <typename Scalar>
struct BasicLabeledRecord {
  BasicFaceRecord<Scalar> record;
  SourceLabel source;
};

template <typename Scalar>
struct BasicLabeledFeatures {
  BasicFeatureVector<Scalar> features;
  GenderLabel label;
};

struct Prediction {
  GenderLabel label;
  // One entry per member of the LabelSet used for classification.
  std::map<GenderLabel, double> scores;

  double score(const GenderLabel& l) const {
    const auto it = scores.find(l);
    return it == scores.end() ? 0.0 : it->second;
  }
};

template <typename Scalar>
struct BasicModelArtifact {
  int model_version = 1;
  std::map<GenderLabel, Vector<Scalar>> centroids;
  TrainingStats<Scalar> stats;
  std::map<GenderLabel, std::size_t> trained_on;
  FeatureMask mask;

  Eigen::Index input_dimension() const noexcept { return stats.dimension(); }
  Eigen::Index feature_dimension() const noexcept {
    return mask.identity() ? stats.dimension() : static_cast<Eigen::Index>(mask.dims.size());
  }
  bool covers(const GenderLabel& l) const { return centroids.count(l) != 0; }
};

// ---------------------------------------------------------------------------
// Pipeline stages

template <typename Scalar>
const BasicFaceRecord<Scalar>& detect(const BasicFaceRecord<Scalar>& rec) {
  if (!rec.region_present) throw Error(ErrorKind::NoFaceDetected, "record " + rec.id);
  return rec;
}

template <typename Scalar>
BasicFeatureVector<Scalar> preprocess(const BasicFaceRecord<Scalar>& rec, const TrainingStats<Scalar>& stats) {
  if (rec.raw.size() != stats.dimension()) {
    throw Error(ErrorKind::DimensionMismatch, "record " + rec.id + " has " + std::to_string(rec.raw.size()) +
                                                  " entries, model expects " + std::to_string(stats.dimension()));
  }
  if (!all_finite(rec.raw)) throw Error(ErrorKind::InvalidRecord, "record " + rec.id + " has non-finite entries");
  return BasicFeatureVector<Scalar>((rec.raw.array() - stats.mean.array()) / stats.scale.array());
}

template <typename Scalar>
BasicFeatureVector<Scalar> extract_features(const BasicFeatureVector<Scalar>& v, const FeatureMask& mask = {}) {
  if (mask.identity()) return v;
  Vector<Scalar> out(static_cast<Eigen::Index>(mask.dims.size()));
  for (std::size_t i = 0; i < mask.dims.size(); ++i) {
    const auto d = mask.dims[i];
    if (d < 0 || d >= v.size()) throw Error(ErrorKind::DimensionMismatch, "mask index out of range");
    out[static_cast<Eigen::Index>(i)] = v.values()[d];
  }
  return BasicFeatureVector<Scalar>(std::move(out));
}

/// detect -> preprocess -> extract, using the model's stats and mask.
template <typename Scalar>
BasicFeatureVector<Scalar> pipeline_features(const BasicFaceRecord<Scalar>& rec,
                                             const BasicModelArtifact<Scalar>& model) {
  return extract_features(preprocess(detect(rec), model.stats), model.mask);
}

// ---------------------------------------------------------------------------
// Training

/// Per-dimension mean and population standard deviation; zero spread becomes 1.
template <typename Scalar>
TrainingStats<Scalar> compute_stats(std::span<const Vector<Scalar>> rows) {
  if (rows.empty()) throw Error(ErrorKind::EmptyTrainingSet, "no rows");
  const Eigen::Index d = rows.front().size();
  Vector<Scalar> sum = Vector<Scalar>::Zero(d);
  for (const auto& r : rows) sum += r;
  const Scalar n = static_cast<Scalar>(rows.size());
  Vector<Scalar> mean = sum / n;
  Vector<Scalar> sq = Vector<Scalar>::Zero(d);
  for (const auto& r : rows) sq += (r - mean).array().square().matrix();
  Vector<Scalar> scale = (sq / n).array().sqrt().matrix();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(scale[i] > Scalar(0))) scale[i] = Scalar(1);
  }
  return {std::move(mean), std::move(scale)};
}

/// Trains the nearest-centroid baseline on male/female data, relabeled to
/// man/woman. Labels without data get no centroid and can never win.
template <typename Scalar>
BasicModelArtifact<Scalar> train(std::span<const BasicLabeledRecord<Scalar>> data, const LabelSet& set,
                                 FeatureMask mask = {}) {
  if (data.empty()) throw Error(ErrorKind::EmptyTrainingSet, "training data is empty");
  const Eigen::Index d = data.front().record.raw.size();
  if (d == 0) throw Error(ErrorKind::DimensionMismatch, "zero-dimensional records");

  std::vector<Vector<Scalar>> rows;
  rows.reserve(data.size());
  for (const auto& item : data) {
    detect(item.record);
    if (item.record.raw.size() != d) throw Error(ErrorKind::DimensionMismatch, "record " + item.record.id);
    if (!all_finite(item.record.raw)) throw Error(ErrorKind::InvalidRecord, "record " + item.record.id);
    rows.push_back(item.record.raw);
  }

  BasicModelArtifact<Scalar> model;
  model.stats = compute_stats<Scalar>(rows);
  model.mask = std::move(mask);

  std::map<GenderLabel, Vector<Scalar>> sums;
  for (const auto& item : data) {
    GenderLabel label = relabel(item.source);
    if (!set.contains(label)) throw Error(ErrorKind::InvalidLabel, label.name() + " not in label set");
    auto f = pipeline_features(item.record, model);
    auto [it, fresh] = sums.try_emplace(label, Vector<Scalar>::Zero(f.size()));
    it->second += f.values();
    ++model.trained_on[label];
  }
  for (auto& [label, sum] : sums) {
    model.centroids.emplace(label, sum / static_cast<Scalar>(model.trained_on.at(label)));
  }
  return model;
}

/// Candidate model for a controlled update: the base model's centroids merged
/// with a batch of standardized feedback datapoints. Stats and mask stay fixed
/// so every stored feature vector lives in the same space.
template <typename Scalar>
BasicModelArtifact<Scalar> merge_batch(const BasicModelArtifact<Scalar>& base,
                                       std::span<const BasicLabeledFeatures<Scalar>> batch, const LabelSet& set,
                                       int new_version) {
  BasicModelArtifact<Scalar> out = base;
  out.model_version = new_version;
  std::map<GenderLabel, Vector<Scalar>> sums;
  for (const auto& [label, centroid] : base.centroids) {
    sums.emplace(label, centroid * static_cast<Scalar>(base.trained_on.at(label)));
  }
  for (const auto& item : batch) {
    if (!set.contains(item.label)) throw Error(ErrorKind::InvalidLabel, item.label.name() + " not in label set");
    if (item.features.size() != base.feature_dimension()) {
      throw Error(ErrorKind::DimensionMismatch, "batch feature dimension differs from model");
    }
    auto [it, fresh] = sums.try_emplace(item.label, Vector<Scalar>::Zero(item.features.size()));
    it->second += item.features.values();
    ++out.trained_on[item.label];
  }
  out.centroids.clear();
  for (auto& [label, sum] : sums) {
    out.centroids.emplace(label, sum / static_cast<Scalar>(out.trained_on.at(label)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

/// Softmax over negative Euclidean distances to the centroids of the labels
/// in `set` (temperature 1). Labels without a centroid score exactly 0.
/// Ties in the top score go to the lexicographically smaller folded name.
template <typename Scalar>
Prediction score_features(const BasicFeatureVector<Scalar>& f, const BasicModelArtifact<Scalar>& model,
                          const LabelSet& set) {
  if (f.size() != model.feature_dimension()) {
    throw Error(ErrorKind::DimensionMismatch, "feature vector does not match model");
  }
  std::vector<std::pair<const GenderLabel*, double>> logits;
  for (const auto& label : set.labels()) {
    const auto it = model.centroids.find(label);
    if (it == model.centroids.end()) continue;
    logits.emplace_back(&label, -static_cast<double>((f.values() - it->second).norm()));
  }
  if (logits.empty()) throw Error(ErrorKind::ModelUnavailable, "model has no centroid for any label in the set");

  double top = logits.front().second;
  for (const auto& [l, z] : logits) top = std::max(top, z);
  double total = 0.0;
  for (auto& [l, z] : logits) {
    z = std::exp(z - top);
    total += z;
  }

  std::map<GenderLabel, double> scores;
  for (const auto& label : set.labels()) scores.emplace(label, 0.0);
  const GenderLabel* best = nullptr;
  double best_score = -1.0;
  for (const auto& [l, z] : logits) {
    const double s = z / total;
    scores[*l] = s;
    if (s > best_score || (s == best_score && l->name() < best->name())) {
      best = l;
      best_score = s;
    }
  }
  return Prediction{*best, std::move(scores)};
}

template <typename Scalar>
Prediction classify(const BasicFaceRecord<Scalar>& rec, const BasicModelArtifact<Scalar>& model,
                    const LabelSet& set) {
  return score_features(pipeline_features(rec, model), model, set);
}

// ---------------------------------------------------------------------------
// Evaluation

struct Tally {
  std::size_t total = 0;
  std::size_t correct = 0;

  double rate() const noexcept { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
  friend bool operator==(const Tally&, const Tally&) = default;
};

struct EvaluationReport {
  std::map<std::string, Tally> by_group;
  std::map<std::string, Tally> by_label;  // keyed by truth label
  std::map<std::pair<std::string, std::string>, std::size_t> confusion;  // (truth, predicted)
  Tally overall;
  std::size_t excluded = 0;  // records whose truth is the unclassifiable sentinel

  double accuracy() const noexcept { return overall.rate(); }
  /// 0 for groups or labels that never occurred.
  double tpr_group(const std::string& group) const;
  double tpr_label(const std::string& label) const;

  friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

template <typename Scalar, typename Predict>
EvaluationReport evaluate_with(std::span<const BasicFaceRecord<Scalar>> eval_set, Predict&& predict) {
  if (eval_set.empty()) throw Error(ErrorKind::EmptyEvaluationSet, "evaluation set is empty");
  EvaluationReport report;
  for (const auto& rec : eval_set) {
    if (!rec.truth || !rec.group) {
      throw Error(ErrorKind::InvalidRecord, "evaluation record " + rec.id + " lacks truth or group");
    }
    const auto* truth = std::get_if<GenderLabel>(&*rec.truth);
    if (!truth) {
      ++report.excluded;
      continue;
    }
    const Prediction p = predict(rec);
    const bool hit = p.label == *truth;
    for (Tally* t : {&report.by_group[*rec.group], &report.by_label[truth->name()], &report.overall}) {
      ++t->total;
      if (hit) ++t->correct;
    }
    ++report.confusion[{truth->name(), p.label.name()}];
  }
  if (report.overall.total == 0) {
    throw Error(ErrorKind::EmptyEvaluationSet, "every evaluation record is unclassifiable");
  }
  return report;
}

template <typename Scalar>
EvaluationReport evaluate(const BasicModelArtifact<Scalar>& model, std::span<const BasicFaceRecord<Scalar>> eval_set,
                          const LabelSet& set) {
  return evaluate_with<Scalar>(eval_set, [&](const BasicFaceRecord<Scalar>& r) { return classify(r, model, set); });
}

// ---------------------------------------------------------------------------
// Runtime aliases

using FaceRecord = BasicFaceRecord<double>;
using FeatureVector = BasicFeatureVector<double>;
using ModelArtifact = BasicModelArtifact<double>;
using LabeledRecord = BasicLabeledRecord<double>;
using LabeledFeatures = BasicLabeledFeatures<double>;

/// Pluggable backend. The nearest-centroid baseline is the only one shipped.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual FeatureVector features(const FaceRecord& rec) const = 0;
  virtual Prediction classify(const FaceRecord& rec, const LabelSet& set) const = 0;
};

class NearestCentroidClassifier final : public Classifier {
 public:
  explicit NearestCentroidClassifier(std::shared_ptr<const ModelArtifact> model);

  FeatureVector features(const FaceRecord& rec) const override;
  Prediction classify(const FaceRecord& rec, const LabelSet& set) const override;
  const ModelArtifact& model() const noexcept { return *model_; }

 private:
  std::shared_ptr<const ModelArtifact> model_;
};

EvaluationReport evaluate(const Classifier& classifier, std::span<const FaceRecord> eval_set, const LabelSet& set);

// ---------------------------------------------------------------------------
// Text formats

/// Header `ftf-model<TAB>version=V<TAB>d=D`, then `#mean`, `#scale`,
/// optional `#mask` and `#count` lines, then one `label<TAB>v1,v2,...` line
/// per centroid. Values use shortest round-trip formatting.
void write_model(std::ostream& out, const ModelArtifact& model);
ModelArtifact read_model(std::istream& in);
void save_model(const std::filesystem::path& file, const ModelArtifact& model);
ModelArtifact load_model(const std::filesystem::path& file);

/// CSV `group,total,correct,tpr`.
void write_report_csv(std::ostream& out, const EvaluationReport& report);

struct GroupRate {
  std::string group;
  std::size_t total = 0;
  std::size_t correct = 0;
  double tpr = 0.0;
};
std::vector<GroupRate> read_report_csv(std::istream& in);

std::string format_double(double v);
std::string join_vector(const Vector<double>& v);
Vector<double> parse_vector(std::string_view csv);

}  // namespace ftf
