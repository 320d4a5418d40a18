#include "ftf/update.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

#include "ftf/error.hpp"

namespace ftf {

void UpdatePolicy::validate() const {
  if (evaluation_interval == 0) throw Error(ErrorKind::InvalidPolicy, "evaluation interval must be positive");
  if (!(per_class_threshold > 0.0 && per_class_threshold <= 1.0)) {
    throw Error(ErrorKind::InvalidPolicy, "theta must lie in (0, 1]");
  }
}

UpdatePolicy UpdatePolicy::from_config(const Config& cfg) {
  UpdatePolicy p;
  const auto interval = cfg.get_int("interval", static_cast<long long>(p.evaluation_interval));
  const auto min_new = cfg.get_int("min_new_datapoints", static_cast<long long>(p.min_new_datapoints));
  if (interval <= 0 || min_new < 0) throw Error(ErrorKind::InvalidPolicy, "interval and minimums must be positive");
  p.evaluation_interval = static_cast<std::size_t>(interval);
  p.min_new_datapoints = static_cast<std::size_t>(min_new);
  p.per_class_threshold = cfg.get_double("theta", p.per_class_threshold);
  p.validate();
  return p;
}

CycleResult evaluate_cycle(const UpdatePolicy& policy, const ConsentStore& store, const ModelArtifact& base,
                           const ModelArtifact& current, const Holdout& holdout, const LabelSet& set,
                           std::size_t cycle_index) {
  policy.validate();
  if (holdout.records.empty()) throw Error(ErrorKind::HoldoutMissing, "holdout is empty");
  if (holdout.label_set_version != set.version()) {
    throw Error(ErrorKind::HoldoutMissing, "no holdout for label set version " + std::to_string(set.version()));
  }

  CycleResult result;
  auto& decision = result.decision;
  decision.cycle_index = cycle_index;
  decision.candidate_model_version = current.model_version + 1;

  std::map<GenderLabel, std::size_t> minimums;
  for (const auto& label : set.labels()) {
    if (!base.covers(label)) minimums.emplace(label, policy.min_new_datapoints);
  }
  const auto batch = store.export_training_batch(minimums);
  const bool gate_met = minimums.empty() ? batch.size() >= std::max<std::size_t>(policy.min_new_datapoints, 1)
                                         : !batch.empty();
  if (!gate_met) {
    decision.reason = "export gate unmet";
    return result;
  }

  auto candidate = std::make_shared<ModelArtifact>(merge_batch<double>(base, batch, set, decision.candidate_model_version));
  for (const auto& [label, centroid] : candidate->centroids) {
    if (!set.contains(label)) continue;
    bool seen = false;
    for (const auto& r : holdout.records) {
      if (r.truth && *r.truth == LabelOrSentinel{label}) {
        seen = true;
        break;
      }
    }
    if (!seen) throw Error(ErrorKind::HoldoutMissing, "holdout has no record for " + label.name());
  }

  const auto report = evaluate<double>(*candidate, holdout.records, set);
  decision.applied = true;
  std::string failing;
  for (const auto& [label, tally] : report.by_label) {
    const double acc = tally.rate();
    decision.per_class_accuracy[label] = acc;
    if (acc < policy.per_class_threshold) {
      decision.applied = false;
      if (!failing.empty()) failing += "; ";
      failing += label + " " + format_double(acc);
    }
  }
  decision.reason = decision.applied ? "applied" : "below threshold " + format_double(policy.per_class_threshold) +
                                                       ": " + failing;
  result.candidate = std::move(candidate);
  return result;
}

std::shared_ptr<const ModelArtifact> ModelRegistry::current() const {
  std::lock_guard lock(mutex_);
  return model_;
}

std::shared_ptr<const ModelArtifact> ModelRegistry::require() const {
  auto m = current();
  if (!m) throw Error(ErrorKind::ModelUnavailable, "no model registered");
  return m;
}

void ModelRegistry::publish(std::shared_ptr<const ModelArtifact> model) {
  std::lock_guard lock(mutex_);
  model_ = std::move(model);
}

UnknownLabelLog::UnknownLabelLog(std::filesystem::path file) : file_(std::move(file)) {
  std::ifstream in(file_);
  std::string line;
  while (in && std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    ++counts_[line.substr(tab + 1)];
  }
}

bool UnknownLabelLog::log(std::string_view raw, Timestamp tick) {
  const std::string folded = fold(raw);
  if (folded.empty()) return false;
  std::lock_guard lock(mutex_);
  ++counts_[folded];
  if (!file_.empty()) {
    std::ofstream out(file_, std::ios::app);
    if (!out) throw Error(ErrorKind::Io, "cannot append to " + file_.string());
    out << to_millis(tick) << '\t' << folded << '\n';
  }
  return true;
}

std::map<std::string, std::size_t> UnknownLabelLog::counts() const {
  std::lock_guard lock(mutex_);
  return counts_;
}

UpdateScheduler::UpdateScheduler(UpdatePolicy policy, std::shared_ptr<const ModelArtifact> base,
                                 ModelRegistry& registry, const ConsentStore& store)
    : policy_(policy), base_(std::move(base)), registry_(registry), store_(store) {
  policy_.validate();
  if (!base_) throw Error(ErrorKind::ModelUnavailable, "scheduler needs a base model");
}

bool UpdateScheduler::note_resolution() {
  std::lock_guard lock(mutex_);
  ++resolutions_;
  return resolutions_ % policy_.evaluation_interval == 0;
}

std::size_t UpdateScheduler::resolutions() const {
  std::lock_guard lock(mutex_);
  return resolutions_;
}

UpdateDecision UpdateScheduler::run_cycle(const Holdout& holdout, const LabelSet& set) {
  const auto current = registry_.require();
  std::size_t index = 0;
  {
    std::lock_guard lock(mutex_);
    index = history_.size() + 1;
  }
  auto result = evaluate_cycle(policy_, store_, *base_, *current, holdout, set, index);
  if (result.decision.applied) registry_.publish(std::move(result.candidate));
  std::lock_guard lock(mutex_);
  history_.push_back(result.decision);
  return result.decision;
}

std::vector<UpdateDecision> UpdateScheduler::history() const {
  std::lock_guard lock(mutex_);
  return history_;
}

void write_decisions_csv(std::ostream& out, const std::vector<UpdateDecision>& decisions) {
  out << "cycle,candidate_version,label,accuracy,applied,reason\n";
  auto quoted = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  for (const auto& d : decisions) {
    const std::string tail = std::string(d.applied ? "true" : "false") + ',' + quoted(d.reason) + '\n';
    if (d.per_class_accuracy.empty()) {
      out << d.cycle_index << ',' << d.candidate_model_version << ",,," << tail;
    }
    for (const auto& [label, acc] : d.per_class_accuracy) {
      out << d.cycle_index << ',' << d.candidate_model_version << ',' << label << ',' << format_double(acc) << ','
          << tail;
    }
  }
}

}  // namespace ftf
