#include "ftf/simulator.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

#include "ftf/consent.hpp"
#include "ftf/error.hpp"

namespace ftf {

// ---------------------------------------------------------------------------
// Random draws

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double x = uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (x < weights[i]) return i;
    x -= weights[i];
  }
  // Rounding can leave x just past the last positive weight.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return 0;
}

std::size_t Rng::index(std::size_t n) {
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// ---------------------------------------------------------------------------
// Population specs

void PopulationSpec::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorKind::InvalidSpec, why); };
  if (groups.empty()) fail("population has no groups");
  if (dimension < 2) fail("dimension must be at least 2");
  if (!(base_separation > 0.0) || !std::isfinite(base_separation)) fail("base_separation must be positive");
  if (base_training_size < 2) fail("base_training_size must be at least 2");
  double total = 0.0;
  std::set<std::string> tags;
  for (const auto& g : groups) {
    if (g.tag.empty()) fail("group tag is empty");
    if (!tags.insert(g.tag).second) fail("duplicate group tag " + g.tag);
    if (!(g.weight >= 0.0) || !std::isfinite(g.weight)) fail(g.tag + ": weight must be non-negative");
    if (!(g.base_rate >= 0.0 && g.base_rate <= 1.0)) fail(g.tag + ": base_rate must lie in [0, 1]");
    if (!(g.spread > 0.0) || !std::isfinite(g.spread)) fail(g.tag + ": spread must be positive");
    if (g.axis < 1 || g.axis >= dimension) fail(g.tag + ": axis must lie in [1, dimension)");
    if (!std::isfinite(g.offset) || !std::isfinite(g.weight_drift)) fail(g.tag + ": non-finite placement");
    total += g.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) fail("group weights must sum to 1");
}

PopulationSpec parse_population_spec(std::istream& json_in) {
  using nlohmann::json;
  PopulationSpec spec;
  try {
    const json j = json::parse(json_in);
    spec.seed = j.value("seed", spec.seed);
    spec.dimension = j.value("dimension", spec.dimension);
    spec.base_separation = j.value("base_separation", spec.base_separation);
    spec.base_training_size = j.value("base_training_size", spec.base_training_size);
    for (const auto& g : j.at("groups")) {
      PopulationGroup group;
      group.tag = g.at("tag").get<std::string>();
      group.weight = g.at("weight").get<double>();
      group.truth = parse_label_or_sentinel(g.at("truth").get<std::string>());
      group.base_rate = g.value("base_rate", group.base_rate);
      group.spread = g.value("spread", group.spread);
      group.axis = g.value("axis", group.axis);
      group.offset = g.value("offset", group.offset);
      group.weight_drift = g.value("weight_drift", group.weight_drift);
      spec.groups.push_back(std::move(group));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidSpec, e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::InvalidSpec, e.what());
  }
  spec.validate();
  return spec;
}

PopulationSpec load_population_spec(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + file.string());
  return parse_population_spec(in);
}

std::string population_spec_json(const PopulationSpec& spec) {
  nlohmann::ordered_json j;
  j["seed"] = spec.seed;
  j["dimension"] = spec.dimension;
  j["base_separation"] = spec.base_separation;
  j["base_training_size"] = spec.base_training_size;
  j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : spec.groups) {
    j["groups"].push_back({{"tag", g.tag},
                           {"weight", g.weight},
                           {"truth", to_string(g.truth)},
                           {"base_rate", g.base_rate},
                           {"spread", g.spread},
                           {"axis", g.axis},
                           {"offset", g.offset},
                           {"weight_drift", g.weight_drift}});
  }
  return j.dump(2);
}

PopulationSpec four_group_spec(std::uint64_t seed) {
  PopulationSpec spec;
  spec.seed = seed;
  spec.groups = {
      {"woman", 0.25, GenderLabel("woman"), 0.983},
      {"man", 0.25, GenderLabel("man"), 0.976},
      {"transwoman", 0.25, GenderLabel("woman"), 0.873},
      {"transman", 0.25, GenderLabel("man"), 0.705},
  };
  return spec;
}

PopulationSpec error_gap_spec(std::uint64_t seed) {
  PopulationSpec spec;
  spec.seed = seed;
  spec.groups = {
      {"darker-female", 0.5, GenderLabel("woman"), 1.0 - 0.347},
      {"lighter-male", 0.5, GenderLabel("man"), 1.0 - 0.008},
  };
  return spec;
}

// ---------------------------------------------------------------------------
// Calibrated world

namespace {

std::vector<LabeledRecord> base_corpus(const PopulationSpec& spec, Rng& rng) {
  const Eigen::Index d = spec.dimension;
  std::vector<LabeledRecord> corpus;
  corpus.reserve(spec.base_training_size);
  for (std::size_t i = 0; i < spec.base_training_size; ++i) {
    const bool male = i % 2 == 0;
    Vector<double> raw(d);
    for (Eigen::Index k = 0; k < d; ++k) raw[k] = rng.normal();
    raw[0] += (male ? -0.5 : 0.5) * spec.base_separation;
    FaceRecord rec;
    rec.id = "base-" + std::to_string(i);
    rec.raw = std::move(raw);
    corpus.push_back({std::move(rec), male ? SourceLabel::Male : SourceLabel::Female});
  }
  return corpus;
}

// Signed distance delta from the boundary such that Phi(delta / spread) hits
// the target rate, found by bisection.
double calibrated_distance(double rate, double spread) {
  double lo = -40.0 * spread;
  double hi = 40.0 * spread;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (normal_cdf(mid / spread) < rate) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

bool is_binary_truth(const LabelOrSentinel& truth) {
  return truth == LabelOrSentinel{GenderLabel("man")} || truth == LabelOrSentinel{GenderLabel("woman")};
}

}  // namespace

SyntheticWorld::SyntheticWorld(PopulationSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(derive_seed(spec_.seed, 1));
  const auto corpus = base_corpus(spec_, rng);
  base_model_ = std::make_shared<const ModelArtifact>(train<double>(corpus, LabelSet::initial()));

  const auto& model = *base_model_;
  const Vector<double>& m = model.centroids.at(GenderLabel("man"));
  const Vector<double>& w = model.centroids.at(GenderLabel("woman"));
  const Vector<double>& mu = model.stats.mean;
  const Vector<double>& s = model.stats.scale;

  const Vector<double> diff = ((m - w).array() / s.array()).matrix();
  normal_ = 2.0 * diff;
  offset0_ = -2.0 * mu.dot(diff) + w.squaredNorm() - m.squaredNorm();

  const Vector<double> raw_m = (m.array() * s.array() + mu.array()).matrix();
  const Vector<double> raw_w = (w.array() * s.array() + mu.array()).matrix();
  const Vector<double> mid = 0.5 * (raw_m + raw_w);
  boundary_point_ = mid - ((normal_.dot(mid) + offset0_) / normal_.squaredNorm()) * normal_;
  const Vector<double> unit = normal_.normalized();

  for (const auto& g : spec_.groups) {
    if (is_binary_truth(g.truth)) {
      const double sign = g.truth == LabelOrSentinel{GenderLabel("man")} ? 1.0 : -1.0;
      centers_.push_back(boundary_point_ + sign * calibrated_distance(g.base_rate, g.spread) * unit);
    } else {
      Vector<double> c = boundary_point_;
      c[g.axis] += g.offset;
      centers_.push_back(std::move(c));
    }
  }
}

double SyntheticWorld::expected_rate(std::size_t group) const {
  const auto& g = spec_.groups.at(group);
  if (!is_binary_truth(g.truth)) return 0.0;
  const double p_man = normal_cdf((normal_.dot(centers_.at(group)) + offset0_) / (g.spread * normal_.norm()));
  return g.truth == LabelOrSentinel{GenderLabel("man")} ? p_man : 1.0 - p_man;
}

FaceRecord SyntheticWorld::draw(std::size_t group, Rng& rng, std::string id) const {
  const auto& g = spec_.groups.at(group);
  Vector<double> raw(spec_.dimension);
  for (Eigen::Index k = 0; k < spec_.dimension; ++k) raw[k] = rng.normal();
  FaceRecord rec;
  rec.id = std::move(id);
  rec.raw = centers_[group] + g.spread * raw;
  rec.truth = g.truth;
  rec.group = g.tag;
  return rec;
}

std::vector<FaceRecord> SyntheticWorld::sample(std::size_t n, Rng& rng, std::span<const double> weights,
                                               const std::string& id_prefix) const {
  std::vector<FaceRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw(rng.categorical(weights), rng, id_prefix + std::to_string(i)));
  return out;
}

std::vector<double> SyntheticWorld::weights_at(std::size_t epoch) const {
  std::vector<double> w;
  double total = 0.0;
  for (const auto& g : spec_.groups) {
    w.push_back(std::max(0.0, g.weight + static_cast<double>(epoch) * g.weight_drift));
    total += w.back();
  }
  if (!(total > 0.0)) throw Error(ErrorKind::InvalidSpec, "weights drifted to zero at epoch " + std::to_string(epoch));
  for (double& x : w) x /= total;
  return w;
}

std::vector<FaceRecord> generate_stream(const PopulationSpec& spec, std::size_t n) {
  if (n == 0) throw Error(ErrorKind::InvalidSpec, "stream length must be positive");
  const SyntheticWorld world(spec);
  Rng rng(derive_seed(spec.seed, 2));
  return world.sample(n, rng, world.weights_at(0));
}

// ---------------------------------------------------------------------------
// Behaviour

void FeedbackBehavior::validate() const {
  for (double r : {participation, confirm_rate, consent_rate, adversarial_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorKind::InvalidSpec, "behaviour rates must lie in [0, 1]");
  }
}

FeedbackBehavior parse_feedback_behavior(std::istream& json_in) {
  FeedbackBehavior b;
  try {
    const auto j = nlohmann::json::parse(json_in);
    b.participation = j.value("participation", b.participation);
    b.confirm_rate = j.value("confirm_rate", b.confirm_rate);
    b.consent_rate = j.value("consent_rate", b.consent_rate);
    b.adversarial_rate = j.value("adversarial_rate", b.adversarial_rate);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidSpec, e.what());
  }
  b.validate();
  return b;
}

FeedbackBehavior load_feedback_behavior(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + file.string());
  return parse_feedback_behavior(in);
}

// ---------------------------------------------------------------------------
// Scenario

double EpochStats::classifier_accuracy() const noexcept {
  return counted == 0 ? 0.0 : static_cast<double>(classifier_correct) / static_cast<double>(counted);
}

double EpochStats::final_accuracy() const noexcept {
  return counted == 0 ? 0.0 : static_cast<double>(final_correct) / static_cast<double>(counted);
}

EpochStats& EpochStats::operator+=(const EpochStats& o) {
  sessions += o.sessions;
  counted += o.counted;
  classifier_correct += o.classifier_correct;
  final_correct += o.final_correct;
  stored += o.stored;
  for (const auto& [p, n] : o.provenance) provenance[p] += n;
  return *this;
}

EpochStats ScenarioReport::totals() const {
  EpochStats t;
  for (const auto& s : stats) t += s;
  return t;
}

namespace {

// What the simulated user types, or nullopt for silence.
std::optional<std::string> simulated_response(const FeedbackBehavior& behavior, const LabelOrSentinel& truth,
                                              const Prediction& predicted, const LabelSet& set, Rng& rng) {
  if (rng.bernoulli(behavior.adversarial_rate)) {
    std::vector<const GenderLabel*> wrong;
    for (const auto& l : set.labels()) {
      if (LabelOrSentinel{l} != truth) wrong.push_back(&l);
    }
    return wrong[rng.index(wrong.size())]->name();
  }
  if (is_sentinel(truth)) {
    if (rng.bernoulli(behavior.participation)) return std::string(kDeclineToken);
    return std::nullopt;
  }
  const auto& label = std::get<GenderLabel>(truth);
  if (label == predicted.label) {
    if (rng.bernoulli(behavior.confirm_rate)) return std::string();
    return std::nullopt;
  }
  if (rng.bernoulli(behavior.participation)) return label.name();
  return std::nullopt;
}

}  // namespace

ScenarioReport run_scenario(const PopulationSpec& spec, const FeedbackBehavior& behavior, const UpdatePolicy& policy,
                            std::size_t epochs, const ScenarioOptions& options) {
  behavior.validate();
  policy.validate();
  if (options.t1 <= Duration::zero()) throw Error(ErrorKind::InvalidTimeout, "t1 must be positive");

  const SyntheticWorld world(spec);
  const auto set = std::make_shared<const LabelSet>(LabelSet::initial());

  Rng stream_rng(derive_seed(spec.seed, 2));
  Rng holdout_rng(derive_seed(spec.seed, 3));
  Rng user_rng(derive_seed(spec.seed, 4));

  Holdout holdout{set->version(), {}};
  for (std::size_t g = 0; g < spec.groups.size(); ++g) {
    for (std::size_t i = 0; i < options.holdout_per_group; ++i) {
      holdout.records.push_back(
          world.draw(g, holdout_rng, "holdout-" + spec.groups[g].tag + "-" + std::to_string(i)));
    }
  }

  ModelRegistry registry(world.base_model());
  ConsentStore store = options.store_file.empty() ? ConsentStore() : ConsentStore(options.store_file);
  UpdateScheduler scheduler(policy, world.base_model(), registry, store);
  UnknownLabelLog unknown;
  UtilityTracker tracker(options.utility_constant, options.epsilon);
  SessionManager sessions(derive_seed(spec.seed, 5));

  ScenarioReport report;
  report.base_model = world.base_model();
  report.initial = evaluate<double>(*world.base_model(), holdout.records, *set);

  Timestamp clock{};
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto weights = world.weights_at(epoch);
    EpochStats stats;
    std::vector<Observation> window;
    window.reserve(policy.evaluation_interval);

    for (std::size_t i = 0; i < policy.evaluation_interval; ++i) {
      FaceRecord rec = world.draw(stream_rng.categorical(weights), stream_rng,
                                  "e" + std::to_string(epoch + 1) + "-" + std::to_string(i));
      const auto model = registry.require();
      const Timestamp classified_at = clock;
      const FeatureVector features = pipeline_features(rec, *model);
      Prediction predicted = score_features(features, *model, *set);
      const auto session =
          sessions.open_session(predicted, rec.id, options.t1, set, classified_at + options.classification_time,
                                classified_at);

      const auto response = simulated_response(behavior, *rec.truth, session.predicted, *set, user_rng);
      if (response) {
        const double fraction = 0.1 + 0.8 * user_rng.uniform();
        const auto delay = Duration{static_cast<Duration::rep>(fraction * static_cast<double>(options.t1.count()))};
        sessions.submit_feedback(session.session_id, *response, session.opened_at + delay);
      } else {
        sessions.expire(session.session_id, session.deadline);
      }

      const FeedbackSession resolved = sessions.get(session.session_id);
      const FinalLabel& final = *resolved.resolution;
      clock = final.resolved_at;

      if (final.provenance == Provenance::InvalidFallback && resolved.raw_feedback) {
        unknown.log(*resolved.raw_feedback, final.resolved_at);
      }
      const bool consent = user_rng.bernoulli(behavior.consent_rate);
      if (store.record(resolved, features, consent, final.resolved_at)) ++stats.stored;

      ++stats.sessions;
      ++stats.provenance[final.provenance];
      if (const auto* truth = std::get_if<GenderLabel>(&*rec.truth)) {
        ++stats.counted;
        if (resolved.predicted.label == *truth) ++stats.classifier_correct;
        if (final.label == LabelOrSentinel{*truth}) ++stats.final_correct;
      }
      window.push_back(observe(resolved));
      scheduler.note_resolution();
      report.sessions.push_back(resolved);
    }
    sessions.evict_resolved_before(clock + Duration{1});

    UpdateDecision decision;
    try {
      decision = scheduler.run_cycle(holdout, *set);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::HoldoutMissing) throw;
      decision.cycle_index = epoch + 1;
      decision.candidate_model_version = registry.require()->model_version + 1;
      decision.reason = e.what();
    }
    report.decisions.push_back(decision);

    const auto current = registry.require();
    report.epochs.push_back(evaluate<double>(*current, holdout.records, *set));
    const double accuracy = accuracy_at(report.epochs.back());
    const double incompleteness = incompleteness_at(window, *set, options.epsilon);
    report.utility.push_back(tracker.record(static_cast<std::int64_t>(epoch + 1), accuracy, incompleteness));
    report.stats.push_back(stats);
  }

  report.unknown_labels = unknown.counts();
  report.final_model = registry.require();
  report.stored_datapoints = store.size();
  return report;
}

void write_scenario_outputs(const ScenarioReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / name).string());
    return out;
  };

  {
    auto out = open("tpr_by_group.csv");
    write_report_csv(out, report.epochs.empty() ? report.initial : report.epochs.back());
  }
  {
    auto out = open("tpr_by_epoch.csv");
    out << "epoch,group,total,correct,tpr\n";
    auto rows = [&](std::size_t epoch, const EvaluationReport& r) {
      for (const auto& [group, t] : r.by_group) {
        out << epoch << ',' << group << ',' << t.total << ',' << t.correct << ',' << format_double(t.rate()) << '\n';
      }
    };
    rows(0, report.initial);
    for (std::size_t e = 0; e < report.epochs.size(); ++e) rows(e + 1, report.epochs[e]);
  }
  {
    auto out = open("utility.csv");
    write_utility_csv(out, report.utility);
  }
  {
    auto out = open("sessions.jsonl");
    for (const auto& s : report.sessions) out << audit_line(s) << '\n';
  }
  {
    auto out = open("decisions.csv");
    write_decisions_csv(out, report.decisions);
  }
  save_model(dir / "model.txt", *report.final_model);
  save_model(dir / "base_model.txt", *report.base_model);
  {
    auto out = open("labels.tsv");
    out << format_label_line(LabelSet::initial()) << '\n';
  }
  {
    auto out = open("unknown_label_counts.tsv");
    for (const auto& [label, n] : report.unknown_labels) out << label << '\t' << n << '\n';
  }
  {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (std::size_t e = 0; e < report.stats.size(); ++e) {
      const auto& s = report.stats[e];
      nlohmann::ordered_json row;
      row["epoch"] = e + 1;
      row["sessions"] = s.sessions;
      row["classifier_accuracy"] = s.classifier_accuracy();
      row["final_accuracy"] = s.final_accuracy();
      row["stored"] = s.stored;
      for (const auto& [p, n] : s.provenance) row["provenance"][std::string(to_string(p))] = n;
      row["applied"] = report.decisions[e].applied;
      row["reason"] = report.decisions[e].reason;
      j.push_back(row);
    }
    auto out = open("summary.json");
    out << j.dump(2) << '\n';
  }
}

}  // namespace ftf
