// Acceptance gate: one line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ftf/consent.hpp"
#include "ftf/error.hpp"
#include "ftf/service.hpp"
#include "ftf/simulator.hpp"
#include "ftf/utility.hpp"

// After Eigen: <resolv.h> defines a _res macro that clashes with Eigen internals.
#include <httplib.h>
#include <json.hpp>

using namespace ftf;
using namespace std::chrono_literals;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

int failures = 0;

void run(const char* name, double budget_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out.pass = false;
    out.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs > budget_seconds) {
    out.pass = false;
    out.detail += (out.detail.empty() ? "" : "; ") + std::string("over time budget");
  }
  if (!out.pass) ++failures;
  std::printf("[%s] %s (%.2fs)%s%s\n", out.pass ? "PASS" : "FAIL", name, secs, out.detail.empty() ? "" : ": ",
              out.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

const Timestamp kT0 = from_millis(10'000'000);

// ---------------------------------------------------------------------------

Outcome algorithm_conformance() {
  Outcome out;
  const auto set = std::make_shared<const LabelSet>(LabelSet::initial());
  const std::vector<std::string> names{"man", "woman", "non-binary"};
  const Duration t1 = 5s;
  SessionManager m(1);
  std::size_t cases = 0;

  enum class Input { Blank, ValidSame, ValidDifferent, Invalid, Decline, Silence };
  for (const auto& predicted : names) {
    for (auto input : {Input::Blank, Input::ValidSame, Input::ValidDifferent, Input::Invalid, Input::Decline,
                       Input::Silence}) {
      for (bool after : {false, true}) {
        // Texts exercising each input class, including case and whitespace variants.
        std::vector<std::string> texts;
        switch (input) {
          case Input::Blank: texts = {"", " ", "\t"}; break;
          case Input::ValidSame: texts = {predicted, "  " + predicted, predicted == "man" ? "MAN" : "Woman"}; break;
          case Input::ValidDifferent:
            for (const auto& n : names) {
              if (n != predicted) texts.push_back(n);
            }
            break;
          case Input::Invalid: texts = {"xyz", "robot", "genderfluid", "men"}; break;
          case Input::Decline: texts = {"decline", "DECLINE", " Decline "}; break;
          case Input::Silence: texts = {""}; break;
        }
        if (input == Input::ValidSame && predicted != "man" && predicted != "woman") texts.back() = "NON-BINARY";
        for (const auto& text : texts) {
          for (Duration at : after ? std::vector<Duration>{t1, t1 + 1ms, t1 + 10s}
                                   : std::vector<Duration>{0ms, 1ms, t1 / 2, t1 - 1ms}) {
            ++cases;
            Prediction p{GenderLabel(predicted), {}};
            const auto id = m.open_session(p, "r", t1, set, kT0).session_id;
            const Timestamp now = kT0 + at;

            // Expected resolution, written out from the table.
            LabelOrSentinel want_label = GenderLabel(predicted);
            Provenance want_prov = Provenance::AutoConfirmed;
            if (!after && input != Input::Silence) {
              switch (input) {
                case Input::Blank:
                case Input::ValidSame: want_prov = Provenance::UserConfirmed; break;
                case Input::ValidDifferent:
                  want_prov = Provenance::UserCorrected;
                  want_label = GenderLabel(text);
                  break;
                case Input::Invalid: want_prov = Provenance::InvalidFallback; break;
                case Input::Decline:
                  want_prov = Provenance::UserDeclined;
                  want_label = Unclassifiable{};
                  break;
                case Input::Silence: break;
              }
            }

            std::optional<FinalLabel> got_opt;
            if (input == Input::Silence) {
              const auto early = m.expire(id, now);
              if (!after) {
                out.require(!early && m.get(id).state == SessionState::Awaiting,
                            "silence before the deadline resolved the session");
                const auto later = m.expire(id, kT0 + t1);
                out.require(later.has_value(), "silence did not auto-confirm at the deadline");
              } else {
                out.require(early.has_value(), "silence after the deadline did not auto-confirm");
              }
              got_opt = m.get(id).resolution;
            } else {
              got_opt = m.submit_feedback(id, text, now);
            }
            const FinalLabel got = *got_opt;
            const std::string where = predicted + "/'" + text + "'@" + std::to_string(at.count()) + "ms";
            out.require(got.label == want_label, "label mismatch at " + where);
            out.require(got.provenance == want_prov, "provenance mismatch at " + where);
            // Everything after the resolution reads the same result back.
            out.require(m.submit_feedback(id, "woman", now + 1ms) == got, "resolution changed at " + where);
            out.require(!m.expire(id, now + 1h), "second resolution at " + where);
          }
        }
      }
    }
  }
  out.detail = out.pass ? std::to_string(cases) + " cases, 100% match" : out.detail;
  return out;
}

// ---------------------------------------------------------------------------

Outcome exactly_once_race() {
  Outcome out;
  const auto set = std::make_shared<const LabelSet>(LabelSet::initial());
  constexpr int kSessions = 10000;
  SessionManager m(2);
  std::vector<int> resolutions(kSessions, 0);
  std::map<std::string, int> index;
  std::mutex index_mutex;
  m.set_listener([&](const FeedbackSession& s) { ++resolutions[static_cast<std::size_t>(index.at(s.session_id))]; });

  std::vector<std::string> ids;
  for (int i = 0; i < kSessions; ++i) {
    auto id = m.open_session(Prediction{GenderLabel(i % 2 ? "man" : "woman"), {}}, "r", 5s, set, kT0).session_id;
    std::lock_guard lock(index_mutex);
    index.emplace(id, i);
    ids.push_back(std::move(id));
  }

  // Each session gets a random schedule of submissions and expiries at random
  // times; the schedules run on several threads in shuffled order.
  struct Op {
    int session;
    bool submit;
    Duration at;
    std::string text;
  };
  std::mt19937_64 rng(2024);
  const std::vector<std::string> texts{"", "man", "woman", "non-binary", "decline", "zzz"};
  std::vector<Op> ops;
  for (int i = 0; i < kSessions; ++i) {
    const int k = 2 + static_cast<int>(rng() % 5);
    for (int j = 0; j < k; ++j) {
      ops.push_back({i, rng() % 2 == 0, Duration{static_cast<long>(rng() % 10000)}, texts[rng() % texts.size()]});
    }
  }
  std::shuffle(ops.begin(), ops.end(), rng);

  constexpr int kThreads = 4;
  std::vector<std::vector<std::pair<int, FinalLabel>>> seen(kThreads);
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      for (std::size_t i = static_cast<std::size_t>(t); i < ops.size(); i += kThreads) {
        const auto& op = ops[i];
        const auto& id = ids[static_cast<std::size_t>(op.session)];
        if (op.submit) {
          seen[static_cast<std::size_t>(t)].emplace_back(op.session, m.submit(id, op.text, kT0 + op.at).final);
        } else if (auto f = m.expire(id, kT0 + op.at)) {
          seen[static_cast<std::size_t>(t)].emplace_back(op.session, *f);
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  m.sweep(kT0 + 1h);

  for (int i = 0; i < kSessions; ++i) {
    out.require(resolutions[static_cast<std::size_t>(i)] == 1,
                "session resolved " + std::to_string(resolutions[static_cast<std::size_t>(i)]) + " times");
  }
  std::size_t observations = 0;
  for (const auto& per_thread : seen) {
    for (const auto& [i, f] : per_thread) {
      ++observations;
      out.require(m.get(ids[static_cast<std::size_t>(i)]).resolution == f, "observation differs from resolution");
    }
  }
  for (const auto& id : ids) {
    const auto final = *m.get(id).resolution;
    out.require(m.submit(id, "woman", kT0 + 2h).final == final, "late read differs");
    out.require(!m.expire(id, kT0 + 2h), "late expire resolved again");
  }
  if (out.pass) {
    out.detail = std::to_string(kSessions) + " sessions, " + std::to_string(ops.size()) + " operations, " +
                 std::to_string(observations) + " observations";
  }
  return out;
}

// ---------------------------------------------------------------------------

PopulationSpec nonbinary_spec(std::uint64_t seed) {
  PopulationSpec spec;
  spec.seed = seed;
  spec.groups = {
      {"woman", 0.4, GenderLabel("woman"), 0.97},
      {"man", 0.4, GenderLabel("man"), 0.97},
      {"non-binary", 0.2, GenderLabel("non-binary"), 1.0, 1.0, 1, 6.0},
  };
  return spec;
}

Outcome zero_initial_nonbinary() {
  Outcome out;
  const auto set = LabelSet::initial();
  std::size_t evaluated = 0;
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    const SyntheticWorld world(nonbinary_spec(seed));
    Rng rng(seed * 31);
    const auto records = world.sample(3000, rng, world.weights_at(0));
    const auto report = evaluate<double>(*world.base_model(), records, set);
    out.require(report.by_label.count("non-binary") == 1, "no non-binary records drawn");
    out.require(report.tpr_label("non-binary") == 0.0, "TPR(non-binary) = " + fmt(report.tpr_label("non-binary")));
    for (const auto& r : records) {
      const auto p = classify(r, *world.base_model(), set);
      out.require(p.score(GenderLabel("non-binary")) == 0.0, "non-zero non-binary score");
      out.require(p.label != GenderLabel("non-binary"), "non-binary predicted");
    }
    evaluated += report.by_label.at("non-binary").total;
  }
  if (out.pass) out.detail = "TPR(non-binary) = 0 exactly over " + std::to_string(evaluated) + " records, 5 seeds";
  return out;
}

Outcome controlled_update() {
  Outcome out;
  const FeedbackBehavior behavior{1.0, 0.5, 1.0, 0.0};
  const UpdatePolicy policy{1000, 0.8, 50};
  const auto a = run_scenario(nonbinary_spec(7), behavior, policy, 2);
  const auto b = run_scenario(nonbinary_spec(7), behavior, policy, 2);

  out.require(a.initial.tpr_label("non-binary") == 0.0, "initial TPR(non-binary) not zero");
  int applied_at = 0;
  for (std::size_t e = 0; e < a.decisions.size(); ++e) {
    if (a.decisions[e].applied) {
      applied_at = static_cast<int>(e + 1);
      break;
    }
  }
  out.require(applied_at > 0, "no update applied within 2 epochs");
  const double tpr = a.epochs.back().tpr_label("non-binary");
  out.require(tpr >= 0.8, "post-update TPR(non-binary) = " + fmt(tpr));
  out.require(a.epochs == b.epochs && a.utility == b.utility && a.final_model->centroids == b.final_model->centroids,
              "rerun with the same seed differs");
  if (out.pass) {
    out.detail = "applied in epoch " + std::to_string(applied_at) + ", TPR(non-binary) 0 -> " + fmt(tpr) +
                 ", identical rerun";
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome four_group_calibration() {
  Outcome out;
  const auto spec = four_group_spec();
  const SyntheticWorld world(spec);
  Rng rng(derive_seed(spec.seed, 2));
  constexpr std::size_t kPerGroup = 10000;
  std::vector<FaceRecord> records;
  for (std::size_t g = 0; g < spec.groups.size(); ++g) {
    for (std::size_t i = 0; i < kPerGroup; ++i) records.push_back(world.draw(g, rng, "t" + std::to_string(i)));
  }
  const auto report = evaluate<double>(*world.base_model(), records, LabelSet::initial());
  std::string detail;
  for (const auto& g : spec.groups) {
    const double got = report.tpr_group(g.tag);
    out.require(std::abs(got - g.base_rate) <= 0.015,
                g.tag + " measured " + fmt(got) + " vs target " + fmt(g.base_rate));
    detail += g.tag + " " + fmt(got) + " (" + fmt(g.base_rate) + ") ";
  }
  if (out.pass) out.detail = detail + "at n=10000 per group";
  return out;
}

Outcome post_feedback_oracle() {
  Outcome out;
  std::string detail;
  for (double b : {0.705, 0.873}) {
    for (double p : {0.0, 0.5, 1.0}) {
      PopulationSpec spec;
      spec.seed = 99;
      spec.groups = {{"g", 1.0, GenderLabel("man"), b}};
      // One epoch of 10000 sessions; the export minimum keeps the model fixed.
      const auto report = run_scenario(spec, FeedbackBehavior{p, 0.0, 0.0, 0.0}, {10000, 0.8, 1'000'000}, 1);
      const auto t = report.totals();
      const double measured = t.final_accuracy();
      const double oracle = b + (1.0 - b) * p;
      const std::string tag = "b=" + fmt(b) + " p=" + fmt(p);
      out.require(t.counted == 10000, tag + ": wrong session count");
      out.require(std::abs(measured - oracle) <= 0.01, tag + ": measured " + fmt(measured) + " vs " + fmt(oracle));
      if (p == 0.0) {
        out.require(t.final_correct == t.classifier_correct, tag + ": p=0 final accuracy != classifier accuracy");
      }
      detail += tag + " -> " + fmt(measured) + "; ";
    }
  }
  if (out.pass) out.detail = detail;
  return out;
}

// ---------------------------------------------------------------------------

// Feeds a synthetic A(t), L(t) trajectory through the metric functions: A as
// an evaluation tally and L as a window with that fraction of declines.
std::vector<UtilitySnapshot> utility_series(const std::function<double(int)>& acc,
                                            const std::function<double(int)>& inc) {
  const auto set = LabelSet::initial();
  UtilityTracker tracker;
  constexpr int kN = 10000;
  for (int t = 0; t < 20; ++t) {
    EvaluationReport report;
    report.overall = {kN, static_cast<std::size_t>(std::lround(acc(t) * kN))};
    std::vector<Observation> window(kN, {Provenance::AutoConfirmed, ""});
    const auto declined = static_cast<std::size_t>(std::lround(inc(t) * kN));
    for (std::size_t i = 0; i < declined; ++i) window[i] = {Provenance::UserDeclined, "decline"};
    tracker.record(t + 1, accuracy_at(report), incompleteness_at(window, set));
  }
  return tracker.series();
}

Outcome utility_dynamics() {
  Outcome out;
  auto acc = [](int t) { return 0.7 + 0.2 * t / 19.0; };
  const auto growing = utility_series(acc, [](int t) { return 0.01 + 0.49 * t / 19.0; });
  const auto flat = utility_series(acc, [](int) { return 0.0; });

  // Eventually strictly decreasing: some suffix of length >= 2 is strictly decreasing.
  std::size_t from = growing.size() - 1;
  while (from > 0 && growing[from - 1].utility > growing[from].utility) --from;
  out.require(from + 2 <= growing.size(), "U(t) is not eventually decreasing");
  for (std::size_t i = 1; i < flat.size(); ++i) {
    out.require(flat[i].utility > flat[i - 1].utility, "U(t) with L = eps not strictly increasing at t=" +
                                                            std::to_string(flat[i].t));
    out.require(flat[i].incompleteness == kIncompletenessFloor, "L not floored");
  }
  if (out.pass) {
    out.detail = "growing L: strictly decreasing from t=" + std::to_string(growing[from].t) + " (U " +
                 fmt(growing.front().utility) + " -> " + fmt(growing.back().utility) + "); L = eps: U " +
                 fmt(flat.front().utility) + " -> " + fmt(flat.back().utility) + " strictly increasing";
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome consent_default() {
  Outcome out;
  const auto dir = std::filesystem::temp_directory_path() / ("ftf_accept_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  ScenarioOptions options;
  options.store_file = dir / "training_store.jsonl";
  // Full participation so plenty of sessions are retainable; only consent is missing.
  const auto report = run_scenario(nonbinary_spec(3), FeedbackBehavior{1.0, 1.0, 0.0, 0.0}, {1000, 0.8, 50}, 3,
                                   options);
  const bool absent = !std::filesystem::exists(options.store_file);
  out.require(absent || std::filesystem::file_size(options.store_file) == 0, "store file has content");
  out.require(report.stored_datapoints == 0, "datapoints stored without consent");
  const ConsentStore reopened(options.store_file);
  out.require(reopened.export_training_batch({}).empty(), "export is not empty");
  std::size_t retainable_sessions = 0;
  for (const auto& s : report.sessions) retainable_sessions += retainable(s.resolution->provenance);
  out.require(retainable_sessions > 0, "scenario produced no retainable sessions");
  std::filesystem::remove_all(dir);
  if (out.pass) {
    out.detail = std::to_string(retainable_sessions) + " retainable sessions, store file " +
                 (absent ? "absent" : "empty") + ", export empty";
  }
  return out;
}

Outcome latency_bound() {
  Outcome out;
  ScenarioOptions options;
  const auto report = run_scenario(four_group_spec(), FeedbackBehavior{0.5, 0.3, 0.0, 0.0}, {2000, 0.8, 50}, 2, options);
  std::size_t checked = 0;
  for (const auto& s : report.sessions) {
    if (s.resolution->provenance != Provenance::AutoConfirmed) continue;
    ++checked;
    out.require(s.resolution->resolved_at - s.opened_at >= s.t1 - 50ms, "auto-confirmed before t1 - 50ms");
    out.require(resolution_latency(s) >= (s.opened_at - s.classified_at) + s.t1, "latency below t + t1");
  }
  out.require(checked > 0, "no auto-confirmed sessions in the simulated run");

  // Wall-clock check against the service's own expiry sweeper.
  ServiceConfig cfg;
  cfg.t1_seconds = 0.3;
  cfg.sweep_interval = 10ms;
  FtfService service(cfg);
  service.register_model(SyntheticWorld(four_group_spec()).base_model());
  httplib::Client client("127.0.0.1", service.start(0));
  nlohmann::json rec;
  rec["raw"] = std::vector<double>(static_cast<std::size_t>(kDefaultDimension), 0.0);
  std::vector<std::string> ids;
  for (int i = 0; i < 20; ++i) {
    const auto res = client.Post("/classify", rec.dump(), "application/json");
    out.require(res && res->status == 200, "classify failed");
    if (res) ids.push_back(nlohmann::json::parse(res->body)["session_id"].get<std::string>());
    std::this_thread::sleep_for(5ms);
  }
  std::this_thread::sleep_for(600ms);
  for (const auto& id : ids) {
    const auto s = service.sessions().get(id);
    out.require(s.resolution && s.resolution->provenance == Provenance::AutoConfirmed, "service session unresolved");
    if (!s.resolution) continue;
    ++checked;
    out.require(s.resolution->resolved_at - s.opened_at >= s.t1 - 50ms, "service auto-confirmed too early");
    out.require(resolution_latency(s) >= (s.opened_at - s.classified_at) + s.t1, "service latency below t + t1");
  }
  service.stop();
  if (out.pass) out.detail = std::to_string(checked) + " auto-confirmed sessions (simulated and live service)";
  return out;
}

}  // namespace

int main() {
  run("Feedback resolution table, exhaustive", 60, algorithm_conformance);
  run("Exactly-once resolution under race, 10000 sessions", 60, exactly_once_race);
  run("Zero initial non-binary TPR for a binary-trained model", 60, zero_initial_nonbinary);
  run("Controlled update passes theta=0.8 within 2 epochs", 120, controlled_update);
  run("Four-group TPR calibration within 1.5pp at n=10000", 60, four_group_calibration);
  run("Post-feedback accuracy b+(1-b)p within 1pp", 120, post_feedback_oracle);
  run("Utility dynamics with growing and floored incompleteness", 60, utility_dynamics);
  run("Consent off by default leaves the store empty", 60, consent_default);
  run("Auto-confirm latency at least t + t1", 60, latency_bound);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
