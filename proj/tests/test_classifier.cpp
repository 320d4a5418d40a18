#include <doctest.h>

#include <random>
#include <sstream>

#include "ftf/classifier.hpp"
#include "ftf/error.hpp"

using namespace ftf;

namespace {

Vector<double> vec(std::initializer_list<double> xs) {
  Vector<double> v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

FaceRecord record(std::string id, Vector<double> raw, bool present = true) {
  FaceRecord r;
  r.id = std::move(id);
  r.raw = std::move(raw);
  r.region_present = present;
  return r;
}

// Two unit-variance clusters at -2 and +2 on axis 0.
std::vector<LabeledRecord> clusters(std::size_t n, unsigned seed, Eigen::Index d = 4) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<LabeledRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool male = i % 2 == 0;
    Vector<double> raw(d);
    for (Eigen::Index k = 0; k < d; ++k) raw[k] = gauss(rng);
    raw[0] += male ? -2.0 : 2.0;
    out.push_back({record("c" + std::to_string(i), raw), male ? SourceLabel::Male : SourceLabel::Female});
  }
  return out;
}

ModelArtifact hand_model(std::map<std::string, Vector<double>> centroids, Eigen::Index d) {
  ModelArtifact m;
  m.stats.mean = Vector<double>::Zero(d);
  m.stats.scale = Vector<double>::Ones(d);
  for (auto& [name, c] : centroids) {
    m.centroids.emplace(GenderLabel(name), c);
    m.trained_on.emplace(GenderLabel(name), 1);
  }
  return m;
}

}  // namespace

TEST_CASE("detect passes present regions and rejects absent ones") {
  std::vector<FaceRecord> batch;
  for (int i = 0; i < 10; ++i) batch.push_back(record("r" + std::to_string(i), vec({0, 0}), i % 10 >= 3));
  int pass = 0, errors = 0;
  for (const auto& r : batch) {
    try {
      const bool same = &detect(r) == &r;
      CHECK(same);
      ++pass;
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NoFaceDetected);
      ++errors;
    }
  }
  CHECK(pass == 7);
  CHECK(errors == 3);
}

TEST_CASE("preprocess standardizes") {
  TrainingStats<double> stats{vec({1, 2}), vec({1, 2})};
  CHECK(preprocess(record("a", vec({2, 4})), stats).values() == vec({1, 1}));
  CHECK(preprocess(record("b", vec({1, 2})), stats).values() == vec({0, 0}));
  CHECK(preprocess(record("c", vec({2, 4})), stats).values() == vec({1, 1}));
  CHECK_THROWS_AS(preprocess(record("d", vec({1, 2, 3})), stats), Error);
  CHECK_THROWS_AS(preprocess(record("e", vec({1, std::nan("")})), stats), Error);
}

TEST_CASE("preprocess works for float scalars too") {
  BasicFaceRecord<float> r;
  r.raw = Vector<float>::Constant(3, 3.0f);
  TrainingStats<float> stats{Vector<float>::Ones(3), Vector<float>::Constant(3, 2.0f)};
  CHECK(preprocess(r, stats).values() == Vector<float>::Ones(3));
}

TEST_CASE("feature mask projects") {
  const FeatureVector v(vec({5, 6, 7}));
  CHECK(extract_features(v).values() == v.values());
  CHECK(extract_features(v, FeatureMask{{0, 2}}).values() == vec({5, 7}));
  CHECK(extract_features(FeatureVector(vec({0, 0, 0}))).values() == vec({0, 0, 0}));
  CHECK_THROWS_AS(extract_features(v, FeatureMask{{3}}), Error);
}

TEST_CASE("compute_stats replaces zero spread by one") {
  std::vector<Vector<double>> rows{vec({1, 5}), vec({3, 5})};
  const auto s = compute_stats<double>(rows);
  CHECK(s.mean == vec({2, 5}));
  CHECK(s.scale == vec({1, 1}));
}

TEST_CASE("training on separable clusters predicts the cluster means") {
  const auto data = clusters(400, 3);
  const auto set = LabelSet::initial();
  const auto model = train<double>(data, set);
  CHECK(model.covers(GenderLabel("man")));
  CHECK(model.covers(GenderLabel("woman")));
  CHECK_FALSE(model.covers(GenderLabel("non-binary")));
  CHECK(model.trained_on.at(GenderLabel("man")) == 200);

  Vector<double> male_mean = Vector<double>::Zero(4), female_mean = Vector<double>::Zero(4);
  for (const auto& d : data) (d.source == SourceLabel::Male ? male_mean : female_mean) += d.record.raw;
  male_mean /= 200.0;
  female_mean /= 200.0;
  CHECK(classify(record("m", male_mean), model, set).label == GenderLabel("man"));
  CHECK(classify(record("f", female_mean), model, set).label == GenderLabel("woman"));
}

TEST_CASE("female-only data gives a single centroid") {
  auto data = clusters(100, 4);
  std::erase_if(data, [](const LabeledRecord& r) { return r.source == SourceLabel::Male; });
  const auto set = LabelSet::initial();
  const auto model = train<double>(data, set);
  CHECK(model.centroids.size() == 1);
  for (const auto& d : clusters(50, 9)) CHECK(classify(d.record, model, set).label == GenderLabel("woman"));
}

TEST_CASE("softmax over distances") {
  const auto set = LabelSet::initial();
  const auto model = hand_model({{"man", vec({0, 0})}, {"woman", vec({5, 0})}}, 2);
  const auto p = classify(record("x", vec({0, 0})), model, set);
  CHECK(p.label == GenderLabel("man"));
  // 1 / (1 + e^-5)
  CHECK(p.score(GenderLabel("man")) == doctest::Approx(0.9933071490757153).epsilon(1e-14));
  CHECK(p.score(GenderLabel("non-binary")) == 0.0);
  CHECK(p.scores.size() == 3);

  const auto three = hand_model({{"man", vec({0, 0})}, {"woman", vec({5, 0})}, {"non-binary", vec({0, 3})}}, 2);
  const auto q = classify(record("y", vec({0, 0})), three, set);
  CHECK(q.score(GenderLabel("man")) == doctest::Approx(0.9464991225528937).epsilon(1e-14));
  CHECK(q.score(GenderLabel("woman")) == doctest::Approx(0.006377460922442298).epsilon(1e-12));
  CHECK(q.score(GenderLabel("non-binary")) == doctest::Approx(0.047123416524664154).epsilon(1e-12));
}

TEST_CASE("equidistant input ties to man") {
  const auto set = LabelSet::initial();
  const auto model = hand_model({{"man", vec({-1, 0})}, {"woman", vec({1, 0})}}, 2);
  const auto p = classify(record("t", vec({0, 7})), model, set);
  CHECK(p.label == GenderLabel("man"));
  CHECK(p.score(GenderLabel("man")) == p.score(GenderLabel("woman")));
}

TEST_CASE("binary-trained model never predicts non-binary") {
  const auto set = LabelSet::initial();
  const auto model = train<double>(clusters(200, 1), set);
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int i = 0; i < 2000; ++i) {
    Vector<double> raw(4);
    for (auto& x : raw) x = u(rng);
    const auto p = classify(record("p", raw), model, set);
    CHECK(p.label != GenderLabel("non-binary"));
    CHECK(p.score(GenderLabel("non-binary")) == 0.0);
    double total = 0.0;
    for (const auto& [l, s] : p.scores) {
      CHECK(set.contains(l));
      total += s;
    }
    CHECK(total == doctest::Approx(1.0));
  }
}

TEST_CASE("property: argmax agrees with a brute-force nearest centroid") {
  const auto set = LabelSet::initial();
  std::mt19937_64 rng(123);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    const auto model = hand_model(
        {{"man", vec({g(rng), g(rng), g(rng)})}, {"woman", vec({g(rng), g(rng), g(rng)})},
         {"non-binary", vec({g(rng), g(rng), g(rng)})}},
        3);
    for (int i = 0; i < 100; ++i) {
      const Vector<double> x = vec({2 * g(rng), 2 * g(rng), 2 * g(rng)});
      std::string best;
      double best_d = 1e300;
      for (const auto& [l, c] : model.centroids) {
        const double d = (x - c).norm();
        if (d < best_d || (d == best_d && l.name() < best)) {
          best_d = d;
          best = l.name();
        }
      }
      CHECK(classify(record("b", x), model, set).label.name() == best);
    }
  }
}

TEST_CASE("merge_batch adds a class without touching stats") {
  const auto set = LabelSet::initial();
  const auto base = train<double>(clusters(200, 2), set);
  std::vector<LabeledFeatures> batch;
  for (int i = 0; i < 10; ++i) {
    batch.push_back({FeatureVector(Vector<double>::Constant(4, 5.0 + (i % 2 ? 1 : -1))), GenderLabel("non-binary")});
  }
  const auto merged = merge_batch<double>(base, batch, set, 2);
  CHECK(merged.model_version == 2);
  CHECK(merged.stats.mean == base.stats.mean);
  CHECK(merged.trained_on.at(GenderLabel("non-binary")) == 10);
  CHECK(merged.centroids.at(GenderLabel("non-binary")).isApprox(Vector<double>::Constant(4, 5.0)));
  CHECK(merged.centroids.at(GenderLabel("man")).isApprox(base.centroids.at(GenderLabel("man"))));
  CHECK(score_features(FeatureVector(Vector<double>::Constant(4, 5.0)), merged, set).label ==
        GenderLabel("non-binary"));

  std::vector<LabeledFeatures> wrong{{FeatureVector(vec({1, 2})), GenderLabel("man")}};
  CHECK_THROWS_AS(merge_batch<double>(base, wrong, set, 3), Error);
}

TEST_CASE("evaluation tallies groups and excludes the sentinel") {
  const auto set = LabelSet::initial();
  const auto model = hand_model({{"man", vec({-1})}, {"woman", vec({1})}}, 1);
  std::vector<FaceRecord> recs;
  auto add = [&](double x, LabelOrSentinel truth, std::string group) {
    FaceRecord r = record("e" + std::to_string(recs.size()), vec({x}));
    r.truth = std::move(truth);
    r.group = std::move(group);
    recs.push_back(std::move(r));
  };
  add(-1, GenderLabel("man"), "a");
  add(1, GenderLabel("woman"), "a");
  add(-1, GenderLabel("woman"), "b");
  add(1, GenderLabel("woman"), "b");
  add(0.5, Unclassifiable{}, "c");
  const auto report = evaluate<double>(model, recs, set);
  CHECK(report.accuracy() == doctest::Approx(0.75));
  CHECK(report.tpr_group("a") == 1.0);
  CHECK(report.tpr_group("b") == 0.5);
  CHECK(report.tpr_group("c") == 0.0);
  CHECK(report.excluded == 1);
  CHECK(report.confusion.at({"woman", "man"}) == 1);

  std::vector<FaceRecord> only_sentinel(recs.end() - 1, recs.end());
  CHECK_THROWS_AS(evaluate<double>(model, only_sentinel, set), Error);
  CHECK_THROWS_AS(evaluate<double>(model, std::span<const FaceRecord>{}, set), Error);
}

TEST_CASE("model text round trip is exact") {
  const auto set = LabelSet::initial();
  auto model = train<double>(clusters(100, 8), set);
  model.mask = FeatureMask{{0, 2, 3}};
  model = train<double>(clusters(100, 8), set, FeatureMask{{0, 2, 3}});
  std::stringstream ss;
  write_model(ss, model);
  const auto back = read_model(ss);
  CHECK(back.model_version == model.model_version);
  CHECK(back.stats.mean == model.stats.mean);
  CHECK(back.stats.scale == model.stats.scale);
  CHECK(back.mask == model.mask);
  CHECK(back.trained_on == model.trained_on);
  CHECK(back.centroids == model.centroids);

  std::istringstream garbage("not a model\n");
  CHECK_THROWS_AS(read_model(garbage), Error);
}

TEST_CASE("report csv round trip") {
  EvaluationReport r;
  r.by_group["transman"] = {1000, 705};
  r.by_group["woman"] = {1000, 983};
  std::stringstream ss;
  write_report_csv(ss, r);
  const auto rows = read_report_csv(ss);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].group == "transman");
  CHECK(rows[0].tpr == 0.705);
  CHECK(rows[1].correct == 983);
}

TEST_CASE("nearest-centroid classifier interface") {
  const auto set = LabelSet::initial();
  auto model = std::make_shared<const ModelArtifact>(hand_model({{"man", vec({-1})}, {"woman", vec({1})}}, 1));
  const NearestCentroidClassifier c(model);
  CHECK(c.classify(record("i", vec({-3})), set).label == GenderLabel("man"));
  CHECK_THROWS_AS(c.classify(record("j", vec({0}), false), set), Error);
}
