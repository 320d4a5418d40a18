#include "ftf/service.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <httplib.h>
#include <json.hpp>

#include "ftf/error.hpp"

namespace ftf {
namespace {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

void reply(httplib::Response& res, int status, const ojson& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, ojson{{"error", message}});
}

json parse_body(const httplib::Request& req) {
  try {
    auto body = json::parse(req.body);
    if (!body.is_object()) throw Error(ErrorKind::ParseError, "request body must be a JSON object");
    return body;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("malformed JSON: ") + e.what());
  }
}

ojson scores_json(const Prediction& p) {
  ojson scores = ojson::object();
  for (const auto& [label, s] : p.scores) scores[label.name()] = s;
  return scores;
}

ojson session_json(const FeedbackSession& s) {
  ojson j;
  j["session_id"] = s.session_id;
  j["record_id"] = s.record_id;
  j["predicted"] = s.predicted.label.name();
  j["scores"] = scores_json(s.predicted);
  j["t1_seconds"] = static_cast<double>(s.t1.count()) / 1000.0;
  j["opened_at"] = to_millis(s.opened_at);
  j["deadline"] = to_millis(s.deadline);
  j["label_set_version"] = s.label_set_version();
  j["usage"] = kAdvisoryOnly;
  j["state"] = s.state == SessionState::Awaiting ? "awaiting" : "resolved";
  if (s.resolution) {
    j["final"] = to_string(s.resolution->label);
    j["provenance"] = to_string(s.resolution->provenance);
    j["resolved_at"] = to_millis(s.resolution->resolved_at);
  }
  return j;
}

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

}  // namespace

// ---------------------------------------------------------------------------

ServiceConfig ServiceConfig::from_config(const Config& cfg) {
  ServiceConfig c;
  c.host = cfg.get_string("host", c.host);
  c.port = static_cast<int>(cfg.get_int("port", c.port));
  c.t1_seconds = cfg.get_double("t1_seconds", c.t1_seconds);
  c.data_dir = cfg.get_string("data_dir", c.data_dir.string());
  c.admin_token = cfg.get_string("admin_token", c.admin_token);
  c.policy = UpdatePolicy::from_config(cfg);
  c.utility_constant = cfg.get_double("utility_constant", c.utility_constant);
  c.sweep_interval = Duration{cfg.get_int("sweep_ms", c.sweep_interval.count())};
  return c;
}

void ServiceConfig::apply_environment() {
  Config overrides;
  if (auto v = env("FTF_PORT")) overrides.set("port", *v);
  if (auto v = env("FTF_T1_SECONDS")) overrides.set("t1_seconds", *v);
  if (auto v = env("FTF_THETA")) overrides.set("theta", *v);
  port = static_cast<int>(overrides.get_int("port", port));
  t1_seconds = overrides.get_double("t1_seconds", t1_seconds);
  policy.per_class_threshold = overrides.get_double("theta", policy.per_class_threshold);
  policy.validate();
  if (auto v = env("FTF_DATA_DIR")) data_dir = *v;
  if (auto v = env("FTF_ADMIN_TOKEN")) admin_token = *v;
}

Duration ServiceConfig::t1() const {
  if (!(t1_seconds > 0.0)) throw Error(ErrorKind::InvalidTimeout, "t1_seconds must be positive");
  return Duration{static_cast<Duration::rep>(t1_seconds * 1000.0 + 0.5)};
}

int http_status(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::NoFaceDetected: return 422;
    case ErrorKind::ModelUnavailable: return 503;
    case ErrorKind::UnknownSession: return 404;
    case ErrorKind::DuplicateLabel: return 409;
    case ErrorKind::Io: return 500;
    default: return 400;
  }
}

FaceRecord parse_record_json(const std::string& line, bool allow_truth) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::ParseError, "record must be a JSON object");
  FaceRecord rec;
  try {
    if (j.contains("id")) rec.id = j.at("id").get<std::string>();
    const auto raw = j.at("raw").get<std::vector<double>>();
    if (raw.empty()) throw Error(ErrorKind::InvalidRecord, "raw is empty");
    rec.raw = Eigen::Map<const Vector<double>>(raw.data(), static_cast<Eigen::Index>(raw.size()));
    rec.region_present = j.value("region_present", true);
    if (j.contains("truth") || j.contains("group")) {
      if (!allow_truth) throw Error(ErrorKind::InvalidRecord, "truth and group are simulation-only fields");
      rec.truth = parse_label_or_sentinel(j.at("truth").get<std::string>());
      rec.group = j.at("group").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("malformed record: ") + e.what());
  }
  if (!all_finite(rec.raw)) throw Error(ErrorKind::InvalidRecord, "raw has non-finite entries");
  return rec;
}

std::vector<FaceRecord> load_records(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + file.string());
  std::vector<FaceRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_record_json(line, true));
  }
  return out;
}

// ---------------------------------------------------------------------------

FtfService::FtfService(ServiceConfig config, std::shared_ptr<const Clock> clock)
    : config_(std::move(config)), clock_(std::move(clock)), tracker_(config_.utility_constant) {
  config_.policy.validate();
  config_.t1();
  if (!config_.data_dir.empty()) std::filesystem::create_directories(config_.data_dir);

  labels_ = config_.data_dir.empty() ? std::make_unique<LabelRegistry>()
                                     : std::make_unique<LabelRegistry>(data_file("labels.tsv"));
  store_ = config_.data_dir.empty() ? std::make_unique<ConsentStore>()
                                    : std::make_unique<ConsentStore>(data_file("training_store.jsonl"));
  unknown_ = config_.data_dir.empty() ? std::make_unique<UnknownLabelLog>()
                                      : std::make_unique<UnknownLabelLog>(data_file("unknown_labels.log"));
  if (!config_.data_dir.empty()) audit_ = std::make_unique<AuditLog>(data_file("audit.jsonl"));

  if (!config_.data_dir.empty()) {
    namespace fs = std::filesystem;
    if (fs::exists(data_file("base_model.txt"))) {
      std::lock_guard lock(state_mutex_);
      base_ = std::make_shared<const ModelArtifact>(load_model(data_file("base_model.txt")));
    }
    if (fs::exists(data_file("model.txt"))) {
      register_model(std::make_shared<const ModelArtifact>(load_model(data_file("model.txt"))));
    }
    if (fs::exists(data_file("holdout.jsonl"))) set_holdout(load_records(data_file("holdout.jsonl")));
    if (fs::exists(data_file("utility.csv"))) {
      std::ifstream in(data_file("utility.csv"));
      tracker_.load(read_utility_csv(in));
    }
    if (fs::exists(data_file("tpr_by_group.csv"))) {
      std::ifstream in(data_file("tpr_by_group.csv"));
      tpr_rows_ = read_report_csv(in);
    }
  }

  sessions_.set_listener([this](const FeedbackSession& s) { on_resolution(s); });
  install_routes();
}

FtfService::~FtfService() { stop(); }

std::filesystem::path FtfService::data_file(const char* name) const { return config_.data_dir / name; }

void FtfService::register_model(std::shared_ptr<const ModelArtifact> model) {
  if (!model) throw Error(ErrorKind::ModelUnavailable, "null model");
  models_.publish(model);
  std::lock_guard lock(state_mutex_);
  if (!base_) base_ = model;
  if (!scheduler_) scheduler_ = std::make_unique<UpdateScheduler>(config_.policy, base_, models_, *store_);
}

void FtfService::set_holdout(std::vector<FaceRecord> records) {
  std::lock_guard lock(state_mutex_);
  holdout_ = Holdout{labels_->current()->version(), std::move(records)};
}

std::vector<UpdateDecision> FtfService::decisions() const {
  std::lock_guard lock(state_mutex_);
  return scheduler_ ? scheduler_->history() : std::vector<UpdateDecision>{};
}

// Runs under the session manager's lock: never call back into sessions_.
void FtfService::on_resolution(const FeedbackSession& s) {
  if (audit_) audit_->append(s);
  if (s.resolution->provenance == Provenance::InvalidFallback && s.raw_feedback) {
    unknown_->log(*s.raw_feedback, s.resolution->resolved_at);
  }
  std::lock_guard lock(state_mutex_);
  window_.push_back(observe(s));
  if (s.resolution->provenance == Provenance::AutoConfirmed) pending_features_.erase(s.session_id);
  if (scheduler_ && scheduler_->note_resolution()) cycle_due_ = true;
}

std::size_t FtfService::tick() {
  const std::size_t expired = sessions_.sweep(clock_->now());
  run_pending_cycle();
  return expired;
}

void FtfService::run_pending_cycle() {
  std::optional<Holdout> holdout;
  UpdateScheduler* scheduler = nullptr;
  std::vector<Observation> window;
  {
    std::lock_guard lock(state_mutex_);
    if (!cycle_due_) return;
    cycle_due_ = false;
    holdout = holdout_;
    scheduler = scheduler_.get();
    window.swap(window_);
  }
  if (!holdout || !scheduler) return;

  const auto set = labels_->current();
  try {
    const auto decision = scheduler->run_cycle(*holdout, *set);
    if (decision.applied && !config_.data_dir.empty()) save_model(data_file("model.txt"), *models_.require());
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::HoldoutMissing) throw;
    std::cerr << "update cycle skipped: " << e.what() << '\n';
    return;
  }

  const auto report = evaluate<double>(*models_.require(), holdout->records, *set);
  const double incompleteness =
      window.empty() ? tracker_.epsilon() : incompleteness_at(window, *set, tracker_.epsilon());
  tracker_.record(static_cast<std::int64_t>(tracker_.series().size() + 1), accuracy_at(report), incompleteness);
  {
    std::lock_guard lock(state_mutex_);
    tpr_rows_.clear();
    for (const auto& [group, t] : report.by_group) tpr_rows_.push_back({group, t.total, t.correct, t.rate()});
  }
  persist_metrics();
}

void FtfService::persist_metrics() {
  if (config_.data_dir.empty()) return;
  const auto series = tracker_.series();
  {
    std::ofstream out(data_file("utility.csv"), std::ios::trunc);
    write_utility_csv(out, series);
  }
  std::lock_guard lock(state_mutex_);
  std::ofstream out(data_file("tpr_by_group.csv"), std::ios::trunc);
  out << "group,total,correct,tpr\n";
  for (const auto& r : tpr_rows_) out << r.group << ',' << r.total << ',' << r.correct << ',' << format_double(r.tpr) << '\n';
}

// ---------------------------------------------------------------------------

void FtfService::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  auto& svr = *server_;
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type, X-Admin-Token"},
                           {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"}});
  svr.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      reply_error(res, http_status(e.kind()), e.what());
    } catch (const std::exception& e) {
      reply_error(res, 500, e.what());
    }
  });

  svr.Post("/classify", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    FaceRecord rec = parse_record_json(body.dump(), false);
    static std::atomic<std::uint64_t> anonymous{0};
    if (rec.id.empty()) rec.id = "anon-" + std::to_string(++anonymous);
    detect(rec);
    const auto model = models_.require();
    const auto set = labels_->current();
    const Timestamp classified_at = clock_->now();
    const FeatureVector features = pipeline_features(rec, *model);
    Prediction predicted = score_features(features, *model, *set);
    const auto session = sessions_.open_session(std::move(predicted), rec.id, config_.t1(), set, clock_->now(),
                                                classified_at);
    {
      std::lock_guard lock(state_mutex_);
      pending_features_.emplace(session.session_id, features);
    }
    ojson out;
    out["session_id"] = session.session_id;
    out["predicted"] = session.predicted.label.name();
    out["scores"] = scores_json(session.predicted);
    out["t1_seconds"] = static_cast<double>(session.t1.count()) / 1000.0;
    out["deadline"] = to_millis(session.deadline);
    out["opened_at"] = to_millis(session.opened_at);
    out["usage"] = kAdvisoryOnly;
    out["label_set_version"] = session.label_set_version();
    out["model_version"] = model->model_version;
    reply(res, 200, out);
  });

  svr.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, session_json(sessions_.get(req.matches[1])));
  });

  svr.Post(R"(/sessions/([^/]+)/feedback)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto body = parse_body(req);
    std::string label;
    bool consent = false;
    if (body.contains("label") && !body.at("label").is_null()) {
      if (!body.at("label").is_string()) throw Error(ErrorKind::ParseError, "label must be a string");
      label = body.at("label").get<std::string>();
    }
    if (body.contains("consent")) {
      if (!body.at("consent").is_boolean()) throw Error(ErrorKind::ParseError, "consent must be a boolean");
      consent = body.at("consent").get<bool>();
    }

    const auto outcome = sessions_.submit(id, label, clock_->now());
    std::optional<FeatureVector> features;
    {
      std::lock_guard lock(state_mutex_);
      if (auto it = pending_features_.find(id); it != pending_features_.end()) {
        features = std::move(it->second);
        pending_features_.erase(it);
      }
    }
    bool stored = false;
    if (!outcome.late && consent && features) {
      stored = store_->record(sessions_.get(id), *features, true, clock_->now());
    }
    ojson out;
    out["session_id"] = id;
    out["final"] = to_string(outcome.final.label);
    out["provenance"] = to_string(outcome.final.provenance);
    out["resolved_at"] = to_millis(outcome.final.resolved_at);
    out["late"] = outcome.late;
    out["stored"] = stored;
    out["usage"] = kAdvisoryOnly;
    reply(res, 200, out);
  });

  svr.Get("/labels", [this](const httplib::Request&, httplib::Response& res) {
    const auto set = labels_->current();
    ojson out;
    out["version"] = set->version();
    out["labels"] = ojson::array();
    for (const auto& l : set->labels()) out["labels"].push_back(l.name());
    reply(res, 200, out);
  });

  svr.Post("/labels", [this](const httplib::Request& req, httplib::Response& res) {
    if (config_.admin_token.empty()) return reply_error(res, 403, "label extension is disabled");
    if (req.get_header_value("X-Admin-Token") != config_.admin_token) {
      return reply_error(res, 401, "admin token required");
    }
    const auto body = parse_body(req);
    std::vector<GenderLabel> labels;
    try {
      if (body.contains("labels")) {
        for (const auto& l : body.at("labels")) labels.emplace_back(l.get<std::string>());
      } else if (body.contains("label")) {
        labels.emplace_back(body.at("label").get<std::string>());
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError, e.what());
    }
    const auto set = labels_->extend(labels, to_millis(clock_->now()));
    ojson out;
    out["version"] = set->version();
    out["labels"] = ojson::array();
    for (const auto& l : set->labels()) out["labels"].push_back(l.name());
    reply(res, 200, out);
  });

  svr.Delete(R"(/records/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    reply(res, 200, ojson{{"record_id", id}, {"purged", store_->purge(id)}});
  });

  svr.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
    ojson out;
    out["utility"] = ojson::array();
    for (const auto& s : tracker_.series()) {
      out["utility"].push_back(
          {{"t", s.t}, {"accuracy", s.accuracy}, {"incompleteness", s.incompleteness}, {"utility", s.utility}});
    }
    out["tpr_by_group"] = ojson::array();
    {
      std::lock_guard lock(state_mutex_);
      for (const auto& r : tpr_rows_) {
        out["tpr_by_group"].push_back({{"group", r.group}, {"total", r.total}, {"correct", r.correct}, {"tpr", r.tpr}});
      }
    }
    out["unknown_labels"] = ojson::object();
    for (const auto& [label, n] : unknown_->counts()) out["unknown_labels"][label] = n;
    out["label_set_version"] = labels_->current()->version();
    const auto model = models_.current();
    out["model_version"] = model ? ojson(model->model_version) : ojson(nullptr);
    out["utility_constant"] = tracker_.constant();
    reply(res, 200, out);
  });
}

int FtfService::start(int port) {
  if (server_thread_.joinable()) throw Error(ErrorKind::Io, "service already started");
  const int wanted = port < 0 ? config_.port : port;
  int bound = -1;
  if (wanted == 0) {
    bound = server_->bind_to_any_port(config_.host);
  } else if (server_->bind_to_port(config_.host, wanted)) {
    bound = wanted;
  }
  if (bound <= 0) throw Error(ErrorKind::Io, "cannot bind " + config_.host + ":" + std::to_string(wanted));
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  {
    std::lock_guard lock(sweeper_mutex_);
    stopping_ = false;
  }
  sweeper_ = std::thread([this] {
    std::unique_lock lock(sweeper_mutex_);
    while (!stopping_) {
      sweeper_cv_.wait_for(lock, config_.sweep_interval);
      if (stopping_) break;
      lock.unlock();
      try {
        tick();
      } catch (const std::exception& e) {
        std::cerr << "sweeper: " << e.what() << '\n';
      }
      lock.lock();
    }
  });
  return bound;
}

void FtfService::run() {
  if (server_thread_.joinable()) server_thread_.join();
}

void FtfService::stop() {
  {
    std::lock_guard lock(sweeper_mutex_);
    stopping_ = true;
  }
  sweeper_cv_.notify_all();
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
  if (sweeper_.joinable()) sweeper_.join();
}

}  // namespace ftf
