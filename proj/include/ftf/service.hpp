#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ftf/classifier.hpp"
#include "ftf/config.hpp"
#include "ftf/consent.hpp"
#include "ftf/labels.hpp"
#include "ftf/session.hpp"
#include "ftf/time.hpp"
#include "ftf/update.hpp"
#include "ftf/utility.hpp"

namespace httplib {
class Server;
}

namespace ftf {

/// Every classification response carries this usage marker. No endpoint
/// returns an allow/deny decision.
inline constexpr std::string_view kAdvisoryOnly = "advisory-only";

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  double t1_seconds = 5.0;
  std::filesystem::path data_dir;  // empty: nothing persisted
  std::string admin_token;         // empty: label extension disabled
  UpdatePolicy policy;
  double utility_constant = 1.0;
  Duration sweep_interval{20};

  /// Keys: host, port, t1_seconds, data_dir, admin_token, interval, theta,
  /// min_new_datapoints, utility_constant, sweep_ms.
  static ServiceConfig from_config(const Config& cfg);
  /// FTF_PORT, FTF_T1_SECONDS, FTF_THETA, FTF_DATA_DIR, FTF_ADMIN_TOKEN.
  void apply_environment();
  Duration t1() const;
};

int http_status(ErrorKind kind) noexcept;

/// The feedback loop behind an HTTP API.
///
/// Files under data_dir (all optional at startup):
///   labels.tsv             label set versions
///   model.txt              registered model (rewritten on applied updates)
///   base_model.txt         pre-trained base model; model.txt when absent
///   training_store.jsonl   consented datapoints
///   audit.jsonl            session resolutions
///   unknown_labels.log     feedback text outside the label set
///   holdout.jsonl          evaluation records for controlled updates
///   utility.csv            utility series
///   tpr_by_group.csv       latest per-group TPRs
class FtfService {
 public:
  explicit FtfService(ServiceConfig config, std::shared_ptr<const Clock> clock = std::make_shared<SystemClock>());
  ~FtfService();

  FtfService(const FtfService&) = delete;
  FtfService& operator=(const FtfService&) = delete;

  /// Registers the serving model. The first registration also becomes the
  /// base model for controlled updates.
  void register_model(std::shared_ptr<const ModelArtifact> model);
  void set_holdout(std::vector<FaceRecord> records);

  /// Binds (port 0 picks a free one), serves on a background thread and starts
  /// the expiry sweeper. Returns the bound port.
  int start(int port = -1);
  /// Blocks until stop() is called from elsewhere.
  void run();
  void stop();

  /// Expires due sessions and runs a pending update cycle. The sweeper calls
  /// this periodically; tests may call it directly.
  std::size_t tick();

  const ServiceConfig& config() const noexcept { return config_; }
  SessionManager& sessions() noexcept { return sessions_; }
  const ConsentStore& store() const noexcept { return *store_; }
  const LabelRegistry& labels() const noexcept { return *labels_; }
  const ModelRegistry& models() const noexcept { return models_; }
  std::vector<UpdateDecision> decisions() const;

 private:
  void install_routes();
  void on_resolution(const FeedbackSession& session);
  void run_pending_cycle();
  void persist_metrics();
  std::filesystem::path data_file(const char* name) const;

  ServiceConfig config_;
  std::shared_ptr<const Clock> clock_;
  std::unique_ptr<LabelRegistry> labels_;
  ModelRegistry models_;
  std::unique_ptr<ConsentStore> store_;
  std::unique_ptr<UnknownLabelLog> unknown_;
  std::unique_ptr<AuditLog> audit_;
  SessionManager sessions_;
  UtilityTracker tracker_;

  mutable std::mutex state_mutex_;
  std::shared_ptr<const ModelArtifact> base_;
  std::unique_ptr<UpdateScheduler> scheduler_;
  std::optional<Holdout> holdout_;
  std::vector<GroupRate> tpr_rows_;
  std::vector<Observation> window_;
  std::map<std::string, FeatureVector> pending_features_;
  bool cycle_due_ = false;

  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
  std::thread sweeper_;
  std::mutex sweeper_mutex_;
  std::condition_variable sweeper_cv_;
  bool stopping_ = false;
};

/// Holdout/record JSON lines: {"id","raw":[...],"truth","group","region_present"}.
FaceRecord parse_record_json(const std::string& line, bool allow_truth);
std::vector<FaceRecord> load_records(const std::filesystem::path& file);

}  // namespace ftf
