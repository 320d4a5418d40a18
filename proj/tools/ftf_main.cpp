// Command-line front end: simulate, serve, train, evaluate, labels.

#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "ftf/classifier.hpp"
#include "ftf/config.hpp"
#include "ftf/error.hpp"
#include "ftf/service.hpp"
#include "ftf/simulator.hpp"

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

// Training lines: {"id":..., "raw":[...], "label":"male"|"female"}.
std::vector<ftf::LabeledRecord> load_training(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ftf::Error(ftf::ErrorKind::Io, "cannot open " + path);
  std::vector<ftf::LabeledRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ftf::FaceRecord rec;
      rec.id = j.value("id", "t" + std::to_string(n));
      const auto raw = j.at("raw").get<std::vector<double>>();
      rec.raw = Eigen::Map<const ftf::Vector<double>>(raw.data(), static_cast<Eigen::Index>(raw.size()));
      out.push_back({std::move(rec), ftf::parse_source_label(j.at("label").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw ftf::Error(ftf::ErrorKind::ParseError, path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

int simulate(const std::string& spec_file, const std::string& behavior_file, const std::string& policy_file,
             std::size_t epochs, std::optional<std::uint64_t> seed, const std::string& out_dir, double t1_seconds) {
  auto spec = ftf::load_population_spec(spec_file);
  if (seed) spec.seed = *seed;
  const auto behavior = ftf::load_feedback_behavior(behavior_file);
  const auto policy_cfg = policy_file.empty() ? ftf::Config{} : ftf::Config::load(policy_file);
  const auto policy = ftf::UpdatePolicy::from_config(policy_cfg);

  ftf::ScenarioOptions options;
  options.t1 = ftf::Duration{static_cast<ftf::Duration::rep>(t1_seconds * 1000.0 + 0.5)};
  options.utility_constant = policy_cfg.get_double("utility_constant", options.utility_constant);
  std::filesystem::create_directories(out_dir);
  options.store_file = std::filesystem::path(out_dir) / "training_store.jsonl";
  std::filesystem::remove(options.store_file);

  const auto report = ftf::run_scenario(spec, behavior, policy, epochs, options);
  ftf::write_scenario_outputs(report, out_dir);

  const auto totals = report.totals();
  std::cout << "sessions " << totals.sessions << ", classifier accuracy "
            << ftf::format_double(totals.classifier_accuracy()) << ", final accuracy "
            << ftf::format_double(totals.final_accuracy()) << ", stored " << report.stored_datapoints << '\n';
  for (const auto& d : report.decisions) {
    std::cout << "cycle " << d.cycle_index << ": " << (d.applied ? "applied" : "rejected, " + d.reason) << '\n';
  }
  return 0;
}

int serve(const std::string& config_file, const std::string& data_dir, std::optional<int> port,
          const std::string& model_file, const std::string& holdout_file) {
  const auto cfg = config_file.empty() ? ftf::Config{} : ftf::Config::load(config_file);
  auto sc = ftf::ServiceConfig::from_config(cfg);
  sc.apply_environment();
  if (!data_dir.empty()) sc.data_dir = data_dir;
  if (port) sc.port = *port;

  ftf::FtfService service(sc);
  if (!model_file.empty()) {
    service.register_model(std::make_shared<const ftf::ModelArtifact>(ftf::load_model(model_file)));
  }
  if (!holdout_file.empty()) service.set_holdout(ftf::load_records(holdout_file));
  if (!service.models().current()) {
    std::cerr << "warning: no model registered; /classify answers 503 until one is provided\n";
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const int bound = service.start(sc.port);
  std::cout << "listening on " << sc.host << ':' << bound << std::endl;
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
  return 0;
}

int train_cmd(const std::string& data, const std::string& out) {
  const auto records = load_training(data);
  const auto model = ftf::train<double>(records, ftf::LabelSet::initial());
  ftf::save_model(out, model);
  for (const auto& [label, n] : model.trained_on) std::cout << label.name() << ' ' << n << '\n';
  return 0;
}

int evaluate_cmd(const std::string& model_file, const std::string& data, const std::string& labels_file) {
  const auto model = ftf::load_model(model_file);
  std::shared_ptr<const ftf::LabelSet> set = std::make_shared<const ftf::LabelSet>(ftf::LabelSet::initial());
  if (!labels_file.empty()) set = ftf::LabelRegistry(labels_file).current();
  const auto records = ftf::load_records(data);
  const auto report = ftf::evaluate<double>(model, records, *set);
  ftf::write_report_csv(std::cout, report);
  return 0;
}

int labels_cmd(const std::string& file, const std::vector<std::string>& add) {
  ftf::LabelRegistry registry(file);
  if (!add.empty()) {
    std::vector<ftf::GenderLabel> labels;
    for (const auto& a : add) labels.emplace_back(a);
    registry.extend(labels);
  }
  for (const auto& set : registry.history()) std::cout << ftf::format_label_line(*set) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feedback-driven gender label classification"};
  app.require_subcommand(1);

  std::string spec_file, behavior_file, policy_file, out_dir;
  std::size_t epochs = 10;
  std::optional<std::uint64_t> seed;
  double t1_seconds = 5.0;
  auto* sim = app.add_subcommand("simulate", "Run a synthetic feedback scenario");
  sim->add_option("--spec", spec_file, "Population spec (JSON)")->required()->check(CLI::ExistingFile);
  sim->add_option("--behavior", behavior_file, "Feedback behaviour (JSON)")->required()->check(CLI::ExistingFile);
  sim->add_option("--policy", policy_file, "Update policy (key=value)")->check(CLI::ExistingFile);
  sim->add_option("--epochs", epochs, "Number of evaluation intervals")->check(CLI::PositiveNumber);
  sim->add_option("--seed", seed, "Overrides the spec seed");
  sim->add_option("--t1", t1_seconds, "Feedback window in seconds")->check(CLI::PositiveNumber);
  sim->add_option("--out", out_dir, "Output directory")->required();

  std::string config_file, data_dir, model_file, holdout_file;
  std::optional<int> port;
  auto* srv = app.add_subcommand("serve", "Serve the feedback loop over HTTP");
  srv->add_option("--config", config_file, "Service config (key=value)")->check(CLI::ExistingFile);
  srv->add_option("--data-dir", data_dir, "State directory");
  srv->add_option("--port", port, "Listen port");
  srv->add_option("--model", model_file, "Model to register at startup")->check(CLI::ExistingFile);
  srv->add_option("--holdout", holdout_file, "Holdout records (JSON lines)")->check(CLI::ExistingFile);

  std::string train_data, train_out;
  auto* trn = app.add_subcommand("train", "Train the nearest-centroid baseline");
  trn->add_option("--data", train_data, "Training records (JSON lines)")->required()->check(CLI::ExistingFile);
  trn->add_option("--out", train_out, "Model output file")->required();

  std::string eval_model, eval_data, eval_labels;
  auto* evl = app.add_subcommand("evaluate", "Per-group TPRs of a model");
  evl->add_option("--model", eval_model)->required()->check(CLI::ExistingFile);
  evl->add_option("--data", eval_data, "Records with truth and group")->required()->check(CLI::ExistingFile);
  evl->add_option("--labels", eval_labels, "Label file (defaults to the initial set)")->check(CLI::ExistingFile);

  std::string labels_file;
  std::vector<std::string> add;
  auto* lbl = app.add_subcommand("labels", "Show or extend the label registry");
  lbl->add_option("--file", labels_file)->required();
  lbl->add_option("--add", add, "Labels to append as a new version");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) return simulate(spec_file, behavior_file, policy_file, epochs, seed, out_dir, t1_seconds);
    if (*srv) return serve(config_file, data_dir, port, model_file, holdout_file);
    if (*trn) return train_cmd(train_data, train_out);
    if (*evl) return evaluate_cmd(eval_model, eval_data, eval_labels);
    if (*lbl) return labels_cmd(labels_file, add);
  } catch (const ftf::Error& e) {
    std::cerr << "error (" << ftf::to_string(e.kind()) << "): " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
