#include "ftf/consent.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "ftf/error.hpp"

namespace ftf {
namespace {

using nlohmann::json;

ConsentedDatapoint parse_datapoint(const json& j) {
  const auto values = j.at("features").get<std::vector<double>>();
  return ConsentedDatapoint{
      j.at("record_id").get<std::string>(),
      FeatureVector(Eigen::Map<const Vector<double>>(values.data(), static_cast<Eigen::Index>(values.size()))),
      GenderLabel(j.at("label").get<std::string>()),
      parse_provenance(j.at("provenance").get<std::string>()),
      true,
      from_millis(j.at("stored_at").get<std::int64_t>())};
}

}  // namespace

bool retainable(Provenance p) noexcept {
  return p == Provenance::UserConfirmed || p == Provenance::UserCorrected;
}

std::string datapoint_line(const ConsentedDatapoint& point) {
  nlohmann::ordered_json j;
  j["record_id"] = point.record_id;
  const auto& v = point.features.values();
  j["features"] = std::vector<double>(v.data(), v.data() + v.size());
  j["label"] = point.final_label.name();
  j["provenance"] = to_string(point.provenance);
  j["stored_at"] = to_millis(point.stored_at);
  return j.dump();
}

ConsentStore::ConsentStore(std::filesystem::path file) : file_(std::move(file)) {
  std::ifstream in(file_);
  std::string line;
  int lineno = 0;
  while (in && std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      if (j.contains("purge")) {
        const auto id = j.at("purge").get<std::string>();
        std::erase_if(points_, [&](const ConsentedDatapoint& p) { return p.record_id == id; });
      } else {
        points_.push_back(parse_datapoint(j));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError, file_.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

bool ConsentStore::record(const FeedbackSession& session, const FeatureVector& features, bool consent,
                          Timestamp now) {
  if (session.state != SessionState::Resolved || !session.resolution) {
    throw Error(ErrorKind::SessionUnresolved, "session " + session.session_id);
  }
  if (!consent) return false;
  const auto* label = std::get_if<GenderLabel>(&session.resolution->label);
  if (!label || !retainable(session.resolution->provenance)) return false;

  ConsentedDatapoint point{session.record_id, features, *label, session.resolution->provenance, true, now};
  std::lock_guard lock(mutex_);
  append_line(datapoint_line(point));
  points_.push_back(std::move(point));
  return true;
}

std::vector<LabeledFeatures> ConsentStore::export_training_batch(
    const std::map<GenderLabel, std::size_t>& min_label_counts) const {
  std::lock_guard lock(mutex_);
  std::map<GenderLabel, std::size_t> counts;
  for (const auto& p : points_) ++counts[p.final_label];
  for (const auto& [label, minimum] : min_label_counts) {
    const auto it = counts.find(label);
    if ((it == counts.end() ? 0 : it->second) < minimum) return {};
  }
  std::vector<LabeledFeatures> batch;
  batch.reserve(points_.size());
  for (const auto& p : points_) batch.push_back({p.features, p.final_label});
  return batch;
}

bool ConsentStore::purge(const std::string& record_id) {
  std::lock_guard lock(mutex_);
  const auto removed =
      std::erase_if(points_, [&](const ConsentedDatapoint& p) { return p.record_id == record_id; });
  if (removed == 0) return false;
  append_line(nlohmann::json{{"purge", record_id}}.dump());
  return true;
}

void ConsentStore::compact() {
  std::lock_guard lock(mutex_);
  if (file_.empty() || !std::filesystem::exists(file_)) return;
  const auto tmp = file_.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp);
    for (const auto& p : points_) out << datapoint_line(p) << '\n';
  }
  std::filesystem::rename(tmp, file_);
}

std::vector<ConsentedDatapoint> ConsentStore::datapoints() const {
  std::lock_guard lock(mutex_);
  return points_;
}

std::map<GenderLabel, std::size_t> ConsentStore::label_counts() const {
  std::lock_guard lock(mutex_);
  std::map<GenderLabel, std::size_t> counts;
  for (const auto& p : points_) ++counts[p.final_label];
  return counts;
}

std::size_t ConsentStore::size() const {
  std::lock_guard lock(mutex_);
  return points_.size();
}

bool ConsentStore::contains(const std::string& record_id) const {
  std::lock_guard lock(mutex_);
  return std::any_of(points_.begin(), points_.end(),
                     [&](const ConsentedDatapoint& p) { return p.record_id == record_id; });
}

void ConsentStore::append_line(const std::string& line) {
  if (file_.empty()) return;
  std::ofstream out(file_, std::ios::app);
  if (!out) throw Error(ErrorKind::Io, "cannot append to " + file_.string());
  out << line << '\n';
}

}  // namespace ftf
