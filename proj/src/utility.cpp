#include "ftf/utility.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

#include "ftf/error.hpp"

namespace ftf {

double accuracy_at(const EvaluationReport& report) {
  if (report.overall.total == 0) throw Error(ErrorKind::EmptyReport, "report has no countable records");
  return report.accuracy();
}

Observation observe(const FeedbackSession& session) {
  if (!session.resolution) throw Error(ErrorKind::Unresolved, "session " + session.session_id);
  return {session.resolution->provenance, session.raw_feedback.value_or("")};
}

bool out_of_vocabulary(const Observation& obs, const LabelSet& set) {
  switch (obs.provenance) {
    case Provenance::UserDeclined:
      return true;
    case Provenance::InvalidFallback:
      return validate_feedback(obs.feedback, set).kind == FeedbackVerdict::Kind::Invalid;
    default:
      return false;
  }
}

double incompleteness_at(std::span<const Observation> window, const LabelSet& set, double epsilon) {
  if (window.empty()) throw Error(ErrorKind::EmptyWindow, "no observations");
  const auto outside =
      std::count_if(window.begin(), window.end(), [&](const Observation& o) { return out_of_vocabulary(o, set); });
  return std::max(epsilon, static_cast<double>(outside) / static_cast<double>(window.size()));
}

double utility_at(double accuracy, double incompleteness, double c) { return c * accuracy / incompleteness; }

UtilityTracker::UtilityTracker(double c, double epsilon) : c_(c), epsilon_(epsilon) {
  if (!(c_ > 0.0)) throw Error(ErrorKind::InvalidConfig, "utility constant must be positive");
  if (!(epsilon_ > 0.0)) throw Error(ErrorKind::InvalidConfig, "incompleteness floor must be positive");
}

UtilitySnapshot UtilityTracker::record(std::int64_t t, double accuracy, double incompleteness) {
  const double l = std::max(incompleteness, epsilon_);
  UtilitySnapshot snap{t, accuracy, l, utility_at(accuracy, l, c_)};
  std::lock_guard lock(mutex_);
  series_.push_back(snap);
  return snap;
}

std::vector<UtilitySnapshot> UtilityTracker::series() const {
  std::lock_guard lock(mutex_);
  return series_;
}

void UtilityTracker::load(std::vector<UtilitySnapshot> series) {
  std::lock_guard lock(mutex_);
  series_ = std::move(series);
}

void write_utility_csv(std::ostream& out, std::span<const UtilitySnapshot> series) {
  out << "t,accuracy,incompleteness,utility\n";
  for (const auto& s : series) {
    out << s.t << ',' << format_double(s.accuracy) << ',' << format_double(s.incompleteness) << ','
        << format_double(s.utility) << '\n';
  }
}

std::vector<UtilitySnapshot> read_utility_csv(std::istream& in) {
  std::vector<UtilitySnapshot> out;
  std::string line;
  if (!std::getline(in, line)) return out;
  if (line != "t,accuracy,incompleteness,utility") throw Error(ErrorKind::ParseError, "unexpected utility header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(ErrorKind::ParseError, "bad utility row: " + line);
    const auto values = parse_vector(std::string_view(line).substr(comma + 1));
    if (values.size() != 3) throw Error(ErrorKind::ParseError, "bad utility row: " + line);
    UtilitySnapshot s;
    try {
      s.t = std::stoll(line.substr(0, comma));
    } catch (const std::exception&) {
      throw Error(ErrorKind::ParseError, "bad utility tick: " + line);
    }
    s.accuracy = values[0];
    s.incompleteness = values[1];
    s.utility = values[2];
    out.push_back(s);
  }
  return out;
}

}  // namespace ftf
