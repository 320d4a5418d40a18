#include "ftf/labels.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "ftf/error.hpp"

namespace ftf {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace

std::string fold(std::string_view raw) {
  std::size_t first = 0;
  std::size_t last = raw.size();
  while (first < last && is_space(raw[first])) ++first;
  while (last > first && is_space(raw[last - 1])) --last;
  std::string out(raw.substr(first, last - first));
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

GenderLabel::GenderLabel(std::string_view raw) : name_(fold(raw)) {
  if (name_.empty()) throw Error(ErrorKind::InvalidLabel, "label name is empty");
  if (name_.front() == '#') throw Error(ErrorKind::InvalidLabel, "label may not start with '#': " + name_);
  for (char c : name_) {
    if (is_space(c) || c == ',') throw Error(ErrorKind::InvalidLabel, "label contains a separator: " + name_);
  }
  if (name_ == kDeclineToken || name_ == fold(kUnclassifiableName)) {
    throw Error(ErrorKind::InvalidLabel, "reserved token: " + name_);
  }
}

std::string to_string(const LabelOrSentinel& label) {
  if (const auto* l = std::get_if<GenderLabel>(&label)) return l->name();
  return std::string(kUnclassifiableName);
}

LabelOrSentinel parse_label_or_sentinel(std::string_view text) {
  if (text == kUnclassifiableName) return Unclassifiable{};
  return GenderLabel(text);
}

bool is_sentinel(const LabelOrSentinel& label) noexcept {
  return std::holds_alternative<Unclassifiable>(label);
}

LabelSet::LabelSet(int version, std::vector<GenderLabel> labels, std::int64_t created_at)
    : version_(version), labels_(std::move(labels)), created_at_(created_at) {
  if (version_ < 1) throw Error(ErrorKind::InvalidLabel, "label set version must be >= 1");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (labels_[i] == labels_[j]) throw Error(ErrorKind::DuplicateLabel, labels_[i].name());
    }
  }
}

LabelSet LabelSet::initial(std::int64_t created_at) {
  return LabelSet(1, {GenderLabel("man"), GenderLabel("woman"), GenderLabel("non-binary")}, created_at);
}

bool LabelSet::contains(const GenderLabel& label) const noexcept {
  return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
}

std::optional<GenderLabel> LabelSet::find(std::string_view raw) const {
  const std::string folded = fold(raw);
  for (const auto& l : labels_) {
    if (l.name() == folded) return l;
  }
  return std::nullopt;
}

FeedbackVerdict validate_feedback(std::string_view raw, const LabelSet& set) {
  if (fold(raw).empty()) return FeedbackVerdict::blank();
  if (auto hit = set.find(raw)) return FeedbackVerdict::valid(std::move(*hit));
  return FeedbackVerdict::invalid();
}

LabelSet extend(const LabelSet& set, std::span<const GenderLabel> new_labels, std::int64_t created_at) {
  if (new_labels.empty()) throw Error(ErrorKind::EmptyExtension, "no labels given");
  std::vector<GenderLabel> labels = set.labels();
  for (const auto& l : new_labels) {
    if (std::find(labels.begin(), labels.end(), l) != labels.end()) {
      throw Error(ErrorKind::DuplicateLabel, l.name());
    }
    labels.push_back(l);
  }
  return LabelSet(set.version() + 1, std::move(labels), created_at);
}

std::string format_label_line(const LabelSet& set) {
  std::string line = std::to_string(set.version()) + '\t';
  for (std::size_t i = 0; i < set.labels().size(); ++i) {
    if (i) line += ',';
    line += set.labels()[i].name();
  }
  return line;
}

LabelSet parse_label_line(std::string_view line) {
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos) throw Error(ErrorKind::ParseError, "label line lacks a tab");
  int version = 0;
  try {
    version = std::stoi(std::string(line.substr(0, tab)));
  } catch (const std::exception&) {
    throw Error(ErrorKind::ParseError, "bad label set version");
  }
  std::vector<GenderLabel> labels;
  std::string_view rest = line.substr(tab + 1);
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    labels.emplace_back(rest.substr(0, comma));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return LabelSet(version, std::move(labels));
}

LabelRegistry::LabelRegistry() { versions_.push_back(std::make_shared<const LabelSet>(LabelSet::initial())); }

LabelRegistry::LabelRegistry(std::filesystem::path file) : file_(std::move(file)) {
  std::ifstream in(file_);
  std::string line;
  while (in && std::getline(in, line)) {
    if (line.empty()) continue;
    auto parsed = std::make_shared<const LabelSet>(parse_label_line(line));
    if (versions_.empty()) {
      if (parsed->version() != 1) throw Error(ErrorKind::ParseError, "label file must start at version 1");
    } else {
      const auto& prev = *versions_.back();
      const bool prefix = parsed->labels().size() > prev.labels().size() &&
                          std::equal(prev.labels().begin(), prev.labels().end(), parsed->labels().begin());
      if (parsed->version() != prev.version() + 1 || !prefix) {
        throw Error(ErrorKind::ParseError, "label file is not an append-only extension chain");
      }
    }
    versions_.push_back(std::move(parsed));
  }
  if (versions_.empty()) {
    versions_.push_back(std::make_shared<const LabelSet>(LabelSet::initial()));
    append_to_file(*versions_.back());
  }
}

std::shared_ptr<const LabelSet> LabelRegistry::current() const {
  std::lock_guard lock(mutex_);
  return versions_.back();
}

std::shared_ptr<const LabelSet> LabelRegistry::at(int version) const {
  std::lock_guard lock(mutex_);
  if (version < 1 || static_cast<std::size_t>(version) > versions_.size()) return nullptr;
  return versions_[static_cast<std::size_t>(version) - 1];
}

std::vector<std::shared_ptr<const LabelSet>> LabelRegistry::history() const {
  std::lock_guard lock(mutex_);
  return versions_;
}

std::shared_ptr<const LabelSet> LabelRegistry::extend(std::span<const GenderLabel> new_labels,
                                                      std::int64_t created_at) {
  std::lock_guard lock(mutex_);
  auto next = std::make_shared<const LabelSet>(ftf::extend(*versions_.back(), new_labels, created_at));
  append_to_file(*next);
  versions_.push_back(next);
  return next;
}

void LabelRegistry::append_to_file(const LabelSet& set) const {
  if (file_.empty()) return;
  std::ofstream out(file_, std::ios::app);
  if (!out) throw Error(ErrorKind::Io, "cannot append to " + file_.string());
  out << format_label_line(set) << '\n';
}

}  // namespace ftf
