#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ftf {

/// Trims ASCII whitespace and lower-cases ASCII letters. Bytes outside ASCII
/// pass through untouched.
std::string fold(std::string_view raw);

/// Feedback token meaning "do not categorize me". Folded before comparison,
/// so "DECLINE" and " decline " are equivalent. Never a valid label name.
inline constexpr std::string_view kDeclineToken = "decline";
inline constexpr std::string_view kUnclassifiableName = "UNCLASSIFIABLE";

/// A folded, non-empty label token. Tabs, commas, whitespace and a leading
/// '#' are rejected because they are separators in the persisted formats.
class GenderLabel {
 public:
  explicit GenderLabel(std::string_view raw);

  const std::string& name() const noexcept { return name_; }

  friend bool operator==(const GenderLabel&, const GenderLabel&) = default;
  friend std::strong_ordering operator<=>(const GenderLabel&, const GenderLabel&) = default;

 private:
  std::string name_;
};

/// Marker for a datapoint whose owner refuses categorization. Distinct from
/// every GenderLabel; never part of a LabelSet.
struct Unclassifiable {
  friend bool operator==(Unclassifiable, Unclassifiable) = default;
};

using LabelOrSentinel = std::variant<GenderLabel, Unclassifiable>;

std::string to_string(const LabelOrSentinel& label);
LabelOrSentinel parse_label_or_sentinel(std::string_view text);
bool is_sentinel(const LabelOrSentinel& label) noexcept;

/// Immutable, versioned, extension-only collection of labels.
class LabelSet {
 public:
  LabelSet(int version, std::vector<GenderLabel> labels, std::int64_t created_at = 0);

  /// Version 1: man, woman, non-binary.
  static LabelSet initial(std::int64_t created_at = 0);

  int version() const noexcept { return version_; }
  const std::vector<GenderLabel>& labels() const noexcept { return labels_; }
  std::int64_t created_at() const noexcept { return created_at_; }

  bool contains(const GenderLabel& label) const noexcept;
  /// Folded lookup of free text; nullopt when the text names no member.
  std::optional<GenderLabel> find(std::string_view raw) const;

 private:
  int version_;
  std::vector<GenderLabel> labels_;
  std::int64_t created_at_;
};

struct FeedbackVerdict {
  enum class Kind { Blank, Valid, Invalid };

  Kind kind;
  std::optional<GenderLabel> label;  // set iff kind == Valid

  static FeedbackVerdict blank() { return {Kind::Blank, std::nullopt}; }
  static FeedbackVerdict valid(GenderLabel l) { return {Kind::Valid, std::move(l)}; }
  static FeedbackVerdict invalid() { return {Kind::Invalid, std::nullopt}; }

  friend bool operator==(const FeedbackVerdict&, const FeedbackVerdict&) = default;
};

/// Total: empty/whitespace is Blank, a folded member is Valid, anything
/// else is Invalid.
FeedbackVerdict validate_feedback(std::string_view raw, const LabelSet& set);

/// Returns the next version with `new_labels` appended in the given order.
/// Throws EmptyExtension or DuplicateLabel.
LabelSet extend(const LabelSet& set, std::span<const GenderLabel> new_labels,
                std::int64_t created_at = 0);

/// One line of the append-only label file: `version<TAB>label1,label2,...`.
std::string format_label_line(const LabelSet& set);
LabelSet parse_label_line(std::string_view line);

/// Holds every LabelSet version ever published. Extensions are serialized;
/// readers receive shared immutable snapshots. With a backing file, each new
/// version is appended as one line.
class LabelRegistry {
 public:
  LabelRegistry();
  explicit LabelRegistry(std::filesystem::path file);

  std::shared_ptr<const LabelSet> current() const;
  std::shared_ptr<const LabelSet> at(int version) const;
  std::vector<std::shared_ptr<const LabelSet>> history() const;

  std::shared_ptr<const LabelSet> extend(std::span<const GenderLabel> new_labels,
                                         std::int64_t created_at = 0);

 private:
  void append_to_file(const LabelSet& set) const;

  mutable std::mutex mutex_;
  std::vector<std::shared_ptr<const LabelSet>> versions_;
  std::filesystem::path file_;
};

}  // namespace ftf
