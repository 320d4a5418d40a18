#include "ftf/classifier.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace ftf {

GenderLabel relabel(SourceLabel source) {
  return source == SourceLabel::Male ? GenderLabel("man") : GenderLabel("woman");
}

SourceLabel parse_source_label(std::string_view text) {
  const std::string folded = fold(text);
  if (folded == "male") return SourceLabel::Male;
  if (folded == "female") return SourceLabel::Female;
  throw Error(ErrorKind::InvalidLabel, "training labels must be male or female, got '" + std::string(text) + "'");
}

double EvaluationReport::tpr_group(const std::string& group) const {
  const auto it = by_group.find(group);
  return it == by_group.end() ? 0.0 : it->second.rate();
}

double EvaluationReport::tpr_label(const std::string& label) const {
  const auto it = by_label.find(label);
  return it == by_label.end() ? 0.0 : it->second.rate();
}

NearestCentroidClassifier::NearestCentroidClassifier(std::shared_ptr<const ModelArtifact> model)
    : model_(std::move(model)) {
  if (!model_) throw Error(ErrorKind::ModelUnavailable, "null model");
}

FeatureVector NearestCentroidClassifier::features(const FaceRecord& rec) const {
  return pipeline_features(rec, *model_);
}

Prediction NearestCentroidClassifier::classify(const FaceRecord& rec, const LabelSet& set) const {
  return ftf::classify(rec, *model_, set);
}

EvaluationReport evaluate(const Classifier& classifier, std::span<const FaceRecord> eval_set, const LabelSet& set) {
  return evaluate_with<double>(eval_set, [&](const FaceRecord& r) { return classifier.classify(r, set); });
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string join_vector(const Vector<double>& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  return out;
}

Vector<double> parse_vector(std::string_view csv) {
  std::vector<double> values;
  while (!csv.empty()) {
    const auto comma = csv.find(',');
    const std::string_view cell = csv.substr(0, comma);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
      throw Error(ErrorKind::ParseError, "bad number '" + std::string(cell) + "'");
    }
    values.push_back(v);
    if (comma == std::string_view::npos) break;
    csv.remove_prefix(comma + 1);
  }
  return Eigen::Map<const Vector<double>>(values.data(), static_cast<Eigen::Index>(values.size()));
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cells;
  while (true) {
    const auto tab = line.find('\t');
    cells.push_back(line.substr(0, tab));
    if (tab == std::string_view::npos) break;
    line.remove_prefix(tab + 1);
  }
  return cells;
}

long long parse_int(std::string_view text, std::string_view what) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(ErrorKind::ParseError, "bad " + std::string(what) + ": '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace

void write_model(std::ostream& out, const ModelArtifact& model) {
  out << "ftf-model\tversion=" << model.model_version << "\td=" << model.input_dimension() << '\n';
  out << "#mean\t" << join_vector(model.stats.mean) << '\n';
  out << "#scale\t" << join_vector(model.stats.scale) << '\n';
  if (!model.mask.identity()) {
    out << "#mask\t";
    for (std::size_t i = 0; i < model.mask.dims.size(); ++i) out << (i ? "," : "") << model.mask.dims[i];
    out << '\n';
  }
  for (const auto& [label, n] : model.trained_on) out << "#count\t" << label.name() << '\t' << n << '\n';
  for (const auto& [label, centroid] : model.centroids) out << label.name() << '\t' << join_vector(centroid) << '\n';
}

ModelArtifact read_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::ParseError, "empty model file");
  const auto header = split_tabs(line);
  if (header.size() != 3 || header[0] != "ftf-model" || !header[1].starts_with("version=") ||
      !header[2].starts_with("d=")) {
    throw Error(ErrorKind::ParseError, "bad model header");
  }
  ModelArtifact model;
  model.model_version = static_cast<int>(parse_int(header[1].substr(8), "model version"));
  const auto d = static_cast<Eigen::Index>(parse_int(header[2].substr(2), "dimension"));
  if (model.model_version < 1 || d < 1) throw Error(ErrorKind::ParseError, "bad model header values");

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    if (cells[0] == "#mean" && cells.size() == 2) {
      model.stats.mean = parse_vector(cells[1]);
    } else if (cells[0] == "#scale" && cells.size() == 2) {
      model.stats.scale = parse_vector(cells[1]);
    } else if (cells[0] == "#mask" && cells.size() == 2) {
      const auto dims = parse_vector(cells[1]);
      for (Eigen::Index i = 0; i < dims.size(); ++i) model.mask.dims.push_back(static_cast<Eigen::Index>(dims[i]));
    } else if (cells[0] == "#count" && cells.size() == 3) {
      model.trained_on[GenderLabel(cells[1])] = static_cast<std::size_t>(parse_int(cells[2], "count"));
    } else if (cells.size() == 2 && !cells[0].starts_with("#")) {
      model.centroids.emplace(GenderLabel(cells[0]), parse_vector(cells[1]));
    } else {
      throw Error(ErrorKind::ParseError, "unrecognized model line: " + line);
    }
  }

  if (model.stats.mean.size() != d || model.stats.scale.size() != d) {
    throw Error(ErrorKind::ParseError, "stats dimension does not match header");
  }
  if (!(model.stats.scale.array() > 0.0).all()) throw Error(ErrorKind::ParseError, "non-positive scale");
  for (const auto& [label, c] : model.centroids) {
    if (c.size() != model.feature_dimension()) throw Error(ErrorKind::ParseError, "centroid dimension mismatch");
    if (!model.trained_on.count(label)) throw Error(ErrorKind::ParseError, "centroid without count: " + label.name());
  }
  if (model.centroids.empty()) throw Error(ErrorKind::ParseError, "model has no centroids");
  return model;
}

void save_model(const std::filesystem::path& file, const ModelArtifact& model) {
  const auto tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp);
    write_model(out, model);
  }
  std::filesystem::rename(tmp, file);
}

ModelArtifact load_model(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::Io, "cannot open model " + file.string());
  return read_model(in);
}

void write_report_csv(std::ostream& out, const EvaluationReport& report) {
  out << "group,total,correct,tpr\n";
  for (const auto& [group, t] : report.by_group) {
    out << group << ',' << t.total << ',' << t.correct << ',' << format_double(t.rate()) << '\n';
  }
}

std::vector<GroupRate> read_report_csv(std::istream& in) {
  std::vector<GroupRate> rows;
  std::string line;
  if (!std::getline(in, line)) return rows;
  if (line != "group,total,correct,tpr") throw Error(ErrorKind::ParseError, "unexpected TPR CSV header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    GroupRate r;
    std::string total, correct, tpr;
    if (!std::getline(ss, r.group, ',') || !std::getline(ss, total, ',') || !std::getline(ss, correct, ',') ||
        !std::getline(ss, tpr)) {
      throw Error(ErrorKind::ParseError, "bad TPR CSV row: " + line);
    }
    r.total = static_cast<std::size_t>(parse_int(total, "total"));
    r.correct = static_cast<std::size_t>(parse_int(correct, "correct"));
    r.tpr = parse_vector(tpr)[0];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace ftf
