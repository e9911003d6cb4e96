#include "lfloop/labelfns.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include "lfloop/errors.hpp"

namespace lfloop {

using nlohmann::json;

std::string_view to_string(LfKind kind) { return kind == LfKind::Keyword ? "keyword" : "pattern"; }

LabelFunction compile_lf(const LfSpec& spec, const std::vector<std::string>& classes,
                         TaskKind task_kind) {
  if (spec.target < 0 || spec.target >= static_cast<ClassIndex>(classes.size()))
    throw LfCompileError("class_out_of_range", "label not in candidate classes");
  LabelFunction lf;
  lf.spec_ = spec;
  if (spec.kind == LfKind::Keyword) {
    if (task_kind != TaskKind::TextClassification)
      throw LfCompileError("kind_task_mismatch", "keyword LFs apply only to text classification");
    lf.tokens_ = tokenize(spec.payload);
    const auto n = lf.tokens_.size();
    if (n == 0) throw LfCompileError("ngram_length", "ngram length 0 < 1");
    if (n > 3) throw LfCompileError("ngram_length", "ngram length " + std::to_string(n) + " > 3");
  } else {
    if (task_kind != TaskKind::RelationClassification)
      throw LfCompileError("kind_task_mismatch", "pattern LFs apply only to relation classification");
    try {
      lf.pattern_ = regex::Pattern::parse(spec.payload);
    } catch (const regex::RegexError& e) {
      const std::string what = e.what();
      const bool empty = what.find("empty string") != std::string::npos;
      throw LfCompileError(empty ? "regex_empty_match" : "regex_invalid", what);
    }
  }
  return lf;
}

LabelFunction compile_lf(const LfSpec& spec, const Dataset& dataset) {
  return compile_lf(spec, dataset.classes, dataset.task_kind);
}

ClassIndex LabelFunction::apply(const Instance& x, const std::vector<std::string>& tokens) const {
  if (spec_.kind == LfKind::Keyword) {
    const auto it = std::search(tokens.begin(), tokens.end(), tokens_.begin(), tokens_.end());
    return it != tokens.end() ? spec_.target : kAbstain;
  }
  if (!x.entity1 || !x.entity2)
    throw UsageError("pattern LF applied to instance " + std::to_string(x.id) + " without entities");
  const regex::Program program(*pattern_, x.entity1->text, x.entity2->text);
  return program.search(x.text) ? spec_.target : kAbstain;
}

ClassIndex LabelFunction::apply(const Instance& x) const {
  if (spec_.kind == LfKind::Keyword) return apply(x, tokenize(x.text));
  return apply(x, {});
}

PreparedSplit::PreparedSplit(const std::vector<Instance>& instances) : instances_(instances) {
  tokens_.reserve(instances_.size());
  for (const auto& x : instances_) tokens_.push_back(tokenize(x.text));
}

std::vector<ClassIndex> apply_column(const LabelFunction& lf, const PreparedSplit& split) {
  std::vector<ClassIndex> out(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) out[i] = lf.apply(split.instance(i), split.tokens(i));
  return out;
}

WeakLabelMatrix build_matrix(const std::vector<LabelFunction>& lfs, const PreparedSplit& split) {
  WeakLabelMatrix w;
  const auto n = static_cast<Eigen::Index>(split.size());
  const auto m = static_cast<Eigen::Index>(lfs.size());
  w.entries.resize(n, m);
  w.instance_ids.reserve(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) w.instance_ids.push_back(split.instance(i).id);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& lf = lfs[static_cast<std::size_t>(j)];
    w.column_class.push_back(lf.target());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      w.entries(i, j) = lf.apply(split.instance(ii), split.tokens(ii));
    }
  }
  return w;
}

WeakLabelMatrix build_matrix(const std::vector<LabelFunction>& lfs, const std::vector<Instance>& instances) {
  return build_matrix(lfs, PreparedSplit(instances));
}

LfStats lf_stats(const std::vector<ClassIndex>& column, const PreparedSplit& split) {
  if (column.size() != split.size()) throw UsageError("lf_stats: column length mismatch");
  LfStats s;
  std::size_t judged = 0, correct = 0;
  for (std::size_t i = 0; i < column.size(); ++i) {
    if (column[i] == kAbstain) continue;
    ++s.n_active;
    if (const auto g = split.gold(i)) {
      ++judged;
      correct += *g == column[i];
    }
  }
  s.coverage = split.size() ? static_cast<double>(s.n_active) / static_cast<double>(split.size()) : 0.0;
  if (judged) s.accuracy = static_cast<double>(correct) / static_cast<double>(judged);
  return s;
}

LfStats lf_stats(const LabelFunction& lf, const PreparedSplit& split) {
  return lf_stats(apply_column(lf, split), split);
}

LfStats lf_stats(const LabelFunction& lf, const std::vector<Instance>& instances) {
  return lf_stats(lf, PreparedSplit(instances));
}

std::vector<LfSpec> read_lf_specs(std::istream& in) {
  std::vector<LfSpec> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      LfSpec s;
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "keyword")
        s.kind = LfKind::Keyword;
      else if (kind == "pattern")
        s.kind = LfKind::Pattern;
      else
        throw LoadError("unknown LF kind '" + kind + "'", lineno);
      s.payload = j.at("payload").get<std::string>();
      s.target = j.at("class").get<ClassIndex>();
      s.provenance.iteration = j.value("iteration", 0);
      s.provenance.query_id = j.value("query_id", InstanceId{-1});
      s.provenance.response_index = j.value("response_index", 0);
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw LoadError(std::string("LF set: ") + e.what(), lineno);
    }
  }
  return out;
}

std::vector<LfSpec> load_lf_specs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  return read_lf_specs(in);
}

void write_lf_specs(std::ostream& out, const std::vector<LfSpec>& specs) {
  for (const auto& s : specs) {
    json j;
    j["kind"] = std::string(to_string(s.kind));
    j["payload"] = s.payload;
    j["class"] = s.target;
    j["iteration"] = s.provenance.iteration;
    j["query_id"] = s.provenance.query_id;
    j["response_index"] = s.provenance.response_index;
    out << j.dump() << '\n';
  }
}

LabelMatrix read_weak_labels(std::istream& in, const std::vector<Instance>& instances, int num_classes) {
  std::unordered_map<InstanceId, std::vector<int>> rows;
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::size_t> m;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    InstanceId id;
    std::vector<int> labels;
    try {
      const json j = json::parse(line);
      id = j.at("id").get<InstanceId>();
      labels = j.at("labels").get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw LoadError(std::string("weak labels: ") + e.what(), lineno);
    }
    if (m && *m != labels.size()) throw LoadError("weak labels: inconsistent LF count", lineno);
    m = labels.size();
    for (int v : labels)
      if (v < kAbstain || v >= num_classes) throw LoadError("weak labels: label out of range", lineno);
    if (!rows.emplace(id, std::move(labels)).second)
      throw LoadError("weak labels: duplicate id " + std::to_string(id), lineno);
  }
  LabelMatrix out(static_cast<Eigen::Index>(instances.size()), static_cast<Eigen::Index>(m.value_or(0)));
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto it = rows.find(instances[i].id);
    if (it == rows.end())
      throw LoadError("weak labels: missing row for instance " + std::to_string(instances[i].id));
    for (std::size_t j = 0; j < it->second.size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = it->second[j];
  }
  return out;
}

}  // namespace lfloop
