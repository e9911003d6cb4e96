#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfloop/corpus.hpp"
#include "lfloop/regex.hpp"

namespace lfloop {

inline constexpr ClassIndex kAbstain = -1;

/// n x m votes in {0..C-1} or kAbstain.
using LabelMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class LfKind { Keyword, Pattern };

std::string_view to_string(LfKind kind);

struct Provenance {
  int iteration = 0;
  InstanceId query_id = -1;
  int response_index = 0;

  bool operator==(const Provenance&) const = default;
};

/// An uncompiled label-function proposal.
struct LfSpec {
  LfKind kind = LfKind::Keyword;
  std::string payload;
  ClassIndex target = 0;
  Provenance provenance;

  bool operator==(const LfSpec&) const = default;
};

/// Why a proposal could not be compiled. `reason` is a short machine-readable code.
class LfCompileError : public std::invalid_argument {
 public:
  LfCompileError(std::string reason, const std::string& what)
      : std::invalid_argument(what), reason_(std::move(reason)) {}
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string reason_;
};

/// A compiled keyword or pattern label function. Immutable once built.
class LabelFunction {
 public:
  const LfSpec& spec() const { return spec_; }
  LfKind kind() const { return spec_.kind; }
  ClassIndex target() const { return spec_.target; }
  const std::string& payload() const { return spec_.payload; }
  const std::vector<std::string>& keyword_tokens() const { return tokens_; }

  /// Target class or kAbstain. `tokens` must be tokenize(x.text).
  ClassIndex apply(const Instance& x, const std::vector<std::string>& tokens) const;
  ClassIndex apply(const Instance& x) const;

 private:
  friend LabelFunction compile_lf(const LfSpec&, const std::vector<std::string>&, TaskKind);
  LfSpec spec_;
  std::vector<std::string> tokens_;
  std::optional<regex::Pattern> pattern_;
};

/// Throws LfCompileError with reasons: "ngram_length", "regex_invalid",
/// "regex_empty_match", "class_out_of_range", "kind_task_mismatch".
LabelFunction compile_lf(const LfSpec& spec, const std::vector<std::string>& classes,
                         TaskKind task_kind);
LabelFunction compile_lf(const LfSpec& spec, const Dataset& dataset);

inline ClassIndex apply_lf(const LabelFunction& lf, const Instance& x) { return lf.apply(x); }

/// Instances with their token sequences computed once.
class PreparedSplit {
 public:
  PreparedSplit() = default;
  explicit PreparedSplit(const std::vector<Instance>& instances);

  std::size_t size() const { return instances_.size(); }
  const Instance& instance(std::size_t i) const { return instances_[i]; }
  const std::vector<std::string>& tokens(std::size_t i) const { return tokens_[i]; }
  const std::vector<Instance>& instances() const { return instances_; }
  std::optional<ClassIndex> gold(std::size_t i) const { return instances_[i].gold; }

 private:
  std::vector<Instance> instances_;
  std::vector<std::vector<std::string>> tokens_;
};

/// Output of one LF over a split.
std::vector<ClassIndex> apply_column(const LabelFunction& lf, const PreparedSplit& split);

struct WeakLabelMatrix {
  LabelMatrix entries;
  std::vector<InstanceId> instance_ids;
  std::vector<ClassIndex> column_class;  // target class of column j

  Eigen::Index n() const { return entries.rows(); }
  Eigen::Index m() const { return entries.cols(); }
};

WeakLabelMatrix build_matrix(const std::vector<LabelFunction>& lfs, const PreparedSplit& split);
WeakLabelMatrix build_matrix(const std::vector<LabelFunction>& lfs,
                             const std::vector<Instance>& instances);

struct LfStats {
  double coverage = 0.0;
  std::optional<double> accuracy;
  std::size_t n_active = 0;
};

/// Accuracy counts only instances carrying gold labels; unavailable when no
/// active instance has one.
LfStats lf_stats(const std::vector<ClassIndex>& column, const PreparedSplit& split);
LfStats lf_stats(const LabelFunction& lf, const PreparedSplit& split);
LfStats lf_stats(const LabelFunction& lf, const std::vector<Instance>& instances);

/// LF set files: one JSON object per line.
std::vector<LfSpec> read_lf_specs(std::istream& in);
std::vector<LfSpec> load_lf_specs(const std::filesystem::path& path);
void write_lf_specs(std::ostream& out, const std::vector<LfSpec>& specs);

/// Externally computed LF outputs: lines {"id": int, "labels": [int]}, -1 = abstain.
/// Rows are returned in the order of `instances`.
LabelMatrix read_weak_labels(std::istream& in, const std::vector<Instance>& instances,
                             int num_classes);

}  // namespace lfloop
