#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lfloop {

using InstanceId = std::int64_t;
using ClassIndex = int;

enum class TaskKind { TextClassification, RelationClassification };
enum class Split { Train, Valid, Test };

std::string_view to_string(TaskKind kind);
std::string_view to_string(Split split);

/// Entity mention. `start`/`end` are half-open code-point offsets into the text.
struct Entity {
  std::string text;
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const Entity&) const = default;
};

struct Instance {
  InstanceId id = 0;
  std::string text;
  std::optional<Entity> entity1;
  std::optional<Entity> entity2;
  std::optional<ClassIndex> gold;

  bool operator==(const Instance&) const = default;
};

struct Dataset {
  TaskKind task_kind = TaskKind::TextClassification;
  std::vector<std::string> classes;
  std::optional<ClassIndex> default_class;
  // Class scored with binary F1 instead of accuracy (imbalanced datasets).
  std::optional<ClassIndex> positive_class;
  // Free-text task description and per-class definitions used in prompts.
  std::string description;
  std::vector<std::string> class_definitions;

  std::vector<Instance> train;
  std::vector<Instance> valid;
  std::vector<Instance> test;

  int num_classes() const { return static_cast<int>(classes.size()); }
  const std::vector<Instance>& split(Split s) const;
  std::vector<Instance>& split(Split s);
  std::optional<ClassIndex> class_index(std::string_view name) const;
  bool train_has_gold() const;

  /// Throws UsageError when a dataset invariant is violated.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

/// Loads the four dataset files (JSON-lines splits plus a JSON schema).
Dataset load_dataset(const std::filesystem::path& train_path,
                     const std::filesystem::path& valid_path,
                     const std::filesystem::path& test_path,
                     const std::filesystem::path& schema_path);

/// Stream variants, used by load_dataset and the tests. `source` names the
/// input in error messages.
Dataset parse_schema(std::istream& in);
std::vector<Instance> parse_split(std::istream& in, const Dataset& schema, Split split,
                                  std::string_view source = {});

void write_schema(std::ostream& out, const Dataset& dataset);
void write_split(std::ostream& out, const std::vector<Instance>& instances);
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Lowercase tokens from maximal alphanumeric runs. Bytes >= 0x80 count as
/// alphanumeric so UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view text);

/// Contiguous n-grams (space-joined) for n in [n_min, n_max], deduplicated in
/// first-occurrence order.
std::vector<std::string> extract_ngrams(const std::vector<std::string>& tokens, int n_min = 1,
                                        int n_max = 3);

std::string join_tokens(const std::vector<std::string>& tokens, std::string_view sep = " ");

/// Dense per-instance vectors supplied from outside (e.g. sentence embeddings).
struct EmbeddingTable {
  int dim = 0;
  std::map<InstanceId, Eigen::VectorXd> rows;

  const Eigen::VectorXd& at(InstanceId id) const;
  bool contains(InstanceId id) const { return rows.count(id) != 0; }
};

EmbeddingTable load_embeddings(const std::filesystem::path& path, const Dataset& dataset,
                               const std::vector<Split>& splits);
EmbeddingTable parse_embeddings(std::istream& in, const Dataset& dataset,
                                const std::vector<Split>& splits);

/// Byte offset of code point `cp_offset` in UTF-8 `text`, or npos if out of range.
std::size_t utf8_byte_offset(std::string_view text, std::size_t cp_offset);

}  // namespace lfloop
