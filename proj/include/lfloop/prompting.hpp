#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lfloop/corpus.hpp"
#include "lfloop/plmclient.hpp"
#include "lfloop/response_format.hpp"
#include "lfloop/rng.hpp"

namespace lfloop {

enum class PromptMethod { FewShot, CoT, SelfConsistency };
enum class IcSelector { ClassBalanced, Kate };

std::string_view to_string(PromptMethod m);
std::string_view to_string(IcSelector s);
PromptMethod prompt_method_from_string(std::string_view s);
IcSelector ic_selector_from_string(std::string_view s);

struct PromptSpec {
  PromptMethod method = PromptMethod::FewShot;
  int n_responses = 1;
  IcSelector selector = IcSelector::ClassBalanced;
  int k = 1;  // per class for ClassBalanced, in total for Kate
  std::optional<double> temperature;  // default: 0 for one response, 1 for self-consistency

  /// Self-consistency samples chain-of-thought responses.
  bool cot() const { return method != PromptMethod::FewShot; }
  double effective_temperature() const;
  void validate() const;
};

struct ICExample {
  Instance instance;
  ClassIndex label = 0;
  std::vector<std::string> keywords;
  std::vector<std::string> patterns;
  std::optional<std::string> rationale;
};

/// Hand-written payloads for class-balanced examples.
struct ManualAnnotation {
  InstanceId id = 0;
  std::vector<std::string> keywords;
  std::vector<std::string> patterns;
  std::optional<std::string> rationale;
};

using Annotations = std::map<InstanceId, ManualAnnotation>;
Annotations read_annotations(std::istream& in);
Annotations load_annotations(const std::filesystem::path& path);
void write_annotations(std::ostream& out, const Annotations& annotations);

/// System message, then a user/assistant pair per example, then the query.
std::vector<ChatMessage> build_task_prompt(const Dataset& dataset, const Instance& query,
                                           const std::vector<ICExample>& examples, bool cot);

/// Asks the model to justify the provided gold label of `example`.
std::vector<ChatMessage> build_annotation_prompt(const Dataset& dataset, const Instance& example, bool cot);

struct ScAggregate {
  std::optional<ClassIndex> label;    // nullopt when no response was parseable
  std::vector<std::string> payloads;  // keywords or patterns, first-occurrence order
};

/// Majority label over parseable responses (ties to the lowest class) and the
/// union of all payloads.
ScAggregate aggregate_sc(const std::vector<ParsedResponse>& responses, TaskKind task_kind, int num_classes);

/// k annotated validation examples per class, drawn once with `rng`.
/// Throws ConfigError when a class has fewer than k usable examples.
std::vector<ICExample> select_ic_balanced(const std::vector<Instance>& valid, int num_classes, int k, Rng& rng,
                                          const Annotations& annotations, bool cot);

/// The k validation instances closest to `query` by cosine distance, ties to
/// the lowest id, nearest first.
std::vector<InstanceId> kate_nearest(const Eigen::VectorXd& query, const EmbeddingTable& table,
                                     const std::vector<Instance>& valid, int k);

/// KATE example selection with PLM-written annotations, cached per (id, cot).
class KateSelector {
 public:
  KateSelector(const Dataset& dataset, const EmbeddingTable& embeddings, ChatBackend& backend,
               std::string model = "gpt-3.5-turbo");

  std::vector<ICExample> select(const Instance& query, int k, bool cot);
  ICExample annotate(const Instance& example, bool cot);
  std::size_t cache_size() const;

 private:
  const Dataset* dataset_;
  const EmbeddingTable* embeddings_;
  ChatBackend* backend_;
  std::string model_;
  mutable std::mutex mutex_;
  std::map<std::pair<InstanceId, bool>, ICExample> cache_;
};

}  // namespace lfloop
