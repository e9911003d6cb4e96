#include "lfloop/prompting.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>

#include "lfloop/errors.hpp"
#include "lfloop/math.hpp"

namespace lfloop {

using nlohmann::json;

std::string_view to_string(PromptMethod m) {
  switch (m) {
    case PromptMethod::FewShot: return "few_shot";
    case PromptMethod::CoT: return "cot";
    case PromptMethod::SelfConsistency: return "self_consistency";
  }
  return "few_shot";
}

std::string_view to_string(IcSelector s) { return s == IcSelector::Kate ? "kate" : "class_balanced"; }

PromptMethod prompt_method_from_string(std::string_view s) {
  if (s == "few_shot") return PromptMethod::FewShot;
  if (s == "cot") return PromptMethod::CoT;
  if (s == "self_consistency" || s == "sc") return PromptMethod::SelfConsistency;
  throw ConfigError("unknown prompt method '" + std::string(s) + "'");
}

IcSelector ic_selector_from_string(std::string_view s) {
  if (s == "class_balanced") return IcSelector::ClassBalanced;
  if (s == "kate") return IcSelector::Kate;
  throw ConfigError("unknown in-context selector '" + std::string(s) + "'");
}

double PromptSpec::effective_temperature() const {
  if (temperature) return *temperature;
  return method == PromptMethod::SelfConsistency ? 1.0 : 0.0;
}

void PromptSpec::validate() const {
  if (n_responses < 1) throw ConfigError("n_responses must be >= 1");
  if (method != PromptMethod::SelfConsistency && n_responses != 1)
    throw ConfigError("only self-consistency takes more than one response");
  if (k < 1) throw ConfigError("in-context example count must be >= 1");
  if (temperature && *temperature < 0) throw ConfigError("temperature must be >= 0");
}

// ---- manual annotations ----

Annotations read_annotations(std::istream& in) {
  Annotations out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManualAnnotation a;
      a.id = j.at("id").get<InstanceId>();
      if (j.contains("keywords")) a.keywords = j["keywords"].get<std::vector<std::string>>();
      if (j.contains("patterns")) a.patterns = j["patterns"].get<std::vector<std::string>>();
      if (j.contains("rationale") && !j["rationale"].is_null()) a.rationale = j["rationale"].get<std::string>();
      if (!out.emplace(a.id, a).second) throw LoadError("duplicate annotation for instance " + std::to_string(a.id), lineno);
    } catch (const json::exception& e) {
      throw LoadError(std::string("malformed annotation: ") + e.what(), lineno);
    }
  }
  return out;
}

Annotations load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open annotations " + path.string());
  return read_annotations(in);
}

void write_annotations(std::ostream& out, const Annotations& annotations) {
  for (const auto& [id, a] : annotations) {
    json j = {{"id", id}};
    if (!a.keywords.empty()) j["keywords"] = a.keywords;
    if (!a.patterns.empty()) j["patterns"] = a.patterns;
    if (a.rationale) j["rationale"] = *a.rationale;
    out << j.dump() << '\n';
  }
}

// ---- prompt text ----

namespace {

bool relation(const Dataset& d) { return d.task_kind == TaskKind::RelationClassification; }

std::string class_list(const Dataset& d) {
  std::string s;
  for (std::size_t i = 0; i < d.classes.size(); ++i) s += (i ? ", " : "") + d.classes[i];
  return s;
}

std::string system_message(const Dataset& d, bool cot, bool annotation) {
  std::string s;
  if (!d.description.empty()) {
    s += d.description + "\n\n";
  } else if (relation(d)) {
    s += "Each passage marks two entities, E1 and E2. Classify the relationship between E1 and E2.\n\n";
  } else {
    s += "Classify each passage into one of the classes below.\n\n";
  }
  s += "Classes:\n";
  for (std::size_t i = 0; i < d.classes.size(); ++i) {
    s += "- " + d.classes[i];
    if (i < d.class_definitions.size() && !d.class_definitions[i].empty()) s += ": " + d.class_definitions[i];
    s += "\n";
  }
  s += "\n";
  if (annotation)
    s += "The correct label of each passage is given. Justify it";
  else
    s += "Predict the label of each passage and justify it";
  if (relation(d))
    s += " with regular expressions that match the passage and indicate the label. Write {{E1}} and {{E2}} "
         "where the entity mentions appear. Backreferences and lookaround are not allowed.\n";
  else
    s += " with indicative keywords: phrases of one to three words that appear in the passage and "
         "indicate the label.\n";
  if (cot) s += "Provide a step-by-step reasoning process before predicting the label.\n";
  s += "\nAnswer in exactly this format:\n";
  if (cot) s += "REASONING: <step-by-step reasoning>\n";
  s += "LABEL: <one of " + class_list(d) + ">\n";
  if (relation(d))
    s += "PATTERNS:\n- <regular expression>\n- <regular expression>\n(or PATTERNS: NONE)\n";
  else
    s += "KEYWORDS: <keyword>; <keyword>; ... (or KEYWORDS: NONE)\n";
  return s;
}

std::string passage_message(const Dataset& d, const Instance& x) {
  std::string s = "Passage: " + x.text + "\n";
  if (relation(d)) {
    if (!x.entity1 || !x.entity2)
      throw UsageError("relation instance " + std::to_string(x.id) + " lacks entity mentions");
    s += "E1: " + x.entity1->text + "\nE2: " + x.entity2->text +
         "\nWhat is the relationship between E1 and E2?\n";
  }
  return s;
}

}  // namespace

std::vector<ChatMessage> build_task_prompt(const Dataset& dataset, const Instance& query,
                                           const std::vector<ICExample>& examples, bool cot) {
  std::vector<ChatMessage> out;
  out.push_back({Role::System, system_message(dataset, cot, false)});
  for (const auto& ex : examples) {
    if (cot && !ex.rationale)
      throw UsageError("in-context example " + std::to_string(ex.instance.id) + " has no rationale");
    out.push_back({Role::User, passage_message(dataset, ex.instance)});
    ParsedResponse r;
    r.label = ex.label;
    if (relation(dataset))
      r.patterns = ex.patterns;
    else
      r.keywords = ex.keywords;
    if (cot) r.rationale = ex.rationale;
    out.push_back({Role::Assistant, render_response(r, dataset.task_kind, dataset.classes, cot)});
  }
  out.push_back({Role::User, passage_message(dataset, query)});
  return out;
}

std::vector<ChatMessage> build_annotation_prompt(const Dataset& dataset, const Instance& example, bool cot) {
  if (!example.gold) throw UsageError("annotation needs a labeled example");
  std::string user = passage_message(dataset, example);
  user += "Label: " + dataset.classes[static_cast<std::size_t>(*example.gold)] + "\n";
  user += "This label is correct. ";
  if (cot) user += "Explain step by step why the passage has this label, then ";
  user += relation(dataset) ? std::string(cot ? "give" : "Give") + " regular expressions that justify it."
                            : std::string(cot ? "give" : "Give") + " the indicative keywords that justify it.";
  return {{Role::System, system_message(dataset, cot, true)}, {Role::User, user}};
}

ScAggregate aggregate_sc(const std::vector<ParsedResponse>& responses, TaskKind task_kind, int num_classes) {
  ScAggregate out;
  std::vector<int> votes(static_cast<std::size_t>(num_classes), 0);
  bool any = false;
  for (const auto& r : responses)
    if (r.label && *r.label >= 0 && *r.label < num_classes) {
      ++votes[static_cast<std::size_t>(*r.label)];
      any = true;
    }
  if (any) out.label = static_cast<ClassIndex>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  for (const auto& r : responses) {
    const auto& items = task_kind == TaskKind::TextClassification ? r.keywords : r.patterns;
    for (const auto& p : items)
      if (std::find(out.payloads.begin(), out.payloads.end(), p) == out.payloads.end()) out.payloads.push_back(p);
  }
  return out;
}

std::vector<ICExample> select_ic_balanced(const std::vector<Instance>& valid, int num_classes, int k, Rng& rng,
                                          const Annotations& annotations, bool cot) {
  if (k < 1) throw ConfigError("k must be >= 1");
  std::vector<ICExample> out;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<const Instance*> pool;
    for (const auto& x : valid) {
      if (x.gold != c) continue;
      const auto it = annotations.find(x.id);
      if (it == annotations.end() || (cot && !it->second.rationale)) continue;
      pool.push_back(&x);
    }
    if (static_cast<int>(pool.size()) < k)
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                        " annotated validation examples, " + std::to_string(k) + " needed");
    std::sort(pool.begin(), pool.end(), [](auto a, auto b) { return a->id < b->id; });
    rng.shuffle(pool);
    for (int i = 0; i < k; ++i) {
      const Instance& x = *pool[static_cast<std::size_t>(i)];
      const auto& a = annotations.at(x.id);
      out.push_back({x, c, a.keywords, a.patterns, a.rationale});
    }
  }
  return out;
}

std::vector<InstanceId> kate_nearest(const Eigen::VectorXd& query, const EmbeddingTable& table,
                                     const std::vector<Instance>& valid, int k) {
  std::vector<std::pair<double, InstanceId>> scored;
  scored.reserve(valid.size());
  for (const auto& x : valid) {
    if (!table.contains(x.id)) throw UsageError("embedding missing for instance " + std::to_string(x.id));
    scored.emplace_back(cosine_distance(query, table.at(x.id)), x.id);
  }
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end());
  std::vector<InstanceId> out;
  for (std::size_t i = 0; i < take; ++i) out.push_back(scored[i].second);
  return out;
}

KateSelector::KateSelector(const Dataset& dataset, const EmbeddingTable& embeddings, ChatBackend& backend,
                           std::string model)
    : dataset_(&dataset), embeddings_(&embeddings), backend_(&backend), model_(std::move(model)) {}

std::size_t KateSelector::cache_size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

ICExample KateSelector::annotate(const Instance& example, bool cot) {
  {
    std::lock_guard lock(mutex_);
    const auto it = cache_.find({example.id, cot});
    if (it != cache_.end()) return it->second;
  }
  CompletionRequest req;
  req.messages = build_annotation_prompt(*dataset_, example, cot);
  req.temperature = 0.0;
  req.n = 1;
  req.model = model_;
  req.meta = {example.id, true, cot, example.gold};
  const auto parsed = parse_response(backend_->complete(req).at(0), dataset_->task_kind, dataset_->classes);
  ICExample ex{example, *example.gold, parsed.keywords, parsed.patterns, std::nullopt};
  if (cot) ex.rationale = parsed.rationale.value_or("");
  std::lock_guard lock(mutex_);
  return cache_.emplace(std::make_pair(example.id, cot), ex).first->second;
}

std::vector<ICExample> KateSelector::select(const Instance& query, int k, bool cot) {
  if (!embeddings_->contains(query.id))
    throw UsageError("embedding missing for instance " + std::to_string(query.id));
  std::vector<ICExample> out;
  for (auto id : kate_nearest(embeddings_->at(query.id), *embeddings_, dataset_->valid, k)) {
    const auto it = std::find_if(dataset_->valid.begin(), dataset_->valid.end(),
                                 [id](const Instance& x) { return x.id == id; });
    out.push_back(annotate(*it, cot));
  }
  return out;
}

}  // namespace lfloop
