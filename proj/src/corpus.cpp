#include "lfloop/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "lfloop/errors.hpp"

namespace lfloop {

using nlohmann::json;

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::TextClassification ? "text" : "relation";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Valid:
      return "valid";
    case Split::Test:
      return "test";
  }
  return "?";
}

const std::vector<Instance>& Dataset::split(Split s) const {
  switch (s) {
    case Split::Train:
      return train;
    case Split::Valid:
      return valid;
    case Split::Test:
      return test;
  }
  throw UsageError("unknown split");
}

std::vector<Instance>& Dataset::split(Split s) {
  return const_cast<std::vector<Instance>&>(std::as_const(*this).split(s));
}

std::optional<ClassIndex> Dataset::class_index(std::string_view name) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& c = classes[i];
    if (c.size() == name.size() &&
        std::equal(c.begin(), c.end(), name.begin(), [](char a, char b) {
          return std::tolower(static_cast<unsigned char>(a)) ==
                 std::tolower(static_cast<unsigned char>(b));
        }))
      return static_cast<ClassIndex>(i);
  }
  return std::nullopt;
}

bool Dataset::train_has_gold() const {
  return !train.empty() &&
         std::all_of(train.begin(), train.end(), [](const Instance& x) { return x.gold.has_value(); });
}

std::size_t utf8_byte_offset(std::string_view text, std::size_t cp_offset) {
  std::size_t cp = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || (static_cast<unsigned char>(text[i]) & 0xC0) != 0x80) {
      if (cp == cp_offset) return i;
      ++cp;
    }
  }
  return std::string_view::npos;
}

namespace {

// Returns an error message, or empty when the instance is consistent.
std::string check_instance(const Instance& x, const Dataset& ds, Split split) {
  if (x.gold && (*x.gold < 0 || *x.gold >= ds.num_classes()))
    return "label " + std::to_string(*x.gold) + " out of range [0, " +
           std::to_string(ds.num_classes()) + ")";
  if (split != Split::Train && !x.gold) return "record in " + std::string(to_string(split)) +
                                               " split has no gold label";
  const bool relation = ds.task_kind == TaskKind::RelationClassification;
  if (relation && (!x.entity1 || !x.entity2)) return "relation instance needs entity1 and entity2";
  if (!relation && (x.entity1 || x.entity2)) return "text instance must not carry entities";
  for (const auto* e : {&x.entity1, &x.entity2}) {
    if (!*e) continue;
    const Entity& ent = **e;
    if (ent.start >= ent.end) return "bad entity span: start >= end";
    const auto b = utf8_byte_offset(x.text, ent.start);
    const auto en = utf8_byte_offset(x.text, ent.end);
    if (b == std::string_view::npos || en == std::string_view::npos)
      return "bad entity span: outside text bounds";
    if (std::string_view(x.text).substr(b, en - b) != ent.text)
      return "bad entity span: surface text '" + ent.text + "' does not match spanned substring";
  }
  return {};
}

Entity parse_entity(const json& j) {
  Entity e;
  e.text = j.at("text").get<std::string>();
  const auto start = j.at("start").get<std::int64_t>();
  const auto end = j.at("end").get<std::int64_t>();
  if (start < 0 || end < 0) throw LoadError("bad entity span: negative offset");
  e.start = static_cast<std::size_t>(start);
  e.end = static_cast<std::size_t>(end);
  return e;
}

json entity_json(const Entity& e) { return {{"text", e.text}, {"start", e.start}, {"end", e.end}}; }

std::ifstream open_or_throw(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw LoadError("cannot open " + p.string());
  return in;
}

}  // namespace

void Dataset::validate() const {
  if (classes.size() < 2) throw UsageError("dataset needs at least 2 classes");
  for (auto c : {default_class, positive_class})
    if (c && (*c < 0 || *c >= num_classes())) throw UsageError("class index out of range in schema");
  std::unordered_set<InstanceId> seen;
  for (auto s : {Split::Train, Split::Valid, Split::Test}) {
    for (const auto& x : split(s)) {
      if (!seen.insert(x.id).second) throw UsageError("duplicate instance id " + std::to_string(x.id));
      if (auto err = check_instance(x, *this, s); !err.empty())
        throw UsageError("instance " + std::to_string(x.id) + ": " + err);
    }
  }
}

Dataset parse_schema(std::istream& in) {
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError(std::string("schema: ") + e.what());
  }
  Dataset ds;
  try {
    const auto task = j.at("task").get<std::string>();
    if (task == "text")
      ds.task_kind = TaskKind::TextClassification;
    else if (task == "relation")
      ds.task_kind = TaskKind::RelationClassification;
    else
      throw LoadError("schema: unknown task '" + task + "'");
    ds.classes = j.at("classes").get<std::vector<std::string>>();
    if (ds.classes.size() < 2) throw LoadError("schema: need at least 2 classes");
    std::set<std::string> uniq(ds.classes.begin(), ds.classes.end());
    if (uniq.size() != ds.classes.size()) throw LoadError("schema: duplicate class names");
    auto lookup = [&](const char* key) -> std::optional<ClassIndex> {
      if (!j.contains(key) || j[key].is_null()) return std::nullopt;
      const auto name = j[key].get<std::string>();
      auto idx = ds.class_index(name);
      if (!idx) throw LoadError(std::string("schema: ") + key + " '" + name + "' is not a class");
      return idx;
    };
    ds.default_class = lookup("default_class");
    ds.positive_class = lookup("positive_class");
    if (j.contains("description")) ds.description = j["description"].get<std::string>();
    if (j.contains("class_definitions")) {
      ds.class_definitions = j["class_definitions"].get<std::vector<std::string>>();
      if (ds.class_definitions.size() != ds.classes.size())
        throw LoadError("schema: class_definitions must have one entry per class");
    }
  } catch (const json::exception& e) {
    throw LoadError(std::string("schema: ") + e.what());
  }
  return ds;
}

std::vector<Instance> parse_split(std::istream& in, const Dataset& schema, Split split,
                                  std::string_view source) {
  std::vector<Instance> out;
  std::string line;
  std::size_t lineno = 0;
  const std::string where = source.empty() ? std::string(to_string(split)) : std::string(source);
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }))
      continue;
    Instance x;
    try {
      const json j = json::parse(line);
      if (!j.contains("id")) throw LoadError(where + ": missing id", lineno);
      if (!j.contains("text")) throw LoadError(where + ": missing text", lineno);
      x.id = j.at("id").get<InstanceId>();
      x.text = j.at("text").get<std::string>();
      if (j.contains("label") && !j["label"].is_null()) x.gold = j["label"].get<ClassIndex>();
      if (j.contains("entity1") && !j["entity1"].is_null()) x.entity1 = parse_entity(j["entity1"]);
      if (j.contains("entity2") && !j["entity2"].is_null()) x.entity2 = parse_entity(j["entity2"]);
    } catch (const LoadError& e) {
      if (e.line()) throw;
      throw LoadError(where + ": " + e.what(), lineno);
    } catch (const json::exception& e) {
      throw LoadError(where + ": malformed record: " + e.what(), lineno);
    }
    if (auto err = check_instance(x, schema, split); !err.empty())
      throw LoadError(where + ": " + err, lineno);
    out.push_back(std::move(x));
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& train_path, const std::filesystem::path& valid_path,
                     const std::filesystem::path& test_path, const std::filesystem::path& schema_path) {
  auto schema_in = open_or_throw(schema_path);
  Dataset ds = parse_schema(schema_in);
  const std::pair<Split, const std::filesystem::path*> files[] = {
      {Split::Train, &train_path}, {Split::Valid, &valid_path}, {Split::Test, &test_path}};
  for (const auto& [split, path] : files) {
    auto in = open_or_throw(*path);
    ds.split(split) = parse_split(in, ds, split, path->string());
  }
  try {
    ds.validate();
  } catch (const UsageError& e) {
    throw LoadError(e.what());
  }
  return ds;
}

void write_schema(std::ostream& out, const Dataset& ds) {
  json j;
  j["task"] = std::string(to_string(ds.task_kind));
  j["classes"] = ds.classes;
  if (ds.default_class) j["default_class"] = ds.classes[*ds.default_class];
  if (ds.positive_class) j["positive_class"] = ds.classes[*ds.positive_class];
  if (!ds.description.empty()) j["description"] = ds.description;
  if (!ds.class_definitions.empty()) j["class_definitions"] = ds.class_definitions;
  out << j.dump(2) << '\n';
}

void write_split(std::ostream& out, const std::vector<Instance>& instances) {
  for (const auto& x : instances) {
    json j;
    j["id"] = x.id;
    j["text"] = x.text;
    if (x.gold) j["label"] = *x.gold;
    if (x.entity1) j["entity1"] = entity_json(*x.entity1);
    if (x.entity2) j["entity2"] = entity_json(*x.entity2);
    out << j.dump() << '\n';
  }
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "schema.json") << [&] {
    std::ostringstream s;
    write_schema(s, ds);
    return s.str();
  }();
  for (auto s : {Split::Train, Split::Valid, Split::Test}) {
    std::ofstream out(dir / (std::string(to_string(s)) + ".jsonl"));
    write_split(out, ds.split(s));
  }
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> extract_ngrams(const std::vector<std::string>& tokens, int n_min, int n_max) {
  if (n_min < 1 || n_max < n_min) throw UsageError("extract_ngrams: need 1 <= n_min <= n_max");
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (int n = n_min; n <= n_max; ++n) {
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
      std::string g = tokens[i];
      for (int k = 1; k < n; ++k) (g += ' ') += tokens[i + k];
      if (seen.insert(g).second) out.push_back(std::move(g));
    }
  }
  return out;
}

const Eigen::VectorXd& EmbeddingTable::at(InstanceId id) const {
  auto it = rows.find(id);
  if (it == rows.end()) throw UsageError("embedding missing for instance " + std::to_string(id));
  return it->second;
}

EmbeddingTable parse_embeddings(std::istream& in, const Dataset& dataset,
                                const std::vector<Split>& splits) {
  std::set<InstanceId> wanted;
  for (auto s : splits)
    for (const auto& x : dataset.split(s)) wanted.insert(x.id);

  EmbeddingTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }))
      continue;
    InstanceId id;
    std::vector<double> v;
    try {
      const json j = json::parse(line);
      id = j.at("id").get<InstanceId>();
      v = j.at("vector").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw LoadError(std::string("embeddings: malformed record: ") + e.what(), lineno);
    }
    if (!wanted.count(id)) continue;
    if (table.rows.count(id))
      throw LoadError("embeddings: duplicate row for instance " + std::to_string(id), lineno);
    if (table.dim == 0) table.dim = static_cast<int>(v.size());
    if (static_cast<int>(v.size()) != table.dim || v.empty())
      throw LoadError("embeddings: dimension mismatch for instance " + std::to_string(id) + " (" +
                          std::to_string(v.size()) + " vs " + std::to_string(table.dim) + ")",
                      lineno);
    Eigen::VectorXd row = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    if (row.squaredNorm() == 0.0)
      throw LoadError("embeddings: zero vector for instance " + std::to_string(id), lineno);
    table.rows.emplace(id, std::move(row));
  }
  for (auto id : wanted)
    if (!table.rows.count(id)) throw LoadError("embedding missing for instance " + std::to_string(id));
  return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, const Dataset& dataset,
                               const std::vector<Split>& splits) {
  auto in = open_or_throw(path);
  return parse_embeddings(in, dataset, splits);
}

}  // namespace lfloop
