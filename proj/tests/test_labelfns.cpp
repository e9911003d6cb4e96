#include <doctest.h>

#include <sstream>

#include "lfloop/errors.hpp"
#include "lfloop/labelfns.hpp"
#include "lfloop/rng.hpp"

using namespace lfloop;

namespace {

const std::vector<std::string> kSpamClasses = {"ham", "spam"};
const std::vector<std::string> kRelClasses = {"none", "induces"};

LfSpec keyword(std::string payload, ClassIndex c) { return {LfKind::Keyword, std::move(payload), c, {}}; }
LfSpec pattern(std::string payload, ClassIndex c) { return {LfKind::Pattern, std::move(payload), c, {}}; }

Instance text(std::string s, std::optional<ClassIndex> gold = std::nullopt, InstanceId id = 0) {
  Instance x;
  x.id = id;
  x.text = std::move(s);
  x.gold = gold;
  return x;
}

Instance relation(std::string s, std::string e1, std::string e2) {
  Instance x = text(s);
  x.entity1 = Entity{e1, 0, 0};
  x.entity2 = Entity{e2, 0, 0};
  return x;
}

std::string compile_reason(const LfSpec& spec, const std::vector<std::string>& classes, TaskKind kind) {
  try {
    compile_lf(spec, classes, kind);
  } catch (const LfCompileError& e) {
    return e.reason();
  }
  return {};
}

const char* kWords[] = {"free", "my", "channel", "come", "again", "check", "out", "art", "start", "song"};

std::string random_sentence(Rng& rng) {
  static const char* seps[] = {" ", "  ", ", ", "!", " - ", "\n"};
  std::string s;
  const auto n = rng.below(10);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string w = kWords[rng.below(std::size(kWords))];
    if (rng.bernoulli(0.2)) w[0] = static_cast<char>(std::toupper(w[0]));
    if (rng.bernoulli(0.05)) for (auto& ch : w) ch = static_cast<char>(std::toupper(ch));
    s += w;
    s += seps[rng.below(std::size(seps))];
  }
  return s;
}

std::string random_keyword(Rng& rng) {
  std::string k;
  const auto n = 1 + rng.below(3);
  for (std::uint64_t i = 0; i < n; ++i) k += (i ? " " : "") + std::string(kWords[rng.below(std::size(kWords))]);
  return k;
}

// Naive reference: does " k " occur in " joined tokens "?
bool naive_contains(const std::string& sentence, const std::string& kw) {
  const std::string hay = " " + join_tokens(tokenize(sentence)) + " ";
  return hay.find(" " + join_tokens(tokenize(kw)) + " ") != std::string::npos;
}

}  // namespace

TEST_CASE("compile_lf examples and error reasons") {
  const auto lf = compile_lf(keyword("subscribe", 1), kSpamClasses, TaskKind::TextClassification);
  CHECK(lf.keyword_tokens() == std::vector<std::string>{"subscribe"});
  CHECK(compile_reason(keyword("check out my channel", 1), kSpamClasses, TaskKind::TextClassification) ==
        "ngram_length");
  CHECK(compile_reason(keyword("!!", 1), kSpamClasses, TaskKind::TextClassification) == "ngram_length");
  CHECK(compile_reason(pattern("([", 1), kRelClasses, TaskKind::RelationClassification) == "regex_invalid");
  CHECK(compile_reason(pattern("a*", 1), kRelClasses, TaskKind::RelationClassification) == "regex_empty_match");
  CHECK(compile_reason(keyword("free", 2), kSpamClasses, TaskKind::TextClassification) == "class_out_of_range");
  CHECK(compile_reason(keyword("free", -1), kSpamClasses, TaskKind::TextClassification) == "class_out_of_range");
  CHECK(compile_reason(pattern("free", 1), kSpamClasses, TaskKind::TextClassification) == "kind_task_mismatch");
  CHECK(compile_reason(keyword("free", 1), kRelClasses, TaskKind::RelationClassification) == "kind_task_mismatch");
}

TEST_CASE("apply_lf examples") {
  const std::vector<std::string> sentiment = {"negative", "positive"};
  const auto come_again = compile_lf(keyword("come again", 1), sentiment, TaskKind::TextClassification);
  CHECK(apply_lf(come_again, text("will never come again")) == 1);
  const auto channel = compile_lf(keyword("my channel", 1), kSpamClasses, TaskKind::TextClassification);
  CHECK(apply_lf(channel, text("great song")) == kAbstain);
  const auto art = compile_lf(keyword("art", 1), kSpamClasses, TaskKind::TextClassification);
  CHECK(apply_lf(art, text("start now")) == kAbstain);
  CHECK(apply_lf(art, text("Modern ART!")) == 1);

  const auto induced =
      compile_lf(pattern("{{E1}}\\s+\\w+\\s+induced\\s+{{E2}}", 1), kRelClasses, TaskKind::RelationClassification);
  CHECK(apply_lf(induced, relation("aspirin \xE2\x80\x93 induced bleeding was observed", "aspirin", "bleeding")) ==
        kAbstain);
  CHECK(apply_lf(induced, relation("aspirin therapy induced bleeding in two patients", "aspirin", "bleeding")) == 1);
  CHECK(apply_lf(induced, relation("aspirin therapy induced bleeding in two patients", "aspirin", "nausea")) ==
        kAbstain);
  CHECK_THROWS_AS(apply_lf(induced, text("aspirin therapy induced bleeding")), UsageError);
}

TEST_CASE("build_matrix shapes and column purity") {
  Rng rng(3);
  std::vector<Instance> xs;
  for (int i = 0; i < 200; ++i) xs.push_back(text(random_sentence(rng), std::nullopt, i));
  std::vector<LabelFunction> lfs;
  for (int j = 0; j < 12; ++j)
    lfs.push_back(compile_lf(keyword(random_keyword(rng), j % 2), kSpamClasses, TaskKind::TextClassification));
  lfs.push_back(lfs.front());

  const auto empty = build_matrix({}, xs);
  CHECK(empty.n() == 200);
  CHECK(empty.m() == 0);

  const auto w = build_matrix(lfs, xs);
  REQUIRE(w.n() == 200);
  REQUIRE(w.m() == 13);
  for (Eigen::Index i = 0; i < w.n(); ++i) {
    CHECK(w.instance_ids[i] == xs[i].id);
    for (Eigen::Index j = 0; j < w.m(); ++j) {
      const int v = w.entries(i, j);
      CHECK((v == kAbstain || v == lfs[j].target()));
      CHECK(v == apply_lf(lfs[j], xs[i]));
    }
  }
  CHECK(w.entries.col(0) == w.entries.col(12));
  CHECK(build_matrix(lfs, xs).entries == w.entries);

  // Any alphanumeric text contains the token "x" below.
  std::vector<Instance> all_x;
  for (int i = 0; i < 5; ++i) all_x.push_back(text("x y " + std::to_string(i), std::nullopt, i));
  const auto sat =
      build_matrix({compile_lf(keyword("x", 0), kSpamClasses, TaskKind::TextClassification)}, all_x);
  CHECK((sat.entries.array() != kAbstain).all());
}

TEST_CASE("keyword matching is case-insensitive and equals a naive token-join check") {
  Rng rng(11);
  int hits = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto sentence = random_sentence(rng);
    const auto kw = random_keyword(rng);
    const auto lower = compile_lf(keyword(kw, 1), kSpamClasses, TaskKind::TextClassification);
    std::string upper_kw = kw;
    for (auto& ch : upper_kw) ch = static_cast<char>(std::toupper(ch));
    const auto upper = compile_lf(keyword(upper_kw, 1), kSpamClasses, TaskKind::TextClassification);
    const Instance x = text(sentence);
    const auto got = apply_lf(lower, x);
    CHECK(got == apply_lf(upper, x));
    CHECK(got == apply_lf(lower, x));
    CHECK((got == 1) == naive_contains(sentence, kw));
    hits += got == 1;
  }
  CHECK(hits > 50);
  CHECK(hits < 950);
}

TEST_CASE("lf_stats") {
  std::vector<Instance> xs;
  for (int i = 0; i < 100; ++i) {
    const bool active = i < 20;
    const bool correct = i < 13;
    xs.push_back(text(active ? "free stuff" : "hello", correct || !active ? 1 : 0, i));
  }
  const auto lf = compile_lf(keyword("free", 1), kSpamClasses, TaskKind::TextClassification);
  const auto s = lf_stats(lf, xs);
  CHECK(s.n_active == 20);
  CHECK(s.coverage == doctest::Approx(0.20));
  REQUIRE(s.accuracy);
  CHECK(*s.accuracy == doctest::Approx(0.65));

  const auto none = lf_stats(compile_lf(keyword("absent", 1), kSpamClasses, TaskKind::TextClassification), xs);
  CHECK(none.coverage == 0.0);
  CHECK_FALSE(none.accuracy);

  std::vector<Instance> all;
  for (int i = 0; i < 10; ++i) all.push_back(text("free", 1, i));
  const auto full = lf_stats(lf, all);
  CHECK(full.coverage == 1.0);
  CHECK(*full.accuracy == 1.0);

  for (auto& x : all) x.gold.reset();
  CHECK_FALSE(lf_stats(lf, all).accuracy);
}

TEST_CASE("LF spec files round-trip") {
  std::vector<LfSpec> specs = {{LfKind::Keyword, "free \"entry\"", 1, {3, 17, 2}},
                               {LfKind::Pattern, "{{E1}}\\s+causes\\s+{{E2}}", 0, {0, -1, 0}}};
  std::ostringstream out;
  write_lf_specs(out, specs);
  std::istringstream in(out.str());
  CHECK(read_lf_specs(in) == specs);
}

TEST_CASE("external weak labels are reordered to the instance order") {
  std::vector<Instance> xs = {text("a", std::nullopt, 5), text("b", std::nullopt, 2)};
  std::istringstream in(R"({"id": 2, "labels": [1, -1]})" "\n" R"({"id": 5, "labels": [-1, 0]})" "\n");
  const auto l = read_weak_labels(in, xs, 2);
  REQUIRE(l.rows() == 2);
  CHECK(l(0, 0) == kAbstain);
  CHECK(l(0, 1) == 0);
  CHECK(l(1, 0) == 1);
  std::istringstream bad(R"({"id": 2, "labels": [2, -1]})" "\n" R"({"id": 5, "labels": [-1, 0]})" "\n");
  CHECK_THROWS_AS(read_weak_labels(bad, xs, 2), LoadError);
}
