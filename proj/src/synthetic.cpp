#include "lfloop/synthetic.hpp"

#include <algorithm>

#include "lfloop/errors.hpp"
#include "lfloop/rng.hpp"

namespace lfloop {

void SyntheticOptions::validate() const {
  if (num_classes < 2) throw UsageError("synthetic corpus needs at least 2 classes");
  if (!(q > 0.0 && q <= 1.0)) throw UsageError("signature rate q must be in (0, 1]");
  if (n_train < 0 || n_valid < 0 || n_test < 0) throw UsageError("split sizes must be non-negative");
  if (noise_vocab < 1 || noise_tokens < 0) throw UsageError("noise vocabulary must be non-empty");
}

SyntheticCorpus generate_synthetic(const SyntheticOptions& o) {
  o.validate();
  SyntheticCorpus out;
  Dataset& d = out.dataset;
  d.task_kind = TaskKind::TextClassification;
  for (int c = 0; c < o.num_classes; ++c) {
    d.classes.push_back("class" + std::to_string(c));
    d.class_definitions.push_back("documents of topic " + std::to_string(c));
    std::vector<std::string> sigs;
    for (char s : {'a', 'b', 'c'}) sigs.push_back("sig" + std::to_string(c) + s);
    out.oracle.signatures.push_back(sigs);
  }
  d.description = "Classify each synthetic document into its topic.";

  Rng rng(derive_seed({o.seed, 0x5e7}));
  InstanceId next_id = 0;
  auto make_split = [&](int n, std::vector<Instance>& split) {
    for (int i = 0; i < n; ++i) {
      const auto c = static_cast<ClassIndex>(rng.below(static_cast<std::uint64_t>(o.num_classes)));
      std::vector<std::string> words;
      for (const auto& s : out.oracle.signatures[static_cast<std::size_t>(c)])
        if (rng.bernoulli(o.q)) words.push_back(s);
      for (int k = 0; k < o.noise_tokens; ++k)
        words.push_back("w" + std::to_string(rng.below(static_cast<std::uint64_t>(o.noise_vocab))));
      rng.shuffle(words);
      Instance x;
      x.id = next_id++;
      x.text = join_tokens(words);
      x.gold = c;
      out.oracle.gold[x.id] = c;
      split.push_back(std::move(x));
    }
  };
  make_split(o.n_train, d.train);
  make_split(o.n_valid, d.valid);
  make_split(o.n_test, d.test);

  for (const auto& x : d.valid) {
    ManualAnnotation a;
    a.id = x.id;
    const auto tokens = tokenize(x.text);
    for (const auto& s : out.oracle.signatures[static_cast<std::size_t>(*x.gold)])
      if (std::find(tokens.begin(), tokens.end(), s) != tokens.end()) a.keywords.push_back(s);
    a.rationale = a.keywords.empty() ? "The passage has no distinctive words; the label comes from the overall topic."
                                     : "The passage uses words typical of " + d.classes[static_cast<std::size_t>(*x.gold)] + ".";
    out.annotations.emplace(x.id, std::move(a));
  }

  out.oracle.p_label = o.p_label;
  out.oracle.p_keyword = o.p_keyword;
  out.oracle.seed = derive_seed({o.seed, 0x0c1e});
  return out;
}

}  // namespace lfloop
