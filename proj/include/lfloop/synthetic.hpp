#pragma once

#include <cstdint>

#include "lfloop/corpus.hpp"
#include "lfloop/plmclient.hpp"
#include "lfloop/prompting.hpp"

namespace lfloop {

struct SyntheticOptions {
  int n_train = 2000;
  int n_valid = 200;
  int n_test = 500;
  int num_classes = 2;
  double q = 0.8;          // chance each signature token of the class is present
  int noise_vocab = 5;     // distinct background tokens
  int noise_tokens = 10;   // background tokens per document
  std::uint64_t seed = 0;
  // Oracle behaviour written into the returned config.
  double p_label = 0.9;
  double p_keyword = 0.9;

  void validate() const;
};

struct SyntheticCorpus {
  Dataset dataset;
  MockOracleConfig oracle;
  Annotations annotations;  // for every validation instance
};

/// Planted corpus: class c owns signature tokens "sig<c>a", "sig<c>b",
/// "sig<c>c" (disjoint across classes); every document mixes its class's
/// signatures (each kept with probability q) with background tokens
/// "w0".."w<V-1>". Deterministic in the options.
SyntheticCorpus generate_synthetic(const SyntheticOptions& options);

}  // namespace lfloop
