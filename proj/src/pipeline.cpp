#include "lfloop/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "lfloop/errors.hpp"
#include "lfloop/select.hpp"

namespace lfloop {

using nlohmann::json;

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json opt_json(const std::optional<ClassIndex>& v) { return v ? json(*v) : json(nullptr); }

json spec_json(const LfSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"payload", s.payload},
          {"class", s.target},
          {"iteration", s.provenance.iteration},
          {"query_id", s.provenance.query_id},
          {"response_index", s.provenance.response_index}};
}

json verdict_json(const FilterVerdict& v) {
  json j = spec_json(v.candidate);
  j["admitted"] = v.admitted;
  j["stage"] = to_string(v.stage);
  j["reason"] = v.reason;
  j["detail"] = v.detail;
  j["measured"] = opt_json(v.measured);
  return j;
}

FeatureMatrix select_rows(const FeatureMatrix& x, const std::vector<Eigen::Index>& rows) {
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (FeatureMatrix::InnerIterator it(x, rows[i]); it; ++it)
      trips.emplace_back(static_cast<Eigen::Index>(i), it.col(), it.value());
  FeatureMatrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

double covered_fraction(const std::vector<std::vector<ClassIndex>>& cols, std::size_t n) {
  if (n == 0) return 0.0;
  std::size_t covered = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& c : cols)
      if (c[i] != kAbstain) {
        ++covered;
        break;
      }
  return static_cast<double>(covered) / static_cast<double>(n);
}

struct Fit {
  ProbLabels labels;
  std::optional<LinearModel> model;
};

// Label model over the train columns, then the downstream classifier on the
// resolved training labels.
Fit fit_models(const RunConfig& config, const Dataset& dataset, const std::vector<std::vector<ClassIndex>>& cols,
               const std::vector<double>& accuracies, const FeatureMatrix& train_x,
               const std::unordered_map<InstanceId, Eigen::Index>& row_of) {
  const int num_classes = dataset.num_classes();
  const auto n_train = static_cast<Eigen::Index>(dataset.train.size());
  LabelMatrix votes(n_train, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (Eigen::Index i = 0; i < n_train; ++i) votes(i, static_cast<Eigen::Index>(j)) = cols[j][static_cast<std::size_t>(i)];
  Fit fit;
  fit.labels = fit_label_model(votes, num_classes, config.label_model, accuracies);

  const auto resolved = resolve_training_labels(fit.labels, dataset);
  if (resolved.empty()) return fit;
  std::vector<Eigen::Index> rows;
  for (const auto& [id, c] : resolved) rows.push_back(row_of.at(id));
  const FeatureMatrix sub = select_rows(train_x, rows);
  if (config.soft_labels) {
    Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), num_classes);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (fit.labels.covered[static_cast<std::size_t>(rows[i])])
        targets.row(static_cast<Eigen::Index>(i)) = fit.labels.probs.row(rows[i]);
      else
        targets(static_cast<Eigen::Index>(i), resolved[i].second) = 1.0;
    }
    fit.model = train_logreg(sub, targets, config.downstream);
  } else {
    std::vector<ClassIndex> y;
    for (const auto& [id, c] : resolved) y.push_back(c);
    fit.model = train_logreg(sub, y, num_classes, config.downstream);
  }
  return fit;
}

struct Features {
  FeatureMatrix train, test;
};

Features build_features(const RunConfig& config, const Dataset& dataset, const RunResources& res) {
  Features f;
  if (config.features == FeatureKind::Tfidf) {
    std::vector<std::string> texts;
    for (const auto& x : dataset.train) texts.push_back(x.text);
    const auto space = fit_tfidf(texts, config.tfidf_min_df, config.tfidf_max_features);
    f.train = featurize(space, dataset.train);
    f.test = featurize(space, dataset.test);
  } else {
    if (!res.embeddings) throw ConfigError("embedding features need an embedding file");
    f.train = embedding_features(*res.embeddings, dataset.train);
    f.test = embedding_features(*res.embeddings, dataset.test);
  }
  return f;
}

MetricInputs metric_inputs(const Dataset& dataset, const std::vector<std::vector<ClassIndex>>& cols, const Fit& fit,
                           const FeatureMatrix& test_x) {
  MetricInputs in;
  in.lf_train_columns = cols;
  for (const auto& x : dataset.train) in.train_gold.push_back(x.gold);
  in.train_labels = fit.labels;
  if (fit.model) in.test_predicted = predict(*fit.model, test_x);
  for (const auto& x : dataset.test) in.test_gold.push_back(*x.gold);
  if (dataset.positive_class) in.test_metric = {MetricKind::BinaryF1, *dataset.positive_class};
  return in;
}

}  // namespace

RunReport run(const RunConfig& config, const Dataset& dataset, ChatBackend& backend, RunResources res) {
  config.validate();
  dataset.validate();
  if (dataset.train.empty()) throw ConfigError("train split is empty");
  const int num_classes = dataset.num_classes();
  const bool cot = config.prompt.cot();
  const bool relation = dataset.task_kind == TaskKind::RelationClassification;

  RunReport report;
  report.seed = config.seed;
  report.config = config_echo(config);

  Rng sampler_rng(derive_seed({config.seed, 1}));
  Rng ic_rng(derive_seed({config.seed, 2}));
  Rng cap_rng(derive_seed({config.seed, 3}));

  AdmissionState adm(dataset, config.filters);
  const std::size_t n_train = adm.train().size();

  std::vector<InstanceId> pool;
  std::unordered_map<InstanceId, Eigen::Index> row_of;
  for (std::size_t i = 0; i < n_train; ++i) {
    pool.push_back(dataset.train[i].id);
    row_of.emplace(dataset.train[i].id, static_cast<Eigen::Index>(i));
  }
  SelectionState selection(pool, config.seed);

  // In-context examples.
  std::vector<ICExample> fixed_examples;
  std::unique_ptr<KateSelector> kate;
  if (config.prompt.selector == IcSelector::ClassBalanced) {
    if (!res.annotations) throw ConfigError("class-balanced examples need a manual annotation file");
    fixed_examples = select_ic_balanced(dataset.valid, num_classes, config.prompt.k, ic_rng, *res.annotations, cot);
  } else {
    if (!res.embeddings) throw ConfigError("KATE selection needs an embedding file");
    kate = std::make_unique<KateSelector>(dataset, *res.embeddings, backend, config.backend.model);
  }

  const auto features = build_features(config, dataset, res);
  const FeatureMatrix& train_x = features.train;
  const FeatureMatrix& test_x = features.test;

  std::unique_ptr<SeuModel> seu;
  if (config.sampler == SamplerKind::Seu)
    seu = std::make_unique<SeuModel>(adm.train(), adm.valid(), num_classes, config.seu_posterior_weighted);

  ProbLabels labels;
  labels.probs = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_train), num_classes, 1.0 / num_classes);
  labels.covered.assign(n_train, false);
  std::optional<LinearModel> model;

  auto refit = [&] {
    std::vector<double> accs;
    if (config.label_model.variant == LabelModelVariant::WeightedVote)
      for (const auto& lf : adm.lfs()) accs.push_back(lf_stats(lf, adm.valid()).accuracy.value_or(0.5));
    auto fit = fit_models(config, dataset, adm.train_columns(), accs, train_x, row_of);
    labels = std::move(fit.labels);
    model = std::move(fit.model);
    if (seu) seu->update(labels.covered, labels);
  };

  bool fitted = false;
  std::vector<std::optional<ClassIndex>> plm_labels, query_gold;

  for (int t = 1; t <= config.n_iterations; ++t) {
    InstanceId query_id = -1;
    try {
      switch (config.sampler) {
        case SamplerKind::Random:
          query_id = random_sampler(selection, sampler_rng);
          break;
        case SamplerKind::Uncertainty:
          query_id = model ? uncertainty_sampler(selection, *model, train_x, row_of)
                           : random_sampler(selection, sampler_rng);
          break;
        case SamplerKind::Seu:
          query_id = seu_sampler(selection, *seu, config.seu_pool_cap, &cap_rng);
          break;
      }
    } catch (const PoolExhausted&) {
      report.warnings.push_back("query pool exhausted after " + std::to_string(t - 1) + " of " +
                                std::to_string(config.n_iterations) + " iterations");
      break;
    }
    const Instance& query = dataset.train[static_cast<std::size_t>(row_of.at(query_id))];

    IterationRecord rec;
    rec.t = t;
    rec.query_id = query_id;
    rec.gold = query.gold;

    std::vector<std::string> responses;
    try {
      const auto examples = kate ? kate->select(query, config.prompt.k, cot) : fixed_examples;
      CompletionRequest req;
      req.messages = build_task_prompt(dataset, query, examples, cot);
      req.temperature = config.prompt.effective_temperature();
      req.n = config.prompt.n_responses;
      req.model = config.backend.model;
      req.max_tokens = config.backend.max_tokens;
      req.meta.query_id = query_id;
      req.meta.cot = cot;
      rec.prompt = req.messages;
      responses = backend.complete(req);
      if (static_cast<int>(responses.size()) != req.n)
        throw BackendError("backend returned " + std::to_string(responses.size()) + " responses, expected " +
                           std::to_string(req.n));
    } catch (const BackendError& e) {
      report.complete = false;
      report.error = e.what();
      break;
    }
    rec.responses = responses;

    std::vector<ParsedResponse> parsed;
    for (const auto& text : responses) parsed.push_back(parse_response(text, dataset.task_kind, dataset.classes));
    const auto agg = aggregate_sc(parsed, dataset.task_kind, num_classes);
    rec.label = agg.label;

    std::vector<LfSpec> candidates;
    if (agg.label) {
      for (const auto& payload : agg.payloads) {
        int first = 0;
        for (std::size_t i = 0; i < parsed.size(); ++i) {
          const auto& items = relation ? parsed[i].patterns : parsed[i].keywords;
          if (std::find(items.begin(), items.end(), payload) != items.end()) {
            first = static_cast<int>(i);
            break;
          }
        }
        candidates.push_back({relation ? LfKind::Pattern : LfKind::Keyword, payload, *agg.label, {t, query_id, first}});
      }
    }
    auto batch = adm.admit(candidates);
    rec.proposed = candidates.size();
    rec.admitted = batch.admitted.size();
    rec.verdicts = std::move(batch.verdicts);
    rec.train_cov = covered_fraction(adm.train_columns(), n_train);

    plm_labels.push_back(agg.label);
    query_gold.push_back(query.gold);
    if (!config.lazy_retrain && (!fitted || rec.admitted > 0)) {
      refit();
      fitted = true;
    }
    report.iterations.push_back(std::move(rec));
  }
  if (config.lazy_retrain || !fitted) refit();

  for (const auto& lf : adm.lfs()) {
    report.lfs.push_back(lf.spec());
    report.lf_valid_accuracy.push_back(lf_stats(lf, adm.valid()).accuracy);
  }

  MetricInputs in = metric_inputs(dataset, adm.train_columns(), {labels, model}, test_x);
  in.plm_labels = plm_labels;
  in.query_gold = query_gold;
  report.metrics = compute_metrics(in);
  if (!model) report.warnings.push_back("downstream model not trained: no training labels");
  return report;
}

RunReport run(const RunConfig& config) {
  config.validate();
  const Dataset dataset = load_dataset(config.data.train, config.data.valid, config.data.test, config.data.schema);
  Annotations annotations;
  EmbeddingTable embeddings;
  RunResources res;
  if (!config.data.annotations.empty()) {
    annotations = load_annotations(config.data.annotations);
    res.annotations = &annotations;
  }
  if (!config.data.embeddings.empty()) {
    std::vector<Split> splits = {Split::Train, Split::Valid};
    if (config.features == FeatureKind::Embeddings) splits.push_back(Split::Test);
    embeddings = load_embeddings(config.data.embeddings, dataset, splits);
    res.embeddings = &embeddings;
  }

  std::unique_ptr<ChatBackend> base;
  switch (config.backend.kind) {
    case BackendKind::Mock:
      if (config.backend.mock_config.empty()) throw ConfigError("mock backend needs backend.mock_config");
      base = std::make_unique<MockBackend>(load_mock_config(config.backend.mock_config), dataset);
      break;
    case BackendKind::Replay:
      if (config.backend.transcript.empty()) throw ConfigError("replay backend needs a transcript");
      base = std::make_unique<ReplayBackend>(load_transcript(config.backend.transcript));
      break;
    case BackendKind::Http:
      base = std::make_unique<HttpBackend>(config.backend.http);
      break;
  }
  Transcript transcript;
  std::unique_ptr<RecordingBackend> recorder;
  const bool record = config.backend.kind != BackendKind::Replay && !config.backend.transcript.empty();
  if (record) recorder = std::make_unique<RecordingBackend>(*base, transcript);
  ChatBackend& backend = record ? static_cast<ChatBackend&>(*recorder) : *base;

  RunReport report = run(config, dataset, backend, res);
  if (record) save_transcript(transcript, config.backend.transcript);
  if (!config.report.empty()) {
    std::ofstream out(config.report);
    if (!out) throw ConfigError("cannot write report " + config.report.string());
    out << dump_report(report);
  }
  return report;
}

json to_json(const RunReport& r) {
  json iterations = json::array();
  for (const auto& it : r.iterations) {
    json verdicts = json::array();
    for (const auto& v : it.verdicts) verdicts.push_back(verdict_json(v));
    json prompt = json::array();
    for (const auto& m : it.prompt) prompt.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    iterations.push_back({{"t", it.t},
                          {"query_id", it.query_id},
                          {"label", opt_json(it.label)},
                          {"gold", opt_json(it.gold)},
                          {"proposed", it.proposed},
                          {"admitted", it.admitted},
                          {"train_cov", it.train_cov},
                          {"verdicts", verdicts},
                          {"prompt", prompt},
                          {"responses", it.responses}});
  }
  json lfs = json::array();
  for (std::size_t i = 0; i < r.lfs.size(); ++i) {
    json j = spec_json(r.lfs[i]);
    j["valid_accuracy"] = opt_json(r.lf_valid_accuracy[i]);
    lfs.push_back(j);
  }
  return {{"seed", r.seed},
          {"complete", r.complete},
          {"error", r.error.empty() ? json(nullptr) : json(r.error)},
          {"warnings", r.warnings},
          {"metrics", to_json(r.metrics)},
          {"lfs", lfs},
          {"iterations", iterations},
          {"config", r.config}};
}

std::string dump_report(const RunReport& r) { return to_json(r).dump(2) + "\n"; }

LfSetEvaluation evaluate_lf_set(const RunConfig& config, const Dataset& dataset, const std::vector<LfSpec>& specs,
                                RunResources res) {
  dataset.validate();
  if (dataset.train.empty()) throw ConfigError("train split is empty");
  LfSetEvaluation out;
  const PreparedSplit train(dataset.train), valid(dataset.valid);
  std::vector<std::vector<ClassIndex>> cols;
  std::vector<double> accs;
  for (const auto& spec : specs) {
    try {
      const auto lf = compile_lf(spec, dataset);
      cols.push_back(apply_column(lf, train));
      out.lfs.push_back(spec);
      out.train_stats.push_back(lf_stats(cols.back(), train));
      out.valid_stats.push_back(lf_stats(lf, valid));
      accs.push_back(out.valid_stats.back().accuracy.value_or(0.5));
    } catch (const LfCompileError& e) {
      out.rejected.push_back({spec, e.what()});
    }
  }
  std::unordered_map<InstanceId, Eigen::Index> row_of;
  for (std::size_t i = 0; i < dataset.train.size(); ++i) row_of.emplace(dataset.train[i].id, static_cast<Eigen::Index>(i));
  const auto features = build_features(config, dataset, res);
  const auto fit = fit_models(config, dataset, cols, accs, features.train, row_of);
  out.metrics = compute_metrics(metric_inputs(dataset, cols, fit, features.test));
  return out;
}

json to_json(const LfSetEvaluation& e) {
  auto stats = [](const LfStats& s) {
    return json{{"coverage", s.coverage}, {"accuracy", opt_json(s.accuracy)}, {"n_active", s.n_active}};
  };
  json lfs = json::array();
  for (std::size_t i = 0; i < e.lfs.size(); ++i) {
    json j = spec_json(e.lfs[i]);
    j["train"] = stats(e.train_stats[i]);
    j["valid"] = stats(e.valid_stats[i]);
    lfs.push_back(j);
  }
  json rejected = json::array();
  for (const auto& [spec, why] : e.rejected) {
    json j = spec_json(spec);
    j["error"] = why;
    rejected.push_back(j);
  }
  return {{"metrics", to_json(e.metrics)}, {"lfs", lfs}, {"rejected", rejected}};
}

// ---- multi-seed ----

MultiSeedReport summarize(std::vector<RunReport> runs) {
  MultiSeedReport out;
  out.runs = std::move(runs);
  if (out.runs.empty()) {
    out.partial = true;
    return out;
  }
  out.test_metric = out.runs.front().metrics.test_metric;
  for (const auto& r : out.runs) out.partial = out.partial || !r.complete;

  auto summary = [&](auto get) {
    MetricSummary s;
    std::vector<double> v;
    for (const auto& r : out.runs) {
      const std::optional<double> x = get(r.metrics);
      if (!x) return s;
      v.push_back(*x);
    }
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    s.mean = mean;
    if (v.size() >= 2) {
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
  };
  out.plm_acc = summary([](const Metrics& m) { return m.plm_acc; });
  out.lf_num = summary([](const Metrics& m) { return std::optional<double>(static_cast<double>(m.lf_num)); });
  out.lf_acc_avg = summary([](const Metrics& m) { return m.lf_acc_avg; });
  out.lf_cov_avg = summary([](const Metrics& m) { return m.lf_cov_avg; });
  out.train_acc = summary([](const Metrics& m) { return m.train_acc; });
  out.train_cov = summary([](const Metrics& m) { return m.train_cov; });
  out.test_score = summary([](const Metrics& m) { return m.test_score; });
  return out;
}

MultiSeedReport multi_seed(const RunConfig& config, const Dataset& dataset, ChatBackend& backend, int n_seeds,
                           RunResources resources) {
  if (n_seeds < 2) throw ConfigError("multi-seed needs at least 2 seeds");
  std::vector<RunReport> runs;
  for (int s = 0; s < n_seeds; ++s) {
    RunConfig c = config;
    c.seed = config.seed + static_cast<std::uint64_t>(s);
    runs.push_back(run(c, dataset, backend, resources));
  }
  return summarize(std::move(runs));
}

MultiSeedReport multi_seed(const RunConfig& config, int n_seeds) {
  if (n_seeds < 2) throw ConfigError("multi-seed needs at least 2 seeds");
  std::vector<RunReport> runs;
  for (int s = 0; s < n_seeds; ++s) {
    RunConfig c = config;
    c.seed = config.seed + static_cast<std::uint64_t>(s);
    c.report.clear();
    if (!c.backend.transcript.empty() && c.backend.kind != BackendKind::Replay)
      c.backend.transcript += ".seed" + std::to_string(c.seed);
    try {
      runs.push_back(run(c));
    } catch (const BackendError& e) {
      RunReport failed;
      failed.seed = c.seed;
      failed.complete = false;
      failed.error = e.what();
      failed.config = config_echo(c);
      runs.push_back(std::move(failed));
    }
  }
  auto out = summarize(std::move(runs));
  if (!config.report.empty()) {
    std::ofstream f(config.report);
    if (!f) throw ConfigError("cannot write report " + config.report.string());
    f << to_json(out).dump(2) << "\n";
  }
  return out;
}

json to_json(const MultiSeedReport& r) {
  auto s = [](const MetricSummary& m) { return json{{"mean", opt_json(m.mean)}, {"std", opt_json(m.std)}}; };
  json runs = json::array();
  for (const auto& x : r.runs) runs.push_back(to_json(x));
  return {{"partial", r.partial},
          {"n_seeds", r.runs.size()},
          {"summary",
           {{"PLM_acc", s(r.plm_acc)},
            {"LF_num", s(r.lf_num)},
            {"LF_acc_avg", s(r.lf_acc_avg)},
            {"LF_cov_avg", s(r.lf_cov_avg)},
            {"Train_acc", s(r.train_acc)},
            {"Train_cov", s(r.train_cov)},
            {"Test_score", s(r.test_score)},
            {"Test_metric", r.test_metric == MetricKind::Accuracy ? "accuracy" : "f1"}}},
          {"runs", runs}};
}

// ---- tables ----

namespace {

const char* kMetricNames[] = {"PLM_acc", "LF_num", "LF_acc_avg", "LF_cov_avg", "Train_acc", "Train_cov", "Test_score"};

std::string cell(const json& v, bool percent) {
  if (v.is_null()) return "--";
  char buf[32];
  if (percent)
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v.get<double>());
  else
    std::snprintf(buf, sizeof buf, "%.2f", v.get<double>());
  return buf;
}

}  // namespace

std::string render_table(const json& report) {
  std::ostringstream out;
  const bool multi = report.contains("summary");
  const json& m = multi ? report["summary"] : report.at("metrics");
  const std::string test_metric = m.value("Test_metric", "accuracy");
  if (multi)
    out << "seeds: " << report.value("n_seeds", 0) << (report.value("partial", false) ? " (partial)" : "") << "\n";
  else
    out << "seed: " << report.value("seed", 0) << (report.value("complete", true) ? "" : " (incomplete)") << "\n";
  for (const char* name : kMetricNames) {
    const bool percent = std::string(name) != "LF_num";
    std::string label = name;
    if (label == "Test_score") label += test_metric == "f1" ? " (F1)" : " (acc)";
    std::string value;
    if (multi) {
      value = cell(m[name]["mean"], percent);
      if (!m[name]["std"].is_null()) value += " (" + cell(m[name]["std"], percent) + ")";
    } else if (!percent && !m[name].is_null()) {
      value = std::to_string(m[name].get<std::size_t>());
    } else {
      value = cell(m[name], percent);
    }
    char line[96];
    std::snprintf(line, sizeof line, "%-20s %s\n", label.c_str(), value.c_str());
    out << line;
  }
  return out.str();
}

std::string render_table(const RunReport& r) { return render_table(to_json(r)); }
std::string render_table(const MultiSeedReport& r) { return render_table(to_json(r)); }

}  // namespace lfloop
