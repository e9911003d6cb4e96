// Command-line front end: run, multi-seed, replay, eval-lfs, synth, report.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "lfloop/errors.hpp"
#include "lfloop/pipeline.hpp"
#include "lfloop/synthetic.hpp"

using namespace lfloop;
using nlohmann::json;

namespace {

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::string transcript;
  std::string report;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool with_backend) {
  cmd->add_option("--config", f.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "override the configured seed");
  if (with_backend) cmd->add_option("--backend", f.backend, "override the backend")->check(CLI::IsMember({"http", "mock", "replay"}));
  cmd->add_option("--transcript", f.transcript, "transcript to record to, or to replay from");
  cmd->add_option("--report", f.report, "where to write the JSON report");
}

RunConfig configure(const RunFlags& f) {
  RunConfig c = load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (!f.backend.empty()) c.backend.kind = backend_from_string(f.backend);
  if (!f.transcript.empty()) c.backend.transcript = f.transcript;
  if (!f.report.empty()) c.report = f.report;
  return c;
}

int write_synthetic(const std::string& dir, const SyntheticOptions& o) {
  namespace fs = std::filesystem;
  const auto corpus = generate_synthetic(o);
  fs::create_directories(dir);
  save_dataset(corpus.dataset, dir);
  save_mock_config(corpus.oracle, fs::path(dir) / "oracle.json");
  {
    std::ofstream out(fs::path(dir) / "annotations.jsonl");
    write_annotations(out, corpus.annotations);
  }
  const json config = {{"data",
                        {{"train", "train.jsonl"},
                         {"valid", "valid.jsonl"},
                         {"test", "test.jsonl"},
                         {"schema", "schema.json"},
                         {"annotations", "annotations.jsonl"}}},
                       {"prompt", {{"method", "few_shot"}, {"selector", "class_balanced"}, {"k", 1}}},
                       {"sampler", "random"},
                       {"n_iterations", 50},
                       {"seed", 0},
                       {"backend", {{"kind", "mock"}, {"mock_config", "oracle.json"}}}};
  std::ofstream(fs::path(dir) / "config.json") << config.dump(2) << '\n';
  std::cout << "wrote synthetic corpus to " << dir << " (" << corpus.dataset.train.size() << "/"
            << corpus.dataset.valid.size() << "/" << corpus.dataset.test.size() << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative label-function development with a language model in the loop"};
  app.require_subcommand(1);

  RunFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "run the loop once");
  add_run_flags(run_cmd, run_flags, true);

  RunFlags multi_flags;
  int n_seeds = 5;
  auto* multi_cmd = app.add_subcommand("multi-seed", "run consecutive seeds and report mean and std");
  add_run_flags(multi_cmd, multi_flags, true);
  multi_cmd->add_option("--seeds", n_seeds, "number of seeds")->check(CLI::Range(2, 1000));

  RunFlags replay_flags;
  auto* replay_cmd = app.add_subcommand("replay", "re-run a configuration against a recorded transcript");
  add_run_flags(replay_cmd, replay_flags, false);
  replay_cmd->get_option("--transcript")->required();

  std::string eval_config, eval_lfs;
  auto* eval_cmd = app.add_subcommand("eval-lfs", "score an externally supplied LF set");
  eval_cmd->add_option("--config", eval_config, "run configuration naming the dataset")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--lfs", eval_lfs, "LF set (JSON lines)")->required()->check(CLI::ExistingFile);

  SyntheticOptions synth;
  std::string synth_dir;
  auto* synth_cmd = app.add_subcommand("synth", "write a planted synthetic dataset with a matching mock oracle");
  synth_cmd->add_option("--out", synth_dir, "output directory")->required();
  synth_cmd->add_option("--n-train", synth.n_train);
  synth_cmd->add_option("--n-valid", synth.n_valid);
  synth_cmd->add_option("--n-test", synth.n_test);
  synth_cmd->add_option("--classes", synth.num_classes);
  synth_cmd->add_option("--q", synth.q, "signature rate");
  synth_cmd->add_option("--noise-vocab", synth.noise_vocab);
  synth_cmd->add_option("--noise-tokens", synth.noise_tokens);
  synth_cmd->add_option("--p-label", synth.p_label);
  synth_cmd->add_option("--p-keyword", synth.p_keyword);
  synth_cmd->add_option("--seed", synth.seed);

  std::string report_path;
  auto* report_cmd = app.add_subcommand("report", "render a JSON report as a table");
  report_cmd->add_option("report", report_path, "report file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const auto report = run(configure(run_flags));
      std::cout << render_table(report);
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
      if (!report.complete) {
        std::cerr << "error: " << report.error << "\n";
        return 3;
      }
    } else if (*multi_cmd) {
      const auto report = multi_seed(configure(multi_flags), n_seeds);
      std::cout << render_table(report);
      if (report.partial) return 3;
    } else if (*replay_cmd) {
      RunConfig c = configure(replay_flags);
      c.backend.kind = BackendKind::Replay;
      const auto report = run(c);
      std::cout << render_table(report);
      if (!report.complete) {
        std::cerr << "error: " << report.error << "\n";
        return 3;
      }
    } else if (*eval_cmd) {
      const RunConfig c = load_config(eval_config);
      const Dataset d = load_dataset(c.data.train, c.data.valid, c.data.test, c.data.schema);
      EmbeddingTable emb;
      RunResources res;
      if (c.features == FeatureKind::Embeddings) {
        emb = load_embeddings(c.data.embeddings, d, {Split::Train, Split::Test});
        res.embeddings = &emb;
      }
      const auto result = evaluate_lf_set(c, d, load_lf_specs(eval_lfs), res);
      std::cout << to_json(result).dump(2) << "\n";
    } else if (*synth_cmd) {
      return write_synthetic(synth_dir, synth);
    } else if (*report_cmd) {
      std::ifstream in(report_path);
      std::cout << render_table(json::parse(in));
    }
  } catch (const LoadError& e) {
    std::cerr << "load error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
