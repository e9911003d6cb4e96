#include "lfloop/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lfloop/errors.hpp"
#include "lfloop/math.hpp"
#include "lfloop/rng.hpp"

namespace lfloop {

std::size_t ProbLabels::n_covered() const {
  return static_cast<std::size_t>(std::count(covered.begin(), covered.end(), true));
}

ClassIndex ProbLabels::argmax(Eigen::Index row) const {
  return static_cast<ClassIndex>(argmax_lowest(probs.row(row)));
}

void LabelModelConfig::validate() const {
  if (em_max_iters < 1) throw ConfigError("em_max_iters must be >= 1");
  if (!(em_tol > 0.0)) throw ConfigError("em_tol must be > 0");
  if (!(smoothing >= 0.0)) throw ConfigError("smoothing must be >= 0");
  if (em_restarts < 0) throw ConfigError("em_restarts must be >= 0");
}

namespace {

constexpr double kTieNudge = 1e-3;

void check_votes(const LabelMatrix& votes, int num_classes) {
  if (num_classes < 2) throw UsageError("label model needs at least 2 classes");
  if ((votes.array() < kAbstain).any() || (votes.array() >= num_classes).any())
    throw UsageError("vote out of range");
}

ProbLabels uncovered_template(const LabelMatrix& votes, int num_classes) {
  ProbLabels out;
  out.probs = Eigen::MatrixXd::Constant(votes.rows(), num_classes, 1.0 / num_classes);
  out.covered.assign(static_cast<std::size_t>(votes.rows()), false);
  return out;
}

}  // namespace

ProbLabels majority_vote(const LabelMatrix& votes, int num_classes) {
  check_votes(votes, num_classes);
  ProbLabels out = uncovered_template(votes, num_classes);
  Eigen::VectorXd counts(num_classes);
  for (Eigen::Index i = 0; i < votes.rows(); ++i) {
    counts.setZero();
    for (Eigen::Index j = 0; j < votes.cols(); ++j)
      if (votes(i, j) != kAbstain) counts(votes(i, j)) += 1.0;
    const double total = counts.sum();
    if (total == 0.0) continue;
    out.probs.row(i) = counts.transpose() / total;
    out.covered[static_cast<std::size_t>(i)] = true;
  }
  return out;
}

ProbLabels weighted_vote(const LabelMatrix& votes, int num_classes, std::span<const double> accuracies) {
  check_votes(votes, num_classes);
  if (static_cast<Eigen::Index>(accuracies.size()) != votes.cols())
    throw UsageError("weighted_vote: need one accuracy per LF");
  Eigen::VectorXd w(votes.cols());
  for (Eigen::Index j = 0; j < votes.cols(); ++j) {
    const double a = std::clamp(accuracies[static_cast<std::size_t>(j)], 0.05, 0.95);
    w(j) = std::log(a * (num_classes - 1) / (1.0 - a));
  }
  ProbLabels out = uncovered_template(votes, num_classes);
  Eigen::VectorXd score(num_classes);
  std::vector<bool> voted(static_cast<std::size_t>(num_classes));
  for (Eigen::Index i = 0; i < votes.rows(); ++i) {
    score.setZero();
    std::fill(voted.begin(), voted.end(), false);
    bool any = false;
    for (Eigen::Index j = 0; j < votes.cols(); ++j) {
      const int v = votes(i, j);
      if (v == kAbstain) continue;
      score(v) += w(j);
      voted[static_cast<std::size_t>(v)] = true;
      any = true;
    }
    if (!any) continue;
    double m = -INFINITY;
    for (int c = 0; c < num_classes; ++c)
      if (voted[static_cast<std::size_t>(c)]) m = std::max(m, score(c));
    double z = 0.0;
    for (int c = 0; c < num_classes; ++c) {
      const double p = voted[static_cast<std::size_t>(c)] ? std::exp(score(c) - m) : 0.0;
      out.probs(i, c) = p;
      z += p;
    }
    out.probs.row(i) /= z;
    out.covered[static_cast<std::size_t>(i)] = true;
  }
  return out;
}

namespace {

// Covered rows recoded as outcome indices: vote l -> l, abstain -> C (only
// meaningful when abstain is modelled).
struct Observations {
  std::vector<Eigen::Index> rows;  // indices into the original matrix
  Eigen::MatrixXi outcome;         // n_cov x m
};

Observations covered_rows(const LabelMatrix& votes, int num_classes) {
  Observations obs;
  for (Eigen::Index i = 0; i < votes.rows(); ++i)
    if ((votes.row(i).array() != kAbstain).any()) obs.rows.push_back(i);
  obs.outcome.resize(static_cast<Eigen::Index>(obs.rows.size()), votes.cols());
  for (std::size_t r = 0; r < obs.rows.size(); ++r)
    for (Eigen::Index j = 0; j < votes.cols(); ++j) {
      const int v = votes(obs.rows[r], j);
      obs.outcome(static_cast<Eigen::Index>(r), j) = v == kAbstain ? num_classes : v;
    }
  return obs;
}

struct Params {
  Eigen::VectorXd prior;
  std::vector<Eigen::MatrixXd> tables;  // C x K
};

void m_step(const Observations& obs, const Eigen::MatrixXd& q, int C, Eigen::Index m, double s,
            bool abstain_outcome, Params& p) {
  const int K = abstain_outcome ? C + 1 : C;
  const auto n = static_cast<double>(q.rows());
  p.prior = (q.colwise().sum().transpose().array() + s) / (n + C * s);
  p.tables.resize(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::MatrixXd& t = p.tables[static_cast<std::size_t>(j)];
    t.setZero(C, K);
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
      const int o = obs.outcome(r, j);
      if (o >= K) continue;  // abstain, not modelled
      t.col(o) += q.row(r).transpose();
    }
    t.array() += s;
    for (int c = 0; c < C; ++c) {
      const double z = t.row(c).sum();
      // No mass and no smoothing: any distribution is a maximizer; use uniform.
      if (z > 0.0)
        t.row(c) /= z;
      else
        t.row(c).setConstant(1.0 / K);
    }
  }
}

// Log-parameters, reused across iterations.
struct LogParams {
  Eigen::VectorXd prior;
  std::vector<Eigen::MatrixXd> tables;
};

// Posteriors into `q`; returns the penalized log-likelihood of `p`.
double e_step(const Observations& obs, const Params& p, int C, double s, Eigen::MatrixXd& q, LogParams& lp) {
  const Eigen::Index m = obs.outcome.cols();
  const int K = static_cast<int>(p.tables.empty() ? C : p.tables.front().cols());
  q.resize(obs.outcome.rows(), C);
  lp.prior = p.prior.array().log().matrix();
  lp.tables.resize(p.tables.size());
  double pen = lp.prior.sum();
  for (std::size_t j = 0; j < p.tables.size(); ++j) {
    lp.tables[j] = p.tables[j].array().log().matrix();
    pen += lp.tables[j].sum();
  }
  Eigen::VectorXd row(C);
  double ll = 0.0;
  for (Eigen::Index r = 0; r < obs.outcome.rows(); ++r) {
    row = lp.prior;
    for (Eigen::Index j = 0; j < m; ++j) {
      const int o = obs.outcome(r, j);
      if (o >= K) continue;
      row += lp.tables[static_cast<std::size_t>(j)].col(o);
    }
    const double lse = log_sum_exp(row);
    ll += lse;
    q.row(r) = (row.array() - lse).exp().matrix().transpose();
  }
  return s == 0.0 ? ll : ll + s * pen;
}

}  // namespace

double dawid_skene_objective(const LabelMatrix& votes, int num_classes, const Eigen::VectorXd& prior,
                             const std::vector<Eigen::MatrixXd>& outcome_tables, double smoothing,
                             bool abstain_as_outcome) {
  (void)abstain_as_outcome;  // the table width already encodes it
  const Observations obs = covered_rows(votes, num_classes);
  Params p{prior, outcome_tables};
  Eigen::MatrixXd q;
  LogParams lp;
  return e_step(obs, p, num_classes, smoothing, q, lp);
}

namespace {

struct EmRun {
  Params params;
  Eigen::MatrixXd q;
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
};

EmRun run_em(const Observations& obs, Eigen::MatrixXd q, int C, Eigen::Index m, const LabelModelConfig& config) {
  EmRun run;
  const double s = config.smoothing;
  LogParams lp;
  m_step(obs, q, C, m, s, config.abstain_as_outcome, run.params);
  for (int it = 0; it < config.em_max_iters; ++it) {
    const double obj = e_step(obs, run.params, C, s, q, lp);
    run.trace.push_back(obj);
    run.iterations = it + 1;
    const auto t = run.trace.size();
    if (t >= 2 && obj - run.trace[t - 2] < config.em_tol) {
      run.converged = true;
      break;
    }
    if (it + 1 == config.em_max_iters) break;
    m_step(obs, q, C, m, s, config.abstain_as_outcome, run.params);
  }
  run.q = std::move(q);
  return run;
}

// Latent-class relabelling that best agrees with `reference` posteriors:
// perm[c] is the reference class assigned to fitted class c.
std::vector<int> align_classes(const Eigen::MatrixXd& q, const Eigen::MatrixXd& reference) {
  const auto C = static_cast<int>(q.cols());
  const Eigen::MatrixXd agree = q.transpose() * reference;  // C x C
  std::vector<int> perm(static_cast<std::size_t>(C));
  std::iota(perm.begin(), perm.end(), 0);
  auto score = [&](const std::vector<int>& p) {
    double total = 0.0;
    for (int c = 0; c < C; ++c) total += agree(c, p[static_cast<std::size_t>(c)]);
    return total;
  };
  if (C <= 7) {
    std::vector<int> cur = perm;
    double best = score(perm);
    while (std::next_permutation(cur.begin(), cur.end())) {
      const double v = score(cur);
      if (v > best + 1e-12) {
        best = v;
        perm = cur;
      }
    }
    return perm;
  }
  // Greedy on the largest remaining agreement.
  std::vector<bool> row_used(static_cast<std::size_t>(C)), col_used(static_cast<std::size_t>(C));
  for (int step = 0; step < C; ++step) {
    int br = -1, bc = -1;
    for (int r = 0; r < C; ++r)
      for (int c = 0; c < C; ++c)
        if (!row_used[static_cast<std::size_t>(r)] && !col_used[static_cast<std::size_t>(c)] &&
            (br < 0 || agree(r, c) > agree(br, bc)))
          br = r, bc = c;
    perm[static_cast<std::size_t>(br)] = bc;
    row_used[static_cast<std::size_t>(br)] = col_used[static_cast<std::size_t>(bc)] = true;
  }
  return perm;
}

void relabel(EmRun& run, const std::vector<int>& perm) {
  const auto C = static_cast<Eigen::Index>(perm.size());
  Eigen::MatrixXd q(run.q.rows(), C);
  Eigen::VectorXd prior(C);
  for (Eigen::Index c = 0; c < C; ++c) {
    q.col(perm[static_cast<std::size_t>(c)]) = run.q.col(c);
    prior(perm[static_cast<std::size_t>(c)]) = run.params.prior(c);
  }
  for (auto& t : run.params.tables) {
    Eigen::MatrixXd u(t.rows(), t.cols());
    for (Eigen::Index c = 0; c < C; ++c) u.row(perm[static_cast<std::size_t>(c)]) = t.row(c);
    t = std::move(u);
  }
  run.q = std::move(q);
  run.params.prior = std::move(prior);
}

}  // namespace

DawidSkeneFit dawid_skene_em(const LabelMatrix& votes, int num_classes, const LabelModelConfig& config) {
  config.validate();
  check_votes(votes, num_classes);
  if (votes.cols() < 1) throw UsageError("dawid_skene_em: need at least one LF");
  const Observations obs = covered_rows(votes, num_classes);
  if (obs.rows.empty()) throw UsageError("dawid_skene_em: no covered instances");
  const auto n_cov = static_cast<Eigen::Index>(obs.rows.size());

  // Majority-vote start, nudged toward each row's lowest-index top class so
  // that exactly tied rows do not pin EM to a symmetric fixed point.
  const ProbLabels mv = majority_vote(votes, num_classes);
  Eigen::MatrixXd q0(n_cov, num_classes);
  for (Eigen::Index r = 0; r < n_cov; ++r) {
    q0.row(r) = (1.0 - kTieNudge) * mv.probs.row(obs.rows[static_cast<std::size_t>(r)]);
    q0(r, argmax_lowest(mv.probs.row(obs.rows[static_cast<std::size_t>(r)]))) += kTieNudge;
  }

  EmRun best = run_em(obs, q0, num_classes, votes.cols(), config);
  // Seeded random restarts; a restart replaces the incumbent only when it is
  // strictly better, and is relabelled to agree with the majority vote.
  Rng rng(derive_seed({0xd5e7, static_cast<std::uint64_t>(n_cov), static_cast<std::uint64_t>(votes.cols())}));
  for (int restart = 0; restart < config.em_restarts; ++restart) {
    Eigen::MatrixXd q(n_cov, num_classes);
    for (Eigen::Index r = 0; r < n_cov; ++r) {
      for (int c = 0; c < num_classes; ++c) q(r, c) = -std::log(1.0 - rng.uniform());
      q.row(r) /= q.row(r).sum();
    }
    EmRun run = run_em(obs, std::move(q), num_classes, votes.cols(), config);
    const double a = run.trace.back(), b = best.trace.back();
    if (a > b + 1e-9 * std::max(1.0, std::abs(b))) {
      relabel(run, align_classes(run.q, q0));
      best = std::move(run);
    }
  }

  DawidSkeneFit fit;
  fit.objective_trace = std::move(best.trace);
  fit.iterations = best.iterations;
  fit.converged = best.converged;
  fit.labels = mv;
  for (std::size_t r = 0; r < obs.rows.size(); ++r)
    fit.labels.probs.row(obs.rows[r]) = best.q.row(static_cast<Eigen::Index>(r));
  fit.prior = best.params.prior;
  fit.outcome_tables = best.params.tables;
  for (const auto& t : best.params.tables) {
    Eigen::MatrixXd conf = t.leftCols(num_classes);
    for (int c = 0; c < num_classes; ++c) {
      const double z = conf.row(c).sum();
      if (z > 0.0) conf.row(c) /= z;
    }
    fit.confusions.push_back(std::move(conf));
  }
  return fit;
}

ProbLabels fit_label_model(const LabelMatrix& votes, int num_classes, const LabelModelConfig& config,
                           std::span<const double> accuracies) {
  switch (config.variant) {
    case LabelModelVariant::MajorityVote:
      return majority_vote(votes, num_classes);
    case LabelModelVariant::WeightedVote:
      return weighted_vote(votes, num_classes, accuracies);
    case LabelModelVariant::DawidSkeneEM: {
      if (votes.cols() == 0 || !(votes.array() != kAbstain).any())
        return majority_vote(votes, num_classes);  // nothing to estimate; all rows uncovered
      return dawid_skene_em(votes, num_classes, config).labels;
    }
  }
  throw UsageError("unknown label model variant");
}

std::vector<std::pair<InstanceId, ClassIndex>> resolve_training_labels(
    const ProbLabels& labels, const std::vector<InstanceId>& ids, std::optional<ClassIndex> default_class) {
  if (static_cast<Eigen::Index>(ids.size()) != labels.n())
    throw UsageError("resolve_training_labels: id count mismatch");
  std::vector<std::pair<InstanceId, ClassIndex>> out;
  for (Eigen::Index i = 0; i < labels.n(); ++i) {
    const auto id = ids[static_cast<std::size_t>(i)];
    if (labels.covered[static_cast<std::size_t>(i)])
      out.emplace_back(id, labels.argmax(i));
    else if (default_class)
      out.emplace_back(id, *default_class);
  }
  return out;
}

std::vector<std::pair<InstanceId, ClassIndex>> resolve_training_labels(const ProbLabels& labels,
                                                                       const Dataset& dataset) {
  std::vector<InstanceId> ids;
  for (const auto& x : dataset.train) ids.push_back(x.id);
  return resolve_training_labels(labels, ids, dataset.default_class);
}

}  // namespace lfloop
