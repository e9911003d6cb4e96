// Acceptance gate: one PASS/FAIL line per criterion, each under its runtime limit.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "lfloop/aggregate.hpp"
#include "lfloop/corpus.hpp"
#include "lfloop/downstream.hpp"
#include "lfloop/errors.hpp"
#include "lfloop/labelfns.hpp"
#include "lfloop/lfgate.hpp"
#include "lfloop/metrics.hpp"
#include "lfloop/pipeline.hpp"
#include "lfloop/plmclient.hpp"
#include "lfloop/prompting.hpp"
#include "lfloop/rng.hpp"
#include "lfloop/select.hpp"
#include "lfloop/synthetic.hpp"

using namespace lfloop;
namespace fs = std::filesystem;

namespace {

// Collects failed checks for one criterion.
struct Check {
  std::vector<std::string> failures;
  std::string summary;

  void expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 20) failures.push_back(what);
    if (!ok && failures.size() == 20) failures.push_back("...");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Instance text_instance(InstanceId id, std::string text, std::optional<ClassIndex> gold) {
  Instance x;
  x.id = id;
  x.text = std::move(text);
  x.gold = gold;
  return x;
}

// ---------------------------------------------------------------- 1

void filter_constants(Check& ck) {
  Dataset ds;
  ds.classes = {"neg", "pos"};
  const FilterConfig cfg;
  ck.expect(cfg.accuracy_threshold == 0.6, "default accuracy threshold is not 0.6");
  ck.expect(cfg.redundancy_threshold == 0.95, "default redundancy threshold is not 0.95");

  // "good" fires on all 20 validation instances; `correct` of them are pos.
  const auto lf = compile_lf(LfSpec{LfKind::Keyword, "good", 1, {}}, ds);
  for (auto [correct, expect_pass] : {std::pair{11, false}, std::pair{12, true}, std::pair{13, true}}) {
    std::vector<Instance> valid;
    for (int i = 0; i < 20; ++i) valid.push_back(text_instance(i, "a good thing", i < correct ? 1 : 0));
    const auto r = accuracy_filter(lf, PreparedSplit(valid), cfg);
    ck.expect(r.pass == expect_pass, "accuracy " + std::to_string(correct) + "/20 gave pass=" +
                                         std::to_string(r.pass));
    ck.expect(r.measured && std::abs(*r.measured - correct / 20.0) < 1e-15, "accuracy not measured");
  }
  {
    std::vector<Instance> valid;
    for (int i = 0; i < 20; ++i) valid.push_back(text_instance(i, "nothing here", 0));
    const auto r = accuracy_filter(lf, PreparedSplit(valid), cfg);
    ck.expect(r.pass && !r.measured, "zero validation activity must pass without a measurement");
  }

  auto columns = [](int n, int agree) {
    std::vector<ClassIndex> a(n, 1), b(n, 1);
    for (int i = agree; i < n; ++i) b[i] = kAbstain;
    return std::pair{a, b};
  };
  {
    auto [a, b] = columns(20, 19);
    ck.expect(std::abs(consensus(a, b) - 0.95) < 1e-15, "consensus 19/20 != 0.95");
    ck.expect(redundancy_filter(a, {b}, cfg).pass, "consensus 19/20 = 0.95 must pass");
  }
  {
    auto [a, b] = columns(100, 96);
    ck.expect(std::abs(consensus(a, b) - 0.96) < 1e-15, "consensus 96/100 != 0.96");
    ck.expect(!redundancy_filter(a, {b}, cfg).pass, "consensus 96/100 must fail");
  }

  ck.expect(validity_filter(LfSpec{LfKind::Keyword, "free gift card", 1, {}}, ds).pass, "3-gram rejected");
  ck.expect(validity_filter(LfSpec{LfKind::Keyword, "free", 1, {}}, ds).pass, "1-gram rejected");
  const auto four = validity_filter(LfSpec{LfKind::Keyword, "free gift card now", 1, {}}, ds);
  ck.expect(!four.pass && four.reason == "ngram_length", "4-gram not rejected as ngram_length");
  const auto zero = validity_filter(LfSpec{LfKind::Keyword, " !! ", 1, {}}, ds);
  ck.expect(!zero.pass && zero.reason == "ngram_length", "0-token keyword not rejected");
  ck.summary = "0.55 fail / 0.60 pass / 0.65 pass; 19/20 pass, 96/100 fail; 3-gram pass, 4-gram fail";
}

// ---------------------------------------------------------------- 2
//
// Oracle: the fixed points of EM on the smoothed objective F(prior, tables)
// are exactly the parameters theta*(q) = Mstep(q) with q the posteriors they
// induce, and rows sharing a vote pattern share a posterior. Hence
// max F = max over per-pattern q in [0,1]^d of G(q) = F(theta*(q)). G is
// searched on a grid and refined by compass search; everything below is
// written independently of the library.

constexpr double kSmooth = 1.0;
constexpr int kOutcomes = 3;  // vote 0, vote 1, abstain
constexpr int kMaxLf = 3;

struct Problem {
  int m = 0;
  std::vector<std::array<int, kMaxLf>> patterns;  // distinct rows, outcome codes 0/1/2
  std::vector<double> weight;                     // multiplicity
  double n = 0;
};

struct Theta {
  double prior[2];
  double table[kMaxLf][2][kOutcomes];  // [lf][class][outcome]
};

Theta m_step(const Problem& p, const std::vector<double>& q) {
  Theta th{};
  double nc[2] = {0, 0};
  double cnt[kMaxLf][2][kOutcomes] = {};
  for (std::size_t r = 0; r < p.patterns.size(); ++r) {
    const double a = p.weight[r] * q[r], b = p.weight[r] * (1 - q[r]);
    nc[0] += a;
    nc[1] += b;
    for (int j = 0; j < p.m; ++j) {
      cnt[j][0][p.patterns[r][j]] += a;
      cnt[j][1][p.patterns[r][j]] += b;
    }
  }
  for (int c = 0; c < 2; ++c) th.prior[c] = (nc[c] + kSmooth) / (p.n + 2 * kSmooth);
  for (int j = 0; j < p.m; ++j)
    for (int c = 0; c < 2; ++c)
      for (int k = 0; k < kOutcomes; ++k) th.table[j][c][k] = (cnt[j][c][k] + kSmooth) / (nc[c] + kOutcomes * kSmooth);
  return th;
}

void joint(const Problem& p, const Theta& th, std::size_t r, double lik[2]) {
  for (int c = 0; c < 2; ++c) {
    lik[c] = th.prior[c];
    for (int j = 0; j < p.m; ++j) lik[c] *= th.table[j][c][p.patterns[r][j]];
  }
}

double objective(const Problem& p, const Theta& th) {
  double f = 0, lik[2];
  for (std::size_t r = 0; r < p.patterns.size(); ++r) {
    joint(p, th, r, lik);
    f += p.weight[r] * std::log(lik[0] + lik[1]);
  }
  double pen = std::log(th.prior[0]) + std::log(th.prior[1]);
  for (int j = 0; j < p.m; ++j)
    for (int c = 0; c < 2; ++c)
      for (int k = 0; k < kOutcomes; ++k) pen += std::log(th.table[j][c][k]);
  return f + kSmooth * pen;
}

std::vector<double> posterior0(const Problem& p, const Theta& th) {
  std::vector<double> out(p.patterns.size());
  double lik[2];
  for (std::size_t r = 0; r < p.patterns.size(); ++r) {
    joint(p, th, r, lik);
    out[r] = lik[0] / (lik[0] + lik[1]);
  }
  return out;
}

long g_evals = 0;
double g_of(const Problem& p, const std::vector<double>& q) {
  ++g_evals;
  return objective(p, m_step(p, q));
}

// Hooke-Jeeves pattern search on [0,1]^d: exploratory +-step moves along each
// axis, then a pattern move along the last improvement; the step halves when
// exploration fails.
double explore(const Problem& p, std::vector<double>& q, double f, double step) {
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (double dir : {1.0, -1.0}) {
      const double old = q[i];
      q[i] = std::clamp(old + dir * step, 0.0, 1.0);
      const double ft = q[i] == old ? f : g_of(p, q);
      if (ft > f) {
        f = ft;
        break;
      }
      q[i] = old;
    }
  }
  return f;
}

double compass(const Problem& p, std::vector<double>& q, double f, double step) {
  while (step > 1e-8) {
    auto base = q;
    const double fe = explore(p, q, f, step);
    if (fe <= f) {
      step *= 0.5;
      continue;
    }
    f = fe;
    // pattern moves while they keep paying off
    while (true) {
      auto trial = q;
      for (std::size_t i = 0; i < q.size(); ++i) trial[i] = std::clamp(2 * q[i] - base[i], 0.0, 1.0);
      const double ft = explore(p, trial, g_of(p, trial), step);
      if (ft <= f) break;
      base = q;
      q = std::move(trial);
      f = ft;
    }
  }
  return f;
}

struct OracleResult {
  double best = -INFINITY;
  std::vector<std::vector<double>> maximizers;  // posteriors per pattern, within tolerance of best
};

OracleResult oracle(const Problem& p, std::size_t starts) {
  const std::size_t d = p.patterns.size();
  const int levels = d == 1 ? 41 : d == 2 ? 21 : d == 3 ? 9 : d == 4 ? 5 : 3;
  std::vector<std::pair<double, std::vector<double>>> grid;
  std::vector<int> idx(d, 0);
  std::vector<double> q(d);
  while (true) {
    for (std::size_t i = 0; i < d; ++i) q[i] = (idx[i] + 0.5) / levels;
    grid.emplace_back(g_of(p, q), q);
    std::size_t i = 0;
    while (i < d && ++idx[i] == levels) idx[i++] = 0;
    if (i == d) break;
  }
  const std::size_t k = std::min(starts, grid.size());
  std::partial_sort(grid.begin(), grid.begin() + static_cast<long>(k), grid.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::pair<double, std::vector<double>>> refined;
  OracleResult out;
  for (std::size_t s = 0; s < k; ++s) {
    auto x = grid[s].second;
    const double f = compass(p, x, grid[s].first, 0.5 / levels);
    out.best = std::max(out.best, f);
    refined.emplace_back(f, posterior0(p, m_step(p, x)));
  }
  for (auto& [f, post] : refined)
    if (f >= out.best - 1e-9) out.maximizers.push_back(post);
  return out;
}

// Visits every multiset of `n` rows drawn from `patterns`.
void multisets(int n_patterns, int n, const std::function<void(const std::vector<int>&)>& visit) {
  std::vector<int> pick(n, 0);
  while (true) {
    visit(pick);
    int i = n - 1;
    while (i >= 0 && pick[i] == n_patterns - 1) --i;
    if (i < 0) return;
    ++pick[i];
    for (int j = i + 1; j < n; ++j) pick[j] = pick[i];
  }
}

void label_model_oracle(Check& ck) {
  LabelModelConfig cfg;
  cfg.em_max_iters = 200000;
  cfg.em_tol = 1e-11;
  std::size_t tested = 0, exhaustive = 0, sampled = 0, mirror = 0, ridge = 0, failed = 0;
  double worst = 0, em_secs = 0;

  auto test_one = [&](int m, const std::vector<std::vector<int>>& rows) {
    // rows hold votes -1/0/1
    const int n = static_cast<int>(rows.size());
    LabelMatrix votes(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) votes(i, j) = rows[i][j];
    const auto t0 = std::chrono::steady_clock::now();
    const auto fit = dawid_skene_em(votes, 2, cfg);
    em_secs += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (std::size_t t = 1; t < fit.objective_trace.size(); ++t)
      if (fit.objective_trace[t] < fit.objective_trace[t - 1] - 1e-9) {
        ck.expect(false, "objective decreased at iteration " + std::to_string(t));
        break;
      }
    ck.expect(fit.converged, "EM did not converge on an n=" + std::to_string(n) + " problem");

    Problem p;
    p.m = m;
    p.n = n;
    std::map<std::array<int, kMaxLf>, std::size_t> at;
    std::vector<std::size_t> row_pattern;
    for (const auto& r : rows) {
      std::array<int, kMaxLf> code{};
      for (int j = 0; j < m; ++j) code[j] = r[j] == kAbstain ? 2 : r[j];
      auto [it, fresh] = at.emplace(code, p.patterns.size());
      if (fresh) {
        p.patterns.push_back(code);
        p.weight.push_back(0);
      }
      p.weight[it->second] += 1;
      row_pattern.push_back(it->second);
    }
    // EM's posterior per pattern (rows of one pattern agree).
    std::vector<double> q_em(p.patterns.size());
    for (int i = 0; i < n; ++i) q_em[row_pattern[i]] = fit.labels.probs(i, 0);

    auto matches = [&](const OracleResult& o) {
      for (const auto& post : o.maximizers) {
        double d_direct = 0, d_mirror = 0;
        for (int i = 0; i < n; ++i) {
          const double em = fit.labels.probs(i, 0);
          d_direct = std::max(d_direct, std::abs(em - post[row_pattern[i]]));
          d_mirror = std::max(d_mirror, std::abs(em - (1 - post[row_pattern[i]])));
        }
        if (std::min(d_direct, d_mirror) <= 1e-3) {
          mirror += d_mirror < d_direct;
          worst = std::max(worst, std::min(d_direct, d_mirror));
          return true;
        }
      }
      return false;
    };
    // Non-isolated maxima: EM's posteriors are themselves a global maximizer of
    // G and a fixed point of posterior(Mstep(.)).
    auto on_ridge = [&](const OracleResult& o) {
      const Theta th = m_step(p, q_em);
      if (objective(p, th) < o.best - 1e-7) return false;
      const auto back = posterior0(p, th);
      for (std::size_t r = 0; r < back.size(); ++r)
        if (std::abs(back[r] - q_em[r]) > 1e-4) return false;
      return true;
    };

    auto o = oracle(p, 2);
    bool ok = matches(o);
    if (!ok && on_ridge(o)) {
      ok = true;
      ++ridge;
    }
    if (!ok) {
      o = oracle(p, 16);
      ok = matches(o);
      if (!ok && on_ridge(o)) {
        ok = true;
        ++ridge;
      }
    }
    if (!ok) {
      ++failed;
      std::ostringstream s;
      s << "n=" << n << " m=" << m << " rows:";
      for (const auto& r : rows) {
        s << " (";
        for (int v : r) s << (v == kAbstain ? "-" : std::to_string(v));
        s << ")";
      }
      s.precision(8);
      s << " EM objective " << g_of(p, q_em) << " vs oracle " << o.best;
      ck.expect(false, s.str());
    }
    ++tested;
  };

  auto all_patterns = [](int m) {
    std::vector<std::vector<int>> out;
    const int total = static_cast<int>(std::pow(3, m));
    for (int code = 0; code < total; ++code) {
      std::vector<int> r(m);
      int c = code;
      bool any = false;
      for (int j = 0; j < m; ++j) {
        r[j] = c % 3 - 1;  // -1 abstain, 0, 1
        c /= 3;
        any = any || r[j] != kAbstain;
      }
      if (any) out.push_back(r);
    }
    return out;
  };

  // Exhaustive where the oracle fits the time budget.
  for (int m = 1; m <= 3; ++m) {
    const auto pats = all_patterns(m);
    const int n_max = m <= 2 ? 6 : 3;
    for (int n = 1; n <= n_max; ++n)
      multisets(static_cast<int>(pats.size()), n, [&](const std::vector<int>& pick) {
        std::vector<std::vector<int>> rows;
        for (int i : pick) rows.push_back(pats[i]);
        test_one(m, rows);
        ++exhaustive;
      });
  }
  // m = 3, n = 4..6: uniform sample of multisets.
  {
    const auto pats = all_patterns(3);
    Rng rng(20240611);
    for (int n = 4; n <= 6; ++n)
      for (int s = 0; s < 400; ++s) {
        std::vector<std::vector<int>> rows;
        for (int i = 0; i < n; ++i) rows.push_back(pats[rng.below(pats.size())]);
        test_one(3, rows);
        ++sampled;
      }
  }
  ck.summary = std::to_string(tested) + " matrices (" + std::to_string(exhaustive) + " exhaustive, " +
               std::to_string(sampled) + " sampled m=3 n=4..6), max posterior gap " + fmt("%.2e", worst) +
               ", " + std::to_string(mirror) + " matched the label-swapped maximizer, " +
               std::to_string(ridge) + " on non-isolated maxima, " + std::to_string(failed) + " mismatched; EM time " + fmt("%.1f s", em_secs) + ", oracle evals " + fmt("%.0f", double(g_evals));
}

// ---------------------------------------------------------------- 3

void dawid_skene_recovery(Check& ck) {
  const int n = 5000;
  const std::array<double, 3> acc = {0.9, 0.7, 0.55};
  Rng rng(7);
  LabelMatrix votes(n, 3);
  std::vector<int> gold(n);
  for (int i = 0; i < n; ++i) {
    gold[i] = rng.bernoulli(0.5) ? 1 : 0;
    for (int j = 0; j < 3; ++j) votes(i, j) = rng.bernoulli(acc[j]) ? gold[i] : 1 - gold[i];
  }
  const auto fit = dawid_skene_em(votes, 2, LabelModelConfig{});
  const auto mv = majority_vote(votes, 2);
  int ds_ok = 0, mv_ok = 0;
  for (int i = 0; i < n; ++i) {
    ds_ok += fit.labels.argmax(i) == gold[i];
    mv_ok += mv.argmax(i) == gold[i];
  }
  std::string diag;
  for (int j = 0; j < 3; ++j)
    for (int c = 0; c < 2; ++c) {
      const double v = fit.confusions[j](c, c);
      diag += fmt(" %.3f", v);
      ck.expect(std::abs(v - acc[j]) <= 0.05, "LF " + std::to_string(j) + " class " + std::to_string(c) +
                                                  " diagonal " + fmt("%.4f", v) + " vs " + fmt("%.2f", acc[j]));
    }
  ck.expect(ds_ok > mv_ok, "Dawid-Skene accuracy not above majority vote");
  ck.summary = "diagonals" + diag + "; DS acc " + fmt("%.4f", ds_ok / double(n)) + " > MV acc " +
               fmt("%.4f", mv_ok / double(n));
}

// ---------------------------------------------------------------- 4

void downstream_correctness(Check& ck) {
  Rng rng(11);
  double worst = 0;
  for (int prob = 0; prob < 20; ++prob) {
    const int dim = 1 + static_cast<int>(rng.below(20));
    const int C = 2 + static_cast<int>(rng.below(3));
    const int n = 5 + static_cast<int>(rng.below(46));
    std::vector<Eigen::Triplet<double>> trip;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dim; ++j)
        if (rng.bernoulli(0.5)) trip.emplace_back(i, j, 4 * rng.uniform() - 2);
    FeatureMatrix x(n, dim);
    x.setFromTriplets(trip.begin(), trip.end());
    Eigen::MatrixXd targets(n, C);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < C; ++c) targets(i, c) = rng.uniform() + 1e-3;
      targets.row(i) /= targets.row(i).sum();
    }
    LinearModel model = LinearModel::zeros(C, dim, prob % 3 == 0 ? 0.0 : 0.05 * (prob % 3));
    for (int c = 0; c < C; ++c) {
      model.bias(c) = rng.uniform() - 0.5;
      for (int j = 0; j < dim; ++j) model.weights(c, j) = 2 * rng.uniform() - 1;
    }
    Eigen::MatrixXd gw;
    Eigen::VectorXd gb;
    logreg_objective(model, x, targets, &gw, &gb);
    const double h = 1e-5;
    Eigen::MatrixXd fw(C, dim);
    Eigen::VectorXd fb(C);
    for (int c = 0; c < C; ++c) {
      for (int j = 0; j < dim; ++j) {
        LinearModel a = model, b = model;
        a.weights(c, j) += h;
        b.weights(c, j) -= h;
        fw(c, j) = (logreg_objective(a, x, targets) - logreg_objective(b, x, targets)) / (2 * h);
      }
      LinearModel a = model, b = model;
      a.bias(c) += h;
      b.bias(c) -= h;
      fb(c) = (logreg_objective(a, x, targets) - logreg_objective(b, x, targets)) / (2 * h);
    }
    const double num = std::sqrt((gw - fw).squaredNorm() + (gb - fb).squaredNorm());
    const double den = std::max(std::sqrt(gw.squaredNorm() + gb.squaredNorm()),
                                std::sqrt(fw.squaredNorm() + fb.squaredNorm()));
    const double rel = num / std::max(den, 1e-300);
    worst = std::max(worst, rel);
    ck.expect(rel <= 1e-5, "problem " + std::to_string(prob) + " relative gradient error " + fmt("%.3e", rel));
  }

  // Two clusters separated by a margin on the first coordinate.
  std::vector<Eigen::Triplet<double>> trip;
  std::vector<ClassIndex> labels;
  for (int i = 0; i < 40; ++i) {
    const int y = i % 2;
    trip.emplace_back(i, 0, (y ? 1.0 : -1.0) * (0.5 + rng.uniform()));
    trip.emplace_back(i, 1, 4 * rng.uniform() - 2);
    labels.push_back(y);
  }
  FeatureMatrix x(40, 2);
  x.setFromTriplets(trip.begin(), trip.end());
  TrainOptions opt;
  opt.l2 = 1e-6;
  const auto model = train_logreg(x, labels, 2, opt);
  const double train_acc = accuracy(predict(model, x), labels);
  ck.expect(train_acc == 1.0, "separable toy training accuracy " + fmt("%.3f", train_acc));
  ck.summary = "20 problems, worst relative gradient error " + fmt("%.2e", worst) + "; separable toy accuracy " +
               fmt("%.1f", train_acc);
}

// ---------------------------------------------------------------- 5

void sampler_exactness(Check& ck) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(60));
    const int dim = 1 + static_cast<int>(rng.below(8));
    const int C = 2 + static_cast<int>(rng.below(3));
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<std::vector<double>> dense(n, std::vector<double>(dim, 0.0));
    for (int i = 0; i < n; ++i) {
      if (i > 0 && rng.bernoulli(0.2)) {
        dense[i] = dense[rng.below(i)];  // exact duplicates create entropy ties
      } else {
        for (int j = 0; j < dim; ++j)
          if (rng.bernoulli(0.6)) dense[i][j] = 2 * rng.uniform() - 1;
      }
      for (int j = 0; j < dim; ++j)
        if (dense[i][j] != 0.0) trip.emplace_back(i, j, dense[i][j]);
    }
    FeatureMatrix x(n, dim);
    x.setFromTriplets(trip.begin(), trip.end());
    LinearModel model = LinearModel::zeros(C, dim);
    for (int c = 0; c < C; ++c) {
      model.bias(c) = rng.uniform() - 0.5;
      for (int j = 0; j < dim; ++j) model.weights(c, j) = 4 * rng.uniform() - 2;
    }
    // ids are a shuffled, gappy sequence so row order and id order differ
    std::vector<InstanceId> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = 3 * i + 1;
    rng.shuffle(ids);
    std::unordered_map<InstanceId, Eigen::Index> row_of;
    for (int i = 0; i < n; ++i) row_of[ids[i]] = i;
    std::vector<InstanceId> pool;
    for (int i = 0; i < n; ++i)
      if (rng.bernoulli(0.7)) pool.push_back(ids[i]);
    if (pool.empty()) pool.push_back(ids[0]);

    // brute force
    InstanceId best = -1;
    double best_h = -1;
    for (InstanceId id : pool) {
      const int i = static_cast<int>(row_of[id]);
      std::vector<double> z(C);
      for (int c = 0; c < C; ++c) {
        z[c] = model.bias(c);
        for (int j = 0; j < dim; ++j) z[c] += model.weights(c, j) * dense[i][j];
      }
      const double mx = *std::max_element(z.begin(), z.end());
      double s = 0;
      for (double& v : z) s += (v = std::exp(v - mx));
      double h = 0;
      for (double v : z) {
        const double pr = v / s;
        if (pr > 0) h -= pr * std::log(pr);
      }
      if (h > best_h + 1e-12 || (std::abs(h - best_h) <= 1e-12 && id < best)) {
        best_h = h;
        best = id;
      }
    }
    SelectionState state(pool, 1);
    const InstanceId got = uncertainty_sampler(state, model, x, row_of);
    ck.expect(got == best, "uncertainty pool " + std::to_string(trial) + ": got " + std::to_string(got) +
                               " expected " + std::to_string(best));
  }

  // KATE
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(50));
    const int dim = 2 + static_cast<int>(rng.below(7));
    EmbeddingTable table;
    table.dim = dim;
    std::vector<Instance> valid;
    std::vector<Eigen::VectorXd> vecs;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd v(dim);
      if (i > 0 && rng.bernoulli(0.15)) {
        v = vecs[rng.below(vecs.size())];
      } else {
        for (int j = 0; j < dim; ++j) v(j) = 2 * rng.uniform() - 1;
      }
      vecs.push_back(v);
      const InstanceId id = 1000 - 7 * i;  // descending ids
      valid.push_back(text_instance(id, "v", 0));
      table.rows[id] = v;
    }
    Eigen::VectorXd query(dim);
    for (int j = 0; j < dim; ++j) query(j) = 2 * rng.uniform() - 1;
    const int k = 1 + static_cast<int>(rng.below(std::min(n, 10)));
    std::vector<std::pair<double, InstanceId>> all;
    for (int i = 0; i < n; ++i) {
      double dot = 0, na = 0, nb = 0;
      for (int j = 0; j < dim; ++j) {
        dot += query(j) * vecs[i](j);
        na += query(j) * query(j);
        nb += vecs[i](j) * vecs[i](j);
      }
      all.emplace_back(1 - dot / std::sqrt(na * nb), valid[i].id);
    }
    std::sort(all.begin(), all.end());
    std::vector<InstanceId> expect;
    for (int i = 0; i < k; ++i) expect.push_back(all[i].second);
    const auto got = kate_nearest(query, table, valid, k);
    ck.expect(got == expect, "KATE query " + std::to_string(trial) + " differs from brute force");
  }

  // SEU hand example: x1 has candidates (acc 0.8, cov 10), (acc 0.4, cov 20);
  // x2 has (acc 0.9, cov 5). Proposal probabilities are proportional to accuracy:
  // x1: (0.8/1.2) * 8 + (0.4/1.2) * 8 = 8; x2: 1 * 4.5 = 4.5.
  const std::vector<SeuCandidate> x1 = {{0.8, 10, 1}, {0.4, 20, 1}};
  const std::vector<SeuCandidate> x2 = {{0.9, 5, 1}};
  const double u1 = expected_utility(x1), u2 = expected_utility(x2);
  ck.expect(std::abs(u1 - 8.0) < 1e-12 && std::abs(u2 - 4.5) < 1e-12,
            "SEU expected utilities " + fmt("%.6f", u1) + " / " + fmt("%.6f", u2));
  {
    SelectionState state({1, 2}, 0);
    const std::map<InstanceId, std::vector<SeuCandidate>> cands = {{1, x1}, {2, x2}};
    const InstanceId got = select_max(state, state.pool(), [&](InstanceId id) { return expected_utility(cands.at(id)); });
    ck.expect(got == 1, "SEU did not pick x1");
  }
  // Invariance: scaling every utility by lambda > 0 keeps the argmax.
  for (int trial = 0; trial < 100; ++trial) {
    std::map<InstanceId, std::vector<SeuCandidate>> cands;
    std::vector<InstanceId> pool;
    const int n = 2 + static_cast<int>(rng.below(20));
    for (int i = 0; i < n; ++i) {
      const InstanceId id = 10 + i;
      pool.push_back(id);
      const int k = static_cast<int>(rng.below(5));
      for (int c = 0; c < k; ++c)
        cands[id].push_back({rng.uniform(), static_cast<double>(rng.below(50)), 0.5 + rng.uniform()});
      if (i > 0 && rng.bernoulli(0.2)) cands[id] = cands[id - 1];
    }
    auto pick = [&](double lambda) {
      SelectionState state(pool, 0);
      return select_max(state, state.pool(), [&](InstanceId id) {
        auto cs = cands[id];
        for (auto& c : cs) c.new_coverage *= lambda;
        return expected_utility(cs);
      });
    };
    const InstanceId base = pick(1.0);
    for (double lambda : {0.125, 3.0, 1024.0})
      ck.expect(pick(lambda) == base, "SEU choice changed under rescaling by " + fmt("%g", lambda));
  }
  ck.summary = "100 uncertainty pools, 100 KATE queries match brute force; SEU " + fmt("%.1f", u1) + " vs " +
               fmt("%.1f", u2) + " picks x1; rescaling invariant on 100 pools";
}

// ---------------------------------------------------------------- 6

void self_consistency(Check& ck) {
  const std::vector<std::string> classes = {"HAM", "SPAM"};
  auto resp = [](std::optional<ClassIndex> label, std::vector<std::string> kws) {
    ParsedResponse r;
    r.label = label;
    r.keywords = std::move(kws);
    return r;
  };
  std::vector<ParsedResponse> six_four;
  for (int i = 0; i < 6; ++i) six_four.push_back(resp(1, {"subscribe"}));
  for (int i = 0; i < 4; ++i) six_four.push_back(resp(0, {"great song"}));
  ck.expect(aggregate_sc(six_four, TaskKind::TextClassification, 2).label == 1, "6/4 did not pick SPAM");

  std::vector<ParsedResponse> five_five;
  for (int i = 0; i < 5; ++i) five_five.push_back(resp(1, {}));
  for (int i = 0; i < 5; ++i) five_five.push_back(resp(0, {}));
  ck.expect(aggregate_sc(five_five, TaskKind::TextClassification, 2).label == 0, "5/5 tie did not go to class 0");
  std::rotate(five_five.begin(), five_five.begin() + 5, five_five.end());
  ck.expect(aggregate_sc(five_five, TaskKind::TextClassification, 2).label == 0, "5/5 tie depends on order");

  std::vector<ParsedResponse> mixed = {resp(1, {"check out", "free"}), resp(std::nullopt, {"watch"}),
                                       resp(0, {"free", "love"}),      resp(1, {"check out", "channel"}),
                                       resp(1, {}),                     resp(0, {"love"}),
                                       resp(1, {"subscribe"}),          resp(0, {}),
                                       resp(std::nullopt, {}),          resp(1, {"free"})};
  const auto agg = aggregate_sc(mixed, TaskKind::TextClassification, 2);
  // Unparseable responses still contribute payloads; everything binds to the majority label.
  const std::vector<std::string> expect = {"check out", "free", "watch", "love", "channel", "subscribe"};
  ck.expect(agg.label == 1, "mixed set did not pick SPAM");
  ck.expect(agg.payloads == expect, "payload union is not first-occurrence ordered");
  std::vector<ParsedResponse> none(10, resp(std::nullopt, {}));
  ck.expect(!aggregate_sc(none, TaskKind::TextClassification, 2).label, "all-unparseable set produced a label");

  // Configured self-consistency requests 10 samples at temperature 1.
  const auto cfg = config_from_json({{"prompt", {{"method", "self_consistency"}}}});
  ck.expect(cfg.prompt.n_responses == 10, "self-consistency default n is not 10");
  ck.expect(cfg.prompt.effective_temperature() > 0, "self-consistency samples at temperature 0");

  // The mock backend honours n.
  SyntheticOptions so;
  so.n_train = 20;
  so.n_valid = 10;
  so.n_test = 10;
  const auto corpus = generate_synthetic(so);
  MockBackend backend(corpus.oracle, corpus.dataset);
  CompletionRequest req;
  req.messages = {{Role::System, "task"}, {Role::User, "classify"}};
  req.n = 10;
  req.temperature = 1.0;
  req.meta.query_id = corpus.dataset.train[0].id;
  req.meta.cot = true;
  const auto texts = backend.complete(req);
  ck.expect(texts.size() == 10, "mock backend returned " + std::to_string(texts.size()) + " responses for n=10");
  ck.summary = "6/4 -> SPAM, 5/5 -> class 0 in either order, union order kept, n = 10 delivered";
}

// ---------------------------------------------------------------- 7

RunConfig synthetic_config(std::uint64_t seed) {
  RunConfig c;
  c.prompt.method = PromptMethod::FewShot;
  c.prompt.selector = IcSelector::ClassBalanced;
  c.prompt.k = 1;
  c.sampler = SamplerKind::Random;
  c.n_iterations = 50;
  c.seed = seed;
  c.label_model.variant = LabelModelVariant::DawidSkeneEM;
  return c;
}

struct SeedStats {
  double test = 0, lf_num = 0, lf_acc = 0;
  bool all_valid_ok = true;
  std::size_t inactive = 0;
  bool complete = true;
};

SeedStats run_seeds(const SyntheticCorpus& corpus, const MockOracleConfig& oracle, bool accuracy_filter,
                    std::string& per_seed) {
  SeedStats s;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RunConfig c = synthetic_config(seed);
    c.filters.enable_accuracy = accuracy_filter;
    MockBackend backend(oracle, corpus.dataset);
    const auto report = run(c, corpus.dataset, backend, {&corpus.annotations, nullptr});
    s.complete = s.complete && report.complete;
    s.test += report.metrics.test_score.value_or(0) / 5;
    s.lf_num += static_cast<double>(report.metrics.lf_num) / 5;
    s.lf_acc += report.metrics.lf_acc_avg.value_or(0) / 5;
    for (const auto& a : report.lf_valid_accuracy) {
      if (!a)
        ++s.inactive;
      else if (*a < 0.6)
        s.all_valid_ok = false;
    }
    per_seed += (per_seed.empty() ? "" : ",") + std::to_string(report.metrics.lf_num);
  }
  return s;
}

void end_to_end(Check& ck) {
  SyntheticOptions so;  // C = 2, 2000/200/500, q = 0.8, p_label = p_keyword = 0.9
  so.seed = 1;
  const auto corpus = generate_synthetic(so);
  MockOracleConfig degraded = corpus.oracle;
  degraded.p_label = 0.5;
  degraded.p_keyword = 0.2;

  std::string good_seeds, bad_seeds, off_seeds;
  const auto good = run_seeds(corpus, corpus.oracle, true, good_seeds);
  const auto bad = run_seeds(corpus, degraded, true, bad_seeds);
  const auto off = run_seeds(corpus, degraded, false, off_seeds);

  ck.expect(good.complete && bad.complete && off.complete, "a run did not complete");
  ck.expect(good.test >= 0.85, "mean test accuracy " + fmt("%.4f", good.test) + " < 0.85");
  ck.expect(good.all_valid_ok, "an admitted LF has validation accuracy < 0.6 (good oracle)");
  ck.expect(bad.lf_num < good.lf_num, "degraded oracle kept " + fmt("%.1f", bad.lf_num) + " LFs vs " +
                                          fmt("%.1f", good.lf_num));
  ck.expect(bad.all_valid_ok, "an admitted LF has validation accuracy < 0.6 (degraded oracle)");
  ck.expect(off.lf_acc < bad.lf_acc, "removing the accuracy filter did not lower LF_acc_avg");
  ck.summary = "test acc " + fmt("%.4f", good.test) + ", LF_num " + fmt("%.1f", good.lf_num) + " [" + good_seeds +
               "] vs degraded " + fmt("%.1f", bad.lf_num) + " [" + bad_seeds + "]; LF_acc_avg degraded " +
               fmt("%.3f", bad.lf_acc) + " vs accuracy filter off " + fmt("%.3f", off.lf_acc) + "; " +
               std::to_string(good.inactive + bad.inactive) + " admitted LFs inactive on valid";
}

// ---------------------------------------------------------------- 8

void determinism_replay(Check& ck) {
  SyntheticOptions so;
  so.seed = 2;
  const auto corpus = generate_synthetic(so);
  std::size_t bytes = 0;
  for (auto sampler : {SamplerKind::Random, SamplerKind::Uncertainty, SamplerKind::Seu}) {
    RunConfig c = synthetic_config(3);
    c.sampler = sampler;
    c.n_iterations = 20;
    MockBackend b1(corpus.oracle, corpus.dataset), b2(corpus.oracle, corpus.dataset);
    const auto r1 = dump_report(run(c, corpus.dataset, b1, {&corpus.annotations, nullptr}));
    const auto r2 = dump_report(run(c, corpus.dataset, b2, {&corpus.annotations, nullptr}));
    ck.expect(r1 == r2, std::string(to_string(sampler)) + ": repeated runs differ");

    Transcript transcript;
    MockBackend inner(corpus.oracle, corpus.dataset);
    RecordingBackend rec(inner, transcript);
    const auto recorded = dump_report(run(c, corpus.dataset, rec, {&corpus.annotations, nullptr}));
    std::stringstream ss;
    write_transcript(ss, transcript);
    ReplayBackend replay(read_transcript(ss));
    const auto replayed = dump_report(run(c, corpus.dataset, replay, {&corpus.annotations, nullptr}));
    ck.expect(recorded == r1, std::string(to_string(sampler)) + ": recording changed the report");
    ck.expect(replayed == recorded, std::string(to_string(sampler)) + ": replay differs from the recorded run");
    bytes += r1.size();
  }
  {
    RunConfig c = synthetic_config(4);
    c.prompt.method = PromptMethod::SelfConsistency;
    c.prompt.n_responses = 10;
    c.n_iterations = 10;
    Transcript transcript;
    MockBackend inner(corpus.oracle, corpus.dataset);
    RecordingBackend rec(inner, transcript);
    const auto recorded = dump_report(run(c, corpus.dataset, rec, {&corpus.annotations, nullptr}));
    std::stringstream ss;
    write_transcript(ss, transcript);
    ReplayBackend replay(read_transcript(ss));
    ck.expect(dump_report(run(c, corpus.dataset, replay, {&corpus.annotations, nullptr})) == recorded,
              "self-consistency replay differs");
  }
  ck.summary = "random/uncertainty/SEU and self-consistency runs byte-identical on repeat and replay (" +
               std::to_string(bytes) + " report bytes)";
}

// ---------------------------------------------------------------- 9

void metric_definitions(Check& ck) {
  MetricInputs in;
  // Four iterations: correct, correct, unparseable, wrong.
  in.plm_labels = {0, 1, std::nullopt, 1};
  in.query_gold = {0, 1, 1, 0};
  in.train_gold = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  const int A = kAbstain;
  // LF 1 -> class 0 on rows 0,1,2,5 (3 of 4 right); LF 2 -> class 1 on rows 5,6 (2 of 2).
  in.lf_train_columns = {{0, 0, 0, A, A, 0, A, A, A, A}, {A, A, A, A, A, 1, 1, A, A, A}};
  LabelMatrix votes(10, 2);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 2; ++j) votes(i, j) = in.lf_train_columns[j][i];
  in.train_labels = majority_vote(votes, 2);  // row 5 ties -> class 0 (wrong)
  in.test_predicted = std::vector<ClassIndex>{1, 1, 1, 0, 0};
  in.test_gold = {1, 1, 0, 1, 0};  // TP 2, FP 1, FN 1
  in.test_metric = {MetricKind::BinaryF1, 1};
  const auto m = compute_metrics(in);
  auto eq = [&](const std::optional<double>& v, double expect, const char* name) {
    ck.expect(v && std::abs(*v - expect) <= 1e-12,
              std::string(name) + " = " + (v ? fmt("%.17g", *v) : std::string("null")) + ", expected " +
                  fmt("%.17g", expect));
  };
  eq(m.plm_acc, 0.5, "PLM_acc");
  ck.expect(m.lf_num == 2, "LF_num");
  eq(m.lf_acc_avg, 0.875, "LF_acc_avg");
  eq(m.lf_cov_avg, 0.3, "LF_cov_avg");
  eq(m.train_acc, 0.8, "Train_acc");
  eq(m.train_cov, 0.5, "Train_cov");
  eq(m.test_score, 2.0 / 3.0, "Test_score (F1)");
  ck.summary = "PLM_acc 0.5, LF_num 2, LF_acc_avg 0.875, LF_cov_avg 0.3, Train_acc 0.8, Train_cov 0.5, F1 2/3";
}

// ---------------------------------------------------------------- 10

void ingestion(Check& ck) {
  const fs::path dir = fs::temp_directory_path() / ("lfloop_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir / "in");
  {
    std::ofstream(dir / "in" / "schema.json")
        << R"({"task": "text", "classes": ["ham", "spam"], "positive_class": "spam",)"
        << R"( "description": "YouTube comment spam", "class_definitions": ["relevant comment", "spam"]})";
    Rng rng(3);
    InstanceId id = 0;
    for (auto [name, n, labelled] : {std::tuple{"train", 1586, false}, std::tuple{"valid", 120, true},
                                     std::tuple{"test", 250, true}}) {
      std::ofstream out(dir / "in" / (std::string(name) + ".jsonl"));
      for (int i = 0; i < n; ++i) {
        nlohmann::json j = {{"id", id++}, {"text", "comment " + std::to_string(rng.below(1000)) + " été \"q\""}};
        if (labelled || i % 2) j["label"] = static_cast<int>(rng.below(2));
        out << j.dump() << "\n";
      }
    }
  }
  auto load = [&](const fs::path& d) {
    return load_dataset(d / "train.jsonl", d / "valid.jsonl", d / "test.jsonl", d / "schema.json");
  };
  const Dataset a = load(dir / "in");
  ck.expect(a.train.size() == 1586 && a.valid.size() == 120 && a.test.size() == 250, "split sizes differ");
  save_dataset(a, dir / "out");
  const Dataset b = load(dir / "out");
  ck.expect(a == b, "dataset does not round-trip");
  save_dataset(b, dir / "out2");
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "schema.json"}) {
    std::ifstream x(dir / "out" / f), y(dir / "out2" / f);
    std::stringstream sx, sy;
    sx << x.rdbuf();
    sy << y.rdbuf();
    ck.expect(sx.str() == sy.str(), std::string("re-saved ") + f + " differs");
  }

  auto rejects = [&](const Dataset& schema, Split split, const std::string& body, std::size_t line,
                     const std::string& what) {
    std::istringstream in(body);
    try {
      parse_split(in, schema, split);
      ck.expect(false, what + ": accepted");
    } catch (const LoadError& e) {
      ck.expect(e.line() == line, what + ": reported line " + std::to_string(e.line()));
    }
  };
  const std::string ok_line = R"({"id": 1, "text": "fine", "label": 1})" "\n";
  rejects(a, Split::Valid, ok_line + R"({"id": 2, "text": "x", "label": 2})" "\n", 2, "label 2 of 2 classes");
  rejects(a, Split::Valid, ok_line + ok_line + R"({"id": 3, "text": "x", "label": -1})" "\n", 3, "label -1");

  Dataset rel;
  rel.task_kind = TaskKind::RelationClassification;
  rel.classes = {"none", "treats"};
  const std::string good_rel =
      R"({"id": 1, "text": "Zoë takes aspirin", "label": 0, "entity1": {"text": "Zoë", "start": 0, "end": 3},)"
      R"( "entity2": {"text": "aspirin", "start": 10, "end": 17}})" "\n";
  {
    std::istringstream in(good_rel);
    ck.expect(parse_split(in, rel, Split::Valid).size() == 1, "valid relation record rejected");
  }
  rejects(rel, Split::Valid,
          good_rel + R"({"id": 2, "text": "Zoë takes aspirin", "label": 0, "entity1": {"text": "Zoë", "start": 0, "end": 4},)"
                     R"( "entity2": {"text": "aspirin", "start": 10, "end": 17}})" "\n",
          2, "surface text mismatch");
  rejects(rel, Split::Valid,
          good_rel + R"({"id": 2, "text": "Zoë takes aspirin", "label": 0, "entity1": {"text": "Zoë", "start": 0, "end": 3},)"
                     R"( "entity2": {"text": "aspirin", "start": 10, "end": 40}})" "\n",
          2, "span past end of text");
  rejects(rel, Split::Valid,
          good_rel + R"({"id": 2, "text": "Zoë takes aspirin", "label": 0, "entity1": {"text": "", "start": 3, "end": 3},)"
                     R"( "entity2": {"text": "aspirin", "start": 10, "end": 17}})" "\n",
          2, "empty span");
  rejects(rel, Split::Valid, good_rel + R"({"id": 2, "text": "no entities", "label": 0})" "\n", 2,
          "relation record without entities");
  rejects(a, Split::Train, ok_line + "{not json\n", 2, "malformed JSON");
  fs::remove_all(dir);
  ck.summary = "1586/120/250 fixture round-trips; out-of-range labels and malformed spans rejected with line numbers";
}

struct Criterion {
  int number;
  const char* name;
  double limit_s;
  void (*body)(Check&);
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "filter constants", 1, filter_constants},
      {2, "label-model oracle equivalence", 30, label_model_oracle},
      {3, "Dawid-Skene recovery", 10, dawid_skene_recovery},
      {4, "downstream correctness", 5, downstream_correctness},
      {5, "sampler exactness", 10, sampler_exactness},
      {6, "self-consistency mechanics", 1, self_consistency},
      {7, "end-to-end synthetic run", 120, end_to_end},
      {8, "determinism and replay", 30, determinism_replay},
      {9, "metric definitions", 1, metric_definitions},
      {10, "dataset ingestion", 1, ingestion},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.number)) continue;
    Check ck;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.body(ck);
    } catch (const std::exception& e) {
      ck.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= c.limit_s) ck.failures.push_back("runtime " + fmt("%.2f", secs) + " s over the limit");
    const bool pass = ck.failures.empty();
    failed += !pass;
    std::printf("%s criterion %2d  %-32s %7.2f s (limit %3.0f s)  %s\n", pass ? "PASS" : "FAIL", c.number, c.name,
                secs, c.limit_s, ck.summary.c_str());
    for (const auto& f : ck.failures) std::printf("      - %s\n", f.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
