#include "lfloop/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "lfloop/errors.hpp"

namespace lfloop {

using nlohmann::json;

FeatureSpace fit_tfidf(const std::vector<std::string>& train_texts, int min_df, int max_features) {
  if (train_texts.empty()) throw UsageError("fit_tfidf: empty corpus");
  if (min_df < 1 || max_features < 1) throw UsageError("fit_tfidf: min_df and max_features must be >= 1");
  std::unordered_map<std::string, int> df;
  for (const auto& text : train_texts) {
    auto toks = tokenize(text);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    for (auto& t : toks) ++df[t];
  }
  std::vector<std::pair<std::string, int>> kept;
  for (auto& [t, d] : df)
    if (d >= min_df) kept.emplace_back(t, d);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (static_cast<int>(kept.size()) > max_features) kept.resize(static_cast<std::size_t>(max_features));

  FeatureSpace space;
  const double n = static_cast<double>(train_texts.size());
  space.idf.resize(static_cast<Eigen::Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j) {
    space.terms.push_back(kept[j].first);
    space.vocabulary.emplace(kept[j].first, static_cast<int>(j));
    space.idf(static_cast<Eigen::Index>(j)) = std::log((1.0 + n) / (1.0 + kept[j].second)) + 1.0;
  }
  return space;
}

namespace {

// Sorted (column, weight) pairs of the normalized tf-idf vector.
std::vector<std::pair<int, double>> tfidf_entries(const FeatureSpace& space, std::string_view text) {
  std::map<int, double> counts;
  for (const auto& t : tokenize(text)) {
    auto it = space.vocabulary.find(t);
    if (it != space.vocabulary.end()) counts[it->second] += 1.0;
  }
  std::vector<std::pair<int, double>> out;
  double norm2 = 0.0;
  for (auto [j, c] : counts) {
    const double w = c * space.idf(j);
    out.emplace_back(j, w);
    norm2 += w * w;
  }
  const double norm = std::sqrt(norm2);
  for (auto& e : out) e.second /= norm;
  return out;
}

}  // namespace

FeatureVector featurize(const FeatureSpace& space, std::string_view text) {
  FeatureVector v(space.dim());
  for (auto [j, w] : tfidf_entries(space, text)) v.insert(j) = w;
  return v;
}

FeatureMatrix featurize(const FeatureSpace& space, const std::vector<std::string>& texts) {
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t i = 0; i < texts.size(); ++i)
    for (auto [j, w] : tfidf_entries(space, texts[i])) trips.emplace_back(static_cast<int>(i), j, w);
  FeatureMatrix x(static_cast<Eigen::Index>(texts.size()), space.dim());
  x.setFromTriplets(trips.begin(), trips.end());
  return x;
}

FeatureMatrix featurize(const FeatureSpace& space, const std::vector<Instance>& instances) {
  std::vector<std::string> texts;
  texts.reserve(instances.size());
  for (const auto& x : instances) texts.push_back(x.text);
  return featurize(space, texts);
}

FeatureMatrix embedding_features(const EmbeddingTable& table, const std::vector<Instance>& instances) {
  Eigen::MatrixXd dense(static_cast<Eigen::Index>(instances.size()), table.dim);
  for (std::size_t i = 0; i < instances.size(); ++i)
    dense.row(static_cast<Eigen::Index>(i)) = table.at(instances[i].id).transpose();
  return dense.sparseView();
}

LinearModel LinearModel::zeros(int num_classes, int dim, double l2) {
  return {Eigen::MatrixXd::Zero(num_classes, dim), Eigen::VectorXd::Zero(num_classes), l2};
}

namespace {

Eigen::MatrixXd logits(const LinearModel& model, const FeatureMatrix& x) {
  Eigen::MatrixXd z = x * model.weights.transpose();
  z.rowwise() += model.bias.transpose();
  return z;
}

}  // namespace

double logreg_objective(const LinearModel& model, const FeatureMatrix& x, const Eigen::MatrixXd& targets,
                        Eigen::MatrixXd* grad_w, Eigen::VectorXd* grad_b) {
  const auto n = x.rows();
  if (n == 0) throw UsageError("logreg_objective: no examples");
  Eigen::MatrixXd z = logits(model, x);
  double ce = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = z.row(i);
    const double lse = log_sum_exp(row);
    row.array() -= lse;  // log-probabilities
    ce -= (targets.row(i).array() * row.array()).sum();
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const double obj = ce * inv_n + 0.5 * model.l2 * model.weights.squaredNorm();
  if (grad_w || grad_b) {
    Eigen::MatrixXd resid = z.array().exp().matrix() - targets;  // P - Y
    if (grad_w) *grad_w = (x.transpose() * resid).transpose() * inv_n + model.l2 * model.weights;
    if (grad_b) *grad_b = resid.colwise().sum().transpose() * inv_n;
  }
  return obj;
}

LinearModel train_logreg(const FeatureMatrix& x, const Eigen::MatrixXd& soft_labels, const TrainOptions& options,
                         TrainTrace* trace) {
  if (x.rows() < 1) throw UsageError("train_logreg: need at least one example");
  if (soft_labels.rows() != x.rows()) throw UsageError("train_logreg: label row count mismatch");
  if (soft_labels.cols() < 2) throw UsageError("train_logreg: need at least 2 classes");
  if ((soft_labels.array() < 0.0).any() ||
      ((soft_labels.rowwise().sum().array() - 1.0).abs() > 1e-6).any())
    throw UsageError("train_logreg: soft labels must be row-stochastic");

  const int c = static_cast<int>(soft_labels.cols());
  LinearModel model = LinearModel::zeros(c, static_cast<int>(x.cols()), options.l2);
  Eigen::MatrixXd gw, gw_prev;
  Eigen::VectorXd gb, gb_prev;
  double f = logreg_objective(model, x, soft_labels, &gw, &gb);
  TrainTrace local;
  TrainTrace& tr = trace ? *trace : local;
  tr = TrainTrace{};
  tr.loss.push_back(f);

  double step = 1.0;
  LinearModel prev = model;
  for (int it = 0; it < options.max_iters; ++it) {
    const double gmax = std::max(gw.size() ? gw.cwiseAbs().maxCoeff() : 0.0, gb.cwiseAbs().maxCoeff());
    if (gmax < options.grad_tol) {
      tr.converged = true;
      break;
    }
    if (it > 0) {
      // Barzilai-Borwein trial step from the last displacement.
      const double ss = (model.weights - prev.weights).squaredNorm() + (model.bias - prev.bias).squaredNorm();
      const double sy = ((model.weights - prev.weights).cwiseProduct(gw - gw_prev)).sum() +
                        (model.bias - prev.bias).dot(gb - gb_prev);
      step = sy > 0.0 ? std::clamp(ss / sy, 1e-10, 1e10) : step * 2.0;
    }
    const double g2 = gw.squaredNorm() + gb.squaredNorm();
    LinearModel cand = model;
    double fc = f;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      cand.weights = model.weights - step * gw;
      cand.bias = model.bias - step * gb;
      fc = logreg_objective(cand, x, soft_labels);
      if (fc <= f - 1e-4 * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no decrease representable; at numerical optimum
    prev = std::move(model);
    gw_prev = gw;
    gb_prev = gb;
    model = std::move(cand);
    f = logreg_objective(model, x, soft_labels, &gw, &gb);
    tr.loss.push_back(f);
    tr.iterations = it + 1;
  }
  return model;
}

LinearModel train_logreg(const FeatureMatrix& x, const std::vector<ClassIndex>& labels, int num_classes,
                         const TrainOptions& options, TrainTrace* trace) {
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) throw UsageError("train_logreg: label count mismatch");
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(x.rows(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw UsageError("train_logreg: label " + std::to_string(labels[i]) + " out of range");
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return train_logreg(x, y, options, trace);
}

Eigen::MatrixXd predict_proba(const LinearModel& model, const FeatureMatrix& x) {
  if (x.cols() != model.dim()) throw UsageError("predict_proba: dimension mismatch");
  Eigen::MatrixXd z = logits(model, x);
  softmax_rows(z);
  return z;
}

Eigen::VectorXd predict_proba(const LinearModel& model, const FeatureVector& x) {
  if (x.size() != model.dim()) throw UsageError("predict_proba: dimension mismatch");
  Eigen::VectorXd z = model.weights * x + model.bias;
  return softmax(z);
}

std::vector<ClassIndex> predict(const LinearModel& model, const FeatureMatrix& x) {
  const Eigen::MatrixXd p = predict_proba(model, x);
  std::vector<ClassIndex> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < p.cols(); ++c)
      if (p(i, c) > p(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<ClassIndex>(best);
  }
  return out;
}

double accuracy(const std::vector<ClassIndex>& predicted, const std::vector<ClassIndex>& gold) {
  if (predicted.size() != gold.size() || gold.empty()) throw UsageError("accuracy: bad lengths");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) ok += predicted[i] == gold[i];
  return static_cast<double>(ok) / static_cast<double>(gold.size());
}

double binary_f1(const std::vector<ClassIndex>& predicted, const std::vector<ClassIndex>& gold,
                 ClassIndex positive) {
  if (predicted.size() != gold.size()) throw UsageError("binary_f1: length mismatch");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool p = predicted[i] == positive, g = gold[i] == positive;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

double evaluate(const LinearModel& model, const FeatureMatrix& features, const std::vector<Instance>& split,
                const MetricSpec& metric) {
  if (metric.kind == MetricKind::BinaryF1 && model.num_classes() != 2)
    throw UsageError("binary F1 requires exactly 2 classes");
  std::vector<ClassIndex> gold;
  for (const auto& x : split) {
    if (!x.gold) throw UsageError("evaluate: instance " + std::to_string(x.id) + " has no gold label");
    gold.push_back(*x.gold);
  }
  const auto pred = predict(model, features);
  return metric.kind == MetricKind::Accuracy ? accuracy(pred, gold)
                                             : binary_f1(pred, gold, metric.positive_class);
}

double evaluate(const LinearModel& model, const FeatureSpace& space, const std::vector<Instance>& split,
                const MetricSpec& metric) {
  return evaluate(model, featurize(space, split), split, metric);
}

json model_to_json(const LinearModel& model, const FeatureSpace& space) {
  json w = json::array();
  for (Eigen::Index c = 0; c < model.weights.rows(); ++c) {
    std::vector<double> row(static_cast<std::size_t>(model.weights.cols()));
    for (Eigen::Index j = 0; j < model.weights.cols(); ++j) row[static_cast<std::size_t>(j)] = model.weights(c, j);
    w.push_back(row);
  }
  std::vector<double> bias(model.bias.data(), model.bias.data() + model.bias.size());
  std::vector<double> idf(space.idf.data(), space.idf.data() + space.idf.size());
  return {{"weights", w}, {"bias", bias}, {"l2", model.l2}, {"vocabulary", space.terms}, {"idf", idf}};
}

std::pair<LinearModel, FeatureSpace> model_from_json(const json& j) {
  FeatureSpace space;
  space.terms = j.at("vocabulary").get<std::vector<std::string>>();
  const auto idf = j.at("idf").get<std::vector<double>>();
  if (idf.size() != space.terms.size()) throw LoadError("model: idf/vocabulary length mismatch");
  space.idf = Eigen::Map<const Eigen::VectorXd>(idf.data(), static_cast<Eigen::Index>(idf.size()));
  for (std::size_t i = 0; i < space.terms.size(); ++i) space.vocabulary.emplace(space.terms[i], static_cast<int>(i));
  const auto bias = j.at("bias").get<std::vector<double>>();
  const auto w = j.at("weights").get<std::vector<std::vector<double>>>();
  if (w.size() != bias.size()) throw LoadError("model: weights/bias class count mismatch");
  LinearModel model = LinearModel::zeros(static_cast<int>(bias.size()), space.dim(), j.value("l2", 0.0));
  for (std::size_t c = 0; c < w.size(); ++c) {
    if (w[c].size() != space.terms.size()) throw LoadError("model: weight row length mismatch");
    model.bias(static_cast<Eigen::Index>(c)) = bias[c];
    for (std::size_t k = 0; k < w[c].size(); ++k)
      model.weights(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k)) = w[c][k];
  }
  return {std::move(model), std::move(space)};
}

}  // namespace lfloop
