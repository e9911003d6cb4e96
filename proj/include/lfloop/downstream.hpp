#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <json.hpp>

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lfloop/corpus.hpp"
#include "lfloop/math.hpp"

namespace lfloop {

using FeatureMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using FeatureVector = Eigen::SparseVector<double>;

/// TF-IDF vocabulary. Column j holds terms[j].
struct FeatureSpace {
  std::vector<std::string> terms;
  std::unordered_map<std::string, int> vocabulary;
  Eigen::VectorXd idf;

  int dim() const { return static_cast<int>(terms.size()); }
};

/// Smoothed idf, ln((1 + N) / (1 + df)) + 1, over tokens with df >= min_df;
/// keeps the max_features most frequent (ties lexicographic).
FeatureSpace fit_tfidf(const std::vector<std::string>& train_texts, int min_df = 1, int max_features = 50000);

/// L2-normalized term-count x idf. Out-of-vocabulary tokens are ignored.
FeatureVector featurize(const FeatureSpace& space, std::string_view text);
FeatureMatrix featurize(const FeatureSpace& space, const std::vector<std::string>& texts);
FeatureMatrix featurize(const FeatureSpace& space, const std::vector<Instance>& instances);

/// Rows of an embedding table as a feature matrix, in instance order.
FeatureMatrix embedding_features(const EmbeddingTable& table, const std::vector<Instance>& instances);

struct LinearModel {
  Eigen::MatrixXd weights;  // C x dim
  Eigen::VectorXd bias;     // C
  double l2 = 0.0;

  int num_classes() const { return static_cast<int>(bias.size()); }
  int dim() const { return static_cast<int>(weights.cols()); }
  static LinearModel zeros(int num_classes, int dim, double l2 = 0.0);
};

struct TrainOptions {
  double l2 = 1e-4;
  int max_iters = 1000;
  double grad_tol = 1e-6;
};

struct TrainTrace {
  std::vector<double> loss;  // objective after each accepted step, starting at the initial point
  int iterations = 0;
  bool converged = false;
};

/// Mean cross-entropy against row-stochastic targets plus (l2/2)||W||^2.
/// Fills the gradients when non-null.
double logreg_objective(const LinearModel& model, const FeatureMatrix& x, const Eigen::MatrixXd& targets,
                        Eigen::MatrixXd* grad_w = nullptr, Eigen::VectorXd* grad_b = nullptr);

/// Full-batch gradient descent from zero with backtracking (Armijo) line
/// search; trial steps use the Barzilai-Borwein estimate. Stops when the
/// gradient max-norm drops below grad_tol or after max_iters steps.
LinearModel train_logreg(const FeatureMatrix& x, const Eigen::MatrixXd& soft_labels,
                         const TrainOptions& options = {}, TrainTrace* trace = nullptr);
LinearModel train_logreg(const FeatureMatrix& x, const std::vector<ClassIndex>& labels, int num_classes,
                         const TrainOptions& options = {}, TrainTrace* trace = nullptr);

Eigen::MatrixXd predict_proba(const LinearModel& model, const FeatureMatrix& x);
Eigen::VectorXd predict_proba(const LinearModel& model, const FeatureVector& x);
std::vector<ClassIndex> predict(const LinearModel& model, const FeatureMatrix& x);

enum class MetricKind { Accuracy, BinaryF1 };

struct MetricSpec {
  MetricKind kind = MetricKind::Accuracy;
  ClassIndex positive_class = 1;
};

double accuracy(const std::vector<ClassIndex>& predicted, const std::vector<ClassIndex>& gold);
/// 2PR / (P + R) on `positive`, 0 when P + R = 0.
double binary_f1(const std::vector<ClassIndex>& predicted, const std::vector<ClassIndex>& gold,
                 ClassIndex positive);

/// Scores predictions on instances carrying gold labels.
double evaluate(const LinearModel& model, const FeatureMatrix& features, const std::vector<Instance>& split,
                const MetricSpec& metric);
double evaluate(const LinearModel& model, const FeatureSpace& space, const std::vector<Instance>& split,
                const MetricSpec& metric);

nlohmann::json model_to_json(const LinearModel& model, const FeatureSpace& space);
std::pair<LinearModel, FeatureSpace> model_from_json(const nlohmann::json& j);

}  // namespace lfloop
