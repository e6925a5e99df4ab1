#pragma once

#include <Eigen/Core>

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "safelse/core.hpp"
#include "safelse/optim.hpp"
#include "safelse/rng.hpp"

// KL-DRO and UOT-DRO objectives, exact and stochastic gradients, the biased
// batch-softmax baseline, and the experiment drivers that compare them.

namespace safelse::dro {

using safelse::Rho;
using safelse::Vector;
using Matrix = Eigen::MatrixXd;
using IndexList = std::vector<Eigen::Index>;

struct RegressionDataset {
  Matrix X;  // n x d
  Vector y;  // n

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }
};

/// 2-D binary classification with a noisy train/validation split and clean
/// test labels.
struct ClassificationDataset {
  Matrix X;                 // n x d features
  Eigen::VectorXi labels;   // 0/1

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }
};

struct BlobsFixture {
  ClassificationDataset train;  // noisy labels
  ClassificationDataset val;    // noisy labels, held out
  ClassificationDataset test;   // clean labels
  double flip_rate = 0.0;       // realized fraction of corrupted train labels
};

struct ThetaAlpha {
  Vector theta;
  double alpha = 0.0;
};

struct KlDroConfig {
  double lambda = 1.0;
  double rho = 1e-3;
  Eigen::Index batch_size = 10;
  double stepsize = 1e-5;
  double momentum = 0.9;
  int epochs = 30;
};

struct UotDroConfig {
  double lambda = 0.5;
  double beta = 2.0;
  double rho = 0.1;
  int inner_iters = 5;
  double inner_stepsize = 0.0;  // <= 0 means the default 1/(2 lambda)
  double cost_scale = 1.0;
  double stepsize = 0.01;
  long iters = 20000;
  long eval_every = 1000;

  double inner_step() const {
    return inner_stepsize > 0.0 ? inner_stepsize : 1.0 / (2.0 * lambda);
  }
  double temperature() const { return lambda * beta; }
};

enum class KlDroMode { baseline, safe };
enum class UotMode { sumexp_baseline, safe };
enum class UotRunMode { erm, sumexp_baseline, safe };

// ---- squared-loss linear regression -------------------------------------

/// ((y_i - theta^T x_i)^2, -2 (y_i - theta^T x_i) x_i).
std::pair<double, Vector> loss_and_grad_linreg(const Vector& theta,
                                               Eigen::Index i,
                                               const RegressionDataset& data);

Vector all_losses_linreg(const Vector& theta, const RegressionDataset& data);

/// Least-squares fit via the normal equations (the experiment start point).
Vector least_squares_solution(const RegressionDataset& data);

// ---- KL-DRO ---------------------------------------------------------------

/// lambda log((1/n) sum_i e^{l_i(theta)/lambda}), computed through logsumexp.
double kl_dro_objective(const Vector& theta, const RegressionDataset& data,
                        double lambda);

/// Softmax-weighted gradient sum p_i*(theta) grad l_i(theta).
Vector kl_dro_full_gradient(const Vector& theta, const RegressionDataset& data,
                            double lambda);

/// Batch-softmax estimator: weights renormalized inside the batch (biased).
Vector kl_dro_baseline_estimator(const Vector& theta, const IndexList& batch,
                                 const RegressionDataset& data, double lambda);

struct SafeDroGrads {
  double objective = 0.0;
  Vector grad_theta;
  double grad_alpha = 0.0;
};

/// Batch average of alpha + (lambda/rho) log(1 + rho e^{(l_i - alpha)/lambda})
/// with its unbiased gradient estimators
///   grad_theta = (1/|D|) sum sigma_rho((l_i - alpha)/lambda) grad l_i
///   grad_alpha = 1 - (1/|D|) sum sigma_rho((l_i - alpha)/lambda).
SafeDroGrads safe_dro_objective_and_grads(const ThetaAlpha& pair,
                                          const IndexList& batch,
                                          const RegressionDataset& data,
                                          double lambda, const Rho& rho);

/// Nesterov-accelerated SGD on the selected estimator, least-squares start,
/// kl_dro_objective(theta) logged once per epoch as metric "kl_dro_objective".
Trajectory run_kl_dro(const KlDroConfig& config, const RegressionDataset& data,
                      KlDroMode mode, RngStream& rng);

// ---- UOT-DRO --------------------------------------------------------------

/// Binary logistic loss with bias term. Returns (loss, grad wrt theta,
/// grad wrt features z). theta has dim()+1 entries, the last one the bias.
struct LogisticEval {
  double loss = 0.0;
  Vector grad_theta;
  Vector grad_z;
};
LogisticEval logistic_loss(const Vector& theta, const Vector& z, int label);

/// Loss callback for the inner supremum: z -> (l(theta; z), grad_z l).
using InnerLoss = std::function<std::pair<double, Vector>(const Vector&)>;

struct InnerSupResult {
  double value = 0.0;  // sup_z { l(theta; z) - lambda c(z, x_i) }
  Vector z;            // inner maximizer
};

/// Fixed-budget Nesterov ascent on z -> l(theta; z) - lambda cost_scale
/// ||z - x||^2 from z0 = x.
InnerSupResult uot_inner_sup_generic(const InnerLoss& loss, const Vector& x,
                                     const UotDroConfig& config);

/// Dataset form: the perturbed sample keeps its label, only features move.
InnerSupResult uot_inner_sup(const Vector& theta, Eigen::Index i,
                             const ClassificationDataset& data,
                             const UotDroConfig& config);

struct UotGrads {
  double value = 0.0;
  Vector grad_theta;
  double grad_alpha = 0.0;
};

/// Batch objective and gradients for the sum-of-exponents baseline and the
/// rescaled-SoftPlus form. Baseline throws "float64 overflow" when any
/// exponent l_hat_i/(lambda beta) reaches 709. Gradients in theta use the
/// envelope rule at the inner maximizer.
UotGrads uot_dro_objectives(const ThetaAlpha& pair, const IndexList& batch,
                            const ClassificationDataset& data,
                            const UotDroConfig& config, UotMode mode);

/// Reported training metric lambda beta log((1/n) sum e^{l_hat_i/(lambda
/// beta)}), evaluated stably.
double uot_objective(const Vector& theta, const ClassificationDataset& data,
                     const UotDroConfig& config);

double classification_accuracy(const Vector& theta,
                               const ClassificationDataset& data);

/// Batch-1 SGD on the selected objective. Logs "uot_objective", "train_acc",
/// "val_acc", "test_acc" on the evaluation schedule. Baseline overflow
/// records an "overflow" event and aborts the run; safe mode records
/// non-finite gradients as "divergence" events and keeps the last finite
/// iterate.
Trajectory run_uot_dro(const UotDroConfig& config, const BlobsFixture& data,
                       UotRunMode mode, RngStream& rng);

// ---- synthetic data and CSV ingestion --------------------------------------

/// Regression fixture: X ~ N(0, 3^2), theta_true ~ N(0, 0.5^2), clipped
/// Gaussian noise, and a sparse bounded bump 1.2 tanh(x_1) on 8% of rows so
/// the DRO optimum sits measurably away from the least-squares fit.
RegressionDataset make_synthetic_regression(RngStream& rng,
                                            Eigen::Index n = 2000,
                                            Eigen::Index d = 8);

/// Two Gaussian blobs at (+-1.5, 0). Train and validation labels are
/// corrupted by replacing the label with 1{x_2 > 0} with probability
/// min(1, k |x_1|), k calibrated so the expected corrupted fraction matches
/// flip_target; test labels stay clean.
BlobsFixture make_blobs_fixture(RngStream& rng, Eigen::Index n_train = 300,
                                Eigen::Index n_val = 300,
                                Eigen::Index n_test = 2000,
                                double flip_target = 0.25);

/// CSV with a header row, feature columns first, target (real) or label
/// (integer) last.
RegressionDataset load_regression_csv(const std::string& path);
ClassificationDataset load_classification_csv(const std::string& path);

}  // namespace safelse::dro
