#include "safelse/dro.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "safelse/safe_lse.hpp"

namespace safelse::dro {

namespace {
constexpr double kOverflowExponent = 709.0;
}

// ---- squared-loss linear regression ----------------------------------------

std::pair<double, Vector> loss_and_grad_linreg(const Vector& theta,
                                               Eigen::Index i,
                                               const RegressionDataset& data) {
  if (i < 0 || i >= data.size()) {
    throw std::out_of_range("loss_and_grad_linreg: index out of range");
  }
  const double residual = data.y[i] - data.X.row(i).dot(theta);
  return {residual * residual, -2.0 * residual * data.X.row(i).transpose()};
}

Vector all_losses_linreg(const Vector& theta, const RegressionDataset& data) {
  return (data.y - data.X * theta).array().square();
}

Vector least_squares_solution(const RegressionDataset& data) {
  const Matrix gram = data.X.transpose() * data.X;
  return gram.ldlt().solve(data.X.transpose() * data.y);
}

// ---- KL-DRO -----------------------------------------------------------------

double kl_dro_objective(const Vector& theta, const RegressionDataset& data,
                        double lambda) {
  const Vector losses = all_losses_linreg(theta, data);
  return lambda * (logsumexp((losses / lambda).eval()) -
                   std::log(static_cast<double>(data.size())));
}

Vector kl_dro_full_gradient(const Vector& theta, const RegressionDataset& data,
                            double lambda) {
  const Vector residuals = data.y - data.X * theta;
  const Vector scaled = residuals.array().square() / lambda;
  const double shift = scaled.maxCoeff();
  Vector weights = (scaled.array() - shift).exp();
  weights /= weights.sum();
  return data.X.transpose() * (weights.array() * -2.0 * residuals.array()).matrix();
}

Vector kl_dro_baseline_estimator(const Vector& theta, const IndexList& batch,
                                 const RegressionDataset& data, double lambda) {
  if (batch.empty()) {
    throw std::invalid_argument("kl_dro_baseline_estimator: empty batch");
  }
  Vector scaled(batch.size());
  Vector residuals(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    residuals[k] = data.y[batch[k]] - data.X.row(batch[k]).dot(theta);
    scaled[k] = residuals[k] * residuals[k] / lambda;
  }
  const double shift = scaled.maxCoeff();
  Vector weights = (scaled.array() - shift).exp();
  weights /= weights.sum();
  Vector grad = Vector::Zero(theta.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    grad += weights[k] * -2.0 * residuals[k] * data.X.row(batch[k]).transpose();
  }
  return grad;
}

SafeDroGrads safe_dro_objective_and_grads(const ThetaAlpha& pair,
                                          const IndexList& batch,
                                          const RegressionDataset& data,
                                          double lambda, const Rho& rho) {
  if (batch.empty()) {
    throw std::invalid_argument("safe_dro_objective_and_grads: empty batch");
  }
  SafeDroGrads out;
  out.grad_theta = Vector::Zero(pair.theta.size());
  double sigma_sum = 0.0;
  double softplus_acc = 0.0;
  for (const Eigen::Index i : batch) {
    const auto [loss, grad] = loss_and_grad_linreg(pair.theta, i, data);
    const double s = (loss - pair.alpha) / lambda;
    const double weight = sigma_rho(s, rho);
    sigma_sum += weight;
    softplus_acc += softplus_stable(s + rho.log());
    out.grad_theta += weight * grad;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.objective =
      pair.alpha + (lambda / rho.value()) * softplus_acc * inv;
  out.grad_theta *= inv;
  out.grad_alpha = 1.0 - sigma_sum * inv;
  return out;
}

namespace {

// Per-epoch shuffled batching shared by the run drivers.
class BatchCursor {
 public:
  BatchCursor(Eigen::Index n, Eigen::Index batch_size)
      : order_(n), batch_size_(batch_size), pos_(n) {
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  }

  IndexList next(RngStream& rng) {
    if (pos_ >= static_cast<Eigen::Index>(order_.size())) {
      rng.shuffle(order_);
      pos_ = 0;
    }
    const Eigen::Index end =
        std::min<Eigen::Index>(pos_ + batch_size_, order_.size());
    IndexList batch(order_.begin() + pos_, order_.begin() + end);
    pos_ = end;
    return batch;
  }

 private:
  std::vector<Eigen::Index> order_;
  Eigen::Index batch_size_;
  Eigen::Index pos_;
};

}  // namespace

Trajectory run_kl_dro(const KlDroConfig& config, const RegressionDataset& data,
                      KlDroMode mode, RngStream& rng) {
  if (config.batch_size < 1 || config.batch_size > data.size()) {
    throw std::invalid_argument("run_kl_dro: invalid batch size");
  }
  const Rho rho(config.rho);
  const Eigen::Index n = data.size();
  const long steps_per_epoch =
      static_cast<long>((n + config.batch_size - 1) / config.batch_size);
  const long total_iters = steps_per_epoch * config.epochs;

  Vector theta0 = least_squares_solution(data);
  Trajectory traj;
  traj.log(0, "kl_dro_objective", kl_dro_objective(theta0, data, config.lambda));
  if (config.epochs == 0) return traj;

  BatchCursor cursor(n, config.batch_size);

  // alpha starts at the warmup-batch estimate of the objective, which is the
  // stationary alpha for small rho; a batch-max start leaves sigma_rho
  // exponentially damped for the whole run at desk-scale stepsizes.
  double alpha0 = 0.0;
  if (mode == KlDroMode::safe) {
    Vector losses(config.batch_size);
    for (Eigen::Index k = 0; k < config.batch_size; ++k) {
      const auto i = static_cast<Eigen::Index>(rng.uniform_int(n));
      losses[k] = loss_and_grad_linreg(theta0, i, data).first;
    }
    alpha0 = config.lambda *
             (logsumexp((losses / config.lambda).eval()) -
              std::log(static_cast<double>(config.batch_size)));
  }

  const Eigen::Index d = data.dim();
  Vector init;
  if (mode == KlDroMode::safe) {
    init.resize(d + 1);
    init.head(d) = theta0;
    init[d] = alpha0;
  } else {
    init = theta0;
  }

  GradEstimator estimator = [&, mode](const Vector& state, RngStream& r) {
    const IndexList batch = cursor.next(r);
    if (mode == KlDroMode::baseline) {
      return kl_dro_baseline_estimator(state, batch, data, config.lambda);
    }
    ThetaAlpha pair{state.head(d), state[d]};
    const SafeDroGrads g =
        safe_dro_objective_and_grads(pair, batch, data, config.lambda, rho);
    Vector grad(d + 1);
    grad.head(d) = g.grad_theta;
    grad[d] = g.grad_alpha;
    return grad;
  };

  StepLogger logger = [&](long iteration, const Vector& state) {
    if (iteration % steps_per_epoch == 0) {
      const Vector theta = (mode == KlDroMode::safe) ? state.head(d) : state;
      traj.log(iteration / steps_per_epoch, "kl_dro_objective",
               kl_dro_objective(theta, data, config.lambda));
    }
  };

  try {
    nesterov_sgd(estimator, init, config.stepsize, config.momentum,
                 total_iters, rng, logger);
  } catch (const std::runtime_error& err) {
    traj.record(-1, "divergence", err.what());
  }
  return traj;
}

// ---- UOT-DRO ----------------------------------------------------------------

LogisticEval logistic_loss(const Vector& theta, const Vector& z, int label) {
  const Eigen::Index d = z.size();
  if (theta.size() != d + 1) {
    throw std::invalid_argument("logistic_loss: theta must have dim+1 entries");
  }
  const double sign = label == 1 ? 1.0 : -1.0;
  const double margin = sign * (theta.head(d).dot(z) + theta[d]);
  const double slope = -sign * logistic(-margin);
  LogisticEval eval;
  eval.loss = softplus_stable(-margin);
  eval.grad_theta.resize(d + 1);
  eval.grad_theta.head(d) = slope * z;
  eval.grad_theta[d] = slope;
  eval.grad_z = slope * theta.head(d);
  return eval;
}

InnerSupResult uot_inner_sup_generic(const InnerLoss& loss, const Vector& x,
                                     const UotDroConfig& config) {
  const double lam = config.lambda;
  const double scale = config.cost_scale;
  ValueGrad objective = [&](const Vector& z) {
    auto [value, grad_z] = loss(z);
    const Vector delta = z - x;
    const double cost = scale * delta.squaredNorm();
    return std::make_pair(value - lam * cost,
                          (grad_z - 2.0 * lam * scale * delta).eval());
  };
  AscentResult result =
      nesterov_ascent_fixed(objective, x, config.inner_step(), config.inner_iters);
  return {result.value, std::move(result.point)};
}

InnerSupResult uot_inner_sup(const Vector& theta, Eigen::Index i,
                             const ClassificationDataset& data,
                             const UotDroConfig& config) {
  if (i < 0 || i >= data.size()) {
    throw std::out_of_range("uot_inner_sup: index out of range");
  }
  const int label = data.labels[i];
  InnerLoss loss = [&](const Vector& z) {
    LogisticEval eval = logistic_loss(theta, z, label);
    return std::make_pair(eval.loss, std::move(eval.grad_z));
  };
  return uot_inner_sup_generic(loss, data.X.row(i).transpose(), config);
}

UotGrads uot_dro_objectives(const ThetaAlpha& pair, const IndexList& batch,
                            const ClassificationDataset& data,
                            const UotDroConfig& config, UotMode mode) {
  if (batch.empty()) {
    throw std::invalid_argument("uot_dro_objectives: empty batch");
  }
  const double temp = config.temperature();
  const Rho rho(config.rho);
  UotGrads out;
  out.grad_theta = Vector::Zero(pair.theta.size());
  double value_acc = 0.0;
  double sigma_sum = 0.0;
  for (const Eigen::Index i : batch) {
    const InnerSupResult inner = uot_inner_sup(pair.theta, i, data, config);
    // Envelope rule: differentiate the loss in theta at the inner maximizer.
    const LogisticEval at_zhat =
        logistic_loss(pair.theta, inner.z, data.labels[i]);
    if (mode == UotMode::sumexp_baseline) {
      const double exponent = inner.value / temp;
      if (!(exponent < kOverflowExponent)) {
        throw std::runtime_error("float64 overflow");
      }
      const double weight = std::exp(exponent);
      value_acc += weight;
      out.grad_theta += weight / temp * at_zhat.grad_theta;
    } else {
      const double s = (inner.value - pair.alpha) / temp;
      const double weight = sigma_rho(s, rho);
      value_acc += pair.alpha +
                   (temp / rho.value()) * softplus_stable(s + rho.log());
      sigma_sum += weight;
      out.grad_theta += weight * at_zhat.grad_theta;
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.value = value_acc * inv;
  out.grad_theta *= inv;
  out.grad_alpha =
      (mode == UotMode::safe) ? 1.0 - sigma_sum * inv : 0.0;
  return out;
}

double uot_objective(const Vector& theta, const ClassificationDataset& data,
                     const UotDroConfig& config) {
  const double temp = config.temperature();
  Vector exponents(data.size());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    exponents[i] = uot_inner_sup(theta, i, data, config).value / temp;
  }
  return temp * (logsumexp(exponents) -
                 std::log(static_cast<double>(data.size())));
}

double classification_accuracy(const Vector& theta,
                               const ClassificationDataset& data) {
  const Eigen::Index d = data.dim();
  long correct = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double score = data.X.row(i).dot(theta.head(d)) + theta[d];
    const int pred = score > 0.0 ? 1 : 0;
    if (pred == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Trajectory run_uot_dro(const UotDroConfig& config, const BlobsFixture& data,
                       UotRunMode mode, RngStream& rng) {
  const Eigen::Index d = data.train.dim();
  Vector theta = Vector::Zero(d + 1);
  double alpha = 0.0;
  const Rho rho(config.rho);
  Trajectory traj;

  // Constant-step SGD wanders around its stationary distribution; the model
  // a run reports is the tail average of the iterates (second half of the
  // budget). Metrics are logged for that reported model.
  Vector theta_tail = Vector::Zero(d + 1);
  long tail_count = 0;
  const long tail_start = config.iters / 2;

  const auto reported_theta = [&]() -> Vector {
    return tail_count > 0 ? Vector(theta_tail / static_cast<double>(tail_count))
                          : theta;
  };

  const auto log_metrics = [&](long iteration) {
    const Vector model = reported_theta();
    traj.log(iteration, "uot_objective",
             uot_objective(model, data.train, config));
    double loss_acc = 0.0;
    for (Eigen::Index i = 0; i < data.train.size(); ++i) {
      loss_acc += logistic_loss(model, data.train.X.row(i).transpose(),
                                data.train.labels[i])
                      .loss;
    }
    traj.log(iteration, "train_loss",
             loss_acc / static_cast<double>(data.train.size()));
    traj.log(iteration, "train_acc",
             classification_accuracy(model, data.train));
    traj.log(iteration, "val_acc", classification_accuracy(model, data.val));
    traj.log(iteration, "test_acc", classification_accuracy(model, data.test));
  };

  if (mode == UotRunMode::safe) {
    // Warmup alpha at the batch log-mean-exp of the inner values.
    const Eigen::Index warm = std::min<Eigen::Index>(32, data.train.size());
    Vector values(warm);
    for (Eigen::Index k = 0; k < warm; ++k) {
      const auto i =
          static_cast<Eigen::Index>(rng.uniform_int(data.train.size()));
      values[k] = uot_inner_sup(theta, i, data.train, config).value /
                  config.temperature();
    }
    alpha = config.temperature() *
            (logsumexp(values) - std::log(static_cast<double>(warm)));
  }

  log_metrics(0);
  const long eval_every = std::max<long>(1, config.eval_every);
  for (long it = 1; it <= config.iters; ++it) {
    const auto i =
        static_cast<Eigen::Index>(rng.uniform_int(data.train.size()));
    const IndexList batch{i};
    if (mode == UotRunMode::erm) {
      const LogisticEval eval =
          logistic_loss(theta, data.train.X.row(i).transpose(),
                        data.train.labels[i]);
      theta -= config.stepsize * eval.grad_theta;
    } else if (mode == UotRunMode::sumexp_baseline) {
      try {
        const UotGrads g = uot_dro_objectives({theta, alpha}, batch, data.train,
                                              config, UotMode::sumexp_baseline);
        theta -= config.stepsize * g.grad_theta;
      } catch (const std::runtime_error&) {
        traj.record(it, "overflow", "sumexp exponent reached 709");
        log_metrics(it);
        return traj;
      }
    } else {
      const UotGrads g = uot_dro_objectives({theta, alpha}, batch, data.train,
                                            config, UotMode::safe);
      const Vector theta_next = theta - config.stepsize * g.grad_theta;
      const double alpha_next = alpha - config.stepsize * g.grad_alpha;
      if (theta_next.allFinite() && std::isfinite(alpha_next)) {
        theta = theta_next;
        alpha = alpha_next;
      } else {
        traj.record(it, "divergence", "non-finite safe update skipped");
      }
    }
    if (!theta.allFinite()) {
      traj.record(it, "divergence", "non-finite iterate");
      log_metrics(it);
      return traj;
    }
    if (it > tail_start) {
      theta_tail += theta;
      ++tail_count;
    }
    if (it % eval_every == 0 || it == config.iters) {
      log_metrics(it);
    }
  }
  return traj;
}

// ---- synthetic data and CSV ingestion ---------------------------------------

RegressionDataset make_synthetic_regression(RngStream& rng, Eigen::Index n,
                                            Eigen::Index d) {
  RegressionDataset data;
  data.X.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      data.X(i, j) = rng.normal(0.0, 3.0);
    }
  }
  Vector theta_true(d);
  for (Eigen::Index j = 0; j < d; ++j) theta_true[j] = rng.normal(0.0, 0.5);
  data.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double noise = std::clamp(rng.normal(0.0, 0.9), -2.0, 2.0);
    const double bump =
        rng.uniform() < 0.08 ? 1.2 * std::tanh(data.X(i, 0)) : 0.0;
    data.y[i] = data.X.row(i).dot(theta_true) + noise + bump;
  }
  return data;
}

namespace {

ClassificationDataset sample_blobs(RngStream& rng, Eigen::Index n) {
  ClassificationDataset data;
  data.X.resize(n, 2);
  data.labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = rng.uniform() < 0.5 ? 1 : 0;
    const double cx = label == 1 ? 1.5 : -1.5;
    data.X(i, 0) = cx + rng.normal();
    data.X(i, 1) = rng.normal();
    data.labels[i] = label;
  }
  return data;
}

// Calibrate k so that E[min(1, k |x1|) 1{spurious label differs}] matches the
// target corruption rate, then apply the relabeling.
double corrupt_labels(ClassificationDataset& data, RngStream& rng,
                      double flip_target) {
  const Eigen::Index n = data.size();
  Vector dist(n);
  Eigen::VectorXi spurious(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dist[i] = std::abs(data.X(i, 0));
    spurious[i] = data.X(i, 1) > 0.0 ? 1 : 0;
  }
  double lo = 0.0, hi = 64.0;
  for (int it = 0; it < 60; ++it) {
    const double k = 0.5 * (lo + hi);
    double expected = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (spurious[i] != data.labels[i]) {
        expected += std::min(1.0, k * dist[i]);
      }
    }
    if (expected / static_cast<double>(n) < flip_target) {
      lo = k;
    } else {
      hi = k;
    }
  }
  const double k = 0.5 * (lo + hi);
  long flipped = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (rng.uniform() < std::min(1.0, k * dist[i])) {
      if (spurious[i] != data.labels[i]) ++flipped;
      data.labels[i] = spurious[i];
    }
  }
  return static_cast<double>(flipped) / static_cast<double>(n);
}

}  // namespace

BlobsFixture make_blobs_fixture(RngStream& rng, Eigen::Index n_train,
                                Eigen::Index n_val, Eigen::Index n_test,
                                double flip_target) {
  BlobsFixture fixture;
  fixture.train = sample_blobs(rng, n_train);
  fixture.val = sample_blobs(rng, n_val);
  fixture.test = sample_blobs(rng, n_test);
  fixture.flip_rate = corrupt_labels(fixture.train, rng, flip_target);
  corrupt_labels(fixture.val, rng, flip_target);
  return fixture;
}

namespace {

std::vector<std::vector<double>> read_csv_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open CSV file: " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("CSV file has no header: " + path);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      row.push_back(std::stod(cell));
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error("ragged CSV row in " + path);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw std::runtime_error("CSV file has no data rows: " + path);
  }
  return rows;
}

}  // namespace

RegressionDataset load_regression_csv(const std::string& path) {
  const auto rows = read_csv_rows(path);
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index d = static_cast<Eigen::Index>(rows.front().size()) - 1;
  RegressionDataset data;
  data.X.resize(n, d);
  data.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) data.X(i, j) = rows[i][j];
    data.y[i] = rows[i][d];
  }
  return data;
}

ClassificationDataset load_classification_csv(const std::string& path) {
  const auto rows = read_csv_rows(path);
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index d = static_cast<Eigen::Index>(rows.front().size()) - 1;
  ClassificationDataset data;
  data.X.resize(n, d);
  data.labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) data.X(i, j) = rows[i][j];
    data.labels[i] = static_cast<int>(std::lround(rows[i][d]));
  }
  return data;
}

}  // namespace safelse::dro
