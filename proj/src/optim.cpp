#include "safelse/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace safelse {

double Trajectory::last(const std::string& metric) const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->metric == metric) return it->value;
  }
  throw std::invalid_argument("Trajectory: metric not logged: " + metric);
}

std::vector<std::pair<long, double>> Trajectory::series(
    const std::string& metric) const {
  std::vector<std::pair<long, double>> out;
  for (const auto& row : rows) {
    if (row.metric == metric) out.emplace_back(row.iteration, row.value);
  }
  return out;
}

long Trajectory::count_events(const std::string& kind) const {
  long n = 0;
  for (const auto& e : events) {
    if (e.kind == kind) ++n;
  }
  return n;
}

namespace {

[[noreturn]] void throw_divergence(long iteration) {
  throw std::runtime_error("divergence detected at iteration " +
                           std::to_string(iteration));
}

}  // namespace

Vector sgd(const GradEstimator& grad_estimator, Vector init,
           const StepSchedule& schedule, long iters, RngStream& rng,
           const StepLogger& logger) {
  Vector x = std::move(init);
  for (long i = 1; i <= iters; ++i) {
    const Vector g = grad_estimator(x, rng);
    if (!g.allFinite()) throw_divergence(i);
    x -= schedule.at(i) * g;
    if (logger) logger(i, x);
  }
  return x;
}

Vector nesterov_sgd(const GradEstimator& grad_estimator, Vector init,
                    double stepsize, double momentum, long iters,
                    RngStream& rng, const StepLogger& logger) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("nesterov_sgd: momentum must be in [0, 1)");
  }
  Vector x = std::move(init);
  Vector velocity = Vector::Zero(x.size());
  for (long i = 1; i <= iters; ++i) {
    const Vector lookahead = x + momentum * velocity;
    const Vector g = grad_estimator(lookahead, rng);
    if (!g.allFinite()) throw_divergence(i);
    velocity = momentum * velocity - stepsize * g;
    x += velocity;
    if (logger) logger(i, x);
  }
  return x;
}

AscentResult nesterov_ascent_fixed(const ValueGrad& objective, Vector init,
                                   double stepsize, int iters) {
  if (iters < 1) {
    throw std::invalid_argument("nesterov_ascent_fixed: iters must be >= 1");
  }
  Vector x = std::move(init);
  Vector lookahead = x;
  double t_prev = 1.0;
  for (int k = 0; k < iters; ++k) {
    auto [value, grad] = objective(lookahead);
    if (!grad.allFinite()) {
      throw std::runtime_error("divergence detected at iteration " +
                               std::to_string(k + 1));
    }
    const Vector x_next = lookahead + stepsize * grad;
    const double t = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_prev * t_prev));
    lookahead = x_next + ((t_prev - 1.0) / t) * (x_next - x);
    x = x_next;
    t_prev = t;
  }
  auto [value, grad] = objective(x);
  (void)grad;
  return {std::move(x), value};
}

}  // namespace safelse
