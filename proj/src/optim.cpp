#include "gradnet/optim.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "gradnet/errors.hpp"

namespace gradnet {

Tensor orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng& rng) {
  if (rows == 0 || cols == 0) throw ConfigError("orthogonal_init needs rows, cols >= 1");
  // Factor the tall orientation, transpose back for wide matrices.
  const std::size_t tall = std::max(rows, cols);
  const std::size_t narrow = std::min(rows, cols);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(tall), static_cast<Eigen::Index>(narrow));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  q *= gain;

  Tensor out(Shape{rows, cols});
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      dst[i * cols + j] = rows >= cols ? q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))
                                       : q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
    }
  }
  return out;
}

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("adam lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
}

Adam::Adam(AdamConfig config) : config_(config) { config_.validate(); }

void Adam::step(std::span<Parameter* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw ContractError("adam: " + std::to_string(params.size()) + " parameters but " +
                        std::to_string(grads.size()) + " gradients");
  }
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) throw ContractError("adam: parameter list changed size");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->value.shape()) {
      throw DimensionError("adam: gradient for " + params[i]->name + " has shape " +
                           to_string(grads[i].shape()) + ", parameter has " +
                           to_string(params[i]->value.shape()));
    }
    for (double g : grads[i].data()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam: non-finite gradient in parameter " + params[i]->name);
      }
    }
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->value.mutable_data();
    auto m = m_[i].mutable_data();
    auto v = v_[i].mutable_data();
    auto g = grads[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      theta[k] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

EarlyStopping::EarlyStopping(EarlyStopConfig config) : config_(config) {
  if (config_.patience == 0) throw ConfigError("early stopping patience must be >= 1");
  if (!(config_.min_delta >= 0.0)) throw ConfigError("early stopping min_delta must be >= 0");
}

StopDecision EarlyStopping::update(double metric) {
  const long epoch = seen_++;
  if (!std::isnan(metric) && (best_epoch_ < 0 || metric >= best_ + config_.min_delta)) {
    best_ = metric;
    best_epoch_ = epoch;
    since_ = 0;
    return StopDecision::NewBest;
  }
  ++since_;
  return since_ >= config_.patience ? StopDecision::Stop : StopDecision::Continue;
}

}  // namespace gradnet
