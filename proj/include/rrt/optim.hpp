#pragma once

#include <Eigen/Core>

namespace rrt {

/// Adam with bias correction over a flat parameter view.
struct AdamState {
  Eigen::ArrayXd m, v;
  long t = 0;

  explicit AdamState(Eigen::Index n) : m(Eigen::ArrayXd::Zero(n)), v(Eigen::ArrayXd::Zero(n)) {}

  void step(Eigen::Ref<Eigen::ArrayXd> x, const Eigen::Ref<const Eigen::ArrayXd>& grad,
            double lr, double beta1, double beta2, double eps) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.square();
    const double m_corr = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double v_corr = 1.0 - std::pow(beta2, static_cast<double>(t));
    x -= lr * (m / m_corr) / ((v / v_corr).sqrt() + eps);
  }
};

/// Classical momentum SGD over a flat parameter view.
struct MomentumState {
  Eigen::ArrayXd velocity;

  explicit MomentumState(Eigen::Index n) : velocity(Eigen::ArrayXd::Zero(n)) {}

  void step(Eigen::Ref<Eigen::ArrayXd> x, const Eigen::Ref<const Eigen::ArrayXd>& grad,
            double lr, double momentum) {
    velocity = momentum * velocity + grad;
    x -= lr * velocity;
  }
};

}  // namespace rrt
