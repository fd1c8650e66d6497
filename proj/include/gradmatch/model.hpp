#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradmatch/dataset.hpp"
#include "gradmatch/errors.hpp"
#include "gradmatch/rng.hpp"

namespace gradmatch {

enum class Arch { logistic_regression, mlp };

inline const char* to_string(Arch a) {
  return a == Arch::logistic_regression ? "logistic" : "mlp";
}

// Flat-parameter classifier with closed-form gradients.
//
// Parameter layout (row-major blocks):
//   logistic: [W (C x d), b (C)]
//   mlp:      [W1 (h x d), b1 (h), tanh, W2 (C x h), b2 (C)]
struct ModelState {
  Arch arch = Arch::logistic_regression;
  int n_features = 0;
  int hidden = 0;  // 0 for logistic regression
  int class_count = 0;
  Vector theta;

  static ModelState logistic(int n_features, int class_count) {
    ModelState m;
    m.arch = Arch::logistic_regression;
    m.n_features = n_features;
    m.class_count = class_count;
    m.theta = Vector::Zero(Eigen::Index(class_count) * (n_features + 1));
    return m;
  }

  static ModelState mlp(int n_features, int hidden, int class_count) {
    ModelState m;
    m.arch = Arch::mlp;
    m.n_features = n_features;
    m.hidden = hidden;
    m.class_count = class_count;
    m.theta = Vector::Zero(Eigen::Index(hidden) * (n_features + 1) +
                           Eigen::Index(class_count) * (hidden + 1));
    return m;
  }

  ModelState with_random_init(std::uint64_t seed, double scale = 0.0) const {
    ModelState m = *this;
    Rng rng(derive_seed(seed, "model_init"));
    const double s1 = scale > 0.0 ? scale : 1.0 / std::sqrt(double(n_features));
    const double s2 =
        scale > 0.0 ? scale : 1.0 / std::sqrt(double(penultimate_width()));
    if (arch == Arch::logistic_regression) {
      for (Eigen::Index i = 0; i < m.theta.size(); ++i)
        m.theta[i] = s1 * rng.next_gaussian();
    } else {
      const Eigen::Index first = Eigen::Index(hidden) * (n_features + 1);
      for (Eigen::Index i = 0; i < first; ++i) m.theta[i] = s1 * rng.next_gaussian();
      for (Eigen::Index i = first; i < m.theta.size(); ++i)
        m.theta[i] = s2 * rng.next_gaussian();
    }
    return m;
  }

  int param_count() const { return static_cast<int>(theta.size()); }

  // Width of the input feeding the last linear layer.
  int penultimate_width() const {
    return arch == Arch::logistic_regression ? n_features : hidden;
  }

  // One (bias, weights) block per class.
  int last_layer_dim() const { return class_count * (penultimate_width() + 1); }

  // Views into theta for the last linear layer.
  Eigen::Index last_layer_offset() const {
    return arch == Arch::logistic_regression
               ? 0
               : Eigen::Index(hidden) * (n_features + 1);
  }
};

namespace detail {

// Row-wise softmax in place, numerically stable.
inline void softmax_rows(Matrix& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - m).exp();
    z.row(i) /= z.row(i).sum();
  }
}

struct ForwardCache {
  Matrix hidden;  // batch x h (mlp only; activations after tanh)
  Matrix probs;   // batch x C
};

inline ForwardCache forward(const ModelState& m, const Dataset& d,
                            std::span<const int> indices) {
  const int nb = static_cast<int>(indices.size());
  Matrix x(nb, m.n_features);
  for (int i = 0; i < nb; ++i) x.row(i) = d.features.row(indices[static_cast<std::size_t>(i)]);

  ForwardCache cache;
  const int c = m.class_count;
  if (m.arch == Arch::logistic_regression) {
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        W(m.theta.data(), c, m.n_features);
    Eigen::Map<const Vector> b(m.theta.data() + Eigen::Index(c) * m.n_features, c);
    cache.probs = x * W.transpose();
    cache.probs.rowwise() += b.transpose();
  } else {
    const int h = m.hidden;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        W1(m.theta.data(), h, m.n_features);
    Eigen::Map<const Vector> b1(m.theta.data() + Eigen::Index(h) * m.n_features, h);
    const Eigen::Index off = m.last_layer_offset();
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        W2(m.theta.data() + off, c, h);
    Eigen::Map<const Vector> b2(m.theta.data() + off + Eigen::Index(c) * h, c);
    cache.hidden = x * W1.transpose();
    cache.hidden.rowwise() += b1.transpose();
    cache.hidden = cache.hidden.array().tanh();
    cache.probs = cache.hidden * W2.transpose();
    cache.probs.rowwise() += b2.transpose();
  }
  softmax_rows(cache.probs);
  return cache;
}

}  // namespace detail

struct ForwardResult {
  double loss = 0.0;          // weight-renormalized mean over the batch
  Vector per_sample_losses;   // cross-entropy per sample
};

// Cross-entropy forward pass. When weights are given they are renormalized to
// sum to one over the batch, so uniform weights reproduce the plain mean.
inline ForwardResult forward_loss(const ModelState& m, const Dataset& d,
                                  std::span<const int> indices,
                                  const Vector* weights = nullptr) {
  if (indices.empty()) throw std::invalid_argument("forward_loss: empty batch");
  if (weights && weights->size() != static_cast<Eigen::Index>(indices.size()))
    throw std::invalid_argument("forward_loss: weight length mismatch");

  const auto cache = detail::forward(m, d, indices);
  const int nb = static_cast<int>(indices.size());
  ForwardResult out;
  out.per_sample_losses.resize(nb);
  for (int i = 0; i < nb; ++i) {
    const int y = d.labels[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
    out.per_sample_losses[i] = -std::log(std::max(cache.probs(i, y), 1e-300));
  }
  if (weights) {
    const double total = weights->sum();
    if (total <= 0.0) throw std::invalid_argument("forward_loss: weights sum to zero");
    out.loss = out.per_sample_losses.dot(*weights) / total;
  } else {
    out.loss = out.per_sample_losses.mean();
  }
  return out;
}

inline std::vector<int> all_indices(const Dataset& d) {
  std::vector<int> idx(static_cast<std::size_t>(d.n()));
  for (int i = 0; i < d.n(); ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

inline double accuracy(const ModelState& m, const Dataset& d) {
  const auto idx = all_indices(d);
  const auto cache = detail::forward(m, d, idx);
  int correct = 0;
  for (int i = 0; i < d.n(); ++i) {
    Eigen::Index best;
    cache.probs.row(i).maxCoeff(&best);
    if (static_cast<int>(best) == d.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return double(correct) / d.n();
}

// Last-layer gradients for a batch of samples, one row per sample. Block for
// class c is ((p_c - y_c), (p_c - y_c) * h) with h the penultimate activation
// (input features for logistic regression, hidden tanh output for the MLP).
inline Matrix last_layer_grads(const ModelState& m, const Dataset& d,
                               std::span<const int> indices) {
  const auto cache = detail::forward(m, d, indices);
  const int nb = static_cast<int>(indices.size());
  const int h = m.penultimate_width();
  const int c = m.class_count;
  Matrix out(nb, m.last_layer_dim());
  for (int i = 0; i < nb; ++i) {
    const int sample = indices[static_cast<std::size_t>(i)];
    const int y = d.labels[static_cast<std::size_t>(sample)];
    for (int k = 0; k < c; ++k) {
      const double r = cache.probs(i, k) - (k == y ? 1.0 : 0.0);
      const Eigen::Index base = Eigen::Index(k) * (h + 1);
      out(i, base) = r;
      if (m.arch == Arch::logistic_regression)
        out.row(i).segment(base + 1, h) = r * d.features.row(sample);
      else
        out.row(i).segment(base + 1, h) = r * cache.hidden.row(i);
    }
  }
  return out;
}

inline Vector per_sample_last_layer_grad(const ModelState& m, const Dataset& d,
                                         int index) {
  const int idx[1] = {index};
  return last_layer_grads(m, d, std::span<const int>(idx, 1)).row(0);
}

// Full-parameter gradient of the weight-renormalized batch loss.
inline Vector batch_grad(const ModelState& m, const Dataset& d,
                         std::span<const int> indices,
                         const Vector* weights = nullptr) {
  if (indices.empty()) throw std::invalid_argument("batch_grad: empty batch");
  const int nb = static_cast<int>(indices.size());
  const int c = m.class_count;

  Vector u(nb);
  if (weights) {
    const double total = weights->sum();
    if (total <= 0.0) throw std::invalid_argument("batch_grad: weights sum to zero");
    u = *weights / total;
  } else {
    u.setConstant(1.0 / nb);
  }

  const auto cache = detail::forward(m, d, indices);
  Matrix x(nb, m.n_features);
  for (int i = 0; i < nb; ++i) x.row(i) = d.features.row(indices[static_cast<std::size_t>(i)]);

  Matrix resid = cache.probs;  // p - y, rows scaled by u
  for (int i = 0; i < nb; ++i) {
    resid(i, d.labels[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])]) -= 1.0;
    resid.row(i) *= u[i];
  }

  Vector grad = Vector::Zero(m.theta.size());
  if (m.arch == Arch::logistic_regression) {
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        gw(grad.data(), c, m.n_features);
    Eigen::Map<Vector> gb(grad.data() + Eigen::Index(c) * m.n_features, c);
    gw = resid.transpose() * x;
    gb = resid.colwise().sum();
  } else {
    const int h = m.hidden;
    const Eigen::Index off = m.last_layer_offset();
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        W2(m.theta.data() + off, c, h);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        gw1(grad.data(), h, m.n_features);
    Eigen::Map<Vector> gb1(grad.data() + Eigen::Index(h) * m.n_features, h);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        gw2(grad.data() + off, c, h);
    Eigen::Map<Vector> gb2(grad.data() + off + Eigen::Index(c) * h, c);

    gw2 = resid.transpose() * cache.hidden;
    gb2 = resid.colwise().sum();
    Matrix back = (resid * W2).cwiseProduct(
        (1.0 - cache.hidden.array().square()).matrix());
    gw1 = back.transpose() * x;
    gb1 = back.colwise().sum();
  }
  return grad;
}

// Heavy-ball SGD step with weight decay folded into the gradient:
//   v <- momentum * v + (g + weight_decay * theta);  theta <- theta - lr * v
struct SgdOptimizer {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Vector velocity;

  void step(ModelState& m, const Vector& grad, double lr) {
    if (lr <= 0.0) throw std::invalid_argument("sgd: lr must be positive");
    if (grad.size() != m.theta.size())
      throw std::invalid_argument("sgd: gradient length mismatch");
    if (!grad.allFinite()) throw NonFiniteGradient("sgd: non-finite gradient");
    if (velocity.size() != m.theta.size()) velocity = Vector::Zero(m.theta.size());
    velocity = momentum * velocity + grad + weight_decay * m.theta;
    m.theta -= lr * velocity;
  }
};

inline ModelState sgd_step(const ModelState& m, const Vector& grad, double lr,
                           double momentum = 0.9, double weight_decay = 5e-4,
                           Vector* velocity = nullptr) {
  ModelState out = m;
  SgdOptimizer opt;
  opt.momentum = momentum;
  opt.weight_decay = weight_decay;
  if (velocity && velocity->size() == m.theta.size()) opt.velocity = *velocity;
  opt.step(out, grad, lr);
  if (velocity) *velocity = opt.velocity;
  return out;
}

}  // namespace gradmatch
