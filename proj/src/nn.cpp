#include "pelab/nn.hpp"

#include <cmath>

namespace pelab::nn {

void Grads::set_zero() {
  for (auto& m : dW) m.setZero();
  for (auto& v : db) v.setZero();
}

void Grads::add_scaled(const Grads& other, double scale) {
  for (size_t l = 0; l < dW.size(); ++l) {
    dW[l] += scale * other.dW[l];
    db[l] += scale * other.db[l];
  }
}

double Grads::squared_norm() const {
  double s = 0.0;
  for (const auto& m : dW) s += m.squaredNorm();
  for (const auto& v : db) s += v.squaredNorm();
  return s;
}

void Grads::scale(double factor) {
  for (auto& m : dW) m *= factor;
  for (auto& v : db) v *= factor;
}

Mlp::Mlp(const std::vector<int>& layer_sizes) : sizes_(layer_sizes) {
  if (sizes_.size() < 2) throw ValidationError("Mlp: need at least input and output sizes");
  for (int s : sizes_) {
    if (s <= 0) throw ValidationError("Mlp: layer sizes must be positive");
  }
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    W.emplace_back(Eigen::MatrixXd::Zero(sizes_[l + 1], sizes_[l]));
    b.emplace_back(Eigen::VectorXd::Zero(sizes_[l + 1]));
  }
}

Mlp Mlp::xavier(const std::vector<int>& layer_sizes, Rng& rng, double output_scale) {
  Mlp net(layer_sizes);
  for (size_t l = 0; l < net.W.size(); ++l) {
    const double fan_in = static_cast<double>(net.W[l].cols());
    const double fan_out = static_cast<double>(net.W[l].rows());
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    if (l + 1 == net.W.size()) limit *= output_scale;
    for (Eigen::Index i = 0; i < net.W[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < net.W[l].cols(); ++j) {
        net.W[l](i, j) = rng.uniform(-limit, limit);
      }
    }
  }
  return net;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  if (x.size() != input_dim()) throw ValidationError("Mlp::forward: input dimension mismatch");
  Eigen::VectorXd a = x;
  for (size_t l = 0; l < W.size(); ++l) {
    Eigen::VectorXd z = W[l] * a + b[l];
    a = (l + 1 == W.size()) ? z : z.array().tanh().matrix();
  }
  return a;
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& X, ForwardCache* cache) const {
  if (X.cols() != input_dim()) throw ValidationError("Mlp::forward_batch: input dimension mismatch");
  if (cache != nullptr) {
    cache->acts.clear();
    cache->acts.reserve(W.size() + 1);
    cache->acts.push_back(X);
  }
  Eigen::MatrixXd a = X;
  for (size_t l = 0; l < W.size(); ++l) {
    Eigen::MatrixXd z = (a * W[l].transpose()).rowwise() + b[l].transpose();
    a = (l + 1 == W.size()) ? z : z.array().tanh().matrix();
    if (cache != nullptr) cache->acts.push_back(a);
  }
  return a;
}

Grads Mlp::backward(const ForwardCache& cache, const Eigen::MatrixXd& d_out) const {
  if (cache.acts.size() != W.size() + 1) throw ValidationError("Mlp::backward: stale cache");
  if (d_out.rows() != cache.acts[0].rows() || d_out.cols() != output_dim()) {
    throw ValidationError("Mlp::backward: gradient shape mismatch");
  }
  Grads g = zero_grads();
  Eigen::MatrixXd delta = d_out;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const size_t ul = static_cast<size_t>(l);
    g.dW[ul] = delta.transpose() * cache.acts[ul];
    g.db[ul] = delta.colwise().sum();
    if (l > 0) {
      // cache.acts[l] holds tanh outputs, so 1 - a^2 is the local derivative.
      delta = (delta * W[ul]).cwiseProduct(
          (1.0 - cache.acts[ul].array().square()).matrix());
    }
  }
  return g;
}

Grads Mlp::zero_grads() const {
  Grads g;
  g.dW.reserve(W.size());
  g.db.reserve(b.size());
  for (const auto& m : W) g.dW.emplace_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  for (const auto& v : b) g.db.emplace_back(Eigen::VectorXd::Zero(v.size()));
  return g;
}

void Mlp::quantize_f32() {
  for (auto& m : W) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
    }
  }
  for (auto& v : b) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      v.data()[i] = static_cast<double>(static_cast<float>(v.data()[i]));
    }
  }
}

bool Mlp::all_finite() const {
  for (const auto& m : W) {
    if (!m.allFinite()) return false;
  }
  for (const auto& v : b) {
    if (!v.allFinite()) return false;
  }
  return true;
}

int Mlp::param_count() const {
  int n = 0;
  for (size_t l = 0; l < W.size(); ++l) {
    n += static_cast<int>(W[l].size() + b[l].size());
  }
  return n;
}

void Mlp::flatten_into(Eigen::VectorXd& out, int offset) const {
  for (size_t l = 0; l < W.size(); ++l) {
    for (Eigen::Index i = 0; i < W[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < W[l].cols(); ++j) out(offset++) = W[l](i, j);
    }
    for (Eigen::Index i = 0; i < b[l].size(); ++i) out(offset++) = b[l](i);
  }
}

void Mlp::unflatten_from(const Eigen::VectorXd& in, int offset) {
  for (size_t l = 0; l < W.size(); ++l) {
    for (Eigen::Index i = 0; i < W[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < W[l].cols(); ++j) W[l](i, j) = in(offset++);
    }
    for (Eigen::Index i = 0; i < b[l].size(); ++i) b[l](i) = in(offset++);
  }
}

void Mlp::flatten_grads_into(const Grads& g, Eigen::VectorXd& out, int offset) {
  for (size_t l = 0; l < g.dW.size(); ++l) {
    for (Eigen::Index i = 0; i < g.dW[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < g.dW[l].cols(); ++j) out(offset++) = g.dW[l](i, j);
    }
    for (Eigen::Index i = 0; i < g.db[l].size(); ++i) out(offset++) = g.db[l](i);
  }
}

}  // namespace pelab::nn
