#pragma once

#include <vector>

#include "pelab/common.hpp"

namespace pelab::nn {

// Activations kept from a batched forward pass so backward() can reuse them.
// acts[0] is the input batch; acts[l+1] is the output of layer l (tanh for
// hidden layers, linear for the last). Rows are samples.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> acts;
};

// Per-layer gradients with the same shapes as Mlp::W and Mlp::b.
struct Grads {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;

  void set_zero();
  void add_scaled(const Grads& other, double scale);
  double squared_norm() const;
  void scale(double factor);
};

// Fully-connected network: affine layers with tanh on all hidden layers and a
// linear output. Weights are double precision in memory; quantize_f32() snaps
// them onto the 32-bit float grid used by the on-disk format.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(const std::vector<int>& layer_sizes);

  // Xavier-uniform init; `output_scale` shrinks the last layer (small initial
  // action means keep early exploration centered).
  static Mlp xavier(const std::vector<int>& layer_sizes, Rng& rng, double output_scale = 1.0);

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  int num_layers() const { return static_cast<int>(W.size()); }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& X, ForwardCache* cache = nullptr) const;

  // d_out is dLoss/d(linear output), one row per sample in the cached batch.
  Grads backward(const ForwardCache& cache, const Eigen::MatrixXd& d_out) const;

  Grads zero_grads() const;
  void quantize_f32();
  bool all_finite() const;

  // Flat parameter vector in a fixed order (per layer: W row-major, then b).
  int param_count() const;
  void flatten_into(Eigen::VectorXd& out, int offset) const;
  void unflatten_from(const Eigen::VectorXd& in, int offset);
  static void flatten_grads_into(const Grads& g, Eigen::VectorXd& out, int offset);

  std::vector<Eigen::MatrixXd> W;  // W[l] has shape sizes[l+1] x sizes[l]
  std::vector<Eigen::VectorXd> b;

 private:
  std::vector<int> sizes_;
};

}  // namespace pelab::nn
