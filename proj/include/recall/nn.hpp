#ifndef RECALL_NN_HPP
#define RECALL_NN_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "recall/env.hpp"
#include "recall/util.hpp"

namespace recall::nn {

enum class Activation { kTanh, kRelu, kIdentity };

Activation activation_from_string(const std::string& s);
std::string activation_to_string(Activation a);

// Dense feedforward net with manual reverse-mode gradients. Holds one
// sample's forward cache; gradients accumulate across backward calls until
// zero_grad. Sparse (sum-of-one-hot) inputs skip the first-layer matvec.
class Mlp {
 public:
  Mlp(std::vector<int> layer_sizes, std::vector<Activation> activations,
      std::uint64_t init_seed);

  // Convenience: hidden layers share one activation, output is identity.
  static Mlp make(int in_dim, const std::vector<int>& hidden, int out_dim,
                  Activation hidden_act, std::uint64_t init_seed);

  const std::vector<double>& forward(const Features& x);
  const std::vector<double>& forward(std::span<const double> x);

  // Accumulates parameter gradients for the cached sample. Must follow a
  // forward call. Returns nothing; input gradients are not propagated past
  // the first layer.
  void backward(std::span<const double> output_grad);

  void zero_grad();
  // Plain SGD descent step on the accumulated gradients, scaled by 1/scale
  // (pass the minibatch size to average).
  void sgd_step(double lr, double scale = 1.0);

  double grad_norm_sq() const;
  void scale_grads(double factor);
  // Zero the final layer's weights and biases (constant-zero output, e.g.
  // exactly uniform logits).
  void zero_output_layer();

  int in_dim() const { return layer_sizes_.front(); }
  int out_dim() const { return layer_sizes_.back(); }
  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  const std::vector<Activation>& activations() const { return activations_; }

  // Flat parameter view, layer by layer (W row-major, then b).
  std::size_t param_count() const;
  double param(std::size_t i) const;
  void set_param(std::size_t i, double v);
  double grad(std::size_t i) const;
  std::vector<double> flat_params() const;
  void load_flat_params(std::span<const double> p);

 private:
  struct Layer {
    int in = 0, out = 0;
    Activation act = Activation::kIdentity;
    std::vector<double> w;   // out x in, row-major
    std::vector<double> b;
    std::vector<double> gw;
    std::vector<double> gb;
  };

  std::vector<int> layer_sizes_;
  std::vector<Activation> activations_;
  std::vector<Layer> layers_;

  // forward cache
  bool forward_done_ = false;
  std::vector<int> input_hot_;
  std::vector<double> input_dense_;
  std::vector<std::vector<double>> pre_;    // pre-activation per layer
  std::vector<std::vector<double>> post_;   // activation per layer

  void run_forward();
  std::pair<const Layer*, std::size_t> locate(std::size_t i) const;
  std::pair<Layer*, std::size_t> locate(std::size_t i);
};

// ---------------------------------------------------------------------------
// Distribution heads
// ---------------------------------------------------------------------------

struct CategoricalHead {
  std::vector<double> logits;

  std::vector<double> probs() const;
  // log p(k), stable under constant shifts of the logits.
  double log_prob(int k) const;
  // d log p(k) / d logits = onehot(k) - softmax(logits)
  std::vector<double> log_prob_grad(int k) const;
  int sample(Rng& rng) const;
  double entropy() const;
  std::vector<double> entropy_grad() const;
};

struct GaussianHead {
  std::vector<double> mean;
  std::vector<double> log_std;   // same length as mean

  double log_prob(std::span<const double> x) const;
  std::vector<double> log_prob_grad_mean(std::span<const double> x) const;
  std::vector<double> log_prob_grad_log_std(std::span<const double> x) const;
  std::vector<double> sample(Rng& rng) const;
  double entropy() const;
};

// ---------------------------------------------------------------------------
// Checkpoints: JSON shape header line, then flat little-endian float64
// parameter arrays in header order.
// ---------------------------------------------------------------------------

struct NamedNet {
  std::string name;
  Mlp* net = nullptr;
};

void save_checkpoint(const std::string& path, const std::vector<NamedNet>& nets);
// Nets must already have matching shapes; parameters are overwritten.
void load_checkpoint(const std::string& path, const std::vector<NamedNet>& nets);

}  // namespace recall::nn

#endif
