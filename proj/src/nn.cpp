#include "recall/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace recall::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation: " + s);
}

std::string activation_to_string(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  throw std::logic_error("bad activation tag");
}

Mlp::Mlp(std::vector<int> layer_sizes, std::vector<Activation> activations,
         std::uint64_t init_seed)
    : layer_sizes_(std::move(layer_sizes)), activations_(std::move(activations)) {
  if (layer_sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least one layer");
  if (activations_.size() != layer_sizes_.size() - 1) {
    throw std::invalid_argument("Mlp: one activation per layer required");
  }
  for (int n : layer_sizes_) {
    if (n <= 0) throw std::invalid_argument("Mlp: layer sizes must be positive");
  }
  Rng rng(init_seed);
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
    Layer layer;
    layer.in = layer_sizes_[l];
    layer.out = layer_sizes_[l + 1];
    layer.act = activations_[l];
    layer.w.resize(static_cast<std::size_t>(layer.out) * layer.in);
    // Small positive bias keeps ReLU units alive at init; it also keeps
    // fresh pre-activations off the exact kink, where backprop's
    // subgradient and a central difference legitimately disagree.
    layer.b.assign(layer.out, layer.act == Activation::kRelu ? 0.01 : 0.0);
    layer.gw.assign(layer.w.size(), 0.0);
    layer.gb.assign(layer.out, 0.0);
    double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    std::uniform_real_distribution<double> unif(-bound, bound);
    for (double& v : layer.w) v = unif(rng);
    layers_.push_back(std::move(layer));
  }
  pre_.resize(layers_.size());
  post_.resize(layers_.size());
}

Mlp Mlp::make(int in_dim, const std::vector<int>& hidden, int out_dim,
              Activation hidden_act, std::uint64_t init_seed) {
  std::vector<int> sizes{in_dim};
  std::vector<Activation> acts;
  for (int h : hidden) {
    sizes.push_back(h);
    acts.push_back(hidden_act);
  }
  sizes.push_back(out_dim);
  acts.push_back(Activation::kIdentity);
  return Mlp(std::move(sizes), std::move(acts), init_seed);
}

static inline double activate(double x, Activation a) {
  switch (a) {
    case Activation::kTanh: return std::tanh(x);
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kIdentity: return x;
  }
  return x;
}

static inline double activate_grad(double pre, Activation a) {
  switch (a) {
    case Activation::kTanh: {
      double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::kRelu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kIdentity: return 1.0;
  }
  return 1.0;
}

const std::vector<double>& Mlp::forward(const Features& x) {
  if (x.dim != in_dim()) throw std::invalid_argument("Mlp::forward: dimension mismatch");
  if (x.sparse()) {
    for (int i : x.hot) {
      if (i < 0 || i >= in_dim()) throw std::invalid_argument("Mlp::forward: hot index out of range");
    }
    input_hot_ = x.hot;
    input_dense_.clear();
  } else {
    input_hot_.clear();
    input_dense_ = x.dense;
  }
  run_forward();
  return post_.back();
}

const std::vector<double>& Mlp::forward(std::span<const double> x) {
  if (static_cast<int>(x.size()) != in_dim()) {
    throw std::invalid_argument("Mlp::forward: dimension mismatch");
  }
  input_hot_.clear();
  input_dense_.assign(x.begin(), x.end());
  run_forward();
  return post_.back();
}

void Mlp::run_forward() {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    std::vector<double>& pre = pre_[l];
    pre.assign(layer.out, 0.0);
    if (l == 0 && !input_hot_.empty()) {
      // Sum of unit vectors: pick columns instead of a full matvec.
      for (int o = 0; o < layer.out; ++o) {
        double acc = layer.b[o];
        const double* row = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
        for (int i : input_hot_) acc += row[i];
        pre[o] = acc;
      }
    } else {
      const std::vector<double>& in = (l == 0) ? input_dense_ : post_[l - 1];
      for (int o = 0; o < layer.out; ++o) {
        const double* row = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
        double acc = layer.b[o];
        for (int i = 0; i < layer.in; ++i) acc += row[i] * in[i];
        pre[o] = acc;
      }
    }
    std::vector<double>& post = post_[l];
    post.resize(layer.out);
    for (int o = 0; o < layer.out; ++o) post[o] = activate(pre[o], layer.act);
  }
  forward_done_ = true;
}

void Mlp::backward(std::span<const double> output_grad) {
  if (!forward_done_) throw std::logic_error("Mlp::backward called before forward");
  if (static_cast<int>(output_grad.size()) != out_dim()) {
    throw std::invalid_argument("Mlp::backward: gradient dimension mismatch");
  }
  std::vector<double> delta(output_grad.begin(), output_grad.end());
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    Layer& layer = layers_[l];
    for (int o = 0; o < layer.out; ++o) delta[o] *= activate_grad(pre_[l][o], layer.act);
    for (int o = 0; o < layer.out; ++o) layer.gb[o] += delta[o];
    if (l == 0 && !input_hot_.empty()) {
      for (int o = 0; o < layer.out; ++o) {
        double* grow = layer.gw.data() + static_cast<std::size_t>(o) * layer.in;
        for (int i : input_hot_) grow[i] += delta[o];
      }
      break;  // input gradient not needed
    }
    const std::vector<double>& in = (l == 0) ? input_dense_ : post_[l - 1];
    for (int o = 0; o < layer.out; ++o) {
      double d = delta[o];
      if (d == 0.0) continue;
      double* grow = layer.gw.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) grow[i] += d * in[i];
    }
    if (l == 0) break;
    std::vector<double> prev(layer.in, 0.0);
    for (int o = 0; o < layer.out; ++o) {
      double d = delta[o];
      if (d == 0.0) continue;
      const double* row = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) prev[i] += d * row[i];
    }
    delta = std::move(prev);
  }
}

void Mlp::zero_grad() {
  for (Layer& layer : layers_) {
    std::fill(layer.gw.begin(), layer.gw.end(), 0.0);
    std::fill(layer.gb.begin(), layer.gb.end(), 0.0);
  }
}

void Mlp::sgd_step(double lr, double scale) {
  double f = lr / scale;
  for (Layer& layer : layers_) {
    for (std::size_t i = 0; i < layer.w.size(); ++i) layer.w[i] -= f * layer.gw[i];
    for (std::size_t i = 0; i < layer.b.size(); ++i) layer.b[i] -= f * layer.gb[i];
  }
}

double Mlp::grad_norm_sq() const {
  double s = 0.0;
  for (const Layer& layer : layers_) {
    for (double g : layer.gw) s += g * g;
    for (double g : layer.gb) s += g * g;
  }
  return s;
}

void Mlp::scale_grads(double factor) {
  for (Layer& layer : layers_) {
    for (double& g : layer.gw) g *= factor;
    for (double& g : layer.gb) g *= factor;
  }
}

void Mlp::zero_output_layer() {
  Layer& last = layers_.back();
  std::fill(last.w.begin(), last.w.end(), 0.0);
  std::fill(last.b.begin(), last.b.end(), 0.0);
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (const Layer& layer : layers_) n += layer.w.size() + layer.b.size();
  return n;
}

std::pair<const Mlp::Layer*, std::size_t> Mlp::locate(std::size_t i) const {
  for (const Layer& layer : layers_) {
    std::size_t n = layer.w.size() + layer.b.size();
    if (i < n) return {&layer, i};
    i -= n;
  }
  throw std::out_of_range("Mlp: parameter index out of range");
}

std::pair<Mlp::Layer*, std::size_t> Mlp::locate(std::size_t i) {
  auto [layer, off] = static_cast<const Mlp*>(this)->locate(i);
  return {const_cast<Layer*>(layer), off};
}

double Mlp::param(std::size_t i) const {
  auto [layer, off] = locate(i);
  return off < layer->w.size() ? layer->w[off] : layer->b[off - layer->w.size()];
}

void Mlp::set_param(std::size_t i, double v) {
  auto [layer, off] = locate(i);
  if (off < layer->w.size()) {
    layer->w[off] = v;
  } else {
    layer->b[off - layer->w.size()] = v;
  }
}

double Mlp::grad(std::size_t i) const {
  auto [layer, off] = locate(i);
  return off < layer->w.size() ? layer->gw[off] : layer->gb[off - layer->w.size()];
}

std::vector<double> Mlp::flat_params() const {
  std::vector<double> out;
  out.reserve(param_count());
  for (const Layer& layer : layers_) {
    out.insert(out.end(), layer.w.begin(), layer.w.end());
    out.insert(out.end(), layer.b.begin(), layer.b.end());
  }
  return out;
}

void Mlp::load_flat_params(std::span<const double> p) {
  if (p.size() != param_count()) throw std::invalid_argument("Mlp: parameter count mismatch");
  std::size_t k = 0;
  for (Layer& layer : layers_) {
    for (double& v : layer.w) v = p[k++];
    for (double& v : layer.b) v = p[k++];
  }
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

static double log_sum_exp(const std::vector<double>& v) {
  double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> CategoricalHead::probs() const {
  if (logits.empty()) throw std::invalid_argument("CategoricalHead: empty logits");
  double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

double CategoricalHead::log_prob(int k) const {
  if (k < 0 || k >= static_cast<int>(logits.size())) {
    throw std::out_of_range("CategoricalHead::log_prob: outcome out of range");
  }
  return logits[k] - log_sum_exp(logits);
}

std::vector<double> CategoricalHead::log_prob_grad(int k) const {
  if (k < 0 || k >= static_cast<int>(logits.size())) {
    throw std::out_of_range("CategoricalHead::log_prob_grad: outcome out of range");
  }
  std::vector<double> g = probs();
  for (double& v : g) v = -v;
  g[k] += 1.0;
  return g;
}

int CategoricalHead::sample(Rng& rng) const {
  std::vector<double> p = probs();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

double CategoricalHead::entropy() const {
  double h = 0.0;
  for (double p : probs()) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

std::vector<double> CategoricalHead::entropy_grad() const {
  // dH/dlogit_i = -p_i (log p_i + H)
  std::vector<double> p = probs();
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    g[i] = p[i] > 0.0 ? -p[i] * (std::log(p[i]) + h) : 0.0;
  }
  return g;
}

static constexpr double kLogTwoPi = 1.8378770664093453;  // log(2*pi)

double GaussianHead::log_prob(std::span<const double> x) const {
  if (x.size() != mean.size() || log_std.size() != mean.size()) {
    throw std::invalid_argument("GaussianHead::log_prob: dimension mismatch");
  }
  double lp = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double ls = log_std[i];
    double z = (x[i] - mean[i]) * std::exp(-ls);
    lp += -0.5 * kLogTwoPi - ls - 0.5 * z * z;
  }
  return lp;
}

std::vector<double> GaussianHead::log_prob_grad_mean(std::span<const double> x) const {
  std::vector<double> g(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double inv_var = std::exp(-2.0 * log_std[i]);
    g[i] = (x[i] - mean[i]) * inv_var;
  }
  return g;
}

std::vector<double> GaussianHead::log_prob_grad_log_std(std::span<const double> x) const {
  std::vector<double> g(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double z = (x[i] - mean[i]) * std::exp(-log_std[i]);
    g[i] = z * z - 1.0;
  }
  return g;
}

std::vector<double> GaussianHead::sample(Rng& rng) const {
  std::vector<double> out(mean.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double sd = std::exp(log_std[i]);
    out[i] = sd > 0.0 ? mean[i] + sd * normal(rng) : mean[i];
  }
  return out;
}

double GaussianHead::entropy() const {
  double h = 0.0;
  for (double ls : log_std) h += ls + 0.5 * (kLogTwoPi + 1.0);
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const std::vector<NamedNet>& nets) {
  nlohmann::json header;
  header["format"] = "recall-checkpoint-v1";
  header["nets"] = nlohmann::json::array();
  for (const NamedNet& n : nets) {
    nlohmann::json j;
    j["name"] = n.name;
    j["layer_sizes"] = n.net->layer_sizes();
    std::vector<std::string> acts;
    for (Activation a : n.net->activations()) acts.push_back(activation_to_string(a));
    j["activations"] = acts;
    j["param_count"] = n.net->param_count();
    header["nets"].push_back(j);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << header.dump() << '\n';
  for (const NamedNet& n : nets) {
    std::vector<double> p = n.net->flat_params();
    out.write(reinterpret_cast<const char*>(p.data()),
              static_cast<std::streamsize>(p.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path, const std::vector<NamedNet>& nets) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw std::runtime_error("load_checkpoint: missing header");
  nlohmann::json header = nlohmann::json::parse(header_line);
  if (header.at("nets").size() != nets.size()) {
    throw std::runtime_error("load_checkpoint: net count mismatch");
  }
  for (std::size_t k = 0; k < nets.size(); ++k) {
    const auto& j = header["nets"][k];
    if (j.at("name").get<std::string>() != nets[k].name) {
      throw std::runtime_error("load_checkpoint: net name mismatch");
    }
    if (j.at("layer_sizes").get<std::vector<int>>() != nets[k].net->layer_sizes()) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + nets[k].name);
    }
    std::vector<double> p(nets[k].net->param_count());
    in.read(reinterpret_cast<char*>(p.data()),
            static_cast<std::streamsize>(p.size() * sizeof(double)));
    if (!in) throw std::runtime_error("load_checkpoint: truncated parameters");
    nets[k].net->load_flat_params(p);
  }
}

}  // namespace recall::nn
