#pragma once

// Small fully connected networks with hand-written backpropagation.
//
// Batches are column-major: a batch of B inputs of width d is a d x B matrix.
// Every network keeps its parameters in one flat vector so optimizers and
// finite-difference checks can treat it as a plain vector.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gammalab::nn {

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StaleCache : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Rng = std::mt19937_64;

enum class Activation { Identity, Tanh };

/// Named view into a network's flat parameter vector (column-major rows x cols).
struct TensorView {
  std::string name;
  int rows = 0;
  int cols = 0;
  double* data = nullptr;
};

namespace detail {

// Orthogonal matrix (rows x cols) scaled by gain; rows or columns are orthonormal.
inline Eigen::MatrixXd orthogonal(int rows, int cols, double gain, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (int c = 0; c < small; ++c)
    for (int r = 0; r < big; ++r) a(r, c) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int c = 0; c < small; ++c)
    if (r(c, c) < 0.0) q.col(c) = -q.col(c);
  Eigen::MatrixXd out = rows >= cols ? q : Eigen::MatrixXd(q.transpose());
  return gain * out;
}

}  // namespace detail

class Mlp {
 public:
  struct Cache {
    // acts[0] is the input batch, acts[l + 1] the post-activation output of layer l.
    std::vector<Eigen::MatrixXd> acts;
  };

  Mlp() = default;

  Mlp(std::vector<int> sizes, Activation output) : sizes_(std::move(sizes)), output_(output) {
    if (sizes_.size() < 2) throw ShapeMismatch("mlp needs at least input and output sizes");
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      if (sizes_[l] < 1 || sizes_[l + 1] < 1) throw ShapeMismatch("layer sizes must be positive");
      w_offset_.push_back(offset);
      offset += static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1];
      b_offset_.push_back(offset);
      offset += static_cast<std::size_t>(sizes_[l + 1]);
    }
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset));
  }

  /// Orthogonal weights, gain hidden_gain on hidden layers and output_gain on the
  /// last layer; zero biases.
  void init_orthogonal(Rng& rng, double hidden_gain = std::numbers::sqrt2, double output_gain = 1e-2) {
    for (int l = 0; l < layers(); ++l) {
      const double gain = l + 1 == layers() ? output_gain : hidden_gain;
      weight(l) = detail::orthogonal(sizes_[l + 1], sizes_[l], gain, rng);
      bias(l).setZero();
    }
  }

  int layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  Activation output_activation() const { return output_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  Eigen::Map<Eigen::MatrixXd> weight(int l) {
    return {params_.data() + w_offset_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<const Eigen::MatrixXd> weight(int l) const {
    return {params_.data() + w_offset_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<Eigen::VectorXd> bias(int l) { return {params_.data() + b_offset_[l], sizes_[l + 1]}; }
  Eigen::Map<const Eigen::VectorXd> bias(int l) const {
    return {params_.data() + b_offset_[l], sizes_[l + 1]};
  }

  // Gradient vectors share the parameter layout; these map slices of one.
  Eigen::Map<Eigen::MatrixXd> weight_slice(Eigen::Ref<Eigen::VectorXd> grad, int l) const {
    return {grad.data() + w_offset_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<Eigen::VectorXd> bias_slice(Eigen::Ref<Eigen::VectorXd> grad, int l) const {
    return {grad.data() + b_offset_[l], sizes_[l + 1]};
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const {
    if (x.rows() != input_dim())
      throw ShapeMismatch("input has " + std::to_string(x.rows()) + " rows, expected " +
                          std::to_string(input_dim()));
    if (cache) {
      cache->acts.clear();
      cache->acts.reserve(sizes_.size());
      cache->acts.push_back(x);
    }
    Eigen::MatrixXd h = x;
    for (int l = 0; l < layers(); ++l) {
      Eigen::MatrixXd z = weight(l) * h;
      z.colwise() += bias(l);
      if (l + 1 < layers() || output_ == Activation::Tanh) z = z.array().tanh().matrix();
      h = std::move(z);
      if (cache) cache->acts.push_back(h);
    }
    return h;
  }

  Eigen::VectorXd forward_one(const Eigen::VectorXd& x) const { return forward(Eigen::MatrixXd(x)).col(0); }

  /// Accumulates dLoss/dparams into grad (same layout as params()) and returns
  /// dLoss/dinput.
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& d_out,
                           Eigen::Ref<Eigen::VectorXd> grad) const {
    if (cache.acts.size() != sizes_.size()) throw StaleCache("cache depth does not match network");
    const Eigen::Index batch = cache.acts.front().cols();
    for (std::size_t l = 0; l < sizes_.size(); ++l)
      if (cache.acts[l].rows() != sizes_[l] || cache.acts[l].cols() != batch)
        throw StaleCache("cache shapes do not match network");
    if (d_out.rows() != output_dim() || d_out.cols() != batch)
      throw ShapeMismatch("output gradient shape does not match forward batch");
    if (grad.size() != params_.size()) throw ShapeMismatch("gradient buffer has wrong length");

    Eigen::MatrixXd delta = d_out;
    for (int l = layers() - 1; l >= 0; --l) {
      const Eigen::MatrixXd& out = cache.acts[static_cast<std::size_t>(l) + 1];
      if (l + 1 < layers() || output_ == Activation::Tanh)
        delta.array() *= 1.0 - out.array().square();
      const Eigen::MatrixXd& in = cache.acts[static_cast<std::size_t>(l)];
      weight_slice(grad, l).noalias() += delta * in.transpose();
      bias_slice(grad, l) += delta.rowwise().sum();
      delta = weight(l).transpose() * delta;
    }
    return delta;
  }

  std::vector<TensorView> tensors(const std::string& prefix) {
    std::vector<TensorView> out;
    for (int l = 0; l < layers(); ++l) {
      out.push_back({prefix + std::to_string(l) + ".weight", sizes_[l + 1], sizes_[l],
                     params_.data() + w_offset_[l]});
      out.push_back({prefix + std::to_string(l) + ".bias", sizes_[l + 1], 1, params_.data() + b_offset_[l]});
    }
    return out;
  }

 private:
  std::vector<int> sizes_;
  Activation output_ = Activation::Identity;
  std::vector<std::size_t> w_offset_;
  std::vector<std::size_t> b_offset_;
  Eigen::VectorXd params_;
};

inline double log_two_pi() { return std::log(2.0 * std::numbers::pi); }

/// Diagonal Gaussian policy: a tanh trunk shared by one or more tanh mean heads,
/// each with its own state-independent log standard deviation. Head 0 is the
/// control policy; extra heads are auxiliary.
///
/// Flat parameter layout: [trunk | head_0 | log_std_0 | head_1 | log_std_1 | ...].
class GaussianPolicy {
 public:
  struct Eval {
    Mlp::Cache trunk;
    std::vector<Mlp::Cache> heads;
    std::vector<Eigen::MatrixXd> mean;  // per head, act_dim x B
    Eigen::MatrixXd actions;
    Eigen::MatrixXd log_prob;           // n_heads x B
  };

  GaussianPolicy() = default;

  GaussianPolicy(int obs_dim, int act_dim, int hidden, int n_heads = 1)
      : trunk_({obs_dim, hidden, hidden}, Activation::Tanh) {
    if (n_heads < 1) throw ShapeMismatch("policy needs at least one head");
    for (int h = 0; h < n_heads; ++h) {
      heads_.emplace_back(std::vector<int>{hidden, act_dim}, Activation::Tanh);
      log_std_.push_back(Eigen::VectorXd::Zero(act_dim));
    }
  }

  /// Initializes the trunk and head 0 from rng; other heads copy head 0.
  void init(Rng& rng) {
    trunk_.init_orthogonal(rng, std::numbers::sqrt2, std::numbers::sqrt2);
    heads_[0].init_orthogonal(rng);
    log_std_[0].setZero();
    sync_heads();
  }

  /// Copies head 0 (mean layer and log-std) into every auxiliary head.
  void sync_heads() {
    for (std::size_t h = 1; h < heads_.size(); ++h) {
      heads_[h].params() = heads_[0].params();
      log_std_[h] = log_std_[0];
    }
  }

  int obs_dim() const { return trunk_.input_dim(); }
  int act_dim() const { return heads_[0].output_dim(); }
  int head_count() const { return static_cast<int>(heads_.size()); }

  Mlp& trunk() { return trunk_; }
  const Mlp& trunk() const { return trunk_; }
  Mlp& head(int h) { return heads_[h]; }
  const Mlp& head(int h) const { return heads_[h]; }
  Eigen::VectorXd& log_std(int h = 0) { return log_std_[h]; }
  const Eigen::VectorXd& log_std(int h = 0) const { return log_std_[h]; }

  Eigen::Index parameter_count() const {
    Eigen::Index n = trunk_.parameter_count();
    for (std::size_t h = 0; h < heads_.size(); ++h) n += heads_[h].parameter_count() + log_std_[h].size();
    return n;
  }

  Eigen::VectorXd get_params() const {
    Eigen::VectorXd out(parameter_count());
    Eigen::Index at = 0;
    auto put = [&](const Eigen::VectorXd& v) {
      out.segment(at, v.size()) = v;
      at += v.size();
    };
    put(trunk_.params());
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      put(heads_[h].params());
      put(log_std_[h]);
    }
    return out;
  }

  void set_params(const Eigen::VectorXd& flat) {
    if (flat.size() != parameter_count()) throw ShapeMismatch("policy parameter vector has wrong length");
    Eigen::Index at = 0;
    auto take = [&](Eigen::VectorXd& v) {
      v = flat.segment(at, v.size());
      at += v.size();
    };
    take(trunk_.params());
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      take(heads_[h].params());
      take(log_std_[h]);
    }
  }

  Eigen::MatrixXd mean(const Eigen::MatrixXd& obs, int h = 0) const {
    return heads_[h].forward(trunk_.forward(obs));
  }

  /// Forward pass for every head and the log-density of `actions` under each.
  Eval evaluate(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& actions) const {
    if (actions.rows() != act_dim() || actions.cols() != obs.cols())
      throw ShapeMismatch("actions must be act_dim x batch");
    Eval e;
    e.actions = actions;
    const Eigen::MatrixXd features = trunk_.forward(obs, &e.trunk);
    e.heads.resize(heads_.size());
    e.log_prob.resize(head_count(), obs.cols());
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      e.mean.push_back(heads_[h].forward(features, &e.heads[h]));
      const Eigen::ArrayXd inv_var = (-2.0 * log_std_[h].array()).exp();
      const double norm = log_std_[h].sum() + 0.5 * act_dim() * log_two_pi();
      const Eigen::ArrayXXd diff = actions.array() - e.mean[h].array();
      const Eigen::ArrayXXd quad = diff.square().colwise() * inv_var;
      e.log_prob.row(static_cast<Eigen::Index>(h)) = (-0.5 * quad.colwise().sum() - norm).matrix();
    }
    return e;
  }

  /// Gradient of sum_{h,b} d_log_prob(h, b) * log_prob(h, b) in the flat layout.
  Eigen::VectorXd backward(const Eval& e, const Eigen::MatrixXd& d_log_prob) const {
    if (d_log_prob.rows() != head_count() || d_log_prob.cols() != e.actions.cols())
      throw ShapeMismatch("log-prob gradient must be n_heads x batch");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(parameter_count());
    Eigen::Index at = trunk_.parameter_count();
    Eigen::MatrixXd d_features;
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      const Eigen::ArrayXd inv_var = (-2.0 * log_std_[h].array()).exp();
      const Eigen::ArrayXXd diff = e.actions.array() - e.mean[h].array();
      const Eigen::ArrayXXd w = d_log_prob.row(static_cast<Eigen::Index>(h)).array().replicate(act_dim(), 1);
      // dlogp/dmean = (a - m) / sigma^2, dlogp/dlogsigma = (a - m)^2 / sigma^2 - 1
      const Eigen::MatrixXd d_mean = ((diff.colwise() * inv_var) * w).matrix();
      Eigen::VectorXd head_grad = Eigen::VectorXd::Zero(heads_[h].parameter_count());
      Eigen::MatrixXd d_feat = heads_[h].backward(e.heads[h], d_mean, head_grad);
      if (h == 0) {
        d_features = std::move(d_feat);
      } else {
        d_features += d_feat;
      }
      grad.segment(at, head_grad.size()) = head_grad;
      at += head_grad.size();
      const Eigen::ArrayXXd z2 = diff.square().colwise() * inv_var;
      grad.segment(at, act_dim()) = ((z2 - 1.0) * w).rowwise().sum().matrix();
      at += act_dim();
    }
    Eigen::VectorXd trunk_grad = Eigen::VectorXd::Zero(trunk_.parameter_count());
    trunk_.backward(e.trunk, d_features, trunk_grad);
    grad.head(trunk_grad.size()) = trunk_grad;
    return grad;
  }

  /// Samples one action per column of obs from head 0.
  Eigen::MatrixXd sample(const Eigen::MatrixXd& obs, Rng& rng) const {
    Eigen::MatrixXd a = mean(obs, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::VectorXd sigma = log_std_[0].array().exp();
    for (Eigen::Index b = 0; b < a.cols(); ++b)
      for (Eigen::Index j = 0; j < a.rows(); ++j) a(j, b) += sigma[j] * normal(rng);
    return a;
  }

  std::vector<TensorView> tensors() {
    auto out = trunk_.tensors("trunk.");
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      const std::string tag = "head" + std::to_string(h);
      auto t = heads_[h].tensors(tag + ".");
      out.insert(out.end(), t.begin(), t.end());
      out.push_back({tag + ".log_std", static_cast<int>(log_std_[h].size()), 1, log_std_[h].data()});
    }
    return out;
  }

 private:
  Mlp trunk_;
  std::vector<Mlp> heads_;
  std::vector<Eigen::VectorXd> log_std_;
};

struct PolicyGradient {
  double log_prob = 0.0;
  Eigen::VectorXd grad;  // flat policy layout
};

/// log pi(action | state) under head 0 and its gradient.
inline PolicyGradient log_prob_and_grad(const GaussianPolicy& policy, const Eigen::VectorXd& state,
                                        const Eigen::VectorXd& action) {
  const auto e = policy.evaluate(Eigen::MatrixXd(state), Eigen::MatrixXd(action));
  Eigen::MatrixXd seed = Eigen::MatrixXd::Zero(policy.head_count(), 1);
  seed(0, 0) = 1.0;
  return {e.log_prob(0, 0), policy.backward(e, seed)};
}

/// Value network with one linear head per output over a shared two-layer tanh
/// trunk. Head j (0-based) is row j of the last layer.
class MultiHeadCritic {
 public:
  MultiHeadCritic() = default;
  MultiHeadCritic(int obs_dim, int hidden, int heads)
      : net_({obs_dim, hidden, hidden, heads}, Activation::Identity) {}

  void init(Rng& rng) { net_.init_orthogonal(rng); }

  int head_count() const { return net_.output_dim(); }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  /// heads x B
  Eigen::MatrixXd forward(const Eigen::MatrixXd& obs, Mlp::Cache* cache = nullptr) const {
    return net_.forward(obs, cache);
  }
  Eigen::MatrixXd backward(const Mlp::Cache& cache, const Eigen::MatrixXd& d_out,
                           Eigen::Ref<Eigen::VectorXd> grad) const {
    return net_.backward(cache, d_out, grad);
  }

  /// Trunk features (hidden x B) shared by all heads.
  Eigen::MatrixXd features(const Eigen::MatrixXd& obs) const {
    Mlp::Cache cache;
    net_.forward(obs, &cache);
    return cache.acts[2];
  }

 private:
  Mlp net_;
};

/// Adam with bias correction; step() minimizes.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long steps = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;

  explicit Adam(double learning_rate = 1e-3) : lr(learning_rate) {}

  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad) {
    if (params.size() != grad.size()) throw ShapeMismatch("adam: params and grads differ in length");
    if (m.size() == 0) {
      m = Eigen::VectorXd::Zero(params.size());
      v = Eigen::VectorXd::Zero(params.size());
    }
    if (m.size() != params.size()) throw ShapeMismatch("adam: parameter count changed");
    ++steps;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

// Checkpoints: {"format": "gammalab.params.v1", "tensors": [{"name", "shape": [r, c], "data"}]}

inline nlohmann::json tensors_to_json(const std::vector<TensorView>& tensors) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& t : tensors) {
    const auto n = static_cast<std::size_t>(t.rows) * t.cols;
    list.push_back({{"name", t.name},
                    {"shape", {t.rows, t.cols}},
                    {"data", std::vector<double>(t.data, t.data + n)}});
  }
  return {{"format", "gammalab.params.v1"}, {"tensors", std::move(list)}};
}

inline void tensors_from_json(const nlohmann::json& doc, const std::vector<TensorView>& tensors) {
  if (doc.value("format", "") != "gammalab.params.v1") throw ShapeMismatch("unknown checkpoint format");
  const auto& list = doc.at("tensors");
  if (list.size() != tensors.size()) throw ShapeMismatch("checkpoint tensor count differs");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    const auto& entry = list[i];
    if (entry.at("name").get<std::string>() != t.name)
      throw ShapeMismatch("checkpoint tensor " + std::to_string(i) + " is not " + t.name);
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape.size() != 2 || shape[0] != t.rows || shape[1] != t.cols)
      throw ShapeMismatch("checkpoint shape mismatch for " + t.name);
    const auto data = entry.at("data").get<std::vector<double>>();
    if (data.size() != static_cast<std::size_t>(t.rows) * t.cols)
      throw ShapeMismatch("checkpoint data length mismatch for " + t.name);
    std::copy(data.begin(), data.end(), t.data);
  }
}

inline void save_checkpoint(const std::vector<TensorView>& tensors, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << tensors_to_json(tensors).dump() << '\n';
}

inline void load_checkpoint(const std::vector<TensorView>& tensors, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  tensors_from_json(nlohmann::json::parse(in), tensors);
}

}  // namespace gammalab::nn
