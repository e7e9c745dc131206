#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dgrasp/json_util.hpp"

namespace dgrasp {

struct PpoConfig {
  double gamma = 0.996;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double lr = 5e-4;
  int updates_per_epoch = 16;
  int minibatches = 4;  // updates_per_epoch / minibatches passes over the buffer
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  double max_grad_norm = 0.5;
  int epochs = 500;
  int episodes_per_worker = 1;
  int episode_len_grasp = 195;
  int episode_len_full = 300;
  int hidden_layers = 2;
  int hidden_units = 128;
  double log_std_init = -0.5;
  double reward_scale = 1.0;  // applied to rewards before advantage estimation
  bool normalize_rewards = true;  // divide by the running std of discounted returns
  int threads = 0;            // 0: hardware concurrency; results do not depend on it

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("ppo." + m); };
    if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must be in (0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda must be in [0, 1]");
    if (!(clip > 0.0)) fail("clip must be > 0");
    if (!(lr > 0.0)) fail("lr must be > 0");
    if (minibatches < 1 || updates_per_epoch < minibatches || updates_per_epoch % minibatches != 0)
      fail("updates_per_epoch must be a positive multiple of minibatches");
    if (value_coef < 0.0 || entropy_coef < 0.0) fail("loss coefficients must be >= 0");
    if (!(max_grad_norm > 0.0)) fail("max_grad_norm must be > 0");
    if (epochs < 0) fail("epochs must be >= 0");
    if (episodes_per_worker < 1) fail("episodes_per_worker must be >= 1");
    if (episode_len_grasp < 1 || episode_len_full <= episode_len_grasp)
      fail("episode lengths must satisfy 0 < grasp < full");
    if (hidden_layers < 1 || hidden_units < 1) fail("network size must be positive");
    if (!(reward_scale > 0.0)) fail("reward_scale must be > 0");
    if (threads < 0) fail("threads must be >= 0");
  }
};

#define DGRASP_PPO_FIELDS(X)                                                                                    \
  X(gamma) X(gae_lambda) X(clip) X(lr) X(updates_per_epoch) X(minibatches) X(value_coef) X(entropy_coef)        \
  X(max_grad_norm) X(epochs) X(episodes_per_worker) X(episode_len_grasp) X(episode_len_full) X(hidden_layers)   \
  X(hidden_units) X(log_std_init) X(reward_scale) X(normalize_rewards) X(threads)

inline nlohmann::json to_json_value(const PpoConfig& c) {
  nlohmann::json j;
#define X(f) j[#f] = c.f;
  DGRASP_PPO_FIELDS(X)
#undef X
  return j;
}

/// Starts from `base` and applies the keys present in `j`.
inline PpoConfig ppo_config_from_json(const nlohmann::json& j, PpoConfig c = {}) {
  std::vector<std::string> known;
#define X(f)              \
  known.push_back(#f);    \
  detail::read_field(j, #f, c.f, "ppo");
  DGRASP_PPO_FIELDS(X)
#undef X
  detail::reject_unknown_keys(j, known, "ppo");
  c.validate();
  return c;
}

#undef DGRASP_PPO_FIELDS

// ---------------------------------------------------------------------------
// GAE

struct GaeResult {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

/// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t
/// A_t     = delta_t + gamma lambda (1 - done_t) A_{t+1},   returns = A + V
/// V_{N} is taken as `bootstrap`.
inline GaeResult gae_advantages(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                                const std::vector<bool>& dones, double gamma, double lambda, double bootstrap = 0.0) {
  const auto n = rewards.size();
  if (values.size() != n || static_cast<Eigen::Index>(dones.size()) != n)
    throw std::invalid_argument("gae_advantages: rewards, values and dones must have equal length");
  GaeResult out{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  double next_adv = 0.0;
  double next_value = bootstrap;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[t] = next_adv;
    next_value = values[t];
  }
  out.returns = out.advantages + values;
  return out;
}

// ---------------------------------------------------------------------------
// Networks

/// Fully connected tanh network with a linear output layer.
struct Mlp {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  struct Cache {
    std::vector<Eigen::MatrixXd> activations;  // input, then one per hidden layer
  };

  static Mlp create(const std::vector<int>& sizes, double hidden_gain, double output_gain, std::mt19937_64& rng) {
    if (sizes.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    Mlp m;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (size_t i = 0; i + 1 < sizes.size(); ++i) {
      const int rows = sizes[i + 1];
      const int cols = sizes[i];
      // orthogonal init from the QR factors of a Gaussian matrix
      const int big = std::max(rows, cols);
      Eigen::MatrixXd a(big, std::min(rows, cols));
      for (Eigen::Index c = 0; c < a.cols(); ++c)
        for (Eigen::Index r = 0; r < a.rows(); ++r) a(r, c) = normal(rng);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
      Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, a.cols());
      const Eigen::MatrixXd rmat = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
      for (Eigen::Index c = 0; c < q.cols(); ++c)
        if (rmat(c, c) < 0.0) q.col(c) *= -1.0;
      Eigen::MatrixXd w = rows >= cols ? q : Eigen::MatrixXd(q.transpose());
      const double gain = i + 2 == sizes.size() ? output_gain : hidden_gain;
      m.weights.push_back(gain * w);
      m.biases.push_back(Eigen::VectorXd::Zero(rows));
    }
    return m;
  }

  int input_size() const { return static_cast<int>(weights.front().cols()); }
  int output_size() const { return static_cast<int>(weights.back().rows()); }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
    Eigen::VectorXd h = x;
    for (size_t i = 0; i < weights.size(); ++i) {
      Eigen::VectorXd z = weights[i] * h + biases[i];
      h = i + 1 == weights.size() ? z : Eigen::VectorXd(z.array().tanh());
    }
    return h;
  }

  /// Columns of X are samples.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x, Cache& cache) const {
    cache.activations.assign(1, x);
    Eigen::MatrixXd h = x;
    for (size_t i = 0; i < weights.size(); ++i) {
      Eigen::MatrixXd z = weights[i] * h;
      z.colwise() += biases[i];
      if (i + 1 == weights.size()) return z;
      h = z.array().tanh();
      cache.activations.push_back(h);
    }
    return h;
  }

  /// Back-propagates dLoss/dOutput (columns = samples) and writes parameter
  /// gradients in `params()` order.
  void backward(const Cache& cache, const Eigen::MatrixXd& grad_out, double* grad) const {
    Eigen::MatrixXd g = grad_out;
    std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>> layer_grads(weights.size());
    for (int i = static_cast<int>(weights.size()) - 1; i >= 0; --i) {
      const Eigen::MatrixXd& in = cache.activations[i];
      layer_grads[i] = {g * in.transpose(), g.rowwise().sum()};
      if (i > 0) {
        g = (weights[i].transpose() * g).array() * (1.0 - in.array().square());
      }
    }
    for (const auto& [gw, gb] : layer_grads) {
      std::copy(gw.data(), gw.data() + gw.size(), grad);
      grad += gw.size();
      std::copy(gb.data(), gb.data() + gb.size(), grad);
      grad += gb.size();
    }
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
    return n;
  }

  void get_params(double* out) const {
    for (size_t i = 0; i < weights.size(); ++i) {
      out = std::copy(weights[i].data(), weights[i].data() + weights[i].size(), out);
      out = std::copy(biases[i].data(), biases[i].data() + biases[i].size(), out);
    }
  }

  void set_params(const double* in) {
    for (size_t i = 0; i < weights.size(); ++i) {
      std::copy(in, in + weights[i].size(), weights[i].data());
      in += weights[i].size();
      std::copy(in, in + biases[i].size(), biases[i].data());
      in += biases[i].size();
    }
  }
};

/// Per-feature running mean and variance, merged batch-wise.
struct RunningNorm {
  double count = 0.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double clip = 10.0;

  explicit RunningNorm(int n = 0) : mean(Eigen::VectorXd::Zero(n)), var(Eigen::VectorXd::Ones(n)) {}

  void update(const Eigen::MatrixXd& batch) {  // columns = samples
    const double n = static_cast<double>(batch.cols());
    if (n == 0) return;
    const Eigen::VectorXd bmean = batch.rowwise().mean();
    const Eigen::VectorXd bvar = (batch.colwise() - bmean).array().square().rowwise().sum() / n;
    const double total = count + n;
    const Eigen::VectorXd delta = bmean - mean;
    const Eigen::VectorXd m2 = var * count + bvar * n + delta.cwiseProduct(delta) * (count * n / total);
    mean += delta * (n / total);
    var = m2 / total;
    count = total;
  }

  Eigen::VectorXd normalize(const Eigen::VectorXd& x) const {
    return ((x - mean).array() / (var.array() + 1e-8).sqrt()).cwiseMax(-clip).cwiseMin(clip).matrix();
  }
};

/// Gaussian policy with a state-independent log-std, plus a value network.
struct ActorCritic {
  Mlp actor;
  Mlp critic;
  Eigen::VectorXd log_std;
  RunningNorm obs_norm;

  static ActorCritic create(int obs_size, int action_size, const PpoConfig& cfg, std::mt19937_64& rng) {
    std::vector<int> sizes{obs_size};
    for (int i = 0; i < cfg.hidden_layers; ++i) sizes.push_back(cfg.hidden_units);
    ActorCritic ac;
    sizes.push_back(action_size);
    ac.actor = Mlp::create(sizes, std::numbers::sqrt2, 0.01, rng);
    sizes.back() = 1;
    ac.critic = Mlp::create(sizes, std::numbers::sqrt2, 1.0, rng);
    ac.log_std = Eigen::VectorXd::Constant(action_size, cfg.log_std_init);
    ac.obs_norm = RunningNorm(obs_size);
    return ac;
  }

  int observation_size() const { return actor.input_size(); }
  int action_size() const { return actor.output_size(); }

  Eigen::VectorXd mean_action(const Eigen::VectorXd& normalized_obs) const { return actor.forward(normalized_obs); }
  double value(const Eigen::VectorXd& normalized_obs) const { return critic.forward(normalized_obs)[0]; }

  Eigen::Index parameter_count() const {
    return actor.parameter_count() + critic.parameter_count() + log_std.size();
  }
  Eigen::VectorXd params() const {
    Eigen::VectorXd p(parameter_count());
    actor.get_params(p.data());
    critic.get_params(p.data() + actor.parameter_count());
    p.tail(log_std.size()) = log_std;
    return p;
  }
  void set_params(const Eigen::VectorXd& p) {
    actor.set_params(p.data());
    critic.set_params(p.data() + actor.parameter_count());
    log_std = p.tail(log_std.size());
  }
};

inline double gaussian_log_prob(const Eigen::VectorXd& a, const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std) {
  const Eigen::ArrayXd z = (a - mean).array() / log_std.array().exp();
  return -0.5 * z.square().sum() - log_std.sum() - 0.5 * static_cast<double>(a.size()) * std::log(2.0 * std::numbers::pi);
}

struct ActionSample {
  Eigen::VectorXd raw;  // unclamped sample, used for the likelihood
  Eigen::VectorXd action;  // clamped to [-1, 1]
  double log_prob = 0.0;
};

inline ActionSample sample_action(const ActorCritic& net, const Eigen::VectorXd& normalized_obs, bool stochastic,
                                  std::mt19937_64& rng) {
  const Eigen::VectorXd mean = net.mean_action(normalized_obs);
  ActionSample s;
  s.raw = mean;
  if (stochastic) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < mean.size(); ++i) s.raw[i] += std::exp(net.log_std[i]) * normal(rng);
  }
  s.action = s.raw.cwiseMax(-1.0).cwiseMin(1.0);
  s.log_prob = gaussian_log_prob(s.raw, mean, net.log_std);
  return s;
}

/// Policy action for a raw observation, clamped to [-1, 1].
inline Eigen::VectorXd act(const ActorCritic& net, const Eigen::VectorXd& obs, bool stochastic, std::mt19937_64& rng) {
  if (obs.size() != net.observation_size())
    throw std::invalid_argument("act: observation has length " + std::to_string(obs.size()) + ", network expects " +
                                std::to_string(net.observation_size()));
  return sample_action(net, net.obs_norm.normalize(obs), stochastic, rng).action;
}

// ---------------------------------------------------------------------------
// Adam

struct Adam {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    if (m.size() != params.size()) {
      m = Eigen::VectorXd::Zero(params.size());
      v = Eigen::VectorXd::Zero(params.size());
    }
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

// ---------------------------------------------------------------------------
// PPO update

struct RolloutBuffer {
  Eigen::MatrixXd observations;  // normalized, columns = steps
  Eigen::MatrixXd actions;       // raw samples
  Eigen::VectorXd log_probs;
  Eigen::VectorXd rewards;
  Eigen::VectorXd values;
  std::vector<bool> dones;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;

  Eigen::Index size() const { return observations.cols(); }
};

/// Clipped surrogate min(rho A, clip(rho, 1 - eps, 1 + eps) A).
inline double clipped_surrogate(double ratio, double advantage, double clip) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage);
}

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;  // before clipping
  double max_ratio = 1.0;  // last pass
  double min_ratio = 1.0;
};

struct MinibatchResult {
  Eigen::VectorXd grad;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double max_ratio = 1.0;
  double min_ratio = 1.0;
};

/// Loss and gradient of one minibatch. Advantages are normalized inside the
/// minibatch when `normalize_advantages` is set.
inline MinibatchResult ppo_minibatch_gradient(const ActorCritic& net, const RolloutBuffer& buf,
                                              const std::vector<Eigen::Index>& idx, const PpoConfig& cfg,
                                              bool normalize_advantages = true) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  const auto act_dim = net.action_size();
  Eigen::MatrixXd obs(buf.observations.rows(), n);
  Eigen::MatrixXd acts(act_dim, n);
  Eigen::VectorXd old_lp(n), adv(n), ret(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    obs.col(k) = buf.observations.col(idx[k]);
    acts.col(k) = buf.actions.col(idx[k]);
    old_lp[k] = buf.log_probs[idx[k]];
    adv[k] = buf.advantages[idx[k]];
    ret[k] = buf.returns[idx[k]];
  }
  if (normalize_advantages && n > 1) {
    const double mu = adv.mean();
    const double sd = std::sqrt((adv.array() - mu).square().sum() / static_cast<double>(n - 1));
    adv = (adv.array() - mu) / (sd + 1e-8);
  }

  MinibatchResult r;
  r.grad = Eigen::VectorXd::Zero(net.parameter_count());
  Mlp::Cache actor_cache, critic_cache;
  const Eigen::MatrixXd mean = net.actor.forward_batch(obs, actor_cache);
  const Eigen::RowVectorXd value = net.critic.forward_batch(obs, critic_cache).row(0);
  const Eigen::ArrayXd inv_var = (-2.0 * net.log_std.array()).exp();

  Eigen::MatrixXd grad_mean(act_dim, n);
  Eigen::VectorXd grad_log_std = Eigen::VectorXd::Zero(act_dim);
  Eigen::MatrixXd grad_value(1, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  r.max_ratio = -std::numeric_limits<double>::infinity();
  r.min_ratio = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::ArrayXd diff = (acts.col(k) - mean.col(k)).array();
    const double lp = -0.5 * (diff.square() * inv_var).sum() - net.log_std.sum() -
                      0.5 * static_cast<double>(act_dim) * std::log(2.0 * std::numbers::pi);
    const double log_ratio = lp - old_lp[k];
    const double ratio = std::exp(log_ratio);
    r.max_ratio = std::max(r.max_ratio, ratio);
    r.min_ratio = std::min(r.min_ratio, ratio);
    const double surr = clipped_surrogate(ratio, adv[k], cfg.clip);
    r.policy_loss -= surr * inv_n;
    r.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;
    if (std::abs(ratio - 1.0) > cfg.clip) r.clip_fraction += inv_n;
    // d(surr)/d(lp) = ratio * A when the unclipped branch is active
    const bool unclipped = ratio * adv[k] <= std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv[k];
    const double dl_dlp = unclipped ? -ratio * adv[k] * inv_n : 0.0;
    grad_mean.col(k) = (dl_dlp * diff * inv_var).matrix();
    grad_log_std.array() += dl_dlp * (diff.square() * inv_var - 1.0);
    const double err = value[k] - ret[k];
    r.value_loss += err * err * inv_n;
    grad_value(0, k) = cfg.value_coef * 2.0 * err * inv_n;
  }
  // entropy of a diagonal Gaussian: sum(log_std) + const; only log_std moves it
  r.entropy = net.log_std.sum() + 0.5 * static_cast<double>(act_dim) * (1.0 + std::log(2.0 * std::numbers::pi));
  grad_log_std.array() -= cfg.entropy_coef;

  net.actor.backward(actor_cache, grad_mean, r.grad.data());
  net.critic.backward(critic_cache, grad_value, r.grad.data() + net.actor.parameter_count());
  r.grad.tail(act_dim) = grad_log_std;
  return r;
}

/// updates_per_epoch minibatch steps: the buffer is shuffled and split into
/// `minibatches` parts per pass.
inline UpdateStats ppo_update(ActorCritic& net, Adam& opt, const RolloutBuffer& buf, const PpoConfig& cfg,
                              std::mt19937_64& rng) {
  if (buf.size() == 0) throw std::invalid_argument("ppo_update: empty buffer");
  opt.lr = cfg.lr;
  std::vector<Eigen::Index> order(static_cast<size_t>(buf.size()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  const int passes = cfg.updates_per_epoch / cfg.minibatches;
  UpdateStats stats;
  int count = 0;
  for (int pass = 0; pass < passes; ++pass) {
    std::shuffle(order.begin(), order.end(), rng);
    stats.max_ratio = -std::numeric_limits<double>::infinity();
    stats.min_ratio = std::numeric_limits<double>::infinity();
    for (int mb = 0; mb < cfg.minibatches; ++mb) {
      const size_t lo = order.size() * static_cast<size_t>(mb) / static_cast<size_t>(cfg.minibatches);
      const size_t hi = order.size() * static_cast<size_t>(mb + 1) / static_cast<size_t>(cfg.minibatches);
      if (lo == hi) continue;
      const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                          order.begin() + static_cast<std::ptrdiff_t>(hi));
      MinibatchResult r = ppo_minibatch_gradient(net, buf, idx, cfg);
      const double norm = r.grad.norm();
      if (!std::isfinite(norm) || !std::isfinite(r.policy_loss) || !std::isfinite(r.value_loss)) {
        std::ostringstream msg;
        msg << "ppo_update: non-finite gradient (pass " << pass << ", minibatch " << mb << ", policy_loss "
            << r.policy_loss << ", value_loss " << r.value_loss << ", grad_norm " << norm << ")";
        throw std::runtime_error(msg.str());
      }
      if (norm > cfg.max_grad_norm) r.grad *= cfg.max_grad_norm / norm;
      Eigen::VectorXd p = net.params();
      opt.step(p, r.grad);
      net.set_params(p);
      stats.policy_loss += r.policy_loss;
      stats.value_loss += r.value_loss;
      stats.entropy += r.entropy;
      stats.clip_fraction += r.clip_fraction;
      stats.approx_kl += r.approx_kl;
      stats.grad_norm += norm;
      stats.max_ratio = std::max(stats.max_ratio, r.max_ratio);
      stats.min_ratio = std::min(stats.min_ratio, r.min_ratio);
      ++count;
    }
  }
  if (count > 0) {
    for (double* v : {&stats.policy_loss, &stats.value_loss, &stats.entropy, &stats.clip_fraction, &stats.approx_kl,
                      &stats.grad_norm})
      *v /= count;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Environments and the trainer

struct StepResult {
  Eigen::VectorXd observation;
  double reward = 0.0;
  bool done = false;        // episode over
  bool truncated = false;   // over because of the time limit: bootstrap from the value
};

class Env {
 public:
  virtual ~Env() = default;
  virtual int observation_size() const = 0;
  virtual int action_size() const = 0;
  virtual Eigen::VectorXd reset(std::mt19937_64& rng) = 0;
  virtual StepResult step(const Eigen::VectorXd& action) = 0;
  /// Task success of the finished episode, NaN when not defined.
  virtual double episode_success() const { return std::numeric_limits<double>::quiet_NaN(); }
};

/// Builds the environment of worker `index`; each worker owns one label.
using EnvFactory = std::function<std::unique_ptr<Env>(int index)>;

struct EpochStats {
  int epoch = 0;
  long steps = 0;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  double success = std::numeric_limits<double>::quiet_NaN();
  UpdateStats update;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed ^ (a * 0x9E3779B97F4A7C15ULL) ^ (b * 0xC2B2AE3D27D4EB4FULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace detail {

struct WorkerTrajectory {
  std::vector<Eigen::VectorXd> raw_obs;
  std::vector<Eigen::VectorXd> obs;
  std::vector<Eigen::VectorXd> actions;
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<bool> dones;
  std::vector<double> bootstrap;  // V of the final observation on truncation, else 0
  std::vector<double> successes;  // per finished episode
};

inline WorkerTrajectory collect(Env& env, const ActorCritic& net, const PpoConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WorkerTrajectory tr;
  for (int ep = 0; ep < cfg.episodes_per_worker; ++ep) {
    Eigen::VectorXd raw = env.reset(rng);
    for (;;) {
      const Eigen::VectorXd obs = net.obs_norm.normalize(raw);
      const ActionSample a = sample_action(net, obs, true, rng);
      StepResult res = env.step(a.action);
      tr.raw_obs.push_back(raw);
      tr.obs.push_back(obs);
      tr.actions.push_back(a.raw);
      tr.log_probs.push_back(a.log_prob);
      tr.rewards.push_back(res.reward);
      tr.values.push_back(net.value(obs));
      tr.dones.push_back(res.done);
      tr.bootstrap.push_back(res.done && res.truncated ? net.value(net.obs_norm.normalize(res.observation)) : 0.0);
      if (res.done) {
        tr.successes.push_back(env.episode_success());
        break;
      }
      raw = std::move(res.observation);
    }
  }
  return tr;
}

}  // namespace detail

struct TrainResult {
  ActorCritic net;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// PPO with one rollout worker per environment index in [0, workers).
/// Rollouts run concurrently; the optimizer runs single-threaded after the
/// epoch barrier. Results depend only on `seed`, never on the thread count.
inline TrainResult train(const EnvFactory& factory, int workers, const PpoConfig& cfg, std::uint64_t seed,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (workers < 1) throw std::invalid_argument("train: need at least one worker");
  std::vector<std::unique_ptr<Env>> envs;
  for (int w = 0; w < workers; ++w) envs.push_back(factory(w));
  const int obs_size = envs.front()->observation_size();
  const int act_size = envs.front()->action_size();
  for (const auto& e : envs)
    if (e->observation_size() != obs_size || e->action_size() != act_size)
      throw std::invalid_argument("train: workers disagree on observation or action size");

  std::mt19937_64 init_rng(mix_seed(seed, 1));
  TrainResult result{ActorCritic::create(obs_size, act_size, cfg, init_rng), {}};
  ActorCritic& net = result.net;
  Adam opt;
  opt.lr = cfg.lr;
  std::mt19937_64 update_rng(mix_seed(seed, 2));
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int threads = std::min(workers, cfg.threads > 0 ? cfg.threads : static_cast<int>(hw));
  RunningNorm return_norm(1);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<detail::WorkerTrajectory> trajs(static_cast<size_t>(workers));
    auto run = [&](int w) {
      trajs[w] = detail::collect(*envs[w], net, cfg, mix_seed(seed, 3 + static_cast<std::uint64_t>(epoch), w));
    };
    if (threads <= 1) {
      for (int w = 0; w < workers; ++w) run(w);
    } else {
      std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            for (int w = t; w < workers; w += threads) run(w);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
      for (auto& th : pool) th.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }

    // merge in worker order
    Eigen::Index total = 0;
    for (const auto& t : trajs) total += static_cast<Eigen::Index>(t.rewards.size());
    double scale = cfg.reward_scale;
    if (cfg.normalize_rewards) {
      Eigen::MatrixXd discounted(1, total);
      Eigen::Index k = 0;
      for (const auto& t : trajs) {
        double acc = 0.0;
        for (size_t i = 0; i < t.rewards.size(); ++i) {
          acc = acc * cfg.gamma + t.rewards[i];
          discounted(0, k++) = acc;
          if (t.dones[i]) acc = 0.0;
        }
      }
      return_norm.update(discounted);
      scale /= std::sqrt(return_norm.var[0] + 1e-8);
    }
    RolloutBuffer buf;
    buf.observations.resize(obs_size, total);
    buf.actions.resize(act_size, total);
    buf.log_probs.resize(total);
    buf.rewards.resize(total);
    buf.values.resize(total);
    buf.advantages.resize(total);
    buf.returns.resize(total);
    Eigen::MatrixXd raw(obs_size, total);
    EpochStats es;
    es.epoch = epoch;
    es.steps = static_cast<long>(total);
    double succ_sum = 0.0;
    int succ_n = 0;
    Eigen::Index off = 0;
    for (const auto& t : trajs) {
      const auto n = static_cast<Eigen::Index>(t.rewards.size());
      Eigen::VectorXd scaled(n), values(n);
      for (Eigen::Index k = 0; k < n; ++k) {
        raw.col(off + k) = t.raw_obs[k];
        buf.observations.col(off + k) = t.obs[k];
        buf.actions.col(off + k) = t.actions[k];
        buf.log_probs[off + k] = t.log_probs[k];
        buf.rewards[off + k] = t.rewards[k];
        values[k] = t.values[k];
        scaled[k] = t.rewards[k] * scale;
        buf.dones.push_back(t.dones[k]);
        // time-limit ends continue from the value of the final observation
        scaled[k] += cfg.gamma * t.bootstrap[k];
      }
      for (double s : t.successes) {
        if (std::isnan(s)) continue;
        succ_sum += s;
        ++succ_n;
      }
      const GaeResult g = gae_advantages(scaled, values, t.dones, cfg.gamma, cfg.gae_lambda);
      buf.values.segment(off, n) = values;
      buf.advantages.segment(off, n) = g.advantages;
      buf.returns.segment(off, n) = g.returns;
      off += n;
    }
    es.reward_mean = buf.rewards.mean();
    es.reward_std = std::sqrt((buf.rewards.array() - es.reward_mean).square().mean());
    if (succ_n > 0) es.success = succ_sum / succ_n;
    es.update = ppo_update(net, opt, buf, cfg, update_rng);
    net.obs_norm.update(raw);
    result.history.push_back(es);
    if (on_epoch) on_epoch(es);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

namespace detail {

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json mlp_to_json(const Mlp& m) {
  auto layers = nlohmann::json::array();
  for (size_t i = 0; i < m.weights.size(); ++i) {
    const auto& w = m.weights[i];
    layers.push_back({{"rows", w.rows()},
                      {"cols", w.cols()},
                      {"weights", std::vector<double>(w.data(), w.data() + w.size())},  // column-major
                      {"bias", vector_to_json(m.biases[i])}});
  }
  return layers;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp m;
  for (const auto& l : j) {
    const auto rows = l.at("rows").get<Eigen::Index>();
    const auto cols = l.at("cols").get<Eigen::Index>();
    const auto w = l.at("weights").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols) throw std::invalid_argument("checkpoint: weight size mismatch");
    m.weights.push_back(Eigen::Map<const Eigen::MatrixXd>(w.data(), rows, cols));
    m.biases.push_back(vector_from_json(l.at("bias")));
    if (m.biases.back().size() != rows) throw std::invalid_argument("checkpoint: bias size mismatch");
  }
  if (m.weights.empty()) throw std::invalid_argument("checkpoint: empty network");
  return m;
}

}  // namespace detail

inline nlohmann::json policy_to_json(const ActorCritic& net) {
  return {{"observation_size", net.observation_size()},
          {"action_size", net.action_size()},
          {"actor", detail::mlp_to_json(net.actor)},
          {"critic", detail::mlp_to_json(net.critic)},
          {"log_std", detail::vector_to_json(net.log_std)},
          {"obs_norm",
           {{"count", net.obs_norm.count},
            {"mean", detail::vector_to_json(net.obs_norm.mean)},
            {"var", detail::vector_to_json(net.obs_norm.var)},
            {"clip", net.obs_norm.clip}}}};
}

inline ActorCritic policy_from_json(const nlohmann::json& j) {
  ActorCritic net;
  net.actor = detail::mlp_from_json(j.at("actor"));
  net.critic = detail::mlp_from_json(j.at("critic"));
  net.log_std = detail::vector_from_json(j.at("log_std"));
  const auto& n = j.at("obs_norm");
  net.obs_norm.count = n.at("count").get<double>();
  net.obs_norm.mean = detail::vector_from_json(n.at("mean"));
  net.obs_norm.var = detail::vector_from_json(n.at("var"));
  net.obs_norm.clip = n.value("clip", 10.0);
  if (net.log_std.size() != net.action_size() || net.obs_norm.mean.size() != net.observation_size() ||
      net.obs_norm.var.size() != net.observation_size() || net.critic.input_size() != net.observation_size())
    throw std::invalid_argument("checkpoint: inconsistent network shapes");
  return net;
}

/// {"format": "dgrasp-policy", "meta": ..., "policy": ...}; `meta` carries the
/// resolved config and version.
inline std::string checkpoint_string(const ActorCritic& net, const nlohmann::json& meta) {
  nlohmann::json j{{"format", "dgrasp-policy"}, {"format_version", 1}, {"meta", meta}, {"policy", policy_to_json(net)}};
  return j.dump() + "\n";
}

inline void save_checkpoint(const std::string& path, const ActorCritic& net, const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out << checkpoint_string(net, meta);
}

struct Checkpoint {
  ActorCritic net;
  nlohmann::json meta;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  if (j.value("format", "") != "dgrasp-policy") throw std::invalid_argument(path + ": not a policy checkpoint");
  return {policy_from_json(j.at("policy")), j.value("meta", nlohmann::json::object())};
}

inline std::string training_log_header() {
  return "epoch,steps,reward_mean,reward_std,success,policy_loss,value_loss,entropy,clip_fraction,approx_kl,grad_norm";
}

inline std::string training_log_row(const EpochStats& e) {
  std::ostringstream os;
  os << std::setprecision(9) << e.epoch << ',' << e.steps << ',' << e.reward_mean << ',' << e.reward_std << ',';
  if (std::isnan(e.success))
    os << "nan";
  else
    os << e.success;
  os << ',' << e.update.policy_loss << ',' << e.update.value_loss << ',' << e.update.entropy << ','
     << e.update.clip_fraction << ',' << e.update.approx_kl << ',' << e.update.grad_norm;
  return os.str();
}

}  // namespace dgrasp
