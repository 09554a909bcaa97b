#pragma once

// Losses, exact reverse-mode gradients, Adam, and the shallow-to-deep
// training loop.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ifno/errors.hpp"
#include "ifno/grid.hpp"
#include "ifno/model.hpp"
#include "ifno/rng.hpp"
#include "ifno/spectral.hpp"

namespace ifno {

// ---------------------------------------------------------------------------
// Losses through the public forward path.

inline double data_loss(const IfnoParams& theta, std::span<const Sample> samples) {
  if (samples.empty()) throw ConfigError("data_loss: no samples");
  const SpectralBasis basis(theta.sub_x.spectral_weight.modes);
  double total = 0.0;
  for (const Sample& s : samples) total += squared_l2_distance(forward(s.boundary, theta, basis), s.field);
  return total;
}

inline double physics_loss(const IfnoParams& theta) {
  const BoundaryLoading zero(theta.config.nx, theta.config.ny, theta.config.extent);
  return squared_l2_norm(forward(zero, theta));
}

inline double hybrid_loss(const IfnoParams& theta, std::span<const Sample> samples, double gamma) {
  if (gamma < 0.0) throw ConfigError("hybrid_loss: gamma must be >= 0");
  const double data = data_loss(theta, samples);
  if (gamma == 0.0) return data;
  return data + gamma * physics_loss(theta);
}

// ---------------------------------------------------------------------------
// Reverse-mode gradient.

/// A sample converted to the matrices the gradient path works on.
struct PreparedSample {
  RowMatrix features;       // N x 4
  Eigen::VectorXd target_x; // N
  Eigen::VectorXd target_y; // N
};

inline PreparedSample prepare(const Sample& s) {
  PreparedSample p;
  p.features = to_matrix(build_input_features(s.boundary, s.boundary.nx(), s.boundary.ny()));
  const RowMatrix t = to_matrix(s.field);
  p.target_x = t.col(0);
  p.target_y = t.col(1);
  return p;
}

inline PreparedSample prepare_zero(const ModelConfig& c) {
  PreparedSample p;
  p.features = to_matrix(build_input_features(BoundaryLoading(c.nx, c.ny, c.extent), c.nx, c.ny));
  p.target_x = Eigen::VectorXd::Zero(p.features.rows());
  p.target_y = p.target_x;
  return p;
}

inline Eigen::VectorXd quadrature_vector(const ModelConfig& c) {
  const auto w = trapezoid_weights(c.nx, c.ny, c.extent);
  return Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
}

/// scale * sum_n w_n (u_n - target_n)^2 for one sub-network, accumulating
/// its gradient (times scale) into `grad`. Gradients of the shared layer
/// weights accumulate over every layer application.
inline double subnet_loss_and_grad(const RowMatrix& features, const SubNetParams& p, const ModelConfig& c,
                                   const SpectralBasis& basis, const Eigen::VectorXd& target,
                                   const Eigen::VectorXd& quad, double scale, SubNetParams& grad) {
  const int depth = c.depth;
  const double dt = c.horizon / depth;
  const Activation act = c.activation;
  const std::vector<double> inv_scales = basis.inverse_scales();
  const std::vector<double> unit_scales = basis.unit_scales();
  const int k2 = basis.modes().k2();
  const int d = p.spectral_weight.dim;

  std::vector<RowMatrix> hidden(static_cast<std::size_t>(depth) + 1);
  std::vector<RowMatrix> pre(static_cast<std::size_t>(depth));
  std::vector<ModeMatrix> coeffs(static_cast<std::size_t>(depth));
  hidden[0] = lift(features, p.lift_weight, p.lift_bias);
  for (int l = 0; l < depth; ++l) {
    coeffs[l] = basis.analyze(hidden[l]);
    RowMatrix s = hidden[l] * p.pointwise_weight.transpose();
    s += basis.synthesize(mix_modes(p.spectral_weight, coeffs[l]), inv_scales);
    s.rowwise() += p.layer_bias.transpose();
    hidden[l + 1] = hidden[l] + dt * activate(act, s);
    pre[l] = std::move(s);
  }
  RowMatrix a = hidden[depth] * p.proj1_weight.transpose();
  a.rowwise() += p.proj1_bias.transpose();
  const RowMatrix z = activate(act, a);
  Eigen::VectorXd u = z * p.proj2_weight.row(0).transpose();
  u.array() += p.proj2_bias[0];

  const Eigen::VectorXd r = u - target;
  const double loss = scale * (quad.array() * r.array() * r.array()).sum();
  const Eigen::VectorXd gu = (2.0 * scale) * (quad.array() * r.array()).matrix();

  grad.proj2_weight.row(0) += gu.transpose() * z;
  grad.proj2_bias[0] += gu.sum();
  const RowMatrix ga = (gu * p.proj2_weight.row(0)).cwiseProduct(activate_derivative(act, a));
  grad.proj1_weight += ga.transpose() * hidden[depth];
  grad.proj1_bias += ga.colwise().sum().transpose();
  RowMatrix gh = ga * p.proj1_weight;

  for (int l = depth - 1; l >= 0; --l) {
    const RowMatrix gs = dt * gh.cwiseProduct(activate_derivative(act, pre[l]));
    grad.pointwise_weight += gs.transpose() * hidden[l];
    grad.layer_bias += gs.colwise().sum().transpose();

    // Adjoint of the inverse transform: (w / N) times the forward transform.
    ModeMatrix gz = basis.analyze(gs);
    for (Eigen::Index m = 0; m < gz.re.rows(); ++m) {
      const double w = inv_scales[static_cast<std::size_t>(m % k2)];
      gz.re.row(m) *= w;
      gz.im.row(m) *= w;
    }
    // Z = R H per mode: dR += G_Z conj(H)^T, G_H = R^H G_Z.
    ModeMatrix gcoef{RowMatrix::Zero(gz.re.rows(), d), RowMatrix::Zero(gz.re.rows(), d)};
    const ModeMatrix& hc = coeffs[l];
    for (Eigen::Index m = 0; m < gz.re.rows(); ++m)
      for (int o = 0; o < d; ++o) {
        const double gr = gz.re(m, o), gi = gz.im(m, o);
        cplx* grow = &grad.spectral_weight.values[(static_cast<std::size_t>(m) * d + o) * d];
        const cplx* rrow = &p.spectral_weight.values[(static_cast<std::size_t>(m) * d + o) * d];
        for (int in = 0; in < d; ++in) {
          const double hr = hc.re(m, in), hi = hc.im(m, in);
          grow[in] += cplx(gr * hr + gi * hi, gi * hr - gr * hi);
          const double rr = rrow[in].real(), ri = rrow[in].imag();
          gcoef.re(m, in) += rr * gr + ri * gi;
          gcoef.im(m, in) += rr * gi - ri * gr;
        }
      }
    gh += gs * p.pointwise_weight;
    gh += basis.synthesize(gcoef, unit_scales);
  }
  grad.lift_weight += gh.transpose() * features;
  grad.lift_bias += gh.colwise().sum().transpose();
  return loss;
}

inline Gradient zero_gradient(const IfnoParams& theta) {
  Gradient g = IfnoParams::zeros(theta.config);
  g.seed = theta.seed;
  return g;
}

/// acc += alpha * g, block by block.
inline void accumulate(Gradient& acc, const Gradient& g, double alpha = 1.0) {
  std::vector<std::span<double>> dst;
  for_each_block(acc, [&](const std::string&, std::span<double> s) { dst.push_back(s); });
  std::size_t k = 0;
  for_each_block(g, [&](const std::string&, std::span<const double> s) {
    auto out = dst[k++];
    for (std::size_t i = 0; i < s.size(); ++i) out[i] += alpha * s[i];
  });
}

/// Squared-L2 loss of both sub-networks against one target (scaled),
/// accumulating the gradient.
inline double sample_loss_and_grad(const PreparedSample& s, const IfnoParams& theta, const SpectralBasis& basis,
                                   const Eigen::VectorXd& quad, double scale, Gradient& grad) {
  return subnet_loss_and_grad(s.features, theta.sub_x, theta.config, basis, s.target_x, quad, scale, grad.sub_x) +
         subnet_loss_and_grad(s.features, theta.sub_y, theta.config, basis, s.target_y, quad, scale, grad.sub_y);
}

struct LossAndGradient {
  double data_loss = 0.0;
  double physics_loss = 0.0;
  double total = 0.0;
  Gradient gradient;
};

/// Samples are reduced in fixed-size chunks summed in index order, so the
/// result does not depend on the thread count.
inline constexpr std::size_t kReductionChunk = 4;

inline LossAndGradient loss_and_gradient(const IfnoParams& theta, std::span<const PreparedSample> samples,
                                         const PreparedSample* zero_sample, double gamma,
                                         const SpectralBasis& basis, const Eigen::VectorXd& quad,
                                         int threads = 1) {
  LossAndGradient out;
  out.gradient = zero_gradient(theta);
  const std::size_t chunks = (samples.size() + kReductionChunk - 1) / kReductionChunk;
  auto run_chunk = [&](std::size_t c, Gradient& g) {
    double loss = 0.0;
    const std::size_t end = std::min(samples.size(), (c + 1) * kReductionChunk);
    for (std::size_t i = c * kReductionChunk; i < end; ++i)
      loss += sample_loss_and_grad(samples[i], theta, basis, quad, 1.0, g);
    return loss;
  };
  if (threads <= 1 || chunks <= 1) {
    Gradient g = zero_gradient(theta);
    for (std::size_t c = 0; c < chunks; ++c) {
      if (c > 0) g = zero_gradient(theta);
      out.data_loss += run_chunk(c, g);
      accumulate(out.gradient, g);
    }
  } else {
    std::vector<Gradient> partial(chunks);
    std::vector<double> losses(chunks, 0.0);
    std::vector<std::thread> pool;
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), chunks);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < chunks; c += workers) {
          partial[c] = zero_gradient(theta);
          losses[c] = run_chunk(c, partial[c]);
        }
      });
    for (auto& t : pool) t.join();
    for (std::size_t c = 0; c < chunks; ++c) {
      out.data_loss += losses[c];
      accumulate(out.gradient, partial[c]);
    }
  }
  out.total = out.data_loss;
  if (gamma > 0.0 && zero_sample != nullptr) {
    Gradient g = zero_gradient(theta);
    const double phys_scaled = sample_loss_and_grad(*zero_sample, theta, basis, quad, gamma, g);
    out.physics_loss = phys_scaled / gamma;
    out.total += phys_scaled;
    accumulate(out.gradient, g);
  }
  return out;
}

/// Exact gradient of data_loss + gamma * physics_loss.
inline LossAndGradient grad(const IfnoParams& theta, std::span<const Sample> samples, double gamma,
                            int threads = 1) {
  if (gamma < 0.0) throw ConfigError("grad: gamma must be >= 0");
  std::vector<PreparedSample> prepared;
  prepared.reserve(samples.size());
  for (const auto& s : samples) {
    check_grid(s.boundary, theta.config);
    prepared.push_back(prepare(s));
  }
  const PreparedSample zero = prepare_zero(theta.config);
  const SpectralBasis basis(theta.sub_x.spectral_weight.modes);
  LossAndGradient r = loss_and_gradient(theta, prepared, &zero, gamma, basis, quadrature_vector(theta.config), threads);
  if (gamma == 0.0) {
    // physics loss is still reported for monitoring
    Gradient scratch = zero_gradient(theta);
    r.physics_loss = sample_loss_and_grad(zero, theta, basis, quadrature_vector(theta.config), 1.0, scratch);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamState {
  std::vector<double> first;
  std::vector<double> second;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update applied to every parameter block.
inline void adam_step(IfnoParams& theta, const Gradient& g, AdamState& state, double lr) {
  std::vector<double> x = flatten(theta);
  const std::vector<double> gv = flatten(g);
  if (gv.size() != x.size()) throw ConfigError("adam_step: gradient does not match parameters");
  if (state.first.empty()) {
    state.first.assign(x.size(), 0.0);
    state.second.assign(x.size(), 0.0);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < x.size(); ++i) {
    state.first[i] = state.beta1 * state.first[i] + (1.0 - state.beta1) * gv[i];
    state.second[i] = state.beta2 * state.second[i] + (1.0 - state.beta2) * gv[i] * gv[i];
    const double mhat = state.first[i] / c1;
    const double vhat = state.second[i] / c2;
    x[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
  unflatten(x, theta);
}

// ---------------------------------------------------------------------------
// Training loop.

enum class DecayMode {
  during,  // halve every `decay_every` epochs from the start of each depth stage
  after,   // hold lr0 for epochs_per_depth epochs, then run post_decay_epochs with decay
};

struct TrainConfig {
  int epochs_per_depth = 1000;
  double learning_rate = 3e-3;
  double decay_ratio = 0.5;
  int decay_every = 100;
  DecayMode decay_mode = DecayMode::during;
  int post_decay_epochs = 0;
  std::vector<int> depth_schedule{3, 6, 12};
  double gamma = 0.0;
  int batch_size = 0;  // 0: full batch
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    require(epochs_per_depth >= 1, "train: epochs_per_depth must be >= 1");
    require(learning_rate > 0.0, "train: learning_rate must be > 0");
    require(decay_ratio > 0.0 && decay_ratio <= 1.0, "train: decay_ratio must be in (0, 1]");
    require(decay_every >= 1, "train: decay_every must be >= 1");
    require(post_decay_epochs >= 0, "train: post_decay_epochs must be >= 0");
    require(!depth_schedule.empty(), "train: depth_schedule must be nonempty");
    for (std::size_t i = 0; i < depth_schedule.size(); ++i) {
      require(depth_schedule[i] >= 1, "train: depths must be >= 1");
      if (i > 0) require(depth_schedule[i] > depth_schedule[i - 1], "train: depth_schedule must be increasing");
    }
    require(gamma >= 0.0, "train: gamma must be >= 0");
    require(batch_size >= 0, "train: batch_size must be >= 0");
    require(threads >= 1, "train: threads must be >= 1");
  }

  int epochs_per_stage() const {
    return decay_mode == DecayMode::during ? epochs_per_depth : epochs_per_depth + post_decay_epochs;
  }
};

/// Learning rate for the given epoch counted from the start of a depth stage.
inline double learning_rate_at(const TrainConfig& c, int epoch_in_stage) {
  int halvings = 0;
  if (c.decay_mode == DecayMode::during) {
    halvings = epoch_in_stage / c.decay_every;
  } else if (epoch_in_stage >= c.epochs_per_depth) {
    halvings = (epoch_in_stage - c.epochs_per_depth) / c.decay_every + 1;
  }
  return c.learning_rate * std::pow(c.decay_ratio, halvings);
}

struct EpochRecord {
  int epoch = 0;  // global epoch counter across stages
  int depth = 0;
  double lr = 0.0;
  double data_loss = 0.0;
  double physics_loss = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double final_train_error = std::numeric_limits<double>::quiet_NaN();
  double final_test_error = std::numeric_limits<double>::quiet_NaN();
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;

  /// Everything except wall-clock time.
  bool same_trajectory(const TrainHistory& o) const {
    if (epochs.size() != o.epochs.size() || best_epoch != o.best_epoch || best_loss != o.best_loss) return false;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      const auto& a = epochs[i];
      const auto& b = o.epochs[i];
      if (a.epoch != b.epoch || a.depth != b.depth || a.lr != b.lr || a.data_loss != b.data_loss ||
          a.physics_loss != b.physics_loss)
        return false;
    }
    return true;
  }
};

inline std::string history_csv(const TrainHistory& h) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,lr,data_loss,physics_loss,seconds,depth\n";
  for (const auto& e : h.epochs)
    os << e.epoch << ',' << e.lr << ',' << e.data_loss << ',' << e.physics_loss << ',' << e.seconds << ','
       << e.depth << '\n';
  return os.str();
}

struct TrainResult {
  IfnoParams params;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Shallow-to-deep training: for each depth in the schedule run the stage's
/// Adam epochs with a fresh optimizer and the stepped learning rate, then
/// continue at the next depth from the trained weights. Returns the
/// lowest-loss checkpoint of the final stage.
///
/// With mini-batches each epoch's loss is the sum of the per-batch losses
/// observed during the epoch and scores the end-of-epoch weights; in
/// full-batch mode it is the exact loss of the weights before the step.
inline TrainResult train(std::span<const Sample> train_set, const ModelConfig& model, const TrainConfig& config,
                         const IfnoParams* initial = nullptr, const EpochCallback& on_epoch = {}) {
  config.validate();
  if (train_set.empty()) throw ConfigError("train: training split is empty");
  ModelConfig mc = model;
  mc.depth = config.depth_schedule.front();
  mc.validate();

  std::vector<PreparedSample> prepared;
  prepared.reserve(train_set.size());
  for (const auto& s : train_set) {
    check_grid(s.boundary, mc);
    prepared.push_back(prepare(s));
  }
  const PreparedSample zero = prepare_zero(mc);
  const Eigen::VectorXd quad = quadrature_vector(mc);

  IfnoParams theta = initial != nullptr ? *initial : init_params(mc, config.seed);
  if (initial != nullptr) {
    require(initial->config.nx == mc.nx && initial->config.ny == mc.ny && initial->config.width == mc.width,
            "train: initial parameters do not match the model configuration");
    theta.config.depth = mc.depth;
  }
  const SpectralBasis basis(theta.sub_x.spectral_weight.modes);

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = prepared.size();
  const std::size_t batch = config.batch_size == 0 ? n : std::min<std::size_t>(n, static_cast<std::size_t>(config.batch_size));
  const bool full_batch = batch == n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  int global_epoch = 0;

  for (std::size_t stage = 0; stage < config.depth_schedule.size(); ++stage) {
    const int depth = config.depth_schedule[stage];
    if (stage > 0) theta = shallow_to_deep(theta, depth);
    const bool final_stage = stage + 1 == config.depth_schedule.size();
    AdamState adam;
    Rng shuffle_rng(config.seed * 0x9E3779B97F4A7C15ull + stage + 1);
    std::vector<PreparedSample> batch_buf;
    for (int e = 0; e < config.epochs_per_stage(); ++e, ++global_epoch) {
      const double lr = learning_rate_at(config, e);
      if (!full_batch) shuffle_rng.shuffle(order);
      double epoch_data = 0.0, epoch_phys = 0.0;
      int batches = 0;
      for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t end = std::min(n, start + batch);
        std::span<const PreparedSample> view;
        if (full_batch) {
          view = prepared;
        } else {
          batch_buf.clear();
          for (std::size_t k = start; k < end; ++k) batch_buf.push_back(prepared[order[k]]);
          view = batch_buf;
        }
        LossAndGradient lg = loss_and_gradient(theta, view, &zero, config.gamma, basis, quad, config.threads);
        if (config.gamma == 0.0) {
          Gradient scratch = zero_gradient(theta);
          if (full_batch || start == 0)
            lg.physics_loss = sample_loss_and_grad(zero, theta, basis, quad, 1.0, scratch);
        }
        if (!std::isfinite(lg.total) || !std::isfinite(lg.physics_loss)) {
          std::ostringstream os;
          os << "train: non-finite loss at depth " << depth << ", epoch " << e << " (data " << lg.data_loss
             << ", physics " << lg.physics_loss << ", lr " << lr << ")";
          throw NumericalError(os.str());
        }
        if (full_batch && final_stage) {
          const double score = lg.data_loss + config.gamma * lg.physics_loss;
          if (score < result.history.best_loss) {
            result.history.best_loss = score;
            result.history.best_epoch = global_epoch;
            result.params = theta;
          }
        }
        epoch_data += lg.data_loss;
        epoch_phys += lg.physics_loss;
        ++batches;
        adam_step(theta, lg.gradient, adam, lr);
      }
      EpochRecord rec;
      rec.epoch = global_epoch;
      rec.depth = depth;
      rec.lr = lr;
      rec.data_loss = epoch_data;
      rec.physics_loss = config.gamma == 0.0 && !full_batch ? epoch_phys : epoch_phys / batches;
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!full_batch && final_stage) {
        const double score = rec.data_loss + config.gamma * rec.physics_loss;
        if (score < result.history.best_loss) {
          result.history.best_loss = score;
          result.history.best_epoch = global_epoch;
          result.params = theta;
        }
      }
      result.history.epochs.push_back(rec);
      if (on_epoch) on_epoch(rec);
    }
  }
  if (result.history.best_epoch < 0) result.params = theta;
  return result;
}

// ---------------------------------------------------------------------------
// Finite-difference verification.

/// Extended-precision reference evaluation of the hybrid loss, written with
/// direct per-mode Fourier sums. Slow; used as the finite-difference oracle so
/// that roundoff in the differenced loss stays far below the gradient scale.
inline long double reference_hybrid_loss(const IfnoParams& theta, std::span<const Sample> samples, double gamma) {
  using LD = long double;
  const ModelConfig& c = theta.config;
  const int nx = c.nx, ny = c.ny, n = nx * ny, d = c.width, dq = c.proj_width;
  const LD two_pi = 2.0L * std::numbers::pi_v<LD>;
  const Activation act_kind = c.activation;
  auto act = [&](LD x) -> LD {
    if (act_kind == Activation::relu) return x > 0 ? x : 0;
    const LD t = static_cast<LD>(kSoftplusSharpness) * x;
    return (t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t))) / static_cast<LD>(kSoftplusSharpness);
  };
  const auto quad = trapezoid_weights(nx, ny, c.extent);

  auto subnet = [&](const SubNetParams& p, const GridField& f) {
    const ModeSet& ms = p.spectral_weight.modes;
    std::vector<LD> h(static_cast<std::size_t>(n) * d);
    for (int k = 0; k < n; ++k)
      for (int o = 0; o < d; ++o) {
        LD s = p.lift_bias(o);
        for (int q = 0; q < 4; ++q) s += static_cast<LD>(p.lift_weight(o, q)) * f.values()[k * 4 + q];
        h[k * d + o] = s;
      }
    const LD dt = static_cast<LD>(c.horizon) / c.depth;
    std::vector<std::complex<LD>> phase(static_cast<std::size_t>(ms.size()) * n);
    for (int a = 0; a < ms.k1(); ++a)
      for (int b = 0; b < ms.k2(); ++b)
        for (int i = 0; i < nx; ++i)
          for (int j = 0; j < ny; ++j) {
            const LD t = two_pi * (static_cast<LD>(ms.freq_x(a)) * i / nx + static_cast<LD>(b) * j / ny);
            phase[static_cast<std::size_t>(a * ms.k2() + b) * n + i * ny + j] = {std::cos(t), std::sin(t)};
          }
    for (int l = 0; l < c.depth; ++l) {
      std::vector<LD> pre(h.size());
      for (int k = 0; k < n; ++k)
        for (int o = 0; o < d; ++o) {
          LD s = p.layer_bias(o);
          for (int q = 0; q < d; ++q) s += static_cast<LD>(p.pointwise_weight(o, q)) * h[k * d + q];
          pre[k * d + o] = s;
        }
      for (int m = 0; m < ms.size(); ++m) {
        const std::complex<LD>* e = &phase[static_cast<std::size_t>(m) * n];
        std::vector<std::complex<LD>> hm(d);
        for (int k = 0; k < n; ++k)
          for (int q = 0; q < d; ++q) hm[q] += h[k * d + q] * std::conj(e[k]);
        const LD w = static_cast<LD>(ms.weight_y(m % ms.k2())) / n;
        for (int o = 0; o < d; ++o) {
          std::complex<LD> z(0, 0);
          for (int q = 0; q < d; ++q) {
            const cplx r = p.spectral_weight(m, o, q);
            z += std::complex<LD>(r.real(), r.imag()) * hm[q];
          }
          for (int k = 0; k < n; ++k) pre[k * d + o] += w * (z * e[k]).real();
        }
      }
      for (std::size_t k = 0; k < h.size(); ++k) h[k] += dt * act(pre[k]);
    }
    std::vector<LD> u(n);
    for (int k = 0; k < n; ++k) {
      LD s = p.proj2_bias(0);
      for (int r = 0; r < dq; ++r) {
        LD a = p.proj1_bias(r);
        for (int q = 0; q < d; ++q) a += static_cast<LD>(p.proj1_weight(r, q)) * h[k * d + q];
        s += static_cast<LD>(p.proj2_weight(0, r)) * act(a);
      }
      u[k] = s;
    }
    return u;
  };
  auto misfit = [&](const BoundaryLoading& b, const GridField* truth) {
    const GridField f = build_input_features(b, nx, ny);
    const auto ux = subnet(theta.sub_x, f), uy = subnet(theta.sub_y, f);
    LD s = 0;
    for (int k = 0; k < n; ++k) {
      const LD ex = ux[k] - (truth ? truth->values()[2 * k] : 0.0);
      const LD ey = uy[k] - (truth ? truth->values()[2 * k + 1] : 0.0);
      s += static_cast<LD>(quad[k]) * (ex * ex + ey * ey);
    }
    return s;
  };
  LD total = 0;
  for (const Sample& smp : samples) {
    check_grid(smp.boundary, c);
    total += misfit(smp.boundary, &smp.field);
  }
  if (gamma > 0.0) total += static_cast<LD>(gamma) * misfit(BoundaryLoading(nx, ny, c.extent), nullptr);
  return total;
}

struct BlockCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel = 0.0;
  double mean_rel = 0.0;
};

struct GradientCheckReport {
  std::vector<BlockCheck> blocks;

  double max_rel() const {
    double m = 0.0;
    for (const auto& b : blocks) m = std::max(m, b.max_rel);
    return m;
  }
};

/// Scale below which gradient entries are compared in absolute terms, as a
/// fraction of 1 + |loss|. Entries this small are dominated by the roundoff
/// of the differenced loss even in extended precision.
inline constexpr double kGradientCheckFloor = 1e-9;

/// Central differences of `loss` on up to `coords_per_block` randomly chosen
/// coordinates of every block, compared with `analytic`. The loss may return
/// any floating type; differences are formed in long double.
/// Relative error per coordinate: |fd - g| / max(|fd|, |g|, floor) with
/// floor = kGradientCheckFloor * (1 + |loss(theta)|).
template <class LossFn>
GradientCheckReport fd_gradient_check(const IfnoParams& theta, const Gradient& analytic, LossFn&& loss,
                                      double eps, std::size_t coords_per_block, std::uint64_t seed) {
  GradientCheckReport report;
  Rng rng(seed);
  IfnoParams probe = theta;
  const long double base = loss(theta);
  const long double floor = kGradientCheckFloor * (1.0L + std::abs(base));
  std::vector<std::pair<std::string, std::span<double>>> probe_blocks;
  for_each_block(probe, [&](const std::string& name, std::span<double> s) { probe_blocks.emplace_back(name, s); });
  std::vector<std::span<const double>> grad_blocks;
  for_each_block(analytic, [&](const std::string&, std::span<const double> s) { grad_blocks.push_back(s); });

  for (std::size_t b = 0; b < probe_blocks.size(); ++b) {
    auto& [name, block] = probe_blocks[b];
    std::vector<std::size_t> idx(block.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    idx.resize(std::min(coords_per_block, idx.size()));
    BlockCheck bc{name, idx.size(), 0.0, 0.0};
    for (std::size_t k : idx) {
      const double orig = block[k];
      block[k] = orig + eps;
      const double step_up = block[k] - orig;
      const long double lp = loss(probe);
      block[k] = orig - eps;
      const double step_down = orig - block[k];
      const long double lm = loss(probe);
      block[k] = orig;
      const long double fd = (lp - lm) / (static_cast<long double>(step_up) + step_down);
      const long double g = grad_blocks[b][k];
      const long double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), floor});
      bc.max_rel = std::max(bc.max_rel, static_cast<double>(rel));
      bc.mean_rel += static_cast<double>(rel);
    }
    if (bc.checked > 0) bc.mean_rel /= static_cast<double>(bc.checked);
    report.blocks.push_back(bc);
  }
  return report;
}

/// Gradient check of the hybrid loss against the extended-precision
/// reference; requires the smooth activation since central differences are
/// ill-posed at ReLU kinks.
inline GradientCheckReport fd_gradient_check(const IfnoParams& theta, std::span<const Sample> samples, double gamma,
                                             double eps = 1e-6, std::size_t coords_per_block = 16,
                                             std::uint64_t seed = 7) {
  if (theta.config.activation != Activation::softplus)
    throw ConfigError("fd_gradient_check: enable the smooth (softplus) activation first");
  const LossAndGradient lg = grad(theta, samples, gamma);
  return fd_gradient_check(
      theta, lg.gradient, [&](const IfnoParams& p) { return reference_hybrid_loss(p, samples, gamma); }, eps,
      coords_per_block, seed);
}

}  // namespace ifno
