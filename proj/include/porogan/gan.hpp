#pragma once

// Volumetric DCGAN: network construction, adversarial training and sampling.

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "porogan/adam.hpp"
#include "porogan/error.hpp"
#include "porogan/layers.hpp"
#include "porogan/loss.hpp"
#include "porogan/voxel.hpp"

namespace porogan {

struct Stabilization {
  enum class Kind { none, white_noise, label_smoothing };
  Kind kind = Kind::none;
  double value = 0.0;  // sigma for white noise, epsilon for label smoothing

  static Stabilization none() { return {}; }
  static Stabilization white_noise(double sigma) { return {Kind::white_noise, sigma}; }
  static Stabilization label_smoothing(double eps) { return {Kind::label_smoothing, eps}; }

  double noise_sigma() const { return kind == Kind::white_noise ? value : 0.0; }
  /// Target for real samples in the discriminator loss (one-sided smoothing).
  double real_target() const { return kind == Kind::label_smoothing ? 1.0 - value : 1.0; }
  double fake_target() const { return 0.0; }

  bool operator==(const Stabilization&) const = default;
};

inline std::string to_string(const Stabilization& s) {
  char buf[32];
  const auto value = [&] { return std::string(buf, std::to_chars(buf, buf + sizeof buf, s.value).ptr); };
  switch (s.kind) {
    case Stabilization::Kind::none: return "none";
    case Stabilization::Kind::white_noise: return "white-noise:" + value();
    case Stabilization::Kind::label_smoothing: return "label-smoothing:" + value();
  }
  return "none";
}

/// Parses "none", "white-noise:<sigma>" or "label-smoothing:<eps>".
inline Stabilization parse_stabilization(const std::string& text) {
  if (text == "none" || text.empty()) return Stabilization::none();
  const auto colon = text.find(':');
  require(colon != std::string::npos, Errc::config, "stabilization must be none, white-noise:<s> or label-smoothing:<e>");
  const std::string kind = text.substr(0, colon);
  const double v = detail::parse_double("stabilization", text.substr(colon + 1));
  if (kind == "white-noise" || kind == "white_noise") return Stabilization::white_noise(v);
  if (kind == "label-smoothing" || kind == "label_smoothing") return Stabilization::label_smoothing(v);
  fail(Errc::config, "unknown stabilization '" + kind + "'");
}

/// How the discriminator's final scalar becomes a probability.
/// tanh_affine: D = (tanh(a) + 1) / 2, which equals sigmoid(2a).
enum class DiscriminatorHead { tanh_affine, sigmoid };

inline const char* head_name(DiscriminatorHead h) { return h == DiscriminatorHead::sigmoid ? "sigmoid" : "tanh"; }

inline DiscriminatorHead parse_head(const std::string& s) {
  if (s == "tanh" || s == "tanh_affine") return DiscriminatorHead::tanh_affine;
  if (s == "sigmoid") return DiscriminatorHead::sigmoid;
  fail(Errc::config, "unknown discriminator head '" + s + "'");
}

struct GanConfig {
  std::size_t training_size = 64;
  std::size_t nz = 100;
  std::size_t ng = 64;
  std::size_t nd = 16;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  Stabilization stabilization;
  std::size_t batch_size = 32;
  std::size_t d_steps_per_g_step = 1;
  std::uint64_t seed = 0;
  DiscriminatorHead head = DiscriminatorHead::tanh_affine;
  double leaky_slope = 0.2;
  double init_std = 0.02;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  /// Number of stride-2 stages L with training_size = 4 * 2^L.
  std::size_t levels() const {
    validate();
    return static_cast<std::size_t>(std::countr_zero(training_size / 4));
  }

  void validate() const {
    const bool pow2 = training_size >= 16 && training_size % 4 == 0 && std::has_single_bit(training_size / 4);
    require(pow2, Errc::config,
            "training_size must be 4 * 2^L with L >= 2, got " + std::to_string(training_size));
    require(nz >= 1 && ng >= 1 && nd >= 1, Errc::config, "nz, ng and nd must be >= 1");
    require(batch_size >= 1, Errc::config, "batch_size must be >= 1");
    require(d_steps_per_g_step >= 1, Errc::config, "d_steps_per_g_step must be >= 1");
    require(learning_rate > 0.0, Errc::config, "learning rate must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, Errc::config, "Adam betas must be in [0,1)");
    if (stabilization.kind == Stabilization::Kind::white_noise)
      require(stabilization.value >= 0.0, Errc::config, "noise sigma must be >= 0");
    if (stabilization.kind == Stabilization::Kind::label_smoothing)
      require(stabilization.value >= 0.0 && stabilization.value < 1.0, Errc::config, "label smoothing must be in [0,1)");
  }

  AdamSettings adam() const { return {learning_rate, beta1, beta2, adam_epsilon}; }

  bool operator==(const GanConfig&) const = default;
};

/// Output edge of the generator for latent spatial extent s: (s + 3) * 2^L.
inline std::size_t generator_output_edge(const GanConfig& cfg, std::size_t latent_spatial) {
  return (latent_spatial + 3) << cfg.levels();
}

inline std::vector<LayerSpec> generator_specs(const GanConfig& cfg) {
  const std::size_t L = cfg.levels();
  std::vector<LayerSpec> specs;
  auto bn_relu = [&](std::size_t channels) {
    LayerSpec bn;
    bn.kind = LayerKind::batchnorm3d;
    bn.in_channels = bn.out_channels = channels;
    bn.momentum = cfg.bn_momentum;
    bn.eps = cfg.bn_eps;
    specs.push_back(bn);
    LayerSpec relu;
    relu.kind = LayerKind::relu;
    relu.in_channels = relu.out_channels = channels;
    specs.push_back(relu);
  };
  std::size_t channels = cfg.ng << (L - 1);
  specs.push_back(conv_spec(LayerKind::conv_transpose3d, cfg.nz, channels, 4, 1, 0));
  bn_relu(channels);
  for (std::size_t i = 1; i < L; ++i) {
    specs.push_back(conv_spec(LayerKind::conv_transpose3d, channels, channels / 2, 4, 2, 1));
    channels /= 2;
    bn_relu(channels);
  }
  specs.push_back(conv_spec(LayerKind::conv_transpose3d, channels, 1, 4, 2, 1));
  LayerSpec tanh;
  tanh.kind = LayerKind::tanh;
  specs.push_back(tanh);
  LayerSpec to_unit;
  to_unit.kind = LayerKind::affine;
  to_unit.scale = 0.5;
  to_unit.shift = 0.5;
  specs.push_back(to_unit);
  return specs;
}

inline std::vector<LayerSpec> discriminator_specs(const GanConfig& cfg) {
  const std::size_t L = cfg.levels();
  std::vector<LayerSpec> specs;
  auto leaky = [&](std::size_t channels) {
    LayerSpec a;
    a.kind = LayerKind::leaky_relu;
    a.slope = cfg.leaky_slope;
    a.in_channels = a.out_channels = channels;
    specs.push_back(a);
  };
  std::size_t channels = cfg.nd;
  specs.push_back(conv_spec(LayerKind::conv3d, 1, channels, 4, 2, 1));
  leaky(channels);
  for (std::size_t i = 1; i < L; ++i) {
    specs.push_back(conv_spec(LayerKind::conv3d, channels, channels * 2, 4, 2, 1));
    channels *= 2;
    LayerSpec bn;
    bn.kind = LayerKind::batchnorm3d;
    bn.in_channels = bn.out_channels = channels;
    bn.momentum = cfg.bn_momentum;
    bn.eps = cfg.bn_eps;
    specs.push_back(bn);
    leaky(channels);
  }
  specs.push_back(conv_spec(LayerKind::conv3d, channels, 1, 4, 1, 0));
  return specs;
}

/// Gaussian(0, init_std) conv weights; batch-norm gamma ~ Gaussian(1, init_std), beta = 0.
template <typename T, typename Rng>
void initialize_weights(Sequential<T>& net, Rng& rng, double init_std) {
  for (std::size_t i = 0; i < net.size(); ++i) {
    auto kind = net[i].spec().kind;
    for (auto& [name, p] : net[i].parameters()) {
      if (kind == LayerKind::batchnorm3d) {
        if (name == "gamma") fill_normal(p->value, rng, 1.0, init_std);
        else p->value.fill(T(0));
      } else if (name == "bias") {
        p->value.fill(T(0));
      } else {
        fill_normal(p->value, rng, 0.0, init_std);
      }
    }
  }
}

template <typename T = float>
struct GeneratorNet {
  GanConfig config;
  Sequential<T> net;

  explicit GeneratorNet(const GanConfig& cfg) : config(cfg), net(generator_specs(cfg)) {}

  Shape5 latent_shape(std::size_t batch, std::size_t latent_spatial = 1) const {
    return {batch, config.nz, latent_spatial, latent_spatial, latent_spatial};
  }
  Tensor5<T> forward(const Tensor5<T>& z, Mode mode) { return net.forward(z, mode); }
  Tensor5<T> backward(const Tensor5<T>& dy) { return net.backward(dy); }
};

template <typename T = float>
struct DiscriminatorNet {
  GanConfig config;
  Sequential<T> net;

  explicit DiscriminatorNet(const GanConfig& cfg) : config(cfg), net(discriminator_specs(cfg)) {}

  double logit_scale() const { return config.head == DiscriminatorHead::tanh_affine ? 2.0 : 1.0; }

  /// Logits z of D = sigmoid(z), one per sample, shape (n,1,1,1,1).
  Tensor5<T> logits(const Tensor5<T>& x, Mode mode) {
    Tensor5<T> a = net.forward(x, mode);
    const T s = static_cast<T>(logit_scale());
    for (auto& v : a.values()) v *= s;
    return a;
  }

  /// Backpropagates dL/dlogit; returns dL/dx.
  Tensor5<T> backward(const Tensor5<T>& dlogits) {
    Tensor5<T> da = dlogits;
    const T s = static_cast<T>(logit_scale());
    for (auto& v : da.values()) v *= s;
    return net.backward(da);
  }

  std::vector<double> probabilities(const Tensor5<T>& x, Mode mode) {
    auto z = logits(x, mode);
    std::vector<double> p(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) p[i] = sigmoid(static_cast<double>(z[i]));
    return p;
  }
};

/// Training patches cut on demand from a source volume.
class PatchDataset {
 public:
  PatchDataset(VoxelGrid source, std::size_t patch, std::size_t stride)
      : source_(std::move(source)), patch_(patch), origins_(patch_origins(source_.dims(), patch, stride)) {}
  PatchDataset(VoxelGrid source, std::size_t patch, std::vector<Origin> origins)
      : source_(std::move(source)), patch_(patch), origins_(std::move(origins)) {
    for (const auto& o : origins_)
      require(o[0] + patch <= source_.nx() && o[1] + patch <= source_.ny() && o[2] + patch <= source_.nz(),
              Errc::invalid_patch, "patch origin outside the source volume");
  }

  std::size_t size() const { return origins_.size(); }
  std::size_t patch() const { return patch_; }
  const VoxelGrid& source() const { return source_; }
  const std::vector<Origin>& origins() const { return origins_; }

  VoxelGrid get(std::size_t i) const { return extract_patch(source_, origins_.at(i), patch_); }

  template <typename T>
  void copy_into(std::size_t i, T* dst) const {
    const auto& o = origins_.at(i);
    for (std::size_t z = 0; z < patch_; ++z)
      for (std::size_t y = 0; y < patch_; ++y)
        for (std::size_t x = 0; x < patch_; ++x)
          *dst++ = static_cast<T>(source_(o[0] + x, o[1] + y, o[2] + z));
  }

 private:
  VoxelGrid source_;
  std::size_t patch_;
  std::vector<Origin> origins_;
};

struct PreviewRecord {
  std::size_t iteration = 0;
  double porosity = 0.0;
};

struct TrainState {
  std::size_t iteration = 0;  // completed generator steps
  std::size_t d_steps = 0;
  std::vector<double> loss_d;  // J(D) per generator iteration
  std::vector<double> loss_g;  // J(G) per generator iteration
  std::vector<PreviewRecord> previews;
  std::string rng_state;
};

/// Porosity of a gray volume after median + Otsu; falls back to a 0.5 cut
/// when the histogram is degenerate.
inline double segmented_porosity(const GrayGrid& g) {
  try {
    return postprocess(g).porosity();
  } catch (const Error& e) {
    if (e.code() != Errc::degenerate_histogram) throw;
    std::size_t n = 0;
    for (float v : g.values()) n += v > 0.5f;
    return static_cast<double>(n) / static_cast<double>(g.size());
  }
}

template <typename T>
GrayGrid tensor_to_gray(const Tensor5<T>& t, std::size_t n, double voxel_size_um = 1.0) {
  const std::size_t d = t.extent(2), h = t.extent(3), w = t.extent(4);
  std::vector<float> v(d * h * w);
  const T* src = t.sample(n);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp(static_cast<float>(src[i]), 0.0f, 1.0f);
  return GrayGrid({w, h, d}, std::move(v), voxel_size_um);
}

/// Draws `count` volumes from the generator with latent spatial extent s.
template <typename T>
std::vector<GrayGrid> sample(GeneratorNet<T>& gen, std::size_t latent_spatial, std::size_t count, std::uint64_t seed,
                             double voxel_size_um = 1.0) {
  require(latent_spatial >= 1, Errc::config, "latent spatial extent must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<GrayGrid> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor5<T> z(gen.latent_shape(1, latent_spatial));
    fill_normal(z, rng);
    Tensor5<T> x;
    try {
      x = gen.forward(z, Mode::eval);
    } catch (const std::bad_alloc&) {
      fail(Errc::capacity, "not enough memory for latent extent " + std::to_string(latent_spatial));
    }
    out.push_back(tensor_to_gray(x, 0, voxel_size_um));
  }
  return out;
}

struct IterationLog {
  std::size_t iteration = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
};

/// Owns both networks, their optimiser state and the random stream.
template <typename T = float>
class Trainer {
 public:
  explicit Trainer(const GanConfig& cfg) : config_(cfg), generator_(cfg), discriminator_(cfg), rng_(cfg.seed) {
    cfg.validate();
    initialize_weights(generator_.net, rng_, cfg.init_std);
    initialize_weights(discriminator_.net, rng_, cfg.init_std);
  }

  const GanConfig& config() const { return config_; }
  GeneratorNet<T>& generator() { return generator_; }
  DiscriminatorNet<T>& discriminator() { return discriminator_; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  std::mt19937_64& rng() { return rng_; }

  std::string rng_state() const {
    std::ostringstream out;
    out << rng_;
    return out.str();
  }
  void set_rng_state(const std::string& s) {
    std::istringstream in(s);
    in >> rng_;
    require(!in.fail(), Errc::corrupt_checkpoint, "invalid random stream state");
  }

  /// One discriminator update: real batch against a generated batch.
  double discriminator_step(const PatchDataset& data) {
    const std::size_t B = config_.batch_size, t = config_.training_size;
    Tensor5<T> real({B, 1, t, t, t});
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    for (std::size_t b = 0; b < B; ++b) data.copy_into(pick(rng_), real.sample(b));
    Tensor5<T> z(generator_.latent_shape(B));
    fill_normal(z, rng_);
    Tensor5<T> fake = generator_.forward(z, Mode::train);
    add_instance_noise(real);
    add_instance_noise(fake);

    auto zr = discriminator_.logits(real, Mode::train);
    auto lr = bce_with_logits(zr, config_.stabilization.real_target());
    discriminator_.backward(lr.grad);
    auto zf = discriminator_.logits(fake, Mode::train);
    auto lf = bce_with_logits(zf, config_.stabilization.fake_target());
    discriminator_.backward(lf.grad);
    const double loss = lr.value + lf.value;
    require(std::isfinite(loss), Errc::divergence, "discriminator loss is not finite");
    adam_step(discriminator_.net.parameters(), config_.adam());
    ++state_.d_steps;
    return loss;
  }

  /// One generator update with the non-saturating objective -log D(G(z)).
  double generator_step() {
    const std::size_t B = config_.batch_size;
    Tensor5<T> z(generator_.latent_shape(B));
    fill_normal(z, rng_);
    Tensor5<T> fake = generator_.forward(z, Mode::train);
    add_instance_noise(fake);
    auto logits = discriminator_.logits(fake, Mode::train);
    auto lg = generator_loss_non_saturating(logits);
    require(std::isfinite(lg.value), Errc::divergence, "generator loss is not finite");
    Tensor5<T> dx = discriminator_.backward(lg.grad);
    discriminator_.net.zero_grad();
    generator_.backward(dx);
    adam_step(generator_.net.parameters(), config_.adam());
    return lg.value;
  }

  IterationLog iterate(const PatchDataset& data) {
    require(data.size() > 0, Errc::config, "empty training dataset");
    require(data.patch() == config_.training_size, Errc::config,
            "patch edge " + std::to_string(data.patch()) + " does not match training_size " +
                std::to_string(config_.training_size));
    double ld = 0.0;
    for (std::size_t k = 0; k < config_.d_steps_per_g_step; ++k) ld = discriminator_step(data);
    const double lg = generator_step();
    ++state_.iteration;
    state_.loss_d.push_back(ld);
    state_.loss_g.push_back(lg);
    return {state_.iteration, ld, lg};
  }

  /// Fixed-seed preview volume (eval mode) and its segmented porosity.
  PreviewRecord preview(std::uint64_t seed) {
    auto grids = sample(generator_, 1, 1, seed);
    PreviewRecord r{state_.iteration, segmented_porosity(grids.front())};
    state_.previews.push_back(r);
    return r;
  }

 private:
  void add_instance_noise(Tensor5<T>& x) {
    const double sigma = config_.stabilization.noise_sigma();
    if (sigma <= 0.0) return;
    std::normal_distribution<double> noise(0.0, sigma);
    for (auto& v : x.values()) v = static_cast<T>(static_cast<double>(v) + noise(rng_));
  }

  GanConfig config_;
  GeneratorNet<T> generator_;
  DiscriminatorNet<T> discriminator_;
  TrainState state_;
  std::mt19937_64 rng_;
};

struct TrainOptions {
  std::size_t iterations = 1000;
  std::size_t preview_every = 0;  // 0 disables previews
  std::uint64_t preview_seed = 1;
  std::function<void(const IterationLog&, Trainer<float>&)> on_iteration;
  /// Called every checkpoint_every iterations (and at the end) with the trainer.
  std::size_t checkpoint_every = 0;
  std::function<void(Trainer<float>&)> on_checkpoint;
};

/// Runs the training loop for options.iterations generator steps.
inline void train(Trainer<float>& trainer, const PatchDataset& data, const TrainOptions& options) {
  require(data.size() > 0, Errc::config, "empty training dataset");
  for (std::size_t i = 0; i < options.iterations; ++i) {
    auto log = trainer.iterate(data);
    if (options.preview_every && (trainer.state().iteration % options.preview_every == 0 || i == 0))
      trainer.preview(options.preview_seed);
    if (options.on_iteration) options.on_iteration(log, trainer);
    if (options.checkpoint_every && options.on_checkpoint && trainer.state().iteration % options.checkpoint_every == 0)
      options.on_checkpoint(trainer);
  }
}

/// Iterations for a number of passes over the dataset.
inline std::size_t iterations_for_epochs(std::size_t epochs, std::size_t dataset_size, std::size_t batch) {
  return std::max<std::size_t>(1, (epochs * dataset_size + batch - 1) / batch);
}

}  // namespace porogan
