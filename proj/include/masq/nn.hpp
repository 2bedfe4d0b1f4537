#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "masq/rng.hpp"

namespace masq::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MatrixRef = Eigen::Ref<const Matrix>;

struct ModelConfig {
  int feature_dim = 128;
  int embed_dim = 64;
  std::vector<int> encoder_widths{256, 256, 128};
  int horizon = 16;
  int chunk_len = 8;   // A
  int action_dim = 6;  // (x, y, grip) per arm
  int time_embed_dim = 32;
  std::vector<int> diffusion_widths{256, 256};

  int feature_out() const { return encoder_widths.back(); }
  /// 2 arms x (H + 1) waypoints x 2 coordinates.
  int keypoint_outputs() const { return 2 * (horizon + 1) * 2; }
  int chunk_size() const { return chunk_len * action_dim; }
  int diffusion_input() const { return chunk_size() + feature_out() + time_embed_dim; }

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& m);
  bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Layer primitives. Batches are matrices with one sample per column.

/// W x + b for every column.
Matrix affine(const MatrixRef& w, const Eigen::Ref<const Vector>& b, const MatrixRef& x);
/// Accumulates dW, db and returns dX.
Matrix affine_backward(const MatrixRef& w, const MatrixRef& x, const MatrixRef& dy,
                       Eigen::Ref<Matrix> dw, Eigen::Ref<Vector> db);

/// Maps a conditioning embedding z to per-feature scale and shift.
struct FilmGenerator {
  Matrix gamma_w;
  Vector gamma_b;
  Matrix beta_w;
  Vector beta_b;

  static FilmGenerator identity(int width, int embed_dim);
};

struct FilmGrad {
  Matrix gamma_w, beta_w;
  Vector gamma_b, beta_b;
};

/// gamma(z) * hidden + beta(z), elementwise. Throws DimensionMismatch.
Vector film(const Vector& hidden, const Vector& z, const FilmGenerator& g);
/// Batched form; `gamma_out` receives gamma(z) when non-null.
Matrix film_batch(const MatrixRef& hidden, const MatrixRef& z, const MatrixRef& gamma_w,
                  const Eigen::Ref<const Vector>& gamma_b, const MatrixRef& beta_w,
                  const Eigen::Ref<const Vector>& beta_b, Matrix* gamma_out = nullptr);
/// Gradient of a scalar loss through FiLM given dL/d(output). Returns dL/d(hidden)
/// and accumulates generator gradients.
Matrix film_backward(const MatrixRef& hidden, const MatrixRef& z, const MatrixRef& gamma,
                     const MatrixRef& d_out, Eigen::Ref<Matrix> d_gamma_w,
                     Eigen::Ref<Vector> d_gamma_b, Eigen::Ref<Matrix> d_beta_w,
                     Eigen::Ref<Vector> d_beta_b);

// ---------------------------------------------------------------------------
// Parameters

/// All weights live in one flat array with a same-shaped gradient array;
/// tensors are column-major views into it.
class ModelParams {
 public:
  struct Slot {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
  };
  struct EncoderLayer {
    int w, b, gamma_w, gamma_b, beta_w, beta_b;
  };
  struct AffineLayer {
    int w, b;
  };

  explicit ModelParams(const ModelConfig& cfg = {});

  const ModelConfig& config() const { return cfg_; }
  Eigen::Index size() const { return values_.size(); }

  Vector& values() { return values_; }
  const Vector& values() const { return values_; }
  Vector& grads() { return grads_; }
  const Vector& grads() const { return grads_; }
  void zero_grad() { grads_.setZero(); }

  Eigen::Map<Matrix> param(int slot);
  Eigen::Map<const Matrix> param(int slot) const;
  Eigen::Map<Matrix> grad(int slot);
  Eigen::Map<Vector> param_vec(int slot);
  Eigen::Map<const Vector> param_vec(int slot) const;
  Eigen::Map<Vector> grad_vec(int slot);
  const std::vector<Slot>& slots() const { return slots_; }

  const std::vector<EncoderLayer>& encoder() const { return encoder_; }
  const AffineLayer& keypoint_head() const { return keypoint_; }
  const std::vector<AffineLayer>& diffusion_head() const { return diffusion_; }
  /// Indices into the flat arrays covered by encoder (incl. FiLM), keypoint
  /// head and diffusion head respectively.
  std::pair<Eigen::Index, Eigen::Index> encoder_range() const;

  /// Xavier-uniform weights, zero biases, FiLM initialised near identity.
  void init(Rng& rng);
  /// FNV-1a over the raw bytes of the parameter values.
  std::uint64_t checksum() const;
  bool all_finite() const { return values_.allFinite() && grads_.allFinite(); }

 private:
  int add(const std::string& name, Eigen::Index rows, Eigen::Index cols);

  ModelConfig cfg_;
  std::vector<Slot> slots_;
  std::vector<EncoderLayer> encoder_;
  AffineLayer keypoint_{};
  std::vector<AffineLayer> diffusion_;
  Eigen::Index encoder_end_ = 0;
  Vector values_;
  Vector grads_;
};

// ---------------------------------------------------------------------------
// Encoder f(x, z) and keypoint head h

struct EncoderCache {
  std::vector<Matrix> inputs;  // layer inputs
  std::vector<Matrix> act;     // tanh outputs
  std::vector<Matrix> gamma;   // FiLM scales
  Matrix z;
};

Matrix encoder_forward(const ModelParams& p, const MatrixRef& x, const MatrixRef& z,
                       EncoderCache* cache = nullptr);
/// Accumulates parameter gradients from dL/d(features).
void encoder_backward(ModelParams& p, const EncoderCache& cache, const MatrixRef& d_features);

/// h(f(x, z)) for a batch: keypoint_outputs() x B.
Matrix keypoint_forward(const ModelParams& p, const MatrixRef& x, const MatrixRef& z);
/// Single-sample form; output layout [arm][k][coord] flattened.
Vector forward_keypoint(const ModelParams& p, const Vector& x, const Vector& z);

struct LossGrad {
  double value = 0.0;
  Matrix grad;  // dL/d(prediction)
};

/// Mean over columns of the masked squared error. All-masked input gives 0.
LossGrad loss_2d(const MatrixRef& pred, const MatrixRef& target, const MatrixRef& mask);

struct KeypointBatch {
  Matrix x;       // F x B
  Matrix z;       // d x B
  Matrix target;  // K x B
  Matrix mask;    // K x B, 1 = supervised
};

/// L_2D on a batch; accumulates gradients into `p` scaled by `weight`.
double keypoint_loss(ModelParams& p, const KeypointBatch& batch, double weight = 1.0);

// ---------------------------------------------------------------------------
// Diffusion head g

struct DiffusionSchedule {
  int steps = 100;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  bool clip_sample = true;
  double clip_range = 1.0;

  explicit DiffusionSchedule(int steps = 100, double beta_start = 1e-4, double beta_end = 0.02);
  /// Posterior variance of step t (t >= 1).
  double posterior_variance(int t) const;
};

/// sqrt(alpha_bar_t) * chunk + sqrt(1 - alpha_bar_t) * noise.
/// Throws StepOutOfRange unless 0 <= t < steps.
Matrix ddpm_add_noise(const MatrixRef& chunk, int t, const MatrixRef& noise,
                      const DiffusionSchedule& sched);

/// Sinusoidal embedding of a diffusion step.
Vector timestep_embedding(int t, int dim);

struct DiffusionCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> act;
};

/// Predicted noise for noisy chunks given encoder features and steps.
Matrix diffusion_forward(const ModelParams& p, const MatrixRef& noisy, const MatrixRef& features,
                         const std::vector<int>& steps, DiffusionCache* cache = nullptr);
/// Accumulates head gradients; returns dL/d(features).
Matrix diffusion_backward(ModelParams& p, const DiffusionCache& cache, const MatrixRef& d_eps);

/// Mean over columns of ||predicted - noise||^2.
double noise_prediction_loss(const MatrixRef& predicted, const MatrixRef& noise);

struct PolicyBatch {
  Matrix y;       // F x B robot features
  Matrix z;       // d x B
  Matrix chunks;  // (A * action_dim) x B
};

/// Noise-prediction loss at given steps and noise; accumulates gradients into
/// `p` (encoder included) scaled by `weight`.
double policy_loss_at(ModelParams& p, const PolicyBatch& batch, const std::vector<int>& steps,
                      const MatrixRef& noise, const DiffusionSchedule& sched, double weight = 1.0);

/// Draws t ~ U{0..T-1} then a standard normal chunk per sample (in that order)
/// and evaluates policy_loss_at.
double loss_policy(ModelParams& p, const PolicyBatch& batch, const DiffusionSchedule& sched,
                   Rng& rng, double weight = 1.0);

/// Ancestral DDPM sampling from unit Gaussian noise, conditioned on encoder
/// features (one column per sample).
Matrix ddpm_sample(const ModelParams& p, const MatrixRef& features,
                   const DiffusionSchedule& sched, Rng& rng);

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointMeta {
  std::int64_t step = 0;
  std::string rng_state;  // textual mt19937_64 state, may be empty
  std::map<std::string, std::string> extra;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& p,
                     const CheckpointMeta& meta);
/// Throws ChecksumMismatch, VersionMismatch, TruncatedFile, FormatError.
ModelParams load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

std::string rng_state_string(const Rng& rng);

}  // namespace masq::nn
