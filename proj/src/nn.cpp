#include "masq/nn.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "masq/error.hpp"
#include "masq/io.hpp"

namespace masq::nn {

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw DimensionMismatch(what);
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {{"feature_dim", std::to_string(feature_dim)},
          {"embed_dim", std::to_string(embed_dim)},
          {"encoder_widths", join_ints(encoder_widths)},
          {"horizon", std::to_string(horizon)},
          {"chunk_len", std::to_string(chunk_len)},
          {"action_dim", std::to_string(action_dim)},
          {"time_embed_dim", std::to_string(time_embed_dim)},
          {"diffusion_widths", join_ints(diffusion_widths)}};
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& m) {
  ModelConfig c;
  auto get = [&](const char* k) -> const std::string& {
    auto it = m.find(k);
    if (it == m.end()) throw FormatError(std::string("model config missing ") + k);
    return it->second;
  };
  c.feature_dim = std::stoi(get("feature_dim"));
  c.embed_dim = std::stoi(get("embed_dim"));
  c.encoder_widths = parse_ints(get("encoder_widths"));
  c.horizon = std::stoi(get("horizon"));
  c.chunk_len = std::stoi(get("chunk_len"));
  c.action_dim = std::stoi(get("action_dim"));
  c.time_embed_dim = std::stoi(get("time_embed_dim"));
  c.diffusion_widths = parse_ints(get("diffusion_widths"));
  return c;
}

// ---------------------------------------------------------------------------

Matrix affine(const MatrixRef& w, const Eigen::Ref<const Vector>& b, const MatrixRef& x) {
  require(w.cols() == x.rows() && w.rows() == b.size(), "affine: shape mismatch");
  Matrix y(w.rows(), x.cols());
  y.noalias() = w * x;
  y.colwise() += b;
  return y;
}

Matrix affine_backward(const MatrixRef& w, const MatrixRef& x, const MatrixRef& dy,
                       Eigen::Ref<Matrix> dw, Eigen::Ref<Vector> db) {
  dw.noalias() += dy * x.transpose();
  db += dy.rowwise().sum();
  Matrix dx(w.cols(), dy.cols());
  dx.noalias() = w.transpose() * dy;
  return dx;
}

FilmGenerator FilmGenerator::identity(int width, int embed_dim) {
  return {Matrix::Zero(width, embed_dim), Vector::Ones(width), Matrix::Zero(width, embed_dim),
          Vector::Zero(width)};
}

Vector film(const Vector& hidden, const Vector& z, const FilmGenerator& g) {
  require(g.gamma_w.rows() == hidden.size() && g.beta_w.rows() == hidden.size() &&
              g.gamma_w.cols() == z.size() && g.beta_w.cols() == z.size() &&
              g.gamma_b.size() == hidden.size() && g.beta_b.size() == hidden.size(),
          "film: shape mismatch");
  const Vector gamma = g.gamma_w * z + g.gamma_b;
  const Vector beta = g.beta_w * z + g.beta_b;
  return gamma.cwiseProduct(hidden) + beta;
}

Matrix film_batch(const MatrixRef& hidden, const MatrixRef& z, const MatrixRef& gamma_w,
                  const Eigen::Ref<const Vector>& gamma_b, const MatrixRef& beta_w,
                  const Eigen::Ref<const Vector>& beta_b, Matrix* gamma_out) {
  require(hidden.cols() == z.cols() && gamma_w.rows() == hidden.rows() &&
              gamma_w.cols() == z.rows() && beta_w.rows() == hidden.rows() &&
              beta_w.cols() == z.rows(),
          "film: shape mismatch");
  Matrix gamma = affine(gamma_w, gamma_b, z);
  Matrix out = affine(beta_w, beta_b, z);
  out.array() += gamma.array() * hidden.array();
  if (gamma_out) *gamma_out = std::move(gamma);
  return out;
}

Matrix film_backward(const MatrixRef& hidden, const MatrixRef& z, const MatrixRef& gamma,
                     const MatrixRef& d_out, Eigen::Ref<Matrix> d_gamma_w,
                     Eigen::Ref<Vector> d_gamma_b, Eigen::Ref<Matrix> d_beta_w,
                     Eigen::Ref<Vector> d_beta_b) {
  const Matrix d_gamma = d_out.cwiseProduct(hidden);
  d_gamma_w.noalias() += d_gamma * z.transpose();
  d_gamma_b += d_gamma.rowwise().sum();
  d_beta_w.noalias() += d_out * z.transpose();
  d_beta_b += d_out.rowwise().sum();
  return d_out.cwiseProduct(gamma);
}

// ---------------------------------------------------------------------------

int ModelParams::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::Index offset = slots_.empty() ? 0 : slots_.back().offset + slots_.back().rows * slots_.back().cols;
  slots_.push_back({name, offset, rows, cols});
  return static_cast<int>(slots_.size()) - 1;
}

ModelParams::ModelParams(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.encoder_widths.empty() || cfg.diffusion_widths.empty()) {
    throw InvalidArgument("model needs at least one encoder and one diffusion layer");
  }
  int in = cfg.feature_dim;
  for (std::size_t l = 0; l < cfg.encoder_widths.size(); ++l) {
    const int out = cfg.encoder_widths[l];
    const std::string p = "encoder." + std::to_string(l) + ".";
    EncoderLayer e{};
    e.w = add(p + "w", out, in);
    e.b = add(p + "b", out, 1);
    e.gamma_w = add(p + "film.gamma_w", out, cfg.embed_dim);
    e.gamma_b = add(p + "film.gamma_b", out, 1);
    e.beta_w = add(p + "film.beta_w", out, cfg.embed_dim);
    e.beta_b = add(p + "film.beta_b", out, 1);
    encoder_.push_back(e);
    in = out;
  }
  encoder_end_ = slots_.back().offset + slots_.back().rows * slots_.back().cols;
  keypoint_.w = add("keypoint.w", cfg.keypoint_outputs(), cfg.feature_out());
  keypoint_.b = add("keypoint.b", cfg.keypoint_outputs(), 1);
  in = cfg.diffusion_input();
  for (std::size_t l = 0; l <= cfg.diffusion_widths.size(); ++l) {
    const int out = l < cfg.diffusion_widths.size() ? cfg.diffusion_widths[l] : cfg.chunk_size();
    const std::string p = "diffusion." + std::to_string(l) + ".";
    diffusion_.push_back({add(p + "w", out, in), add(p + "b", out, 1)});
    in = out;
  }
  const Eigen::Index total = slots_.back().offset + slots_.back().rows * slots_.back().cols;
  values_ = Vector::Zero(total);
  grads_ = Vector::Zero(total);
}

Eigen::Map<Matrix> ModelParams::param(int i) {
  const auto& s = slots_[i];
  return {values_.data() + s.offset, s.rows, s.cols};
}
Eigen::Map<const Matrix> ModelParams::param(int i) const {
  const auto& s = slots_[i];
  return {values_.data() + s.offset, s.rows, s.cols};
}
Eigen::Map<Matrix> ModelParams::grad(int i) {
  const auto& s = slots_[i];
  return {grads_.data() + s.offset, s.rows, s.cols};
}
Eigen::Map<Vector> ModelParams::param_vec(int i) {
  const auto& s = slots_[i];
  return {values_.data() + s.offset, s.rows * s.cols};
}
Eigen::Map<const Vector> ModelParams::param_vec(int i) const {
  const auto& s = slots_[i];
  return {values_.data() + s.offset, s.rows * s.cols};
}
Eigen::Map<Vector> ModelParams::grad_vec(int i) {
  const auto& s = slots_[i];
  return {grads_.data() + s.offset, s.rows * s.cols};
}

std::pair<Eigen::Index, Eigen::Index> ModelParams::encoder_range() const {
  return {0, encoder_end_};
}

void ModelParams::init(Rng& rng) {
  auto xavier = [&](int slot, double gain) {
    auto w = param(slot);
    const double a = gain * std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-a, a);
  };
  values_.setZero();
  for (const auto& e : encoder_) {
    xavier(e.w, 1.0);
    xavier(e.gamma_w, 0.1);
    xavier(e.beta_w, 0.1);
    param_vec(e.gamma_b).setOnes();
  }
  xavier(keypoint_.w, 1.0);
  for (const auto& d : diffusion_) xavier(d.w, 1.0);
  grads_.setZero();
}

std::uint64_t ModelParams::checksum() const {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(values_.data()),
                                  static_cast<std::size_t>(values_.size()) * sizeof(double)));
}

// ---------------------------------------------------------------------------

Matrix encoder_forward(const ModelParams& p, const MatrixRef& x, const MatrixRef& z,
                       EncoderCache* cache) {
  const auto& cfg = p.config();
  require(x.rows() == cfg.feature_dim, "encoder: feature dimension mismatch");
  require(z.rows() == cfg.embed_dim && z.cols() == x.cols(), "encoder: embedding mismatch");
  if (cache) {
    cache->inputs.clear();
    cache->act.clear();
    cache->gamma.clear();
    cache->z = z;
  }
  Matrix h = x;
  for (const auto& l : p.encoder()) {
    Matrix u = affine(p.param(l.w), p.param_vec(l.b), h);
    u = u.array().tanh().matrix();
    Matrix gamma;
    Matrix out = film_batch(u, z, p.param(l.gamma_w), p.param_vec(l.gamma_b), p.param(l.beta_w),
                            p.param_vec(l.beta_b), cache ? &gamma : nullptr);
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->act.push_back(std::move(u));
      cache->gamma.push_back(std::move(gamma));
    }
    h = std::move(out);
  }
  return h;
}

void encoder_backward(ModelParams& p, const EncoderCache& cache, const MatrixRef& d_features) {
  Matrix dh = d_features;
  for (int i = static_cast<int>(p.encoder().size()) - 1; i >= 0; --i) {
    const auto& l = p.encoder()[i];
    const Matrix& u = cache.act[i];
    Matrix du = film_backward(u, cache.z, cache.gamma[i], dh, p.grad(l.gamma_w),
                              p.grad_vec(l.gamma_b), p.grad(l.beta_w), p.grad_vec(l.beta_b));
    du.array() *= 1.0 - u.array().square();
    dh = affine_backward(p.param(l.w), cache.inputs[i], du, p.grad(l.w), p.grad_vec(l.b));
  }
}

Matrix keypoint_forward(const ModelParams& p, const MatrixRef& x, const MatrixRef& z) {
  const Matrix f = encoder_forward(p, x, z);
  return affine(p.param(p.keypoint_head().w), p.param_vec(p.keypoint_head().b), f);
}

Vector forward_keypoint(const ModelParams& p, const Vector& x, const Vector& z) {
  return keypoint_forward(p, x, z).col(0);
}

LossGrad loss_2d(const MatrixRef& pred, const MatrixRef& target, const MatrixRef& mask) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols() &&
              mask.rows() == pred.rows() && mask.cols() == pred.cols(),
          "loss_2d: shape mismatch");
  LossGrad out;
  out.grad = Matrix::Zero(pred.rows(), pred.cols());
  if (pred.cols() == 0 || (mask.array() == 0.0).all()) return out;
  const double inv_b = 1.0 / static_cast<double>(pred.cols());
  const Matrix diff = (pred - target).cwiseProduct(mask);
  out.value = diff.squaredNorm() * inv_b;
  out.grad = 2.0 * inv_b * diff;
  return out;
}

double keypoint_loss(ModelParams& p, const KeypointBatch& batch, double weight) {
  EncoderCache cache;
  const Matrix f = encoder_forward(p, batch.x, batch.z, &cache);
  const auto& kp = p.keypoint_head();
  const Matrix pred = affine(p.param(kp.w), p.param_vec(kp.b), f);
  LossGrad lg = loss_2d(pred, batch.target, batch.mask);
  if (weight != 0.0 && lg.value != 0.0) {
    lg.grad *= weight;
    const Matrix df = affine_backward(p.param(kp.w), f, lg.grad, p.grad(kp.w), p.grad_vec(kp.b));
    encoder_backward(p, cache, df);
  }
  return lg.value;
}

// ---------------------------------------------------------------------------

DiffusionSchedule::DiffusionSchedule(int steps_, double beta_start, double beta_end)
    : steps(steps_) {
  if (steps < 1) throw InvalidArgument("diffusion schedule needs at least one step");
  betas.resize(steps);
  alphas.resize(steps);
  alpha_bars.resize(steps);
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    betas[t] = steps == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * t / static_cast<double>(steps - 1);
    alphas[t] = 1.0 - betas[t];
    prod *= alphas[t];
    alpha_bars[t] = prod;
  }
}

double DiffusionSchedule::posterior_variance(int t) const {
  return betas[t] * (1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]);
}

Matrix ddpm_add_noise(const MatrixRef& chunk, int t, const MatrixRef& noise,
                      const DiffusionSchedule& sched) {
  if (t < 0 || t >= sched.steps) throw StepOutOfRange("diffusion step out of range");
  require(chunk.rows() == noise.rows() && chunk.cols() == noise.cols(), "add_noise: shape");
  const double ab = sched.alpha_bars[t];
  return std::sqrt(ab) * chunk + std::sqrt(1.0 - ab) * noise;
}

Vector timestep_embedding(int t, int dim) {
  const int half = dim / 2;
  Vector e = Vector::Zero(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / static_cast<double>(half));
    e(i) = std::sin(t * freq);
    e(half + i) = std::cos(t * freq);
  }
  return e;
}

Matrix diffusion_forward(const ModelParams& p, const MatrixRef& noisy, const MatrixRef& features,
                         const std::vector<int>& steps, DiffusionCache* cache) {
  const auto& cfg = p.config();
  const Eigen::Index b = noisy.cols();
  require(noisy.rows() == cfg.chunk_size(), "diffusion: chunk size mismatch");
  require(features.rows() == cfg.feature_out() && features.cols() == b,
          "diffusion: feature mismatch");
  require(static_cast<Eigen::Index>(steps.size()) == b, "diffusion: step count mismatch");
  Matrix h(cfg.diffusion_input(), b);
  h.topRows(cfg.chunk_size()) = noisy;
  h.middleRows(cfg.chunk_size(), cfg.feature_out()) = features;
  for (Eigen::Index j = 0; j < b; ++j) {
    h.col(j).tail(cfg.time_embed_dim) = timestep_embedding(steps[j], cfg.time_embed_dim);
  }
  if (cache) {
    cache->inputs.clear();
    cache->act.clear();
  }
  const auto& layers = p.diffusion_head();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix a = affine(p.param(layers[l].w), p.param_vec(layers[l].b), h);
    if (l + 1 < layers.size()) a = a.array().tanh().matrix();
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->act.push_back(a);
    }
    h = std::move(a);
  }
  return h;
}

Matrix diffusion_backward(ModelParams& p, const DiffusionCache& cache, const MatrixRef& d_eps) {
  const auto& cfg = p.config();
  const auto& layers = p.diffusion_head();
  Matrix dh = d_eps;
  for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
    if (l + 1 < static_cast<int>(layers.size())) {
      dh.array() *= 1.0 - cache.act[l].array().square();
    }
    dh = affine_backward(p.param(layers[l].w), cache.inputs[l], dh, p.grad(layers[l].w),
                         p.grad_vec(layers[l].b));
  }
  return dh.middleRows(cfg.chunk_size(), cfg.feature_out());
}

double noise_prediction_loss(const MatrixRef& predicted, const MatrixRef& noise) {
  require(predicted.rows() == noise.rows() && predicted.cols() == noise.cols(),
          "noise loss: shape mismatch");
  if (predicted.cols() == 0) return 0.0;
  return (predicted - noise).squaredNorm() / static_cast<double>(predicted.cols());
}

double policy_loss_at(ModelParams& p, const PolicyBatch& batch, const std::vector<int>& steps,
                      const MatrixRef& noise, const DiffusionSchedule& sched, double weight) {
  const Eigen::Index b = batch.chunks.cols();
  require(noise.rows() == batch.chunks.rows() && noise.cols() == b, "policy: noise shape");
  Matrix noisy(batch.chunks.rows(), b);
  for (Eigen::Index j = 0; j < b; ++j) {
    noisy.col(j) = ddpm_add_noise(batch.chunks.col(j), steps[j], noise.col(j), sched);
  }
  EncoderCache ecache;
  const Matrix f = encoder_forward(p, batch.y, batch.z, &ecache);
  DiffusionCache dcache;
  const Matrix eps = diffusion_forward(p, noisy, f, steps, &dcache);
  const double value = noise_prediction_loss(eps, noise);
  if (weight != 0.0) {
    const Matrix d_eps = (2.0 * weight / static_cast<double>(b)) * (eps - noise);
    const Matrix df = diffusion_backward(p, dcache, d_eps);
    encoder_backward(p, ecache, df);
  }
  return value;
}

double loss_policy(ModelParams& p, const PolicyBatch& batch, const DiffusionSchedule& sched,
                   Rng& rng, double weight) {
  const Eigen::Index b = batch.chunks.cols();
  std::vector<int> steps(static_cast<std::size_t>(b));
  Matrix noise(batch.chunks.rows(), b);
  for (Eigen::Index j = 0; j < b; ++j) {
    steps[j] = static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.steps)));
    for (Eigen::Index i = 0; i < noise.rows(); ++i) noise(i, j) = rng.normal();
  }
  return policy_loss_at(p, batch, steps, noise, sched, weight);
}

Matrix ddpm_sample(const ModelParams& p, const MatrixRef& features,
                   const DiffusionSchedule& sched, Rng& rng) {
  const auto& cfg = p.config();
  const Eigen::Index b = features.cols();
  Matrix x(cfg.chunk_size(), b);
  for (Eigen::Index j = 0; j < b; ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = rng.normal();
  std::vector<int> steps(static_cast<std::size_t>(b));
  for (int t = sched.steps - 1; t >= 0; --t) {
    std::fill(steps.begin(), steps.end(), t);
    const Matrix eps = diffusion_forward(p, x, features, steps);
    const double ab = sched.alpha_bars[t];
    const double ab_prev = t > 0 ? sched.alpha_bars[t - 1] : 1.0;
    Matrix x0 = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    if (sched.clip_sample) x0 = x0.cwiseMax(-sched.clip_range).cwiseMin(sched.clip_range);
    const double c0 = std::sqrt(ab_prev) * sched.betas[t] / (1.0 - ab);
    const double ct = std::sqrt(sched.alphas[t]) * (1.0 - ab_prev) / (1.0 - ab);
    x = c0 * x0 + ct * x;
    if (t > 0) {
      const double sigma = std::sqrt(sched.posterior_variance(t));
      for (Eigen::Index j = 0; j < b; ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) += sigma * rng.normal();
    }
  }
  return x;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCheckpointMagic = "masq-checkpoint";
constexpr int kCheckpointVersion = 1;
constexpr const char* kHeaderEnd = "---\n";

}  // namespace

std::string rng_state_string(const Rng& rng) {
  std::ostringstream os;
  os << rng.engine();
  return os.str();
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& p,
                     const CheckpointMeta& meta) {
  io::ByteWriter payload;
  for (Eigen::Index i = 0; i < p.size(); ++i) payload.f32(static_cast<float>(p.values()(i)));
  const auto& bytes = payload.data();

  std::ostringstream os;
  os << kCheckpointMagic << "\n";
  os << "version = " << kCheckpointVersion << "\n";
  os << "step = " << meta.step << "\n";
  for (const auto& [k, v] : p.config().to_map()) os << "model." << k << " = " << v << "\n";
  for (const auto& [k, v] : meta.extra) os << "extra." << k << " = " << v << "\n";
  if (!meta.rng_state.empty()) os << "rng_state = " << meta.rng_state << "\n";
  os << "param_count = " << p.size() << "\n";
  os << "payload_bytes = " << bytes.size() << "\n";
  char crc[9];
  std::snprintf(crc, sizeof(crc), "%08x", io::crc32c(bytes));
  os << "payload_crc32c = " << crc << "\n";
  os << kHeaderEnd;

  io::ByteWriter file;
  file.raw(os.str());
  file.bytes(bytes);
  io::write_file_atomic(path, file.data());
}

ModelParams load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta_out) {
  const auto file = io::read_file(path);
  const std::string_view all(reinterpret_cast<const char*>(file.data()), file.size());
  const auto end = all.find(kHeaderEnd);
  if (all.rfind(kCheckpointMagic, 0) != 0) throw FormatError("not a checkpoint file");
  if (end == std::string_view::npos) throw TruncatedFile("checkpoint header is incomplete");
  std::istringstream is{std::string(all.substr(0, end))};
  std::string line;
  std::getline(is, line);
  std::map<std::string, std::string> kv;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError("bad checkpoint header line");
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  if (kv["version"] != std::to_string(kCheckpointVersion)) {
    throw VersionMismatch("unsupported checkpoint version " + kv["version"]);
  }
  std::map<std::string, std::string> model;
  CheckpointMeta meta;
  for (const auto& [k, v] : kv) {
    if (k.rfind("model.", 0) == 0) model[k.substr(6)] = v;
    if (k.rfind("extra.", 0) == 0) meta.extra[k.substr(6)] = v;
  }
  meta.step = std::stoll(kv["step"]);
  meta.rng_state = kv.count("rng_state") ? kv["rng_state"] : "";
  ModelParams p(ModelConfig::from_map(model));
  const std::size_t payload_bytes = std::stoull(kv["payload_bytes"]);
  const std::size_t start = end + std::strlen(kHeaderEnd);
  if (file.size() - start < payload_bytes || payload_bytes != static_cast<std::size_t>(p.size()) * 4) {
    throw TruncatedFile("checkpoint payload is truncated");
  }
  std::span<const std::uint8_t> payload(file.data() + start, payload_bytes);
  if (io::crc32c(payload) != static_cast<std::uint32_t>(std::stoul(kv["payload_crc32c"], nullptr, 16))) {
    throw ChecksumMismatch("checkpoint payload checksum mismatch");
  }
  io::ByteReader r(payload);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.values()(i) = r.f32();
  if (meta_out) *meta_out = std::move(meta);
  return p;
}

}  // namespace masq::nn
