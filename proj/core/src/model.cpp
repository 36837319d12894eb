#include "rapt/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "rapt/rng.hpp"

namespace rapt {

std::string to_string(Objective o) {
  return o == Objective::kReconstruction ? "reconstruction" : "dynamics";
}

Objective objective_from_string(const std::string& s) {
  if (s == "reconstruction") return Objective::kReconstruction;
  if (s == "dynamics") return Objective::kDynamics;
  throw std::invalid_argument("unknown objective: " + s);
}

void ModelConfig::validate() const {
  if (d_obs == 0) throw std::invalid_argument("ModelConfig: d_obs must be positive");
  if (d_model == 0) throw std::invalid_argument("ModelConfig: d_model must be positive");
  if (d_latent > d_model) throw std::invalid_argument("ModelConfig: d_latent must be <= d_model");
  if (d_latent == 0) throw std::invalid_argument("ModelConfig: d_latent must be positive");
  if (noise_sigma < 0.0) throw std::invalid_argument("ModelConfig: noise_sigma must be >= 0");
  if (!(logvar_lo < logvar_hi)) throw std::invalid_argument("ModelConfig: logvar clamp empty");
  if (condition_on_actions && d_act == 0) {
    throw std::invalid_argument("ModelConfig: condition_on_actions requires d_act > 0");
  }
}

namespace {

Tensor uniform_init(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

void add_linear(ParamSet& p, Rng& rng, const std::string& prefix, std::size_t out_dim,
                std::size_t in_dim) {
  p.add(prefix + ".weight", uniform_init(rng, {out_dim, in_dim}, in_dim));
  p.add(prefix + ".bias", uniform_init(rng, {out_dim}, in_dim));
}

void add_layer_norm(ParamSet& p, const std::string& prefix, std::size_t d) {
  p.add(prefix + ".gamma", Tensor::full({d}, 1.0));
  p.add(prefix + ".beta", Tensor::zeros({d}));
}

}  // namespace

RaptModel init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  RaptModel m;
  m.config = config;
  Rng rng = Rng(seed).fork(0x1017);

  const std::size_t I = config.input_dim();
  const std::size_t M = config.d_model;
  const std::size_t L = config.d_latent;

  add_linear(m.params, rng, "encoder.proj", M, I);
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    const std::string prefix = "encoder.block" + std::to_string(b);
    add_linear(m.params, rng, prefix + ".linear", M, M);
    add_layer_norm(m.params, prefix + ".ln", M);
  }
  for (const char* g : {"z", "r", "n"}) {
    m.params.add(std::string("gru.w_") + g, uniform_init(rng, {M, M}, M));
    m.params.add(std::string("gru.u_") + g, uniform_init(rng, {M, M}, M));
  }
  m.params.add("gru.b_z", uniform_init(rng, {M}, M));
  m.params.add("gru.b_r", uniform_init(rng, {M}, M));
  m.params.add("gru.b_in", uniform_init(rng, {M}, M));
  m.params.add("gru.b_hn", uniform_init(rng, {M}, M));
  add_linear(m.params, rng, "latent.proj", L, M);
  add_layer_norm(m.params, "latent.ln", L);
  add_linear(m.params, rng, "decoder.fc1", M, L);
  add_linear(m.params, rng, "decoder.fc2", 2 * config.d_obs, M);

  const std::size_t D = config.norm_dim();
  m.norm_mean = Tensor::zeros({D});
  m.norm_std = Tensor::full({D}, 1.0);
  m.obs_min = Tensor::full({config.d_obs}, 0.0);
  m.obs_max = Tensor::full({config.d_obs}, 0.0);
  return m;
}

std::size_t expected_param_count(const ModelConfig& c) {
  const std::size_t I = c.input_dim(), M = c.d_model, L = c.d_latent, O = c.d_obs;
  std::size_t n = M * I + M;                  // encoder projection
  n += c.n_blocks * (M * M + M + 2 * M);      // residual blocks (linear + LN affine)
  n += 6 * M * M + 4 * M;                     // GRU
  n += L * M + L + 2 * L;                     // bottleneck projection + LN
  n += M * L + M + 2 * O * M + 2 * O;         // decoder MLP
  return n;
}

void fit_normalization(RaptModel& model, const std::vector<TrajectoryLog>& dataset) {
  const std::size_t O = model.config.d_obs;
  const std::size_t A = model.config.d_act;
  const std::size_t D = model.config.norm_dim();
  std::vector<double> sum(D, 0.0), sumsq(D, 0.0);
  std::vector<double> lo(O, std::numeric_limits<double>::infinity());
  std::vector<double> hi(O, -std::numeric_limits<double>::infinity());
  std::size_t count = 0;
  for (const auto& log : dataset) {
    if (log.d_obs != O) throw std::invalid_argument("fit_normalization: d_obs mismatch");
    if (A != 0 && log.d_act != A) throw std::invalid_argument("fit_normalization: d_act mismatch");
    for (std::size_t t = 0; t < log.length(); ++t) {
      const double* o = log.obs_row(t);
      for (std::size_t i = 0; i < O; ++i) {
        sum[i] += o[i];
        sumsq[i] += o[i] * o[i];
        lo[i] = std::min(lo[i], o[i]);
        hi[i] = std::max(hi[i], o[i]);
      }
      if (A) {
        const double* a = log.act_row(t);
        for (std::size_t i = 0; i < A; ++i) {
          sum[O + i] += a[i];
          sumsq[O + i] += a[i] * a[i];
        }
      }
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("fit_normalization: empty dataset");
  Tensor mean = Tensor::zeros({D}), std_t = Tensor::zeros({D});
  for (std::size_t i = 0; i < D; ++i) {
    const double mu = sum[i] / static_cast<double>(count);
    double var = sumsq[i] / static_cast<double>(count) - mu * mu;
    if (var < 0.0) var = 0.0;
    mean[i] = mu;
    std_t[i] = std::max(std::sqrt(var), 1e-6);  // keep strictly positive
  }
  model.norm_mean = std::move(mean);
  model.norm_std = std::move(std_t);
  model.obs_min = Tensor({O}, std::move(lo));
  model.obs_max = Tensor({O}, std::move(hi));
}

void normalize_obs(const RaptModel& model, const double* raw, double* out) {
  const std::size_t O = model.config.d_obs;
  for (std::size_t i = 0; i < O; ++i) out[i] = (raw[i] - model.norm_mean[i]) / model.norm_std[i];
}

void normalize_act(const RaptModel& model, const double* raw, double* out) {
  const std::size_t O = model.config.d_obs;
  for (std::size_t i = 0; i < model.config.d_act; ++i) {
    out[i] = (raw[i] - model.norm_mean[O + i]) / model.norm_std[O + i];
  }
}

void denormalize_obs(const RaptModel& model, const double* normed, double* out) {
  const std::size_t O = model.config.d_obs;
  for (std::size_t i = 0; i < O; ++i) out[i] = normed[i] * model.norm_std[i] + model.norm_mean[i];
}

GraphModel::GraphModel(const RaptModel& model) : config_(&model.config) {
  const ParamSet& p = model.params;
  enc_w_ = p.at("encoder.proj.weight");
  enc_b_ = p.at("encoder.proj.bias");
  for (std::size_t b = 0; b < config_->n_blocks; ++b) {
    const std::string prefix = "encoder.block" + std::to_string(b);
    blocks_.push_back({p.at(prefix + ".linear.weight"), p.at(prefix + ".linear.bias"),
                       p.at(prefix + ".ln.gamma"), p.at(prefix + ".ln.beta")});
  }
  gru_ = {p.at("gru.w_z"), p.at("gru.u_z"), p.at("gru.b_z"),
          p.at("gru.w_r"), p.at("gru.u_r"), p.at("gru.b_r"),
          p.at("gru.w_n"), p.at("gru.u_n"), p.at("gru.b_in"), p.at("gru.b_hn")};
  lat_w_ = p.at("latent.proj.weight");
  lat_b_ = p.at("latent.proj.bias");
  lat_gamma_ = p.at("latent.ln.gamma");
  lat_beta_ = p.at("latent.ln.beta");
  fc1_w_ = p.at("decoder.fc1.weight");
  fc1_b_ = p.at("decoder.fc1.bias");
  fc2_w_ = p.at("decoder.fc2.weight");
  fc2_b_ = p.at("decoder.fc2.bias");
}

NodePtr GraphModel::encode(const NodePtr& input) const {
  if (input->value.size() != config_->input_dim()) {
    throw std::invalid_argument("encode: input width != configured input_dim");
  }
  NodePtr x = add(matmul(enc_w_, input), enc_b_);
  for (const auto& blk : blocks_) {
    NodePtr lin = add(matmul(blk.w, x), blk.b);
    x = relu(layer_norm(add(x, lin), blk.gamma, blk.beta));
  }
  return x;
}

GraphModel::Step GraphModel::step(const NodePtr& input, const NodePtr& h_prev) const {
  NodePtr e = encode(input);
  gru::Out g = gru::cell(e, h_prev, gru_);
  NodePtr z = relu(layer_norm(add(matmul(lat_w_, g.g), lat_b_), lat_gamma_, lat_beta_));
  NodePtr hid = relu(add(matmul(fc1_w_, z), fc1_b_));
  NodePtr out = add(matmul(fc2_w_, hid), fc2_b_);
  const std::size_t O = config_->d_obs;
  NodePtr mu = slice(out, 0, O);
  NodePtr logvar = clamp(slice(out, O, O), config_->logvar_lo, config_->logvar_hi);
  return {mu, logvar, g.h};
}

NodePtr GraphModel::nll(const NodePtr& target, const Step& s) const {
  return gaussian_nll(target, s.mu, s.logvar);
}

namespace {

template <typename Real>
void copy_param(const ParamSet& p, const std::string& name, std::vector<Real>& dst) {
  const Tensor& t = p.at(name)->value;
  dst.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) dst[i] = static_cast<Real>(t[i]);
}

template <typename Real>
FlatNet<Real> make_flat(const RaptModel& model) {
  FlatNet<Real> f;
  const ModelConfig& c = model.config;
  f.in_dim = c.input_dim();
  f.d_obs = c.d_obs;
  f.d_model = c.d_model;
  f.n_blocks = c.n_blocks;
  f.d_latent = c.d_latent;
  f.logvar_lo = static_cast<Real>(c.logvar_lo);
  f.logvar_hi = static_cast<Real>(c.logvar_hi);
  const ParamSet& p = model.params;
  copy_param(p, "encoder.proj.weight", f.enc_w);
  copy_param(p, "encoder.proj.bias", f.enc_b);
  f.blocks.resize(c.n_blocks);
  for (std::size_t b = 0; b < c.n_blocks; ++b) {
    const std::string prefix = "encoder.block" + std::to_string(b);
    copy_param(p, prefix + ".linear.weight", f.blocks[b].w);
    copy_param(p, prefix + ".linear.bias", f.blocks[b].b);
    copy_param(p, prefix + ".ln.gamma", f.blocks[b].gamma);
    copy_param(p, prefix + ".ln.beta", f.blocks[b].beta);
  }
  copy_param(p, "gru.w_z", f.wz);
  copy_param(p, "gru.u_z", f.uz);
  copy_param(p, "gru.b_z", f.bz);
  copy_param(p, "gru.w_r", f.wr);
  copy_param(p, "gru.u_r", f.ur);
  copy_param(p, "gru.b_r", f.br);
  copy_param(p, "gru.w_n", f.wn);
  copy_param(p, "gru.u_n", f.un);
  copy_param(p, "gru.b_in", f.bin);
  copy_param(p, "gru.b_hn", f.bhn);
  copy_param(p, "latent.proj.weight", f.lat_w);
  copy_param(p, "latent.proj.bias", f.lat_b);
  copy_param(p, "latent.ln.gamma", f.lat_gamma);
  copy_param(p, "latent.ln.beta", f.lat_beta);
  copy_param(p, "decoder.fc1.weight", f.fc1_w);
  copy_param(p, "decoder.fc1.bias", f.fc1_b);
  copy_param(p, "decoder.fc2.weight", f.fc2_w);
  copy_param(p, "decoder.fc2.bias", f.fc2_b);
  f.norm_mean.resize(model.norm_mean.size());
  f.norm_std.resize(model.norm_std.size());
  for (std::size_t i = 0; i < model.norm_mean.size(); ++i) {
    f.norm_mean[i] = static_cast<Real>(model.norm_mean[i]);
    f.norm_std[i] = static_cast<Real>(model.norm_std[i]);
  }
  return f;
}

template <typename Real>
void matvec(const std::vector<Real>& w, const Real* x, std::size_t out_dim, std::size_t in_dim,
            const std::vector<Real>& bias, Real* y) {
  for (std::size_t i = 0; i < out_dim; ++i) {
    const Real* row = w.data() + i * in_dim;
    Real acc = bias.empty() ? Real(0) : bias[i];
    for (std::size_t j = 0; j < in_dim; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

template <typename Real>
void layer_norm_values(Real* x, std::size_t d, const std::vector<Real>& gamma,
                       const std::vector<Real>& beta, Real eps) {
  Real mu = 0;
  for (std::size_t i = 0; i < d; ++i) mu += x[i];
  mu /= static_cast<Real>(d);
  Real var = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const Real c = x[i] - mu;
    var += c * c;
  }
  var /= static_cast<Real>(d);
  const Real inv_std = Real(1) / std::sqrt(var + eps);
  for (std::size_t i = 0; i < d; ++i) x[i] = (x[i] - mu) * inv_std * gamma[i] + beta[i];
}

}  // namespace

template <typename Real>
typename FlatNet<Real>::Scratch FlatNet<Real>::make_scratch() const {
  Scratch s;
  s.e.resize(d_model);
  s.x.resize(d_model);
  s.tmp.resize(d_model);
  s.z.resize(d_model);
  s.r.resize(d_model);
  s.n.resize(d_model);
  s.rec.resize(d_model);
  s.lat.resize(d_latent);
  s.hid1.resize(d_model);
  s.out.resize(2 * d_obs);
  return s;
}

template <typename Real>
void FlatNet<Real>::step(const Real* input, const Real* h_prev, Real* h_out, Real* mu,
                         Real* logvar, Scratch& s) const {
  const std::size_t M = d_model;
  // encoder
  matvec(enc_w, input, M, in_dim, enc_b, s.x.data());
  for (const Block& blk : blocks) {
    matvec(blk.w, s.x.data(), M, M, blk.b, s.tmp.data());
    for (std::size_t i = 0; i < M; ++i) s.tmp[i] += s.x[i];
    layer_norm_values(s.tmp.data(), M, blk.gamma, blk.beta, ln_eps);
    for (std::size_t i = 0; i < M; ++i) s.x[i] = s.tmp[i] > Real(0) ? s.tmp[i] : Real(0);
  }
  // GRU
  matvec(wz, s.x.data(), M, M, bz, s.z.data());
  matvec(uz, h_prev, M, M, {}, s.tmp.data());
  for (std::size_t i = 0; i < M; ++i) s.z[i] = Real(1) / (Real(1) + std::exp(-(s.z[i] + s.tmp[i])));
  matvec(wr, s.x.data(), M, M, br, s.r.data());
  matvec(ur, h_prev, M, M, {}, s.tmp.data());
  for (std::size_t i = 0; i < M; ++i) s.r[i] = Real(1) / (Real(1) + std::exp(-(s.r[i] + s.tmp[i])));
  matvec(un, h_prev, M, M, bhn, s.rec.data());
  matvec(wn, s.x.data(), M, M, bin, s.n.data());
  for (std::size_t i = 0; i < M; ++i) s.n[i] = std::tanh(s.n[i] + s.r[i] * s.rec[i]);
  for (std::size_t i = 0; i < M; ++i) {
    h_out[i] = (Real(1) - s.z[i]) * s.n[i] + s.z[i] * h_prev[i];
  }
  // bottleneck
  matvec(lat_w, h_out, d_latent, M, lat_b, s.lat.data());
  layer_norm_values(s.lat.data(), d_latent, lat_gamma, lat_beta, ln_eps);
  for (std::size_t i = 0; i < d_latent; ++i) s.lat[i] = s.lat[i] > Real(0) ? s.lat[i] : Real(0);
  // decoder
  matvec(fc1_w, s.lat.data(), M, d_latent, fc1_b, s.hid1.data());
  for (std::size_t i = 0; i < M; ++i) s.hid1[i] = s.hid1[i] > Real(0) ? s.hid1[i] : Real(0);
  matvec(fc2_w, s.hid1.data(), 2 * d_obs, M, fc2_b, s.out.data());
  for (std::size_t i = 0; i < d_obs; ++i) {
    mu[i] = s.out[i];
    Real lv = s.out[d_obs + i];
    logvar[i] = std::min(logvar_hi, std::max(logvar_lo, lv));
  }
}

template <typename Real>
void FlatNet<Real>::normalize_obs(const double* raw, Real* out) const {
  for (std::size_t i = 0; i < d_obs; ++i) {
    out[i] = (static_cast<Real>(raw[i]) - norm_mean[i]) / norm_std[i];
  }
}

template <typename Real>
void FlatNet<Real>::normalize_act(const double* raw, Real* out) const {
  const std::size_t a = d_act();
  for (std::size_t i = 0; i < a; ++i) {
    out[i] = (static_cast<Real>(raw[i]) - norm_mean[d_obs + i]) / norm_std[d_obs + i];
  }
}

template struct FlatNet<double>;
template struct FlatNet<float>;

FlatNet<double> make_flat_f64(const RaptModel& model) { return make_flat<double>(model); }
FlatNet<float> make_flat_f32(const RaptModel& model) { return make_flat<float>(model); }

Tensor zero_hidden(const ModelConfig& config) { return Tensor::zeros({config.d_model}); }

namespace {

/// Shared raw stepping for the value-level API (f64 path).
StepOutput flat_step_raw(const RaptModel& model, const FlatNet<double>& f,
                         std::span<const double> obs, std::span<const double> act,
                         std::span<const double> target_obs, const Tensor& h_prev,
                         typename FlatNet<double>::Scratch& scratch) {
  const ModelConfig& c = model.config;
  if (obs.size() != c.d_obs) throw std::invalid_argument("step: observation width mismatch");
  if (h_prev.size() != c.d_model) throw std::invalid_argument("step: hidden width mismatch");
  for (double v : obs) {
    if (!std::isfinite(v)) throw std::invalid_argument("step: non-finite observation");
  }
  std::vector<double> input(c.input_dim());
  f.normalize_obs(obs.data(), input.data());
  if (c.condition_on_actions) {
    if (act.size() != c.d_act) throw std::invalid_argument("step: action width mismatch");
    f.normalize_act(act.data(), input.data() + c.d_obs);
  }
  StepOutput out;
  out.mu = Tensor::zeros({c.d_obs});
  out.logvar = Tensor::zeros({c.d_obs});
  out.hidden = Tensor::zeros({c.d_model});
  f.step(input.data(), h_prev.data(), out.hidden.data(), out.mu.data(), out.logvar.data(),
         scratch);
  std::vector<double> tgt(c.d_obs);
  f.normalize_obs(target_obs.data(), tgt.data());
  out.nll_per_dim = Tensor::zeros({c.d_obs});
  gaussian_nll_values(c.d_obs, tgt.data(), out.mu.data(), out.logvar.data(),
                      out.nll_per_dim.data());
  double acc = 0.0;
  for (std::size_t i = 0; i < c.d_obs; ++i) acc += out.nll_per_dim[i];
  out.nll_mean = acc / static_cast<double>(c.d_obs);
  return out;
}

}  // namespace

StepOutput step(const RaptModel& model, std::span<const double> obs, std::span<const double> act,
                const Tensor& h_prev) {
  FlatNet<double> f = make_flat_f64(model);
  auto scratch = f.make_scratch();
  return flat_step_raw(model, f, obs, act, obs, h_prev, scratch);
}

std::vector<StepOutput> forward_sequence(const RaptModel& model, const TrajectoryLog& window,
                                         const Tensor& h0) {
  const ModelConfig& c = model.config;
  const std::size_t T = window.length();
  if (T == 0) throw std::invalid_argument("forward_sequence: empty window");
  const bool dynamics = c.objective == Objective::kDynamics;
  if (dynamics && T < 2) {
    throw std::invalid_argument("forward_sequence: dynamics objective needs >= 2 steps");
  }
  FlatNet<double> f = make_flat_f64(model);
  auto scratch = f.make_scratch();
  std::vector<StepOutput> outs;
  const std::size_t n_steps = dynamics ? T - 1 : T;
  outs.reserve(n_steps);
  Tensor h = h0;
  for (std::size_t t = 0; t < n_steps; ++t) {
    std::span<const double> target =
        dynamics ? window.obs_span(t + 1) : window.obs_span(t);
    StepOutput s = flat_step_raw(model, f, window.obs_span(t), window.act_span(t), target, h,
                                 scratch);
    h = s.hidden;
    outs.push_back(std::move(s));
  }
  return outs;
}

}  // namespace rapt
