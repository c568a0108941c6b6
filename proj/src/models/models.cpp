#include "jsa/models.hpp"

#include <algorithm>
#include <cmath>

#include "jsa/errors.hpp"

namespace jsa {

namespace {

// Guards log() against softmax underflow; sigmoid outputs are already clamped.
constexpr double kTinyProb = 1e-300;

DenseArray as_row_matrix(const DenseArray& a) {
  if (a.rank() == 2) return a;
  return DenseArray({1, a.size()}, a.storage());
}

Latent as_row_latent(const Latent& h) {
  Latent out;
  out.reserve(h.size());
  for (const auto& layer : h) out.push_back(as_row_matrix(layer));
  return out;
}

void check_context(std::size_t context_width, const DenseArray& c, std::size_t rows) {
  if (context_width == 0) {
    if (!c.empty()) throw shape_error("context given to an unconditional model");
    return;
  }
  if (c.empty()) throw shape_error("conditional model requires a context");
  if (c.cols() != context_width || c.rows() != rows) {
    throw shape_error("context shape does not match the model (" + std::to_string(context_width) +
                      " columns expected)");
  }
}

void check_obs(std::size_t obs_width, const DenseArray& x) {
  if (x.cols() != obs_width) {
    throw shape_error("observation width " + std::to_string(x.cols()) + " but the model expects " +
                      std::to_string(obs_width));
  }
}

void add_log_mass(const StochasticLayerSpec& s, const DenseArray& p, const DenseArray& h,
                  std::vector<double>& lp) {
  const std::size_t rows = p.rows(), w = p.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto pr = p.row(r);
    const auto hr = h.row(r);
    double acc = 0.0;
    if (s.kind == LatentKind::Bernoulli) {
      for (std::size_t j = 0; j < w; ++j) acc += hr[j] != 0.0 ? std::log(pr[j]) : std::log1p(-pr[j]);
    } else {
      for (std::size_t j = 0; j < w; ++j) {
        if (hr[j] != 0.0) acc += std::log(std::max(pr[j], kTinyProb));
      }
    }
    lp[r] += acc;
  }
}

// d/dp of sum_r weight[r] * log-mass(h_r | p_r).
DenseArray log_mass_grad(const StochasticLayerSpec& s, const DenseArray& p, const DenseArray& h,
                         std::span<const double> weight) {
  DenseArray g = DenseArray::matrix(p.rows(), p.cols());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const double wr = weight[r];
    const auto pr = p.row(r);
    const auto hr = h.row(r);
    auto gr = g.row(r);
    if (s.kind == LatentKind::Bernoulli) {
      for (std::size_t j = 0; j < pr.size(); ++j) {
        gr[j] = wr * (hr[j] / pr[j] - (1.0 - hr[j]) / (1.0 - pr[j]));
      }
    } else {
      for (std::size_t j = 0; j < pr.size(); ++j) {
        gr[j] = hr[j] != 0.0 ? wr * hr[j] / std::max(pr[j], kTinyProb) : 0.0;
      }
    }
  }
  return g;
}

DenseArray sample_layer(const StochasticLayerSpec& s, const DenseArray& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  DenseArray h = DenseArray::matrix(p.rows(), p.cols());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const auto pr = p.row(r);
    auto hr = h.row(r);
    if (s.kind == LatentKind::Bernoulli) {
      for (std::size_t j = 0; j < pr.size(); ++j) hr[j] = unif(rng) < pr[j] ? 1.0 : 0.0;
    } else {
      for (std::size_t v = 0; v < s.n_vars; ++v) {
        const std::size_t o = v * s.n_categories;
        const double u = unif(rng);
        double cum = 0.0;
        std::size_t pick = s.n_categories - 1;
        for (std::size_t k = 0; k < s.n_categories; ++k) {
          cum += pr[o + k];
          if (u < cum) {
            pick = k;
            break;
          }
        }
        hr[o + pick] = 1.0;
      }
    }
  }
  return h;
}

DenseArray prior_input(const GenerativeModel& gen, const DenseArray& c, std::size_t rows) {
  return gen.context_width > 0 ? c : DenseArray({rows, 0});
}

DenseArray bottom_decoder_input(const GenerativeModel& gen, const DenseArray& h1,
                                const DenseArray& c) {
  return gen.context_width > 0 ? hcat(h1, c) : h1;
}

DenseArray first_encoder_input(const InferenceModel& inf, const DenseArray& x, const DenseArray& c) {
  return inf.context_width > 0 ? hcat(c, x) : x;
}

void prepare_gen(const GenerativeModel& gen, const DenseArray& x, const Latent& h,
                 const DenseArray& c) {
  check_obs(gen.obs_width, x);
  check_context(gen.context_width, c, x.rows());
  validate_latent(gen.latents, h, x.rows());
}

void prepare_inf(const InferenceModel& inf, const DenseArray& x, const Latent& h,
                 const DenseArray& c) {
  check_obs(inf.obs_width, x);
  check_context(inf.context_width, c, x.rows());
  validate_latent(inf.latents, h, x.rows());
}

// Shared body of log_joint_rows / accumulate_grad_log_joint. With an empty
// `grad` only the values are computed.
std::vector<double> gen_pass(const GenerativeModel& gen, const DenseArray& x, const Latent& h,
                             const DenseArray& c, std::span<const double> weight,
                             std::span<double> grad) {
  prepare_gen(gen, x, h, c);
  const std::size_t rows = x.rows();
  const std::size_t top = gen.latents.size() - 1;
  const bool with_grad = !grad.empty();
  std::vector<double> lp(rows, 0.0);

  std::size_t offset = 0;
  auto visit = [&](const LayeredNet& net, const DenseArray& input, const StochasticLayerSpec& spec,
                   const DenseArray& target) {
    const Activations acts = net.forward(input);
    add_log_mass(spec, acts.back(), target, lp);
    if (with_grad) {
      const DenseArray g = log_mass_grad(spec, acts.back(), target, weight);
      net.backward_accumulate(acts, g, grad.subspan(offset, net.num_params()), nullptr);
    }
    offset += net.num_params();
  };

  visit(gen.prior, prior_input(gen, c, rows), gen.latents[top], h[top]);
  visit(gen.decoders[0], bottom_decoder_input(gen, h[0], c),
        StochasticLayerSpec::bernoulli(gen.obs_width), x);
  for (std::size_t k = 1; k <= top; ++k) visit(gen.decoders[k], h[k], gen.latents[k - 1], h[k - 1]);
  return lp;
}

std::vector<double> inf_pass(const InferenceModel& inf, const Latent& h, const DenseArray& x,
                             const DenseArray& c, std::span<const double> weight,
                             std::span<double> grad) {
  prepare_inf(inf, x, h, c);
  const bool with_grad = !grad.empty();
  std::vector<double> lp(x.rows(), 0.0);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < inf.encoders.size(); ++k) {
    const LayeredNet& net = inf.encoders[k];
    const Activations acts = net.forward(k == 0 ? first_encoder_input(inf, x, c) : h[k - 1]);
    add_log_mass(inf.latents[k], acts.back(), h[k], lp);
    if (with_grad) {
      const DenseArray g = log_mass_grad(inf.latents[k], acts.back(), h[k], weight);
      net.backward_accumulate(acts, g, grad.subspan(offset, net.num_params()), nullptr);
    }
    offset += net.num_params();
  }
  return lp;
}

template <class Nets>
std::size_t count_params(const Nets& nets) {
  std::size_t n = 0;
  for (const auto& net : nets) n += net.num_params();
  return n;
}

void copy_out(const LayeredNet& net, std::span<double> out, std::size_t& offset) {
  std::copy(net.params().begin(), net.params().end(), out.begin() + static_cast<long>(offset));
  offset += net.num_params();
}

void copy_in(LayeredNet& net, std::span<const double> in, std::size_t& offset) {
  auto p = net.params();
  std::copy_n(in.begin() + static_cast<long>(offset), p.size(), p.begin());
  offset += p.size();
}

}  // namespace

StochasticLayerSpec StochasticLayerSpec::bernoulli(std::size_t width) {
  return {LatentKind::Bernoulli, width, 0, 0};
}

StochasticLayerSpec StochasticLayerSpec::categorical(std::size_t n_vars, std::size_t n_categories) {
  return {LatentKind::Categorical, n_vars * n_categories, n_vars, n_categories};
}

double StochasticLayerSpec::log2_support() const {
  if (kind == LatentKind::Bernoulli) return static_cast<double>(width);
  return static_cast<double>(n_vars) * std::log2(static_cast<double>(n_categories));
}

std::string StochasticLayerSpec::describe() const {
  if (kind == LatentKind::Bernoulli) return "B" + std::to_string(width);
  return "C" + std::to_string(n_vars) + "x" + std::to_string(n_categories);
}

const DenseArray& no_context() {
  static const DenseArray empty;
  return empty;
}

std::size_t GenerativeModel::num_params() const {
  return prior.num_params() + count_params(decoders);
}

void GenerativeModel::get_params(std::span<double> out) const {
  if (out.size() != num_params()) throw shape_error("GenerativeModel::get_params: wrong length");
  std::size_t offset = 0;
  copy_out(prior, out, offset);
  for (const auto& d : decoders) copy_out(d, out, offset);
}

void GenerativeModel::set_params(std::span<const double> in) {
  if (in.size() != num_params()) throw shape_error("GenerativeModel::set_params: wrong length");
  std::size_t offset = 0;
  copy_in(prior, in, offset);
  for (auto& d : decoders) copy_in(d, in, offset);
}

std::size_t InferenceModel::num_params() const { return count_params(encoders); }

void InferenceModel::get_params(std::span<double> out) const {
  if (out.size() != num_params()) throw shape_error("InferenceModel::get_params: wrong length");
  std::size_t offset = 0;
  for (const auto& e : encoders) copy_out(e, out, offset);
}

void InferenceModel::set_params(std::span<const double> in) {
  if (in.size() != num_params()) throw shape_error("InferenceModel::set_params: wrong length");
  std::size_t offset = 0;
  for (auto& e : encoders) copy_in(e, in, offset);
}

std::vector<double> ModelPair::get_lambda() const {
  std::vector<double> lambda(num_theta() + num_phi());
  std::span<double> s(lambda);
  gen.get_params(s.first(num_theta()));
  inf.get_params(s.subspan(num_theta()));
  return lambda;
}

void ModelPair::set_lambda(std::span<const double> lambda) {
  if (lambda.size() != num_theta() + num_phi()) throw shape_error("ModelPair::set_lambda: wrong length");
  gen.set_params(lambda.first(num_theta()));
  inf.set_params(lambda.subspan(num_theta()));
}

void validate_latent(const std::vector<StochasticLayerSpec>& specs, const Latent& h,
                     std::size_t rows) {
  if (h.size() != specs.size()) {
    throw shape_error("latent has " + std::to_string(h.size()) + " layers, model has " +
                      std::to_string(specs.size()));
  }
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto& s = specs[k];
    if (h[k].rows() != rows || h[k].cols() != s.width) {
      throw shape_error("latent layer " + std::to_string(k) + " must be [" + std::to_string(rows) +
                        ", " + std::to_string(s.width) + "]");
    }
    for (double v : h[k].values()) {
      if (v != 0.0 && v != 1.0) throw domain_error("latent layer " + std::to_string(k) + " is not binary");
    }
    if (s.kind == LatentKind::Categorical) {
      for (std::size_t r = 0; r < rows; ++r) {
        const auto hr = h[k].row(r);
        for (std::size_t v = 0; v < s.n_vars; ++v) {
          double sum = 0.0;
          for (std::size_t j = 0; j < s.n_categories; ++j) sum += hr[v * s.n_categories + j];
          if (sum != 1.0) {
            throw domain_error("latent layer " + std::to_string(k) + " variable " +
                               std::to_string(v) + " is not one-hot");
          }
        }
      }
    }
  }
}

std::vector<double> log_joint_rows(const GenerativeModel& gen, const DenseArray& x,
                                   const Latent& h, const DenseArray& c) {
  return gen_pass(gen, x, h, c, {}, {});
}

std::vector<double> log_q_rows(const InferenceModel& inf, const Latent& h, const DenseArray& x,
                               const DenseArray& c) {
  return inf_pass(inf, h, x, c, {}, {});
}

std::vector<double> accumulate_grad_log_joint(const GenerativeModel& gen, const DenseArray& x,
                                              const Latent& h, const DenseArray& c,
                                              std::span<const double> weight,
                                              std::span<double> grad) {
  if (weight.size() != x.rows()) throw shape_error("accumulate_grad_log_joint: one weight per row");
  if (grad.size() != gen.num_params()) throw shape_error("accumulate_grad_log_joint: gradient length");
  return gen_pass(gen, x, h, c, weight, grad);
}

std::vector<double> accumulate_grad_log_q(const InferenceModel& inf, const Latent& h,
                                          const DenseArray& x, const DenseArray& c,
                                          std::span<const double> weight, std::span<double> grad) {
  if (weight.size() != x.rows()) throw shape_error("accumulate_grad_log_q: one weight per row");
  if (grad.size() != inf.num_params()) throw shape_error("accumulate_grad_log_q: gradient length");
  return inf_pass(inf, h, x, c, weight, grad);
}

double log_joint(const GenerativeModel& gen, const DenseArray& x, const Latent& h,
                 const DenseArray& c) {
  const DenseArray cm = c.empty() ? c : as_row_matrix(c);
  return log_joint_rows(gen, as_row_matrix(x), as_row_latent(h), cm)[0];
}

DenseArray grad_log_joint(const GenerativeModel& gen, const DenseArray& x, const Latent& h,
                          const DenseArray& c) {
  DenseArray g = DenseArray::vector(std::vector<double>(gen.num_params(), 0.0));
  const double one = 1.0;
  const DenseArray cm = c.empty() ? c : as_row_matrix(c);
  accumulate_grad_log_joint(gen, as_row_matrix(x), as_row_latent(h), cm, {&one, 1}, g.values());
  return g;
}

double log_q(const InferenceModel& inf, const Latent& h, const DenseArray& x, const DenseArray& c) {
  const DenseArray cm = c.empty() ? c : as_row_matrix(c);
  return log_q_rows(inf, as_row_latent(h), as_row_matrix(x), cm)[0];
}

DenseArray grad_log_q(const InferenceModel& inf, const Latent& h, const DenseArray& x,
                      const DenseArray& c) {
  DenseArray g = DenseArray::vector(std::vector<double>(inf.num_params(), 0.0));
  const double one = 1.0;
  const DenseArray cm = c.empty() ? c : as_row_matrix(c);
  accumulate_grad_log_q(inf, as_row_latent(h), as_row_matrix(x), cm, {&one, 1}, g.values());
  return g;
}

Proposals propose(const InferenceModel& inf, const DenseArray& x, const DenseArray& c,
                  std::size_t repeats, std::mt19937_64& rng) {
  check_obs(inf.obs_width, x);
  check_context(inf.context_width, c, x.rows());
  Proposals out;
  out.log_q.assign(x.rows() * repeats, 0.0);
  out.h.reserve(inf.latents.size());

  // The first encoder only sees x, so it runs once per point, not per repeat.
  const DenseArray p0 = inf.encoders[0].forward(first_encoder_input(inf, x, c)).back();
  const DenseArray p0_rep = repeat_rows(p0, repeats);
  out.h.push_back(sample_layer(inf.latents[0], p0_rep, rng));
  add_log_mass(inf.latents[0], p0_rep, out.h[0], out.log_q);
  for (std::size_t k = 1; k < inf.encoders.size(); ++k) {
    const DenseArray p = inf.encoders[k].forward(out.h[k - 1]).back();
    out.h.push_back(sample_layer(inf.latents[k], p, rng));
    add_log_mass(inf.latents[k], p, out.h[k], out.log_q);
  }
  return out;
}

Latent sample_q(const InferenceModel& inf, const DenseArray& x, const DenseArray& c,
                std::mt19937_64& rng) {
  const DenseArray cm = c.empty() ? c : as_row_matrix(c);
  Latent h = propose(inf, as_row_matrix(x), cm, 1, rng).h;
  for (auto& layer : h) layer.reshape({layer.size()});
  return h;
}

Latent gather_latent_rows(const Latent& h, std::span<const std::size_t> index) {
  Latent out;
  out.reserve(h.size());
  for (const auto& layer : h) out.push_back(gather_rows(layer, index));
  return out;
}

Latent latent_row(const Latent& h, std::size_t r) {
  const std::size_t idx[1] = {r};
  return gather_latent_rows(h, idx);
}

}  // namespace jsa
