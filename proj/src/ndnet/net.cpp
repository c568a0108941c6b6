#include "jsa/net.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "jsa/errors.hpp"
#include "jsa/kernels.hpp"

namespace jsa {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

DenseArray as_matrix(const DenseArray& a) {
  if (a.rank() == 2) return a;
  if (a.rank() == 1) return DenseArray({1, a.size()}, a.storage());
  throw shape_error("LayeredNet: input must be a vector or a matrix");
}

double sigmoid(double a) {
  if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

}  // namespace

LayeredNet& LayeredNet::add_linear(std::size_t out) {
  const std::size_t in = output_width();
  layers_.push_back(layer::Linear{in, out, params_.size()});
  params_.resize(params_.size() + in * out + out, 0.0);
  return *this;
}

LayeredNet& LayeredNet::add_leaky_relu(double slope) {
  layers_.push_back(layer::LeakyReLU{slope});
  return *this;
}

LayeredNet& LayeredNet::add_tanh() {
  layers_.push_back(layer::Tanh{});
  return *this;
}

LayeredNet& LayeredNet::add_sigmoid() {
  layers_.push_back(layer::Sigmoid{});
  return *this;
}

LayeredNet& LayeredNet::add_group_softmax(std::size_t groups, std::size_t group_size) {
  if (groups * group_size != output_width()) {
    throw shape_error("GroupSoftmax: " + std::to_string(groups) + "x" +
                      std::to_string(group_size) + " does not match width " +
                      std::to_string(output_width()));
  }
  layers_.push_back(layer::GroupSoftmax{groups, group_size});
  return *this;
}

std::size_t LayeredNet::output_width() const noexcept {
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    if (const auto* lin = std::get_if<layer::Linear>(&*it)) return lin->out;
  }
  return input_width_;
}

void LayeredNet::init_params(std::mt19937_64& rng) {
  for (const Layer& l : layers_) {
    const auto* lin = std::get_if<layer::Linear>(&l);
    if (lin == nullptr) continue;
    const double a = std::sqrt(6.0 / static_cast<double>(lin->in + lin->out));
    std::uniform_real_distribution<double> u(-a, a);
    double* w = params_.data() + lin->offset;
    for (std::size_t i = 0; i < lin->in * lin->out; ++i) w[i] = u(rng);
    std::fill_n(w + lin->in * lin->out, lin->out, 0.0);
  }
}

Activations LayeredNet::forward(const DenseArray& input) const {
  Activations acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(as_matrix(input));
  if (acts[0].cols() != input_width_) {
    throw shape_error("LayeredNet::forward: input width " + std::to_string(acts[0].cols()) +
                      " but the net expects " + std::to_string(input_width_));
  }
  const std::size_t batch = acts[0].rows();

  for (const Layer& l : layers_) {
    const DenseArray& x = acts.back();
    DenseArray y = std::visit(
        overloaded{
            [&](const layer::Linear& lin) {
              DenseArray out = DenseArray::matrix(batch, lin.out);
              std::span<const double> p(params_);
              kernels::affine_forward({batch, lin.in, lin.out}, x.values(),
                                      p.subspan(lin.offset, lin.in * lin.out),
                                      p.subspan(lin.offset + lin.in * lin.out, lin.out),
                                      out.values());
              return out;
            },
            [&](const layer::LeakyReLU& r) {
              DenseArray out = x;
              for (double& v : out.storage()) v = v > 0 ? v : r.slope * v;
              return out;
            },
            [&](const layer::Tanh&) {
              DenseArray out = x;
              for (double& v : out.storage()) v = std::tanh(v);
              return out;
            },
            [&](const layer::Sigmoid&) {
              DenseArray out = x;
              for (double& v : out.storage()) {
                v = std::clamp(sigmoid(v), kProbClamp, 1.0 - kProbClamp);
              }
              return out;
            },
            [&](const layer::GroupSoftmax& g) {
              DenseArray out = x;
              for (std::size_t r = 0; r < batch; ++r) {
                auto row = out.row(r);
                for (std::size_t k = 0; k < g.groups; ++k) {
                  auto grp = row.subspan(k * g.group_size, g.group_size);
                  const double m = *std::max_element(grp.begin(), grp.end());
                  double s = 0.0;
                  for (double& v : grp) s += (v = std::exp(v - m));
                  for (double& v : grp) v /= s;
                }
              }
              return out;
            },
        },
        l);
    acts.push_back(std::move(y));
  }
  require_finite(acts.back(), "LayeredNet::forward output");
  return acts;
}

NetGradients LayeredNet::backward(const Activations& acts, const DenseArray& grad_output) const {
  NetGradients g;
  g.params = DenseArray::vector(std::vector<double>(params_.size(), 0.0));
  backward_accumulate(acts, grad_output, g.params.values(), &g.input);
  return g;
}

void LayeredNet::backward_accumulate(const Activations& acts, const DenseArray& grad_output,
                                     std::span<double> param_grads,
                                     DenseArray* input_grad) const {
  if (acts.size() != layers_.size() + 1) {
    throw state_error("LayeredNet::backward: activation list does not belong to this net");
  }
  const std::size_t batch = acts[0].rows();
  if (grad_output.size() != acts.back().size()) {
    throw state_error("LayeredNet::backward: grad_output shape does not match the output");
  }
  if (param_grads.size() != params_.size()) {
    throw shape_error("LayeredNet::backward: parameter gradient buffer has the wrong length");
  }

  DenseArray grad({batch, acts.back().cols()}, grad_output.storage());
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const DenseArray& x = acts[li];
    const DenseArray& y = acts[li + 1];
    if (x.rows() != batch || y.size() != grad.size()) {
      throw state_error("LayeredNet::backward: activation shapes do not match the layers");
    }
    const bool need_input = li > 0 || input_grad != nullptr;
    std::visit(
        overloaded{
            [&](const layer::Linear& lin) {
              std::span<const double> p(params_);
              const kernels::AffineDims d{batch, lin.in, lin.out};
              kernels::affine_backward_params(
                  d, x.values(), grad.values(), param_grads.subspan(lin.offset, lin.in * lin.out),
                  param_grads.subspan(lin.offset + lin.in * lin.out, lin.out));
              if (need_input) {
                DenseArray dx = DenseArray::matrix(batch, lin.in);
                kernels::affine_backward_input(d, grad.values(), p.subspan(lin.offset, lin.in * lin.out),
                                               dx.values());
                grad = std::move(dx);
              }
            },
            [&](const layer::LeakyReLU& r) {
              for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= y[i] > 0 ? 1.0 : r.slope;
            },
            [&](const layer::Tanh&) {
              for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= 1.0 - y[i] * y[i];
            },
            [&](const layer::Sigmoid&) {
              for (std::size_t i = 0; i < grad.size(); ++i) {
                const double p = y[i];
                const bool clamped = p <= kProbClamp || p >= 1.0 - kProbClamp;
                grad[i] *= clamped ? 0.0 : p * (1.0 - p);
              }
            },
            [&](const layer::GroupSoftmax& gs) {
              for (std::size_t r = 0; r < batch; ++r) {
                auto gr = grad.row(r);
                auto pr = y.row(r);
                for (std::size_t k = 0; k < gs.groups; ++k) {
                  const std::size_t o = k * gs.group_size;
                  double s = 0.0;
                  for (std::size_t j = 0; j < gs.group_size; ++j) s += pr[o + j] * gr[o + j];
                  for (std::size_t j = 0; j < gs.group_size; ++j) {
                    gr[o + j] = pr[o + j] * (gr[o + j] - s);
                  }
                }
              }
            },
        },
        layers_[li]);
  }
  if (input_grad != nullptr) *input_grad = std::move(grad);
}

std::string LayeredNet::describe() const {
  std::ostringstream os;
  os << input_width_;
  for (const Layer& l : layers_) {
    std::visit(overloaded{
                   [&](const layer::Linear& lin) { os << '-' << lin.out; },
                   [&](const layer::LeakyReLU&) { os << 'r'; },
                   [&](const layer::Tanh&) { os << 't'; },
                   [&](const layer::Sigmoid&) { os << 's'; },
                   [&](const layer::GroupSoftmax&) { os << 'm'; },
               },
               l);
  }
  return os.str();
}

DenseArray finite_diff_grad(const std::function<double(std::span<const double>)>& fn,
                            const DenseArray& params, double eps) {
  std::vector<std::size_t> all(params.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return DenseArray(params.shape(), finite_diff_grad(fn, params.values(), eps, all));
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& fn,
                                     std::span<const double> params, double eps,
                                     std::span<const std::size_t> coords) {
  if (!(eps > 0)) throw domain_error("finite_diff_grad: eps must be positive");
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> out(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const std::size_t c = coords[i];
    const double saved = p[c];
    p[c] = saved + eps;
    const double fp = fn(p);
    p[c] = saved - eps;
    const double fm = fn(p);
    p[c] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw numeric_error("finite_diff_grad: non-finite function value at coordinate " +
                          std::to_string(c));
    }
    out[i] = (fp - fm) / (2.0 * eps);
  }
  return out;
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

AdamState AdamState::for_params(std::size_t n, double lr) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.lr = lr;
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size()) throw shape_error("adam_step: params and grads differ in length");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw shape_error("adam_step: optimizer moments do not match the parameter vector");
  }
  require_finite(grads, "adam_step gradient");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

}  // namespace jsa
