#include "gabvit/gradcheck.hpp"

#include "gabvit/erf.hpp"
#include "gabvit/rng.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gabvit {

AuditResult compare_gradients(std::string name, const Eigen::ArrayXd& analytic, const Eigen::ArrayXd& numeric,
                              const GradTolerance& tol) {
  if (analytic.size() != numeric.size()) throw std::invalid_argument(name + ": gradient sizes differ");
  AuditResult r;
  r.name = std::move(name);
  r.checked = static_cast<std::size_t>(analytic.size());
  const double floor = tol.atol / tol.rtol;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]);
    r.max_abs_error = std::max(r.max_abs_error, err);
    r.max_rel_error = std::max(r.max_rel_error, err / (std::abs(numeric[i]) + floor));
    if (!std::isfinite(analytic[i])) r.max_rel_error = std::numeric_limits<double>::infinity();
  }
  r.passed = r.max_rel_error <= tol.rtol;
  return r;
}

bool GradcheckReport::passed() const {
  for (const auto& r : results) {
    if (!r.passed) return false;
  }
  return true;
}

namespace {

struct Domain {
  double lo = -1;
  double hi = 1;
  double gap = 0;  // keep |x| >= gap, away from kinks
};

template <class Scalar>
std::vector<BasicTensor<Scalar>> make_inputs(const std::vector<Shape>& shapes, const std::vector<Eigen::ArrayXd>& values,
                                             bool requires_grad) {
  std::vector<BasicTensor<Scalar>> out;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    out.emplace_back(shapes[i], values[i].cast<Scalar>().eval(), requires_grad);
  }
  return out;
}

// Projects a non-scalar output onto fixed weights so every output entry
// contributes to the checked scalar.
template <class F>
GradAudit op_audit(std::string name, std::vector<Shape> shapes, F f, Domain domain = {}) {
  GradAudit audit;
  audit.name = name;
  audit.run = [name, shapes, f, domain](std::uint64_t seed, const GradTolerance& tol) {
    Rng rng(seed, name);
    std::vector<Eigen::ArrayXd> values;
    for (const auto& s : shapes) {
      Eigen::ArrayXd v(static_cast<Eigen::Index>(shape_numel(s)));
      for (Eigen::Index k = 0; k < v.size(); ++k) {
        double x = rng.uniform(domain.lo, domain.hi);
        if (std::abs(x) < domain.gap) x = std::copysign(domain.gap + std::abs(x), x);
        v[k] = static_cast<float>(x);
      }
      values.push_back(std::move(v));
    }

    Eigen::ArrayXd analytic;
    Eigen::ArrayXd weights;
    {
      TapeScope scope;
      auto in = make_inputs<float>(shapes, values, true);
      auto out = f(in);
      weights.resize(static_cast<Eigen::Index>(out.numel()));
      for (Eigen::Index k = 0; k < weights.size(); ++k) weights[k] = static_cast<float>(rng.uniform(-1, 1));
      auto w = BasicTensor<float>(out.shape(), weights.cast<float>().eval());
      backward(sum(mul(out, w)));
      analytic.resize(0);
      for (const auto& t : in) {
        const Eigen::ArrayXd g = t.has_grad() ? t.grad().template cast<double>().eval()
                                              : Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(t.numel())).eval();
        Eigen::ArrayXd joined(analytic.size() + g.size());
        joined << analytic, g;
        analytic = std::move(joined);
      }
    }

    NoGradGuard no_grad;
    const auto eval = [&](const std::vector<Eigen::ArrayXd>& at) {
      auto in = make_inputs<double>(shapes, at, false);
      return (f(in).data() * weights).sum();
    };
    Eigen::ArrayXd numeric(analytic.size());
    Eigen::Index pos = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      for (Eigen::Index k = 0; k < values[i].size(); ++k) {
        auto plus = values, minus = values;
        plus[i][k] += tol.step;
        minus[i][k] -= tol.step;
        numeric[pos++] = (eval(plus) - eval(minus)) / (2 * tol.step);
      }
    }
    return compare_gradients(name, analytic, numeric, tol);
  };
  return audit;
}

// Central differences on a float64 twin of a float32 model, perturbing one
// named scalar parameter.
double parameter_fd(const ViTModel<double>& model, const BasicTensor<double>& param, Eigen::Index k, double step,
                    const std::function<double(const ViTModel<double>&)>& objective) {
  auto p = param;
  auto& data = p.mutable_data();
  const double saved = data[k];
  data[k] = saved + step;
  const double up = objective(model);
  data[k] = saved - step;
  const double down = objective(model);
  data[k] = saved;
  return (up - down) / (2 * step);
}

Tensor random_image(const ViTConfig& cfg, std::uint64_t seed) { return noise_images(cfg, seed, 1).front(); }

}  // namespace

std::vector<GradAudit> op_audits() {
  std::vector<GradAudit> audits;
  audits.push_back(op_audit("add", {{3, 4}, {3, 4}}, [](const auto& in) { return add(in[0], in[1]); }));
  audits.push_back(op_audit("mul", {{3, 4}, {3, 4}}, [](const auto& in) { return mul(in[0], in[1]); }));
  audits.push_back(op_audit("mul_scalar", {{3, 4}}, [](const auto& in) {
    using S = typename std::decay_t<decltype(in[0])>::Array::Scalar;
    return mul_scalar(in[0], S(-0.75));
  }));
  audits.push_back(op_audit("add_scalar", {{3, 4}}, [](const auto& in) {
    using S = typename std::decay_t<decltype(in[0])>::Array::Scalar;
    return add_scalar(in[0], S(2.5));
  }));
  audits.push_back(op_audit("exp", {{3, 4}}, [](const auto& in) { return exp(in[0]); }));
  audits.push_back(op_audit("relu", {{3, 4}}, [](const auto& in) { return relu(in[0]); }, {-1, 1, 0.05}));
  audits.push_back(op_audit("gelu", {{3, 4}}, [](const auto& in) { return gelu(in[0]); }, {-3, 3, 0}));
  audits.push_back(op_audit("sum", {{3, 4}}, [](const auto& in) { return sum(in[0]); }));
  audits.push_back(op_audit("mean_over_dim", {{2, 3, 4}}, [](const auto& in) {
    // Every axis position of a rank-3 tensor, each reduced to [2 x 4].
    return add(add(mean_over_dim(in[0], 1), mean_over_dim(reshape(in[0], {2, 4, 3}), 2)),
               mean_over_dim(reshape(in[0], {3, 2, 4}), 0));
  }));
  audits.push_back(op_audit("transpose_last_two", {{2, 3, 4}}, [](const auto& in) { return transpose_last_two(in[0]); }));
  audits.push_back(op_audit("reshape", {{3, 4}}, [](const auto& in) { return reshape(in[0], {2, 6}); }));
  audits.push_back(op_audit("gather", {{3, 4}}, [](const auto& in) {
    return gather(in[0], make_indices({0, 5, 5, 11, 2, 7, 0, 3}), {2, 4});
  }));
  audits.push_back(op_audit("matmul", {{3, 4}, {4, 5}}, [](const auto& in) { return matmul(in[0], in[1]); }));
  audits.push_back(op_audit("softmax_lastdim", {{3, 5}}, [](const auto& in) { return softmax_lastdim(in[0]); },
                            {-3, 3, 0}));
  audits.push_back(op_audit("layernorm", {{3, 6}, {6}, {6}}, [](const auto& in) {
    using S = typename std::decay_t<decltype(in[0])>::Array::Scalar;
    return layernorm(in[0], in[1], in[2], S(1e-6));
  }));
  audits.push_back(op_audit("cross_entropy", {{5}}, [](const auto& in) { return cross_entropy(in[0], 2); },
                            {-2, 2, 0}));
  audits.push_back(op_audit("gaussian_table", {{1}, {1}},
                            [](const auto& in) { return gaussian_table(in[0], in[1], 3, 4).values; },
                            {0.6, 1.6, 0}));
  return audits;
}

std::vector<GradAudit> model_audits(const ViTConfig& config) {
  std::vector<GradAudit> audits;
  const auto loss_of = [](const ViTModel<double>& m, const Tensor64& image, std::size_t label) {
    NoGradGuard no_grad;
    return cross_entropy(forward(image, m).logits, label).item();
  };

  if (config.use_gab) {
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      for (const bool amplitude : {true, false}) {
        const std::string name =
            std::string(amplitude ? "dloss/dA_" : "dloss/dsigma_") + std::to_string(l);
        audits.push_back({name, [config, l, amplitude, name, loss_of](std::uint64_t seed, const GradTolerance& tol) {
                            ViTModel<float> model(config, seed);
                            Rng rng(seed, name);
                            // Off the init point so every layer carries a distinct, non-trivial bias.
                            for (std::size_t k = 0; k < config.num_layers; ++k) {
                              model.gab->set(k, static_cast<float>(rng.uniform(0.5, 1.5)),
                                             static_cast<float>(rng.uniform(0.6, 1.4)));
                            }
                            const auto image = random_image(config, seed);
                            const std::size_t label = seed % config.num_classes;
                            const auto& param = amplitude ? model.gab->amplitude(l) : model.gab->width(l);
                            double analytic = 0;
                            {
                              TapeScope scope;
                              model.zero_grad();
                              backward(cross_entropy(forward(image, model).logits, label));
                              analytic = param.has_grad() ? param.grad()[0] : 0.0;
                            }
                            const auto twin = model.cast<double>();
                            const auto& p64 = amplitude ? twin.gab->amplitude(l) : twin.gab->width(l);
                            const auto image64 = image.cast<double>();
                            const double numeric = parameter_fd(twin, p64, 0, tol.step, [&](const ViTModel<double>& m) {
                              return loss_of(m, image64, label);
                            });
                            return compare_gradients(name, Eigen::ArrayXd::Constant(1, analytic),
                                                     Eigen::ArrayXd::Constant(1, numeric), tol);
                          }});
      }
    }
  }

  audits.push_back({"dY/dx", [config](std::uint64_t seed, const GradTolerance& tol) {
                      ViTModel<float> model(config, seed);
                      const auto target = central_patch_index(config.grid_h(), config.grid_w());
                      const auto image = random_image(config, seed);
                      Eigen::ArrayXd analytic;
                      {
                        // Full per-channel gradient, not the channel mean used by the ERF.
                        TapeScope scope;
                        auto x = image.detach();
                        x.set_requires_grad(true);
                        auto y = forward(x, model).features;
                        auto feature = mean_over_dim(reshape(select_rows(y, target, 1), {config.embed_dim}), 0);
                        const std::array<Tensor, 1> only{x};
                        backward(feature, std::span<const Tensor>(only));
                        analytic = x.grad().cast<double>();
                      }
                      NoGradGuard no_grad;
                      const auto twin = model.cast<double>();
                      auto x64 = image.cast<double>();
                      Eigen::ArrayXd base = x64.data();
                      Eigen::ArrayXd numeric(base.size());
                      const auto objective = [&](const Eigen::ArrayXd& at) {
                        Tensor64 img(x64.shape(), at);
                        auto y = forward(img, twin).features;
                        return y.matrix().row(static_cast<Eigen::Index>(target)).mean();
                      };
                      for (Eigen::Index k = 0; k < base.size(); ++k) {
                        Eigen::ArrayXd up = base, down = base;
                        up[k] += tol.step;
                        down[k] -= tol.step;
                        numeric[k] = (objective(up) - objective(down)) / (2 * tol.step);
                      }
                      return compare_gradients("dY/dx", analytic, numeric, tol);
                    }});
  return audits;
}

GradcheckReport run_gradcheck(const ViTConfig& config, std::uint64_t seed, const std::vector<GradAudit>& extra,
                              const GradTolerance& tolerance) {
  config.validate();
  const auto size = config.num_patches() * config.embed_dim;
  if (size > kGradcheckSizeBound) {
    throw std::invalid_argument("gradcheck config too large: num_patches * embed_dim = " + std::to_string(size) +
                                " exceeds the bound of " + std::to_string(kGradcheckSizeBound));
  }
  GradcheckReport report;
  auto all = op_audits();
  for (auto& a : model_audits(config)) all.push_back(std::move(a));
  for (const auto& a : extra) all.push_back(a);
  for (const auto& a : all) report.results.push_back(a.run(seed, tolerance));
  return report;
}

}  // namespace gabvit
