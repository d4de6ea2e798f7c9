#include "gabvit/erf.hpp"

#include "gabvit/rng.hpp"
#include "init.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace gabvit {

std::size_t central_patch_index(std::size_t grid_h, std::size_t grid_w) {
  if (grid_h == 0 || grid_w == 0) throw std::invalid_argument("central_patch_index: grid dimensions must be >= 1");
  return (grid_h / 2) * grid_w + grid_w / 2;
}

template <class Scalar>
BasicTensor<Scalar> input_gradient(const BasicTensor<Scalar>& image, const ViTModel<Scalar>& model,
                                   std::size_t target) {
  const auto& cfg = model.config();
  if (target >= cfg.num_patches()) {
    throw std::out_of_range("target patch " + std::to_string(target) + " not in [0, " +
                            std::to_string(cfg.num_patches()) + ")");
  }
  if (!grad_enabled()) throw std::logic_error("input_gradient needs gradient recording enabled");
  TapeScope scope;
  auto x = image.detach();
  x.set_requires_grad(true);
  auto out = forward(x, model);
  auto feature = mean_over_dim(reshape(select_rows(out.features, target, 1), {cfg.embed_dim}), 0);
  const std::array<BasicTensor<Scalar>, 1> only{x};
  backward(feature, std::span<const BasicTensor<Scalar>>(only));

  const std::size_t h = cfg.image_height, w = cfg.image_width, c = cfg.channels;
  typename BasicTensor<Scalar>::Array g = BasicTensor<Scalar>::Array::Zero(static_cast<Eigen::Index>(h * w));
  if (x.has_grad()) {
    for (std::size_t p = 0; p < h * w; ++p) g[p] = x.grad().segment(p * c, c).mean();
  }
  return BasicTensor<Scalar>({h, w}, std::move(g));
}

template <class Scalar>
BasicTensor<Scalar> erf_single(const BasicTensor<Scalar>& image, const ViTModel<Scalar>& model, std::size_t target) {
  auto g = input_gradient(image, model, target);
  return BasicTensor<Scalar>(g.shape(), g.data().max(Scalar(0)));
}

template <class Scalar>
ErfMap erf_dataset(std::span<const BasicTensor<Scalar>> images, const ViTModel<Scalar>& model, std::size_t target,
                   const ErfOptions& options) {
  if (images.empty()) throw std::invalid_argument("erf_dataset: at least one image is required");
  const auto& cfg = model.config();
  std::vector<BasicTensor<Scalar>> maps(images.size());

  const std::size_t workers = std::clamp<std::size_t>(options.threads, 1, images.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < images.size(); ++i) maps[i] = erf_single(images[i], model, target);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < images.size(); i = next++) {
          try {
            maps[i] = erf_single(images[i], model, target);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  ErfMap erf;
  erf.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cfg.image_height),
                                     static_cast<Eigen::Index>(cfg.image_width));
  for (const auto& m : maps) erf.values += m.matrix().template cast<double>();
  erf.values /= static_cast<double>(maps.size());
  erf.target_patch = target;
  erf.sample_count = maps.size();
  erf.config = cfg;
  return erf;
}

std::vector<Tensor> noise_images(const ViTConfig& config, std::uint64_t seed, std::size_t count) {
  std::vector<Tensor> images;
  images.reserve(count);
  const Shape shape{config.image_height, config.image_width, config.channels};
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(seed, static_cast<std::uint64_t>(i));
    Tensor::Array data(static_cast<Eigen::Index>(shape_numel(shape)));
    for (Eigen::Index k = 0; k < data.size(); ++k) data[k] = static_cast<float>(rng.uniform());
    images.emplace_back(shape, std::move(data));
  }
  return images;
}

LocalityReport locality_report(const ErfMap& erf) {
  const auto& cfg = erf.config;
  const std::size_t gh = cfg.grid_h(), gw = cfg.grid_w(), p = cfg.patch_size;
  if (erf.values.rows() != static_cast<Eigen::Index>(cfg.image_height) ||
      erf.values.cols() != static_cast<Eigen::Index>(cfg.image_width)) {
    throw std::invalid_argument("locality_report: map size does not match its config");
  }
  const long ti = static_cast<long>(erf.target_patch / gw), tj = static_cast<long>(erf.target_patch % gw);

  double self = 0, adjacent = 0, far = 0;
  std::size_t self_px = 0, adjacent_px = 0, far_px = 0;
  for (std::size_t n = 0; n < gh * gw; ++n) {
    const long di = std::labs(static_cast<long>(n / gw) - ti), dj = std::labs(static_cast<long>(n % gw) - tj);
    const double mass = erf.values
                            .block(static_cast<Eigen::Index>((n / gw) * p), static_cast<Eigen::Index>((n % gw) * p),
                                   static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p))
                            .sum();
    if (di == 0 && dj == 0) {
      self += mass;
      self_px += p * p;
    } else if (di + dj == 1) {
      adjacent += mass;
      adjacent_px += p * p;
    } else if (std::max(di, dj) >= 2) {
      far += mass;
      far_px += p * p;
    }
  }
  if (far_px == 0) {
    throw LocalityError("locality_report: no patch at Chebyshev distance >= 2 from target patch " +
                        std::to_string(erf.target_patch) + " on a " + std::to_string(gh) + "x" +
                        std::to_string(gw) + " grid");
  }
  LocalityReport report;
  report.self_mass = self / static_cast<double>(self_px);
  report.adjacent_mass = adjacent_px ? adjacent / static_cast<double>(adjacent_px) : 0.0;
  report.far_mass = far / static_cast<double>(far_px);
  if (report.far_mass > 0) report.adjacency_ratio = report.adjacent_mass / report.far_mass;
  return report;
}

std::string_view to_string(ReinitTarget target) {
  switch (target) {
    case ReinitTarget::ape: return "ape";
    case ReinitTarget::rpe: return "rpe";
    case ReinitTarget::gab: return "gab";
  }
  return "ape";
}

ReinitTarget parse_reinit_target(std::string_view text) {
  if (text == "ape") return ReinitTarget::ape;
  if (text == "rpe") return ReinitTarget::rpe;
  if (text == "gab") return ReinitTarget::gab;
  throw std::invalid_argument("unknown component '" + std::string(text) + "' (expected ape, rpe or gab)");
}

void reinitialize_component(ViTModel<float>& model, ReinitTarget target, std::uint64_t seed) {
  switch (target) {
    case ReinitTarget::ape:
      if (!model.ape) throw std::invalid_argument("model has no absolute positional embedding to re-initialize");
      detail::redraw_normal(*model.ape, 0.02, seed, "ape");
      break;
    case ReinitTarget::rpe:
      if (!model.rpe) throw std::invalid_argument("model has no relative positional embedding to re-initialize");
      model.rpe->reinitialize(seed);
      break;
    case ReinitTarget::gab:
      if (!model.gab) throw std::invalid_argument("model has no Gaussian attention bias to re-initialize");
      model.gab->reinitialize(seed);
      break;
  }
}

ReinitResult reinit_experiment(const ViTModel<float>& model, ReinitTarget target, std::uint64_t seed,
                               std::span<const Tensor> images, const ErfOptions& options) {
  auto redrawn = model.clone();
  reinitialize_component(redrawn, target, seed);
  const auto n = central_patch_index(model.config().grid_h(), model.config().grid_w());
  ReinitResult result{erf_dataset(images, model, n, options), erf_dataset(images, redrawn, n, options)};
  return result;
}

template BasicTensor<float> input_gradient(const BasicTensor<float>&, const ViTModel<float>&, std::size_t);
template BasicTensor<double> input_gradient(const BasicTensor<double>&, const ViTModel<double>&, std::size_t);
template BasicTensor<float> erf_single(const BasicTensor<float>&, const ViTModel<float>&, std::size_t);
template BasicTensor<double> erf_single(const BasicTensor<double>&, const ViTModel<double>&, std::size_t);
template ErfMap erf_dataset(std::span<const BasicTensor<float>>, const ViTModel<float>&, std::size_t,
                            const ErfOptions&);
template ErfMap erf_dataset(std::span<const BasicTensor<double>>, const ViTModel<double>&, std::size_t,
                            const ErfOptions&);

}  // namespace gabvit
