#include "gabvit/cli.hpp"

#include "gabvit/checkpoint.hpp"
#include "gabvit/config_io.hpp"
#include "gabvit/erf.hpp"
#include "gabvit/gaussian_fit.hpp"
#include "gabvit/heatmap.hpp"
#include "gabvit/training.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <ostream>

namespace gabvit {

namespace fs = std::filesystem;

std::string fixed6(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

namespace {

void require_parent_dir(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw std::runtime_error("output directory '" + parent.string() + "' does not exist (for '" + path + "')");
  }
}

std::string locality_lines(const std::string& prefix, const ErfMap& erf) {
  std::string out;
  try {
    const auto r = locality_report(erf);
    out += prefix + "self_mass=" + fixed6(r.self_mass) + "\n";
    out += prefix + "adjacent_mass=" + fixed6(r.adjacent_mass) + "\n";
    out += prefix + "far_mass=" + fixed6(r.far_mass) + "\n";
    out += prefix + "adjacency_ratio=" + (r.adjacency_ratio ? fixed6(*r.adjacency_ratio) : "undefined") + "\n";
  } catch (const LocalityError&) {
    out += prefix + "locality=unavailable\n";
  }
  return out;
}

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

SliceComponent parse_slice_component(std::string_view text) {
  if (text == "rpe") return SliceComponent::rpe;
  if (text == "gab") return SliceComponent::gab;
  if (text == "both") return SliceComponent::both;
  throw std::invalid_argument("unknown component '" + std::string(text) + "' (expected rpe, gab or both)");
}

std::vector<Tensor> load_image_source(const std::string& spec, const ViTConfig& config) {
  if (spec.rfind("noise:", 0) == 0) {
    const auto rest = spec.substr(6);
    const auto colon = rest.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("image source '" + spec + "' is not noise:<seed>:<count>");
    std::uint64_t seed = 0;
    std::size_t count = 0;
    try {
      std::size_t used = 0;
      seed = std::stoull(rest.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument("seed");
      const auto count_text = rest.substr(colon + 1);
      count = std::stoull(count_text, &used);
      if (used != count_text.size()) throw std::invalid_argument("count");
    } catch (const std::exception&) {
      throw std::invalid_argument("image source '" + spec + "' is not noise:<seed>:<count>");
    }
    if (count == 0) throw std::invalid_argument("image source '" + spec + "' asks for zero images");
    return noise_images(config, seed, count);
  }

  if (!fs::is_directory(spec)) throw std::invalid_argument("image source '" + spec + "' is neither noise:<seed>:<count> nor a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(spec)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::invalid_argument("no .pgm/.ppm/.pnm images in '" + spec + "'");
  std::vector<Tensor> images;
  const Shape expected{config.image_height, config.image_width, config.channels};
  for (const auto& f : files) {
    auto img = load_image(f.string());
    if (img.shape() != expected) {
      throw std::invalid_argument("image '" + f.string() + "' has shape " + shape_string(img.shape()) +
                                  " but the model expects " + shape_string(expected));
    }
    images.push_back(std::move(img));
  }
  return images;
}

Eigen::MatrixXd bias_slice(const ViTModel<float>& model, std::size_t layer, std::size_t patch,
                           SliceComponent component, std::optional<std::size_t> head) {
  const auto& cfg = model.config();
  const auto gh = cfg.grid_h(), gw = cfg.grid_w();
  if (layer >= cfg.num_layers || patch >= cfg.num_patches()) {
    throw std::out_of_range("layer " + std::to_string(layer) + " / patch " + std::to_string(patch) +
                            " out of range: valid layers are [0, " + std::to_string(cfg.num_layers) +
                            "), valid patches are [0, " + std::to_string(cfg.num_patches()) + ")");
  }
  if (head && *head >= cfg.num_heads) {
    throw std::out_of_range("head " + std::to_string(*head) + " out of range: valid heads are [0, " +
                            std::to_string(cfg.num_heads) + ")");
  }
  const bool want_rpe = component != SliceComponent::gab;
  const bool want_gab = component != SliceComponent::rpe;
  if (component == SliceComponent::rpe && !model.rpe) throw std::invalid_argument("model has no relative positional embedding");
  if (component == SliceComponent::gab && !model.gab) throw std::invalid_argument("model has no Gaussian attention bias");

  NoGradGuard no_grad;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(gh), static_cast<Eigen::Index>(gw));
  if (want_rpe && model.rpe) {
    auto bias = model.rpe->materialize_bias(layer);
    if (head) bias = select_leading(bias, *head);
    out += extract_rpe_slice(bias, patch, gh, gw).matrix().cast<double>();
  }
  if (want_gab && model.gab) {
    out += extract_rpe_slice(gab_bias(*model.gab, layer), patch, gh, gw).matrix().cast<double>();
  }
  return out;
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto cfg = load_experiment_config(args.config_path);
    const auto csv_path = args.csv_path.value_or(args.checkpoint_path + ".csv");
    require_parent_dir(args.checkpoint_path);
    require_parent_dir(csv_path);

    ViTModel<float> model(cfg.model, cfg.model_seed);
    const auto result = train(model, cfg.data, cfg.train);
    save_checkpoint(model, args.checkpoint_path);
    write_binary_file(csv_path, loss_curve_csv(result, model.gab ? model.gab->num_layers() : 0));

    out << "steps=" << result.history.size() << "\n";
    if (!result.history.empty()) {
      out << "initial_loss=" << fixed6(result.history.front().loss) << "\n";
      out << "final_loss=" << fixed6(result.history.back().loss) << "\n";
    }
    out << "checkpoint=" << args.checkpoint_path << "\n";
    out << "loss_curve=" << csv_path << "\n";
    return 0;
  });
}

int cmd_erf(const ErfArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto model = load_checkpoint(args.checkpoint_path);
    const auto& cfg = model.config();
    const auto target = args.target_patch.value_or(central_patch_index(cfg.grid_h(), cfg.grid_w()));
    if (target >= cfg.num_patches()) {
      throw std::out_of_range("target patch " + std::to_string(target) + " out of range [0, " +
                              std::to_string(cfg.num_patches()) + ")");
    }
    require_parent_dir(args.output_path);
    const auto images = load_image_source(args.images, cfg);
    const auto erf = erf_dataset(std::span<const Tensor>(images), model, target, ErfOptions{args.threads});
    write_heatmap(args.output_path, erf.values, {erf.target_patch, erf.sample_count});
    out << "target_patch=" << erf.target_patch << "\n";
    out << "sample_count=" << erf.sample_count << "\n";
    out << locality_lines("", erf);
    return 0;
  });
}

int cmd_rpe_slice(const RpeSliceArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto model = load_checkpoint(args.checkpoint_path);
    const auto slice = bias_slice(model, args.layer, args.patch, args.component, args.head);
    require_parent_dir(args.output_path);
    write_heatmap(args.output_path, slice, {args.patch, std::nullopt});
    out << "raw_min=" << fixed6(slice.minCoeff()) << "\n";
    out << "raw_max=" << fixed6(slice.maxCoeff()) << "\n";
    out << "constant=" << (slice.minCoeff() == slice.maxCoeff() ? "true" : "false") << "\n";
    return 0;
  });
}

int cmd_fit(const FitArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    FitProblem problem;
    problem.grid = load_grid(args.input_path);
    out << to_record(fit_gaussian(problem));
    return 0;
  });
}

int cmd_reinit(const ReinitArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto model = load_checkpoint(args.checkpoint_path);
    const auto target = parse_reinit_target(args.component);
    const auto images = load_image_source(args.images, model.config());
    const auto result = reinit_experiment(model, target, args.seed, images, ErfOptions{args.threads});

    fs::create_directories(args.output_dir);
    const auto dir = fs::path(args.output_dir);
    write_heatmap((dir / "before.pgm").string(), result.before.values,
                  {result.before.target_patch, result.before.sample_count});
    write_heatmap((dir / "after.pgm").string(), result.after.values,
                  {result.after.target_patch, result.after.sample_count});

    std::string record = "component=" + std::string(to_string(target)) + "\n";
    record += "seed=" + std::to_string(args.seed) + "\n";
    record += "target_patch=" + std::to_string(result.before.target_patch) + "\n";
    record += "sample_count=" + std::to_string(result.before.sample_count) + "\n";
    record += locality_lines("before_", result.before);
    record += locality_lines("after_", result.after);
    write_binary_file((dir / "comparison.txt").string(), record);
    out << record;
    return 0;
  });
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ViTConfig config =
        args.config_path ? load_experiment_config(*args.config_path).model : ExperimentConfig::default_model();
    const auto report = run_gradcheck(config, args.seed, args.extra_audits);
    std::vector<std::string> failed;
    for (const auto& r : report.results) {
      out << r.name << " checked=" << r.checked << " max_abs_error=" << fixed6(r.max_abs_error)
          << " max_rel_error=" << fixed6(r.max_rel_error) << (r.passed ? " PASS" : " FAIL") << "\n";
      if (!r.passed) failed.push_back(r.name);
    }
    if (!failed.empty()) {
      std::string names;
      for (const auto& n : failed) names += (names.empty() ? "" : ", ") + n;
      err << "gradcheck failed: " << names << "\n";
      return 1;
    }
    out << "all " << report.results.size() << " audits passed\n";
    return 0;
  });
}

}  // namespace gabvit
