#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mseg/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string arch;
  std::string optimizer;
  std::optional<int> tile;
};

mseg::RunConfig resolve(const Common& o) {
  mseg::RunConfig c;
  try {
    if (!o.config.empty()) c = mseg::load_run_config(o.config);
    if (o.seed) {
      c.seed = *o.seed;
      c.arch.seed = *o.seed;
    }
    if (!o.arch.empty()) c.arch.family = mseg::parse_family(o.arch);
    if (!o.optimizer.empty()) c.optimizer.mode = mseg::parse_optimizer(o.optimizer);
    if (o.tile) c.tile = *o.tile;
  } catch (const mseg::DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  return c;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(path);
  if (!f) throw mseg::DataError("cannot write " + path);
  f << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bright-field bead/cell segmentation: synth, train, predict, eval, contours"};
  app.require_subcommand(1);
  Common o;

  const auto add_common = [&](CLI::App* sub, bool with_model_flags) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", o.seed, "override the run seed");
    if (with_model_flags) {
      sub->add_option("--arch", o.arch, "proposed|baseline")->check(CLI::IsMember({"proposed", "baseline"}));
      sub->add_option("--optimizer", o.optimizer, "nsgd|adadelta")->check(CLI::IsMember({"nsgd", "adadelta"}));
    }
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, false);
  bool force = false;
  synth->add_option("--out", o.out, "dataset root (overrides config)");
  synth->add_flag("--force", force, "replace a non-empty output directory");

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, true);
  std::optional<int> epochs;
  train->add_option("--out", o.out, "run directory (overrides config)");
  train->add_option("--tile", o.tile, "validation tile size");
  train->add_option("--epochs", epochs, "override epoch count");

  auto* predict = app.add_subcommand("predict", "segment one image");
  add_common(predict, false);
  std::string weights, image, overlay_path, contours_path, color_path;
  predict->add_option("--weights", weights, "weights file")->required();
  predict->add_option("image", image, "input image (PGM/PNG)")->required();
  predict->add_option("--out", o.out, "output mask path (class ids)")->required();
  predict->add_option("--overlay", overlay_path, "contour overlay PNG");
  predict->add_option("--contours", contours_path, "contour JSON");
  predict->add_option("--color", color_path, "colourized mask PNG");
  predict->add_option("--tile", o.tile, "tile size (default 256)");

  auto* eval = app.add_subcommand("eval", "score predicted masks against ground truth");
  std::string pred_dir, truth_dir;
  eval->add_option("predictions", pred_dir, "directory of predicted masks")->required();
  eval->add_option("truth", truth_dir, "directory of ground-truth masks")->required();
  eval->add_option("--out", o.out, "report path (stdout if omitted)");

  auto* contours = app.add_subcommand("contours", "extract object contours from a mask");
  std::string mask_path, base_image;
  contours->add_option("mask", mask_path, "class-id mask")->required();
  contours->add_option("--out", o.out, "contour JSON (stdout if omitted)");
  contours->add_option("--overlay", overlay_path, "overlay PNG (needs --image)");
  contours->add_option("--image", base_image, "image to draw the overlay on");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (synth->parsed()) {
      mseg::RunConfig c = resolve(o);
      if (!o.out.empty()) c.dataset = o.out;
      const auto m = mseg::synthesize(c, force);
      std::cerr << "wrote " << m["splits"]["train"].size() << "/" << m["splits"]["val"].size() << "/"
                << m["splits"]["test"].size() << " pairs to " << c.dataset << '\n';
    } else if (train->parsed()) {
      mseg::RunConfig c = resolve(o);
      if (!o.out.empty()) c.out = o.out;
      if (epochs) c.epochs = *epochs;
      try {
        c.validate();
      } catch (const mseg::InvalidArgument& e) {
        throw UsageError(e.what());
      }
      const auto t0 = std::chrono::steady_clock::now();
      const auto s = mseg::run_train(c, [&](const mseg::EpochRecord& r) {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::fprintf(stderr, "epoch %d  loss %.4f  val_loss %.4f  val_miou %.4f  (%.0fs)\n", r.epoch,
                     r.train_loss, r.val_loss, r.val_mean_iou, secs);
      });
      std::cerr << "best weights: " << s.best_weights << "\nlog: " << s.metrics_log << '\n';
    } else if (predict->parsed()) {
      const mseg::RunConfig c = resolve(o);
      mseg::PredictOutputs out{o.out, {}, {}, {}};
      if (!color_path.empty()) out.color = color_path;
      if (!contours_path.empty()) out.contours = contours_path;
      if (!overlay_path.empty()) out.overlay = overlay_path;
      const auto m = mseg::run_predict(weights, image, out, c.preprocess, c.tile);
      std::cerr << "mask " << m.width() << "x" << m.height() << " -> " << o.out << '\n';
    } else if (eval->parsed()) {
      write_json(o.out, mseg::run_eval(pred_dir, truth_dir));
    } else if (contours->parsed()) {
      if (!overlay_path.empty() && base_image.empty()) throw UsageError("--overlay needs --image");
      const mseg::LabelMask m = mseg::io::read_mask(mask_path);
      const auto cs = mseg::extract_object_contours(m);
      write_json(o.out, mseg::contours_to_json(cs));
      if (!overlay_path.empty()) {
        mseg::io::write_rgb(overlay_path, mseg::overlay(mseg::io::read_image(base_image), cs));
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const mseg::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
