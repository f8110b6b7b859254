#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mseg/augment.hpp"
#include "mseg/contour.hpp"
#include "mseg/errors.hpp"
#include "mseg/image.hpp"
#include "mseg/imageio.hpp"
#include "mseg/lovasz.hpp"
#include "mseg/metrics.hpp"
#include "mseg/model.hpp"
#include "mseg/optim.hpp"
#include "mseg/synth.hpp"
#include "mseg/weights_io.hpp"

namespace mseg {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace detail {
inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* where) {
  if (!j.is_object()) throw InvalidArgument(std::string(where) + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* x) { return k == x; })) {
      throw InvalidArgument(std::string(where) + ": unknown key \"" + k + "\"");
    }
  }
}

template <class V>
void read_opt(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}
}  // namespace detail

inline json arch_to_json(const ArchitectureSpec& s) {
  return {{"family", family_name(s.family)},
          {"in_channels", s.in_channels},
          {"input_size", s.input_size},
          {"num_classes", s.num_classes},
          {"widths", s.widths},
          {"res_blocks", s.res_blocks},
          {"dropout", s.dropout_rate},
          {"residual_scaling", s.residual_scaling},
          {"leaky_slope", s.leaky_slope},
          {"elu_alpha", s.elu_alpha},
          {"skip_connections", s.skip_connections}};
}

inline ArchitectureSpec arch_from_json(const json& j, ArchitectureSpec s = {}) {
  detail::reject_unknown(j,
                         {"family", "in_channels", "input_size", "num_classes", "widths", "res_blocks",
                          "dropout", "residual_scaling", "leaky_slope", "elu_alpha", "skip_connections"},
                         "arch");
  if (j.contains("family")) s.family = parse_family(j.at("family").get<std::string>());
  detail::read_opt(j, "in_channels", s.in_channels);
  detail::read_opt(j, "input_size", s.input_size);
  detail::read_opt(j, "num_classes", s.num_classes);
  detail::read_opt(j, "widths", s.widths);
  detail::read_opt(j, "res_blocks", s.res_blocks);
  detail::read_opt(j, "dropout", s.dropout_rate);
  detail::read_opt(j, "residual_scaling", s.residual_scaling);
  detail::read_opt(j, "leaky_slope", s.leaky_slope);
  detail::read_opt(j, "elu_alpha", s.elu_alpha);
  detail::read_opt(j, "skip_connections", s.skip_connections);
  return s;
}

struct SynthConfig {
  SceneSpec scene;
  SplitCounts counts{200, 40, 20};
};

struct RunConfig {
  fs::path dataset = "data";
  fs::path out = "run";
  ArchitectureSpec arch;
  PreprocessConfig preprocess;
  ScheduleConfig schedule;      // period 0 in the config file = one cycle per epoch
  OptimizerConfig optimizer;
  LossKind loss = LossKind::lovasz;
  int batch_size = 8;
  int epochs = 16;
  int crops_per_epoch = 256;
  int crop_size = 0;            // 0 = arch.input_size
  int tile = 256;
  std::uint64_t seed = 1;
  int precision = 32;
  SynthConfig synth;

  int crop() const { return crop_size > 0 ? crop_size : arch.input_size; }
  long steps_per_epoch() const { return std::max(1, crops_per_epoch / batch_size); }
  long cosine_period() const { return schedule.period > 0 ? schedule.period : steps_per_epoch(); }

  void validate() const {
    arch.validate();
    preprocess.validate();
    optimizer.validate();
    ScheduleConfig s = schedule;
    s.period = cosine_period();
    s.validate();
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (crops_per_epoch < batch_size) throw InvalidArgument("crops_per_epoch must be >= batch size");
    if (crop() % arch.size_multiple() != 0) {
      throw InvalidArgument("crop size must be divisible by 2^stage_count");
    }
    if (tile < 1 || tile % arch.size_multiple() != 0) {
      throw InvalidArgument("tile size must be divisible by 2^stage_count = " +
                            std::to_string(arch.size_multiple()));
    }
    if (precision != 32 && precision != 64) throw InvalidArgument("precision must be 32 or 64");
  }
};

inline RunConfig run_config_from_json(const json& j) {
  detail::reject_unknown(j,
                         {"dataset", "out", "arch", "preprocess", "schedule", "optimizer", "loss",
                          "batch_size", "epochs", "crops_per_epoch", "crop_size", "tile", "seed",
                          "precision", "synth"},
                         "config");
  RunConfig c;
  if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
  if (j.contains("out")) c.out = j.at("out").get<std::string>();
  if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"));
  if (j.contains("preprocess")) {
    const json& p = j.at("preprocess");
    detail::reject_unknown(p, {"gamma", "levels", "normalize", "equalize", "gamma_correct"}, "preprocess");
    detail::read_opt(p, "gamma", c.preprocess.gamma);
    detail::read_opt(p, "levels", c.preprocess.levels);
    detail::read_opt(p, "normalize", c.preprocess.normalize);
    detail::read_opt(p, "equalize", c.preprocess.equalize);
    detail::read_opt(p, "gamma_correct", c.preprocess.gamma_correct);
  }
  c.schedule.period = 0;
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    detail::reject_unknown(s, {"eta0", "eta_min", "period"}, "schedule");
    detail::read_opt(s, "eta0", c.schedule.eta0);
    detail::read_opt(s, "eta_min", c.schedule.eta_min);
    detail::read_opt(s, "period", c.schedule.period);
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    detail::reject_unknown(o, {"mode", "momentum", "eps_norm", "rho", "eps"}, "optimizer");
    if (o.contains("mode")) c.optimizer.mode = parse_optimizer(o.at("mode").get<std::string>());
    detail::read_opt(o, "momentum", c.optimizer.momentum);
    detail::read_opt(o, "eps_norm", c.optimizer.eps_norm);
    detail::read_opt(o, "rho", c.optimizer.rho);
    detail::read_opt(o, "eps", c.optimizer.eps);
  }
  if (j.contains("loss")) {
    const auto l = j.at("loss").get<std::string>();
    if (l == "lovasz") {
      c.loss = LossKind::lovasz;
    } else if (l == "cross_entropy") {
      c.loss = LossKind::cross_entropy;
    } else {
      throw InvalidArgument("unknown loss: " + l);
    }
  }
  detail::read_opt(j, "batch_size", c.batch_size);
  detail::read_opt(j, "epochs", c.epochs);
  detail::read_opt(j, "crops_per_epoch", c.crops_per_epoch);
  detail::read_opt(j, "crop_size", c.crop_size);
  detail::read_opt(j, "tile", c.tile);
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "precision", c.precision);
  if (j.contains("synth")) {
    json s = j.at("synth");
    for (const char* k : {"train", "val", "test"}) {
      if (!s.contains(k)) continue;
      const int n = s.at(k).get<int>();
      if (std::string(k) == "train") c.synth.counts.train = n;
      if (std::string(k) == "val") c.synth.counts.val = n;
      if (std::string(k) == "test") c.synth.counts.test = n;
      s.erase(k);
    }
    c.synth.scene = scene_spec_from_json(s);
  }
  c.arch.seed = c.seed;
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument("config " + path.string() + ": " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const json::exception& e) {
    throw InvalidArgument("config " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Dataset access

struct Sample {
  std::string name;
  Image image;
  LabelMask mask;
};

inline std::vector<Sample> load_split(const fs::path& root, const std::string& split,
                                      int num_classes = kDefaultNumClasses) {
  const fs::path manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw DataError("dataset manifest not found: " + manifest_path.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw DataError("unreadable manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!m.contains("splits") || !m["splits"].contains(split)) {
    throw DataError("manifest has no split \"" + split + "\"");
  }
  std::vector<Sample> out;
  for (const auto& e : m["splits"][split]) {
    const std::string img = e.at("image").get<std::string>();
    Sample s{fs::path(img).filename().string(), io::read_image(root / img),
             io::read_mask(root / e.at("mask").get<std::string>(), num_classes)};
    if (s.image.height() != s.mask.height() || s.image.width() != s.mask.width()) {
      throw DataError("image and mask sizes differ for " + img);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tiled inference

template <class T>
Tensor<T> to_batch(const std::vector<const Image*>& images) {
  if (images.empty()) throw InvalidArgument("to_batch: no images");
  const auto h = static_cast<std::size_t>(images.front()->height());
  const auto w = static_cast<std::size_t>(images.front()->width());
  Tensor<T> t(Shape{images.size(), 1, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& im = *images[n];
    if (im.height() != static_cast<int>(h) || im.width() != static_cast<int>(w)) {
      throw InvalidArgument("to_batch: image sizes differ");
    }
    std::transform(im.data().begin(), im.data().end(), t.data() + n * h * w,
                   [](double v) { return static_cast<T>(v); });
  }
  return t;
}

// Class probabilities for one already-preprocessed tile.
template <class T>
ProbabilityMap<T> tile_probabilities(const ModelParams<T>& params, const ArchitectureSpec& spec,
                                     const Image& tile_img) {
  const Tensor<T> logits = infer(params, spec, to_batch<T>({&tile_img}));
  const Tensor<T> p = softmax_channels(logits);
  return ProbabilityMap<T>(spec.num_classes, tile_img.height(), tile_img.width(), p.values());
}

// preprocess -> reflect-pad to tile multiples -> per-tile softmax -> stitch -> crop.
template <class T>
ProbabilityMap<T> predict_probabilities(const ModelParams<T>& params, const ArchitectureSpec& spec,
                                        const Image& img, const PreprocessConfig& pre, int tile_size) {
  if (tile_size < 1 || tile_size % spec.size_multiple() != 0) {
    throw InvalidArgument("tile size must be divisible by 2^stage_count = " +
                          std::to_string(spec.size_multiple()));
  }
  const Image x = preprocess(img, pre);
  const auto [padded, pad] = reflect_pad_to_multiple(x, tile_size);
  std::vector<Tile<ProbabilityMap<T>>> out;
  for (const auto& t : tile(padded, tile_size)) {
    out.push_back({tile_probabilities(params, spec, t.raster), t.x, t.y});
  }
  return crop_padding(stitch(out, padded.height(), padded.width()), pad);
}

template <class T>
LabelMask predict_mask(const ModelParams<T>& params, const ArchitectureSpec& spec, const Image& img,
                       const PreprocessConfig& pre, int tile_size) {
  return argmax_mask(predict_probabilities(params, spec, img, pre, tile_size));
}

struct SplitScore {
  double loss = 0;                       // mean per-image Lovász-softmax loss
  std::optional<double> pooled_mean_iou;
  double mean_iou = 0;                   // mean of per-image mean IOU
  double std_iou = 0;
  std::vector<ImageScore> images;
};

template <class T>
SplitScore evaluate_split(const ModelParams<T>& params, const ArchitectureSpec& spec,
                          const std::vector<Sample>& samples, const PreprocessConfig& pre,
                          int tile_size) {
  SplitScore s;
  ConfusionMatrix pooled(spec.num_classes);
  std::vector<double> per_image;
  for (const auto& smp : samples) {
    const ProbabilityMap<T> probs = predict_probabilities(params, spec, smp.image, pre, tile_size);
    s.loss += lovasz_softmax_loss(probs, smp.mask).loss;
    ConfusionMatrix cm(spec.num_classes);
    accumulate(cm, argmax_mask(probs), smp.mask);
    pooled.merge(cm);
    const auto m = mean_iou(cm);
    if (m) per_image.push_back(*m);
    s.images.push_back({smp.name, cm, m});
  }
  if (!samples.empty()) s.loss /= static_cast<double>(samples.size());
  s.pooled_mean_iou = mean_iou(pooled);
  const MeanStd ms = mean_std(per_image);
  s.mean_iou = ms.mean;
  s.std_iou = ms.stddev;
  return s;
}

// ---------------------------------------------------------------------------
// Training

// Seed of the RNG that draws batch `step` (crops, transforms, dropout masks).
inline std::uint64_t batch_seed(std::uint64_t run_seed, long step) {
  std::uint64_t z = run_seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(step + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <class T>
struct Batch {
  Tensor<T> images;
  std::vector<std::uint8_t> labels;
};

// Random crops with random dihedral transforms, each crop preprocessed on its own.
template <class T>
Batch<T> sample_batch(const std::vector<Sample>& train, int batch_size, int crop_size,
                      const PreprocessConfig& pre, std::mt19937_64& rng) {
  if (train.empty()) throw DataError("training split is empty");
  std::vector<Image> crops;
  Batch<T> b;
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  for (int i = 0; i < batch_size; ++i) {
    const Sample& s = train[pick(rng)];
    CropSample c = sample_crop(s.image, s.mask, crop_size, rng);
    crops.push_back(preprocess(c.image, pre));
    b.labels.insert(b.labels.end(), c.mask.data().begin(), c.mask.data().end());
  }
  std::vector<const Image*> ptrs;
  for (const auto& c : crops) ptrs.push_back(&c);
  b.images = to_batch<T>(ptrs);
  return b;
}

template <class T>
class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<Sample> train)
      : cfg_(cfg), train_(std::move(train)), params_(build_model<T>(cfg.arch)),
        state_(make_optim_state(params_, cfg.optimizer.mode)) {
    cfg_.validate();
  }

  double learning_rate() const {
    if (cfg_.optimizer.mode == OptimizerMode::adadelta) return cfg_.schedule.eta0;
    ScheduleConfig s = cfg_.schedule;
    s.period = cfg_.cosine_period();
    return cosine_lr(step_ % s.period, s);
  }

  Batch<T> batch_for_step(long step, std::mt19937_64& rng) const {
    rng.seed(batch_seed(cfg_.seed, step));
    return sample_batch<T>(train_, cfg_.batch_size, cfg_.crop(), cfg_.preprocess, rng);
  }

  // One optimizer step; returns the batch loss before the update.
  double step() {
    std::mt19937_64 rng;
    const Batch<T> b = batch_for_step(step_, rng);
    ForwardPass<T> pass = forward(params_, cfg_.arch, b.images, true, &rng);
    const BatchLoss<T> l = batch_loss(pass.logits, b.labels, cfg_.loss);
    if (!std::isfinite(l.loss) || !l.dlogits.all_finite()) {
      throw NumericalError("non-finite loss at step " + std::to_string(step_) + " (batch seed " +
                           std::to_string(batch_seed(cfg_.seed, step_)) + ")");
    }
    const ModelParams<T> grads = backward(params_, pass, l.dlogits);
    optimizer_step(params_, grads, state_, learning_rate(), cfg_.optimizer);
    ++step_;
    return l.loss;
  }

  // Loss of a fixed batch with dropout off; used to compare progress across steps.
  double reference_loss(long which = -1) const {
    std::mt19937_64 rng;
    const Batch<T> b = batch_for_step(which, rng);
    const Tensor<T> logits = infer(params_, cfg_.arch, b.images);
    return batch_loss(logits, b.labels, cfg_.loss).loss;
  }

  long steps_taken() const { return step_; }
  const ModelParams<T>& params() const { return params_; }
  const OptimState<T>& state() const { return state_; }
  const RunConfig& config() const { return cfg_; }

 private:
  RunConfig cfg_;
  std::vector<Sample> train_;
  ModelParams<T> params_;
  OptimState<T> state_;
  long step_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_mean_iou = 0;
  double best_val_mean_iou = 0;
  double best_val_loss = 0;
  double lr_end = 0;

  json to_json() const {
    return {{"epoch", epoch},
            {"train_loss", train_loss},
            {"val_loss", val_loss},
            {"val_mean_iou", val_mean_iou},
            {"best_val_mean_iou", best_val_mean_iou},
            {"best_val_loss", best_val_loss},
            {"lr", lr_end}};
  }
};

struct TrainSummary {
  std::vector<EpochRecord> epochs;
  fs::path best_weights;
  fs::path last_checkpoint;
  fs::path metrics_log;
  long steps = 0;
};

inline fs::path best_weights_path(const RunConfig& c) { return c.out / "best.mseg"; }
inline fs::path last_checkpoint_path(const RunConfig& c) { return c.out / "last.mseg"; }
inline fs::path metrics_log_path(const RunConfig& c) { return c.out / "metrics.jsonl"; }

// Writes best.mseg (best validation mean IOU), last.mseg (weights + optimizer
// state) and metrics.jsonl (one object per epoch). `progress` sees each record.
template <class T>
TrainSummary run_train_typed(const RunConfig& cfg,
                             const std::function<void(const EpochRecord&)>& progress = {}) {
  cfg.validate();
  if (!fs::exists(cfg.dataset / "manifest.json")) {
    throw DataError("dataset not found: " + cfg.dataset.string());
  }
  std::vector<Sample> train = load_split(cfg.dataset, "train", cfg.arch.num_classes);
  const std::vector<Sample> val = load_split(cfg.dataset, "val", cfg.arch.num_classes);
  if (train.empty() && cfg.epochs > 0) throw DataError("training split is empty");
  fs::create_directories(cfg.out);

  Trainer<T> trainer(cfg, std::move(train));
  TrainSummary sum{{}, best_weights_path(cfg), last_checkpoint_path(cfg), metrics_log_path(cfg), 0};
  std::ofstream log(sum.metrics_log, std::ios::trunc);
  if (!log) throw DataError("cannot write " + sum.metrics_log.string());

  if (cfg.epochs == 0) {
    save_weights(trainer.params(), cfg.arch, sum.best_weights);
    save_checkpoint(trainer.params(), cfg.arch, trainer.state(), sum.last_checkpoint);
    return sum;
  }

  double best_iou = -1, best_loss = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e + 1;
    double total = 0;
    for (long s = 0; s < cfg.steps_per_epoch(); ++s) {
      rec.lr_end = trainer.learning_rate();
      total += trainer.step();
    }
    rec.train_loss = total / static_cast<double>(cfg.steps_per_epoch());
    if (!val.empty()) {
      const SplitScore sc = evaluate_split(trainer.params(), cfg.arch, val, cfg.preprocess, cfg.tile);
      rec.val_loss = sc.loss;
      rec.val_mean_iou = sc.pooled_mean_iou.value_or(0.0);
    }
    best_loss = e == 0 ? rec.val_loss : std::min(best_loss, rec.val_loss);
    if (rec.val_mean_iou > best_iou) {
      best_iou = rec.val_mean_iou;
      save_weights(trainer.params(), cfg.arch, sum.best_weights);
    }
    rec.best_val_mean_iou = best_iou;
    rec.best_val_loss = best_loss;
    log << rec.to_json().dump() << '\n';
    log.flush();
    sum.epochs.push_back(rec);
    if (progress) progress(rec);
  }
  save_checkpoint(trainer.params(), cfg.arch, trainer.state(), sum.last_checkpoint);
  sum.steps = trainer.steps_taken();
  return sum;
}

inline TrainSummary run_train(const RunConfig& cfg,
                              const std::function<void(const EpochRecord&)>& progress = {}) {
  return cfg.precision == 64 ? run_train_typed<double>(cfg, progress)
                             : run_train_typed<float>(cfg, progress);
}

inline json synthesize(const RunConfig& cfg, bool force = false) {
  return generate_dataset(cfg.synth.scene, cfg.synth.counts, cfg.seed, cfg.dataset, force);
}

// ---------------------------------------------------------------------------
// Prediction and evaluation

struct PredictOutputs {
  fs::path mask;                 // class ids, PGM or PNG by extension
  std::optional<fs::path> color;     // palette-colourized mask (PNG)
  std::optional<fs::path> contours;  // JSON
  std::optional<fs::path> overlay;   // contours drawn over the input (PNG)
};

inline LabelMask run_predict(const fs::path& weights, const fs::path& image, const PredictOutputs& out,
                             const PreprocessConfig& pre = {}, int tile_size = 256) {
  const LoadedWeights<float> w = load_weights<float>(weights);
  const Image img = io::read_image(image);
  const LabelMask mask = predict_mask(w.params, w.spec, img, pre, tile_size);
  io::write_mask(out.mask, mask);
  if (out.color) io::write_rgb(*out.color, io::colorize(mask));
  if (out.contours || out.overlay) {
    const std::vector<Contour> cs = extract_object_contours(mask);
    if (out.contours) std::ofstream(*out.contours) << contours_to_json(cs).dump(2) << '\n';
    if (out.overlay) io::write_rgb(*out.overlay, overlay(img, cs));
  }
  return mask;
}

namespace detail {
// Keyed by stem with any img_/msk_ prefix removed, so a prediction named after
// its input image pairs with the dataset mask. In a directory holding msk_
// files (a dataset split) the img_ files are inputs and are skipped.
inline std::map<std::string, fs::path> mask_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> paths;
  bool has_masks = false;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext != ".pgm" && ext != ".png") continue;
    paths.push_back(e.path());
    has_masks = has_masks || e.path().stem().string().starts_with("msk_");
  }
  std::map<std::string, fs::path> files;
  for (const auto& p : paths) {
    std::string stem = p.stem().string();
    if (has_masks && stem.starts_with("img_")) continue;
    if (stem.starts_with("img_") || stem.starts_with("msk_")) stem = stem.substr(4);
    if (files.count(stem)) throw DataError("two mask files share the name " + stem + " in " + dir.string());
    files[stem] = p;
  }
  return files;
}
}  // namespace detail

// Pairs files by stem; any unpaired name is an error that lists every one.
inline json run_eval(const fs::path& pred_dir, const fs::path& truth_dir,
                     int num_classes = kDefaultNumClasses) {
  const auto preds = detail::mask_files(pred_dir);
  const auto truths = detail::mask_files(truth_dir);
  std::vector<std::string> unpaired;
  for (const auto& [k, v] : preds) {
    if (!truths.count(k)) unpaired.push_back(v.filename().string());
  }
  for (const auto& [k, v] : truths) {
    if (!preds.count(k)) unpaired.push_back(v.filename().string());
  }
  if (!unpaired.empty()) {
    std::string msg = "unpaired files:";
    for (const auto& n : unpaired) msg += " " + n;
    throw DataError(msg);
  }
  if (preds.empty()) throw DataError("no mask files in " + pred_dir.string());
  std::vector<ImageScore> scores;
  for (const auto& [stem, p] : preds) {
    const LabelMask pm = io::read_mask(p, num_classes);
    const LabelMask tm = io::read_mask(truths.at(stem), num_classes);
    if (pm.height() != tm.height() || pm.width() != tm.width()) {
      throw DataError("size mismatch for " + stem);
    }
    ConfusionMatrix cm(num_classes);
    accumulate(cm, pm, tm);
    scores.push_back({stem, cm, mean_iou(cm)});
  }
  return evaluation_report(scores);
}

}  // namespace mseg
