// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <queue>
#include <random>
#include <set>
#include <sstream>

#include "mseg/pipeline.hpp"
#include "test_util.hpp"

using namespace mseg;
using mseg::testing::random_image;
using mseg::testing::random_mask;
using mseg::testing::random_tensor;
using mseg::testing::rel_err;
using mseg::testing::TempDir;

namespace {

// Pinned tolerances and budgets.
constexpr double kLossFdStep = 1e-5;
constexpr double kLossFdMaxRel = 1e-4;
constexpr double kLossFdSeconds = 10;
constexpr double kSetOracleTol = 1e-12;
constexpr double kFixedPointTol = 1e-9;
constexpr double kNetFdMaxRel = 1e-3;
constexpr double kNetFdSeconds = 60;
constexpr double kMetricsTol = 1e-12;
constexpr double kNormTol = 1e-12;
constexpr double kScheduleTol = 1e-15;
constexpr double kAdadeltaTol = 1e-6;
constexpr double kDeskMinIou = 0.85;
constexpr double kDeskSeconds = 15 * 60;
constexpr double kRelFloor = 1e-8;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

Outcome loss_gradient_fidelity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> z = random_tensor<double>({1, 3, 4, 4}, rng, -2, 2);
    std::vector<std::uint8_t> labels(16);
    for (auto& v : labels) v = static_cast<std::uint8_t>(rng() % 3);
    const auto analytic = batch_loss(z, labels);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double orig = z[i];
      z[i] = orig + kLossFdStep;
      const double up = batch_loss(z, labels).loss;
      z[i] = orig - kLossFdStep;
      const double down = batch_loss(z, labels).loss;
      z[i] = orig;
      worst = std::max(worst, rel_err((up - down) / (2 * kLossFdStep), analytic.dlogits[i], kRelFloor));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < kLossFdMaxRel && secs < kLossFdSeconds,
          "max rel err " + fmt("%.2e", worst) + ", " + fmt("%.2f s", secs)};
}

double jaccard_prefix(const std::vector<std::uint8_t>& truth, std::size_t k) {
  std::set<std::size_t> uni;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i]) uni.insert(i);
  }
  for (std::size_t i = 0; i < k; ++i) uni.insert(i);
  return uni.empty() ? 0.0 : static_cast<double>(k) / static_cast<double>(uni.size());
}

Outcome lovasz_oracle() {
  double worst = 0;
  long vectors = 0;
  for (std::size_t n = 1; n <= 12; ++n) {
    for (std::uint32_t bits = 0; bits < (1u << n); ++bits, ++vectors) {
      std::vector<std::uint8_t> d(n);
      for (std::size_t i = 0; i < n; ++i) d[i] = (bits >> i) & 1u;
      const auto g = lovasz_grad(d);
      for (std::size_t k = 0; k < n; ++k) {
        worst = std::max(worst, std::abs(g[k] - (jaccard_prefix(d, k + 1) - jaccard_prefix(d, k))));
      }
    }
  }
  const std::vector<double> probs{0.6, 0.4, 0.4, 0.6};
  const std::vector<std::uint8_t> labels{0, 1};
  const double hand = lovasz_softmax_flat<double>(probs, 2, labels).loss;
  return {worst <= kSetOracleTol && hand == 0.4,
          std::to_string(vectors) + " vectors, max diff " + fmt("%.1e", worst) + ", hand case " +
              fmt("%.17g", hand)};
}

Outcome perfect_fixed_points() {
  std::mt19937_64 rng(1003);
  double worst_loss = 0, worst_iou = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 16), w = 1 + static_cast<int>(rng() % 16);
    const LabelMask m = random_mask(h, w, 3, rng);
    ProbabilityMap<double> p(3, h, w);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) p.at(m(r, c), r, c) = 1.0;
    }
    worst_loss = std::max(worst_loss, std::abs(lovasz_softmax_loss(p, m).loss));
    worst_iou = std::max(worst_iou, std::abs(*mean_iou(confusion(argmax_mask(p), m)) - 1.0));
  }
  return {worst_loss <= kFixedPointTol && worst_iou <= kFixedPointTol,
          "max |loss| " + fmt("%.1e", worst_loss) + ", max |mIOU-1| " + fmt("%.1e", worst_iou)};
}

double network_fd(Family f, std::uint64_t seed) {
  ArchitectureSpec spec;
  spec.family = f;
  spec.widths = {2, 4};
  spec.input_size = 8;
  spec.res_blocks = 1;
  spec.seed = seed;
  std::mt19937_64 rng(seed);
  ModelParams<double> params = build_model<double>(spec);
  for (auto& b : params) {
    if (b.name.ends_with(".b")) {
      for (auto& v : b.value.values()) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
    }
  }
  const Tensor<double> x = random_tensor<double>({2, 1, 8, 8}, rng);
  const Tensor<double> r = random_tensor<double>({2, 3, 8, 8}, rng);
  const auto objective = [&](const Tensor<double>& y) {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  const auto run = [&](const ModelParams<double>& p) {
    std::mt19937_64 drop(99);
    return forward(p, spec, x, true, &drop);
  };
  ForwardPass<double> pass = run(params);
  const ModelParams<double> grads = backward(params, pass, r);
  double worst = 0;
  const double h = 1e-5;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double orig = params[b][i];
      params[b][i] = orig + h;
      const double up = objective(run(params).logits);
      params[b][i] = orig - h;
      const double down = objective(run(params).logits);
      params[b][i] = orig;
      worst = std::max(worst, rel_err((up - down) / (2 * h), grads[b][i], 1e-6));
    }
  }
  return worst;
}

Outcome network_gradient_check() {
  const auto t0 = Clock::now();
  const double prop = network_fd(Family::proposed, 21);
  const double base = network_fd(Family::baseline, 22);
  const double secs = seconds_since(t0);
  return {prop < kNetFdMaxRel && base < kNetFdMaxRel && secs < kNetFdSeconds,
          "proposed " + fmt("%.2e", prop) + ", baseline " + fmt("%.2e", base) + ", " + fmt("%.1f s", secs)};
}

Outcome tiling_round_trip() {
  std::mt19937_64 rng(1005);
  std::uniform_int_distribution<int> dim(17, 300);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Image img = random_image(dim(rng), dim(rng), rng);
    // Largest power-of-two tile whose reflection pad stays inside the image.
    const int smallest = std::min(img.height(), img.width());
    int t = 8;
    while (t * 2 <= smallest && t < 256) t *= 2;
    const auto [padded, pad] = reflect_pad_to_multiple(img, t);
    if (crop_padding(stitch(tile(padded, t), padded.height(), padded.width()), pad) == img) ++exact;
  }
  const auto [frame, pad] = reflect_pad_to_multiple(Image(480, 640, 0.25), 256);
  const std::size_t tiles = tile(frame, 256).size();
  const bool full_frame_case = frame.width() == 768 && frame.height() == 512 && tiles == 6;
  return {exact == 100 && full_frame_case,
          std::to_string(exact) + "/100 bit-exact; 640x480 -> " + std::to_string(frame.width()) + "x" +
              std::to_string(frame.height()) + ", " + std::to_string(tiles) + " tiles"};
}

Outcome metrics_oracle() {
  std::mt19937_64 rng(1006);
  double worst = 0;
  bool defined_match = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 8), w = 1 + static_cast<int>(rng() % 8);
    const LabelMask truth = random_mask(h, w, 3, rng), pred = random_mask(h, w, 3, rng);
    const ConfusionMatrix cm = confusion(pred, truth);
    double sum = 0;
    int n = 0;
    for (int c = 0; c < 3; ++c) {
      std::set<std::size_t> a, b, inter, uni;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth.data()[i] == c) a.insert(i);
        if (pred.data()[i] == c) b.insert(i);
      }
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(inter, inter.begin()));
      std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::inserter(uni, uni.begin()));
      const auto got = iou(cm, c);
      if (uni.empty()) {
        defined_match = defined_match && !got;
        continue;
      }
      const double want = static_cast<double>(inter.size()) / static_cast<double>(uni.size());
      if (!got) {
        defined_match = false;
        continue;
      }
      worst = std::max(worst, std::abs(*got - want));
      sum += want;
      ++n;
    }
    worst = std::max(worst, std::abs(*mean_iou(cm) - sum / n));
  }
  const double example =
      *mean_iou(confusion(LabelMask(2, 2, {0, 1, 1, 1}), LabelMask(2, 2, {0, 0, 1, 1})));
  const double example_err = std::abs(example - 7.0 / 12.0);
  return {defined_match && worst <= kMetricsTol && example_err <= kMetricsTol,
          "1000 pairs, max diff " + fmt("%.1e", worst) + "; 2x2 example " + fmt("%.15f", example)};
}

std::vector<int> bfs_labels(const LabelMask& m, int cls, int* count) {
  const int h = m.height(), w = m.width();
  std::vector<int> lab(m.size(), 0);
  *count = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (m(r, c) != cls || lab[r * w + c]) continue;
      const int id = ++*count;
      std::queue<std::pair<int, int>> q;
      q.push({r, c});
      lab[r * w + c] = id;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w || m(yy, xx) != cls || lab[yy * w + xx]) continue;
            lab[yy * w + xx] = id;
            q.push({yy, xx});
          }
        }
      }
    }
  }
  return lab;
}

// Component pixels 4-adjacent to the part of the plane outside the component
// that is reachable from beyond the frame.
std::set<PixelPos> outer_border(const LabelMask& m, int cls) {
  const int h = m.height(), w = m.width(), ph = h + 2, pw = w + 2;
  int n = 0;
  const std::vector<int> lab = bfs_labels(m, cls, &n);
  const int d4[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  std::set<PixelPos> out;
  for (int id = 1; id <= n; ++id) {
    const auto in_comp = [&](int r, int c) { return r >= 0 && r < h && c >= 0 && c < w && lab[r * w + c] == id; };
    std::vector<char> ext(static_cast<std::size_t>(ph) * pw, 0);
    std::queue<std::pair<int, int>> q;
    q.push({0, 0});
    ext[0] = 1;
    while (!q.empty()) {
      auto [r, c] = q.front();
      q.pop();
      for (const auto& d : d4) {
        const int rr = r + d[0], cc = c + d[1];
        if (rr < 0 || rr >= ph || cc < 0 || cc >= pw || ext[rr * pw + cc] || in_comp(rr - 1, cc - 1)) continue;
        ext[rr * pw + cc] = 1;
        q.push({rr, cc});
      }
    }
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (!in_comp(r, c)) continue;
        for (const auto& d : d4) {
          if (ext[(r + 1 + d[0]) * pw + (c + 1 + d[1])]) {
            out.insert({r, c});
            break;
          }
        }
      }
    }
  }
  return out;
}

Outcome contour_oracle() {
  std::mt19937_64 rng(1007);
  int ok = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 16), w = 1 + static_cast<int>(rng() % 16);
    LabelMask m(h, w);
    const double density = std::uniform_real_distribution<double>(0.1, 0.7)(rng);
    for (auto& v : m.data()) {
      v = std::uniform_real_distribution<double>()(rng) < density ? static_cast<std::uint8_t>(1 + rng() % 2) : 0;
    }
    bool good = true;
    for (int cls : {1, 2}) {
      int n = 0;
      bfs_labels(m, cls, &n);
      const auto cs = extract_contours(m, cls);
      std::set<PixelPos> traced;
      for (const auto& ct : cs) traced.insert(ct.vertices.begin(), ct.vertices.end());
      good = good && static_cast<int>(cs.size()) == n && traced == outer_border(m, cls);
    }
    ok += good;
  }
  return {ok == 500, std::to_string(ok) + "/500 masks match vertex sets and component counts"};
}

Outcome optimizer_contracts() {
  const ScheduleConfig sched{0.01, 0.001, 40};
  const bool endpoints = std::abs(cosine_lr(0, sched) - 0.01) <= kScheduleTol &&
                         std::abs(cosine_lr(40, sched) - 0.001) <= kScheduleTol;

  std::mt19937_64 rng(1008);
  const auto random_params = [&] {
    ModelParams<double> p;
    p.add("a.w", random_tensor<double>({3, 4}, rng));
    p.add("b.w", random_tensor<double>({5}, rng));
    return p;
  };
  OptimizerConfig plain;
  plain.momentum = 0.0;
  double norm_err = 0;
  bool invariant = true;
  for (int trial = 0; trial < 100; ++trial) {
    const auto start = random_params();
    const auto g = random_params();
    auto p = start;
    auto st = make_optim_state(p, OptimizerMode::nsgd);
    nsgd_step(p, g, st, 0.05, plain);
    for (std::size_t b = 0; b < p.size(); ++b) {
      double s = 0;
      for (std::size_t i = 0; i < p[b].size(); ++i) s += (p[b][i] - start[b][i]) * (p[b][i] - start[b][i]);
      norm_err = std::max(norm_err, std::abs(std::sqrt(s) - 0.05));
    }
    for (double c : {0.5, 4.0, 1024.0}) {
      auto q = start;
      auto sq = make_optim_state(q, OptimizerMode::nsgd);
      auto scaled = g;
      for (auto& blk : scaled) {
        for (auto& v : blk.value.values()) v *= c;
      }
      nsgd_step(q, scaled, sq, 0.05, plain);
      invariant = invariant && q == p;
    }
  }

  ModelParams<double> w;
  w.add("w", Tensor<double>(Shape{1}, {0.0}));
  ModelParams<double> g1;
  g1.add("w", Tensor<double>(Shape{1}, {1.0}));
  auto ast = make_optim_state(w, OptimizerMode::adadelta);
  OptimizerConfig ada;
  ada.rho = 0.9;
  ada.eps = 1e-6;
  adadelta_step(w, g1, ast, 1.0, ada);
  const double delta = w[0][0];
  const bool adadelta_ok = std::abs(delta - (-3.1623e-3)) <= kAdadeltaTol;

  return {endpoints && norm_err <= kNormTol && invariant && adadelta_ok,
          std::string("cosine endpoints ") + (endpoints ? "ok" : "bad") + ", |norm-lr| " + fmt("%.1e", norm_err) +
              ", scaling " + (invariant ? "exact" : "differs") + ", adadelta " + fmt("%.6e", delta)};
}

RunConfig desk_config(const fs::path& root, const char* name = "desk.json") {
  RunConfig c = load_run_config(fs::path(MSEG_SOURCE_DIR) / "configs" / name);
  c.dataset = root / "data";
  c.out = root / "run";
  return c;
}

Outcome desk_training() {
  TempDir dir;
  const auto t0 = Clock::now();
  RunConfig c = desk_config(dir.path());
  synthesize(c);
  const TrainSummary s = run_train(c, [&](const EpochRecord& r) {
    std::fprintf(stderr, "  epoch %d  loss %.4f  val mIOU %.4f  (%.0f s)\n", r.epoch, r.train_loss,
                 r.val_mean_iou, seconds_since(t0));
  });
  const auto best = load_weights<float>(s.best_weights);
  const auto test = load_split(c.dataset, "test");
  const SplitScore sc = evaluate_split(best.params, best.spec, test, c.preprocess, c.tile);
  const double secs = seconds_since(t0);

  RunConfig again = c;
  again.out = dir / "run2";
  run_train(again);
  const bool deterministic = slurp(s.best_weights) == slurp(best_weights_path(again)) &&
                             slurp(s.last_checkpoint) == slurp(last_checkpoint_path(again)) &&
                             slurp(s.metrics_log) == slurp(metrics_log_path(again));
  return {sc.mean_iou >= kDeskMinIou && secs < kDeskSeconds && deterministic,
          "test mIOU " + fmt("%.4f", sc.mean_iou) + " +- " + fmt("%.4f", sc.std_iou) + " (pooled " +
              fmt("%.4f", sc.pooled_mean_iou.value_or(0)) + ") on " + std::to_string(test.size()) +
              " images, " + fmt("%.0f s", secs) + ", rerun " + (deterministic ? "byte-identical" : "differs")};
}

Outcome baseline_sanity() {
  TempDir dir;
  const RunConfig c = desk_config(dir.path(), "desk-baseline.json");
  synthesize(c);
  Trainer<float> t(c, load_split(c.dataset, "train"));
  const double before = t.reference_loss();
  for (int i = 0; i < 50; ++i) t.step();
  const double after = t.reference_loss();
  return {t.steps_taken() == 50 && after < before,
          "fixed-batch loss " + fmt("%.4f", before) + " -> " + fmt("%.4f", after) + " after 50 steps"};
}

template <class Fn>
bool raises_weights_error(Fn&& fn) {
  try {
    fn();
  } catch (const WeightsError&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome persistence() {
  TempDir dir;
  bool round_trips = true;
  for (Family f : {Family::proposed, Family::baseline}) {
    ArchitectureSpec spec;
    spec.family = f;
    spec.widths = {4, 8};
    spec.input_size = 16;
    auto params = build_model<float>(spec);
    save_weights(params, spec, dir / "w.mseg");
    const auto w = load_weights<float>(dir / "w.mseg");
    round_trips = round_trips && w.params == params && w.spec == spec;
    for (OptimizerMode mode : {OptimizerMode::nsgd, OptimizerMode::adadelta}) {
      auto state = make_optim_state(params, mode);
      std::mt19937_64 rng(1011);
      for (int i = 0; i < 2; ++i) {
        auto g = params.zeros_like();
        for (auto& b : g) {
          for (auto& v : b.value.values()) v = std::uniform_real_distribution<float>(-1, 1)(rng);
        }
        optimizer_step(params, g, state, 0.01, OptimizerConfig{});
      }
      save_checkpoint(params, spec, state, dir / "ck.mseg");
      const auto ck = load_checkpoint<float>(dir / "ck.mseg");
      round_trips = round_trips && ck.params == params && ck.state == state;
    }
  }

  ArchitectureSpec spec;
  spec.widths = {4, 8};
  spec.input_size = 16;
  const auto good = serialize_weights(build_model<float>(spec), spec);
  int corruptions = 0, structured = 0, partial = 0;
  const auto check = [&](const std::vector<std::uint8_t>& bad) {
    ++corruptions;
    try {
      const auto w = deserialize_weights<float>(bad);
      if (w.params.size() != build_model<float>(spec).size()) ++partial;
      else ++structured;  // payload-only change, still a complete model
    } catch (const WeightsError&) {
      ++structured;
    } catch (...) {
    }
  };
  for (std::size_t cut = 0; cut < good.size(); cut += std::max<std::size_t>(1, good.size() / 200)) {
    check(std::vector<std::uint8_t>(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut)));
  }
  std::mt19937_64 rng(1012);
  for (int i = 0; i < 500; ++i) {
    auto bad = good;
    bad[rng() % bad.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
    check(bad);
  }
  auto trailing = good;
  trailing.push_back(7);
  check(trailing);
  const bool missing = raises_weights_error([&] { load_weights<float>(dir / "absent.mseg"); });
  return {round_trips && structured == corruptions && partial == 0 && missing,
          std::string("round trips ") + (round_trips ? "bit-exact" : "differ") + ", " + std::to_string(structured) +
              "/" + std::to_string(corruptions) + " corruptions handled, " + std::to_string(partial) +
              " partial models"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"loss-gradient fidelity", loss_gradient_fidelity},
      {"lovasz oracle equivalence", lovasz_oracle},
      {"perfect-prediction fixed points", perfect_fixed_points},
      {"network gradient check", network_gradient_check},
      {"tiling round trip", tiling_round_trip},
      {"metrics oracle", metrics_oracle},
      {"contour oracle", contour_oracle},
      {"optimizer contracts", optimizer_contracts},
      {"desk-scale training", desk_training},
      {"baseline pipeline sanity", baseline_sanity},
      {"persistence", persistence},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
