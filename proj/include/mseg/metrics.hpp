#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mseg/errors.hpp"
#include "mseg/image.hpp"

namespace mseg {

// counts[t][p]: pixels with truth t predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = kDefaultNumClasses)
      : n_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
    if (num_classes < 1) throw InvalidArgument("confusion matrix needs >= 1 class");
  }

  int num_classes() const { return n_; }
  std::uint64_t count(int truth, int pred) const { return counts_[truth * n_ + pred]; }
  void add(int truth, int pred, std::uint64_t k = 1) { counts_[truth * n_ + pred] += k; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }

  ConfusionMatrix& merge(const ConfusionMatrix& o) {
    if (o.n_ != n_) throw InvalidArgument("cannot merge confusion matrices of different size");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int n_;
  std::vector<std::uint64_t> counts_;
};

// Lowest class id wins ties.
template <class T>
LabelMask argmax_mask(const ProbabilityMap<T>& probs) {
  LabelMask m(probs.height(), probs.width(), probs.num_classes());
  const std::size_t n = probs.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    T best_p = probs.plane(0)[i];
    for (int c = 1; c < probs.num_classes(); ++c) {
      if (probs.plane(c)[i] > best_p) {
        best_p = probs.plane(c)[i];
        best = c;
      }
    }
    m.data()[i] = static_cast<std::uint8_t>(best);
  }
  return m;
}

inline void accumulate(ConfusionMatrix& cm, const LabelMask& pred, const LabelMask& truth) {
  if (pred.height() != truth.height() || pred.width() != truth.width()) {
    throw InvalidArgument("accumulate: prediction and truth dimensions differ");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int t = truth.data()[i], p = pred.data()[i];
    if (t >= cm.num_classes() || p >= cm.num_classes()) {
      throw InvalidArgument("accumulate: class id outside confusion matrix");
    }
    cm.add(t, p);
  }
}

inline ConfusionMatrix confusion(const LabelMask& pred, const LabelMask& truth) {
  ConfusionMatrix cm(std::max(truth.num_classes(), pred.num_classes()));
  accumulate(cm, pred, truth);
  return cm;
}

// TP / (TP + FP + FN); nullopt when the class has an empty union.
inline std::optional<double> iou(const ConfusionMatrix& cm, int c) {
  if (c < 0 || c >= cm.num_classes()) throw InvalidArgument("iou: class out of range");
  const std::uint64_t tp = cm.count(c, c);
  std::uint64_t fp = 0, fn = 0;
  for (int k = 0; k < cm.num_classes(); ++k) {
    if (k == c) continue;
    fp += cm.count(k, c);
    fn += cm.count(c, k);
  }
  const std::uint64_t uni = tp + fp + fn;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(uni);
}

// Mean over classes with a non-empty union; nullopt if there are none.
inline std::optional<double> mean_iou(const ConfusionMatrix& cm) {
  double sum = 0;
  int n = 0;
  for (int c = 0; c < cm.num_classes(); ++c) {
    if (const auto v = iou(cm, c)) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

struct MeanStd {
  double mean = 0;
  double stddev = 0;  // sample standard deviation (n - 1); 0 for n < 2
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  r.n = xs.size();
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

struct ImageScore {
  std::string name;
  ConfusionMatrix cm;
  std::optional<double> mean_iou;
};

// Pooled per-class IOU plus per-image mean IOU and their mean +- std.
inline nlohmann::json evaluation_report(const std::vector<ImageScore>& images,
                                        const std::vector<std::string>& class_names = {
                                            "background", "cell", "bead"}) {
  nlohmann::json report;
  const int nc = images.empty() ? kDefaultNumClasses : images.front().cm.num_classes();
  ConfusionMatrix pooled(nc);
  std::vector<double> scores;
  nlohmann::json per_image = nlohmann::json::array();
  for (const auto& im : images) {
    pooled.merge(im.cm);
    nlohmann::json e{{"name", im.name}};
    if (im.mean_iou) {
      e["mean_iou"] = *im.mean_iou;
      scores.push_back(*im.mean_iou);
    } else {
      e["mean_iou"] = nullptr;
    }
    per_image.push_back(std::move(e));
  }
  nlohmann::json per_class = nlohmann::json::object();
  nlohmann::json undefined = nlohmann::json::array();
  for (int c = 0; c < nc; ++c) {
    const std::string name = c < static_cast<int>(class_names.size()) ? class_names[c]
                                                                       : "class" + std::to_string(c);
    if (const auto v = iou(pooled, c)) {
      per_class[name] = *v;
    } else {
      per_class[name] = nullptr;
      undefined.push_back(name);
    }
  }
  const MeanStd ms = mean_std(scores);
  report["per_class_iou"] = per_class;
  report["undefined_classes"] = undefined;
  const auto pooled_mean = mean_iou(pooled);
  report["pooled_mean_iou"] = pooled_mean ? nlohmann::json(*pooled_mean) : nlohmann::json(nullptr);
  report["per_image"] = per_image;
  report["n"] = ms.n;
  report["mean_iou"] = ms.mean;
  report["std_iou"] = ms.stddev;
  return report;
}

}  // namespace mseg
