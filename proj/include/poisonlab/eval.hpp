#pragma once

// Label flip rate, clean accuracy and macro F1.

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/error.hpp"
#include "poisonlab/model.hpp"

namespace poisonlab {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t c = 0) : num_classes(c), counts(c * c, 0) {}

  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * num_classes + pred]; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * num_classes + pred]; }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t k = 0; k < num_classes; ++k) s += at(k, k);
    return s;
  }

  double accuracy() const {
    const auto n = total();
    return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
  }

  // Per-class F1; a class with no predicted and no actual members scores 0.
  double f1(std::size_t k) const {
    std::uint64_t tp = at(k, k), fp = 0, fn = 0;
    for (std::size_t j = 0; j < num_classes; ++j) {
      if (j == k) continue;
      fp += at(j, k);
      fn += at(k, j);
    }
    const auto denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }

  double macro_f1() const {
    if (num_classes == 0) return 0.0;
    double s = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) s += f1(k);
    return s / static_cast<double>(num_classes);
  }
};

inline ConfusionMatrix confusion(const ModelParams& params, const Dataset& ds) {
  ConfusionMatrix cm(params.shape().num_classes);
  for (const auto& ex : ds.examples) {
    if (ex.label >= cm.num_classes) throw ValidationError("confusion: label out of range");
    cm.at(ex.label, predict(params, ex.token_ids))++;
  }
  return cm;
}

/// Fraction of attacked examples predicted as `target_class`.
inline double label_flip_rate(const ModelParams& params, const Dataset& attacked_set, Label target_class) {
  if (attacked_set.empty()) throw ValidationError("label_flip_rate: empty attacked set");
  std::size_t flips = 0;
  for (const auto& ex : attacked_set.examples) flips += predict(params, ex.token_ids) == target_class;
  return static_cast<double>(flips) / static_cast<double>(attacked_set.size());
}

inline double clean_accuracy(const ModelParams& params, const Dataset& ds) {
  if (ds.empty()) throw ValidationError("clean_accuracy: empty dataset");
  return confusion(params, ds).accuracy();
}

inline double macro_f1(const ModelParams& params, const Dataset& ds) {
  if (ds.empty()) throw ValidationError("macro_f1: empty dataset");
  return confusion(params, ds).macro_f1();
}

struct MetricsReport {
  double lfr = 0.0;
  double clean_accuracy = 0.0;
  double macro_f1 = 0.0;
  ConfusionMatrix confusion;
  std::size_t clean_count = 0;
  std::size_t attacked_count = 0;
  std::size_t flipped_count = 0;
};

inline MetricsReport evaluate(const ModelParams& params, const Dataset& clean_dev, const Dataset& attacked_dev,
                              Label target) {
  if (clean_dev.empty()) throw ValidationError("evaluate: empty clean dev set");
  if (attacked_dev.empty()) throw ValidationError("evaluate: empty attacked dev set");
  MetricsReport r;
  r.confusion = confusion(params, clean_dev);
  r.clean_accuracy = r.confusion.accuracy();
  r.macro_f1 = r.confusion.macro_f1();
  r.clean_count = clean_dev.size();
  r.attacked_count = attacked_dev.size();
  for (const auto& ex : attacked_dev.examples) r.flipped_count += predict(params, ex.token_ids) == target;
  r.lfr = static_cast<double>(r.flipped_count) / static_cast<double>(r.attacked_count);
  return r;
}

inline constexpr const char* kMetricsHeader = "setting,method,lfr,clean_accuracy,macro_f1";

inline std::string metrics_row(const std::string& setting, const std::string& method, const MetricsReport& r) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << setting << ',' << method << ',' << r.lfr << ',' << r.clean_accuracy
     << ',' << r.macro_f1;
  return os.str();
}

inline void write_metrics_csv(const std::string& path, const std::string& setting, const std::string& method,
                              const MetricsReport& r) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write metrics " + path);
  out << kMetricsHeader << '\n' << metrics_row(setting, method, r) << '\n';
}

}  // namespace poisonlab
