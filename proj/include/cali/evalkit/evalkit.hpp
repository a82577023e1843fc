#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cali/models/models.hpp"
#include "cali/numkit/tensor.hpp"
#include "json.hpp"

namespace cali::evalkit {

// K x K pixel counts; rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  std::size_t num_classes() const noexcept { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  std::uint64_t total() const noexcept { return total_; }

  // y_true and y_pred are H x W maps of class ids. Throws ContractError on
  // ids outside [0, K) or non-integral values; ShapeError on mismatch.
  void accumulate(const nk::Tensor& y_true, const nk::Tensor& y_pred);
  void merge(const ConfusionMatrix& other);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

// tp / (tp + fp + fn) per class; nullopt when a class is absent from both
// truth and prediction.
std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm);

// Mean of the defined per-class IoUs. Undefined classes are excluded rather
// than counted as zero. Throws ContractError when no class is defined.
double miou(const ConfusionMatrix& cm);

// Confusion matrix of head C1 (or C2 when `head` is 2) over labelled images.
ConfusionMatrix evaluate(const models::ModelBundle& bundle, std::span<const nk::Tensor> images,
                         std::span<const nk::Tensor> labels, int head = 1);

// Mean over images of the mean per-pixel discrepancy between C1 and C2.
double target_discrepancy(const models::ModelBundle& bundle, std::span<const nk::Tensor> images);

struct EvalRecord {
  std::int64_t iteration = 0;
  std::vector<std::optional<double>> iou;
  double miou = 0.0;
  double target_discrepancy = 0.0;
};

// One row per record: iteration, iou_0..iou_{K-1}, miou, target_discrepancy.
// Undefined IoUs are written as empty fields.
std::string to_csv(std::span<const EvalRecord> records, std::size_t num_classes);
nlohmann::ordered_json to_json(const EvalRecord& record);

// Fixed-precision formatting shared by every CSV emitter.
std::string format_number(double v);

}  // namespace cali::evalkit
