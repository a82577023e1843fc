#include "cali/evalkit/evalkit.hpp"

#include <cmath>
#include <cstdio>

#include "cali/errors.hpp"
#include "cali/losses/losses.hpp"
#include "cali/synthdata/synthdata.hpp"

namespace cali::evalkit {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw ContractError("confusion matrix needs at least one class");
}

void ConfusionMatrix::accumulate(const nk::Tensor& y_true, const nk::Tensor& y_pred) {
  if (y_true.shape() != y_pred.shape())
    throw ShapeError("accumulate: " + nk::shape_string(y_true.shape()) + " vs " + nk::shape_string(y_pred.shape()));
  auto id = [this](double v) {
    if (!(v >= 0.0) || v >= static_cast<double>(k_) || v != std::floor(v))
      throw ContractError("class id " + std::to_string(v) + " outside [0, " + std::to_string(k_) + ")");
    return static_cast<std::size_t>(v);
  };
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const std::size_t t = id(y_true[i]), p = id(y_pred[i]);
    ++counts_[t * k_ + p];
  }
  total_ += y_true.size();
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ContractError("cannot merge confusion matrices with different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm) {
  const std::size_t K = cm.num_classes();
  std::vector<std::optional<double>> out(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::uint64_t fp = 0, fn = 0;
    for (std::size_t j = 0; j < K; ++j) {
      if (j == k) continue;
      fn += cm.at(k, j);
      fp += cm.at(j, k);
    }
    const std::uint64_t tp = cm.at(k, k), denom = tp + fp + fn;
    if (denom > 0) out[k] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return out;
}

double miou(const ConfusionMatrix& cm) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : iou_per_class(cm))
    if (v) {
      sum += *v;
      ++n;
    }
  if (n == 0) throw ContractError("mIoU is undefined: no class appears in truth or prediction");
  return sum / static_cast<double>(n);
}

ConfusionMatrix evaluate(const models::ModelBundle& bundle, std::span<const nk::Tensor> images,
                         std::span<const nk::Tensor> labels, int head) {
  if (images.size() != labels.size()) throw ContractError("evaluate: image and label counts differ");
  ConfusionMatrix cm(bundle.config.num_classes);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto out = models::forward_seg(bundle, images[i]);
    cm.accumulate(synthdata::class_ids(labels[i]), models::predict_labels(head == 2 ? out.p2 : out.p1));
  }
  return cm;
}

double target_discrepancy(const models::ModelBundle& bundle, std::span<const nk::Tensor> images) {
  if (images.empty()) throw ContractError("target_discrepancy needs a non-empty evaluation set");
  double sum = 0.0;
  for (const auto& x : images) {
    const auto out = models::forward_seg(bundle, x);
    sum += losses::class_alignment_loss(out.p1, out.p2);
  }
  return sum / static_cast<double>(images.size());
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string to_csv(std::span<const EvalRecord> records, std::size_t num_classes) {
  std::string out = "iteration";
  for (std::size_t k = 0; k < num_classes; ++k) out += ",iou_" + std::to_string(k);
  out += ",miou,target_discrepancy\n";
  for (const auto& r : records) {
    out += std::to_string(r.iteration);
    for (std::size_t k = 0; k < num_classes; ++k) {
      out += ',';
      if (k < r.iou.size() && r.iou[k]) out += format_number(*r.iou[k]);
    }
    out += ',' + format_number(r.miou) + ',' + format_number(r.target_discrepancy) + '\n';
  }
  return out;
}

nlohmann::ordered_json to_json(const EvalRecord& record) {
  nlohmann::ordered_json iou = nlohmann::ordered_json::array();
  for (const auto& v : record.iou) iou.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr));
  return {{"iteration", record.iteration},
          {"iou", iou},
          {"miou", record.miou},
          {"target_discrepancy", record.target_discrepancy}};
}

}  // namespace cali::evalkit
