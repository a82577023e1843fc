#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cali/evalkit/evalkit.hpp"
#include "cali/losses/losses.hpp"
#include "cali/models/models.hpp"
#include "cali/synthdata/synthdata.hpp"

namespace cali::trainer {

enum class Method { So, Da, Ca, Cali, Icali };

std::string method_name(Method m);
// Throws ConfigError (key "train.method") for unknown names.
Method parse_method(const std::string& name);

struct TrainConfig {
  Method method = Method::Cali;
  std::int64_t max_iters = 5000;
  std::int64_t interval = 50;
  double lr_da = 2.5e-4;  // SGD rate for G, C1, C2 during domain-alignment iterations
  double lr_ca = 1e-3;    // SGD rate for G, C1, C2 during class-alignment iterations
  double lr_d = 1e-4;     // Adam rate for D
  double split_ratio = 0.5;
  std::size_t iou_window = 50;
  bool ablation_wrong_order = false;
  std::uint64_t seed = 0;
  std::int64_t log_every = 100;
  std::int64_t checkpoint_every = 1000;
  std::size_t eval_images = 16;

  // Throws ConfigError with a "train.*" key path.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Supervised step on G, C1, C2 against the two-head segmentation loss.
// Throws ContractError when the batch has no labels. When `p1_out` is set it
// receives C1's prediction for the batch, computed before the update.
double supervised_step(models::ModelBundle& bundle, const losses::Batch& source, double lr,
                       nk::Tensor* p1_out = nullptr);

// Minimizes the cosine similarity of the two heads' weights; G untouched.
// Returns the similarity before the update.
double wr_step(models::ModelBundle& bundle, double lr);

struct DaResult {
  double v1 = 0.0;           // after both sub-steps
  double d_accuracy = 0.0;   // D's batch accuracy after both sub-steps
};

// Sub-step "G": only G moves, minimizing V1. Sub-step "D": only D moves,
// maximizing V1. The G sub-step runs first unless `wrong_order` is set.
DaResult da_step(models::ModelBundle& bundle, const losses::Batch& source, const losses::Batch& target, double lr_g,
                 double lr_d, bool wrong_order = false);

// Sub-step "G": only G moves, minimizing V2 on the target batch. Sub-step
// "C": only C1 and C2 move, maximizing V2. Returns V2 after both.
double ca_step(models::ModelBundle& bundle, const losses::Batch& target, double lr, bool wrong_order = false);

// Per-class source IoU of C1 over the most recent `window` batches.
class ClassPerformance {
 public:
  ClassPerformance(std::size_t num_classes, std::size_t window, double split_ratio);

  // y_true and y_pred are H x W class-id maps.
  void record(const nk::Tensor& y_true, const nk::Tensor& y_pred);
  bool full() const noexcept { return history_.size() == window_; }
  std::size_t batches() const noexcept { return history_.size(); }

  // Running IoU; classes absent from the window count as 0.
  std::vector<double> iou() const;
  // The ceil(rho * K) classes with the lowest IoU (ties go to the lower id).
  std::vector<bool> under_performing() const;
  // Fixes the IoU values directly, bypassing the window.
  void set_iou(std::vector<double> iou);

 private:
  std::size_t k_;
  std::size_t window_;
  double ratio_;
  std::deque<evalkit::ConfusionMatrix> history_;
  std::optional<std::vector<double>> fixed_;
};

// M_s marks pixels of y_s (one-hot K x H x W) whose class is under-performing;
// M_t = 1 - M_s. Both are H x W.
std::pair<nk::Tensor, nk::Tensor> icali_build_mask(const ClassPerformance& perf, const nk::Tensor& y_s);

// x_m = x_s * M_s + x_t * M_t and y_m = y_s * M_s + o_1t * M_t, with masks
// broadcast over channels. Throws ContractError for non-binary or
// non-complementary masks.
std::pair<nk::Tensor, nk::Tensor> icali_mix(const nk::Tensor& x_s, const nk::Tensor& y_s, const nk::Tensor& x_t,
                                            const nk::Tensor& o_1t, const nk::Tensor& m_s, const nk::Tensor& m_t);

// One-hot K x H x W of C1's argmax prediction.
nk::Tensor one_hot_prediction(const nk::Tensor& p);

// Supervised step on G and C1 against the mixed-label cross-entropy; C2 and D
// are untouched.
double icali_step(models::ModelBundle& bundle, const losses::Batch& mixed, double lr);

struct MetricsRow {
  std::int64_t iter = 0;
  std::string phase;
  double seg_loss = 0.0;
  std::optional<double> v1, v2, wr;
  double target_discrepancy = 0.0;
  std::vector<std::optional<double>> iou;
  double miou = 0.0;
  std::optional<double> d_accuracy;  // running mean over recent DA steps
};

std::string metrics_csv(const std::vector<MetricsRow>& rows, std::size_t num_classes);

struct RunOptions {
  models::ArchitectureConfig arch;
  // Labelled target images used for the periodic log and the final score. When
  // empty, the first `eval_images` of the target training set are used.
  const synthdata::Dataset* eval_set = nullptr;
  std::optional<std::filesystem::path> output_dir;  // metrics.csv and checkpoints
};

struct RunResult {
  models::ModelBundle bundle;
  std::vector<MetricsRow> metrics;
  double final_miou = 0.0;
  std::vector<std::optional<double>> final_iou;
  double final_discrepancy = 0.0;
  std::int64_t da_steps = 0;
  std::int64_t ca_steps = 0;
  std::int64_t icali_steps = 0;
  // First iteration at which the running D accuracy exceeded 0.95.
  std::optional<std::int64_t> d_confident_at;
};

// Throws NumericError on a non-finite loss after writing a diagnostic
// checkpoint when an output directory is set.
RunResult run(const TrainConfig& config, const synthdata::Dataset& source, const synthdata::Dataset& target,
              const RunOptions& options = {});

}  // namespace cali::trainer
