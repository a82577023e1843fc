#include "cali/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <utility>

#include "cali/errors.hpp"
#include "cali/numkit/rng.hpp"

namespace cali::trainer {

using models::ModelBundle;
using nk::Graph;
using nk::Tensor;
using nk::Var;

std::string method_name(Method m) {
  switch (m) {
    case Method::So: return "so";
    case Method::Da: return "da";
    case Method::Ca: return "ca";
    case Method::Cali: return "cali";
    case Method::Icali: return "icali";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::So, Method::Da, Method::Ca, Method::Cali, Method::Icali})
    if (method_name(m) == name) return m;
  throw ConfigError("unknown method '" + name + "' (expected so, da, ca, cali or icali)", "train.method");
}

void TrainConfig::validate() const {
  if (max_iters < 1) throw ConfigError("must be at least 1", "train.max_iters");
  if (interval < 1) throw ConfigError("must be at least 1", "train.interval");
  for (auto [v, key] : {std::pair{lr_da, "train.lr_da"}, {lr_ca, "train.lr_ca"}, {lr_d, "train.lr_d"}})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("must be a finite non-negative rate", key);
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("must lie in (0, 1)", "train.split_ratio");
  if (iou_window < 1) throw ConfigError("must be at least 1", "train.iou_window");
  if (log_every < 1) throw ConfigError("must be at least 1", "train.log_every");
  if (checkpoint_every < 1) throw ConfigError("must be at least 1", "train.checkpoint_every");
  if (eval_images < 1) throw ConfigError("must be at least 1", "train.eval_images");
}

namespace {

void apply(nk::Optimizer& opt, models::Network& net, double lr) {
  const auto params = net.parameters();
  opt.step(params, lr);
}

double slope_of(const ModelBundle& b) { return b.config.leaky_slope; }

// D outputs for fixed feature maps.
std::pair<double, double> discriminate_features(const ModelBundle& b, const Tensor& fs, const Tensor& ft) {
  Graph g;
  const double ds = models::discriminate(g, b.discriminator, g.constant(fs), slope_of(b)).value().item();
  const double dt = models::discriminate(g, b.discriminator, g.constant(ft), slope_of(b)).value().item();
  return {ds, dt};
}

Tensor features(const ModelBundle& b, const Tensor& x) {
  Graph g;
  return models::extract(g, b.extractor, g.constant(x), slope_of(b)).value();
}

Tensor head1_prediction(const ModelBundle& b, const Tensor& x) {
  Graph g;
  const Var f = models::extract(g, b.extractor, g.constant(x), slope_of(b));
  return models::classify(g, b.head1, f).value();
}

void check_mask(const Tensor& m, const char* name) {
  for (double v : m.values())
    if (v != 0.0 && v != 1.0) throw ContractError(std::string(name) + " must be binary");
}

}  // namespace

double supervised_step(ModelBundle& bundle, const losses::Batch& source, double lr, Tensor* p1_out) {
  if (!source.y) throw ContractError("supervised_step needs a labelled batch");
  Graph g;
  const Var f = models::extract(g, bundle.extractor, g.constant(source.x), true, slope_of(bundle));
  const Var p1 = models::classify(g, bundle.head1, f, true);
  const Var p2 = models::classify(g, bundle.head2, f, true);
  const Var loss = losses::seg_loss(p1, p2, *source.y);
  if (p1_out) *p1_out = p1.value();
  g.backward(loss);
  apply(bundle.opt_extractor, bundle.extractor, lr);
  apply(bundle.opt_head1, bundle.head1, lr);
  apply(bundle.opt_head2, bundle.head2, lr);
  return loss.value().item();
}

double wr_step(ModelBundle& bundle, double lr) {
  Graph g;
  const Var w1 = models::weight_vector(g, bundle.head1, true);
  const Var w2 = models::weight_vector(g, bundle.head2, true);
  const Var wr = losses::weight_regularization(w1, w2);
  g.backward(wr);
  apply(bundle.opt_head1, bundle.head1, lr);
  apply(bundle.opt_head2, bundle.head2, lr);
  return wr.value().item();
}

DaResult da_step(ModelBundle& bundle, const losses::Batch& source, const losses::Batch& target, double lr_g,
                 double lr_d, bool wrong_order) {
  const double slope = slope_of(bundle);
  Tensor fs, ft;  // features seen by the D sub-step

  auto g_sub = [&] {
    Graph g;
    const Var vs = models::extract(g, bundle.extractor, g.constant(source.x), true, slope);
    const Var vt = models::extract(g, bundle.extractor, g.constant(target.x), true, slope);
    const ModelBundle& frozen = bundle;
    const Var v1 = losses::domain_loss(models::discriminate(g, frozen.discriminator, vs, slope),
                                       models::discriminate(g, frozen.discriminator, vt, slope));
    g.backward(v1);
    apply(bundle.opt_extractor, bundle.extractor, lr_g);
  };
  auto d_sub = [&] {
    fs = features(bundle, source.x);
    ft = features(bundle, target.x);
    Graph g;
    const Var ds = models::discriminate(g, bundle.discriminator, g.constant(fs), true, slope);
    const Var dt = models::discriminate(g, bundle.discriminator, g.constant(ft), true, slope);
    g.backward(nk::neg(losses::domain_loss(ds, dt)));
    apply(bundle.opt_discriminator, bundle.discriminator, lr_d);
  };

  if (wrong_order) {
    d_sub();
    g_sub();
    fs = features(bundle, source.x);
    ft = features(bundle, target.x);
  } else {
    g_sub();
    d_sub();
  }
  const auto [ds, dt] = discriminate_features(bundle, fs, ft);
  return {losses::domain_loss(ds, dt), 0.5 * ((ds > 0.5 ? 1.0 : 0.0) + (dt < 0.5 ? 1.0 : 0.0))};
}

double ca_step(ModelBundle& bundle, const losses::Batch& target, double lr, bool wrong_order) {
  const double slope = slope_of(bundle);
  Tensor ft;

  auto g_sub = [&] {
    Graph g;
    const Var f = models::extract(g, bundle.extractor, g.constant(target.x), true, slope);
    const ModelBundle& frozen = bundle;
    const Var v2 = losses::class_alignment_loss(models::classify(g, frozen.head1, f), models::classify(g, frozen.head2, f));
    g.backward(v2);
    apply(bundle.opt_extractor, bundle.extractor, lr);
  };
  auto c_sub = [&] {
    ft = features(bundle, target.x);
    Graph g;
    const Var f = g.constant(ft);
    const Var v2 = losses::class_alignment_loss(models::classify(g, bundle.head1, f, true),
                                                models::classify(g, bundle.head2, f, true));
    g.backward(nk::neg(v2));
    apply(bundle.opt_head1, bundle.head1, lr);
    apply(bundle.opt_head2, bundle.head2, lr);
  };

  if (wrong_order) {
    c_sub();
    g_sub();
    ft = features(bundle, target.x);
  } else {
    g_sub();
    c_sub();
  }
  Graph g;
  const Var f = g.constant(ft);
  const Tensor p1 = models::classify(g, std::as_const(bundle).head1, f).value();
  const Tensor p2 = models::classify(g, std::as_const(bundle).head2, f).value();
  return losses::class_alignment_loss(p1, p2);
}

ClassPerformance::ClassPerformance(std::size_t num_classes, std::size_t window, double split_ratio)
    : k_(num_classes), window_(window), ratio_(split_ratio) {
  if (num_classes < 1 || window < 1) throw ContractError("class performance needs classes and a window");
  if (!(split_ratio > 0.0 && split_ratio <= 1.0)) throw ContractError("split ratio must lie in (0, 1]");
}

void ClassPerformance::record(const Tensor& y_true, const Tensor& y_pred) {
  evalkit::ConfusionMatrix cm(k_);
  cm.accumulate(y_true, y_pred);
  history_.push_back(std::move(cm));
  if (history_.size() > window_) history_.pop_front();
}

std::vector<double> ClassPerformance::iou() const {
  if (fixed_) return *fixed_;
  evalkit::ConfusionMatrix total(k_);
  for (const auto& cm : history_) total.merge(cm);
  std::vector<double> out(k_, 0.0);
  const auto per = evalkit::iou_per_class(total);
  for (std::size_t k = 0; k < k_; ++k) out[k] = per[k].value_or(0.0);
  return out;
}

void ClassPerformance::set_iou(std::vector<double> iou) {
  if (iou.size() != k_) throw ContractError("expected one IoU per class");
  fixed_ = std::move(iou);
}

std::vector<bool> ClassPerformance::under_performing() const {
  const auto v = iou();
  std::vector<std::size_t> order(k_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  const auto n = std::min(k_, static_cast<std::size_t>(std::ceil(ratio_ * static_cast<double>(k_) - 1e-12)));
  std::vector<bool> under(k_, false);
  for (std::size_t i = 0; i < n; ++i) under[order[i]] = true;
  return under;
}

std::pair<Tensor, Tensor> icali_build_mask(const ClassPerformance& perf, const Tensor& y_s) {
  const Tensor ids = synthdata::class_ids(y_s);
  const auto under = perf.under_performing();
  if (under.size() != y_s.dim(0)) throw ShapeError("label class count differs from the performance tracker");
  Tensor ms(ids.shape()), mt(ids.shape());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ms[i] = under[static_cast<std::size_t>(ids[i])] ? 1.0 : 0.0;
    mt[i] = 1.0 - ms[i];
  }
  return {ms, mt};
}

std::pair<Tensor, Tensor> icali_mix(const Tensor& x_s, const Tensor& y_s, const Tensor& x_t, const Tensor& o_1t,
                                    const Tensor& m_s, const Tensor& m_t) {
  if (x_s.shape() != x_t.shape() || y_s.shape() != o_1t.shape() || m_s.shape() != m_t.shape() || m_s.rank() != 2 ||
      x_s.rank() != 3 || y_s.rank() != 3 || x_s.dim(1) != m_s.dim(0) || x_s.dim(2) != m_s.dim(1) ||
      y_s.dim(1) != m_s.dim(0) || y_s.dim(2) != m_s.dim(1))
    throw ShapeError("icali_mix: inconsistent shapes");
  check_mask(m_s, "M_s");
  check_mask(m_t, "M_t");
  for (std::size_t i = 0; i < m_s.size(); ++i)
    if (m_s[i] + m_t[i] != 1.0) throw ContractError("M_t must equal 1 - M_s");
  const std::size_t hw = m_s.size();
  Tensor xm(x_s.shape()), ym(y_s.shape());
  for (std::size_t c = 0; c < x_s.dim(0); ++c)
    for (std::size_t i = 0; i < hw; ++i) xm[c * hw + i] = x_s[c * hw + i] * m_s[i] + x_t[c * hw + i] * m_t[i];
  for (std::size_t k = 0; k < y_s.dim(0); ++k)
    for (std::size_t i = 0; i < hw; ++i) ym[k * hw + i] = y_s[k * hw + i] * m_s[i] + o_1t[k * hw + i] * m_t[i];
  return {xm, ym};
}

Tensor one_hot_prediction(const Tensor& p) {
  const Tensor ids = models::predict_labels(p);
  Tensor out(p.shape());
  const std::size_t hw = ids.size();
  for (std::size_t i = 0; i < hw; ++i) out[static_cast<std::size_t>(ids[i]) * hw + i] = 1.0;
  return out;
}

double icali_step(ModelBundle& bundle, const losses::Batch& mixed, double lr) {
  if (!mixed.y) throw ContractError("icali_step needs mixed labels");
  Graph g;
  const Var f = models::extract(g, bundle.extractor, g.constant(mixed.x), true, slope_of(bundle));
  const Var loss = losses::mixed_loss(models::classify(g, bundle.head1, f, true), *mixed.y);
  g.backward(loss);
  apply(bundle.opt_extractor, bundle.extractor, lr);
  apply(bundle.opt_head1, bundle.head1, lr);
  return loss.value().item();
}

std::string metrics_csv(const std::vector<MetricsRow>& rows, std::size_t num_classes) {
  using evalkit::format_number;
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  std::string out = "iter,phase,seg_loss,v1,v2,wr,target_discrepancy";
  for (std::size_t k = 0; k < num_classes; ++k) out += ",iou_" + std::to_string(k);
  out += ",miou,d_accuracy\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iter) + ',' + r.phase + ',' + format_number(r.seg_loss) + ',' + opt(r.v1) + ',' +
           opt(r.v2) + ',' + opt(r.wr) + ',' + format_number(r.target_discrepancy);
    for (std::size_t k = 0; k < num_classes; ++k) out += ',' + (k < r.iou.size() ? opt(r.iou[k]) : std::string());
    out += ',' + format_number(r.miou) + ',' + opt(r.d_accuracy) + '\n';
  }
  return out;
}

namespace {

constexpr std::size_t kDAccuracyWindow = 20;
constexpr double kConfident = 0.95;

struct EvalSet {
  std::vector<Tensor> images, labels;
};

EvalSet eval_subset(const synthdata::Dataset& ds, std::size_t limit) {
  EvalSet e;
  for (std::size_t i = 0; i < std::min(limit, ds.size()); ++i) {
    e.images.push_back(ds.samples[i].x);
    e.labels.push_back(ds.samples[i].y);
  }
  return e;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string checkpoint_name(std::int64_t iter) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "checkpoint_%06lld.ckpt", static_cast<long long>(iter));
  return buf;
}

}  // namespace

RunResult run(const TrainConfig& config, const synthdata::Dataset& source, const synthdata::Dataset& target,
              const RunOptions& options) {
  config.validate();
  options.arch.validate();
  if (source.size() == 0 || target.size() == 0) throw ContractError("training needs non-empty datasets");
  if (options.arch.num_classes != source.spec.num_classes || options.arch.in_channels != source.spec.channels)
    throw ConfigError("architecture does not match the dataset's classes or channels", "arch.num_classes");

  const std::size_t K = options.arch.num_classes;
  const Method method = config.method;
  const bool alternating = method == Method::Cali || method == Method::Icali;
  const bool uses_wr = method == Method::Ca || alternating;

  RunResult result{models::build(options.arch, config.seed), {}, 0.0, {}, 0.0, 0, 0, 0, std::nullopt};
  ModelBundle& bundle = result.bundle;
  if (options.output_dir) std::filesystem::create_directories(*options.output_dir);

  const synthdata::Dataset& eval_source = options.eval_set ? *options.eval_set : target;
  const EvalSet log_set = eval_subset(eval_source, config.eval_images);
  const EvalSet final_set = eval_subset(eval_source, options.eval_set ? eval_source.size() : config.eval_images);

  nk::Rng sampler(nk::derive_seed(config.seed, 100));
  ClassPerformance perf(K, config.iou_window, config.split_ratio);
  std::deque<double> d_acc;
  bool is_domain = true;

  auto log_row = [&](std::int64_t iter, const std::string& phase, double seg, std::optional<double> v1,
                     std::optional<double> v2, std::optional<double> wr) {
    MetricsRow row{iter, phase, seg, v1, v2, wr, 0.0, {}, 0.0, std::nullopt};
    const auto cm = evalkit::evaluate(bundle, log_set.images, log_set.labels);
    row.iou = evalkit::iou_per_class(cm);
    row.miou = evalkit::miou(cm);
    row.target_discrepancy = evalkit::target_discrepancy(bundle, log_set.images);
    if (!d_acc.empty()) row.d_accuracy = std::accumulate(d_acc.begin(), d_acc.end(), 0.0) / d_acc.size();
    result.metrics.push_back(std::move(row));
  };

  log_row(0, "init", 0.0, std::nullopt, std::nullopt, std::nullopt);

  for (std::int64_t m = 1; m <= config.max_iters; ++m) {
    if (alternating && m % config.interval == 0) is_domain = !is_domain;
    const bool do_da = method == Method::Da || (alternating && is_domain);
    const bool do_ca = method == Method::Ca || (alternating && !is_domain);
    const std::string phase = method == Method::So ? "so" : do_da ? "da" : "ca";

    const double decay = nk::poly_lr(1.0, m - 1, config.max_iters);
    const double lr = (do_ca ? config.lr_ca : config.lr_da) * decay;

    const auto& s = source.samples[sampler.below(source.size())];
    const auto& t = target.samples[sampler.below(target.size())];
    const losses::Batch src{s.x, s.y, Domain::Source};
    const losses::Batch tgt{t.x, std::nullopt, Domain::Target};

    Tensor p1s;
    const double seg = supervised_step(bundle, src, lr, method == Method::Icali ? &p1s : nullptr);
    std::optional<double> wr, v1, v2, lm;
    if (uses_wr) wr = wr_step(bundle, lr);
    if (do_da) {
      const DaResult r = da_step(bundle, src, tgt, lr, config.lr_d * decay, config.ablation_wrong_order);
      v1 = r.v1;
      ++result.da_steps;
      d_acc.push_back(r.d_accuracy);
      if (d_acc.size() > kDAccuracyWindow) d_acc.pop_front();
      const double mean = std::accumulate(d_acc.begin(), d_acc.end(), 0.0) / d_acc.size();
      if (!result.d_confident_at && d_acc.size() == kDAccuracyWindow && mean > kConfident) result.d_confident_at = m;
    }
    if (do_ca) {
      v2 = ca_step(bundle, tgt, lr, config.ablation_wrong_order);
      ++result.ca_steps;
    }
    if (method == Method::Icali) {
      perf.record(synthdata::class_ids(s.y), models::predict_labels(p1s));
      if (perf.full()) {
        const auto [ms, mt] = icali_build_mask(perf, s.y);
        const Tensor o1t = one_hot_prediction(head1_prediction(bundle, t.x));
        auto [xm, ym] = icali_mix(s.x, s.y, t.x, o1t, ms, mt);
        lm = icali_step(bundle, losses::Batch{std::move(xm), std::move(ym), Domain::Mixed}, lr);
        ++result.icali_steps;
      }
    }

    bool finite = std::isfinite(seg);
    for (const auto& v : {wr, v1, v2, lm}) finite = finite && (!v || std::isfinite(*v));
    if (!finite) {
      std::string diag = "non-finite loss at iteration " + std::to_string(m) + " (phase " + phase +
                         "): seg_loss=" + evalkit::format_number(seg);
      for (auto [name, v] : {std::pair{"wr", wr}, {"v1", v1}, {"v2", v2}, {"mixed", lm}})
        if (v) diag += std::string(", ") + name + "=" + evalkit::format_number(*v);
      if (options.output_dir) {
        const auto snap = *options.output_dir / "nan_snapshot.ckpt";
        models::save_checkpoint(snap, bundle, m);
        diag += "; snapshot written to " + snap.string();
      }
      throw NumericError(diag);
    }

    if (m % config.log_every == 0 || m == config.max_iters) log_row(m, phase, seg, v1, v2, wr);
    if (options.output_dir && m % config.checkpoint_every == 0)
      models::save_checkpoint(*options.output_dir / checkpoint_name(m), bundle, m);
  }

  const auto cm = evalkit::evaluate(bundle, final_set.images, final_set.labels);
  result.final_iou = evalkit::iou_per_class(cm);
  result.final_miou = evalkit::miou(cm);
  result.final_discrepancy = evalkit::target_discrepancy(bundle, final_set.images);
  if (options.output_dir) write_text(*options.output_dir / "metrics.csv", metrics_csv(result.metrics, K));
  return result;
}

}  // namespace cali::trainer
