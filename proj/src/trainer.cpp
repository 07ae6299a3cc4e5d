#include "earu/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "earu/config.hpp"
#include "earu/metrics.hpp"

namespace earu {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  // lr = 0 is accepted for evaluation-only runs.
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train.learning_rate must be finite and non-negative");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("train.validation_fraction must be in [0, 1)");
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.eps > 0.0)) {
    throw ConfigError("train: invalid Adam hyperparameters");
  }
  loss.validate();
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_cases(const std::vector<SlicePair>& data,
                                                                          double validation_fraction,
                                                                          std::uint64_t seed) {
  std::set<std::string> ids;
  for (const auto& p : data) ids.insert(p.case_id);
  std::vector<std::string> cases(ids.begin(), ids.end());
  Rng rng(seed ^ 0x5a17c0de5a17c0deULL);
  for (std::size_t i = cases.size(); i > 1; --i) std::swap(cases[i - 1], cases[rng.below(i)]);
  std::size_t n_val = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(cases.size()) + 1e-9));
  if (!cases.empty() && n_val >= cases.size()) n_val = cases.size() - 1;
  std::vector<std::string> val(cases.begin(), cases.begin() + static_cast<long>(n_val));
  std::vector<std::string> tr(cases.begin() + static_cast<long>(n_val), cases.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {tr, val};
}

std::pair<Tensor<float>, Tensor<float>> assemble_batch(const std::vector<const SlicePair*>& items,
                                                        std::size_t input_h, std::size_t input_w) {
  if (items.empty()) throw InputError("assemble_batch: empty batch");
  const std::size_t size = items.front()->size;
  for (const SlicePair* p : items) {
    if (p->size != size || p->image.size() != size * size || p->mask.size() != size * size) {
      throw ShapeError("assemble_batch: slice " + p->case_id + "#" + std::to_string(p->slice_index) + " has size " +
                       std::to_string(p->size) + ", batch size " + std::to_string(size));
    }
  }
  const Shape shape{items.size(), 1, input_h, input_w};
  Tensor<float> x(shape), y(shape);
  for (std::size_t n = 0; n < items.size(); ++n) {
    const SlicePair& p = *items[n];
    std::vector<float> img = resize_bilinear(p.image.data(), size, size, input_h, input_w);
    std::vector<std::uint8_t> msk = resize_nearest(p.mask.data(), size, size, input_h, input_w);
    std::copy(img.begin(), img.end(), x.plane(n, 0));
    float* yt = y.plane(n, 0);
    for (std::size_t i = 0; i < msk.size(); ++i) yt[i] = msk[i] ? 1.0f : 0.0f;
  }
  return {std::move(x), std::move(y)};
}

Checkpoint make_checkpoint(ModelParams<float>& params, const ModelConfig& cfg, std::uint64_t epoch,
                           const std::string& rng_state, const std::optional<AdamState>& adam,
                           const LossCurve& curve, const std::string& metadata) {
  Checkpoint c;
  c.config = cfg;
  c.epoch = epoch;
  c.rng_state = rng_state;
  c.metadata = metadata;
  c.params = capture_params(params);
  c.adam = adam;
  c.curve = curve;
  return c;
}

namespace {

struct PreparedSet {
  std::vector<const SlicePair*> items;
  Tensor<float> x;  // (n, 1, H, W), resized once
  Tensor<float> y;
};

PreparedSet prepare(const std::vector<const SlicePair*>& items, const ModelConfig& cfg) {
  PreparedSet s;
  s.items = items;
  if (!items.empty()) std::tie(s.x, s.y) = assemble_batch(items, cfg.input_h, cfg.input_w);
  return s;
}

void gather(const PreparedSet& s, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end,
            Tensor<float>& x, Tensor<float>& y) {
  const Shape& full = s.x.shape();
  const Shape shape{end - begin, 1, full.h, full.w};
  x = Tensor<float>(shape);
  y = Tensor<float>(shape);
  for (std::size_t i = begin; i < end; ++i) {
    std::copy_n(s.x.plane(idx[i], 0), full.plane(), x.plane(i - begin, 0));
    std::copy_n(s.y.plane(idx[i], 0), full.plane(), y.plane(i - begin, 0));
  }
}

double evaluate_loss(ModelParams<float>& params, const ModelConfig& cfg, const PreparedSet& s, const TrainConfig& tc) {
  std::vector<std::size_t> idx(s.items.size());
  std::iota(idx.begin(), idx.end(), 0);
  double total = 0.0;
  Rng unused(0);
  for (std::size_t b = 0; b < idx.size(); b += tc.batch_size) {
    const std::size_t e = std::min(idx.size(), b + tc.batch_size);
    Tensor<float> x, y;
    gather(s, idx, b, e, x, y);
    const Tensor<float> out = forward(params, cfg, x, Mode::infer, unused);
    total += combo_loss(out, y, tc.loss).value * static_cast<double>(e - b);
  }
  return total / static_cast<double>(idx.size());
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size,
                                                              std::size_t deepest_pixels) {
  if (batch_size == 0) throw ParameterError("batch_ranges: batch size must be at least 1");
  std::vector<std::pair<std::size_t, std::size_t>> r;
  for (std::size_t b = 0; b < n; b += batch_size) r.emplace_back(b, std::min(n, b + batch_size));
  if (deepest_pixels == 1 && r.size() > 1 && r.back().second - r.back().first == 1) {
    r[r.size() - 2].second = n;
    r.pop_back();
  }
  return r;
}

TrainResult train(ModelParams<float>& params, const ModelConfig& cfg, const std::vector<SlicePair>& data,
                  const TrainConfig& tc, const TrainOptions& opt, const Checkpoint* resume) {
  tc.validate();
  cfg.validate();
  if (data.empty()) throw InputError("train: dataset is empty");

  TrainResult result;
  std::tie(result.train_cases, result.val_cases) = split_cases(data, tc.validation_fraction, tc.seed);
  const std::set<std::string> val_set(result.val_cases.begin(), result.val_cases.end());
  std::vector<const SlicePair*> train_items, val_items;
  for (const auto& p : data) (val_set.count(p.case_id) ? val_items : train_items).push_back(&p);
  const PreparedSet train_set = prepare(train_items, cfg);
  const PreparedSet val_data = prepare(val_items, cfg);

  Rng rng(tc.seed);
  AdamState adam;
  std::size_t start_epoch = 0;
  if (resume) {
    if (!(resume->config == cfg)) throw StateError("train: checkpoint model config differs from the requested one");
    restore_params(resume->params, params);
    if (resume->adam) adam = *resume->adam;
    rng.set_state(resume->rng_state);
    result.curve = resume->curve;
    start_epoch = static_cast<std::size_t>(resume->epoch);
    if (result.curve.epochs.size() != start_epoch) throw StateError("train: checkpoint loss curve length mismatch");
  }
  const std::string metadata = to_json(tc).dump();

  std::optional<double> best;
  for (const auto& e : result.curve.epochs) {
    const double v = e.val.value_or(e.train);
    if (!best || v < *best) best = v;
  }

  const std::size_t deepest = cfg.stage_resolution(cfg.stages.size());
  const auto ranges = batch_ranges(train_items.size(), tc.batch_size, deepest * deepest);
  std::vector<std::size_t> order(train_items.size());
  for (std::size_t epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    if (tc.shuffle) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    double total = 0.0;
    for (const auto& [b, e] : ranges) {
      Tensor<float> x, y;
      gather(train_set, order, b, e, x, y);
      params.zero_grad();
      ForwardTape<float> tape;
      const Tensor<float> out = forward(params, cfg, x, Mode::train, rng, &tape);
      const LossResult<float> loss = combo_loss(out, y, tc.loss);
      backward(params, cfg, tape, loss.grad);
      adam_step(params, adam, tc.learning_rate, tc.adam);
      total += loss.value * static_cast<double>(e - b);
    }
    EpochLoss el;
    el.train = total / static_cast<double>(order.size());
    if (!val_items.empty()) el.val = evaluate_loss(params, cfg, val_data, tc);
    result.curve.epochs.push_back(el);

    if (opt.log) {
      *opt.log << "epoch=" << epoch + 1 << " train=" << format_double(el.train)
               << " val=" << (el.val ? format_double(*el.val) : std::string("nan")) << '\n';
      opt.log->flush();
    }
    const bool improved = !best || el.val.value_or(el.train) < *best;
    if (improved) best = el.val.value_or(el.train);
    if (opt.checkpoint_path || (improved && opt.best_path)) {
      const Checkpoint ck = make_checkpoint(params, cfg, epoch + 1, rng.state(), adam, result.curve, metadata);
      if (opt.checkpoint_path) save_checkpoint(ck, *opt.checkpoint_path);
      if (improved && opt.best_path) save_checkpoint(ck, *opt.best_path);
    }
    if (opt.loss_curve_path) export_loss_curve(result.curve, *opt.loss_curve_path);
  }
  if (opt.loss_curve_path && start_epoch >= tc.epochs) export_loss_curve(result.curve, *opt.loss_curve_path);
  params.visit([](const std::string&, Tensor<float>& t, ParamKind) { t.drop_grad(); });
  result.adam = std::move(adam);
  result.rng_state = rng.state();
  result.epochs_completed = result.curve.epochs.size();
  return result;
}

}  // namespace earu
