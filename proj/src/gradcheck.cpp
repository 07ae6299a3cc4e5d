#include "earu/gradcheck.hpp"

namespace earu {

std::vector<std::size_t> gradcheck_indices(std::size_t n, std::size_t cap) {
  std::vector<std::size_t> idx;
  if (cap == 0 || n <= cap) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  if (cap == 1) return {0};
  for (std::size_t k = 0; k < cap; ++k) idx.push_back(k * (n - 1) / (cap - 1));
  return idx;
}

GradcheckReport model_gradcheck(const ModelConfig& cfg, const GradcheckOptions& opt) {
  Rng init(opt.seed);
  ModelParams<double> params = build_model<double>(cfg, init);
  Tensor<double> x(Shape{opt.batch, 1, cfg.input_h, cfg.input_w});
  for (auto& v : x.values()) v = init.uniform();
  Tensor<double> r(x.shape());
  for (auto& v : r.values()) v = init.uniform(-1.0, 1.0);
  const std::uint64_t drop_seed = init.next_u64();

  auto loss = [&]() {
    Rng rng(drop_seed);
    const Tensor<double> y = forward(params, cfg, x, Mode::train, rng);
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += r[i] * y[i];
    return s;
  };

  params.zero_grad();
  ForwardTape<double> tape;
  Rng rng(drop_seed);
  forward(params, cfg, x, Mode::train, rng, &tape);
  const Tensor<double> grad_x = backward(params, cfg, tape, r);

  GradcheckReport report;
  report.tolerance = opt.tolerance;
  auto compare = [&](const std::string& name, std::span<double> values, std::span<const double> analytic) {
    for (std::size_t i : gradcheck_indices(values.size(), opt.max_per_tensor)) {
      const double orig = values[i];
      auto at = [&](double off) {
        values[i] = orig + off;
        const double l = loss();
        values[i] = orig;
        return l;
      };
      GradcheckEntry e{name, i, analytic[i], 0.0, 0.0};
      for (std::size_t k = 0; k <= opt.fallback_steps.size(); ++k) {
        const double h = k == 0 ? opt.step : opt.fallback_steps[k - 1];
        const double numeric = (at(h) - at(-h)) / (2.0 * h);
        const double err = gradcheck_error(analytic[i], numeric);
        if (k == 0 || err < e.error) e.numeric = numeric, e.error = err;
        if (e.error < opt.tolerance) break;
      }
      if (report.checked++ == 0 || e.error > report.max_error) {
        report.max_error = e.error;
        report.worst = e;
      }
      if (e.error >= opt.tolerance) report.failures.push_back(e);
    }
  };
  params.visit([&](const std::string& name, Tensor<double>& t, ParamKind kind) {
    if (kind != ParamKind::trainable) return;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    compare(name, t.values(), analytic);
  });
  if (opt.include_input) compare("input", x.values(), grad_x.values());
  return report;
}

}  // namespace earu
