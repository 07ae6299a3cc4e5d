#include "earu/optim.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "earu/io_util.hpp"
#include "earu/metrics.hpp"

namespace earu {
namespace {

void update(std::span<float> theta, std::span<const float> g, AdamMoments& mom, double lr, const AdamHyper& h,
            double bc1, double bc2) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double gi = g[i];
    const double m = h.beta1 * mom.m[i] + (1.0 - h.beta1) * gi;
    const double v = h.beta2 * mom.v[i] + (1.0 - h.beta2) * gi * gi;
    mom.m[i] = static_cast<float>(m);
    mom.v[i] = static_cast<float>(v);
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    theta[i] = static_cast<float>(theta[i] - lr * m_hat / (std::sqrt(v_hat) + h.eps));
  }
}

void check_lr(double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParameterError("adam: learning rate must be finite and >= 0");
}

}  // namespace

void adam_step(const std::map<std::string, std::span<float>>& params,
               const std::map<std::string, std::span<const float>>& grads, AdamState& state, double lr,
               const AdamHyper& hyper) {
  check_lr(lr);
  if (params.size() != grads.size()) throw StateError("adam: parameter and gradient key sets differ");
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw StateError("adam: no gradient for parameter '" + name + "'");
    if (it->second.size() != p.size()) throw StateError("adam: gradient size mismatch for '" + name + "'");
  }
  if (state.moments.empty() && state.step == 0) {
    for (const auto& [name, p] : params) state.moments[name] = {std::vector<float>(p.size()), std::vector<float>(p.size())};
  }
  if (state.moments.size() != params.size()) throw StateError("adam: optimizer state keys do not match parameters");
  for (const auto& [name, p] : params) {
    auto it = state.moments.find(name);
    if (it == state.moments.end()) throw StateError("adam: optimizer state has no entry for '" + name + "'");
    if (it->second.m.size() != p.size() || it->second.v.size() != p.size()) {
      throw StateError("adam: optimizer state size mismatch for '" + name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hyper.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper.beta2, t);
  for (const auto& [name, p] : params) {
    update(p, grads.at(name), state.moments.at(name), lr, hyper, bc1, bc2);
  }
}

void adam_step(ModelParams<float>& model, AdamState& state, double lr, const AdamHyper& hyper) {
  std::map<std::string, std::span<float>> params;
  std::map<std::string, std::span<const float>> grads;
  model.visit([&](const std::string& name, Tensor<float>& t, ParamKind kind) {
    if (kind != ParamKind::trainable) return;
    if (!params.emplace(name, t.values()).second) throw StateError("adam: duplicate parameter name '" + name + "'");
    grads.emplace(name, t.grad());
  });
  adam_step(params, grads, state, lr, hyper);
}

std::string loss_curve_csv(const LossCurve& curve) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (std::size_t i = 0; i < curve.epochs.size(); ++i) {
    const auto& e = curve.epochs[i];
    out += std::to_string(i + 1) + "," + format_double(e.train) + "," + (e.val ? format_double(*e.val) : "") + "\n";
  }
  return out;
}

void export_loss_curve(const LossCurve& curve, const std::filesystem::path& path) {
  write_file_atomic(path, loss_curve_csv(curve));
}

LossCurve parse_loss_curve_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_loss,val_loss") throw FormatError("loss curve: bad header");
  LossCurve curve;
  auto num = [](const std::string& s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("loss curve: bad number '" + s + "'");
    return v;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) throw FormatError("loss curve: bad row '" + line + "'");
    EpochLoss e;
    e.train = num(line.substr(c1 + 1, c2 - c1 - 1));
    const std::string val = line.substr(c2 + 1);
    if (!val.empty()) e.val = num(val);
    curve.epochs.push_back(e);
  }
  return curve;
}

}  // namespace earu
