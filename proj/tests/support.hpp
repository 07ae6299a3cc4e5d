#pragma once

// Independent reference implementations and fixtures used by the tests. None
// of this calls into library code paths under test except for plain types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "earu/gradcheck.hpp"
#include "earu/rng.hpp"
#include "earu/tensor.hpp"
#include "earu/volume.hpp"

namespace earu::test {

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(dist(gen));
  return t;
}

/// Seven nested loops, zero padding, grouped channels.
template <typename T>
Tensor<T> naive_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, std::size_t stride,
                     std::size_t pad, std::size_t groups) {
  const Shape xs = x.shape(), ws = w.shape();
  const std::size_t oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const std::size_t ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  const std::size_t in_per = xs.c / groups, out_per = ws.n / groups;
  Tensor<T> y(Shape{xs.n, ws.n, oh, ow});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias ? static_cast<double>((*bias)[o]) : 0.0;
          const std::size_t g = o / out_per;
          for (std::size_t ci = 0; ci < in_per; ++ci)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx) {
                const long yy = static_cast<long>(i * stride + ky) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + kx) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(xs.h) || xx >= static_cast<long>(xs.w)) continue;
                acc += static_cast<double>(x.at(n, g * in_per + ci, yy, xx)) * w.at(o, ci, ky, kx);
              }
          y.at(n, o, i, j) = static_cast<T>(acc);
        }
  return y;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
  return m;
}

/// Finite-difference check of d(sum r*f)/d(input) for several inputs.
/// `analytic[k]` is the claimed gradient for `inputs[k]`.
struct FdResult {
  double max_error = 0.0;
  std::size_t checked = 0;
};

inline FdResult fd_check(const std::vector<Tensor<double>*>& inputs, const std::function<Tensor<double>()>& f,
                         const Tensor<double>& r, const std::vector<std::vector<double>>& analytic,
                         double step = 1e-5) {
  auto loss = [&] {
    const Tensor<double> y = f();
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * r[i];
    return s;
  };
  FdResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto num = numeric_gradient(inputs[k]->values(), loss, step);
    for (std::size_t i = 0; i < num.size(); ++i) {
      res.max_error = std::max(res.max_error, gradcheck_error(analytic[k][i], num[i]));
      ++res.checked;
    }
  }
  return res;
}

/// Like fd_check, but each entry tries `steps` in order and keeps the first
/// error below `tol` (or the smallest one seen).
inline FdResult fd_check_steps(const std::vector<Tensor<double>*>& inputs, const std::function<Tensor<double>()>& f,
                               const Tensor<double>& r, const std::vector<std::vector<double>>& analytic,
                               const std::vector<double>& steps, double tol) {
  auto loss = [&] {
    const Tensor<double> y = f();
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * r[i];
    return s;
  };
  FdResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k]->values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      double best = std::numeric_limits<double>::infinity();
      for (double h : steps) {
        values[i] = orig + h;
        const double up = loss();
        values[i] = orig - h;
        const double down = loss();
        values[i] = orig;
        best = std::min(best, gradcheck_error(analytic[k][i], (up - down) / (2.0 * h)));
        if (best < tol) break;
      }
      res.max_error = std::max(res.max_error, best);
      ++res.checked;
    }
  }
  return res;
}

template <typename T>
std::vector<double> as_vec(std::span<const T> s) {
  return std::vector<double>(s.begin(), s.end());
}

// ---------------------------------------------------------------------------
// Brute-force segmentation metrics.

inline LabelVolume random_blobs(std::size_t d, std::size_t h, std::size_t w, std::mt19937_64& gen, double density) {
  LabelVolume v(d, h, w);
  std::bernoulli_distribution b(density);
  for (auto& x : v.voxels) x = b(gen);
  return v;
}

struct BruteMetrics {
  double dice, voe, rvd, assd, msd;
  bool surfaces = false;
};

inline bool brute_is_surface(const LabelVolume& v, std::size_t z, std::size_t y, std::size_t x) {
  if (!v.at(z, y, x)) return false;
  const long dz[] = {-1, 1, 0, 0, 0, 0}, dy[] = {0, 0, -1, 1, 0, 0}, dx[] = {0, 0, 0, 0, -1, 1};
  for (int k = 0; k < 6; ++k) {
    const long zz = static_cast<long>(z) + dz[k], yy = static_cast<long>(y) + dy[k], xx = static_cast<long>(x) + dx[k];
    if (zz < 0 || yy < 0 || xx < 0 || zz >= static_cast<long>(v.d) || yy >= static_cast<long>(v.h) ||
        xx >= static_cast<long>(v.w))
      return true;
    if (!v.at(zz, yy, xx)) return true;
  }
  return false;
}

struct P3 {
  long z, y, x;
};

inline std::vector<P3> brute_surface(const LabelVolume& v) {
  std::vector<P3> s;
  for (std::size_t z = 0; z < v.d; ++z)
    for (std::size_t y = 0; y < v.h; ++y)
      for (std::size_t x = 0; x < v.w; ++x)
        if (brute_is_surface(v, z, y, x)) s.push_back({long(z), long(y), long(x)});
  return s;
}

inline double brute_pair_distance(const P3& a, const P3& b, const Spacing& sp) {
  const double ex = double(a.x - b.x) * sp.sx, ey = double(a.y - b.y) * sp.sy, ez = double(a.z - b.z) * sp.sz;
  return std::sqrt((ex * ex + ey * ey) + ez * ez);
}

inline BruteMetrics brute_metrics(const LabelVolume& a, const LabelVolume& b, const Spacing& sp) {
  std::size_t na = 0, nb = 0, inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    const bool pa = a.voxels[i] != 0, pb = b.voxels[i] != 0;
    na += pa;
    nb += pb;
    inter += pa && pb;
    uni += pa || pb;
  }
  BruteMetrics m{};
  m.dice = (na + nb) == 0 ? 1.0 : 2.0 * double(inter) / double(na + nb);
  m.voe = uni == 0 ? 0.0 : 1.0 - double(inter) / double(uni);
  m.rvd = na == 0 ? std::numeric_limits<double>::quiet_NaN() : (double(nb) - double(na)) / double(na);
  const auto sa = brute_surface(a), sb = brute_surface(b);
  if (sa.empty() || sb.empty()) return m;
  m.surfaces = true;
  double sum = 0.0, mx = 0.0;
  auto nearest = [&](const P3& p, const std::vector<P3>& set) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : set) best = std::min(best, brute_pair_distance(p, q, sp));
    return best;
  };
  for (const auto& p : sa) {
    const double d = nearest(p, sb);
    sum += d;
    mx = std::max(mx, d);
  }
  for (const auto& p : sb) {
    const double d = nearest(p, sa);
    sum += d;
    mx = std::max(mx, d);
  }
  m.assd = sum / double(sa.size() + sb.size());
  m.msd = mx;
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic CT phantom: an ellipsoidal "liver" at ~80 HU with noise inside a
// soft-tissue body, plus a bright distractor blob that is not labelled.

struct Phantom {
  CtVolume ct;
  LabelVolume mask;
};

inline Phantom make_phantom(std::size_t d, std::size_t h, std::size_t w, Spacing sp, std::uint64_t seed,
                            double cz_frac = 0.5) {
  Phantom p;
  p.ct = CtVolume(d, h, w, sp);
  p.mask = LabelVolume(d, h, w, sp);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, 10.0);
  const double cz = cz_frac * (double(d) - 1), cy = 0.45 * double(h), cx = 0.4 * double(w);
  const double rz = 0.3 * double(d), ry = 0.25 * double(h), rx = 0.22 * double(w);
  for (std::size_t z = 0; z < d; ++z)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = (z * h + y) * w + x;
        const double by = (double(y) - 0.5 * h) / (0.45 * h), bx = (double(x) - 0.5 * w) / (0.47 * w);
        double hu = -1000.0;
        if (by * by + bx * bx <= 1.0) hu = -80.0;
        const double ez = (double(z) - cz) / rz, ey = (double(y) - cy) / ry, ex = (double(x) - cx) / rx;
        if (ez * ez + ey * ey + ex * ex <= 1.0) {
          hu = 80.0;
          p.mask.voxels[i] = 1;
        }
        const double sy = (double(y) - 0.5 * h) / (0.08 * h), sx = (double(x) - 0.75 * w) / (0.08 * w);
        if (sy * sy + sx * sx <= 1.0) hu = 400.0;
        p.ct.voxels[i] = static_cast<float>(hu + noise(gen));
      }
  return p;
}

/// Fresh empty directory below the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("earu_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace earu::test
