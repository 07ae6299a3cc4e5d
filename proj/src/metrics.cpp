#include "earu/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace earu {
namespace {

struct Counts {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t both = 0;
};

Counts count(const LabelVolume& a, const LabelVolume& b, const char* what) {
  require_same_dims(a, b, what);
  Counts c;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    const bool x = a.voxels[i] != 0;
    const bool y = b.voxels[i] != 0;
    c.a += x;
    c.b += y;
    c.both += x && y;
  }
  return c;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas f[v] + ((q - v) * s)^2 evaluated at every q
// (Felzenszwalb & Huttenlocher). Entries equal to +inf take no part.
void envelope_1d(const double* f, std::size_t n, std::size_t stride, double s, double* out,
                 std::vector<std::size_t>& v, std::vector<double>& z) {
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  const double s2 = s * s;
  std::size_t k = 0;
  bool any = false;
  auto at = [&](std::size_t i) { return f[i * stride]; };
  for (std::size_t q = 0; q < n; ++q) {
    if (at(q) == kInf) continue;
    if (!any) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      k = 0;
      any = true;
      continue;
    }
    const double fq = at(q) + static_cast<double>(q) * static_cast<double>(q) * s2;
    double sect;
    while (true) {
      const std::size_t p = v[k];
      const double fp = at(p) + static_cast<double>(p) * static_cast<double>(p) * s2;
      sect = (fq - fp) / (2.0 * s2 * static_cast<double>(q - p));
      if (sect <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = sect;
    z[k + 1] = kInf;
  }
  if (!any) {
    for (std::size_t q = 0; q < n; ++q) out[q * stride] = kInf;
    return;
  }
  auto value = [&](std::size_t idx, std::size_t q) {
    const double d = (static_cast<double>(q) - static_cast<double>(v[idx])) * s;
    return at(v[idx]) + d * d;
  };
  std::size_t j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    // Neighbouring parabolas guard against rounding in the breakpoints.
    double best = value(j, q);
    if (j > 0) best = std::min(best, value(j - 1, q));
    if (j < k) best = std::min(best, value(j + 1, q));
    out[q * stride] = best;
  }
}

}  // namespace

SurfaceSet extract_surface(const LabelVolume& v) {
  SurfaceSet s;
  s.spacing = v.spacing;
  auto fg = [&](long z, long y, long x) {
    if (z < 0 || y < 0 || x < 0 || z >= static_cast<long>(v.d) || y >= static_cast<long>(v.h) ||
        x >= static_cast<long>(v.w))
      return false;
    return v.at(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x)) != 0;
  };
  for (std::size_t z = 0; z < v.d; ++z)
    for (std::size_t y = 0; y < v.h; ++y)
      for (std::size_t x = 0; x < v.w; ++x) {
        if (v.at(z, y, x) == 0) continue;
        const long lz = static_cast<long>(z), ly = static_cast<long>(y), lx = static_cast<long>(x);
        if (!fg(lz - 1, ly, lx) || !fg(lz + 1, ly, lx) || !fg(lz, ly - 1, lx) || !fg(lz, ly + 1, lx) ||
            !fg(lz, ly, lx - 1) || !fg(lz, ly, lx + 1)) {
          s.voxels.push_back({z, y, x});
        }
      }
  return s;
}

double dice(const LabelVolume& a, const LabelVolume& b) {
  const Counts c = count(a, b, "dice");
  if (c.a + c.b == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

double voe(const LabelVolume& a, const LabelVolume& b) {
  const Counts c = count(a, b, "voe");
  const std::size_t uni = c.a + c.b - c.both;
  if (uni == 0) return 0.0;
  return 1.0 - static_cast<double>(c.both) / static_cast<double>(uni);
}

double rvd(const LabelVolume& a, const LabelVolume& b) {
  const Counts c = count(a, b, "rvd");
  if (c.a == 0) throw UndefinedMetricError("rvd: segmentation result is empty");
  return (static_cast<double>(c.b) - static_cast<double>(c.a)) / static_cast<double>(c.a);
}

std::vector<double> surface_distances(const SurfaceSet& from, const SurfaceSet& to) {
  std::vector<double> out(from.voxels.size(), kInf);
  if (from.voxels.empty() || to.voxels.empty()) return out;
  std::size_t z0 = SIZE_MAX, y0 = SIZE_MAX, x0 = SIZE_MAX, z1 = 0, y1 = 0, x1 = 0;
  for (const auto* set : {&from, &to})
    for (const Voxel& p : set->voxels) {
      z0 = std::min(z0, p.z), y0 = std::min(y0, p.y), x0 = std::min(x0, p.x);
      z1 = std::max(z1, p.z), y1 = std::max(y1, p.y), x1 = std::max(x1, p.x);
    }
  const std::size_t bd = z1 - z0 + 1, bh = y1 - y0 + 1, bw = x1 - x0 + 1;
  const Spacing& sp = to.spacing;
  auto idx = [&](std::size_t z, std::size_t y, std::size_t x) { return (z * bh + y) * bw + x; };

  std::vector<char> feature(bd * bh * bw, 0);
  for (const Voxel& p : to.voxels) feature[idx(p.z - z0, p.y - y0, p.x - x0)] = 1;

  // Pass 1: exact nearest feature along x.
  std::vector<double> g(feature.size(), kInf);
  for (std::size_t z = 0; z < bd; ++z)
    for (std::size_t y = 0; y < bh; ++y) {
      const std::size_t base = idx(z, y, 0);
      std::vector<long> nearest(bw, -1);
      long last = -1;
      for (std::size_t x = 0; x < bw; ++x) {
        if (feature[base + x]) last = static_cast<long>(x);
        nearest[x] = last;
      }
      last = -1;
      for (std::size_t x = bw; x-- > 0;) {
        if (feature[base + x]) last = static_cast<long>(x);
        long best = nearest[x];
        if (last >= 0 && (best < 0 || last - static_cast<long>(x) < static_cast<long>(x) - best)) best = last;
        if (best >= 0) {
          const double dx = static_cast<double>(std::labs(static_cast<long>(x) - best)) * sp.sx;
          g[base + x] = dx * dx;
        }
      }
    }

  // Passes 2 and 3: parabola envelopes along y, then z.
  std::vector<double> tmp(feature.size());
  std::vector<std::size_t> v;
  std::vector<double> zb;
  for (std::size_t z = 0; z < bd; ++z)
    for (std::size_t x = 0; x < bw; ++x)
      envelope_1d(g.data() + idx(z, 0, x), bh, bw, sp.sy, tmp.data() + idx(z, 0, x), v, zb);
  for (std::size_t y = 0; y < bh; ++y)
    for (std::size_t x = 0; x < bw; ++x)
      envelope_1d(tmp.data() + idx(0, y, x), bd, bh * bw, sp.sz, g.data() + idx(0, y, x), v, zb);

  for (std::size_t i = 0; i < from.voxels.size(); ++i) {
    const Voxel& p = from.voxels[i];
    out[i] = std::sqrt(g[idx(p.z - z0, p.y - y0, p.x - x0)]);
  }
  return out;
}

namespace {

struct SymmetricDistances {
  std::vector<double> ab;
  std::vector<double> ba;
};

SymmetricDistances symmetric(const LabelVolume& a, const LabelVolume& b, const Spacing& spacing, const char* what) {
  require_same_dims(a, b, what);
  SurfaceSet sa = extract_surface(a);
  SurfaceSet sb = extract_surface(b);
  if (sa.voxels.empty() || sb.voxels.empty()) {
    throw UndefinedMetricError(std::string(what) + ": " + (sa.voxels.empty() ? "prediction" : "ground truth") +
                               " surface is empty");
  }
  sa.spacing = sb.spacing = spacing;
  return {surface_distances(sa, sb), surface_distances(sb, sa)};
}

}  // namespace

double assd(const LabelVolume& a, const LabelVolume& b, const Spacing& spacing) {
  const auto s = symmetric(a, b, spacing, "assd");
  double sum = 0.0;
  for (double v : s.ab) sum += v;
  for (double v : s.ba) sum += v;
  return sum / static_cast<double>(s.ab.size() + s.ba.size());
}

double msd(const LabelVolume& a, const LabelVolume& b, const Spacing& spacing) {
  const auto s = symmetric(a, b, spacing, "msd");
  double m = 0.0;
  for (double v : s.ab) m = std::max(m, v);
  for (double v : s.ba) m = std::max(m, v);
  return m;
}

MetricReport evaluate_case(const LabelVolume& pred, const LabelVolume& gt, const Spacing& spacing) {
  require_same_dims(pred, gt, "evaluate_case");
  MetricReport r;
  r.dice = dice(pred, gt);
  r.voe = voe(pred, gt);
  try {
    r.rvd = rvd(pred, gt);
  } catch (const UndefinedMetricError&) {
  }
  try {
    const auto s = symmetric(pred, gt, spacing, "surface distance");
    double sum = 0.0, m = 0.0;
    for (double v : s.ab) sum += v, m = std::max(m, v);
    for (double v : s.ba) sum += v, m = std::max(m, v);
    r.assd_mm = sum / static_cast<double>(s.ab.size() + s.ba.size());
    r.msd_mm = m;
  } catch (const UndefinedMetricError&) {
  }
  return r;
}

MetricReport evaluate_case(const LabelVolume& pred, const LabelVolume& gt) {
  if (!(pred.spacing == gt.spacing)) throw ShapeError("evaluate_case: prediction and ground truth spacing differ");
  return evaluate_case(pred, gt, gt.spacing);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricReport>& reports) {
  auto field = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("nan"); };
  os << "case_id,dice,voe,rvd,assd_mm,msd_mm\n";
  for (const auto& r : reports) {
    os << r.case_id << ',' << field(r.dice) << ',' << field(r.voe) << ',' << field(r.rvd) << ','
       << field(r.assd_mm) << ',' << field(r.msd_mm) << '\n';
  }
  if (reports.size() > 1) {
    using Member = std::optional<double> MetricReport::*;
    const std::array<Member, 5> cols{&MetricReport::dice, &MetricReport::voe, &MetricReport::rvd,
                                     &MetricReport::assd_mm, &MetricReport::msd_mm};
    os << "mean";
    for (Member m : cols) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& r : reports)
        if (r.*m) sum += *(r.*m), ++n;
      os << ',' << (n ? format_double(sum / static_cast<double>(n)) : std::string("nan"));
    }
    os << '\n';
  }
}

}  // namespace earu
