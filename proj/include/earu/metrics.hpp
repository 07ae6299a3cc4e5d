#pragma once

// Overlap and surface-distance scores between a predicted mask A and a ground
// truth mask B.

#include <array>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "earu/volume.hpp"

namespace earu {

struct Voxel {
  std::size_t z, y, x;
  bool operator==(const Voxel&) const = default;
};

/// Boundary voxels of a mask together with the spacing they live on.
struct SurfaceSet {
  std::vector<Voxel> voxels;  // in raster order
  Spacing spacing;
};

/// Foreground voxels with at least one 6-connected background neighbour; the
/// region outside the volume counts as background.
SurfaceSet extract_surface(const LabelVolume& v);

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(const LabelVolume& a, const LabelVolume& b);
/// 1 - |A n B| / |A u B|; 0 when both are empty.
double voe(const LabelVolume& a, const LabelVolume& b);
/// (|B| - |A|) / |A|. Throws UndefinedMetricError when A is empty.
double rvd(const LabelVolume& a, const LabelVolume& b);

/// For every voxel of `from`, the Euclidean distance in mm to the nearest
/// voxel of `to`. Exact; uses a separable squared distance transform.
std::vector<double> surface_distances(const SurfaceSet& from, const SurfaceSet& to);

/// Average symmetric surface distance in mm. Throws UndefinedMetricError if
/// either surface is empty.
double assd(const LabelVolume& a, const LabelVolume& b, const Spacing& spacing);
/// Maximum symmetric surface distance in mm.
double msd(const LabelVolume& a, const LabelVolume& b, const Spacing& spacing);

struct MetricReport {
  std::string case_id;
  std::optional<double> dice;
  std::optional<double> voe;
  std::optional<double> rvd;
  std::optional<double> assd_mm;
  std::optional<double> msd_mm;
};

/// All five metrics; a metric whose precondition fails is left empty.
/// Throws ShapeError on dims or spacing mismatch.
MetricReport evaluate_case(const LabelVolume& pred, const LabelVolume& gt, const Spacing& spacing);
MetricReport evaluate_case(const LabelVolume& pred, const LabelVolume& gt);

/// CSV with header case_id,dice,voe,rvd,assd_mm,msd_mm. Undefined values are
/// written as nan. More than one report adds a trailing "mean" row averaging
/// the defined values of each column.
void write_metrics_csv(std::ostream& os, const std::vector<MetricReport>& reports);

std::string format_double(double v);

}  // namespace earu
