#pragma once

// NIfTI-1 (single file, little-endian, uncompressed) and VSEG (JSON sidecar
// plus raw payload) volume files, and the per-case slice archive.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "earu/preprocess.hpp"
#include "earu/volume.hpp"

namespace earu {

enum class DType { u8, i16, f32 };

std::string to_string(DType t);
DType dtype_from_string(const std::string& s);
std::size_t dtype_size(DType t);

inline constexpr std::size_t kNiftiHeaderSize = 348;
using NiftiHeader = std::array<std::uint8_t, kNiftiHeaderSize>;

/// Voxels exactly as stored on disk plus geometry.
struct VolumeData {
  std::size_t d = 0, h = 0, w = 0;
  Spacing spacing;
  DType dtype = DType::f32;
  std::vector<std::uint8_t> payload;  // little-endian, x fastest
  double scl_slope = 1.0;
  double scl_inter = 0.0;
  std::optional<NiftiHeader> nifti_header;  // set when read from NIfTI

  std::size_t voxel_count() const { return d * h * w; }
  /// Intensities as float (scaling applied when slope is not 1 / inter not 0).
  CtVolume to_ct() const;
  /// Nonzero voxels become 1.
  LabelVolume to_labels() const;

  static VolumeData from_ct(const CtVolume& v, DType dtype);
  static VolumeData from_labels(const LabelVolume& v);

  bool operator==(const VolumeData&) const = default;
};

enum class VolumeFormat { nifti, vseg };

/// .nii -> NIfTI-1, .json -> VSEG sidecar.
VolumeFormat format_for_path(const std::filesystem::path& path);

VolumeData read_nifti(const std::filesystem::path& path);
/// Geometry fields (pixdim, qform/sform, units, description) come from
/// `header_template` when provided.
void write_nifti(const VolumeData& v, const std::filesystem::path& path,
                 const std::optional<NiftiHeader>& header_template = std::nullopt);

/// Throws FormatError naming the offending field.
void validate_vseg_sidecar(const nlohmann::json& j);
VolumeData read_vseg(const std::filesystem::path& sidecar);
/// Writes `<stem>.json` and `<stem>.raw`.
void write_vseg(const VolumeData& v, const std::filesystem::path& sidecar);

VolumeData read_volume(const std::filesystem::path& path);
void write_volume(const VolumeData& v, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Slice archive: <root>/<case_id>/manifest.json plus slice_NNNNN.img (float32
// LE) and slice_NNNNN.msk (uint8) per record.

struct ArchiveInfo {
  Spacing source_spacing;
  std::size_t source_d = 0, source_h = 0, source_w = 0;
};

void write_slice_archive(const std::filesystem::path& root, const std::string& case_id,
                         const std::vector<SlicePair>& pairs, const ArchiveInfo& info = {});

/// All cases under `root` (sorted by directory name), or the single case when
/// `root` itself holds a manifest.
std::vector<SlicePair> read_slice_archive(const std::filesystem::path& root);

}  // namespace earu
