#include "earu/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "earu/io_util.hpp"

namespace earu {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(DType t) {
  switch (t) {
    case DType::u8: return "u8";
    case DType::i16: return "i16";
    case DType::f32: return "f32";
  }
  return "?";
}

DType dtype_from_string(const std::string& s) {
  if (s == "u8") return DType::u8;
  if (s == "i16") return DType::i16;
  if (s == "f32") return DType::f32;
  throw FormatError("unknown dtype '" + s + "' (expected u8, i16 or f32)");
}

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::u8: return 1;
    case DType::i16: return 2;
    case DType::f32: return 4;
  }
  return 0;
}

namespace {

double voxel_value(const VolumeData& v, std::size_t i) {
  const std::uint8_t* p = v.payload.data() + i * dtype_size(v.dtype);
  switch (v.dtype) {
    case DType::u8: return *p;
    case DType::i16: {
      std::int16_t x;
      std::memcpy(&x, p, 2);
      return x;
    }
    case DType::f32: {
      float x;
      std::memcpy(&x, p, 4);
      return x;
    }
  }
  return 0.0;
}

void check_payload(const VolumeData& v) {
  if (v.payload.size() != v.voxel_count() * dtype_size(v.dtype)) {
    throw FormatError("payload holds " + std::to_string(v.payload.size()) + " bytes, expected " +
                      std::to_string(v.voxel_count() * dtype_size(v.dtype)));
  }
}

// Rejects dims whose byte count would overflow or exceed `limit`.
std::size_t payload_bytes(std::size_t d, std::size_t h, std::size_t w, DType t) {
  const std::size_t cap = std::numeric_limits<std::size_t>::max() / 8;
  if (d && (h > cap / d || (h && w > cap / (d * h)))) throw FormatError("volume dims overflow");
  return d * h * w * dtype_size(t);
}

}  // namespace

CtVolume VolumeData::to_ct() const {
  check_payload(*this);
  CtVolume out(d, h, w, spacing);
  const bool scaled = scl_slope != 0.0 && (scl_slope != 1.0 || scl_inter != 0.0);
  for (std::size_t i = 0; i < voxel_count(); ++i) {
    const double x = voxel_value(*this, i);
    out.voxels[i] = static_cast<float>(scaled ? x * scl_slope + scl_inter : x);
  }
  return out;
}

LabelVolume VolumeData::to_labels() const {
  check_payload(*this);
  LabelVolume out(d, h, w, spacing);
  for (std::size_t i = 0; i < voxel_count(); ++i) out.voxels[i] = voxel_value(*this, i) != 0.0 ? 1 : 0;
  return out;
}

VolumeData VolumeData::from_ct(const CtVolume& v, DType dtype) {
  VolumeData out;
  out.d = v.d, out.h = v.h, out.w = v.w;
  out.spacing = v.spacing;
  out.dtype = dtype;
  ByteWriter bw;
  for (float x : v.voxels) {
    switch (dtype) {
      case DType::u8: bw.put<std::uint8_t>(static_cast<std::uint8_t>(std::clamp(std::lround(x), 0L, 255L))); break;
      case DType::i16:
        bw.put<std::int16_t>(static_cast<std::int16_t>(std::clamp(std::lround(x), -32768L, 32767L)));
        break;
      case DType::f32: bw.put<float>(x); break;
    }
  }
  out.payload = std::move(bw.bytes());
  return out;
}

VolumeData VolumeData::from_labels(const LabelVolume& v) {
  VolumeData out;
  out.d = v.d, out.h = v.h, out.w = v.w;
  out.spacing = v.spacing;
  out.dtype = DType::u8;
  out.payload.assign(v.voxels.begin(), v.voxels.end());
  return out;
}

VolumeFormat format_for_path(const fs::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".nii") return VolumeFormat::nifti;
  if (ext == ".json") return VolumeFormat::vseg;
  if (ext == ".gz") throw UnsupportedError("compressed NIfTI is not supported: '" + path.string() + "'");
  throw FormatError("cannot infer volume format from '" + path.string() + "' (expected .nii or .json)");
}

// ---------------------------------------------------------------------------
// NIfTI-1

namespace {

template <typename T>
T hdr_get(const NiftiHeader& h, std::size_t off) {
  T v;
  std::memcpy(&v, h.data() + off, sizeof(T));
  return v;
}

template <typename T>
void hdr_put(NiftiHeader& h, std::size_t off, T v) {
  std::memcpy(h.data() + off, &v, sizeof(T));
}

constexpr std::size_t kDim = 40, kDatatype = 70, kBitpix = 72, kPixdim = 76, kVoxOffset = 108, kSclSlope = 112,
                      kSclInter = 116, kXyztUnits = 123, kMagic = 344;

DType dtype_from_nifti(std::int16_t code) {
  switch (code) {
    case 2: return DType::u8;
    case 4: return DType::i16;
    case 16: return DType::f32;
    default: throw UnsupportedError("unsupported NIfTI datatype code " + std::to_string(code));
  }
}

std::int16_t nifti_code(DType t) {
  switch (t) {
    case DType::u8: return 2;
    case DType::i16: return 4;
    case DType::f32: return 16;
  }
  return 0;
}

}  // namespace

VolumeData read_nifti(const fs::path& path) {
  const Bytes file = read_file(path);
  if (file.size() < kNiftiHeaderSize) {
    throw FormatError("'" + path.string() + "': file has " + std::to_string(file.size()) +
                      " bytes, shorter than the 348-byte NIfTI-1 header");
  }
  NiftiHeader hdr;
  std::copy_n(file.begin(), kNiftiHeaderSize, hdr.begin());
  const auto sizeof_hdr = hdr_get<std::int32_t>(hdr, 0);
  if (sizeof_hdr != 348) {
    if (__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr)) == 348u) {
      throw UnsupportedError("'" + path.string() + "': big-endian NIfTI is not supported");
    }
    throw FormatError("'" + path.string() + "': sizeof_hdr is " + std::to_string(sizeof_hdr) + ", expected 348");
  }
  if (std::memcmp(hdr.data() + kMagic, "n+1\0", 4) != 0) {
    if (std::memcmp(hdr.data() + kMagic, "ni1\0", 4) == 0) {
      throw UnsupportedError("'" + path.string() + "': two-file NIfTI (ni1) is not supported");
    }
    throw FormatError("'" + path.string() + "': magic is not \"n+1\"");
  }
  const auto ndim = hdr_get<std::int16_t>(hdr, kDim);
  if (ndim < 3 || ndim > 7) throw UnsupportedError("'" + path.string() + "': dim[0]=" + std::to_string(ndim));
  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = hdr_get<std::int16_t>(hdr, kDim + 2 * i);
  for (int i = 1; i <= 3; ++i)
    if (dim[i] <= 0) throw FormatError("'" + path.string() + "': dim[" + std::to_string(i) + "] is not positive");
  for (int i = 4; i <= ndim; ++i)
    if (dim[i] != 1) throw UnsupportedError("'" + path.string() + "': only 3-D volumes are supported");

  VolumeData v;
  v.dtype = dtype_from_nifti(hdr_get<std::int16_t>(hdr, kDatatype));
  v.w = static_cast<std::size_t>(dim[1]);
  v.h = static_cast<std::size_t>(dim[2]);
  v.d = static_cast<std::size_t>(dim[3]);
  v.spacing = {std::fabs(hdr_get<float>(hdr, kPixdim + 12)), std::fabs(hdr_get<float>(hdr, kPixdim + 8)),
               std::fabs(hdr_get<float>(hdr, kPixdim + 4))};
  if (!v.spacing.positive()) throw FormatError("'" + path.string() + "': pixdim[1..3] must be positive");
  v.scl_slope = hdr_get<float>(hdr, kSclSlope);
  v.scl_inter = hdr_get<float>(hdr, kSclInter);
  if (!std::isfinite(v.scl_slope) || v.scl_slope == 0.0) v.scl_slope = 1.0, v.scl_inter = 0.0;
  if (!std::isfinite(v.scl_inter)) v.scl_inter = 0.0;

  const float off_f = hdr_get<float>(hdr, kVoxOffset);
  if (!(off_f >= 352.0f) || off_f != std::floor(off_f)) {
    throw FormatError("'" + path.string() + "': invalid vox_offset " + std::to_string(off_f));
  }
  const auto offset = static_cast<std::size_t>(off_f);
  const std::size_t expected = payload_bytes(v.d, v.h, v.w, v.dtype);
  const std::size_t available = file.size() > offset ? file.size() - offset : 0;
  if (available < expected) {
    throw FormatError("'" + path.string() + "': payload truncated, expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(available));
  }
  v.payload.assign(file.begin() + static_cast<long>(offset), file.begin() + static_cast<long>(offset + expected));
  v.nifti_header = hdr;
  return v;
}

void write_nifti(const VolumeData& v, const fs::path& path, const std::optional<NiftiHeader>& header_template) {
  check_payload(v);
  if (v.d > 32767 || v.h > 32767 || v.w > 32767) throw FormatError("volume too large for NIfTI-1 dims");
  NiftiHeader hdr{};
  const auto& tmpl = header_template ? header_template : v.nifti_header;
  if (tmpl) {
    hdr = *tmpl;
  } else {
    hdr_put<std::int16_t>(hdr, 252, 0);  // qform_code
    hdr_put<std::int16_t>(hdr, 254, 0);  // sform_code
    hdr[kXyztUnits] = 2;                 // mm
  }
  hdr_put<std::int32_t>(hdr, 0, 348);
  for (int i = 0; i < 8; ++i) hdr_put<std::int16_t>(hdr, kDim + 2 * i, 1);
  hdr_put<std::int16_t>(hdr, kDim, 3);
  hdr_put<std::int16_t>(hdr, kDim + 2, static_cast<std::int16_t>(v.w));
  hdr_put<std::int16_t>(hdr, kDim + 4, static_cast<std::int16_t>(v.h));
  hdr_put<std::int16_t>(hdr, kDim + 6, static_cast<std::int16_t>(v.d));
  hdr_put<std::int16_t>(hdr, kDatatype, nifti_code(v.dtype));
  hdr_put<std::int16_t>(hdr, kBitpix, static_cast<std::int16_t>(8 * dtype_size(v.dtype)));
  float qfac = tmpl ? hdr_get<float>(hdr, kPixdim) : 1.0f;
  if (qfac != -1.0f) qfac = 1.0f;
  hdr_put<float>(hdr, kPixdim, qfac);
  hdr_put<float>(hdr, kPixdim + 4, static_cast<float>(v.spacing.sx));
  hdr_put<float>(hdr, kPixdim + 8, static_cast<float>(v.spacing.sy));
  hdr_put<float>(hdr, kPixdim + 12, static_cast<float>(v.spacing.sz));
  hdr_put<float>(hdr, kVoxOffset, 352.0f);
  hdr_put<float>(hdr, kSclSlope, static_cast<float>(v.scl_slope));
  hdr_put<float>(hdr, kSclInter, static_cast<float>(v.scl_inter));
  std::memcpy(hdr.data() + kMagic, "n+1\0", 4);

  ByteWriter bw;
  bw.put_bytes(hdr.data(), hdr.size());
  bw.put<std::uint32_t>(0);  // no extensions
  bw.put_bytes(v.payload.data(), v.payload.size());
  write_file_atomic(path, bw.bytes());
}

// ---------------------------------------------------------------------------
// VSEG

void validate_vseg_sidecar(const json& j) {
  auto fail = [](const std::string& msg) { throw FormatError("VSEG sidecar: " + msg); };
  if (!j.is_object()) fail("not a JSON object");
  if (!j.contains("format") || j["format"] != "VSEG") fail("field 'format' must be \"VSEG\"");
  if (!j.contains("version") || !j["version"].is_number_integer()) fail("field 'version' must be an integer");
  if (j["version"].get<int>() != 1) throw VersionError("VSEG sidecar: unsupported version " + j["version"].dump());
  auto triple = [&](const char* key, bool integer) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3) fail(std::string("field '") + key + "' must hold 3 numbers");
    for (const auto& x : j[key]) {
      if (integer ? !(x.is_number_integer() && x.get<long long>() >= 0) : !x.is_number())
        fail(std::string("field '") + key + "' has a bad entry");
      if (!(x.get<double>() > 0.0)) fail(std::string("field '") + key + "' entries must be positive");
    }
  };
  triple("dims", true);
  triple("spacing_mm", false);
  if (!j.contains("dtype") || !j["dtype"].is_string()) fail("field 'dtype' must be a string");
  try {
    dtype_from_string(j["dtype"].get<std::string>());
  } catch (const FormatError& e) {
    fail(e.what());
  }
  if (j.contains("byte_order") && j["byte_order"] != "little") fail("field 'byte_order' must be \"little\"");
  if (!j.contains("payload") || !j["payload"].is_string() || j["payload"].get<std::string>().empty()) {
    fail("field 'payload' must name the raw file");
  }
}

VolumeData read_vseg(const fs::path& sidecar) {
  const Bytes text = read_file(sidecar);
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw FormatError("'" + sidecar.string() + "': " + e.what());
  }
  validate_vseg_sidecar(j);
  VolumeData v;
  v.d = j["dims"][0].get<std::size_t>();
  v.h = j["dims"][1].get<std::size_t>();
  v.w = j["dims"][2].get<std::size_t>();
  v.spacing = {j["spacing_mm"][0].get<double>(), j["spacing_mm"][1].get<double>(), j["spacing_mm"][2].get<double>()};
  v.dtype = dtype_from_string(j["dtype"].get<std::string>());
  const fs::path raw = sidecar.parent_path() / j["payload"].get<std::string>();
  const std::size_t expected = payload_bytes(v.d, v.h, v.w, v.dtype);
  std::error_code ec;
  const auto actual = fs::file_size(raw, ec);
  if (ec) throw IoError("cannot stat payload '" + raw.string() + "'");
  if (actual != expected) {
    throw FormatError("'" + raw.string() + "': payload has " + std::to_string(actual) + " bytes, expected " +
                      std::to_string(expected));
  }
  v.payload = read_file(raw);
  return v;
}

void write_vseg(const VolumeData& v, const fs::path& sidecar) {
  check_payload(v);
  fs::path raw = sidecar;
  raw.replace_extension(".raw");
  json j;
  j["format"] = "VSEG";
  j["version"] = 1;
  j["dims"] = {v.d, v.h, v.w};
  j["spacing_mm"] = {v.spacing.sz, v.spacing.sy, v.spacing.sx};
  j["dtype"] = to_string(v.dtype);
  j["byte_order"] = "little";
  j["payload"] = raw.filename().string();
  write_file_atomic(raw, v.payload);
  write_file_atomic(sidecar, j.dump(2) + "\n");
}

VolumeData read_volume(const fs::path& path) {
  return format_for_path(path) == VolumeFormat::nifti ? read_nifti(path) : read_vseg(path);
}

void write_volume(const VolumeData& v, const fs::path& path) {
  if (format_for_path(path) == VolumeFormat::nifti) {
    write_nifti(v, path);
  } else {
    write_vseg(v, path);
  }
}

// ---------------------------------------------------------------------------
// Slice archive

namespace {

std::string record_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "slice_%05zu", i);
  return buf;
}

std::vector<SlicePair> read_case(const fs::path& dir) {
  const Bytes text = read_file(dir / "manifest.json");
  json m;
  try {
    m = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw FormatError("'" + (dir / "manifest.json").string() + "': " + e.what());
  }
  if (!m.is_object() || m.value("format", "") != "earu-slices") {
    throw FormatError("'" + dir.string() + "': not a slice archive manifest");
  }
  if (m.value("version", 0) != 1) throw VersionError("'" + dir.string() + "': unsupported archive version");
  const std::size_t size = m.at("size").get<std::size_t>();
  const std::size_t px = size * size;
  std::vector<SlicePair> out;
  for (const auto& rec : m.at("slices")) {
    SlicePair p;
    p.size = size;
    p.case_id = m.at("case_id").get<std::string>();
    p.slice_index = rec.at("slice_index").get<std::size_t>();
    p.augmentation = rec.at("augmentation").get<std::string>();
    const Bytes img = read_file(dir / rec.at("image").get<std::string>());
    const Bytes msk = read_file(dir / rec.at("mask").get<std::string>());
    if (img.size() != px * 4 || msk.size() != px) {
      throw FormatError("'" + dir.string() + "': record " + rec.at("image").get<std::string>() +
                        " has the wrong byte count");
    }
    p.image.resize(px);
    std::memcpy(p.image.data(), img.data(), img.size());
    p.mask.assign(msk.begin(), msk.end());
    for (auto& x : p.mask)
      if (x > 1) throw FormatError("'" + dir.string() + "': mask record is not binary");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

void write_slice_archive(const fs::path& root, const std::string& case_id, const std::vector<SlicePair>& pairs,
                         const ArchiveInfo& info) {
  if (case_id.empty() || case_id.find('/') != std::string::npos || case_id == "." || case_id == "..") {
    throw ParameterError("invalid case id '" + case_id + "'");
  }
  const fs::path dir = root / case_id;
  fs::create_directories(dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("slice_", 0) == 0 || name == "manifest.json") fs::remove(entry.path());
  }
  json m;
  m["format"] = "earu-slices";
  m["version"] = 1;
  m["case_id"] = case_id;
  const std::size_t size = pairs.empty() ? 0 : pairs.front().size;
  m["size"] = size;
  m["source"] = {{"dims", {info.source_d, info.source_h, info.source_w}},
                 {"spacing_mm", {info.source_spacing.sz, info.source_spacing.sy, info.source_spacing.sx}}};
  json slices = json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const SlicePair& p = pairs[i];
    if (p.size != size || p.image.size() != size * size || p.mask.size() != size * size) {
      throw ShapeError("write_slice_archive: record " + std::to_string(i) + " does not match size " +
                       std::to_string(size));
    }
    const std::string name = record_name(i);
    write_file_atomic(dir / (name + ".img"), p.image.data(), p.image.size() * sizeof(float));
    write_file_atomic(dir / (name + ".msk"), p.mask.data(), p.mask.size());
    slices.push_back({{"image", name + ".img"},
                      {"mask", name + ".msk"},
                      {"slice_index", p.slice_index},
                      {"augmentation", p.augmentation},
                      {"source_case", p.case_id}});
  }
  m["slices"] = std::move(slices);
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

std::vector<SlicePair> read_slice_archive(const fs::path& root) {
  if (fs::exists(root / "manifest.json")) return read_case(root);
  if (!fs::is_directory(root)) throw IoError("slice archive '" + root.string() + "' is not a directory");
  std::vector<fs::path> cases;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) cases.push_back(entry.path());
  std::sort(cases.begin(), cases.end());
  if (cases.empty()) throw InputError("no slice archive cases under '" + root.string() + "'");
  std::vector<SlicePair> out;
  for (const auto& c : cases) {
    auto part = read_case(c);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

}  // namespace earu
