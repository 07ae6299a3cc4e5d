#include <doctest.h>

#include <cstring>
#include <fstream>

#include "earu/io_util.hpp"
#include "earu/volume_io.hpp"
#include "support.hpp"

using namespace earu;
namespace fs = std::filesystem;

namespace {

template <typename V>
void put(std::vector<std::uint8_t>& b, std::size_t off, V v) {
  std::memcpy(b.data() + off, &v, sizeof v);
}

/// Minimal NIfTI-1 file assembled from the header layout by hand.
std::vector<std::uint8_t> handmade_nifti(std::int16_t nx, std::int16_t ny, std::int16_t nz, float px, float py,
                                         float pz, std::int16_t datatype, std::int16_t bitpix,
                                         const std::vector<std::uint8_t>& payload, float slope = 0.0f,
                                         float inter = 0.0f) {
  std::vector<std::uint8_t> b(352 + payload.size(), 0);
  put<std::int32_t>(b, 0, 348);
  const std::int16_t dim[8] = {3, nx, ny, nz, 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put(b, 40 + 2 * i, dim[i]);
  put(b, 70, datatype);
  put(b, 72, bitpix);
  const float pixdim[8] = {1.0f, px, py, pz, 0, 0, 0, 0};
  for (int i = 0; i < 8; ++i) put(b, 76 + 4 * i, pixdim[i]);
  put<float>(b, 108, 352.0f);
  put<float>(b, 112, slope);
  put<float>(b, 116, inter);
  std::memcpy(b.data() + 148, "handmade", 8);
  std::memcpy(b.data() + 344, "n+1\0", 4);
  std::copy(payload.begin(), payload.end(), b.begin() + 352);
  return b;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
}

std::vector<std::uint8_t> i16_payload(const std::vector<std::int16_t>& v) {
  std::vector<std::uint8_t> out(v.size() * 2);
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

}  // namespace

TEST_CASE("reads a hand-assembled NIfTI-1 file") {
  const auto dir = earu::test::scratch_dir("nifti_hand");
  // 3 x 2 x 2 (x, y, z) int16 volume, values 0..11 in x-fastest order.
  std::vector<std::int16_t> vals(12);
  for (int i = 0; i < 12; ++i) vals[i] = static_cast<std::int16_t>(i * 100 - 500);
  write_bytes(dir / "a.nii", handmade_nifti(3, 2, 2, 0.75f, 0.75f, 1.0f, 4, 16, i16_payload(vals)));
  const auto v = read_volume(dir / "a.nii");
  CHECK(v.w == 3);
  CHECK(v.h == 2);
  CHECK(v.d == 2);
  CHECK(v.spacing == Spacing{1.0, 0.75, 0.75});
  CHECK(v.dtype == DType::i16);
  const auto ct = v.to_ct();
  CHECK(ct.at(0, 0, 0) == -500.0f);
  CHECK(ct.at(1, 1, 2) == 600.0f);

  // Distinct pixdims pin the axis order: pixdim[1] is x, pixdim[3] the slice axis.
  write_bytes(dir / "b.nii", handmade_nifti(3, 2, 2, 0.6f, 0.7f, 2.5f, 4, 16, i16_payload(vals), 2.0f, 10.0f));
  const auto b = read_volume(dir / "b.nii");
  CHECK(b.spacing.sx == doctest::Approx(0.6));
  CHECK(b.spacing.sy == doctest::Approx(0.7));
  CHECK(b.spacing.sz == 2.5);
  CHECK(b.to_ct().at(0, 0, 1) == -400.0f * 2 + 10);
}

TEST_CASE("NIfTI reader rejects unsupported or broken files") {
  const auto dir = earu::test::scratch_dir("nifti_bad");
  const auto payload = i16_payload(std::vector<std::int16_t>(12, 1));
  auto good = handmade_nifti(3, 2, 2, 1, 1, 1, 4, 16, payload);

  auto dt = good;
  put<std::int16_t>(dt, 70, 64);
  write_bytes(dir / "dt.nii", dt);
  try {
    read_volume(dir / "dt.nii");
    FAIL("expected an error");
  } catch (const UnsupportedError& e) {
    CHECK(std::string(e.what()).find("64") != std::string::npos);
  }

  auto be = good;
  const std::int32_t swapped = static_cast<std::int32_t>(__builtin_bswap32(348u));
  put(be, 0, swapped);
  write_bytes(dir / "be.nii", be);
  CHECK_THROWS_AS(read_volume(dir / "be.nii"), UnsupportedError);

  auto magic = good;
  std::memcpy(magic.data() + 344, "xx1\0", 4);
  write_bytes(dir / "magic.nii", magic);
  CHECK_THROWS_AS(read_volume(dir / "magic.nii"), FormatError);

  auto truncated = good;
  truncated.resize(truncated.size() - 5);
  write_bytes(dir / "trunc.nii", truncated);
  try {
    read_volume(dir / "trunc.nii");
    FAIL("expected an error");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("24") != std::string::npos);
    CHECK(msg.find("19") != std::string::npos);
  }

  auto tiny = good;
  tiny.resize(100);
  write_bytes(dir / "tiny.nii", tiny);
  CHECK_THROWS_AS(read_volume(dir / "tiny.nii"), FormatError);

  CHECK_THROWS_AS(format_for_path("x.nii.gz"), UnsupportedError);
  CHECK_THROWS_AS(read_volume(dir / "missing.nii"), IoError);
}

TEST_CASE("write then read is bit-exact for every dtype and both formats") {
  const auto dir = earu::test::scratch_dir("roundtrip");
  const auto ph = earu::test::make_phantom(3, 5, 4, Spacing{2.5, 0.7, 0.8}, 61);
  for (DType t : {DType::u8, DType::i16, DType::f32}) {
    auto v = t == DType::u8 ? VolumeData::from_labels(ph.mask) : VolumeData::from_ct(ph.ct, t);
    for (const char* name : {"v.nii", "v.json"}) {
      CAPTURE(name);
      const fs::path p = dir / (to_string(t) + "_" + name);
      write_volume(v, p);
      const auto bytes1 = read_file(p);
      write_volume(v, p);
      CHECK(read_file(p) == bytes1);
      auto r = read_volume(p);
      CHECK(r.d == v.d);
      CHECK(r.h == v.h);
      CHECK(r.w == v.w);
      CHECK(r.spacing.sz == doctest::Approx(v.spacing.sz));
      CHECK(r.dtype == t);
      CHECK(r.payload == v.payload);
    }
  }
  const auto labels = read_volume(dir / "u8_v.nii").to_labels();
  CHECK(labels.voxels == ph.mask.voxels);
  const auto f = read_volume(dir / "f32_v.json").to_ct();
  CHECK(f.voxels == ph.ct.voxels);
}

TEST_CASE("NIfTI writer keeps template geometry fields") {
  const auto dir = earu::test::scratch_dir("template");
  const auto vals = i16_payload(std::vector<std::int16_t>(12, 3));
  write_bytes(dir / "src.nii", handmade_nifti(3, 2, 2, 0.6f, 0.7f, 2.0f, 4, 16, vals));
  const auto src = read_volume(dir / "src.nii");
  LabelVolume m(2, 2, 3, src.spacing, 1);
  write_nifti(VolumeData::from_labels(m), dir / "out.nii", src.nifti_header);
  const auto out = read_file(dir / "out.nii");
  CHECK(std::memcmp(out.data() + 148, "handmade", 8) == 0);
  const auto back = read_volume(dir / "out.nii");
  CHECK(back.dtype == DType::u8);
  CHECK(back.spacing == src.spacing);
  CHECK(back.to_labels().voxels == m.voxels);
}

TEST_CASE("VSEG sidecar schema") {
  using nlohmann::json;
  json good = {{"format", "VSEG"}, {"version", 1},    {"dims", {2, 3, 4}},
               {"spacing_mm", {1.0, 0.5, 0.5}}, {"dtype", "i16"}, {"payload", "v.raw"}};
  CHECK_NOTHROW(validate_vseg_sidecar(good));
  auto bad = good;
  bad["version"] = 2;
  CHECK_THROWS_AS(validate_vseg_sidecar(bad), VersionError);
  bad = good;
  bad.erase("dims");
  CHECK_THROWS_AS(validate_vseg_sidecar(bad), FormatError);
  bad = good;
  bad["dtype"] = "f64";
  CHECK_THROWS_AS(validate_vseg_sidecar(bad), FormatError);
  bad = good;
  bad["spacing_mm"] = {1.0, -1.0, 1.0};
  CHECK_THROWS_AS(validate_vseg_sidecar(bad), FormatError);
  bad = good;
  bad["byte_order"] = "big";
  CHECK_THROWS_AS(validate_vseg_sidecar(bad), FormatError);

  const auto dir = earu::test::scratch_dir("vseg");
  CtVolume v(2, 3, 4, Spacing{1, 0.5, 0.5});
  write_volume(VolumeData::from_ct(v, DType::i16), dir / "v.json");
  const auto side = json::parse(read_file(dir / "v.json"));
  CHECK_NOTHROW(validate_vseg_sidecar(side));
  CHECK(side["dims"] == json::array({2, 3, 4}));
  std::ofstream(dir / "v.raw", std::ios::binary) << "short";
  CHECK_THROWS_AS(read_volume(dir / "v.json"), FormatError);
}

TEST_CASE("slice archive round trip, overwrite and multiple cases") {
  const auto dir = earu::test::scratch_dir("archive");
  std::vector<SlicePair> pairs;
  for (std::size_t i = 0; i < 3; ++i) {
    SlicePair p;
    p.size = 4;
    p.image.assign(16, 0.25f * float(i));
    p.mask.assign(16, i % 2);
    p.case_id = "b";
    p.slice_index = 10 + i;
    pairs.push_back(p);
  }
  pairs[2].augmentation = "flip";
  write_slice_archive(dir, "b", pairs);
  CHECK(read_slice_archive(dir / "b") == pairs);
  const auto m1 = read_file(dir / "b" / "manifest.json");
  write_slice_archive(dir, "b", pairs);
  CHECK(read_file(dir / "b" / "manifest.json") == m1);

  auto a = pairs;
  for (auto& p : a) p.case_id = "a";
  write_slice_archive(dir, "a", a);
  const auto all = read_slice_archive(dir);
  REQUIRE(all.size() == 6);
  CHECK(all[0].case_id == "a");
  CHECK(all[5].case_id == "b");

  write_slice_archive(dir, "b", {pairs[0]});
  CHECK(read_slice_archive(dir / "b").size() == 1);
  CHECK_FALSE(fs::exists(dir / "b" / "slice_00002.img"));

  std::ofstream(dir / "a" / "slice_00001.msk", std::ios::binary | std::ios::trunc)
      .write("\x02\x02\x02\x02\x02\x02\x02\x02\x02\x02\x02\x02\x02\x02\x02\x02", 16);
  CHECK_THROWS_AS(read_slice_archive(dir / "a"), FormatError);
  std::ofstream(dir / "a" / "slice_00001.msk", std::ios::binary | std::ios::trunc).write("\x01", 1);
  CHECK_THROWS_AS(read_slice_archive(dir / "a"), FormatError);
}

TEST_CASE("byte reader bounds") {
  ByteWriter w;
  w.put<std::uint32_t>(7);
  w.put_string("abc");
  ByteReader r(w.bytes().data(), w.bytes().size());
  CHECK(r.get<std::uint32_t>() == 7);
  CHECK(r.get_string() == "abc");
  CHECK(r.remaining() == 0);
  CHECK_THROWS_AS(r.get<std::uint8_t>(), FormatError);
}
