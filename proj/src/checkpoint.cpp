#include "earu/checkpoint.hpp"

#include <cstring>
#include <set>

#include <zlib.h>

#include "earu/config.hpp"

namespace earu {

std::vector<ParamRecord> capture_params(ModelParams<float>& params) {
  std::vector<ParamRecord> out;
  params.visit([&](const std::string& name, Tensor<float>& t, ParamKind kind) {
    out.push_back({name, kind, t.shape(), t.storage()});
  });
  return out;
}

void restore_params(const std::vector<ParamRecord>& records, ModelParams<float>& params) {
  std::size_t i = 0;
  // Validate everything before touching the model.
  params.visit([&](const std::string& name, Tensor<float>& t, ParamKind kind) {
    if (i >= records.size()) throw StateError("checkpoint has no record for '" + name + "'");
    const ParamRecord& r = records[i++];
    if (r.name != name || r.kind != kind || !(r.shape == t.shape()) || r.data.size() != t.numel()) {
      throw StateError("checkpoint record '" + r.name + "' " + r.shape.str() + " does not match model tensor '" +
                       name + "' " + t.shape().str());
    }
  });
  if (i != records.size()) throw StateError("checkpoint holds " + std::to_string(records.size() - i) + " extra records");
  i = 0;
  params.visit([&](const std::string&, Tensor<float>& t, ParamKind) {
    t.storage() = records[i++].data;
    t.drop_grad();
  });
}

ModelParams<float> params_from_checkpoint(const Checkpoint& ckpt) {
  ModelParams<float> p = make_model_params<float>(ckpt.config);
  restore_params(ckpt.params, p);
  return p;
}

namespace {

constexpr char kMagic[4] = {'E', 'A', 'R', 'U'};

void put_floats(ByteWriter& w, const std::vector<float>& v) {
  w.put<std::uint64_t>(v.size());
  w.put_bytes(v.data(), v.size() * sizeof(float));
}

std::vector<float> get_floats(ByteReader& r) {
  const auto n = r.get<std::uint64_t>();
  if (n > r.remaining() / sizeof(float)) throw FormatError("checkpoint: array length exceeds payload");
  std::vector<float> v(n);
  r.get_bytes(v.data(), n * sizeof(float));
  return v;
}

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

Bytes serialize_checkpoint(const Checkpoint& ckpt) {
  ByteWriter p;
  p.put_string(to_json(ckpt.config).dump());
  p.put<std::uint64_t>(ckpt.epoch);
  p.put_string(ckpt.rng_state);
  p.put_string(ckpt.metadata);
  p.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& rec : ckpt.params) {
    p.put_string(rec.name);
    p.put<std::uint8_t>(rec.kind == ParamKind::trainable ? 0 : 1);
    for (std::uint64_t d : {rec.shape.n, rec.shape.c, rec.shape.h, rec.shape.w}) p.put<std::uint64_t>(d);
    put_floats(p, rec.data);
  }
  p.put<std::uint8_t>(ckpt.adam ? 1 : 0);
  if (ckpt.adam) {
    p.put<std::uint64_t>(ckpt.adam->step);
    p.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.adam->moments.size()));
    for (const auto& [name, mom] : ckpt.adam->moments) {
      p.put_string(name);
      put_floats(p, mom.m);
      put_floats(p, mom.v);
    }
  }
  p.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.curve.epochs.size()));
  for (const auto& e : ckpt.curve.epochs) {
    p.put<double>(e.train);
    p.put<std::uint8_t>(e.val ? 1 : 0);
    p.put<double>(e.val.value_or(0.0));
  }

  const Bytes& payload = p.bytes();
  ByteWriter out;
  out.put_bytes(kMagic, 4);
  out.put<std::uint32_t>(ckpt.version);
  out.put<std::uint64_t>(payload.size());
  out.put_bytes(payload.data(), payload.size());
  out.put<std::uint32_t>(crc(payload.data(), payload.size()));
  return std::move(out.bytes());
}

Checkpoint deserialize_checkpoint(const Bytes& bytes) {
  ByteReader head(bytes.data(), bytes.size());
  char magic[4];
  head.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  const auto version = head.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  const auto len = head.get<std::uint64_t>();
  if (len > head.remaining() || head.remaining() - len != 4) {
    throw FormatError("checkpoint: payload length " + std::to_string(len) + " inconsistent with file size " +
                      std::to_string(bytes.size()));
  }
  const std::uint8_t* payload = bytes.data() + head.position();
  std::uint32_t stored;
  std::memcpy(&stored, payload + len, 4);
  if (stored != crc(payload, len)) throw FormatError("checkpoint: CRC mismatch");

  ByteReader r(payload, len);
  Checkpoint c;
  c.version = version;
  try {
    c.config = model_config_from_json(nlohmann::json::parse(r.get_string()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: config: ") + e.what());
  }
  c.epoch = r.get<std::uint64_t>();
  c.rng_state = r.get_string();
  c.metadata = r.get_string();
  const auto nparams = r.get<std::uint32_t>();
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < nparams; ++i) {
    ParamRecord rec;
    rec.name = r.get_string();
    if (!names.insert(rec.name).second) throw FormatError("checkpoint: duplicate record '" + rec.name + "'");
    const auto kind = r.get<std::uint8_t>();
    if (kind > 1) throw FormatError("checkpoint: bad record kind");
    rec.kind = kind == 0 ? ParamKind::trainable : ParamKind::buffer;
    rec.shape.n = r.get<std::uint64_t>();
    rec.shape.c = r.get<std::uint64_t>();
    rec.shape.h = r.get<std::uint64_t>();
    rec.shape.w = r.get<std::uint64_t>();
    rec.data = get_floats(r);
    if (rec.data.size() != rec.shape.numel()) throw FormatError("checkpoint: record '" + rec.name + "' size mismatch");
    c.params.push_back(std::move(rec));
  }
  if (r.get<std::uint8_t>()) {
    AdamState a;
    a.step = r.get<std::uint64_t>();
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = r.get_string();
      AdamMoments m;
      m.m = get_floats(r);
      m.v = get_floats(r);
      if (m.m.size() != m.v.size()) throw FormatError("checkpoint: moment size mismatch for '" + name + "'");
      a.moments.emplace(std::move(name), std::move(m));
    }
    c.adam = std::move(a);
  }
  const auto nepochs = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nepochs; ++i) {
    EpochLoss e;
    e.train = r.get<double>();
    const bool has_val = r.get<std::uint8_t>() != 0;
    const double v = r.get<double>();
    if (has_val) e.val = v;
    c.curve.epochs.push_back(e);
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes in payload");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return deserialize_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    if (dynamic_cast<const VersionError*>(&e)) throw VersionError("'" + path.string() + "': " + e.what());
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

}  // namespace earu
