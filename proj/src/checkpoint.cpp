#include "motionseq/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "motionseq/binio.hpp"

namespace motionseq {

std::uint32_t crc32(const void* data, std::size_t n) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) != 0 ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

namespace {

constexpr char kMagic[4] = {'M', 'S', 'E', 'Q'};
constexpr std::size_t kMaxTensorElems = 1u << 30;

CheckpointTensor& add_tensor(ModelCheckpoint& ck, const std::string& name,
                             std::vector<std::uint32_t> dims, std::uint8_t dtype) {
  if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max())
    throw ValidationError("checkpoint: bad tensor name length " + std::to_string(name.size()));
  if (dims.size() > std::numeric_limits<std::uint8_t>::max())
    throw ValidationError("checkpoint: tensor " + name + " has too many dimensions");
  if (ck.find(name) != nullptr)
    throw ValidationError("checkpoint: duplicate tensor " + name);
  CheckpointTensor t;
  t.name = name;
  t.dtype = dtype;
  t.dims = std::move(dims);
  const std::size_t n = t.numel();
  if (n > kMaxTensorElems)
    throw ValidationError("checkpoint: tensor " + name + " is implausibly large");
  if (dtype == 0)
    t.f32.assign(n, 0.0f);
  else
    t.u64.assign(n, 0);
  ck.tensors.push_back(std::move(t));
  return ck.tensors.back();
}

}  // namespace

CheckpointTensor& ModelCheckpoint::add_f32(const std::string& name,
                                           std::vector<std::uint32_t> dims) {
  return add_tensor(*this, name, std::move(dims), 0);
}

CheckpointTensor& ModelCheckpoint::add_u64(const std::string& name,
                                           std::vector<std::uint32_t> dims) {
  return add_tensor(*this, name, std::move(dims), 1);
}

const CheckpointTensor* ModelCheckpoint::find(const std::string& name) const {
  for (const CheckpointTensor& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const CheckpointTensor& ModelCheckpoint::require(const std::string& name) const {
  const CheckpointTensor* t = find(name);
  if (t == nullptr) throw ValidationError("checkpoint: missing tensor " + name);
  return *t;
}

std::uint64_t ModelCheckpoint::scalar_u64(const std::string& name) const {
  const CheckpointTensor& t = require(name);
  if (t.dtype != 1 || t.numel() != 1)
    throw ValidationError("checkpoint: " + name + " is not a u64 scalar");
  return t.u64[0];
}

void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt) {
  std::ostringstream payload(std::ios::binary);
  binio::put_bytes(payload, kMagic, 4);
  binio::put_le<std::uint32_t>(payload, ckpt.version);
  if (ckpt.config_text.size() > std::numeric_limits<std::uint32_t>::max())
    throw ValidationError(path + ": config text too large");
  binio::put_le<std::uint32_t>(payload, static_cast<std::uint32_t>(ckpt.config_text.size()));
  binio::put_bytes(payload, ckpt.config_text.data(), ckpt.config_text.size());
  binio::put_le<std::uint32_t>(payload, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const CheckpointTensor& t : ckpt.tensors) {
    binio::put_le<std::uint16_t>(payload, static_cast<std::uint16_t>(t.name.size()));
    binio::put_bytes(payload, t.name.data(), t.name.size());
    binio::put_le<std::uint8_t>(payload, t.dtype);
    binio::put_le<std::uint8_t>(payload, static_cast<std::uint8_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) binio::put_le<std::uint32_t>(payload, d);
    const std::size_t n = t.numel();
    if (t.dtype == 0) {
      if (t.f32.size() != n)
        throw ValidationError(path + ": tensor " + t.name + " buffer does not match its dims");
      binio::put_f32_array(payload, t.f32.data(), n);
    } else if (t.dtype == 1) {
      if (t.u64.size() != n)
        throw ValidationError(path + ": tensor " + t.name + " buffer does not match its dims");
      for (std::uint64_t v : t.u64) binio::put_le<std::uint64_t>(payload, v);
    } else {
      throw ValidationError(path + ": tensor " + t.name + " has unknown dtype");
    }
  }

  const std::string bytes = payload.str();
  const std::uint32_t crc = crc32(bytes.data(), bytes.size());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(path + ": cannot open for writing");
  binio::put_bytes(os, bytes.data(), bytes.size());
  binio::put_le<std::uint32_t>(os, crc);
  os.flush();
  if (!os) throw DataError(path + ": write failed");
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path + ": cannot open");
  std::ostringstream buf(std::ios::binary);
  buf << is.rdbuf();
  const std::string bytes = buf.str();
  if (bytes.size() < 16) throw DataError(path + ": truncated file");

  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  stored = binio::detail::from_le(stored);
  const std::uint32_t computed = crc32(bytes.data(), body);
  if (stored != computed)
    throw DataError(path + ": checksum mismatch (file corrupt at or before byte " +
                    std::to_string(body) + ")");

  std::istringstream in(bytes.substr(0, body), std::ios::binary);
  char magic[4];
  binio::get_bytes(in, magic, 4, path);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError(path + ": bad magic at byte 0");
  ModelCheckpoint ck;
  ck.version = binio::get_le<std::uint32_t>(in, path);
  if (ck.version != 1)
    throw DataError(path + ": unsupported version " + std::to_string(ck.version));
  const std::uint32_t config_len = binio::get_le<std::uint32_t>(in, path);
  ck.config_text.resize(config_len);
  if (config_len > 0) binio::get_bytes(in, ck.config_text.data(), config_len, path);
  const std::uint32_t count = binio::get_le<std::uint32_t>(in, path);
  ck.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const std::uint16_t name_len = binio::get_le<std::uint16_t>(in, path);
    t.name.resize(name_len);
    binio::get_bytes(in, t.name.data(), name_len, path);
    t.dtype = binio::get_le<std::uint8_t>(in, path);
    if (t.dtype > 1)
      throw DataError(path + ": tensor " + t.name + " has unsupported dtype " +
                      std::to_string(t.dtype));
    const std::uint8_t ndim = binio::get_le<std::uint8_t>(in, path);
    t.dims.resize(ndim);
    for (std::uint8_t d = 0; d < ndim; ++d) t.dims[d] = binio::get_le<std::uint32_t>(in, path);
    const std::size_t n = t.numel();
    if (n > kMaxTensorElems)
      throw DataError(path + ": tensor " + t.name + " is implausibly large");
    if (t.dtype == 0) {
      t.f32.resize(n);
      binio::get_f32_array(in, t.f32.data(), n, path);
    } else {
      t.u64.resize(n);
      for (std::size_t j = 0; j < n; ++j) t.u64[j] = binio::get_le<std::uint64_t>(in, path);
    }
    ck.tensors.push_back(std::move(t));
  }
  char trailing;
  if (in.read(&trailing, 1)) throw DataError(path + ": trailing bytes after tensor table");
  return ck;
}

void pack_train_state(ModelCheckpoint& ck, std::uint64_t step, const Rng& rng) {
  ckpt_detail::put_arch(ck, "train.step", step);
  CheckpointTensor& state = ck.add_u64("train.rng", {4});
  for (std::size_t i = 0; i < 4; ++i) state.u64[i] = rng.state()[i];
}

void unpack_train_state(const ModelCheckpoint& ck, std::uint64_t& step, Rng& rng) {
  step = ck.scalar_u64("train.step");
  const CheckpointTensor& state = ck.require("train.rng");
  if (state.dtype != 1 || state.numel() != 4)
    throw ValidationError("checkpoint: train.rng must hold 4 u64 words");
  Rng::State s;
  for (std::size_t i = 0; i < 4; ++i) s[i] = state.u64[i];
  rng.set_state(s);
}

}  // namespace motionseq
