#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "motionseq/decoder.hpp"
#include "motionseq/error.hpp"
#include "motionseq/optim.hpp"
#include "motionseq/rng.hpp"
#include "motionseq/vqvae.hpp"

namespace motionseq {

// CRC-32 (reflected, polynomial 0xEDB88320), the variant whose check value
// for the bytes "123456789" is 0xCBF43926.
std::uint32_t crc32(const void* data, std::size_t n);

struct CheckpointTensor {
  std::string name;
  std::uint8_t dtype = 0;  // 0 = f32, 1 = u64
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::uint64_t> u64;

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
  }
};

// On disk: magic "MSEQ", version u32, config length u32 + UTF-8 text, tensor
// count u32, then per tensor: name length u16, name, dtype u8, ndim u8, dims
// u32 each, raw little-endian data. The file ends with a CRC32 of every
// preceding byte.
struct ModelCheckpoint {
  std::uint32_t version = 1;
  std::string config_text;
  std::vector<CheckpointTensor> tensors;

  CheckpointTensor& add_f32(const std::string& name, std::vector<std::uint32_t> dims);
  CheckpointTensor& add_u64(const std::string& name, std::vector<std::uint32_t> dims);
  const CheckpointTensor* find(const std::string& name) const;
  const CheckpointTensor& require(const std::string& name) const;
  std::uint64_t scalar_u64(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::string& path);

namespace ckpt_detail {

template <class T>
void pack_params(ModelCheckpoint& ck, const NamedParams<T>& params) {
  for (const auto& [name, p] : params) {
    std::vector<std::uint32_t> dims;
    for (std::size_t d : p->shape) dims.push_back(static_cast<std::uint32_t>(d));
    CheckpointTensor& t = ck.add_f32(name, std::move(dims));
    for (std::size_t i = 0; i < p->numel(); ++i) t.f32[i] = static_cast<float>(p->value[i]);
  }
}

template <class T>
void unpack_into(const CheckpointTensor& t, const std::string& name,
                 const std::vector<std::size_t>& shape, std::vector<T>& out) {
  if (t.dims.size() != shape.size())
    throw ValidationError("checkpoint: tensor " + name + " has rank " +
                          std::to_string(t.dims.size()) + ", model expects " +
                          std::to_string(shape.size()));
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (t.dims[i] != shape[i])
      throw ValidationError("checkpoint: tensor " + name + " dimension " + std::to_string(i) +
                            " is " + std::to_string(t.dims[i]) + ", model expects " +
                            std::to_string(shape[i]));
  if (t.dtype != 0) throw ValidationError("checkpoint: tensor " + name + " is not f32");
  out.resize(t.f32.size());
  for (std::size_t i = 0; i < t.f32.size(); ++i) out[i] = static_cast<T>(t.f32[i]);
}

template <class T>
void unpack_params(const ModelCheckpoint& ck, const NamedParams<T>& params) {
  for (const auto& [name, p] : params) {
    std::vector<T> buf;
    unpack_into(ck.require(name), name, p->shape, buf);
    p->value = std::move(buf);
  }
}

inline void put_arch(ModelCheckpoint& ck, const std::string& name, std::uint64_t v) {
  ck.add_u64(name, {1}).u64[0] = v;
}

inline void check_arch(const ModelCheckpoint& ck, const std::string& name, std::uint64_t expect) {
  const std::uint64_t got = ck.scalar_u64(name);
  if (got != expect)
    throw ValidationError("checkpoint: " + name + " is " + std::to_string(got) +
                          ", model expects " + std::to_string(expect));
}

}  // namespace ckpt_detail

// Training-loop state: the pipeline step counter and the full RNG state, so a
// resumed run replays the exact random stream of an uninterrupted one.
void pack_train_state(ModelCheckpoint& ck, std::uint64_t step, const Rng& rng);
void unpack_train_state(const ModelCheckpoint& ck, std::uint64_t& step, Rng& rng);

template <class T>
void pack_optimizer(ModelCheckpoint& ck, const AdamW<T>& opt) {
  ckpt_detail::put_arch(ck, "opt.step", opt.step_count());
  const NamedParams<T>& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<std::uint32_t> dims;
    for (std::size_t d : params[i].second->shape) dims.push_back(static_cast<std::uint32_t>(d));
    CheckpointTensor& m = ck.add_f32("opt.m." + params[i].first, dims);
    CheckpointTensor& v = ck.add_f32("opt.v." + params[i].first, std::move(dims));
    for (std::size_t j = 0; j < opt.moment1(i).size(); ++j) {
      m.f32[j] = static_cast<float>(opt.moment1(i)[j]);
      v.f32[j] = static_cast<float>(opt.moment2(i)[j]);
    }
  }
}

template <class T>
void unpack_optimizer(const ModelCheckpoint& ck, AdamW<T>& opt) {
  opt.set_step_count(ck.scalar_u64("opt.step"));
  const NamedParams<T>& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt_detail::unpack_into(ck.require("opt.m." + params[i].first), "opt.m." + params[i].first,
                             params[i].second->shape, opt.moment1(i));
    ckpt_detail::unpack_into(ck.require("opt.v." + params[i].first), "opt.v." + params[i].first,
                             params[i].second->shape, opt.moment2(i));
  }
}

template <class T>
ModelCheckpoint snapshot_vqvae(const VqVae<T>& model, const std::string& config_text) {
  ModelCheckpoint ck;
  ck.config_text = config_text;
  ckpt_detail::put_arch(ck, "arch.stage", 1);
  ckpt_detail::put_arch(ck, "arch.d_h", model.cfg.d_h);
  ckpt_detail::put_arch(ck, "arch.d_c", model.cfg.d_c);
  ckpt_detail::put_arch(ck, "arch.codebook_size", model.cfg.codebook_size);
  ckpt_detail::put_arch(ck, "arch.layers", model.cfg.layers);
  ckpt_detail::put_arch(ck, "arch.heads", model.cfg.heads);
  ckpt_detail::put_arch(ck, "arch.ffn_mult", model.cfg.ffn_mult);
  ckpt_detail::put_arch(ck, "arch.stride", model.cfg.stride);
  ckpt_detail::put_arch(ck, "arch.ema", model.cfg.ema ? 1 : 0);
  ck.add_f32("arch.fps", {1}).f32[0] = model.cfg.fps;

  ckpt_detail::pack_params(ck, model.trainable_params());
  const std::size_t k = model.codebook.size();
  const std::size_t d_c = model.codebook.dim();
  if (model.cfg.ema) {
    std::vector<std::uint32_t> dims = {static_cast<std::uint32_t>(k),
                                       static_cast<std::uint32_t>(d_c)};
    CheckpointTensor& entries = ck.add_f32("codebook.entries", dims);
    for (std::size_t i = 0; i < k * d_c; ++i)
      entries.f32[i] = static_cast<float>(model.codebook.entries->value[i]);
  }
  CheckpointTensor& cs = ck.add_f32("codebook.cluster_size", {static_cast<std::uint32_t>(k)});
  for (std::size_t i = 0; i < k; ++i) cs.f32[i] = static_cast<float>(model.codebook.cluster_size[i]);
  CheckpointTensor& es = ck.add_f32(
      "codebook.embed_sum", {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(d_c)});
  for (std::size_t i = 0; i < k * d_c; ++i)
    es.f32[i] = static_cast<float>(model.codebook.embed_sum[i]);
  CheckpointTensor& age = ck.add_u64("codebook.usage_age", {static_cast<std::uint32_t>(k)});
  for (std::size_t i = 0; i < k; ++i) age.u64[i] = model.codebook.usage_age[i];

  CheckpointTensor& mean =
      ck.add_f32("norm.mean", {static_cast<std::uint32_t>(model.norm.mean.size())});
  std::copy(model.norm.mean.begin(), model.norm.mean.end(), mean.f32.begin());
  CheckpointTensor& stdev =
      ck.add_f32("norm.stdev", {static_cast<std::uint32_t>(model.norm.stdev.size())});
  std::copy(model.norm.stdev.begin(), model.norm.stdev.end(), stdev.f32.begin());
  return ck;
}

template <class T>
void restore_vqvae(VqVae<T>& model, const ModelCheckpoint& ck) {
  ckpt_detail::check_arch(ck, "arch.stage", 1);
  ckpt_detail::check_arch(ck, "arch.d_h", model.cfg.d_h);
  ckpt_detail::check_arch(ck, "arch.d_c", model.cfg.d_c);
  ckpt_detail::check_arch(ck, "arch.codebook_size", model.cfg.codebook_size);
  ckpt_detail::check_arch(ck, "arch.layers", model.cfg.layers);
  ckpt_detail::check_arch(ck, "arch.heads", model.cfg.heads);
  ckpt_detail::check_arch(ck, "arch.ffn_mult", model.cfg.ffn_mult);
  ckpt_detail::check_arch(ck, "arch.stride", model.cfg.stride);
  ckpt_detail::check_arch(ck, "arch.ema", model.cfg.ema ? 1 : 0);

  ckpt_detail::unpack_params(ck, model.trainable_params());
  if (model.cfg.ema)
    ckpt_detail::unpack_into(ck.require("codebook.entries"), "codebook.entries",
                             model.codebook.entries->shape, model.codebook.entries->value);
  const std::size_t k = model.codebook.size();
  ckpt_detail::unpack_into(ck.require("codebook.cluster_size"), "codebook.cluster_size", {k},
                           model.codebook.cluster_size);
  ckpt_detail::unpack_into(ck.require("codebook.embed_sum"), "codebook.embed_sum",
                           {k, model.codebook.dim()}, model.codebook.embed_sum);
  const CheckpointTensor& age = ck.require("codebook.usage_age");
  if (age.dtype != 1 || age.numel() != k)
    throw ValidationError("checkpoint: codebook.usage_age must be u64 with " + std::to_string(k) +
                          " entries");
  for (std::size_t i = 0; i < k; ++i) model.codebook.usage_age[i] = age.u64[i];

  ckpt_detail::unpack_into(ck.require("norm.mean"), "norm.mean", {model.cfg.d_h}, model.norm.mean);
  ckpt_detail::unpack_into(ck.require("norm.stdev"), "norm.stdev", {model.cfg.d_h},
                           model.norm.stdev);
}

template <class T>
ModelCheckpoint snapshot_decoder(const DecoderModel<T>& model, const std::string& config_text) {
  ModelCheckpoint ck;
  ck.config_text = config_text;
  ckpt_detail::put_arch(ck, "arch.stage", 2);
  ckpt_detail::put_arch(ck, "arch.codebook_size", model.cfg.codebook_size);
  ckpt_detail::put_arch(ck, "arch.d_k", model.cfg.d_k);
  ckpt_detail::put_arch(ck, "arch.layers", model.cfg.layers);
  ckpt_detail::put_arch(ck, "arch.heads", model.cfg.heads);
  ckpt_detail::put_arch(ck, "arch.ffn_mult", model.cfg.ffn_mult);
  ckpt_detail::put_arch(ck, "arch.d_a", model.cfg.d_a);
  ckpt_detail::put_arch(ck, "arch.d_s", model.cfg.d_s);
  ckpt_detail::put_arch(ck, "arch.style", model.cfg.style ? 1 : 0);
  ckpt_detail::put_arch(ck, "arch.alibi", model.cfg.alibi ? 1 : 0);
  ck.add_f32("arch.fps", {1}).f32[0] = model.cfg.fps;
  ckpt_detail::pack_params(ck, model.params());
  return ck;
}

template <class T>
void restore_decoder(DecoderModel<T>& model, const ModelCheckpoint& ck) {
  ckpt_detail::check_arch(ck, "arch.stage", 2);
  ckpt_detail::check_arch(ck, "arch.codebook_size", model.cfg.codebook_size);
  ckpt_detail::check_arch(ck, "arch.d_k", model.cfg.d_k);
  ckpt_detail::check_arch(ck, "arch.layers", model.cfg.layers);
  ckpt_detail::check_arch(ck, "arch.heads", model.cfg.heads);
  ckpt_detail::check_arch(ck, "arch.ffn_mult", model.cfg.ffn_mult);
  ckpt_detail::check_arch(ck, "arch.d_a", model.cfg.d_a);
  ckpt_detail::check_arch(ck, "arch.d_s", model.cfg.d_s);
  ckpt_detail::check_arch(ck, "arch.style", model.cfg.style ? 1 : 0);
  ckpt_detail::check_arch(ck, "arch.alibi", model.cfg.alibi ? 1 : 0);
  ckpt_detail::unpack_params(ck, model.params());
}

}  // namespace motionseq
