#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace motionseq {

// Every hyperparameter the pipeline commands consume. Field initializers are
// the documented defaults; render_config() prints them all.
struct PipelineConfig {
  std::uint64_t seed = 1234;
  float fps = 20.0f;
  float test_fraction = 0.1f;

  std::size_t d_c = 32;
  std::size_t codebook_size = 64;
  std::size_t vq_layers = 2;
  std::size_t vq_heads = 4;
  std::size_t vq_ffn_mult = 4;
  std::size_t stride = 1;
  float beta = 0.2f;
  bool vq_ema = true;
  float ema_decay = 0.99f;
  bool vq_restarts = true;
  std::uint64_t restart_stale_after = 256;
  bool vq_kmeans = true;
  std::size_t kmeans_iters = 10;
  std::size_t vq_batch = 128;
  std::uint64_t vq_steps = 2000;
  float vq_lr = 2e-4f;

  std::size_t d_k = 64;
  std::size_t dec_layers = 2;
  std::size_t dec_heads = 4;
  std::size_t dec_ffn_mult = 4;
  bool alibi = true;
  bool style = false;
  std::size_t d_s = 512;
  std::size_t d_a = 35;
  bool append_eos = true;
  std::size_t dec_batch = 64;
  std::uint64_t dec_steps = 2000;
  float dec_lr = 2e-4f;

  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.999f;
  float adam_eps = 1e-8f;
  float weight_decay = 0.01f;
  std::uint64_t warmup_steps = 100;

  std::uint64_t checkpoint_every = 500;
  std::uint64_t log_every = 10;
};

// Parses `key = value` lines ('#' starts a comment, blank lines allowed).
// Unknown keys and unparseable values are rejected with the offending line
// number. Later assignments to the same key win.
PipelineConfig parse_config(const std::string& text);

PipelineConfig load_config_file(const std::string& path);

// Canonical text listing every key; parse_config(render_config(c)) == c.
std::string render_config(const PipelineConfig& cfg);

// Assigns one key from its text form, with the same typing rules as
// parse_config. Used for command-line overrides.
void apply_override(PipelineConfig& cfg, const std::string& key, const std::string& value);

// All recognized keys, in render order.
std::vector<std::string> config_keys();

// Rejects physically inconsistent settings, naming the offending field.
void validate_config(const PipelineConfig& cfg);

// MOTIONSEQ_SEED, when set, overrides cfg.seed (applied after file and flag
// values, so the environment wins).
void apply_env_seed(PipelineConfig& cfg);

}  // namespace motionseq
