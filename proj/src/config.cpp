#include "motionseq/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "motionseq/error.hpp"

namespace motionseq {

namespace {

struct FieldSpec {
  std::string name;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

std::string trim(const std::string& s) {
  std::size_t lo = 0;
  std::size_t hi = s.size();
  while (lo < hi && std::isspace(static_cast<unsigned char>(s[lo])) != 0) ++lo;
  while (hi > lo && std::isspace(static_cast<unsigned char>(s[hi - 1])) != 0) --hi;
  return s.substr(lo, hi - lo);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  if (value.empty() || value[0] == '-')
    throw ValidationError("config: " + key + " must be a nonnegative integer, got '" + value + "'");
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (errno != 0 || end == value.c_str() || *end != '\0')
    throw ValidationError("config: " + key + " must be a nonnegative integer, got '" + value + "'");
  return static_cast<std::uint64_t>(v);
}

float parse_f32(const std::string& key, const std::string& value) {
  char* end = nullptr;
  errno = 0;
  const float v = std::strtof(value.c_str(), &end);
  if (errno != 0 || end == value.c_str() || *end != '\0')
    throw ValidationError("config: " + key + " must be a number, got '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ValidationError("config: " + key + " must be true/false/1/0, got '" + value + "'");
}

std::string format_f32(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

FieldSpec u64_field(const std::string& name, std::uint64_t PipelineConfig::* member) {
  return {name,
          [name, member](PipelineConfig& c, const std::string& v) { c.*member = parse_u64(name, v); },
          [member](const PipelineConfig& c) { return std::to_string(c.*member); }};
}

FieldSpec size_field(const std::string& name, std::size_t PipelineConfig::* member) {
  return {name,
          [name, member](PipelineConfig& c, const std::string& v) {
            c.*member = static_cast<std::size_t>(parse_u64(name, v));
          },
          [member](const PipelineConfig& c) { return std::to_string(c.*member); }};
}

FieldSpec f32_field(const std::string& name, float PipelineConfig::* member) {
  return {name,
          [name, member](PipelineConfig& c, const std::string& v) { c.*member = parse_f32(name, v); },
          [member](const PipelineConfig& c) { return format_f32(c.*member); }};
}

FieldSpec bool_field(const std::string& name, bool PipelineConfig::* member) {
  return {name,
          [name, member](PipelineConfig& c, const std::string& v) { c.*member = parse_bool(name, v); },
          [member](const PipelineConfig& c) { return c.*member ? std::string("true") : std::string("false"); }};
}

const std::vector<FieldSpec>& schema() {
  static const std::vector<FieldSpec> fields = {
      u64_field("seed", &PipelineConfig::seed),
      f32_field("fps", &PipelineConfig::fps),
      f32_field("test_fraction", &PipelineConfig::test_fraction),
      size_field("d_c", &PipelineConfig::d_c),
      size_field("codebook_size", &PipelineConfig::codebook_size),
      size_field("vq_layers", &PipelineConfig::vq_layers),
      size_field("vq_heads", &PipelineConfig::vq_heads),
      size_field("vq_ffn_mult", &PipelineConfig::vq_ffn_mult),
      size_field("stride", &PipelineConfig::stride),
      f32_field("beta", &PipelineConfig::beta),
      bool_field("vq_ema", &PipelineConfig::vq_ema),
      f32_field("ema_decay", &PipelineConfig::ema_decay),
      bool_field("vq_restarts", &PipelineConfig::vq_restarts),
      u64_field("restart_stale_after", &PipelineConfig::restart_stale_after),
      bool_field("vq_kmeans", &PipelineConfig::vq_kmeans),
      size_field("kmeans_iters", &PipelineConfig::kmeans_iters),
      size_field("vq_batch", &PipelineConfig::vq_batch),
      u64_field("vq_steps", &PipelineConfig::vq_steps),
      f32_field("vq_lr", &PipelineConfig::vq_lr),
      size_field("d_k", &PipelineConfig::d_k),
      size_field("dec_layers", &PipelineConfig::dec_layers),
      size_field("dec_heads", &PipelineConfig::dec_heads),
      size_field("dec_ffn_mult", &PipelineConfig::dec_ffn_mult),
      bool_field("alibi", &PipelineConfig::alibi),
      bool_field("style", &PipelineConfig::style),
      size_field("d_s", &PipelineConfig::d_s),
      size_field("d_a", &PipelineConfig::d_a),
      bool_field("append_eos", &PipelineConfig::append_eos),
      size_field("dec_batch", &PipelineConfig::dec_batch),
      u64_field("dec_steps", &PipelineConfig::dec_steps),
      f32_field("dec_lr", &PipelineConfig::dec_lr),
      f32_field("adam_beta1", &PipelineConfig::adam_beta1),
      f32_field("adam_beta2", &PipelineConfig::adam_beta2),
      f32_field("adam_eps", &PipelineConfig::adam_eps),
      f32_field("weight_decay", &PipelineConfig::weight_decay),
      u64_field("warmup_steps", &PipelineConfig::warmup_steps),
      u64_field("checkpoint_every", &PipelineConfig::checkpoint_every),
      u64_field("log_every", &PipelineConfig::log_every),
  };
  return fields;
}

const FieldSpec& find_field(const std::string& key) {
  for (const FieldSpec& f : schema())
    if (f.name == key) return f;
  throw ValidationError("config: unknown key '" + key + "'");
}

}  // namespace

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config: line " + std::to_string(lineno) +
                            " is not a key = value assignment: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ValidationError("config: line " + std::to_string(lineno) + " has an empty key");
    try {
      find_field(key).set(cfg, value);
    } catch (const ValidationError& e) {
      throw ValidationError("config: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

PipelineConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError(path + ": cannot open");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str());
}

std::string render_config(const PipelineConfig& cfg) {
  std::string out;
  for (const FieldSpec& f : schema()) {
    out += f.name;
    out += " = ";
    out += f.get(cfg);
    out += '\n';
  }
  return out;
}

void apply_override(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, trim(value));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  keys.reserve(schema().size());
  for (const FieldSpec& f : schema()) keys.push_back(f.name);
  return keys;
}

void validate_config(const PipelineConfig& cfg) {
  if (!(cfg.fps > 0.0f)) throw ValidationError("config: fps must be positive");
  if (cfg.test_fraction < 0.0f || cfg.test_fraction > 0.5f)
    throw ValidationError("config: test_fraction must lie in [0, 0.5]");
  if (cfg.codebook_size < 2) throw ValidationError("config: codebook_size must be at least 2");
  if (cfg.d_c == 0) throw ValidationError("config: d_c must be positive");
  if (cfg.vq_heads == 0 || cfg.d_c % cfg.vq_heads != 0)
    throw ValidationError("config: d_c must be divisible by vq_heads");
  if (cfg.vq_layers == 0) throw ValidationError("config: vq_layers must be positive");
  if (cfg.vq_ffn_mult == 0) throw ValidationError("config: vq_ffn_mult must be positive");
  if (cfg.stride == 0) throw ValidationError("config: stride must be positive");
  if (!(cfg.beta >= 0.0f)) throw ValidationError("config: beta must be nonnegative");
  if (!(cfg.ema_decay >= 0.0f) || !(cfg.ema_decay < 1.0f))
    throw ValidationError("config: ema_decay must lie in [0, 1)");
  if (cfg.vq_batch == 0) throw ValidationError("config: vq_batch must be positive");
  if (cfg.vq_steps == 0) throw ValidationError("config: vq_steps must be positive");
  if (!(cfg.vq_lr > 0.0f)) throw ValidationError("config: vq_lr must be positive");
  if (cfg.d_k == 0) throw ValidationError("config: d_k must be positive");
  if (cfg.dec_heads == 0 || cfg.d_k % cfg.dec_heads != 0)
    throw ValidationError("config: d_k must be divisible by dec_heads");
  if (cfg.dec_layers == 0) throw ValidationError("config: dec_layers must be positive");
  if (cfg.dec_ffn_mult == 0) throw ValidationError("config: dec_ffn_mult must be positive");
  if (cfg.d_s == 0) throw ValidationError("config: d_s must be positive");
  if (cfg.d_a == 0) throw ValidationError("config: d_a must be positive");
  if (cfg.dec_batch == 0) throw ValidationError("config: dec_batch must be positive");
  if (cfg.dec_steps == 0) throw ValidationError("config: dec_steps must be positive");
  if (!(cfg.dec_lr > 0.0f)) throw ValidationError("config: dec_lr must be positive");
  if (!(cfg.adam_beta1 >= 0.0f) || !(cfg.adam_beta1 < 1.0f))
    throw ValidationError("config: adam_beta1 must lie in [0, 1)");
  if (!(cfg.adam_beta2 >= 0.0f) || !(cfg.adam_beta2 < 1.0f))
    throw ValidationError("config: adam_beta2 must lie in [0, 1)");
  if (!(cfg.adam_eps > 0.0f)) throw ValidationError("config: adam_eps must be positive");
  if (!(cfg.weight_decay >= 0.0f)) throw ValidationError("config: weight_decay must be nonnegative");
  if (cfg.checkpoint_every == 0) throw ValidationError("config: checkpoint_every must be positive");
  if (cfg.log_every == 0) throw ValidationError("config: log_every must be positive");
}

void apply_env_seed(PipelineConfig& cfg) {
  const char* env = std::getenv("MOTIONSEQ_SEED");
  if (env == nullptr || *env == '\0') return;
  cfg.seed = parse_u64("MOTIONSEQ_SEED", env);
}

}  // namespace motionseq
