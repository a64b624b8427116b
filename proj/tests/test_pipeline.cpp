#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "motionseq/audio.hpp"
#include "motionseq/checkpoint.hpp"
#include "motionseq/config.hpp"
#include "motionseq/decoder.hpp"
#include "motionseq/error.hpp"
#include "motionseq/matio.hpp"
#include "motionseq/motion.hpp"
#include "motionseq/optim.hpp"
#include "motionseq/pipeline.hpp"
#include "motionseq/rng.hpp"
#include "motionseq/tensor.hpp"
#include "motionseq/vqvae.hpp"

using namespace motionseq;
namespace fs = std::filesystem;

namespace {

struct WarnCapture {
  WarnCapture() {
    messages().clear();
    previous_ = warn_handler();
    warn_handler() = [](const std::string& msg) { messages().push_back(msg); };
  }
  ~WarnCapture() { warn_handler() = previous_; }
  static std::vector<std::string>& messages() {
    static std::vector<std::string> msgs;
    return msgs;
  }
  static bool any_contains(const std::string& needle) {
    for (const auto& m : messages())
      if (m.find(needle) != std::string::npos) return true;
    return false;
  }

 private:
  WarnHandler previous_;
};

struct EnvGuard {
  explicit EnvGuard(const char* name) : name_(name) {
    const char* v = std::getenv(name);
    had_ = v != nullptr;
    if (had_) old_ = v;
  }
  ~EnvGuard() {
    if (had_)
      ::setenv(name_, old_.c_str(), 1);
    else
      ::unsetenv(name_);
  }

 private:
  const char* name_;
  bool had_ = false;
  std::string old_;
};

std::string make_temp(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("msq_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string join(const std::string& dir, const std::string& leaf) {
  return (fs::path(dir) / leaf).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t crc32_reference(const std::string& bytes) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (unsigned char c : bytes) {
    crc ^= c;
    for (int b = 0; b < 8; ++b) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return crc ^ 0xFFFFFFFFu;
}

const MetricRow& row_named(const std::vector<MetricRow>& rows, const std::string& name) {
  for (const auto& r : rows)
    if (r.name == name) return r;
  FAIL("missing metric row ", name);
  static MetricRow dummy;
  return dummy;
}

bool has_row(const std::vector<MetricRow>& rows, const std::string& name) {
  for (const auto& r : rows)
    if (r.name == name) return true;
  return false;
}

PipelineConfig tiny_config() {
  PipelineConfig cfg;
  cfg.seed = 99;
  cfg.fps = 20.0f;
  cfg.test_fraction = 0.0f;
  cfg.d_c = 4;
  cfg.codebook_size = 8;
  cfg.vq_layers = 1;
  cfg.vq_heads = 2;
  cfg.vq_ffn_mult = 2;
  cfg.kmeans_iters = 4;
  cfg.restart_stale_after = 64;
  cfg.vq_batch = 4;
  cfg.vq_steps = 30;
  cfg.vq_lr = 1e-3f;
  cfg.d_k = 16;
  cfg.dec_layers = 1;
  cfg.dec_heads = 2;
  cfg.dec_ffn_mult = 2;
  cfg.dec_batch = 4;
  cfg.dec_steps = 30;
  cfg.dec_lr = 1e-3f;
  cfg.warmup_steps = 5;
  cfg.checkpoint_every = 100;
  cfg.log_every = 10;
  return cfg;
}

// One small trained pipeline shared by the generation and evaluation tests.
struct TinyPipeline {
  PipelineConfig cfg;
  std::string raw, prep, manifest, vq_ckpt, dec_ckpt;
};

const TinyPipeline& tiny_pipeline() {
  static const TinyPipeline fixture = [] {
    TinyPipeline t;
    t.cfg = tiny_config();
    const std::string root = make_temp("shared");
    SynthArgs sa;
    sa.out_dir = join(root, "raw");
    sa.pairs = 4;
    sa.frames = 32;
    sa.d_h = 4;
    sa.kind = "sine-walk";
    cmd_synth_data(sa, t.cfg);
    t.raw = sa.out_dir;
    const PrepareResult prep = cmd_prepare(t.raw, join(root, "prep"), t.cfg);
    t.prep = join(root, "prep");
    t.manifest = prep.manifest_path;
    t.vq_ckpt = cmd_train_vqvae(t.manifest, join(root, "run"), t.cfg).checkpoint_path;
    t.dec_ckpt = cmd_train_decoder(t.manifest, join(root, "run"), t.cfg, t.vq_ckpt).checkpoint_path;
    return t;
  }();
  return fixture;
}

MotionSequence random_motion(Rng& rng, std::size_t frames, std::size_t width, float fps) {
  MotionSequence seq;
  seq.name = "probe";
  seq.frames = make_frames(frames, width, fps);
  for (auto& v : seq.frames.data) v = static_cast<float>(rng.normal());
  return seq;
}

}  // namespace

TEST_CASE("crc32 matches the reference check value and a bitwise model") {
  const std::string check = "123456789";
  CHECK(crc32(check.data(), check.size()) == 0xCBF43926u);
  CHECK(crc32(nullptr, 0) == 0u);

  Rng rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    std::string buf(n, '\0');
    for (auto& c : buf) c = static_cast<char>(rng.next() & 0xFF);
    CHECK(crc32(buf.data(), buf.size()) == crc32_reference(buf));
  }
}

TEST_CASE("checkpoint files round trip bit-exactly") {
  const std::string dir = make_temp("ckpt_rt");
  const std::string path = join(dir, "model.mseq");

  ModelCheckpoint ck;
  ck.config_text = "alpha = 1\n# unit test \xcf\x80\nname = value\n";
  Rng rng(5);
  CheckpointTensor& w = ck.add_f32("w.a", {3, 4});
  for (auto& v : w.f32) v = static_cast<float>(rng.normal());
  w.f32[0] = 1e-42f;
  w.f32[1] = -0.0f;
  CheckpointTensor& s = ck.add_u64("state", {5});
  for (auto& v : s.u64) v = rng.next();
  s.u64[0] = UINT64_MAX;

  save_checkpoint(path, ck);
  const ModelCheckpoint back = load_checkpoint(path);

  CHECK(back.version == ck.version);
  CHECK(back.config_text == ck.config_text);
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors[0].name == "w.a");
  CHECK(back.tensors[0].dtype == 0);
  CHECK(back.tensors[0].dims == std::vector<std::uint32_t>{3, 4});
  REQUIRE(back.tensors[0].f32.size() == 12);
  CHECK(std::memcmp(back.tensors[0].f32.data(), w.f32.data(), 12 * sizeof(float)) == 0);
  CHECK(back.tensors[1].dtype == 1);
  CHECK(back.tensors[1].u64 == s.u64);

  save_checkpoint(join(dir, "again.mseq"), back);
  CHECK(slurp(path) == slurp(join(dir, "again.mseq")));
}

TEST_CASE("checkpoint loading rejects corruption") {
  const std::string dir = make_temp("ckpt_bad");
  const std::string path = join(dir, "model.mseq");
  ModelCheckpoint ck;
  ck.config_text = "seed = 1\n";
  CheckpointTensor& w = ck.add_f32("w", {8});
  for (std::size_t i = 0; i < 8; ++i) w.f32[i] = static_cast<float>(i);
  save_checkpoint(path, ck);
  const std::string good = slurp(path);

  SUBCASE("flipped byte fails the checksum") {
    std::string bad = good;
    bad[bad.size() / 2] = static_cast<char>(bad[bad.size() / 2] ^ 0x40);
    spit(path, bad);
    try {
      load_checkpoint(path);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("checksum") != std::string::npos);
    }
  }

  SUBCASE("truncation is detected") {
    spit(path, good.substr(0, good.size() - 3));
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
  }

  SUBCASE("wrong magic fails even with a valid trailing checksum") {
    std::string bad = good.substr(0, good.size() - 4);
    bad[0] = 'X';
    const std::uint32_t crc = crc32_reference(bad);
    for (int i = 0; i < 4; ++i) bad.push_back(static_cast<char>((crc >> (8 * i)) & 0xFF));
    spit(path, bad);
    try {
      load_checkpoint(path);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(join(dir, "nope.mseq")), DataError);
  }

  SUBCASE("duplicate tensor names are rejected at build time") {
    CHECK_THROWS_AS(ck.add_f32("w", {2}), ValidationError);
  }
}

TEST_CASE("optimizer and train state round trip through a checkpoint") {
  Rng rng(7);
  auto a = randn<float>(rng, {3, 4}, 1.0f, true);
  auto b = randn<float>(rng, {5}, 1.0f, true);
  NamedParams<float> params{{"a", a}, {"b", b}};
  AdamW<float> opt(params);
  for (int s = 0; s < 3; ++s) {
    a->grad.assign(a->numel(), 0.25f + static_cast<float>(s));
    b->grad.assign(b->numel(), -0.5f);
    opt.step(1e-2f);
  }
  Rng train_rng = derive_rng(42, "train");
  for (int i = 0; i < 17; ++i) train_rng.next();

  ModelCheckpoint ck;
  pack_optimizer(ck, opt);
  pack_train_state(ck, 3, train_rng);
  const std::string path = join(make_temp("opt_rt"), "opt.mseq");
  save_checkpoint(path, ck);
  const ModelCheckpoint back = load_checkpoint(path);

  Rng rng2(8);
  auto a2 = randn<float>(rng2, {3, 4}, 1.0f, true);
  auto b2 = randn<float>(rng2, {5}, 1.0f, true);
  AdamW<float> opt2(NamedParams<float>{{"a", a2}, {"b", b2}});
  unpack_optimizer(back, opt2);
  CHECK(opt2.step_count() == opt.step_count());
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(opt2.moment1(i) == opt.moment1(i));
    CHECK(opt2.moment2(i) == opt.moment2(i));
  }

  std::uint64_t step = 0;
  Rng restored(0);
  unpack_train_state(back, step, restored);
  CHECK(step == 3);
  CHECK(restored.state() == train_rng.state());
  CHECK(restored.next() == train_rng.next());
}

TEST_CASE("vqvae snapshot and restore preserve every stateful array") {
  VqVaeConfig<float> vcfg;
  vcfg.d_h = 4;
  vcfg.d_c = 4;
  vcfg.codebook_size = 8;
  vcfg.layers = 1;
  vcfg.heads = 2;
  vcfg.ffn_mult = 2;
  vcfg.stride = 2;
  vcfg.fps = 25.0f;
  VqVae<float> m1;
  m1.cfg = vcfg;
  Rng init_rng(11);
  m1.init(init_rng);
  for (std::size_t i = 0; i < m1.norm.mean.size(); ++i) {
    m1.norm.mean[i] = 0.1f * static_cast<float>(i + 1);
    m1.norm.stdev[i] = 1.0f + 0.05f * static_cast<float>(i);
  }

  AdamW<float> opt(m1.trainable_params());
  Rng train_rng(13);
  std::vector<Tensor<float>> batch = {randn<float>(train_rng, {12, 4}, 1.0f),
                                      randn<float>(train_rng, {9, 4}, 1.0f)};
  for (int s = 0; s < 3; ++s) vqvae_train_step(m1, opt, batch, 1e-3f, train_rng);

  const std::string path = join(make_temp("vq_snap"), "vq.mseq");
  save_checkpoint(path, snapshot_vqvae(m1, render_config(tiny_config())));
  const VqVae<float> m2 = vqvae_from_checkpoint(load_checkpoint(path));

  CHECK(m2.cfg.d_h == vcfg.d_h);
  CHECK(m2.cfg.stride == vcfg.stride);
  CHECK(m2.cfg.fps == vcfg.fps);
  const NamedParams<float> p1 = m1.trainable_params();
  const NamedParams<float> p2 = m2.trainable_params();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].first == p2[i].first);
    CHECK(p1[i].second->value == p2[i].second->value);
  }
  CHECK(m1.codebook.entries->value == m2.codebook.entries->value);
  CHECK(m1.codebook.cluster_size == m2.codebook.cluster_size);
  CHECK(m1.codebook.embed_sum == m2.codebook.embed_sum);
  CHECK(m1.codebook.usage_age == m2.codebook.usage_age);
  CHECK(m1.norm.mean == m2.norm.mean);
  CHECK(m1.norm.stdev == m2.norm.stdev);

  Rng probe_rng(17);
  const MotionSequence probe = random_motion(probe_rng, 10, 4, 25.0f);
  const std::vector<int> t1 = tokenize(m1, probe, true);
  const std::vector<int> t2 = tokenize(m2, probe, true);
  CHECK(t1 == t2);
  const MotionSequence d1 = detokenize(m1, t1);
  const MotionSequence d2 = detokenize(m2, t2);
  CHECK(d1.frames.data == d2.frames.data);
  CHECK(d1.fps() == 25.0f);

  VqVae<float> wrong;
  wrong.cfg = vcfg;
  wrong.cfg.d_c = 8;
  wrong.cfg.heads = 4;
  Rng wrong_rng(3);
  wrong.init(wrong_rng);
  CHECK_THROWS_AS(restore_vqvae(wrong, load_checkpoint(path)), ValidationError);
}

TEST_CASE("decoder snapshot and restore preserve the forward pass") {
  DecoderConfig<float> dcfg;
  dcfg.codebook_size = 8;
  dcfg.d_k = 16;
  dcfg.layers = 2;
  dcfg.heads = 2;
  dcfg.ffn_mult = 2;
  dcfg.d_a = 7;
  dcfg.d_s = 16;
  dcfg.fps = 20.0f;

  for (const bool styled : {false, true}) {
    CAPTURE(styled);
    DecoderConfig<float> c = dcfg;
    c.style = styled;
    c.alibi = !styled;
    DecoderModel<float> m1;
    m1.cfg = c;
    Rng init_rng(styled ? 21 : 22);
    m1.init(init_rng);

    const std::string path = join(make_temp(styled ? "dec_snap_s" : "dec_snap"), "dec.mseq");
    save_checkpoint(path, snapshot_decoder(m1, render_config(tiny_config())));
    const DecoderModel<float> m2 = decoder_from_checkpoint(load_checkpoint(path));
    CHECK(m2.cfg.style == c.style);
    CHECK(m2.cfg.alibi == c.alibi);
    CHECK(m2.cfg.fps == c.fps);

    const TokenSequence tokens = {1, 5, 0, 7, 3, 8};
    Rng cond_rng(9);
    const auto cond = randn<float>(cond_rng, {tokens.size(), c.d_a}, 1.0f);
    Tensor<float> style;
    const Tensor<float>* style_ptr = nullptr;
    if (styled) {
      style = frames_to_tensor<float>(embed_style_label("calm", c.d_s));
      style_ptr = &style;
    }
    Tape<float> tape1, tape2;
    const auto l1 = m1.forward(tape1, tokens, cond, style_ptr);
    const auto l2 = m2.forward(tape2, tokens, cond, style_ptr);
    CHECK(l1->value == l2->value);

    GenerateOptions opts;
    opts.target_len = 12;
    opts.seed_token = 2;
    Rng g1(31), g2(31);
    CHECK(generate(m1, cond, style_ptr, opts, g1) == generate(m2, cond, style_ptr, opts, g2));
  }
}

TEST_CASE("config text round trips and overrides apply in order") {
  PipelineConfig cfg = tiny_config();
  cfg.fps = 12.5f;
  cfg.test_fraction = 0.25f;
  cfg.vq_ema = false;
  cfg.vq_restarts = false;
  cfg.vq_kmeans = false;
  cfg.alibi = false;
  cfg.style = true;
  cfg.append_eos = false;
  cfg.dec_lr = 3.25e-4f;
  cfg.seed = 0xDEADBEEFULL;
  const std::string text = render_config(cfg);
  const PipelineConfig back = parse_config(text);
  CHECK(render_config(back) == text);

  CHECK(parse_config("seed = 1\nseed = 9\n").seed == 9);
  CHECK(parse_config("# comment\n\n   \nfps = 30\n").fps == 30.0f);

  PipelineConfig over = tiny_config();
  apply_override(over, "dec_lr", "0.5");
  CHECK(over.dec_lr == 0.5f);
  apply_override(over, "style", "true");
  CHECK(over.style);
  CHECK_THROWS_AS(apply_override(over, "not_a_key", "1"), ValidationError);

  CHECK_THROWS_AS(validate_config([] {
                    PipelineConfig c = tiny_config();
                    c.test_fraction = 0.9f;
                    return c;
                  }()),
                  ValidationError);
  CHECK_THROWS_AS(validate_config([] {
                    PipelineConfig c = tiny_config();
                    c.d_c = 5;
                    return c;
                  }()),
                  ValidationError);
}

TEST_CASE("config parsing reports offending lines") {
  try {
    parse_config("fps = 20\nnonsense_key = 3\n");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("nonsense_key") != std::string::npos);
  }
  try {
    parse_config("vq_steps = banana\n");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("fps 20\n"), ValidationError);
}

TEST_CASE("environment seed wins over file and flag values") {
  EnvGuard guard("MOTIONSEQ_SEED");

  PipelineConfig cfg = tiny_config();
  ::setenv("MOTIONSEQ_SEED", "777", 1);
  apply_env_seed(cfg);
  CHECK(cfg.seed == 777);

  ::setenv("MOTIONSEQ_SEED", "", 1);
  cfg.seed = 5;
  apply_env_seed(cfg);
  CHECK(cfg.seed == 5);

  ::setenv("MOTIONSEQ_SEED", "12x", 1);
  CHECK_THROWS_AS(apply_env_seed(cfg), ValidationError);

  ::unsetenv("MOTIONSEQ_SEED");
  cfg.seed = 6;
  apply_env_seed(cfg);
  CHECK(cfg.seed == 6);
}

TEST_CASE("prepare splits deterministically and skips broken pairs") {
  PipelineConfig cfg = tiny_config();
  cfg.test_fraction = 0.1f;
  const std::string root = make_temp("prep");
  SynthArgs sa;
  sa.out_dir = join(root, "raw");
  sa.pairs = 10;
  sa.frames = 48;
  sa.d_h = 5;
  sa.kind = "pulse-dance";
  cmd_synth_data(sa, cfg);

  const PrepareResult a = cmd_prepare(sa.out_dir, join(root, "outA"), cfg);
  CHECK(a.n_train == 9);
  CHECK(a.n_test == 1);
  CHECK(a.n_skipped == 0);
  const PrepareResult b = cmd_prepare(sa.out_dir, join(root, "outB"), cfg);
  CHECK(slurp(a.manifest_path) == slurp(b.manifest_path));

  SUBCASE("unreadable audio drops only its pair") {
    spit(join(sa.out_dir, "pulse-dance_03.wav"), "RIFFgarbage");
    WarnCapture warns;
    const PrepareResult c = cmd_prepare(sa.out_dir, join(root, "outC"), cfg);
    CHECK(c.n_skipped == 1);
    CHECK(c.n_train + c.n_test == 9);
    CHECK(WarnCapture::any_contains("pulse-dance_03"));
    CHECK(slurp(c.manifest_path).find("pulse-dance_03") == std::string::npos);
  }

  SUBCASE("unpaired motion is skipped with a warning") {
    const FrameMatrix lone = make_frames(8, 5, 20.0f);
    write_motb(join(sa.out_dir, "lonely.motb"), lone);
    WarnCapture warns;
    const PrepareResult c = cmd_prepare(sa.out_dir, join(root, "outD"), cfg);
    CHECK(c.n_skipped == 1);
    CHECK(WarnCapture::any_contains("lonely"));
  }

  SUBCASE("a directory with no usable pairs is an error") {
    const std::string empty = join(root, "empty");
    fs::create_directories(empty);
    CHECK_THROWS_AS(cmd_prepare(empty, join(root, "outE"), cfg), DataError);
    CHECK_THROWS_AS(cmd_prepare(join(root, "missing"), join(root, "outF"), cfg), DataError);
  }
}

TEST_CASE("prepare normalizes with train-split statistics") {
  const TinyPipeline& t = tiny_pipeline();
  const FrameMatrix stats = read_motb(join(t.prep, "stats.motb"));
  CHECK(stats.rows == 2);
  CHECK(stats.cols == 4);

  std::vector<double> sum(4, 0.0), sq(4, 0.0);
  std::size_t frames = 0;
  std::istringstream manifest(slurp(t.manifest));
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, '\t')) fields.push_back(field);
    REQUIRE(fields.size() == 4);
    if (fields[1] != "train") continue;
    const FrameMatrix m = read_motb(join(t.prep, fields[2]));
    CHECK(m.cols == 4);
    CHECK(m.fps == 20.0f);
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c) {
        sum[c] += m.at(r, c);
        sq[c] += static_cast<double>(m.at(r, c)) * m.at(r, c);
      }
    frames += m.rows;
  }
  REQUIRE(frames > 0);
  for (std::size_t c = 0; c < 4; ++c) {
    const double mean = sum[c] / static_cast<double>(frames);
    const double var = sq[c] / static_cast<double>(frames) - mean * mean;
    CHECK(std::fabs(mean) < 1e-3);
    CHECK(var > 0.8);
    CHECK(var < 1.2);
  }
}

TEST_CASE("interrupted vqvae training resumes bit-exactly") {
  const TinyPipeline& t = tiny_pipeline();
  const std::string root = make_temp("vq_resume");

  const TrainResult full = cmd_train_vqvae(t.manifest, join(root, "A"), t.cfg);
  CHECK(full.steps_run == 30);

  const TrainResult part = cmd_train_vqvae(t.manifest, join(root, "B"), t.cfg, "", 13);
  CHECK(part.steps_run == 13);
  const TrainResult rest = cmd_train_vqvae(t.manifest, join(root, "B"), t.cfg, part.checkpoint_path);
  CHECK(rest.steps_run == 17);

  CHECK(slurp(full.checkpoint_path) == slurp(rest.checkpoint_path));
  CHECK(slurp(join(root, "A/vqvae_log.csv")) == slurp(join(root, "B/vqvae_log.csv")));
}

TEST_CASE("interrupted decoder training resumes bit-exactly") {
  const TinyPipeline& t = tiny_pipeline();
  const std::string root = make_temp("dec_resume");

  const TrainResult full = cmd_train_decoder(t.manifest, join(root, "A"), t.cfg, t.vq_ckpt);
  CHECK(full.steps_run == 30);

  const TrainResult part = cmd_train_decoder(t.manifest, join(root, "B"), t.cfg, t.vq_ckpt, "", 13);
  const TrainResult rest =
      cmd_train_decoder(t.manifest, join(root, "B"), t.cfg, t.vq_ckpt, part.checkpoint_path);
  CHECK(part.steps_run == 13);
  CHECK(rest.steps_run == 17);

  CHECK(slurp(full.checkpoint_path) == slurp(rest.checkpoint_path));
  CHECK(slurp(join(root, "A/decoder_log.csv")) == slurp(join(root, "B/decoder_log.csv")));
}

TEST_CASE("decoder training refuses a mismatched tokenizer") {
  const TinyPipeline& t = tiny_pipeline();
  PipelineConfig cfg = t.cfg;
  cfg.codebook_size = 16;
  const std::string out = make_temp("dec_mismatch");
  CHECK_THROWS_AS(cmd_train_decoder(t.manifest, out, cfg, t.vq_ckpt), ValidationError);
}

TEST_CASE("generation is deterministic and honors the requested duration") {
  const TinyPipeline& t = tiny_pipeline();
  const std::string root = make_temp("gen");

  GenerateArgs args;
  args.decoder_ckpt = t.dec_ckpt;
  args.vqvae_ckpt = t.vq_ckpt;
  args.music_path = join(t.raw, "sine-walk_01.wav");
  args.out_path = join(root, "a.motb");
  args.target_seconds = 1.6;
  args.greedy = false;
  args.temperature = 1.0;

  cmd_generate(args, t.cfg);
  args.out_path = join(root, "b.motb");
  cmd_generate(args, t.cfg);
  CHECK(slurp(join(root, "a.motb")) == slurp(join(root, "b.motb")));
  const FrameMatrix out = read_motb(join(root, "a.motb"));
  CHECK(out.cols == 4);
  CHECK(out.fps == 20.0f);
  CHECK(out.rows >= 1);
  CHECK(out.rows <= 32);

  DecoderModel<float> flat;
  flat.cfg.codebook_size = t.cfg.codebook_size;
  flat.cfg.d_k = 16;
  flat.cfg.layers = 1;
  flat.cfg.heads = 2;
  flat.cfg.ffn_mult = 2;
  flat.cfg.d_a = 35;
  flat.cfg.fps = 20.0f;
  Rng flat_rng(3);
  flat.init(flat_rng);
  for (auto& v : flat.head.w->value) v = 0.0f;
  for (auto& v : flat.head.b->value) v = 0.0f;
  flat.head.b->value[0] = 1.0f;
  flat.head.b->value[static_cast<std::size_t>(flat.eos())] = -10.0f;
  const std::string flat_ckpt = join(root, "flat.mseq");
  save_checkpoint(flat_ckpt, snapshot_decoder(flat, render_config(t.cfg)));

  GenerateArgs ten;
  ten.decoder_ckpt = flat_ckpt;
  ten.vqvae_ckpt = t.vq_ckpt;
  ten.music_path = args.music_path;
  ten.out_path = join(root, "ten.motb");
  ten.target_seconds = 10.0;
  ten.seed_token = 0;
  WarnCapture warns;
  cmd_generate(ten, t.cfg);
  CHECK(WarnCapture::any_contains("holding the last frame"));
  const FrameMatrix long_out = read_motb(ten.out_path);
  CHECK(long_out.rows == 200);
  CHECK(long_out.cols == 4);

  ten.out_path = join(root, "chain.motb");
  ten.chain_segment = 8;
  cmd_generate(ten, t.cfg);
  CHECK(slurp(join(root, "chain.motb")) == slurp(join(root, "ten.motb")));
}

TEST_CASE("generation validates style labels and input shapes") {
  const TinyPipeline& t = tiny_pipeline();
  const std::string root = make_temp("gen_bad");

  GenerateArgs args;
  args.decoder_ckpt = t.dec_ckpt;
  args.vqvae_ckpt = t.vq_ckpt;
  args.music_path = join(t.raw, "sine-walk_01.wav");
  args.out_path = join(root, "x.motb");
  args.target_seconds = 1.0;

  SUBCASE("a style label needs a styled decoder") {
    args.style_label = "energetic";
    CHECK_THROWS_AS(cmd_generate(args, t.cfg), ValidationError);
  }

  SUBCASE("nonpositive duration is rejected") {
    args.target_seconds = 0.0;
    CHECK_THROWS_AS(cmd_generate(args, t.cfg), ValidationError);
  }

  SUBCASE("precomputed conditioning must match the decoder width") {
    const std::string narrow = join(root, "narrow.motb");
    write_motb(narrow, make_frames(40, 3, 20.0f));
    args.music_path = narrow;
    CHECK_THROWS_AS(cmd_generate(args, t.cfg), ValidationError);
  }

  SUBCASE("a stored feature track works in place of audio") {
    const std::string track = join(root, "track.motb");
    cmd_extract_features(join(t.raw, "sine-walk_02.wav"), track, t.cfg);
    args.music_path = track;
    cmd_generate(args, t.cfg);
    CHECK(read_motb(args.out_path).rows == 20);
  }
}

TEST_CASE("evaluating a set against itself yields zero distances and unit ratios") {
  PipelineConfig cfg = tiny_config();
  const std::string root = make_temp("eval_self");
  SynthArgs sa;
  sa.out_dir = join(root, "raw");
  sa.pairs = 4;
  sa.frames = 64;
  sa.d_h = 6;
  sa.kind = "pulse-dance";
  cmd_synth_data(sa, cfg);

  EvaluateArgs ea;
  ea.real_dir = sa.out_dir;
  ea.generated_dir = sa.out_dir;
  ea.music_dir = sa.out_dir;
  ea.report_path = join(root, "r1.csv");
  ea.div_pairs = 8;
  ea.reps = 5;
  const auto rows = cmd_evaluate(ea, cfg);

  CHECK(row_named(rows, "fid_k").mean == 0.0);
  CHECK(row_named(rows, "fid_g").mean == 0.0);
  CHECK(row_named(rows, "dist_k_ratio").mean == 1.0);
  CHECK(row_named(rows, "dist_g_ratio").mean == 1.0);
  CHECK(row_named(rows, "dist_k_real").mean == row_named(rows, "dist_k_gen").mean);
  CHECK(row_named(rows, "dist_k_real").mean > 0.0);
  CHECK(row_named(rows, "beat_align").mean > 0.9);
  CHECK_FALSE(has_row(rows, "r_precision_top1"));

  ea.report_path = join(root, "r2.csv");
  cmd_evaluate(ea, cfg);
  CHECK(slurp(join(root, "r1.csv")) == slurp(join(root, "r2.csv")));
  CHECK(slurp(join(root, "r1.csv")).find("fid_k,0,\n") != std::string::npos);

  const std::string table = format_metric_table(rows);
  CHECK(table.find("fid_k") != std::string::npos);
  CHECK(table.find("beat_align") != std::string::npos);
}

TEST_CASE("beat alignment penalizes motion shifted off the click grid") {
  PipelineConfig cfg = tiny_config();
  const std::string root = make_temp("eval_shift");
  SynthArgs sa;
  sa.out_dir = join(root, "raw");
  sa.pairs = 4;
  sa.frames = 64;
  sa.d_h = 6;
  sa.kind = "pulse-dance";
  cmd_synth_data(sa, cfg);

  const std::string shifted = join(root, "shifted");
  fs::create_directories(shifted);
  for (const auto& entry : fs::directory_iterator(sa.out_dir)) {
    const std::string name = entry.path().filename().string();
    if (!name.ends_with(".motb")) continue;
    const FrameMatrix m = read_motb(entry.path().string());
    FrameMatrix cut = make_frames(m.rows - 5, m.cols, m.fps);
    std::copy(m.data.begin() + 5 * m.cols, m.data.end(), cut.data.begin());
    write_motb(join(shifted, name), cut);
  }

  EvaluateArgs ea;
  ea.real_dir = sa.out_dir;
  ea.generated_dir = shifted;
  ea.music_dir = sa.out_dir;
  ea.div_pairs = 8;
  ea.reps = 5;
  const auto rows = cmd_evaluate(ea, cfg);
  CHECK(row_named(rows, "beat_align").mean < 0.5);
}

TEST_CASE("evaluate validates its inputs and supports retrieval embeddings") {
  PipelineConfig cfg = tiny_config();
  const std::string root = make_temp("eval_misc");
  SynthArgs sa;
  sa.out_dir = join(root, "raw");
  sa.pairs = 3;
  sa.frames = 32;
  sa.d_h = 4;
  sa.kind = "sine-walk";
  cmd_synth_data(sa, cfg);

  SUBCASE("fewer than two clips is an error") {
    const std::string lone = join(root, "lone");
    fs::create_directories(lone);
    fs::copy_file(join(sa.out_dir, "sine-walk_01.motb"), join(lone, "only.motb"));
    EvaluateArgs ea;
    ea.real_dir = sa.out_dir;
    ea.generated_dir = lone;
    CHECK_THROWS_AS(cmd_evaluate(ea, cfg), ValidationError);
  }

  SUBCASE("retrieval needs both embedding matrices") {
    EvaluateArgs ea;
    ea.real_dir = sa.out_dir;
    ea.generated_dir = sa.out_dir;
    ea.motion_embed = join(root, "motion.motb");
    CHECK_THROWS_AS(cmd_evaluate(ea, cfg), ValidationError);
  }

  SUBCASE("retrieval rows appear when both embeddings are given") {
    Rng rng(12);
    FrameMatrix me = make_frames(40, 8, 0.0f);
    for (auto& v : me.data) v = static_cast<float>(rng.normal());
    FrameMatrix te = me;
    for (auto& v : te.data) v += 0.01f * static_cast<float>(rng.normal());
    write_motb(join(root, "motion.motb"), me);
    write_motb(join(root, "text.motb"), te);

    EvaluateArgs ea;
    ea.real_dir = sa.out_dir;
    ea.generated_dir = sa.out_dir;
    ea.motion_embed = join(root, "motion.motb");
    ea.text_embed = join(root, "text.motb");
    ea.div_pairs = 3;
    ea.reps = 4;
    const auto rows = cmd_evaluate(ea, cfg);
    CHECK(row_named(rows, "r_precision_top1").mean > 0.9);
    CHECK(row_named(rows, "r_precision_top3").mean >= row_named(rows, "r_precision_top1").mean);
    CHECK(row_named(rows, "mm_dist").mean > 0.0);
    CHECK(row_named(rows, "mm_dist").mean < 1.0);
  }

  SUBCASE("generated clips without matching music drop out of beat alignment") {
    const std::string odd = join(root, "odd");
    fs::create_directories(odd);
    fs::copy_file(join(sa.out_dir, "sine-walk_01.motb"), join(odd, "a.motb"));
    fs::copy_file(join(sa.out_dir, "sine-walk_02.motb"), join(odd, "b.motb"));
    EvaluateArgs ea;
    ea.real_dir = sa.out_dir;
    ea.generated_dir = odd;
    ea.music_dir = sa.out_dir;
    WarnCapture warns;
    const auto rows = cmd_evaluate(ea, cfg);
    CHECK_FALSE(has_row(rows, "beat_align"));
    CHECK(WarnCapture::any_contains("beat alignment"));
  }
}

TEST_CASE("feature extraction writes a deterministic 35-channel track") {
  const TinyPipeline& t = tiny_pipeline();
  const std::string root = make_temp("extract");
  const std::string wav = join(t.raw, "sine-walk_01.wav");

  cmd_extract_features(wav, join(root, "a.motb"), t.cfg);
  cmd_extract_features(wav, join(root, "b.motb"), t.cfg);
  CHECK(slurp(join(root, "a.motb")) == slurp(join(root, "b.motb")));

  const FrameMatrix m = read_motb(join(root, "a.motb"));
  CHECK(m.cols == 35);
  CHECK(m.fps == 20.0f);
  CHECK(m.rows >= 30);
  CHECK(m.rows <= 34);
}

TEST_CASE("synthetic data is paired and reproducible") {
  PipelineConfig cfg = tiny_config();
  const std::string root = make_temp("synth");
  SynthArgs sa;
  sa.out_dir = join(root, "A");
  sa.pairs = 3;
  sa.frames = 24;
  sa.d_h = 4;
  sa.kind = "pulse-dance";
  const auto paths = cmd_synth_data(sa, cfg);
  REQUIRE(paths.size() == 6);
  sa.out_dir = join(root, "B");
  cmd_synth_data(sa, cfg);

  for (const auto& p : paths) {
    const std::string leaf = fs::path(p).filename().string();
    CHECK(slurp(join(root, "A/" + leaf)) == slurp(join(root, "B/" + leaf)));
    if (!leaf.ends_with(".motb")) continue;
    const FrameMatrix m = read_motb(p);
    CHECK(m.rows == 24);
    CHECK(m.cols == 4);
    CHECK(m.fps == 20.0f);
  }
}

TEST_CASE("the trained pipeline generates clips that evaluate against the corpus") {
  const TinyPipeline& t = tiny_pipeline();
  const std::string root = make_temp("e2e");
  const std::string gen = join(root, "gen");

  for (const char* stem : {"sine-walk_01", "sine-walk_02"}) {
    GenerateArgs args;
    args.decoder_ckpt = t.dec_ckpt;
    args.vqvae_ckpt = t.vq_ckpt;
    args.music_path = join(t.raw, std::string(stem) + ".wav");
    args.out_path = join(gen, std::string(stem) + ".motb");
    args.target_seconds = 1.6;
    cmd_generate(args, t.cfg);
  }

  EvaluateArgs ea;
  ea.real_dir = t.raw;
  ea.generated_dir = gen;
  ea.music_dir = t.raw;
  ea.report_path = join(root, "report.csv");
  ea.div_pairs = 4;
  ea.reps = 3;
  const auto rows = cmd_evaluate(ea, t.cfg);

  for (const char* name : {"fid_k", "fid_g", "dist_k_ratio", "dist_g_ratio", "beat_align"}) {
    const MetricRow& r = row_named(rows, name);
    CHECK(std::isfinite(r.mean));
  }
  CHECK(row_named(rows, "fid_k").mean >= 0.0);
  CHECK(row_named(rows, "beat_align").mean >= 0.0);
  CHECK(row_named(rows, "beat_align").mean <= 1.0);
  CHECK(fs::exists(ea.report_path));
}

TEST_CASE("the command line reports outcomes through exit codes") {
  const std::string root = make_temp("cli");
  const std::string cli = MOTIONSEQ_CLI_PATH;
  REQUIRE(fs::exists(cli));
  auto run = [&](const std::string& args) {
    const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WEXITSTATUS(rc);
  };

  CHECK(run("synth-data " + join(root, "raw") + " --pairs 3 --frames 16 --motion-dims 4") == 0);
  CHECK(run("prepare " + join(root, "raw") + " " + join(root, "prep") +
            " --test_fraction 0 --vq_steps 5") == 0);
  CHECK(run("") == 2);
  CHECK(run("--no-such-flag") == 2);
  CHECK(run("prepare " + join(root, "does-not-exist") + " " + join(root, "prep2")) == 3);
  CHECK(run("train-vqvae " + join(root, "missing-manifest.tsv") + " " + join(root, "run")) == 3);
  CHECK(run("prepare " + join(root, "raw") + " " + join(root, "prep3") + " --test_fraction 0.9") ==
        2);
}
