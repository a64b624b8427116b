#include "motionseq/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "motionseq/audio.hpp"
#include "motionseq/checkpoint.hpp"
#include "motionseq/decoder.hpp"
#include "motionseq/error.hpp"
#include "motionseq/matio.hpp"
#include "motionseq/metrics.hpp"
#include "motionseq/motion.hpp"
#include "motionseq/optim.hpp"
#include "motionseq/rng.hpp"
#include "motionseq/vqvae.hpp"

namespace motionseq {

namespace {

namespace fs = std::filesystem;

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string join_path(const std::string& dir, const std::string& leaf) {
  return (fs::path(dir) / leaf).string();
}

std::vector<std::string> sorted_files(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw DataError(dir + ": not a directory");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

struct ManifestRow {
  std::string name, split, motion, cond;
};

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "# name\tsplit\tmotion\tcond\n";
  for (const auto& r : rows)
    out << r.name << '\t' << r.split << '\t' << r.motion << '\t' << r.cond << '\n';
  if (!out) throw DataError("failed writing " + path);
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path);
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    rows.push_back({fields[0], fields[1], fields[2], fields[3]});
  }
  if (rows.empty()) throw DataError(path + ": no entries");
  return rows;
}

struct PreparedSet {
  ChannelStats stats;
  std::vector<std::string> names;
  std::vector<FrameMatrix> motions;  // normalized space
  std::vector<FrameMatrix> conds;
  std::size_t d_h = 0;
  std::size_t d_a = 0;
  float fps = 0.0f;
};

PreparedSet load_prepared(const std::string& manifest_path, const std::string& split) {
  const auto rows = read_manifest(manifest_path);
  const std::string base = fs::path(manifest_path).parent_path().string();
  PreparedSet set;
  set.stats = stats_from_frames(read_motb(join_path(base, "stats.motb")));
  for (const auto& r : rows) {
    if (r.split != split) continue;
    FrameMatrix motion = read_motb(join_path(base, r.motion));
    FrameMatrix cond = read_motb(join_path(base, r.cond));
    if (motion.rows != cond.rows)
      throw DataError(r.name + ": motion has " + std::to_string(motion.rows) +
                      " frames but conditioning has " + std::to_string(cond.rows));
    if (set.names.empty()) {
      set.d_h = motion.cols;
      set.d_a = cond.cols;
      set.fps = motion.fps;
    } else if (motion.cols != set.d_h || cond.cols != set.d_a) {
      throw DataError(r.name + ": channel width differs from the rest of the manifest");
    }
    set.names.push_back(r.name);
    set.motions.push_back(std::move(motion));
    set.conds.push_back(std::move(cond));
  }
  if (set.names.empty()) throw DataError(manifest_path + ": no '" + split + "' entries");
  return set;
}

AdamW<float>::Options adam_options(const PipelineConfig& cfg) {
  AdamW<float>::Options o;
  o.beta1 = cfg.adam_beta1;
  o.beta2 = cfg.adam_beta2;
  o.eps = cfg.adam_eps;
  o.weight_decay = cfg.weight_decay;
  return o;
}

// Prepared motions are already normalized, so quantization happens directly
// on the stored frames; tokenize() would normalize a second time.
std::vector<int> tokenize_normalized(const VqVae<float>& vq, const FrameMatrix& frames,
                                     bool append_eos) {
  Tape<float> tape;
  auto x = frames_to_tensor<float>(frames);
  auto z_e = vq.encode_latents(tape, x);
  auto [z_q, idx] = quantize(vq.codebook.entries, z_e);
  (void)z_q;
  if (append_eos) idx.push_back(eos_token(vq));
  return idx;
}

// One conditioning row per token: frame-rate rows subsampled by the tokenizer
// stride, holding the last frame for positions past the end (EOS cover).
Tensor<float> cond_at_token_rate(const FrameMatrix& cond, std::size_t n_tokens,
                                 std::size_t stride) {
  if (cond.empty()) throw ValidationError("conditioning track is empty");
  auto t = tensor<float>({n_tokens, cond.cols});
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const std::size_t src = std::min(i * stride, cond.rows - 1);
    for (std::size_t c = 0; c < cond.cols; ++c) t->value[i * cond.cols + c] = cond.at(src, c);
  }
  return t;
}

[[noreturn]] void annotate_numeric(const NumericError& e, std::uint64_t step,
                                   const std::string& last_ckpt) {
  std::string msg = std::string(e.what()) + " at step " + std::to_string(step);
  if (!last_ckpt.empty()) msg += "; last checkpoint: " + last_ckpt;
  throw NumericError(msg);
}

std::uint64_t metric_seed(std::uint64_t master, const std::string& label) {
  return derive_rng(master, label).next();
}

}  // namespace

VqVae<float> vqvae_from_checkpoint(const ModelCheckpoint& ck) {
  VqVaeConfig<float> c;
  c.d_h = ck.scalar_u64("arch.d_h");
  c.d_c = ck.scalar_u64("arch.d_c");
  c.codebook_size = ck.scalar_u64("arch.codebook_size");
  c.layers = ck.scalar_u64("arch.layers");
  c.heads = ck.scalar_u64("arch.heads");
  c.ffn_mult = ck.scalar_u64("arch.ffn_mult");
  c.stride = ck.scalar_u64("arch.stride");
  c.ema = ck.scalar_u64("arch.ema") != 0;
  c.fps = ck.require("arch.fps").f32.at(0);
  VqVae<float> model;
  model.cfg = c;
  Rng init_rng(0);
  model.init(init_rng);
  restore_vqvae(model, ck);
  return model;
}

DecoderModel<float> decoder_from_checkpoint(const ModelCheckpoint& ck) {
  DecoderConfig<float> c;
  c.codebook_size = ck.scalar_u64("arch.codebook_size");
  c.d_k = ck.scalar_u64("arch.d_k");
  c.layers = ck.scalar_u64("arch.layers");
  c.heads = ck.scalar_u64("arch.heads");
  c.ffn_mult = ck.scalar_u64("arch.ffn_mult");
  c.d_a = ck.scalar_u64("arch.d_a");
  c.d_s = ck.scalar_u64("arch.d_s");
  c.style = ck.scalar_u64("arch.style") != 0;
  c.alibi = ck.scalar_u64("arch.alibi") != 0;
  c.fps = ck.require("arch.fps").f32.at(0);
  DecoderModel<float> model;
  model.cfg = c;
  Rng init_rng(0);
  model.init(init_rng);
  restore_decoder(model, ck);
  return model;
}

PrepareResult cmd_prepare(const std::string& data_dir, const std::string& out_dir,
                          const PipelineConfig& cfg) {
  validate_config(cfg);
  const auto files = sorted_files(data_dir);

  std::map<std::string, std::string> motion_files, wav_files, pre_files;
  for (const auto& f : files) {
    if (f.ends_with(".cond.motb")) {
      pre_files[f.substr(0, f.size() - 10)] = f;
    } else if (f.ends_with(".motb") || f.ends_with(".csv")) {
      motion_files[fs::path(f).stem().string()] = f;
    } else if (f.ends_with(".wav")) {
      wav_files[fs::path(f).stem().string()] = f;
    }
  }

  struct Kept {
    std::string name;
    MotionSequence motion;
    FrameMatrix cond;
  };
  std::vector<Kept> kept;
  std::size_t skipped = 0;

  for (const auto& [stem, mfile] : motion_files) {
    const auto wav_it = wav_files.find(stem);
    const auto pre_it = pre_files.find(stem);
    if (wav_it == wav_files.end() && pre_it == pre_files.end()) {
      warn("prepare: " + mfile + " has no paired conditioning, skipped");
      ++skipped;
      continue;
    }
    try {
      MotionSequence seq = load_motion(join_path(data_dir, mfile), cfg.fps);
      seq.name = stem;
      if (std::fabs(seq.fps() - cfg.fps) > 1e-6f) seq = resample_fps(seq, cfg.fps);
      ConditioningTrack track;
      if (pre_it != pre_files.end()) {
        track = load_precomputed(join_path(data_dir, pre_it->second));
        track = align_track(track, cfg.fps, seq.length());
      } else {
        track = build_track(load_wav(join_path(data_dir, wav_it->second)), cfg.fps, seq.length());
      }
      kept.push_back({stem, std::move(seq), std::move(track.features)});
    } catch (const DataError& e) {
      warn("prepare: " + stem + ": " + std::string(e.what()) + ", skipped");
      ++skipped;
    } catch (const ValidationError& e) {
      warn("prepare: " + stem + ": " + std::string(e.what()) + ", skipped");
      ++skipped;
    }
  }
  for (const auto& [stem, f] : wav_files)
    if (!motion_files.count(stem)) {
      warn("prepare: " + f + " has no paired motion, skipped");
      ++skipped;
    }
  for (const auto& [stem, f] : pre_files)
    if (!motion_files.count(stem)) {
      warn("prepare: " + f + " has no paired motion, skipped");
      ++skipped;
    }

  if (!kept.empty()) {
    const std::size_t d_h = kept.front().motion.width();
    std::vector<Kept> uniform;
    for (auto& k : kept) {
      if (k.motion.width() != d_h) {
        warn("prepare: " + k.name + " has " + std::to_string(k.motion.width()) +
             " channels, expected " + std::to_string(d_h) + ", skipped");
        ++skipped;
        continue;
      }
      uniform.push_back(std::move(k));
    }
    kept = std::move(uniform);
  }
  if (kept.empty())
    throw DataError("prepare: no usable motion/conditioning pairs in " + data_dir);

  const std::size_t n = kept.size();
  std::size_t n_test = 0;
  if (n >= 2 && cfg.test_fraction > 0.0f) {
    n_test = static_cast<std::size_t>(static_cast<double>(n) * cfg.test_fraction);
    n_test = std::max<std::size_t>(n_test, 1);
    n_test = std::min(n_test, n - 1);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = derive_rng(cfg.seed, "split");
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
  std::vector<std::string> split_of(n, "train");
  for (std::size_t i = 0; i < n_test; ++i) split_of[order[i]] = "test";

  std::vector<MotionSequence> train_seqs;
  for (std::size_t i = 0; i < n; ++i)
    if (split_of[i] == "train") train_seqs.push_back(kept[i].motion);
  const ChannelStats stats = compute_stats(train_seqs);

  fs::create_directories(out_dir);
  write_motb(join_path(out_dir, "stats.motb"), stats_to_frames(stats, cfg.fps));
  std::vector<ManifestRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const MotionSequence normed = normalize(kept[i].motion, stats);
    const std::string mrel = kept[i].name + ".motion.motb";
    const std::string crel = kept[i].name + ".cond.motb";
    write_motb(join_path(out_dir, mrel), normed.frames);
    FrameMatrix cond = std::move(kept[i].cond);
    cond.fps = cfg.fps;
    write_motb(join_path(out_dir, crel), cond);
    rows.push_back({kept[i].name, split_of[i], mrel, crel});
  }

  PrepareResult res;
  res.manifest_path = join_path(out_dir, "manifest.tsv");
  write_manifest(res.manifest_path, rows);
  res.n_train = n - n_test;
  res.n_test = n_test;
  res.n_skipped = skipped;
  return res;
}

TrainResult cmd_train_vqvae(const std::string& manifest_path, const std::string& out_dir,
                            const PipelineConfig& cfg, const std::string& resume_path,
                            std::uint64_t run_limit) {
  validate_config(cfg);
  const PreparedSet set = load_prepared(manifest_path, "train");
  if (std::fabs(set.fps - cfg.fps) > 1e-4f)
    throw ValidationError("train-vqvae: manifest data is at " + fmt_g(set.fps) +
                          " fps, config expects " + fmt_g(cfg.fps));

  VqVaeConfig<float> vc;
  vc.d_h = set.d_h;
  vc.d_c = cfg.d_c;
  vc.codebook_size = cfg.codebook_size;
  vc.layers = cfg.vq_layers;
  vc.heads = cfg.vq_heads;
  vc.ffn_mult = cfg.vq_ffn_mult;
  vc.stride = cfg.stride;
  vc.beta = cfg.beta;
  vc.ema = cfg.vq_ema;
  vc.ema_decay = cfg.ema_decay;
  vc.restarts = cfg.vq_restarts;
  vc.stale_after = cfg.restart_stale_after;
  vc.kmeans = cfg.vq_kmeans;
  vc.kmeans_iters = cfg.kmeans_iters;
  vc.fps = cfg.fps;

  VqVae<float> model;
  model.cfg = vc;
  Rng init_rng = derive_rng(cfg.seed, "vqvae-init");
  model.init(init_rng);
  model.norm = set.stats;

  std::vector<Tensor<float>> clips;
  clips.reserve(set.motions.size());
  for (const auto& m : set.motions) clips.push_back(frames_to_tensor<float>(m));

  AdamW<float> opt(model.trainable_params(), adam_options(cfg));
  Rng rng = derive_rng(cfg.seed, "train-vqvae");
  std::uint64_t step = 0;

  if (!resume_path.empty()) {
    const ModelCheckpoint ck = load_checkpoint(resume_path);
    restore_vqvae(model, ck);
    unpack_optimizer(ck, opt);
    unpack_train_state(ck, step, rng);
  } else if (vc.kmeans) {
    std::vector<float> pooled;
    std::size_t rows = 0;
    for (const auto& clip : clips) {
      Tape<float> tape;
      auto z = model.encode_latents(tape, clip);
      pooled.insert(pooled.end(), z->value.begin(), z->value.end());
      rows += z->shape[0];
    }
    auto latents = tensor<float>({rows, vc.d_c});
    latents->value = std::move(pooled);
    kmeans_init(model.codebook, latents, vc.kmeans_iters, rng);
  }

  fs::create_directories(out_dir);
  const std::string latest_path = join_path(out_dir, "vqvae_latest.mseq");
  const std::string final_path = join_path(out_dir, "vqvae_final.mseq");
  const std::string config_text = render_config(cfg);

  auto save_state = [&](const std::string& path, std::uint64_t at_step) {
    ModelCheckpoint ck = snapshot_vqvae(model, config_text);
    pack_optimizer(ck, opt);
    pack_train_state(ck, at_step, rng);
    save_checkpoint(path, ck);
  };

  const std::string log_path = join_path(out_dir, "vqvae_log.csv");
  std::ofstream log(log_path, step == 0 ? std::ios::binary | std::ios::trunc
                                        : std::ios::binary | std::ios::app);
  if (!log) throw DataError("cannot write " + log_path);
  if (step == 0) log << "step,lr,total,recon,codebook,commit,usage,perplexity\n";

  TrainResult res;
  std::string last_ckpt = resume_path;
  while (step < cfg.vq_steps) {
    if (run_limit > 0 && res.steps_run == run_limit) break;
    const float lr = cosine_warmup_lr<float>(step, cfg.vq_lr, cfg.warmup_steps, cfg.vq_steps);
    std::vector<Tensor<float>> batch;
    batch.reserve(cfg.vq_batch);
    for (std::size_t b = 0; b < cfg.vq_batch; ++b)
      batch.push_back(clips[rng.below(clips.size())]);
    VqStepStats<float> st;
    try {
      st = vqvae_train_step(model, opt, batch, lr, rng);
    } catch (const NumericError& e) {
      annotate_numeric(e, step + 1, last_ckpt);
    }
    ++step;
    ++res.steps_run;
    res.final_loss = st.total;
    if (cfg.log_every > 0 && step % cfg.log_every == 0)
      log << step << ',' << fmt_g(lr) << ',' << fmt_g(st.total) << ',' << fmt_g(st.recon) << ','
          << fmt_g(st.codebook) << ',' << fmt_g(st.commit) << ',' << fmt_g(st.usage) << ','
          << fmt_g(st.perplexity) << '\n';
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      save_state(latest_path, step);
      last_ckpt = latest_path;
    }
  }

  if (step >= cfg.vq_steps) {
    save_state(final_path, step);
    res.checkpoint_path = final_path;
  } else {
    save_state(latest_path, step);
    res.checkpoint_path = latest_path;
  }
  return res;
}

TrainResult cmd_train_decoder(const std::string& manifest_path, const std::string& out_dir,
                              const PipelineConfig& cfg, const std::string& vqvae_ckpt,
                              const std::string& resume_path, std::uint64_t run_limit) {
  validate_config(cfg);
  const PreparedSet set = load_prepared(manifest_path, "train");
  const VqVae<float> vq = vqvae_from_checkpoint(load_checkpoint(vqvae_ckpt));
  if (vq.cfg.codebook_size != cfg.codebook_size)
    throw ValidationError("train-decoder: codebook_size is " + std::to_string(cfg.codebook_size) +
                          " but the tokenizer checkpoint has " +
                          std::to_string(vq.cfg.codebook_size) + " entries");
  if (vq.cfg.d_h != set.d_h)
    throw ValidationError("train-decoder: manifest motion has " + std::to_string(set.d_h) +
                          " channels, tokenizer expects " + std::to_string(vq.cfg.d_h));
  if (std::fabs(set.fps - vq.cfg.fps) > 1e-4f)
    throw ValidationError("train-decoder: manifest data is at " + fmt_g(set.fps) +
                          " fps, tokenizer was trained at " + fmt_g(vq.cfg.fps));
  if (set.d_a != cfg.d_a)
    throw ValidationError("train-decoder: conditioning has " + std::to_string(set.d_a) +
                          " channels, d_a is " + std::to_string(cfg.d_a));

  std::vector<DecoderExample<float>> examples;
  examples.reserve(set.names.size());
  for (std::size_t i = 0; i < set.names.size(); ++i) {
    DecoderExample<float> ex;
    ex.tokens = tokenize_normalized(vq, set.motions[i], cfg.append_eos);
    ex.cond = cond_at_token_rate(set.conds[i], ex.tokens.size(), vq.cfg.stride);
    if (cfg.style) ex.style = frames_to_tensor<float>(embed_style_label(set.names[i], cfg.d_s));
    examples.push_back(std::move(ex));
  }

  DecoderConfig<float> dc;
  dc.codebook_size = cfg.codebook_size;
  dc.d_k = cfg.d_k;
  dc.layers = cfg.dec_layers;
  dc.heads = cfg.dec_heads;
  dc.ffn_mult = cfg.dec_ffn_mult;
  dc.d_a = cfg.d_a;
  dc.d_s = cfg.d_s;
  dc.style = cfg.style;
  dc.alibi = cfg.alibi;
  dc.fps = vq.cfg.fps;

  DecoderModel<float> model;
  model.cfg = dc;
  Rng init_rng = derive_rng(cfg.seed, "decoder-init");
  model.init(init_rng);

  AdamW<float> opt(model.params(), adam_options(cfg));
  Rng rng = derive_rng(cfg.seed, "train-decoder");
  std::uint64_t step = 0;

  if (!resume_path.empty()) {
    const ModelCheckpoint ck = load_checkpoint(resume_path);
    restore_decoder(model, ck);
    unpack_optimizer(ck, opt);
    unpack_train_state(ck, step, rng);
  }

  fs::create_directories(out_dir);
  const std::string latest_path = join_path(out_dir, "decoder_latest.mseq");
  const std::string final_path = join_path(out_dir, "decoder_final.mseq");
  const std::string config_text = render_config(cfg);

  auto save_state = [&](const std::string& path, std::uint64_t at_step) {
    ModelCheckpoint ck = snapshot_decoder(model, config_text);
    pack_optimizer(ck, opt);
    pack_train_state(ck, at_step, rng);
    save_checkpoint(path, ck);
  };

  const std::string log_path = join_path(out_dir, "decoder_log.csv");
  std::ofstream log(log_path, step == 0 ? std::ios::binary | std::ios::trunc
                                        : std::ios::binary | std::ios::app);
  if (!log) throw DataError("cannot write " + log_path);
  if (step == 0) log << "step,lr,nll,accuracy\n";

  TrainResult res;
  std::string last_ckpt = resume_path;
  while (step < cfg.dec_steps) {
    if (run_limit > 0 && res.steps_run == run_limit) break;
    const float lr = cosine_warmup_lr<float>(step, cfg.dec_lr, cfg.warmup_steps, cfg.dec_steps);
    std::vector<DecoderExample<float>> batch;
    batch.reserve(cfg.dec_batch);
    for (std::size_t b = 0; b < cfg.dec_batch; ++b)
      batch.push_back(examples[rng.below(examples.size())]);
    DecoderStepStats<float> st;
    try {
      st = decoder_train_step(model, opt, batch, lr);
    } catch (const NumericError& e) {
      annotate_numeric(e, step + 1, last_ckpt);
    }
    ++step;
    ++res.steps_run;
    res.final_loss = st.nll;
    if (cfg.log_every > 0 && step % cfg.log_every == 0)
      log << step << ',' << fmt_g(lr) << ',' << fmt_g(st.nll) << ',' << fmt_g(st.accuracy) << '\n';
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      save_state(latest_path, step);
      last_ckpt = latest_path;
    }
  }

  if (step >= cfg.dec_steps) {
    save_state(final_path, step);
    res.checkpoint_path = final_path;
  } else {
    save_state(latest_path, step);
    res.checkpoint_path = latest_path;
  }
  return res;
}

std::string cmd_generate(const GenerateArgs& args, const PipelineConfig& cfg) {
  if (args.target_seconds <= 0.0)
    throw ValidationError("generate: target_seconds must be positive");
  const VqVae<float> vq = vqvae_from_checkpoint(load_checkpoint(args.vqvae_ckpt));
  const DecoderModel<float> dec = decoder_from_checkpoint(load_checkpoint(args.decoder_ckpt));
  if (dec.cfg.codebook_size != vq.cfg.codebook_size)
    throw ValidationError("generate: decoder vocabulary " +
                          std::to_string(dec.cfg.codebook_size) +
                          " does not match tokenizer codebook " +
                          std::to_string(vq.cfg.codebook_size));

  const float fps = vq.cfg.fps;
  ConditioningTrack track;
  if (args.music_path.ends_with(".wav")) {
    track = build_track(load_wav(args.music_path), fps);
  } else {
    track.features = read_motb(args.music_path);
    if (track.features.empty())
      throw ValidationError(args.music_path + ": empty feature track");
    if (!(track.features.fps > 0.0f))
      throw ValidationError(args.music_path + ": feature track needs a frame rate");
    if (std::fabs(track.features.fps - fps) > 1e-4f)
      track.features = resample_frames(track.features, fps);
  }
  if (track.features.cols != dec.cfg.d_a)
    throw ValidationError("generate: conditioning has " + std::to_string(track.features.cols) +
                          " channels, decoder expects " + std::to_string(dec.cfg.d_a));

  const std::size_t target_frames =
      static_cast<std::size_t>(std::llround(args.target_seconds * static_cast<double>(fps)));
  if (target_frames == 0) throw ValidationError("generate: target length rounds to zero frames");
  const std::size_t stride = vq.cfg.stride;
  const std::size_t n_tokens = (target_frames + stride - 1) / stride;
  if (track.features.rows < target_frames)
    warn("generate: music covers " + std::to_string(track.features.rows) + " frames, target is " +
         std::to_string(target_frames) + "; holding the last frame");
  auto cond = cond_at_token_rate(track.features, n_tokens, stride);

  Tensor<float> style;
  if (dec.cfg.style) {
    if (args.style_label.empty())
      throw ValidationError("generate: this decoder needs a style label");
    style = frames_to_tensor<float>(embed_style_label(args.style_label, dec.cfg.d_s));
  } else if (!args.style_label.empty()) {
    throw ValidationError("generate: this decoder was built without style support");
  }
  const Tensor<float>* style_ptr = dec.cfg.style ? &style : nullptr;

  SamplerSpec sampler;
  sampler.greedy = args.greedy;
  sampler.temperature = args.temperature;
  Rng rng = derive_rng(cfg.seed, "generate");

  TokenSequence tokens;
  if (args.chain_segment > 0) {
    const std::size_t seg = args.chain_segment;
    std::vector<Tensor<float>> cond_list;
    for (std::size_t s = 0; s * seg < n_tokens; ++s) {
      const std::size_t lo = s * seg;
      const std::size_t hi = std::min(lo + seg, n_tokens);
      auto part = tensor<float>({hi - lo, dec.cfg.d_a});
      std::copy(cond->value.begin() + lo * dec.cfg.d_a, cond->value.begin() + hi * dec.cfg.d_a,
                part->value.begin());
      cond_list.push_back(part);
    }
    tokens = chain_generate(dec, cond_list, style_ptr, seg, sampler, rng, args.seed_token);
    if (tokens.size() > n_tokens) tokens.resize(n_tokens);
  } else {
    GenerateOptions opts;
    opts.target_len = n_tokens;
    opts.sampler = sampler;
    opts.seed_token = args.seed_token;
    tokens = generate(dec, cond, style_ptr, opts, rng);
  }

  MotionSequence motion = detokenize(vq, tokens, fs::path(args.out_path).stem().string());
  if (motion.frames.rows > target_frames) {
    motion.frames.data.resize(target_frames * motion.frames.cols);
    motion.frames.rows = target_frames;
  }
  const fs::path parent = fs::path(args.out_path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_motb(args.out_path, motion.frames);
  return args.out_path;
}

namespace {

std::vector<MotionSequence> load_motion_dir(const std::string& dir, float fallback_fps) {
  std::vector<MotionSequence> seqs;
  for (const auto& f : sorted_files(dir)) {
    if (!f.ends_with(".motb")) continue;
    MotionSequence seq;
    seq.name = f.substr(0, f.size() - 5);
    seq.frames = read_motb(join_path(dir, f));
    if (seq.frames.fps <= 0.0f) {
      warn("evaluate: " + f + " carries no frame rate, assuming " + fmt_g(fallback_fps));
      seq.frames.fps = fallback_fps;
    }
    seqs.push_back(std::move(seq));
  }
  if (seqs.size() < 2)
    throw ValidationError(dir + ": evaluation needs at least 2 motion clips, found " +
                          std::to_string(seqs.size()));
  for (const auto& s : seqs)
    if (s.width() != seqs.front().width())
      throw ValidationError(dir + ": " + s.name + " has " + std::to_string(s.width()) +
                            " channels, expected " + std::to_string(seqs.front().width()));
  return seqs;
}

// Music beats as frame indices at the motion rate, from a WAV or a stored
// 35-channel track (one-hot beat channel).
std::vector<std::size_t> music_beat_frames(const std::string& path, float fps) {
  FrameMatrix feats;
  if (path.ends_with(".wav")) {
    feats = build_track(load_wav(path), fps).features;
  } else {
    feats = read_motb(path);
    if (feats.cols != kLibrosaDim)
      throw DataError(path + ": expected a " + std::to_string(kLibrosaDim) +
                      "-channel feature track, found " + std::to_string(feats.cols));
    if (feats.fps > 0.0f && std::fabs(feats.fps - fps) > 1e-4f)
      throw DataError(path + ": track is at " + fmt_g(feats.fps) + " fps, motions are at " +
                      fmt_g(fps));
  }
  std::vector<std::size_t> beats;
  for (std::size_t t = 0; t < feats.rows; ++t)
    if (feats.at(t, kLibrosaDim - 1) > 0.5f) beats.push_back(t);
  return beats;
}

void append_seeded(std::vector<MetricRow>& rows, const std::string& name, const RepeatedMetric& m) {
  rows.push_back({name, m.mean, m.stdev, true});
}

}  // namespace

std::vector<MetricRow> cmd_evaluate(const EvaluateArgs& args, const PipelineConfig& cfg) {
  if (args.reps == 0) throw ValidationError("evaluate: reps must be positive");
  if (args.div_pairs == 0) throw ValidationError("evaluate: div_pairs must be positive");
  const auto real = load_motion_dir(args.real_dir, cfg.fps);
  const auto gen = load_motion_dir(args.generated_dir, cfg.fps);
  if (real.front().width() != gen.front().width())
    throw ValidationError("evaluate: real motions have " + std::to_string(real.front().width()) +
                          " channels, generated have " + std::to_string(gen.front().width()));

  const std::size_t d_h = real.front().width();
  const bool joint_mode = d_h % 3 == 0 && d_h >= 6;

  const FeatureSet kin_real = kinetic_feature_set(real);
  const FeatureSet kin_gen = kinetic_feature_set(gen);
  const FeatureSet geo_real = geometric_feature_set(real, joint_mode);
  const FeatureSet geo_gen = geometric_feature_set(gen, joint_mode);

  std::vector<MetricRow> rows;
  rows.push_back({"fid_k", fid(gaussian_summary(kin_real), gaussian_summary(kin_gen)), 0.0, false});
  rows.push_back({"fid_g", fid(gaussian_summary(geo_real), gaussian_summary(geo_gen)), 0.0, false});

  auto div_of = [&](const FeatureSet& fs, const std::string& label) {
    return repeat_metric(args.reps, metric_seed(cfg.seed, label),
                         [&](std::uint64_t s) { return diversity(fs, args.div_pairs, s); });
  };
  const RepeatedMetric div_k_real = div_of(kin_real, "dist_k");
  const RepeatedMetric div_k_gen = div_of(kin_gen, "dist_k");
  const RepeatedMetric div_g_real = div_of(geo_real, "dist_g");
  const RepeatedMetric div_g_gen = div_of(geo_gen, "dist_g");
  append_seeded(rows, "dist_k_real", div_k_real);
  append_seeded(rows, "dist_k_gen", div_k_gen);
  rows.push_back({"dist_k_ratio", div_k_gen.mean / div_k_real.mean, 0.0, false});
  append_seeded(rows, "dist_g_real", div_g_real);
  append_seeded(rows, "dist_g_gen", div_g_gen);
  rows.push_back({"dist_g_ratio", div_g_gen.mean / div_g_real.mean, 0.0, false});

  if (!args.music_dir.empty()) {
    std::map<std::string, std::string> music;
    const auto files = sorted_files(args.music_dir);
    auto claim = [&](std::size_t suffix_len, const char* suffix) {
      for (const auto& f : files)
        if (f.ends_with(suffix) && !(suffix_len == 5 && f.ends_with(".cond.motb"))) {
          const std::string stem = f.substr(0, f.size() - suffix_len);
          if (!music.count(stem)) music[stem] = f;
        }
    };
    claim(4, ".wav");
    claim(10, ".cond.motb");
    claim(5, ".motb");
    double total = 0.0;
    std::size_t counted = 0;
    for (const auto& seq : gen) {
      const auto it = music.find(seq.name);
      if (it == music.end()) {
        warn("evaluate: no music found for " + seq.name + ", left out of beat alignment");
        continue;
      }
      const auto beats = music_beat_frames(join_path(args.music_dir, it->second), seq.fps());
      total += beat_alignment(kinematic_beats(seq), beats, seq.fps());
      ++counted;
    }
    if (counted == 0) {
      warn("evaluate: no generated clip had matching music; beat alignment skipped");
    } else {
      rows.push_back({"beat_align", total / static_cast<double>(counted), 0.0, false});
    }
  }

  if (!args.motion_embed.empty() || !args.text_embed.empty()) {
    if (args.motion_embed.empty() || args.text_embed.empty())
      throw ValidationError("evaluate: retrieval needs both motion_embed and text_embed");
    const FeatureSet mf =
        feature_set_from_frames(read_motb(args.motion_embed), ExtractorTag::kExternal);
    const FeatureSet tf =
        feature_set_from_frames(read_motb(args.text_embed), ExtractorTag::kExternal);
    for (std::size_t top = 1; top <= 3; ++top) {
      const std::string name = "r_precision_top" + std::to_string(top);
      append_seeded(rows, name,
                    repeat_metric(args.reps, metric_seed(cfg.seed, name),
                                  [&](std::uint64_t s) { return r_precision(mf, tf, top, s); }));
    }
    rows.push_back({"mm_dist", multimodal_distance(mf, tf), 0.0, false});
  }

  if (!args.report_path.empty()) {
    const fs::path parent = fs::path(args.report_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream out(args.report_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + args.report_path);
    out << "metric,mean,std\n";
    for (const auto& r : rows) {
      out << r.name << ',' << fmt_g(r.mean) << ',';
      if (r.seeded) out << fmt_g(r.stdev);
      out << '\n';
    }
    if (!out) throw DataError("failed writing " + args.report_path);
  }
  return rows;
}

std::string format_metric_table(const std::vector<MetricRow>& rows) {
  std::size_t name_w = 6;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  std::string out;
  for (const auto& r : rows) {
    out += r.name;
    out.append(name_w - r.name.size() + 2, ' ');
    out += fmt_g(r.mean);
    if (r.seeded) {
      out += " +- ";
      out += fmt_g(r.stdev);
    }
    out += '\n';
  }
  return out;
}

std::string cmd_extract_features(const std::string& wav_path, const std::string& out_path,
                                 const PipelineConfig& cfg) {
  validate_config(cfg);
  const ConditioningTrack track = build_track(load_wav(wav_path), cfg.fps);
  const fs::path parent = fs::path(out_path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_motb(out_path, track.features);
  return out_path;
}

std::vector<std::string> cmd_synth_data(const SynthArgs& args, const PipelineConfig& cfg) {
  validate_config(cfg);
  if (args.pairs == 0) throw ValidationError("synth-data: pairs must be positive");
  if (args.frames < 2) throw ValidationError("synth-data: need at least 2 frames");
  fs::create_directories(args.out_dir);
  const double seconds = static_cast<double>(args.frames) / static_cast<double>(cfg.fps);
  const double bpm = static_cast<double>(args.base_freq) * 60.0;
  std::vector<std::string> written;
  for (std::size_t i = 0; i < args.pairs; ++i) {
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "%02zu", i + 1);
    const std::string name = args.kind + "_" + suffix;
    const std::uint64_t clip_seed = derive_rng(cfg.seed, name).next();
    const MotionSequence seq =
        synth_motion(args.kind, args.frames, args.d_h, cfg.fps, args.base_freq, clip_seed);
    const std::string motion_path = join_path(args.out_dir, name + ".motb");
    write_motb(motion_path, seq.frames);
    const AudioClip clip = synth_click_track(seconds, kFeatureSampleRate, bpm);
    const std::string wav_path = join_path(args.out_dir, name + ".wav");
    write_wav(wav_path, clip);
    written.push_back(motion_path);
    written.push_back(wav_path);
  }
  return written;
}

}  // namespace motionseq
