#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "motionseq/checkpoint.hpp"
#include "motionseq/config.hpp"

namespace motionseq {

// Rebuild frozen models from their checkpoints, reading the architecture tags
// stored alongside the weights.
VqVae<float> vqvae_from_checkpoint(const ModelCheckpoint& ck);
DecoderModel<float> decoder_from_checkpoint(const ModelCheckpoint& ck);

struct PrepareResult {
  std::string manifest_path;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t n_skipped = 0;
};

// Scans data_dir for paired motion (.motb/.csv) and conditioning (.wav or
// precomputed .motb) clips, resamples motion to cfg.fps, normalizes with
// train-split statistics, and writes aligned pairs plus manifest.tsv and
// stats.motb into out_dir. Unpaired or unreadable clips are skipped with a
// warning; zero usable pairs is an error.
PrepareResult cmd_prepare(const std::string& data_dir, const std::string& out_dir,
                          const PipelineConfig& cfg);

struct TrainResult {
  std::string checkpoint_path;
  std::uint64_t steps_run = 0;
  double final_loss = 0.0;
};

// run_limit > 0 stops this invocation after that many optimizer steps while
// the schedule keeps targeting the configured total, modeling an interrupted
// run that a later resume completes.
TrainResult cmd_train_vqvae(const std::string& manifest_path, const std::string& out_dir,
                            const PipelineConfig& cfg, const std::string& resume_path = "",
                            std::uint64_t run_limit = 0);

TrainResult cmd_train_decoder(const std::string& manifest_path, const std::string& out_dir,
                              const PipelineConfig& cfg, const std::string& vqvae_ckpt,
                              const std::string& resume_path = "", std::uint64_t run_limit = 0);

struct GenerateArgs {
  std::string decoder_ckpt;
  std::string vqvae_ckpt;
  std::string music_path;  // .wav, or a feature track stored as .motb
  std::string out_path;
  double target_seconds = 8.0;
  std::string style_label;  // empty: unstyled
  bool greedy = true;
  double temperature = 1.0;
  int seed_token = -1;           // <0: sampled uniformly
  std::size_t chain_segment = 0;  // tokens per chained segment; 0: single pass
};

// Generates motion conditioned on music and writes it to args.out_path.
std::string cmd_generate(const GenerateArgs& args, const PipelineConfig& cfg);

struct EvaluateArgs {
  std::string real_dir;
  std::string generated_dir;
  std::string music_dir;     // optional: enables beat alignment
  std::string report_path;   // optional: CSV written here
  std::string motion_embed;  // optional co-embedding matrices for retrieval
  std::string text_embed;
  std::size_t div_pairs = 32;
  std::size_t reps = 20;
};

struct MetricRow {
  std::string name;
  double mean = 0.0;
  double stdev = 0.0;
  bool seeded = false;  // true: mean and spread over seeded repetitions
};

std::vector<MetricRow> cmd_evaluate(const EvaluateArgs& args, const PipelineConfig& cfg);

std::string format_metric_table(const std::vector<MetricRow>& rows);

// Extracts the 35-channel conditioning track from a WAV file.
std::string cmd_extract_features(const std::string& wav_path, const std::string& out_path,
                                 const PipelineConfig& cfg);

struct SynthArgs {
  std::string out_dir;
  std::size_t pairs = 10;
  std::size_t frames = 64;
  std::size_t d_h = 16;
  std::string kind = "pulse-dance";
  float base_freq = 2.0f;  // motion pulse rate in Hz; click tempo matches it
};

// Writes paired <name>.motb / <name>.wav clips for smoke tests and demos.
std::vector<std::string> cmd_synth_data(const SynthArgs& args, const PipelineConfig& cfg);

}  // namespace motionseq
