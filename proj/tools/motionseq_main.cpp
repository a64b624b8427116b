#include <cstdio>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "motionseq/config.hpp"
#include "motionseq/error.hpp"
#include "motionseq/pipeline.hpp"

namespace {

// Every config key doubles as a --key flag; flags override the --config file,
// and MOTIONSEQ_SEED overrides both.
struct ConfigOpts {
  std::string path;
  std::map<std::string, std::string> raw;
  CLI::App* cmd = nullptr;

  void attach(CLI::App* sub) {
    cmd = sub;
    sub->add_option("--config", path, "configuration file (key = value lines)");
    for (const auto& key : motionseq::config_keys())
      sub->add_option("--" + key, raw[key])
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
          ->group("Config overrides");
  }

  motionseq::PipelineConfig resolve() const {
    motionseq::PipelineConfig cfg =
        path.empty() ? motionseq::PipelineConfig{} : motionseq::load_config_file(path);
    for (const auto& [key, val] : raw)
      if (cmd->count("--" + key) > 0) motionseq::apply_override(cfg, key, val);
    motionseq::apply_env_seed(cfg);
    motionseq::validate_config(cfg);
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"music-conditioned motion generation pipeline"};
  app.require_subcommand(1);

  auto* prepare = app.add_subcommand("prepare", "pair, resample, normalize, and split a data directory");
  std::string prep_data, prep_out;
  prepare->add_option("data_dir", prep_data, "directory of motion (.motb/.csv) and music (.wav) files")
      ->required();
  prepare->add_option("out_dir", prep_out, "output directory for the manifest and aligned pairs")
      ->required();
  ConfigOpts prep_cfg;
  prep_cfg.attach(prepare);

  auto* train_vq = app.add_subcommand("train-vqvae", "train the motion tokenizer");
  std::string tvq_manifest, tvq_out, tvq_resume;
  std::uint64_t tvq_limit = 0;
  train_vq->add_option("manifest", tvq_manifest, "manifest.tsv from prepare")->required();
  train_vq->add_option("out_dir", tvq_out, "directory for checkpoints and logs")->required();
  train_vq->add_option("--resume", tvq_resume, "checkpoint to continue from");
  train_vq->add_option("--run-limit", tvq_limit, "stop after this many steps (0 = to completion)");
  ConfigOpts tvq_cfg;
  tvq_cfg.attach(train_vq);

  auto* train_dec = app.add_subcommand("train-decoder", "train the token regressor on a frozen tokenizer");
  std::string tdec_manifest, tdec_out, tdec_vq, tdec_resume;
  std::uint64_t tdec_limit = 0;
  train_dec->add_option("manifest", tdec_manifest, "manifest.tsv from prepare")->required();
  train_dec->add_option("out_dir", tdec_out, "directory for checkpoints and logs")->required();
  train_dec->add_option("--vqvae", tdec_vq, "stage-1 checkpoint used as the frozen tokenizer")
      ->required();
  train_dec->add_option("--resume", tdec_resume, "checkpoint to continue from");
  train_dec->add_option("--run-limit", tdec_limit, "stop after this many steps (0 = to completion)");
  ConfigOpts tdec_cfg;
  tdec_cfg.attach(train_dec);

  auto* generate = app.add_subcommand("generate", "generate motion conditioned on music");
  motionseq::GenerateArgs gen_args;
  bool gen_multinomial = false;
  generate->add_option("--decoder", gen_args.decoder_ckpt, "stage-2 checkpoint")->required();
  generate->add_option("--vqvae", gen_args.vqvae_ckpt, "stage-1 checkpoint")->required();
  generate->add_option("--music", gen_args.music_path, "WAV file or stored feature track (.motb)")
      ->required();
  generate->add_option("--out", gen_args.out_path, "output motion file")->required();
  generate->add_option("--seconds", gen_args.target_seconds, "target duration in seconds");
  generate->add_option("--style-label", gen_args.style_label, "style label for styled decoders");
  generate->add_flag("--multinomial", gen_multinomial, "sample from the softmax instead of argmax");
  generate->add_option("--temperature", gen_args.temperature, "multinomial softmax temperature");
  generate->add_option("--seed-token", gen_args.seed_token, "first token (-1 = uniform draw)");
  generate->add_option("--chain", gen_args.chain_segment,
                       "split the music into segments of this many tokens and chain them");
  ConfigOpts gen_cfg;
  gen_cfg.attach(generate);

  auto* evaluate = app.add_subcommand("evaluate", "compare a generated motion directory to a real one");
  motionseq::EvaluateArgs eval_args;
  evaluate->add_option("real_dir", eval_args.real_dir, "directory of reference .motb motions")
      ->required();
  evaluate->add_option("generated_dir", eval_args.generated_dir, "directory of generated .motb motions")
      ->required();
  evaluate->add_option("--music", eval_args.music_dir, "music directory for beat alignment");
  evaluate->add_option("--report", eval_args.report_path, "CSV report path");
  evaluate->add_option("--motion-embed", eval_args.motion_embed,
                       "co-embedded motion features (.motb) for retrieval metrics");
  evaluate->add_option("--text-embed", eval_args.text_embed,
                       "co-embedded text features (.motb) for retrieval metrics");
  evaluate->add_option("--div-pairs", eval_args.div_pairs, "pairs per diversity estimate");
  evaluate->add_option("--reps", eval_args.reps, "repetitions for seed-dependent metrics");
  ConfigOpts eval_cfg;
  eval_cfg.attach(evaluate);

  auto* extract = app.add_subcommand("extract-features", "write the music feature track for a WAV file");
  std::string ext_wav, ext_out;
  extract->add_option("wav", ext_wav, "input WAV file")->required();
  extract->add_option("out", ext_out, "output feature track (.motb)")->required();
  ConfigOpts ext_cfg;
  ext_cfg.attach(extract);

  auto* synth = app.add_subcommand("synth-data", "write paired synthetic motion and click tracks");
  motionseq::SynthArgs synth_args;
  synth->add_option("out_dir", synth_args.out_dir, "output directory")->required();
  synth->add_option("--pairs", synth_args.pairs, "number of motion/music pairs");
  synth->add_option("--frames", synth_args.frames, "frames per motion clip");
  synth->add_option("--motion-dims", synth_args.d_h, "motion channels");
  synth->add_option("--kind", synth_args.kind, "constant | sine-walk | pulse-dance");
  synth->add_option("--pulse-freq", synth_args.base_freq, "pulse rate in Hz; click tempo matches");
  ConfigOpts synth_cfg;
  synth_cfg.attach(synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*prepare) {
      const auto res = motionseq::cmd_prepare(prep_data, prep_out, prep_cfg.resolve());
      std::printf("prepared %zu train + %zu test clips (%zu skipped)\n%s\n", res.n_train,
                  res.n_test, res.n_skipped, res.manifest_path.c_str());
    } else if (*train_vq) {
      const auto res = motionseq::cmd_train_vqvae(tvq_manifest, tvq_out, tvq_cfg.resolve(),
                                                  tvq_resume, tvq_limit);
      std::fprintf(stderr, "ran %llu steps, final loss %g\n",
                   static_cast<unsigned long long>(res.steps_run), res.final_loss);
      std::printf("%s\n", res.checkpoint_path.c_str());
    } else if (*train_dec) {
      const auto res = motionseq::cmd_train_decoder(tdec_manifest, tdec_out, tdec_cfg.resolve(),
                                                    tdec_vq, tdec_resume, tdec_limit);
      std::fprintf(stderr, "ran %llu steps, final nll %g\n",
                   static_cast<unsigned long long>(res.steps_run), res.final_loss);
      std::printf("%s\n", res.checkpoint_path.c_str());
    } else if (*generate) {
      gen_args.greedy = !gen_multinomial;
      std::printf("%s\n", motionseq::cmd_generate(gen_args, gen_cfg.resolve()).c_str());
    } else if (*evaluate) {
      const auto rows = motionseq::cmd_evaluate(eval_args, eval_cfg.resolve());
      std::fputs(motionseq::format_metric_table(rows).c_str(), stdout);
    } else if (*extract) {
      std::printf("%s\n", motionseq::cmd_extract_features(ext_wav, ext_out, ext_cfg.resolve()).c_str());
    } else if (*synth) {
      const auto files = motionseq::cmd_synth_data(synth_args, synth_cfg.resolve());
      std::printf("wrote %zu files to %s\n", files.size(), synth_args.out_dir.c_str());
    }
  } catch (const motionseq::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const motionseq::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const motionseq::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}
