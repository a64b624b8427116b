#pragma once

#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "motionseq/matio.hpp"

namespace motionseq {

// Mono audio in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  double sample_rate = 0.0;

  double seconds() const { return sample_rate > 0 ? samples.size() / sample_rate : 0.0; }
};

// Half-spectrum STFT frames: frames x bins complex, bins = window/2 + 1.
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t window = 0;
  std::size_t hop = 0;
  double sample_rate = 0.0;
  std::vector<std::complex<double>> data;

  std::complex<double>& at(std::size_t t, std::size_t k) { return data[t * bins + k]; }
  const std::complex<double>& at(std::size_t t, std::size_t k) const { return data[t * bins + k]; }
  double bin_hz(std::size_t k) const { return static_cast<double>(k) * sample_rate / window; }
};

// Per-frame music conditioning. Librosa-style columns, fixed layout:
// [0..20) MFCC, [20..32) chroma, [32] onset envelope, [33] peak one-hot,
// [34] beat one-hot. Precomputed tracks are opaque 128-dim embeddings.
struct ConditioningTrack {
  enum class Source { librosa_style, precomputed };
  FrameMatrix features;
  Source source = Source::librosa_style;
};

inline constexpr std::size_t kLibrosaDim = 35;
inline constexpr std::size_t kPrecomputedDim = 128;
inline constexpr double kFeatureSampleRate = 16000.0;
inline constexpr std::size_t kFeatureWindow = 1024;

AudioClip load_wav(const std::string& path);
void write_wav(const std::string& path, const AudioClip& clip);

AudioClip resample_audio(const AudioClip& clip, double target_sr);

// Metronome-style test signal: short decaying clicks every 60/bpm seconds.
AudioClip synth_click_track(double seconds, double sample_rate, double bpm);

Spectrogram stft(const AudioClip& clip, std::size_t window, std::size_t hop);

// Orthonormal DCT-II matrix, row-major m x m; row j holds basis vector j.
std::vector<double> dct_ortho_matrix(std::size_t m);

FrameMatrix mfcc(const Spectrogram& spec, std::size_t n_mels = 40, std::size_t n_mfcc = 20);
FrameMatrix chroma(const Spectrogram& spec);
std::vector<float> onset_envelope(const Spectrogram& spec);

struct BeatResult {
  std::vector<float> peaks;  // one-hot
  std::vector<float> beats;  // one-hot
  std::vector<std::size_t> beat_frames;
};

BeatResult peaks_and_beats(const std::vector<float>& envelope, double fps);

// Full feature stack at the motion frame rate. pair_len > 0 trims or
// edge-pads the result to exactly that many frames.
ConditioningTrack build_track(const AudioClip& clip, double fps, std::size_t pair_len = 0);

ConditioningTrack load_precomputed(const std::string& path);

// Matches a track to a paired motion's rate and length (linear resample,
// then trim or edge-hold).
ConditioningTrack align_track(const ConditioningTrack& track, float motion_fps, std::size_t motion_len);

}  // namespace motionseq
