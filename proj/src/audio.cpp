#include "motionseq/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "motionseq/binio.hpp"
#include "motionseq/error.hpp"

namespace motionseq {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTau = 2.0 * kPi;

// ---------------------------------------------------------------------------
// WAV container
// ---------------------------------------------------------------------------

struct FmtChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

}  // namespace

AudioClip load_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path + ": cannot open");
  char tag[4];
  binio::get_bytes(is, tag, 4, path);
  if (std::memcmp(tag, "RIFF", 4) != 0) throw DataError(path + ": not a RIFF file");
  binio::get_le<std::uint32_t>(is, path);
  binio::get_bytes(is, tag, 4, path);
  if (std::memcmp(tag, "WAVE", 4) != 0) throw DataError(path + ": not a WAVE file");

  FmtChunk fmt;
  bool have_fmt = false;
  std::vector<char> payload;
  bool have_data = false;
  while (!have_data) {
    if (is.peek() == std::char_traits<char>::eof()) break;
    binio::get_bytes(is, tag, 4, path);
    const auto size = binio::get_le<std::uint32_t>(is, path);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (size < 16) throw DataError(path + ": fmt chunk too small");
      fmt.format = binio::get_le<std::uint16_t>(is, path);
      fmt.channels = binio::get_le<std::uint16_t>(is, path);
      fmt.sample_rate = binio::get_le<std::uint32_t>(is, path);
      binio::get_le<std::uint32_t>(is, path);  // byte rate
      binio::get_le<std::uint16_t>(is, path);  // block align
      fmt.bits = binio::get_le<std::uint16_t>(is, path);
      is.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      payload.resize(size);
      binio::get_bytes(is, payload.data(), size, path);
      have_data = true;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
      if (!is) throw DataError(path + ": truncated chunk '" + std::string(tag, 4) + "'");
    }
  }
  if (!have_fmt) throw DataError(path + ": missing fmt chunk");
  if (!have_data) throw DataError(path + ": missing data chunk");
  if (fmt.channels < 1 || fmt.channels > 2)
    throw DataError(path + ": unsupported channel count " + std::to_string(fmt.channels));
  if (fmt.sample_rate == 0) throw DataError(path + ": zero sample rate");

  const bool pcm16 = fmt.format == 1 && fmt.bits == 16;
  const bool float32 = fmt.format == 3 && fmt.bits == 32;
  if (!pcm16 && !float32)
    throw DataError(path + ": unsupported encoding (format " + std::to_string(fmt.format) + ", " +
                    std::to_string(fmt.bits) + " bits); need 16-bit PCM or 32-bit float");

  const std::size_t bytes_per = fmt.bits / 8;
  const std::size_t stride = bytes_per * fmt.channels;
  const std::size_t n = payload.size() / stride;

  AudioClip clip;
  clip.sample_rate = fmt.sample_rate;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    float acc = 0.0f;
    for (std::size_t c = 0; c < fmt.channels; ++c) {
      const char* p = payload.data() + i * stride + c * bytes_per;
      if (pcm16) {
        std::int16_t v;
        std::memcpy(&v, p, 2);
        acc += static_cast<float>(v) / 32768.0f;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        acc += v;
      }
    }
    clip.samples[i] = acc / static_cast<float>(fmt.channels);
    if (!std::isfinite(clip.samples[i])) throw DataError(path + ": non-finite sample");
  }
  return clip;
}

void write_wav(const std::string& path, const AudioClip& clip) {
  if (!(clip.sample_rate > 0)) throw ValidationError(path + ": sample rate must be positive");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(path + ": cannot open for writing");
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  binio::put_bytes(os, "RIFF", 4);
  binio::put_le<std::uint32_t>(os, 36 + data_bytes);
  binio::put_bytes(os, "WAVE", 4);
  binio::put_bytes(os, "fmt ", 4);
  binio::put_le<std::uint32_t>(os, 16);
  binio::put_le<std::uint16_t>(os, 1);
  binio::put_le<std::uint16_t>(os, 1);
  binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(clip.sample_rate));
  binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  binio::put_le<std::uint16_t>(os, 2);
  binio::put_le<std::uint16_t>(os, 16);
  binio::put_bytes(os, "data", 4);
  binio::put_le<std::uint32_t>(os, data_bytes);
  for (float s : clip.samples) {
    const long q = std::lrint(static_cast<double>(s) * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L));
    binio::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(v));
  }
  if (!os) throw DataError(path + ": write failed");
}

AudioClip resample_audio(const AudioClip& clip, double target_sr) {
  if (!(target_sr > 0)) throw ValidationError("resample_audio: target rate must be positive");
  if (clip.samples.empty() || clip.sample_rate == target_sr) {
    AudioClip out = clip;
    out.sample_rate = target_sr;
    return out;
  }
  const std::size_t n_in = clip.samples.size();
  const auto n_out =
      static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * target_sr / clip.sample_rate));
  AudioClip out;
  out.sample_rate = target_sr;
  out.samples.resize(std::max<std::size_t>(n_out, 1));
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    double src = static_cast<double>(i) * clip.sample_rate / target_sr;
    if (src > static_cast<double>(n_in - 1)) src = static_cast<double>(n_in - 1);
    const std::size_t lo = static_cast<std::size_t>(src);
    const std::size_t hi = lo + 1 < n_in ? lo + 1 : lo;
    const double w = src - static_cast<double>(lo);
    out.samples[i] = static_cast<float>((1.0 - w) * clip.samples[lo] + w * clip.samples[hi]);
  }
  return out;
}

AudioClip synth_click_track(double seconds, double sample_rate, double bpm) {
  if (!(seconds > 0) || !(sample_rate > 0) || !(bpm > 0))
    throw ValidationError("synth_click_track: seconds, rate and bpm must be positive");
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.assign(static_cast<std::size_t>(seconds * sample_rate), 0.0f);
  const double beat_step = 60.0 / bpm * sample_rate;
  const auto click_len = static_cast<std::size_t>(sample_rate * 0.01);
  for (double pos = 0.0; pos < static_cast<double>(clip.samples.size()); pos += beat_step) {
    const auto start = static_cast<std::size_t>(pos);
    for (std::size_t i = 0; i < click_len && start + i < clip.samples.size(); ++i) {
      const double t = static_cast<double>(i) / sample_rate;
      const double env = std::exp(-t * 600.0);
      clip.samples[start + i] += static_cast<float>(0.9 * env * std::sin(kTau * 1000.0 * t));
    }
  }
  for (auto& s : clip.samples) s = std::clamp(s, -1.0f, 1.0f);
  return clip;
}

// ---------------------------------------------------------------------------
// STFT
// ---------------------------------------------------------------------------

namespace {

void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j |= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -kTau / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace

Spectrogram stft(const AudioClip& clip, std::size_t window, std::size_t hop) {
  if (window == 0 || (window & (window - 1)) != 0)
    throw ValidationError("stft: window size must be a power of two");
  if (hop == 0 || hop > window) throw ValidationError("stft: need 0 < hop <= window");
  const std::size_t n = clip.samples.size();
  const std::size_t pad = window / 2;
  if (n < pad + 1)
    throw DataError("stft: clip of " + std::to_string(n) +
                    " samples is shorter than one window after padding");

  // Reflection padding (no edge duplication) around the signal.
  std::vector<double> x(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) x[i] = clip.samples[pad - i];
  for (std::size_t i = 0; i < n; ++i) x[pad + i] = clip.samples[i];
  for (std::size_t i = 0; i < pad; ++i) x[pad + n + i] = clip.samples[n - 2 - i];

  std::vector<double> hann(window);
  for (std::size_t i = 0; i < window; ++i)
    hann[i] = 0.5 * (1.0 - std::cos(kTau * static_cast<double>(i) / static_cast<double>(window)));

  Spectrogram spec;
  spec.window = window;
  spec.hop = hop;
  spec.sample_rate = clip.sample_rate;
  spec.frames = (n + hop - 1) / hop;
  spec.bins = window / 2 + 1;
  spec.data.resize(spec.frames * spec.bins);

  std::vector<std::complex<double>> buf(window);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const std::size_t start = t * hop;  // centered at start+pad in x
    for (std::size_t i = 0; i < window; ++i) buf[i] = {x[start + i] * hann[i], 0.0};
    fft_radix2(buf);
    for (std::size_t k = 0; k < spec.bins; ++k) spec.at(t, k) = buf[k];
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Feature blocks
// ---------------------------------------------------------------------------

std::vector<double> dct_ortho_matrix(std::size_t m) {
  std::vector<double> c(m * m);
  for (std::size_t j = 0; j < m; ++j) {
    const double scale = j == 0 ? std::sqrt(1.0 / static_cast<double>(m))
                                : std::sqrt(2.0 / static_cast<double>(m));
    for (std::size_t i = 0; i < m; ++i)
      c[j * m + i] =
          scale * std::cos(kPi / static_cast<double>(m) * (static_cast<double>(i) + 0.5) * static_cast<double>(j));
  }
  return c;
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

FrameMatrix mfcc(const Spectrogram& spec, std::size_t n_mels, std::size_t n_mfcc) {
  if (n_mfcc > n_mels) throw ValidationError("mfcc: cannot keep more coefficients than mel bands");
  const double mel_max = hz_to_mel(spec.sample_rate / 2.0);
  std::vector<double> hz(n_mels + 2);
  for (std::size_t i = 0; i < n_mels + 2; ++i)
    hz[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n_mels + 1));

  // filters[m][k]: triangular weight of bin k in band m
  std::vector<double> filters(n_mels * spec.bins, 0.0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = hz[m], mid = hz[m + 1], hi = hz[m + 2];
    for (std::size_t k = 0; k < spec.bins; ++k) {
      const double f = spec.bin_hz(k);
      double w = 0.0;
      if (f > lo && f < hi) w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      filters[m * spec.bins + k] = w;
    }
  }

  const auto dct = dct_ortho_matrix(n_mels);
  FrameMatrix out = make_frames(spec.frames, n_mfcc, 0.0f);
  std::vector<double> logmel(n_mels);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t m = 0; m < n_mels; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k < spec.bins; ++k) {
        const double mag = std::abs(spec.at(t, k));
        acc += filters[m * spec.bins + k] * mag * mag;
      }
      logmel[m] = std::log(std::max(acc, 1e-10));
    }
    for (std::size_t j = 0; j < n_mfcc; ++j) {
      double acc = 0.0;
      for (std::size_t m = 0; m < n_mels; ++m) acc += dct[j * n_mels + m] * logmel[m];
      out.at(t, j) = static_cast<float>(acc);
    }
  }
  return out;
}

FrameMatrix chroma(const Spectrogram& spec) {
  FrameMatrix out = make_frames(spec.frames, 12, 0.0f);
  std::vector<int> bin_pc(spec.bins, -1);
  for (std::size_t k = 0; k < spec.bins; ++k) {
    const double f = spec.bin_hz(k);
    if (f < 27.5) continue;
    const long steps = std::lround(12.0 * std::log2(f / 440.0));
    bin_pc[k] = static_cast<int>((((steps + 9) % 12) + 12) % 12);
  }
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t k = 0; k < spec.bins; ++k)
      if (bin_pc[k] >= 0) out.at(t, static_cast<std::size_t>(bin_pc[k])) += static_cast<float>(std::abs(spec.at(t, k)));
    float mx = 0.0f;
    for (std::size_t c = 0; c < 12; ++c) mx = std::max(mx, out.at(t, c));
    if (mx > 0.0f)
      for (std::size_t c = 0; c < 12; ++c) out.at(t, c) /= mx;
  }
  return out;
}

std::vector<float> onset_envelope(const Spectrogram& spec) {
  std::vector<float> env(spec.frames, 0.0f);
  for (std::size_t t = 1; t < spec.frames; ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < spec.bins; ++k) {
      const double d = std::abs(spec.at(t, k)) - std::abs(spec.at(t - 1, k));
      if (d > 0) acc += d;
    }
    env[t] = static_cast<float>(acc / static_cast<double>(spec.bins));
  }
  float mx = 0.0f;
  for (float v : env) mx = std::max(mx, v);
  if (mx > 0.0f)
    for (auto& v : env) v /= mx;
  return env;
}

BeatResult peaks_and_beats(const std::vector<float>& envelope, double fps) {
  if (!(fps > 0)) throw ValidationError("peaks_and_beats: fps must be positive");
  const std::size_t n = envelope.size();
  BeatResult res;
  res.peaks.assign(n, 0.0f);
  res.beats.assign(n, 0.0f);
  if (n == 0) return res;

  double mean = 0.0;
  for (float v : envelope) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (float v : envelope) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double thresh = mean + 0.5 * std::sqrt(var);

  for (std::size_t t = 0; t < n; ++t) {
    if (!(envelope[t] > thresh)) continue;
    bool is_peak = true;
    const std::size_t lo = t >= 3 ? t - 3 : 0;
    const std::size_t hi = std::min(n - 1, t + 3);
    for (std::size_t u = lo; u <= hi && is_peak; ++u)
      if (u != t && !(envelope[t] > envelope[u])) is_peak = false;
    if (is_peak) res.peaks[t] = 1.0f;
  }

  double emax = 0.0;
  for (float v : envelope) emax = std::max(emax, static_cast<double>(v));
  if (emax == 0.0) return res;

  // Tempo: autocorrelation peak over lags spanning 30 to 300 BPM.
  const auto lag_min = static_cast<std::size_t>(std::lround(fps / 5.0));
  const auto lag_max = std::min(static_cast<std::size_t>(std::lround(2.0 * fps)), n - 1);
  if (lag_min == 0 || lag_min > lag_max) return res;
  double best_r = -1.0;
  std::size_t period = 0;
  for (std::size_t lag = lag_min; lag <= lag_max; ++lag) {
    double r = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t)
      r += static_cast<double>(envelope[t]) * envelope[t + lag];
    if (r > best_r) {
      best_r = r;
      period = lag;
    }
  }
  if (period == 0 || best_r <= 0.0) return res;

  // Beat selection: each frame may extend a chain from roughly one period
  // back; deviations from the period cost lambda*(log ratio)^2.
  constexpr double lambda = 100.0;
  const double p = static_cast<double>(period);
  std::vector<double> score(n);
  std::vector<std::ptrdiff_t> back(n, -1);
  for (std::size_t t = 0; t < n; ++t) {
    score[t] = envelope[t];
    const auto lo = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(std::lround(2.0 * p));
    const auto hi = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(std::max(1L, std::lround(p / 2.0)));
    double best = 0.0;
    std::ptrdiff_t best_tau = -1;
    for (std::ptrdiff_t tau = std::max<std::ptrdiff_t>(lo, 0); tau <= hi; ++tau) {
      const double dev = std::log(static_cast<double>(t - tau) / p);
      const double cand = score[tau] - lambda * dev * dev;
      if (cand > best) {
        best = cand;
        best_tau = tau;
      }
    }
    if (best_tau >= 0) {
      score[t] += best;
      back[t] = best_tau;
    }
  }

  const auto tail = static_cast<std::size_t>(std::lround(2.0 * p));
  std::size_t start = n > tail ? n - tail : 0;
  std::size_t best_t = start;
  for (std::size_t t = start; t < n; ++t)
    if (score[t] > score[best_t]) best_t = t;

  std::vector<std::size_t> chain;
  for (std::ptrdiff_t t = static_cast<std::ptrdiff_t>(best_t); t >= 0; t = back[t]) {
    chain.push_back(static_cast<std::size_t>(t));
    if (back[t] < 0) break;
  }
  std::reverse(chain.begin(), chain.end());
  res.beat_frames = std::move(chain);
  for (std::size_t t : res.beat_frames) res.beats[t] = 1.0f;
  return res;
}

ConditioningTrack build_track(const AudioClip& clip, double fps, std::size_t pair_len) {
  if (!(fps > 0)) throw ValidationError("build_track: fps must be positive");
  const AudioClip work =
      clip.sample_rate == kFeatureSampleRate ? clip : resample_audio(clip, kFeatureSampleRate);
  const auto hop = static_cast<std::size_t>(std::lround(kFeatureSampleRate / fps));
  const Spectrogram spec = stft(work, kFeatureWindow, hop);

  const FrameMatrix mf = mfcc(spec);
  const FrameMatrix ch = chroma(spec);
  const std::vector<float> env = onset_envelope(spec);
  const BeatResult bb = peaks_and_beats(env, fps);

  ConditioningTrack track;
  track.source = ConditioningTrack::Source::librosa_style;
  track.features = make_frames(spec.frames, kLibrosaDim, static_cast<float>(fps));
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t j = 0; j < 20; ++j) track.features.at(t, j) = mf.at(t, j);
    for (std::size_t j = 0; j < 12; ++j) track.features.at(t, 20 + j) = ch.at(t, j);
    track.features.at(t, 32) = env[t];
    track.features.at(t, 33) = bb.peaks[t];
    track.features.at(t, 34) = bb.beats[t];
  }
  if (pair_len > 0 && pair_len != track.features.rows)
    track = align_track(track, static_cast<float>(fps), pair_len);
  return track;
}

ConditioningTrack load_precomputed(const std::string& path) {
  ConditioningTrack track;
  track.source = ConditioningTrack::Source::precomputed;
  track.features = read_motb(path);
  if (track.features.cols != kPrecomputedDim)
    throw ValidationError(path + ": precomputed features must have dimension " +
                          std::to_string(kPrecomputedDim) + ", got " + std::to_string(track.features.cols));
  if (track.features.rows == 0) throw ValidationError(path + ": empty feature track");
  if (!(track.features.fps > 0.0f)) throw ValidationError(path + ": feature track needs a frame rate");
  return track;
}

ConditioningTrack align_track(const ConditioningTrack& track, float motion_fps, std::size_t motion_len) {
  if (!(motion_fps > 0.0f)) throw ValidationError("align_track: fps must be positive");
  if (motion_len == 0) throw ValidationError("align_track: motion length must be positive");
  ConditioningTrack out = track;
  if (std::abs(out.features.fps - motion_fps) > 1e-6f * motion_fps)
    out.features = resample_frames(out.features, motion_fps);
  const std::size_t have = out.features.rows;
  if (have == motion_len) return out;
  const std::size_t delta = have > motion_len ? have - motion_len : motion_len - have;
  if (delta > 2)
    warn("align_track: adjusting track length " + std::to_string(have) + " to motion length " +
         std::to_string(motion_len));
  FrameMatrix adj = make_frames(motion_len, out.features.cols, motion_fps);
  for (std::size_t t = 0; t < motion_len; ++t) {
    const std::size_t src = std::min(t, have - 1);
    for (std::size_t j = 0; j < out.features.cols; ++j) adj.at(t, j) = out.features.at(src, j);
  }
  out.features = std::move(adj);
  return out;
}

}  // namespace motionseq
