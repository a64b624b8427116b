#include "motionseq/motion.hpp"

#include <cmath>

#include "motionseq/error.hpp"
#include "motionseq/rng.hpp"

namespace motionseq {

namespace {

std::string stem_of(const std::string& path) {
  const std::size_t slash = path.find_last_of('/');
  const std::size_t start = slash == std::string::npos ? 0 : slash + 1;
  const std::size_t dot = path.find_last_of('.');
  const std::size_t end = (dot == std::string::npos || dot < start) ? path.size() : dot;
  return path.substr(start, end - start);
}

void validate_motion(const MotionSequence& seq, const std::string& ctx) {
  if (seq.frames.rows == 0) throw ValidationError(ctx + ": motion must have at least one frame");
  if (seq.frames.cols == 0) throw ValidationError(ctx + ": motion must have at least one channel");
  if (!(seq.frames.fps > 0.0f)) throw ValidationError(ctx + ": fps must be positive");
  for (float v : seq.frames.data)
    if (!std::isfinite(v)) throw ValidationError(ctx + ": non-finite value in frames");
}

constexpr float kStdFloor = 1e-8f;

}  // namespace

MotionSequence load_motion(const std::string& path, float csv_fps) {
  MotionSequence seq;
  seq.name = stem_of(path);
  seq.frames = read_frames(path, csv_fps);
  validate_motion(seq, path);
  return seq;
}

void save_motion(const std::string& path, const MotionSequence& seq) {
  validate_motion(seq, path);
  write_motb(path, seq.frames);
}

MotionSequence resample_fps(const MotionSequence& seq, float target_fps) {
  validate_motion(seq, "resample_fps");
  MotionSequence out;
  out.name = seq.name;
  out.frames = resample_frames(seq.frames, target_fps);
  return out;
}

ChannelStats compute_stats(const std::vector<MotionSequence>& seqs) {
  if (seqs.empty()) throw ValidationError("compute_stats: no sequences");
  const std::size_t d = seqs[0].frames.cols;
  std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
  std::size_t n = 0;
  for (const auto& s : seqs) {
    if (s.frames.cols != d)
      throw ValidationError("compute_stats: channel count mismatch in '" + s.name + "'");
    for (std::size_t t = 0; t < s.frames.rows; ++t)
      for (std::size_t j = 0; j < d; ++j) {
        const double v = s.frames.at(t, j);
        sum[j] += v;
        sumsq[j] += v * v;
      }
    n += s.frames.rows;
  }
  ChannelStats st;
  st.mean.resize(d);
  st.stdev.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double m = sum[j] / static_cast<double>(n);
    double var = sumsq[j] / static_cast<double>(n) - m * m;
    if (var < 0.0) var = 0.0;
    st.mean[j] = static_cast<float>(m);
    st.stdev[j] = std::max(static_cast<float>(std::sqrt(var)), kStdFloor);
  }
  return st;
}

namespace {

MotionSequence apply_stats(const MotionSequence& seq, const ChannelStats& stats, bool forward) {
  const std::size_t d = seq.frames.cols;
  if (stats.mean.size() != d || stats.stdev.size() != d)
    throw ValidationError("normalize: stats dimension " + std::to_string(stats.mean.size()) +
                          " does not match motion channels " + std::to_string(d));
  MotionSequence out = seq;
  for (std::size_t t = 0; t < seq.frames.rows; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      const float sd = std::max(stats.stdev[j], kStdFloor);
      out.frames.at(t, j) = forward ? (seq.frames.at(t, j) - stats.mean[j]) / sd
                                    : seq.frames.at(t, j) * sd + stats.mean[j];
    }
  return out;
}

}  // namespace

MotionSequence normalize(const MotionSequence& seq, const ChannelStats& stats) {
  return apply_stats(seq, stats, true);
}

MotionSequence denormalize(const MotionSequence& seq, const ChannelStats& stats) {
  return apply_stats(seq, stats, false);
}

FrameMatrix stats_to_frames(const ChannelStats& stats, float fps) {
  FrameMatrix m = make_frames(2, stats.mean.size(), fps);
  for (std::size_t j = 0; j < stats.mean.size(); ++j) {
    m.at(0, j) = stats.mean[j];
    m.at(1, j) = stats.stdev[j];
  }
  return m;
}

ChannelStats stats_from_frames(const FrameMatrix& m) {
  if (m.rows != 2) throw DataError("stats: expected 2 rows (mean, std), got " + std::to_string(m.rows));
  ChannelStats st;
  st.mean.assign(m.data.begin(), m.data.begin() + static_cast<std::ptrdiff_t>(m.cols));
  st.stdev.assign(m.data.begin() + static_cast<std::ptrdiff_t>(m.cols), m.data.end());
  for (float& s : st.stdev) s = std::max(s, kStdFloor);
  return st;
}

MotionSequence synth_motion(const std::string& kind, std::size_t t_frames, std::size_t d_h, float fps,
                            float base_freq, std::uint64_t seed) {
  if (t_frames == 0) throw ValidationError("synth_motion: need at least one frame");
  if (d_h == 0) throw ValidationError("synth_motion: need at least one channel");
  if (!(fps > 0.0f)) throw ValidationError("synth_motion: fps must be positive");
  Rng rng(seed);

  MotionSequence seq;
  seq.name = kind + "-" + std::to_string(seed);
  seq.frames = make_frames(t_frames, d_h, fps);

  if (kind == "constant") {
    std::vector<float> pose(d_h);
    for (auto& v : pose) v = static_cast<float>(2.0 * rng.uniform() - 1.0);
    for (std::size_t t = 0; t < t_frames; ++t)
      for (std::size_t j = 0; j < d_h; ++j) seq.frames.at(t, j) = pose[j];
    return seq;
  }

  if (kind == "sine-walk") {
    if (!(base_freq > 0.0f)) throw ValidationError("synth_motion: base_freq must be positive");
    constexpr double tau = 6.283185307179586476925286766559;
    for (std::size_t j = 0; j < d_h; ++j) {
      const double f1 = base_freq * (0.5 + rng.uniform());
      const double f2 = base_freq * (1.5 + rng.uniform());
      double a1 = 0.3 + 0.7 * rng.uniform();
      double a2 = 0.3 + 0.7 * rng.uniform();
      const double total = a1 + a2;
      if (total > 2.0) {
        a1 *= 2.0 / total;
        a2 *= 2.0 / total;
      }
      const double p1 = tau * rng.uniform();
      const double p2 = tau * rng.uniform();
      for (std::size_t t = 0; t < t_frames; ++t) {
        const double sec = static_cast<double>(t) / fps;
        seq.frames.at(t, j) =
            static_cast<float>(a1 * std::sin(tau * f1 * sec + p1) + a2 * std::sin(tau * f2 * sec + p2));
      }
    }
    return seq;
  }

  if (kind == "pulse-dance") {
    if (!(base_freq > 0.0f)) throw ValidationError("synth_motion: base_freq must be positive");
    constexpr double pi = 3.14159265358979323846;
    const double period = static_cast<double>(fps) / base_freq;  // frames per beat
    std::vector<double> psi(d_h);
    for (auto& p : psi) p = 2.0 * pi * rng.uniform();
    // Pose oscillators share one phase that only advances mid-beat; the
    // advance rate sin^2(pi t / period) hits exact zero on beat frames, so
    // consecutive beat frames repeat and speed dips to zero there.
    double phase = 0.0;
    const double step_gain = 2.0 * pi / period;
    for (std::size_t t = 0; t < t_frames; ++t) {
      if (t > 0) {
        const double envelope = std::sin(pi * static_cast<double>(t) / period);
        phase += envelope * envelope * step_gain;
      }
      for (std::size_t j = 0; j < d_h; ++j)
        seq.frames.at(t, j) = static_cast<float>(std::sin(phase + psi[j]));
    }
    return seq;
  }

  throw ValidationError("synth_motion: unknown kind '" + kind + "'");
}

}  // namespace motionseq
