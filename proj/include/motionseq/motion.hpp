#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "motionseq/matio.hpp"

namespace motionseq {

// A named motion clip: frames is T x d_h with T >= 1, fps > 0, values finite.
struct MotionSequence {
  std::string name;
  FrameMatrix frames;

  std::size_t length() const { return frames.rows; }
  std::size_t width() const { return frames.cols; }
  float fps() const { return frames.fps; }
};

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> stdev;  // floored at 1e-8
};

struct MotionDataset {
  std::vector<MotionSequence> items;
  ChannelStats stats;
  std::size_t d_h = 0;
  float fps = 0.0f;
};

MotionSequence load_motion(const std::string& path, float csv_fps);
void save_motion(const std::string& path, const MotionSequence& seq);

MotionSequence resample_fps(const MotionSequence& seq, float target_fps);

ChannelStats compute_stats(const std::vector<MotionSequence>& seqs);
MotionSequence normalize(const MotionSequence& seq, const ChannelStats& stats);
MotionSequence denormalize(const MotionSequence& seq, const ChannelStats& stats);

// Stats travel in the same container as motions: row 0 mean, row 1 std.
FrameMatrix stats_to_frames(const ChannelStats& stats, float fps);
ChannelStats stats_from_frames(const FrameMatrix& m);

// Deterministic synthetic clips. "constant" is a frozen pose, "sine-walk" a
// smooth mixture of sinusoids, "pulse-dance" pulses its speed so that
// velocity minima land on integer multiples of fps/base_freq frames. All
// values stay within [-2, 2].
MotionSequence synth_motion(const std::string& kind, std::size_t t_frames, std::size_t d_h, float fps,
                            float base_freq, std::uint64_t seed);

}  // namespace motionseq
