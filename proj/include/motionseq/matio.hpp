#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace motionseq {

// Row-major frame matrix. Motions, audio feature tracks, precomputed
// features, and style vectors all travel in this container; fps is 0 when the
// source format carries no frame rate (CSV).
struct FrameMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  float fps = 0.0f;
  std::vector<float> data;

  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool empty() const { return rows == 0 || cols == 0; }
};

FrameMatrix make_frames(std::size_t rows, std::size_t cols, float fps);

FrameMatrix read_motb(const std::string& path);
void write_motb(const std::string& path, const FrameMatrix& m);

// Plain numeric CSV, one frame per line. Returns fps 0; callers stamp one on.
FrameMatrix read_csv(const std::string& path);

// Dispatch by extension (.motb or .csv).
FrameMatrix read_frames(const std::string& path, float csv_fps);

// Linear interpolation per column to a new frame rate; output length
// round(rows * target_fps / fps).
FrameMatrix resample_frames(const FrameMatrix& m, float target_fps);

}  // namespace motionseq
