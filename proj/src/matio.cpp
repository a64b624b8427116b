#include "motionseq/matio.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "motionseq/binio.hpp"
#include "motionseq/error.hpp"

namespace motionseq {

namespace {

constexpr std::uint32_t kMotbVersion = 1;
const char kMotbMagic[4] = {'M', 'O', 'T', 'B'};

bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

}  // namespace

FrameMatrix make_frames(std::size_t rows, std::size_t cols, float fps) {
  FrameMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.fps = fps;
  m.data.assign(rows * cols, 0.0f);
  return m;
}

FrameMatrix read_motb(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path + ": cannot open");
  char magic[4];
  binio::get_bytes(is, magic, 4, path);
  if (std::memcmp(magic, kMotbMagic, 4) != 0) throw DataError(path + ": bad magic at byte 0");
  const auto version = binio::get_le<std::uint32_t>(is, path);
  if (version != kMotbVersion)
    throw DataError(path + ": unsupported version " + std::to_string(version) + " at byte 4");
  const auto rows = binio::get_le<std::uint32_t>(is, path);
  const auto cols = binio::get_le<std::uint32_t>(is, path);
  const float fps = binio::get_f32(is, path);
  if (!std::isfinite(fps) || fps < 0.0f) throw DataError(path + ": bad frame rate");
  if (rows != 0 && cols != 0 &&
      static_cast<std::uint64_t>(rows) * cols > std::numeric_limits<std::uint32_t>::max())
    throw DataError(path + ": implausible dimensions");
  FrameMatrix m = make_frames(rows, cols, fps);
  binio::get_f32_array(is, m.data.data(), m.data.size(), path);
  return m;
}

void write_motb(const std::string& path, const FrameMatrix& m) {
  if (m.data.size() != m.rows * m.cols)
    throw ValidationError(path + ": frame matrix buffer does not match its dimensions");
  if (!std::isfinite(m.fps) || m.fps < 0.0f) throw ValidationError(path + ": bad frame rate");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(path + ": cannot open for writing");
  binio::put_bytes(os, kMotbMagic, 4);
  binio::put_le<std::uint32_t>(os, kMotbVersion);
  binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows));
  binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols));
  binio::put_f32(os, m.fps);
  binio::put_f32_array(os, m.data.data(), m.data.size());
  if (!os) throw DataError(path + ": write failed");
}

FrameMatrix read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError(path + ": cannot open");
  FrameMatrix m;
  std::string line;
  std::size_t lineno = 0;
  bool saw_content = false;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t a = 0, b = line.size();
    while (a < b && (line[a] == ' ' || line[a] == '\t')) ++a;
    while (b > a && (line[b - 1] == ' ' || line[b - 1] == '\t' || line[b - 1] == '\r')) --b;
    if (a == b) continue;
    std::vector<float> row;
    bool parse_failed = false;
    std::string bad_field;
    std::size_t pos = a;
    while (pos <= b) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos || comma > b) comma = b;
      std::size_t fa = pos, fb = comma;
      while (fa < fb && (line[fa] == ' ' || line[fa] == '\t')) ++fa;
      while (fb > fa && (line[fb - 1] == ' ' || line[fb - 1] == '\t')) --fb;
      float v = 0.0f;
      auto [ptr, ec] = std::from_chars(line.data() + fa, line.data() + fb, v);
      if (ec != std::errc{} || ptr != line.data() + fb) {
        parse_failed = true;
        bad_field = line.substr(fa, fb - fa);
        break;
      }
      row.push_back(v);
      if (comma == b) break;
      pos = comma + 1;
    }
    if (parse_failed) {
      // A single leading non-numeric line is an optional header.
      if (!saw_content) {
        saw_content = true;
        continue;
      }
      throw DataError(path + ":" + std::to_string(lineno) + ": bad number '" + bad_field + "'");
    }
    saw_content = true;
    if (m.rows == 0) {
      m.cols = row.size();
    } else if (row.size() != m.cols) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(m.cols) +
                      " columns, got " + std::to_string(row.size()));
    }
    m.data.insert(m.data.end(), row.begin(), row.end());
    ++m.rows;
  }
  if (m.rows == 0) throw DataError(path + ": no data rows");
  return m;
}

FrameMatrix read_frames(const std::string& path, float csv_fps) {
  if (has_suffix(path, ".motb")) return read_motb(path);
  if (has_suffix(path, ".csv")) {
    FrameMatrix m = read_csv(path);
    m.fps = csv_fps;
    return m;
  }
  throw DataError(path + ": unknown motion format (expected .motb or .csv)");
}

FrameMatrix resample_frames(const FrameMatrix& m, float target_fps) {
  if (!(target_fps > 0.0f)) throw ValidationError("resample: target fps must be positive");
  if (!(m.fps > 0.0f)) throw ValidationError("resample: source fps must be positive");
  if (m.rows == 0) throw ValidationError("resample: empty frame matrix");
  std::size_t t_out =
      static_cast<std::size_t>(std::llround(static_cast<double>(m.rows) * target_fps / m.fps));
  if (t_out == 0) t_out = 1;
  FrameMatrix out = make_frames(t_out, m.cols, target_fps);
  for (std::size_t i = 0; i < t_out; ++i) {
    double src = static_cast<double>(i) * m.fps / target_fps;
    if (src < 0.0) src = 0.0;
    if (src > static_cast<double>(m.rows - 1)) src = static_cast<double>(m.rows - 1);
    const std::size_t lo = static_cast<std::size_t>(src);
    const std::size_t hi = lo + 1 < m.rows ? lo + 1 : lo;
    const float w = static_cast<float>(src - static_cast<double>(lo));
    for (std::size_t j = 0; j < m.cols; ++j)
      out.at(i, j) = (1.0f - w) * m.at(lo, j) + w * m.at(hi, j);
  }
  return out;
}

}  // namespace motionseq
