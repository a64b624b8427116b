#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "motionseq/error.hpp"
#include "motionseq/matio.hpp"
#include "motionseq/motion.hpp"
#include "motionseq/rng.hpp"

namespace motionseq {

enum class ExtractorTag { kKinetic, kGeometric, kExternal };

// Per-sequence feature rows consumed by the distribution metrics. Held in
// double precision so covariance and eigenvalue work stays stable.
struct FeatureSet {
  std::size_t rows = 0;
  std::size_t cols = 0;
  ExtractorTag tag = ExtractorTag::kExternal;
  std::vector<double> data;

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

FeatureSet make_feature_set(std::size_t rows, std::size_t cols, ExtractorTag tag);

// Enforces the container invariants: at least one row, more than one feature
// column, every entry finite.
void validate_features(const FeatureSet& fs);

FeatureSet feature_set_from_frames(const FrameMatrix& m, ExtractorTag tag);
FrameMatrix feature_set_to_frames(const FeatureSet& fs);

// Per channel: mean squared finite-difference velocity (x fps^2) followed by
// mean squared finite-difference acceleration (x fps^4); f = 2 * d_h.
std::vector<double> kinetic_features(const MotionSequence& seq);
FeatureSet kinetic_feature_set(const std::vector<MotionSequence>& seqs);

struct GeometricRelation {
  enum class Kind { kDistanceBelow, kCoordLess };
  Kind kind = Kind::kDistanceBelow;
  std::size_t joint_a = 0;
  std::size_t joint_b = 0;
  std::size_t coord = 0;    // kCoordLess: which of the 3 coordinates to compare
  double threshold = 0.0;   // kDistanceBelow: strict upper bound on distance
};

// For every unordered joint pair: one distance-below relation at the given
// threshold and one ordering relation on the first coordinate.
std::vector<GeometricRelation> standard_relations(std::size_t joints, double threshold);

// Joint mode treats the pose as d_h / 3 joints with 3 coordinates each and
// reports time-averaged boolean relation frequencies (an empty relation list
// selects standard_relations at threshold 1). When d_h is not a multiple of
// 3, or joint mode is off, falls back to per-channel mean and standard
// deviation (f = 2 * d_h).
std::vector<double> geometric_features(const MotionSequence& seq, bool joint_mode,
                                       const std::vector<GeometricRelation>& relations = {});
FeatureSet geometric_feature_set(const std::vector<MotionSequence>& seqs, bool joint_mode,
                                 const std::vector<GeometricRelation>& relations = {});

struct GaussianSummary {
  std::size_t dim = 0;
  std::vector<double> mean;
  std::vector<double> cov;  // dim x dim row-major, exactly symmetric
};

// Sample mean and unbiased covariance of the feature rows (needs N >= 2).
GaussianSummary gaussian_summary(const FeatureSet& features);

// Frechet distance between Gaussians:
// |mu_a - mu_b|^2 + Tr(Sig_a + Sig_b - 2 (Sig_a Sig_b)^(1/2)), with the matrix
// square root taken through the symmetric eigendecomposition of
// Sig_a^(1/2) Sig_b Sig_a^(1/2) and negative eigenvalues clamped at zero.
// Totals in (-1e-6, 0) clamp to 0; anything more negative throws.
double fid(const GaussianSummary& a, const GaussianSummary& b);

// Mean Euclidean distance over n_pairs seeded random distinct row pairs.
// When n_pairs covers every unordered pair, enumerates them exactly instead
// of sampling.
double diversity(const FeatureSet& features, std::size_t n_pairs, std::uint64_t seed);

// Aggregate speed per step = L2 norm of the frame difference; beats are the
// strict local minima of that series after a centered 5-sample moving
// average, reported as frame indices.
std::vector<std::size_t> kinematic_beats(const MotionSequence& seq);

// (1/|kin|) sum over kinematic beats t of exp(-min_u (t-u)^2 / (2 sigma^2)),
// with u ranging over music beats and everything measured in frames at the
// shared rate `fps`. No kinematic beats: warns and returns 0. No music
// beats: returns 0.
double beat_alignment(const std::vector<std::size_t>& kin_beats,
                      const std::vector<std::size_t>& music_beats, double fps,
                      double sigma_frames = 3.0);

// For each motion row, ranks its own text row by Euclidean distance among
// n_candidates - 1 seeded mismatched text rows plus the true one; returns the
// fraction ranked within `top`.
double r_precision(const FeatureSet& motion_feats, const FeatureSet& text_feats, std::size_t top,
                   std::uint64_t seed, std::size_t n_candidates = 32);

// Mean Euclidean distance between paired rows.
double multimodal_distance(const FeatureSet& motion_feats, const FeatureSet& text_feats);

struct RepeatedMetric {
  double mean = 0.0;
  double stdev = 0.0;
  std::vector<double> runs;
};

// Runs a seed-dependent metric on `reps` derived seeds and reports the sample
// mean and unbiased standard deviation across runs.
template <class F>
RepeatedMetric repeat_metric(std::size_t reps, std::uint64_t seed, F&& metric) {
  if (reps == 0) throw ValidationError("repeat_metric: reps must be positive");
  RepeatedMetric out;
  out.runs.reserve(reps);
  Rng seeds(seed);
  for (std::size_t r = 0; r < reps; ++r) out.runs.push_back(metric(seeds.next()));
  double total = 0.0;
  for (double v : out.runs) total += v;
  out.mean = total / static_cast<double>(reps);
  if (reps > 1) {
    double ss = 0.0;
    for (double v : out.runs) {
      const double d = v - out.mean;
      ss += d * d;
    }
    out.stdev = std::sqrt(ss / static_cast<double>(reps - 1));
  }
  return out;
}

}  // namespace motionseq
