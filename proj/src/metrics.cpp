#include "motionseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "motionseq/linalg.hpp"

namespace motionseq {

namespace {

double row_distance(const FeatureSet& a, std::size_t ra, const FeatureSet& b, std::size_t rb) {
  double ss = 0.0;
  for (std::size_t c = 0; c < a.cols; ++c) {
    const double d = a.at(ra, c) - b.at(rb, c);
    ss += d * d;
  }
  return std::sqrt(ss);
}

void require_motion(const MotionSequence& seq, std::size_t min_frames, const char* who) {
  if (seq.length() < min_frames)
    throw ValidationError(std::string(who) + ": '" + seq.name + "' has " +
                          std::to_string(seq.length()) + " frames, needs at least " +
                          std::to_string(min_frames));
  if (seq.width() == 0) throw ValidationError(std::string(who) + ": '" + seq.name + "' is empty");
}

std::vector<double> sqrt_psd(const SymEig& eig) {
  const std::size_t n = eig.n;
  std::vector<double> out(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double root = eig.values[k] > 0.0 ? std::sqrt(eig.values[k]) : 0.0;
    if (root == 0.0) continue;
    for (std::size_t r = 0; r < n; ++r) {
      const double vr = eig.vectors[r * n + k] * root;
      if (vr == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) out[r * n + c] += vr * eig.vectors[c * n + k];
    }
  }
  return out;
}

}  // namespace

FeatureSet make_feature_set(std::size_t rows, std::size_t cols, ExtractorTag tag) {
  FeatureSet fs;
  fs.rows = rows;
  fs.cols = cols;
  fs.tag = tag;
  fs.data.assign(rows * cols, 0.0);
  return fs;
}

void validate_features(const FeatureSet& fs) {
  if (fs.rows == 0) throw ValidationError("feature set: no rows");
  if (fs.cols < 2) throw ValidationError("feature set: needs more than one feature column");
  if (fs.data.size() != fs.rows * fs.cols)
    throw ValidationError("feature set: buffer does not match its dimensions");
  for (double v : fs.data)
    if (!std::isfinite(v)) throw ValidationError("feature set: non-finite entry");
}

FeatureSet feature_set_from_frames(const FrameMatrix& m, ExtractorTag tag) {
  FeatureSet fs = make_feature_set(m.rows, m.cols, tag);
  for (std::size_t i = 0; i < m.data.size(); ++i) fs.data[i] = static_cast<double>(m.data[i]);
  validate_features(fs);
  return fs;
}

FrameMatrix feature_set_to_frames(const FeatureSet& fs) {
  validate_features(fs);
  FrameMatrix m = make_frames(fs.rows, fs.cols, 0.0f);
  for (std::size_t i = 0; i < fs.data.size(); ++i) m.data[i] = static_cast<float>(fs.data[i]);
  return m;
}

std::vector<double> kinetic_features(const MotionSequence& seq) {
  require_motion(seq, 3, "kinetic_features");
  const double fps = static_cast<double>(seq.fps());
  if (!(fps > 0.0))
    throw ValidationError("kinetic_features: '" + seq.name + "' has no frame rate");
  const std::size_t t_len = seq.length();
  const std::size_t d = seq.width();
  const double fps2 = fps * fps;

  std::vector<double> out(2 * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double vel = 0.0;
    for (std::size_t t = 0; t + 1 < t_len; ++t) {
      const double dv = static_cast<double>(seq.frames.at(t + 1, j)) -
                        static_cast<double>(seq.frames.at(t, j));
      vel += dv * dv;
    }
    out[j] = vel / static_cast<double>(t_len - 1) * fps2;

    double acc = 0.0;
    for (std::size_t t = 1; t + 1 < t_len; ++t) {
      const double da = static_cast<double>(seq.frames.at(t + 1, j)) -
                        2.0 * static_cast<double>(seq.frames.at(t, j)) +
                        static_cast<double>(seq.frames.at(t - 1, j));
      acc += da * da;
    }
    out[d + j] = acc / static_cast<double>(t_len - 2) * fps2 * fps2;
  }
  return out;
}

FeatureSet kinetic_feature_set(const std::vector<MotionSequence>& seqs) {
  if (seqs.empty()) throw ValidationError("kinetic_feature_set: no sequences");
  const std::size_t d = seqs.front().width();
  FeatureSet fs = make_feature_set(seqs.size(), 2 * d, ExtractorTag::kKinetic);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (seqs[i].width() != d)
      throw ValidationError("kinetic_feature_set: '" + seqs[i].name + "' has width " +
                            std::to_string(seqs[i].width()) + ", expected " + std::to_string(d));
    const std::vector<double> row = kinetic_features(seqs[i]);
    std::copy(row.begin(), row.end(), fs.data.begin() + static_cast<std::ptrdiff_t>(i * fs.cols));
  }
  validate_features(fs);
  return fs;
}

std::vector<GeometricRelation> standard_relations(std::size_t joints, double threshold) {
  if (!(threshold > 0.0) || !std::isfinite(threshold))
    throw ValidationError("standard_relations: threshold must be positive and finite");
  std::vector<GeometricRelation> rels;
  for (std::size_t a = 0; a + 1 < joints; ++a)
    for (std::size_t b = a + 1; b < joints; ++b) {
      GeometricRelation dist;
      dist.kind = GeometricRelation::Kind::kDistanceBelow;
      dist.joint_a = a;
      dist.joint_b = b;
      dist.threshold = threshold;
      rels.push_back(dist);
      GeometricRelation order;
      order.kind = GeometricRelation::Kind::kCoordLess;
      order.joint_a = a;
      order.joint_b = b;
      order.coord = 0;
      rels.push_back(order);
    }
  return rels;
}

std::vector<double> geometric_features(const MotionSequence& seq, bool joint_mode,
                                       const std::vector<GeometricRelation>& relations) {
  require_motion(seq, 1, "geometric_features");
  const std::size_t t_len = seq.length();
  const std::size_t d = seq.width();

  if (joint_mode && d % 3 == 0) {
    const std::size_t joints = d / 3;
    const std::vector<GeometricRelation> rels =
        relations.empty() ? standard_relations(joints, 1.0) : relations;
    if (rels.empty())
      throw ValidationError("geometric_features: '" + seq.name + "' yields no relations");
    for (const GeometricRelation& rel : rels) {
      if (rel.joint_a >= joints || rel.joint_b >= joints)
        throw ValidationError("geometric_features: relation names joint beyond " +
                              std::to_string(joints - 1));
      if (rel.kind == GeometricRelation::Kind::kCoordLess && rel.coord >= 3)
        throw ValidationError("geometric_features: coordinate index must be 0..2");
      if (rel.kind == GeometricRelation::Kind::kDistanceBelow &&
          (!(rel.threshold > 0.0) || !std::isfinite(rel.threshold)))
        throw ValidationError("geometric_features: threshold must be positive and finite");
    }

    std::vector<double> out(rels.size(), 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t k = 0; k < rels.size(); ++k) {
        const GeometricRelation& rel = rels[k];
        bool hold = false;
        if (rel.kind == GeometricRelation::Kind::kDistanceBelow) {
          double ss = 0.0;
          for (std::size_t c = 0; c < 3; ++c) {
            const double diff = static_cast<double>(seq.frames.at(t, 3 * rel.joint_a + c)) -
                                static_cast<double>(seq.frames.at(t, 3 * rel.joint_b + c));
            ss += diff * diff;
          }
          hold = std::sqrt(ss) < rel.threshold;
        } else {
          hold = seq.frames.at(t, 3 * rel.joint_a + rel.coord) <
                 seq.frames.at(t, 3 * rel.joint_b + rel.coord);
        }
        if (hold) out[k] += 1.0;
      }
    }
    for (double& v : out) v /= static_cast<double>(t_len);
    return out;
  }

  std::vector<double> out(2 * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) mean += static_cast<double>(seq.frames.at(t, j));
    mean /= static_cast<double>(t_len);
    double var = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
      const double dv = static_cast<double>(seq.frames.at(t, j)) - mean;
      var += dv * dv;
    }
    out[j] = mean;
    out[d + j] = std::sqrt(var / static_cast<double>(t_len));
  }
  return out;
}

FeatureSet geometric_feature_set(const std::vector<MotionSequence>& seqs, bool joint_mode,
                                 const std::vector<GeometricRelation>& relations) {
  if (seqs.empty()) throw ValidationError("geometric_feature_set: no sequences");
  const std::size_t d = seqs.front().width();
  std::vector<double> first = geometric_features(seqs.front(), joint_mode, relations);
  FeatureSet fs = make_feature_set(seqs.size(), first.size(), ExtractorTag::kGeometric);
  std::copy(first.begin(), first.end(), fs.data.begin());
  for (std::size_t i = 1; i < seqs.size(); ++i) {
    if (seqs[i].width() != d)
      throw ValidationError("geometric_feature_set: '" + seqs[i].name + "' has width " +
                            std::to_string(seqs[i].width()) + ", expected " + std::to_string(d));
    const std::vector<double> row = geometric_features(seqs[i], joint_mode, relations);
    std::copy(row.begin(), row.end(), fs.data.begin() + static_cast<std::ptrdiff_t>(i * fs.cols));
  }
  validate_features(fs);
  return fs;
}

GaussianSummary gaussian_summary(const FeatureSet& features) {
  validate_features(features);
  if (features.rows < 2) throw ValidationError("gaussian_summary: needs at least 2 rows");
  const std::size_t n = features.rows;
  const std::size_t f = features.cols;

  GaussianSummary g;
  g.dim = f;
  g.mean.assign(f, 0.0);
  g.cov.assign(f * f, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < f; ++c) g.mean[c] += features.at(r, c);
  for (double& m : g.mean) m /= static_cast<double>(n);

  std::vector<double> centered(f);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < f; ++c) centered[c] = features.at(r, c) - g.mean[c];
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = i; j < f; ++j) g.cov[i * f + j] += centered[i] * centered[j];
  }
  const double denom = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = i; j < f; ++j) {
      g.cov[i * f + j] /= denom;
      g.cov[j * f + i] = g.cov[i * f + j];
    }
  return g;
}

double fid(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.dim == 0 || b.dim == 0) throw ValidationError("fid: empty summary");
  if (a.dim != b.dim)
    throw ValidationError("fid: dimension mismatch (" + std::to_string(a.dim) + " vs " +
                          std::to_string(b.dim) + ")");
  const std::size_t f = a.dim;
  if (a.mean.size() != f || b.mean.size() != f || a.cov.size() != f * f || b.cov.size() != f * f)
    throw ValidationError("fid: summary buffers do not match their dimension");
  for (const GaussianSummary* g : {&a, &b}) {
    for (double v : g->mean)
      if (!std::isfinite(v)) throw ValidationError("fid: non-finite mean");
    for (double v : g->cov)
      if (!std::isfinite(v)) throw ValidationError("fid: non-finite covariance");
  }

  if (a.mean == b.mean && a.cov == b.cov) return 0.0;

  double mean_term = 0.0;
  for (std::size_t c = 0; c < f; ++c) {
    const double d = a.mean[c] - b.mean[c];
    mean_term += d * d;
  }

  double trace_a = 0.0;
  double trace_b = 0.0;
  for (std::size_t i = 0; i < f; ++i) {
    trace_a += a.cov[i * f + i];
    trace_b += b.cov[i * f + i];
  }

  const std::vector<double> root_a = sqrt_psd(jacobi_eigh(a.cov, f));
  std::vector<double> inner = matmul_square(root_a, matmul_square(b.cov, root_a, f), f);
  for (std::size_t i = 0; i + 1 < f; ++i)
    for (std::size_t j = i + 1; j < f; ++j) {
      const double m = 0.5 * (inner[i * f + j] + inner[j * f + i]);
      inner[i * f + j] = m;
      inner[j * f + i] = m;
    }
  const SymEig eig = jacobi_eigh(inner, f);
  double trace_root = 0.0;
  for (double v : eig.values) trace_root += v > 0.0 ? std::sqrt(v) : 0.0;

  double total = mean_term + trace_a + trace_b - 2.0 * trace_root;
  if (total < 0.0) {
    const double scale = 1.0 + mean_term + std::fabs(trace_a) + std::fabs(trace_b);
    if (total < -1e-6 && total < -1e-9 * scale)
      throw NumericError("fid: distance " + std::to_string(total) + " is negative beyond tolerance");
    total = 0.0;
  }
  return total;
}

double diversity(const FeatureSet& features, std::size_t n_pairs, std::uint64_t seed) {
  validate_features(features);
  if (features.rows < 2) throw ValidationError("diversity: needs at least 2 rows");
  if (n_pairs == 0) throw ValidationError("diversity: n_pairs must be positive");

  const std::size_t n = features.rows;
  const std::size_t all_pairs = n * (n - 1) / 2;
  double total = 0.0;
  if (n_pairs >= all_pairs) {
    for (std::size_t i = 0; i + 1 < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) total += row_distance(features, i, features, j);
    return total / static_cast<double>(all_pairs);
  }

  Rng rng(seed);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const std::size_t i = static_cast<std::size_t>(rng.below(n));
    std::size_t j = static_cast<std::size_t>(rng.below(n - 1));
    if (j >= i) ++j;
    total += row_distance(features, i, features, j);
  }
  return total / static_cast<double>(n_pairs);
}

std::vector<std::size_t> kinematic_beats(const MotionSequence& seq) {
  require_motion(seq, 3, "kinematic_beats");
  const std::size_t t_len = seq.length();
  const std::size_t d = seq.width();
  const std::size_t n = t_len - 1;

  std::vector<double> speed(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = static_cast<double>(seq.frames.at(i + 1, j)) -
                          static_cast<double>(seq.frames.at(i, j));
      ss += diff * diff;
    }
    speed[i] = std::sqrt(ss);
  }

  std::vector<double> smooth(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= 2 ? i - 2 : 0;
    const std::size_t hi = std::min(i + 2, n - 1);
    double acc = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) acc += speed[k];
    smooth[i] = acc / static_cast<double>(hi - lo + 1);
  }

  std::vector<std::size_t> beats;
  for (std::size_t i = 1; i + 1 < n; ++i)
    if (smooth[i] < smooth[i - 1] && smooth[i] < smooth[i + 1]) beats.push_back(i + 1);
  return beats;
}

double beat_alignment(const std::vector<std::size_t>& kin_beats,
                      const std::vector<std::size_t>& music_beats, double fps,
                      double sigma_frames) {
  if (!(fps > 0.0)) throw ValidationError("beat_alignment: fps must be positive");
  if (!(sigma_frames > 0.0)) throw ValidationError("beat_alignment: sigma must be positive");
  if (kin_beats.empty()) {
    warn("beat_alignment: no kinematic beats, reporting 0");
    return 0.0;
  }
  if (music_beats.empty()) return 0.0;

  double total = 0.0;
  for (std::size_t t : kin_beats) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t u : music_beats) {
      const double dt = static_cast<double>(t) - static_cast<double>(u);
      best = std::min(best, dt * dt);
    }
    total += std::exp(-best / (2.0 * sigma_frames * sigma_frames));
  }
  return total / static_cast<double>(kin_beats.size());
}

double r_precision(const FeatureSet& motion_feats, const FeatureSet& text_feats, std::size_t top,
                   std::uint64_t seed, std::size_t n_candidates) {
  validate_features(motion_feats);
  validate_features(text_feats);
  if (motion_feats.rows != text_feats.rows || motion_feats.cols != text_feats.cols)
    throw ValidationError("r_precision: motion and text feature shapes differ");
  if (n_candidates < 2) throw ValidationError("r_precision: needs at least 2 candidates");
  if (motion_feats.rows < n_candidates)
    throw ValidationError("r_precision: " + std::to_string(motion_feats.rows) +
                          " rows cannot seat " + std::to_string(n_candidates) + " candidates");
  if (top < 1 || top > n_candidates)
    throw ValidationError("r_precision: top must lie in [1, n_candidates]");

  const std::size_t n = motion_feats.rows;
  Rng rng(seed);
  std::vector<std::size_t> mismatched;
  mismatched.reserve(n_candidates - 1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mismatched.clear();
    while (mismatched.size() + 1 < n_candidates) {
      const std::size_t j = static_cast<std::size_t>(rng.below(n));
      if (j == i) continue;
      if (std::find(mismatched.begin(), mismatched.end(), j) != mismatched.end()) continue;
      mismatched.push_back(j);
    }
    const double d_true = row_distance(motion_feats, i, text_feats, i);
    std::size_t rank = 1;
    for (std::size_t j : mismatched)
      if (row_distance(motion_feats, i, text_feats, j) < d_true) ++rank;
    if (rank <= top) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double multimodal_distance(const FeatureSet& motion_feats, const FeatureSet& text_feats) {
  validate_features(motion_feats);
  validate_features(text_feats);
  if (motion_feats.rows != text_feats.rows || motion_feats.cols != text_feats.cols)
    throw ValidationError("multimodal_distance: motion and text feature shapes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < motion_feats.rows; ++i)
    total += row_distance(motion_feats, i, text_feats, i);
  return total / static_cast<double>(motion_feats.rows);
}

}  // namespace motionseq
