#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "macs/common.hpp"
#include "macs/linalg.hpp"
#include "macs/tensor.hpp"

namespace macs {

/// One multichannel recording of a single subject. Signal values are stored
/// as float32, matching the on-disk format, so archive round-trips are exact.
struct Recording {
  int subject_id = 0;
  int channels = 0;       // d
  int samples = 0;        // T = f_s * seconds
  double sample_rate = 0; // f_s
  int true_label = 0;
  std::vector<float> values;  // row-major d x T

  float at(int c, int s) const { return values[static_cast<std::size_t>(c) * samples + s]; }
  float& at(int c, int s) { return values[static_cast<std::size_t>(c) * samples + s]; }
};

/// Non-overlapping segment of a recording. train_label may differ from
/// true_label only after noise injection.
struct Fragment {
  int subject_id = 0;
  int fragment_id = 0;
  int true_label = 0;
  int train_label = 0;
  int channels = 0;
  int samples = 0;  // T_s
  std::vector<float> values;  // row-major d x T_s

  /// Signal as a double tensor for the numeric pipeline.
  Tensor tensor() const {
    Tensor t({channels, samples});
    for (int i = 0; i < t.numel(); ++i) t.v[i] = static_cast<double>(values[i]);
    return t;
  }
};

struct FragmentSet {
  std::vector<Fragment> fragments;
  int channels = 0;     // d
  int samples = 0;      // T_s
  double sample_rate = 0;
  double noise_fraction = 0.0;  // achieved fraction of train_label != true_label

  int size() const { return static_cast<int>(fragments.size()); }

  std::vector<int> subject_ids() const {
    std::vector<int> ids;
    for (const Fragment& f : fragments)
      if (std::find(ids.begin(), ids.end(), f.subject_id) == ids.end())
        ids.push_back(f.subject_id);
    return ids;
  }
};

/// Parameters of the synthetic generator that stands in for clinical corpora.
/// Class identity is carried by the channel covariance structure: class-c
/// signals are L_c · Z with Z unit-variance band-limited noise per channel and
/// L_c L_cᵀ = template_c, so the population covariance of the oscillatory part
/// equals the template (plus noise_floor² · I from the additive floor).
struct SynthSpec {
  int n_subjects_per_class = 8;
  int channels = 8;
  int seconds = 60;
  double sample_rate = 250.0;
  Tensor template0;  // d x d SPD
  Tensor template1;
  double band0_lo = 8.0, band0_hi = 12.0;  // Hz
  double band1_lo = 8.0, band1_hi = 12.0;
  double noise_floor = 0.05;
  int sinusoids_per_channel = 32;

  static SynthSpec defaults(int channels = 8) {
    SynthSpec s;
    s.channels = channels;
    s.template0 = Tensor({channels, channels});
    s.template1 = Tensor({channels, channels});
    // Class 0: exponential-decay cross-channel coupling.
    for (int i = 0; i < channels; ++i)
      for (int j = 0; j < channels; ++j)
        s.template0.at(i, j) = std::pow(0.7, std::abs(i - j));
    // Class 1: two coupled blocks with a stronger diagonal.
    for (int i = 0; i < channels; ++i)
      for (int j = 0; j < channels; ++j) {
        const bool same_block = (i < channels / 2) == (j < channels / 2);
        s.template1.at(i, j) = (i == j) ? 1.5 : (same_block ? 0.6 : 0.05);
      }
    return s;
  }

  void validate() const {
    if (n_subjects_per_class <= 0 || channels <= 0 || seconds < 2 || sample_rate <= 0)
      throw std::invalid_argument("synth spec: sizes must be positive, seconds >= 2");
    for (const Tensor* t : {&template0, &template1}) {
      if (t->rank() != 2 || t->dim(0) != channels || t->dim(1) != channels)
        throw std::invalid_argument("synth spec: template must be d x d");
      for (int i = 0; i < channels; ++i)
        for (int j = 0; j < channels; ++j)
          if (std::abs(t->at(i, j) - t->at(j, i)) > 1e-9)
            throw std::invalid_argument("synth spec: template not symmetric");
      SymEigResult e = sym_eig(*t);
      if (e.lambda[0] < 1e-3)
        throw std::invalid_argument("synth spec: template min eigenvalue " +
                                    fmt_double(e.lambda[0]) + " below 1e-3");
    }
    if (band0_lo <= 0 || band0_hi <= band0_lo || band1_lo <= 0 || band1_hi <= band1_lo)
      throw std::invalid_argument("synth spec: bad oscillation band");
    if (noise_floor < 0) throw std::invalid_argument("synth spec: negative noise floor");
  }
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Splits a recording into floor(T / T_s) non-overlapping fragments; a
/// trailing remainder shorter than T_s is dropped. Fragments inherit the
/// subject id and labels, with train_label initialized to true_label.
inline std::vector<Fragment> segment(const Recording& rec, int t_s) {
  if (t_s <= 0) throw std::invalid_argument("segment: T_s must be positive");
  if (t_s > rec.samples)
    throw std::invalid_argument("segment: T_s " + std::to_string(t_s) +
                                " exceeds recording length " + std::to_string(rec.samples));
  const int count = rec.samples / t_s;
  std::vector<Fragment> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    Fragment f;
    f.subject_id = rec.subject_id;
    f.fragment_id = k;
    f.true_label = rec.true_label;
    f.train_label = rec.true_label;
    f.channels = rec.channels;
    f.samples = t_s;
    f.values.resize(static_cast<std::size_t>(rec.channels) * t_s);
    for (int c = 0; c < rec.channels; ++c)
      for (int s = 0; s < t_s; ++s)
        f.values[static_cast<std::size_t>(c) * t_s + s] = rec.at(c, k * t_s + s);
    out.push_back(std::move(f));
  }
  return out;
}

/// Deterministic synthetic corpus: for each subject, each channel of Z is a
/// unit-variance mixture of random-phase sinusoids inside the class band, the
/// channels are mixed by the template factor L_c (L_c = U √Λ Uᵀ), and a white
/// noise floor is added. Subject ids are 0..N-1 for class 0 and N..2N-1 for
/// class 1.
inline std::vector<Recording> synthesize(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int d = spec.channels;
  const int T = static_cast<int>(spec.seconds * spec.sample_rate);
  const int m = spec.sinusoids_per_channel;

  auto factor_of = [&](const Tensor& tpl) {
    SymEigResult e = sym_eig(tpl);
    Tensor g({d});
    for (int i = 0; i < d; ++i) g[i] = std::sqrt(std::max(e.lambda[i], 0.0));
    // L = U diag(sqrt lambda) ... kept as U * sqrt so L Lᵀ = template.
    Tensor l({d, d});
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) l.at(i, j) = e.u.at(i, j) * g[j];
    return l;
  };
  const Tensor l0 = factor_of(spec.template0);
  const Tensor l1 = factor_of(spec.template1);

  std::vector<Recording> out;
  out.reserve(static_cast<std::size_t>(2) * spec.n_subjects_per_class);
  for (int cls = 0; cls < 2; ++cls) {
    const Tensor& l = cls == 0 ? l0 : l1;
    const double flo = cls == 0 ? spec.band0_lo : spec.band1_lo;
    const double fhi = cls == 0 ? spec.band0_hi : spec.band1_hi;
    for (int s = 0; s < spec.n_subjects_per_class; ++s) {
      Recording rec;
      rec.subject_id = cls * spec.n_subjects_per_class + s;
      rec.true_label = cls;
      rec.channels = d;
      rec.samples = T;
      rec.sample_rate = spec.sample_rate;
      rec.values.resize(static_cast<std::size_t>(d) * T);

      // Unit-variance band-limited source per channel.
      Tensor z({d, T});
      const double amp = std::sqrt(2.0 / m);
      for (int c = 0; c < d; ++c) {
        Rng rng(mix_seed(seed, 0x5a11, rec.subject_id, c));
        for (int k = 0; k < m; ++k) {
          const double f = rng.uniform(flo, fhi);
          const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
          const double w = 2.0 * 3.14159265358979323846 * f / spec.sample_rate;
          for (int ti = 0; ti < T; ++ti)
            z.at(c, ti) += amp * std::sin(w * ti + phase);
        }
      }
      Rng noise_rng(mix_seed(seed, 0x0f10, rec.subject_id));
      for (int ti = 0; ti < T; ++ti)
        for (int c = 0; c < d; ++c) {
          double acc = 0.0;
          for (int k = 0; k < d; ++k) acc += l.at(c, k) * z.at(k, ti);
          acc += spec.noise_floor * noise_rng.gaussian();
          rec.values[static_cast<std::size_t>(c) * T + ti] = static_cast<float>(acc);
        }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

/// Segments every recording with a shared T_s into one FragmentSet. Fragment
/// ids are globally unique and ordered (recording order, then position).
inline FragmentSet make_fragment_set(const std::vector<Recording>& recs, int t_s) {
  if (recs.empty()) throw std::invalid_argument("make_fragment_set: no recordings");
  FragmentSet fs;
  fs.channels = recs[0].channels;
  fs.samples = t_s;
  fs.sample_rate = recs[0].sample_rate;
  int next_id = 0;
  for (const Recording& r : recs) {
    if (r.channels != fs.channels || r.sample_rate != fs.sample_rate)
      throw std::invalid_argument("make_fragment_set: heterogeneous recordings");
    for (Fragment& f : segment(r, t_s)) {
      f.fragment_id = next_id++;
      fs.fragments.push_back(std::move(f));
    }
  }
  return fs;
}

enum class NoiseGranularity {
  Subject,   // all fragments of a flipped subject flip together (default)
  Fragment,  // independent per-fragment flips (ablation mode)
};

/// Flips train labels of a uniformly random floor(alpha * n)-subset of
/// subjects (or fragments, in Fragment mode). true_label is untouched.
/// noise_fraction on the result records the achieved flipped-fragment
/// fraction, which for subject-level flips can differ from the request by up
/// to 1/n_subjects.
inline FragmentSet inject_noise(const FragmentSet& fs, double alpha, std::uint64_t seed,
                                NoiseGranularity granularity = NoiseGranularity::Subject) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("inject_noise: alpha must lie in [0,1]");
  FragmentSet out = fs;
  std::vector<int> pool;
  if (granularity == NoiseGranularity::Subject) {
    pool = fs.subject_ids();
  } else {
    pool.resize(fs.fragments.size());
    std::iota(pool.begin(), pool.end(), 0);
  }
  const int flips = static_cast<int>(std::floor(alpha * static_cast<double>(pool.size())));
  // Deterministic Fisher-Yates prefix selection.
  Rng rng(mix_seed(seed, 0xf11b));
  for (int i = 0; i < flips; ++i) {
    const int j = i + static_cast<int>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  if (granularity == NoiseGranularity::Subject) {
    std::vector<int> chosen(pool.begin(), pool.begin() + flips);
    for (Fragment& f : out.fragments)
      if (std::find(chosen.begin(), chosen.end(), f.subject_id) != chosen.end())
        f.train_label = 1 - f.true_label;
  } else {
    for (int i = 0; i < flips; ++i)
      out.fragments[pool[i]].train_label = 1 - out.fragments[pool[i]].true_label;
  }
  int mismatched = 0;
  for (const Fragment& f : out.fragments)
    if (f.train_label != f.true_label) ++mismatched;
  out.noise_fraction = out.fragments.empty()
                           ? 0.0
                           : static_cast<double>(mismatched) / out.fragments.size();
  return out;
}

}  // namespace macs
