// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "entprop/dataset.hpp"
#include "entprop/rng.hpp"

namespace entprop {

enum class CorruptionKind { GaussianNoise, ShotNoise, ImpulseNoise, BoxBlur, Brightness, Contrast, Pixelate, Saturate };

std::string to_string(CorruptionKind k);
CorruptionKind parse_corruption_kind(const std::string& s);
std::vector<CorruptionKind> all_corruption_kinds();

/// severity 1..5; severity 0 is the identity and is only used internally.
struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::GaussianNoise;
  int severity = 1;

  void validate() const;
  std::string name() const;  // "gaussian_noise-3"
  bool operator==(const CorruptionSpec&) const = default;
};

/// Every kind at severities 1..5, in kind-major order.
std::vector<CorruptionSpec> full_suite();
/// Subset of full_suite() restricted to `kinds` and `severities`.
std::vector<CorruptionSpec> make_suite(const std::vector<CorruptionKind>& kinds, const std::vector<int>& severities);

/// Severity parameters, index 0 = severity 1.
///   gaussian_noise  sigma            0.04 0.06 0.08 0.09 0.10
///   shot_noise      photons c        500  250  100  75   50     x' = Poisson(c x) / c
///   impulse_noise   amount           0.01 0.02 0.03 0.05 0.07   salt and pepper per element
///   box_blur        radius, blend    (1,.5) (1,1) (2,.75) (2,1) (3,1)
///   brightness      shift            0.1  0.2  0.3  0.4  0.5
///   contrast        factor           0.75 0.5  0.4  0.3  0.15   about the per-channel image mean
///   pixelate        block            2    3    4    5    6      block means
///   saturate        (scale, shift)   (.3,0) (.1,0) (2,0) (5,.1) (20,.2)  on HSV saturation
/// Saturate changes chroma only, so it is the identity on single-channel images.
std::vector<double> corruption_parameters(const CorruptionSpec& spec);

/// Corrupts one (C, H, W) image in [0, 1]; the result is clamped to [0, 1].
Tensor<float> corrupt(const Tensor<float>& image, const CorruptionSpec& spec, Rng& rng);

/// Corrupted copy of a dataset. Image i uses substream(seed, "corrupt", i, kind * 16 + severity).
Dataset corrupt_dataset(const Dataset& data, const CorruptionSpec& spec, std::uint64_t seed = 0);

}  // namespace entprop
