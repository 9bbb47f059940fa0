// SPDX-License-Identifier: Apache-2.0
#include "entprop/corruption.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace entprop {

namespace {

constexpr std::array<const char*, 8> kNames{"gaussian_noise", "shot_noise", "impulse_noise", "box_blur",
                                            "brightness",     "contrast",   "pixelate",      "saturate"};

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// Mean over the (2r+1)^2 window, clipped at the border.
void box_blur(const float* in, float* out, std::size_t H, std::size_t W, std::size_t r) {
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t y0 = y >= r ? y - r : 0, y1 = std::min(H - 1, y + r);
      const std::size_t x0 = x >= r ? x - r : 0, x1 = std::min(W - 1, x + r);
      double s = 0;
      for (std::size_t yy = y0; yy <= y1; ++yy)
        for (std::size_t xx = x0; xx <= x1; ++xx) s += in[yy * W + xx];
      out[y * W + x] = static_cast<float>(s / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1)));
    }
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0;
  if (d == 0) {
    h = 0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    h = (b - r) / d + 2.0;
  } else {
    h = (r - g) / d + 4.0;
  }
  if (h < 0) h += 6.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double c = v * s, x = c * (1 - std::abs(std::fmod(h, 2.0) - 1)), m = v - c;
  double rr = 0, gg = 0, bb = 0;
  switch (static_cast<int>(h) % 6) {
    case 0: rr = c, gg = x; break;
    case 1: rr = x, gg = c; break;
    case 2: gg = c, bb = x; break;
    case 3: gg = x, bb = c; break;
    case 4: rr = x, bb = c; break;
    default: rr = c, bb = x; break;
  }
  r = rr + m, g = gg + m, b = bb + m;
}

}  // namespace

std::string to_string(CorruptionKind k) { return kNames[static_cast<std::size_t>(k)]; }

std::vector<CorruptionKind> all_corruption_kinds() {
  std::vector<CorruptionKind> out;
  for (std::size_t i = 0; i < kNames.size(); ++i) out.push_back(static_cast<CorruptionKind>(i));
  return out;
}

CorruptionKind parse_corruption_kind(const std::string& s) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (s == kNames[i]) return static_cast<CorruptionKind>(i);
  fail(ErrorCode::Config, "unknown corruption '" + s + "'");
}

void CorruptionSpec::validate() const {
  require(severity >= 0 && severity <= 5, ErrorCode::InvalidArgument,
          "corruption: severity must lie in 1..5, got " + std::to_string(severity));
}

std::string CorruptionSpec::name() const { return to_string(kind) + "-" + std::to_string(severity); }

std::vector<CorruptionSpec> make_suite(const std::vector<CorruptionKind>& kinds, const std::vector<int>& severities) {
  std::vector<CorruptionSpec> out;
  for (CorruptionKind k : kinds)
    for (int s : severities) {
      CorruptionSpec spec{k, s};
      spec.validate();
      require(s >= 1, ErrorCode::Config, "corruption: suite severities must lie in 1..5");
      out.push_back(spec);
    }
  return out;
}

std::vector<CorruptionSpec> full_suite() { return make_suite(all_corruption_kinds(), {1, 2, 3, 4, 5}); }

std::vector<double> corruption_parameters(const CorruptionSpec& spec) {
  spec.validate();
  require(spec.severity >= 1, ErrorCode::InvalidArgument, "corruption: severity 0 has no parameters");
  const std::size_t i = static_cast<std::size_t>(spec.severity - 1);
  switch (spec.kind) {
    case CorruptionKind::GaussianNoise: return {std::array{0.04, 0.06, 0.08, 0.09, 0.10}[i]};
    case CorruptionKind::ShotNoise: return {std::array{500.0, 250.0, 100.0, 75.0, 50.0}[i]};
    case CorruptionKind::ImpulseNoise: return {std::array{0.01, 0.02, 0.03, 0.05, 0.07}[i]};
    case CorruptionKind::BoxBlur: {
      constexpr std::array<std::array<double, 2>, 5> t{{{1, .5}, {1, 1}, {2, .75}, {2, 1}, {3, 1}}};
      return {t[i][0], t[i][1]};
    }
    case CorruptionKind::Brightness: return {std::array{0.1, 0.2, 0.3, 0.4, 0.5}[i]};
    case CorruptionKind::Contrast: return {std::array{0.75, 0.5, 0.4, 0.3, 0.15}[i]};
    case CorruptionKind::Pixelate: return {std::array{2.0, 3.0, 4.0, 5.0, 6.0}[i]};
    case CorruptionKind::Saturate: {
      constexpr std::array<std::array<double, 2>, 5> t{{{.3, 0}, {.1, 0}, {2, 0}, {5, .1}, {20, .2}}};
      return {t[i][0], t[i][1]};
    }
  }
  fail(ErrorCode::Internal, "corruption: unhandled kind");
}

Tensor<float> corrupt(const Tensor<float>& image, const CorruptionSpec& spec, Rng& rng) {
  spec.validate();
  require(image.rank() == 3, ErrorCode::Shape, "corrupt: expected (C, H, W), got " + shape_str(image.shape()));
  for (float v : image.values())
    require(v >= 0.0f && v <= 1.0f, ErrorCode::InvalidArgument, "corrupt: input outside [0, 1]");
  if (spec.severity == 0) return image;
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2), HW = H * W;
  const std::vector<double> p = corruption_parameters(spec);
  Tensor<float> out = image;
  const float* in = image.data();
  float* o = out.data();

  switch (spec.kind) {
    case CorruptionKind::GaussianNoise: {
      std::normal_distribution<double> z(0.0, p[0]);
      for (std::size_t i = 0; i < out.size(); ++i) o[i] = clamp01(in[i] + z(rng));
      break;
    }
    case CorruptionKind::ShotNoise:
      for (std::size_t i = 0; i < out.size(); ++i) {
        std::poisson_distribution<long> pois(std::max(1e-12, in[i] * p[0]));
        o[i] = clamp01(static_cast<double>(pois(rng)) / p[0]);
      }
      break;
    case CorruptionKind::ImpulseNoise:
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double u = uniform01(rng);
        if (u < p[0] / 2) o[i] = 0.0f;
        else if (u < p[0]) o[i] = 1.0f;
      }
      break;
    case CorruptionKind::BoxBlur: {
      std::vector<float> blurred(HW);
      for (std::size_t c = 0; c < C; ++c) {
        box_blur(in + c * HW, blurred.data(), H, W, static_cast<std::size_t>(p[0]));
        for (std::size_t i = 0; i < HW; ++i)
          o[c * HW + i] = clamp01((1 - p[1]) * in[c * HW + i] + p[1] * blurred[i]);
      }
      break;
    }
    case CorruptionKind::Brightness:
      for (std::size_t i = 0; i < out.size(); ++i) o[i] = clamp01(in[i] + p[0]);
      break;
    case CorruptionKind::Contrast:
      for (std::size_t c = 0; c < C; ++c) {
        double mean = 0;
        for (std::size_t i = 0; i < HW; ++i) mean += in[c * HW + i];
        mean /= static_cast<double>(HW);
        for (std::size_t i = 0; i < HW; ++i) o[c * HW + i] = clamp01((in[c * HW + i] - mean) * p[0] + mean);
      }
      break;
    case CorruptionKind::Pixelate: {
      const std::size_t b = static_cast<std::size_t>(p[0]);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y0 = 0; y0 < H; y0 += b)
          for (std::size_t x0 = 0; x0 < W; x0 += b) {
            const std::size_t y1 = std::min(H, y0 + b), x1 = std::min(W, x0 + b);
            double s = 0;
            for (std::size_t y = y0; y < y1; ++y)
              for (std::size_t x = x0; x < x1; ++x) s += in[c * HW + y * W + x];
            const float m = clamp01(s / static_cast<double>((y1 - y0) * (x1 - x0)));
            for (std::size_t y = y0; y < y1; ++y)
              for (std::size_t x = x0; x < x1; ++x) o[c * HW + y * W + x] = m;
          }
      break;
    }
    case CorruptionKind::Saturate:
      if (C != 3) break;
      for (std::size_t i = 0; i < HW; ++i) {
        double h, s, v, r, g, b;
        rgb_to_hsv(in[i], in[HW + i], in[2 * HW + i], h, s, v);
        s = std::clamp(s * p[0] + p[1], 0.0, 1.0);
        hsv_to_rgb(h, s, v, r, g, b);
        o[i] = clamp01(r), o[HW + i] = clamp01(g), o[2 * HW + i] = clamp01(b);
      }
      break;
  }
  return out;
}

Dataset corrupt_dataset(const Dataset& data, const CorruptionSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Shape sample = data.sample_shape();
  require(sample.size() == 3, ErrorCode::Shape, "corrupt_dataset: needs (N, C, H, W) images");
  Dataset out = data;
  const std::size_t per = data.sample_size();
  const std::uint64_t key = static_cast<std::uint64_t>(spec.kind) * 16 + static_cast<std::uint64_t>(spec.severity);
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor<float> img(sample, std::vector<float>(data.images.data() + i * per, data.images.data() + (i + 1) * per));
    Rng rng = substream(seed, "corrupt", i, key);
    const Tensor<float> c = corrupt(img, spec, rng);
    std::copy(c.data(), c.data() + per, out.images.data() + i * per);
  }
  return out;
}

}  // namespace entprop
