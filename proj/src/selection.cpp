// SPDX-License-Identifier: Apache-2.0
#include "entprop/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "entprop/autograd.hpp"
#include "entprop/io.hpp"

namespace entprop {

std::string to_string(UncertaintyMetric m) {
  switch (m) {
    case UncertaintyMetric::Entropy: return "entropy";
    case UncertaintyMetric::CrossEntropy: return "cross_entropy";
    case UncertaintyMetric::Confidence: return "confidence";
    case UncertaintyMetric::LogitMargin: return "logit_margin";
  }
  return "entropy";
}

UncertaintyMetric parse_uncertainty_metric(const std::string& s) {
  if (s == "entropy") return UncertaintyMetric::Entropy;
  if (s == "cross_entropy") return UncertaintyMetric::CrossEntropy;
  if (s == "confidence") return UncertaintyMetric::Confidence;
  if (s == "logit_margin") return UncertaintyMetric::LogitMargin;
  fail(ErrorCode::Config, "unknown uncertainty metric '" + s + "'");
}

bool needs_labels(UncertaintyMetric m) {
  return m == UncertaintyMetric::CrossEntropy || m == UncertaintyMetric::LogitMargin;
}

template <typename T>
std::vector<double> entropy(const Tensor<T>& probs) {
  require(probs.rank() == 2, ErrorCode::Shape, "entropy: expected (N, C), got " + shape_str(probs.shape()));
  const std::size_t N = probs.dim(0), C = probs.dim(1);
  std::vector<double> h(N);
  for (std::size_t n = 0; n < N; ++n) {
    double total = 0, acc = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const double p = probs[n * C + c];
      require(p >= 0.0, ErrorCode::InvalidArgument, "entropy: negative probability");
      total += p;
      if (p > 0.0) acc -= p * std::log(p);
    }
    require(std::abs(total - 1.0) <= 1e-5, ErrorCode::InvalidArgument, "entropy: row does not sum to 1");
    h[n] = acc;
  }
  return h;
}

namespace {

double score_row(const double* p, std::size_t C, int label, UncertaintyMetric metric) {
  switch (metric) {
    case UncertaintyMetric::Entropy: {
      double acc = 0;
      for (std::size_t c = 0; c < C; ++c)
        if (p[c] > 0.0) acc -= p[c] * std::log(p[c]);
      return acc;
    }
    case UncertaintyMetric::Confidence: return -*std::max_element(p, p + C);
    case UncertaintyMetric::CrossEntropy: return -std::log(std::max(p[label], 1e-300));
    case UncertaintyMetric::LogitMargin: {
      double best = -1.0;
      for (std::size_t c = 0; c < C; ++c)
        if (static_cast<int>(c) != label) best = std::max(best, p[c]);
      return best - p[label];
    }
  }
  return 0.0;
}

template <typename T>
std::vector<double> probs_double(const Tensor<T>& logits) {
  require(logits.rank() == 2, ErrorCode::Shape, "uncertainty: expected (N, C) logits, got " + shape_str(logits.shape()));
  const auto p = softmax_rows(logits.template cast<double>());
  return p.storage();
}

void check_labels(std::span<const int> labels, std::size_t N, std::size_t C, UncertaintyMetric metric) {
  if (!needs_labels(metric)) return;
  require(!labels.empty(), ErrorCode::InvalidArgument, "uncertainty: metric '" + to_string(metric) + "' needs labels");
  require(labels.size() == N, ErrorCode::Shape, "uncertainty: label count differs from batch size");
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < C, ErrorCode::InvalidArgument, "uncertainty: label out of range");
}

}  // namespace

template <typename T>
std::vector<double> uncertainty_score(const Tensor<T>& logits, std::span<const int> labels, UncertaintyMetric metric) {
  const auto p = probs_double(logits);
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  check_labels(labels, N, C, metric);
  std::vector<double> out(N);
  for (std::size_t n = 0; n < N; ++n) out[n] = score_row(p.data() + n * C, C, needs_labels(metric) ? labels[n] : 0, metric);
  return out;
}

template <typename T>
std::vector<double> uncertainty_score_mixed(const Tensor<T>& logits, std::span<const int> y_a, std::span<const int> y_b,
                                            double lambda, UncertaintyMetric metric) {
  if (!needs_labels(metric)) return uncertainty_score(logits, y_a, metric);
  const auto a = uncertainty_score(logits, y_a, metric);
  const auto b = uncertainty_score(logits, y_b, metric);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = lambda * a[i] + (1.0 - lambda) * b[i];
  return out;
}

std::size_t selection_size(double k, std::size_t n) {
  require(k >= 0.0 && k <= 1.0, ErrorCode::InvalidArgument, "selection: k must lie in [0, 1]");
  const double m = std::floor(k * static_cast<double>(n) + 0.5);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, m)));
}

std::vector<std::size_t> top_k_select(std::span<const double> scores, double k) {
  require(!scores.empty(), ErrorCode::InvalidArgument, "top_k_select: empty score list");
  const std::size_t m = selection_size(k, scores.size());
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(m);
  return idx;
}

void SelectionCounter::record(std::span<const std::int64_t> source_indices) {
  for (std::int64_t id : source_indices) {
    require(id >= 0 && static_cast<std::size_t>(id) < counts_.size(), ErrorCode::InvalidArgument,
            "selection counter: sample index " + std::to_string(id) + " out of range");
    ++counts_[static_cast<std::size_t>(id)];
  }
}

std::map<std::uint64_t, std::uint64_t> SelectionCounter::histogram() const {
  std::map<std::uint64_t, std::uint64_t> h;
  for (std::uint64_t c : counts_) ++h[c];
  return h;
}

std::string SelectionCounter::to_csv() const {
  std::ostringstream o;
  o << "sample_index,selection_count\n";
  for (std::size_t i = 0; i < counts_.size(); ++i) o << i << "," << counts_[i] << "\n";
  return o.str();
}

void SelectionCounter::write_csv(const std::filesystem::path& path) const { write_file_atomic(path, to_csv()); }

template std::vector<double> entropy(const Tensor<float>&);
template std::vector<double> entropy(const Tensor<double>&);
template std::vector<double> uncertainty_score(const Tensor<float>&, std::span<const int>, UncertaintyMetric);
template std::vector<double> uncertainty_score(const Tensor<double>&, std::span<const int>, UncertaintyMetric);
template std::vector<double> uncertainty_score_mixed(const Tensor<float>&, std::span<const int>, std::span<const int>,
                                                     double, UncertaintyMetric);
template std::vector<double> uncertainty_score_mixed(const Tensor<double>&, std::span<const int>, std::span<const int>,
                                                     double, UncertaintyMetric);

}  // namespace entprop
