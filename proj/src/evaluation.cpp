// SPDX-License-Identifier: Apache-2.0
#include "entprop/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "entprop/augment.hpp"
#include "entprop/io.hpp"
#include "entprop/selection.hpp"

namespace entprop {

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  require(logits.rank() == 2, ErrorCode::Shape, "argmax_rows: expected (N, C), got " + shape_str(logits.shape()));
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  std::vector<int> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = logits.data() + n * C;
    out[n] = static_cast<int>(std::max_element(row, row + C) - row);  // first maximum
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> rows_as(const Tensor<float>& images, std::size_t begin, std::size_t end) {
  Shape s = images.shape();
  const std::size_t per = images.size() / s[0];
  s[0] = end - begin;
  return Tensor<T>(s, std::vector<T>(images.data() + begin * per, images.data() + end * per));
}

template <typename T>
Tensor<float> stack_float(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), ErrorCode::InvalidArgument, "stack: nothing to stack");
  Shape s = parts.front().shape();
  s[0] = 0;
  std::vector<float> values;
  for (const auto& p : parts) {
    s[0] += p.dim(0);
    values.insert(values.end(), p.values().begin(), p.values().end());
  }
  return Tensor<float>(s, std::move(values));
}

template <typename T>
Tensor<T> features_dataset(Model<T>& model, const Tensor<float>& images, std::size_t batch_size) {
  std::vector<Tensor<T>> parts;
  for (std::size_t b = 0; b < images.dim(0); b += batch_size) {
    const std::size_t e = std::min(images.dim(0), b + batch_size);
    parts.push_back(penultimate_features(model, rows_as<T>(images, b, e), Route::Main, Mode::Eval));
  }
  const Tensor<float> f = stack_float(parts);
  return f.template cast<T>();
}

double fraction_correct(const std::vector<int>& pred, const std::vector<int>& labels) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

}  // namespace

template <typename T>
Tensor<T> predict_dataset(Model<T>& model, const Tensor<float>& images, std::size_t batch_size) {
  require(batch_size >= 1, ErrorCode::InvalidArgument, "predict_dataset: batch_size must be positive");
  std::vector<Tensor<T>> parts;
  for (std::size_t b = 0; b < images.dim(0); b += batch_size) {
    const std::size_t e = std::min(images.dim(0), b + batch_size);
    parts.push_back(predict(model, rows_as<T>(images, b, e), Route::Main, Mode::Eval));
  }
  return stack_float(parts).template cast<T>();
}

template <typename T>
double standard_accuracy(Model<T>& model, const Dataset& test) {
  require(test.size() > 0, ErrorCode::InvalidArgument, "standard_accuracy: empty test set");
  return fraction_correct(argmax_rows(predict_dataset(model, test.images)), test.labels);
}

template <typename T>
double robust_accuracy(Model<T>& model, const Dataset& test, std::span<const CorruptionSpec> suite, std::uint64_t seed) {
  require(!suite.empty(), ErrorCode::InvalidArgument, "robust_accuracy: empty corruption suite");
  double total = 0.0;
  for (const CorruptionSpec& spec : suite) total += standard_accuracy(model, corrupt_dataset(test, spec, seed));
  return total / static_cast<double>(suite.size());
}

double h_score(double sa, double ra) {
  require(sa >= 0.0 && ra >= 0.0, ErrorCode::InvalidArgument, "h_score: accuracies must be non-negative");
  if (sa + ra == 0.0) return 0.0;
  return 2.0 * sa * ra / (sa + ra);
}

template <typename T>
double pgd_robust_accuracy(Model<T>& model, const Dataset& test, const PgdEvalConfig& cfg) {
  require(test.size() > 0, ErrorCode::InvalidArgument, "pgd_robust_accuracy: empty test set");
  require(cfg.epsilon >= 0.0, ErrorCode::InvalidArgument, "pgd_robust_accuracy: epsilon must be non-negative");
  if (cfg.epsilon == 0.0) return standard_accuracy(model, test);
  // A step larger than the ball only overshoots into the projection.
  const AttackConfig attack{cfg.steps, cfg.epsilon, std::min(cfg.alpha, cfg.epsilon), false};
  attack.validate();
  std::vector<int> pred;
  for (std::size_t b = 0; b < test.size(); b += cfg.batch_size) {
    const std::size_t e = std::min(test.size(), b + cfg.batch_size);
    const Tensor<T> x = rows_as<T>(test.images, b, e);
    const LabelSpec labels =
        LabelSpec::plain(std::vector<int>(test.labels.begin() + static_cast<std::ptrdiff_t>(b),
                                          test.labels.begin() + static_cast<std::ptrdiff_t>(e)));
    const auto adv = pgd(model, x, labels, attack, static_cast<const Tensor<T>*>(nullptr),
                         AttackOptions{Route::Main, AttackBNMode::Eval});
    const auto p = argmax_rows(predict(model, adv.x_adv, Route::Main, Mode::Eval));
    pred.insert(pred.end(), p.begin(), p.end());
  }
  return fraction_correct(pred, test.labels);
}

// ---- Frechet -------------------------------------------------------------------

template <typename T>
GaussianSummary fit_gaussian(const Tensor<T>& features, double ridge) {
  require(features.rank() == 2, ErrorCode::Shape, "fit_gaussian: expected (N, D), got " + shape_str(features.shape()));
  const std::size_t N = features.dim(0), D = features.dim(1);
  require(N >= 2, ErrorCode::InvalidArgument, "fit_gaussian: need at least 2 rows");
  Eigen::MatrixXd X(N, D);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < D; ++j) X(i, j) = static_cast<double>(features[i * D + j]);
  const Eigen::RowVectorXd mu = X.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mu;
  Eigen::MatrixXd S = (Xc.transpose() * Xc) / static_cast<double>(N - 1);
  S = 0.5 * (S + S.transpose());
  if (N < D + 1) S.diagonal().array() += ridge;

  GaussianSummary g;
  g.count = N;
  g.mean.assign(mu.data(), mu.data() + D);
  g.covariance.resize(D * D);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) g.covariance[i * D + j] = S(i, j);
  return g;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  require(es.info() == Eigen::Success, ErrorCode::Numeric, "frechet: eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd as_matrix(const GaussianSummary& g) {
  const auto D = static_cast<Eigen::Index>(g.dim());
  require(g.covariance.size() == g.dim() * g.dim(), ErrorCode::Shape, "frechet: covariance is not (D, D)");
  Eigen::MatrixXd m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      g.covariance.data(), D, D);
  return 0.5 * (m + m.transpose());
}

}  // namespace

double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  require(a.dim() == b.dim() && a.dim() > 0, ErrorCode::Shape, "frechet: dimension mismatch");
  const Eigen::MatrixXd Sa = as_matrix(a), Sb = as_matrix(b);
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) d2 += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  const Eigen::MatrixXd ra = psd_sqrt(Sa);
  const Eigen::MatrixXd inner = ra * Sb * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, ErrorCode::Numeric, "frechet: eigendecomposition failed");
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  d2 += Sa.trace() + Sb.trace() - 2.0 * cross;
  return std::max(0.0, d2);
}

template <typename T>
Tensor<float> transform_inputs(Model<T>& model, const Dataset& data, const TransformConfig& cfg) {
  require(cfg.batch_size >= 2, ErrorCode::InvalidArgument, "transform: batch_size must be at least 2");
  Rng mix_rng = substream(cfg.seed, "mixup");
  std::vector<Tensor<T>> parts;
  for (const Batch& batch : batches(data, cfg.batch_size, cfg.seed, 0)) {
    if (batch.size() < 2) continue;
    const Tensor<T> x = batch.x.template cast<T>();
    switch (cfg.kind) {
      case TransformKind::MixUp:
        parts.push_back(mixup(x, batch.labels, batch.sample_ids, cfg.mixup_alpha, mix_rng).x_m);
        break;
      case TransformKind::Pgd: {
        const AttackConfig attack{cfg.n, cfg.epsilon, cfg.alpha, false};
        parts.push_back(pgd(model, x, LabelSpec::plain(batch.labels), attack, static_cast<const Tensor<T>*>(nullptr),
                            AttackOptions{Route::Main, AttackBNMode::Eval})
                            .x_adv);
        break;
      }
      case TransformKind::EntProp: {
        auto mb = mixup(x, batch.labels, batch.sample_ids, cfg.mixup_alpha, mix_rng);
        const LabelSpec labels{mb.y_a, mb.y_b, mb.lambda};
        const Tensor<T> logits = predict(model, mb.x_m, Route::Main, Mode::Eval);
        const auto rows = top_k_select(uncertainty_score(logits, std::span<const int>(mb.y_a), UncertaintyMetric::Entropy),
                                       cfg.k);
        if (rows.empty()) break;
        const Tensor<T> grad = input_gradient(model, mb.x_m, labels, AttackOptions{Route::Main, AttackBNMode::Eval});
        LabelSpec sub;
        for (std::size_t i : rows) sub.y_a.push_back(labels.y_a[i]);
        if (labels.mixed()) {
          for (std::size_t i : rows) sub.y_b.push_back(labels.y_b[i]);
          sub.lambda = labels.lambda;
        }
        const Tensor<T> seed = gather_rows(grad, rows);
        const AttackConfig attack{cfg.n, cfg.epsilon, cfg.alpha, true};
        parts.push_back(
            pgd(model, gather_rows(mb.x_m, rows), sub, attack, &seed, AttackOptions{Route::Aux, AttackBNMode::Eval})
                .x_adv);
        break;
      }
    }
  }
  return stack_float(parts);
}

template <typename T>
double feature_frechet(Model<T>& model, const Dataset& data, const TransformConfig& cfg) {
  const Tensor<T> clean = features_dataset(model, data.images, 256);
  const Tensor<T> moved = features_dataset(model, transform_inputs(model, data, cfg), 256);
  return frechet_distance(fit_gaussian(clean), fit_gaussian(moved));
}

// ---- diagnostics -----------------------------------------------------------------

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

std::string cell(double v) { return std::isfinite(v) ? format_number(v) : std::string(); }
std::string cell(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

}  // namespace

std::string entropy_csv(const std::vector<EpochRecord>& records) {
  std::string out = "epoch,clean_mean,clean_sd,transformed_mean,transformed_sd\n";
  for (const EpochRecord& r : records)
    out += std::to_string(r.epoch) + "," + cell(r.clean_entropy.mean()) + "," + cell(r.clean_entropy.sd()) + "," +
           cell(r.transformed_entropy.mean()) + "," + cell(r.transformed_entropy.sd()) + "\n";
  return out;
}

std::string metrics_csv(const std::vector<EpochRecord>& records) {
  std::string out = "epoch,sa,ra,h_score\n";
  for (const EpochRecord& r : records)
    out += std::to_string(r.epoch) + "," + cell(r.sa) + "," + cell(r.ra) + "," + cell(r.h_score) + "\n";
  return out;
}

void export_diagnostics(const RunResult& run, const std::filesystem::path& dir) {
  write_file_atomic(dir / "entropy_per_epoch.csv", entropy_csv(run.records));
  write_file_atomic(dir / "selection_bias.csv", run.selection.to_csv());
  write_file_atomic(dir / "metrics.csv", metrics_csv(run.records));
}

#define ENTPROP_INSTANTIATE_EVAL(T)                                                                             \
  template std::vector<int> argmax_rows(const Tensor<T>&);                                                    \
  template Tensor<T> predict_dataset(Model<T>&, const Tensor<float>&, std::size_t);                           \
  template double standard_accuracy(Model<T>&, const Dataset&);                                               \
  template double robust_accuracy(Model<T>&, const Dataset&, std::span<const CorruptionSpec>, std::uint64_t); \
  template double pgd_robust_accuracy(Model<T>&, const Dataset&, const PgdEvalConfig&);                       \
  template GaussianSummary fit_gaussian(const Tensor<T>&, double);                                            \
  template Tensor<float> transform_inputs(Model<T>&, const Dataset&, const TransformConfig&);                 \
  template double feature_frechet(Model<T>&, const Dataset&, const TransformConfig&);

ENTPROP_INSTANTIATE_EVAL(float)
ENTPROP_INSTANTIATE_EVAL(double)

}  // namespace entprop
