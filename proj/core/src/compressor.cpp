#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scd2te/csc.hpp"
#include "scd2te/parallel.hpp"

namespace scd2te {

Compressor::Compressor(int in_channels, int out_channels, std::vector<double> projection,
                       std::vector<double> mean)
    : in_(in_channels), out_(out_channels), projection_(std::move(projection)),
      mean_(std::move(mean)) {
  if (in_ < 1 || out_ < 1) throw InvalidArgument("compressor channel counts must be >= 1");
  if (out_ > in_) throw InvalidArgument("compressor cannot expand channels");
  if (projection_.size() != static_cast<std::size_t>(in_) * out_) {
    throw InvalidArgument("projection size does not match out x in");
  }
  if (mean_.size() != static_cast<std::size_t>(in_)) {
    throw InvalidArgument("mean length does not match in_channels");
  }
  for (int a = 0; a < out_; ++a) {
    for (int b = a; b < out_; ++b) {
      const auto u = row(a);
      const auto v = row(b);
      const double dot = std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
      const double want = a == b ? 1.0 : 0.0;
      if (!(std::abs(dot - want) <= 1e-6)) {
        throw InvalidArgument("compressor projection rows are not orthonormal");
      }
    }
  }
  bias_.resize(out_);
  for (int r = 0; r < out_; ++r) {
    double s = 0.0;
    const auto w = row(r);
    for (int i = 0; i < in_; ++i) s += w[i] * mean_[i];
    bias_[r] = -s;
  }
}

void Compressor::apply(std::span<const double> in, std::span<double> out) const {
  if (in.size() != static_cast<std::size_t>(in_) || out.size() != static_cast<std::size_t>(out_)) {
    throw InvalidArgument("compressor apply: vector length mismatch");
  }
  for (int r = 0; r < out_; ++r) {
    const double* w = projection_.data() + static_cast<std::size_t>(r) * in_;
    double s = 0.0;
    for (int i = 0; i < in_; ++i) {
      if (in[i] != 0.0) s += w[i] * in[i];
    }
    out[r] = s + bias_[r];
  }
}

Compressor fit_compressor(const FeatureMaps& pool, int out_channels) {
  const int in = pool.channels();
  if (out_channels < 1) throw InvalidArgument("out_channels must be >= 1");
  if (out_channels > in) {
    throw InvalidArgument("out_channels (" + std::to_string(out_channels) +
                          ") exceeds in_channels (" + std::to_string(in) + ")");
  }
  const std::size_t n = pool.pixel_count();
  if (n < static_cast<std::size_t>(out_channels)) {
    throw InvalidArgument("compressor pool has fewer pixels than out_channels");
  }

  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Matrix> samples(pool.codes().data(), static_cast<Eigen::Index>(n), in);
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Matrix centred = samples.rowwise() - mean;
  const Eigen::MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw InternalError("covariance eigendecomposition failed");

  // Eigen returns ascending eigenvalues; take the largest.
  std::vector<double> projection(static_cast<std::size_t>(out_channels) * in);
  std::vector<double> variance(out_channels);
  for (int k = 0; k < out_channels; ++k) {
    const Eigen::Index col = in - 1 - k;
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    // Canonical sign: largest-magnitude entry positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    v.normalize();
    for (int i = 0; i < in; ++i) projection[static_cast<std::size_t>(k) * in + i] = v(i);
    variance[k] = std::max(0.0, eig.eigenvalues()(col));
  }
  std::vector<double> mu(mean.data(), mean.data() + in);
  Compressor comp(in, out_channels, std::move(projection), std::move(mu));
  comp.set_explained_variance(std::move(variance));
  return comp;
}

FeatureMaps apply_compressor(const Compressor& comp, const FeatureMaps& pool) {
  if (pool.channels() != comp.in_channels()) {
    throw InvalidArgument("pool has " + std::to_string(pool.channels()) +
                          " channels, compressor expects " + std::to_string(comp.in_channels()));
  }
  FeatureMaps out(pool.width(), pool.height(), comp.out_channels(), pool.layer_index());
  parallel_for(pool.pixel_count(), [&](std::size_t p) {
    comp.apply(pool.pixel(p),
               out.codes().subspan(p * comp.out_channels(),
                                   static_cast<std::size_t>(comp.out_channels())));
  });
  return out;
}

}  // namespace scd2te
