#ifndef REVFACE_PCA_HPP_
#define REVFACE_PCA_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "revface/image.hpp"

namespace revface {

/// Principal components of flattened images. Rows of `components` are
/// orthonormal directions, ordered by non-increasing explained variance.
struct PcaModel {
  int height = 0;
  int width = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // C x D
  Eigen::VectorXd explained_variance;

  int component_count() const { return static_cast<int>(components.rows()); }
  Eigen::Index dimension() const { return mean.size(); }
};

inline Eigen::VectorXd flatten(const Image& img) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(img.size()));
  for (std::size_t i = 0; i < img.size(); ++i) v[i] = img.data()[i];
  return v;
}

inline Image unflatten(const Eigen::VectorXd& v, int height, int width) {
  Image img(height, width);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img.data()[i] = static_cast<float>(v[static_cast<Eigen::Index>(i)]);
  }
  return img;
}

/// Mean-centred PCA through the eigendecomposition of the n x n Gram matrix.
/// Directions with no remaining variance (components >= rank) are completed
/// with an orthonormal basis so the rows stay orthonormal. Each component's
/// largest-magnitude entry is positive.
inline PcaModel fit_pca(std::span<const Image> images, int components) {
  const auto n = static_cast<Eigen::Index>(images.size());
  if (n < 1 || components < 1 || components > n) {
    throw Error("fit_pca: insufficient images (" + std::to_string(n) +
                ") for " + std::to_string(components) + " components");
  }
  PcaModel model;
  model.height = images.front().height();
  model.width = images.front().width();
  const auto d = static_cast<Eigen::Index>(images.front().size());
  if (components > d) throw Error("fit_pca: more components than pixels");

  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    require_same_shape(images.front(), images[i], "fit_pca");
    x.row(i) = flatten(images[i]).transpose();
  }
  model.mean = x.colwise().mean().transpose();
  x.rowwise() -= model.mean.transpose();

  const Eigen::MatrixXd gram = x * x.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
  if (solver.info() != Eigen::Success) {
    throw Error("fit_pca: eigendecomposition failed");
  }
  const Eigen::VectorXd& evals = solver.eigenvalues();  // ascending
  const double largest = std::max(evals[n - 1], 0.0);
  const double cutoff = std::max(1e-10 * largest, 1e-12);
  const double dof = n > 1 ? static_cast<double>(n - 1) : 1.0;

  model.components.setZero(components, d);
  model.explained_variance.setZero(components);
  int filled = 0;
  for (Eigen::Index i = n - 1; i >= 0 && filled < components; --i) {
    if (evals[i] <= cutoff) break;
    Eigen::VectorXd dir = x.transpose() * solver.eigenvectors().col(i);
    dir /= dir.norm();
    model.components.row(filled) = dir.transpose();
    model.explained_variance[filled] = evals[i] / dof;
    ++filled;
  }
  // Complete with standard-basis vectors orthogonalised against the rest.
  for (Eigen::Index axis = 0; filled < components && axis < d; ++axis) {
    Eigen::VectorXd dir = Eigen::VectorXd::Unit(d, axis);
    for (int pass = 0; pass < 2; ++pass) {
      for (int j = 0; j < filled; ++j) {
        dir -= model.components.row(j).transpose() *
               model.components.row(j).dot(dir);
      }
    }
    const double norm = dir.norm();
    if (norm < 1e-6) continue;
    model.components.row(filled) = (dir / norm).transpose();
    ++filled;
  }
  for (int j = 0; j < components; ++j) {
    Eigen::Index arg = 0;
    model.components.row(j).cwiseAbs().maxCoeff(&arg);
    if (model.components(j, arg) < 0) model.components.row(j) *= -1.0;
  }
  return model;
}

/// Coefficients of the mean-centred flattened image on the components.
inline Eigen::VectorXd embed(const PcaModel& pca, const Image& img) {
  if (img.height() != pca.height || img.width() != pca.width) {
    throw Error("embed: image shape does not match the PCA model");
  }
  return pca.components * (flatten(img) - pca.mean);
}

inline Eigen::VectorXd reconstruct_flat(const PcaModel& pca,
                                        const Eigen::VectorXd& coeffs) {
  return pca.mean + pca.components.transpose() * coeffs;
}

inline Image reconstruct(const PcaModel& pca, const Eigen::VectorXd& coeffs) {
  return unflatten(reconstruct_flat(pca, coeffs), pca.height, pca.width);
}

}  // namespace revface

#endif  // REVFACE_PCA_HPP_
