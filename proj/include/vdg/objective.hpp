#pragma once

// The three-term embedding loss: invariance (MSE between views), a hinge on
// per-dimension standard deviation, and squared off-diagonal covariance. The
// regularization terms apply to each batch independently.

#include "vdg/tensor.hpp"

namespace vdg {

struct VICRegConfig {
  float mu = 25.0f;     // variance weight
  float nu = 25.0f;     // covariance weight
  float eta = 1.0f;     // invariance weight
  float gamma = 1.0f;   // target standard deviation
  float eps = 1e-4f;    // variance stabilizer

  void validate() const {
    if (mu < 0 || nu < 0 || eta < 0 || gamma < 0)
      throw ConfigError("vicreg: weights must be non-negative");
    if (!(eps > 0)) throw ConfigError("vicreg: eps must be positive");
  }

  // weights as printed in the text this follows
  static VICRegConfig paper() { return VICRegConfig{}; }
  // the original VICReg recipe: invariance 25, variance 25, covariance 1
  static VICRegConfig reference() {
    VICRegConfig c;
    c.mu = 25.0f;
    c.nu = 1.0f;
    c.eta = 25.0f;
    return c;
  }
};

template <class T>
void require_embedding_batch(const TensorT<T>& z, const char* op) {
  if (z.rank() != 2) throw ContractError(std::string(op) + ": expects [n,d] embeddings");
  if (z.dim(0) < 2) throw ContractError(std::string(op) + ": needs a batch of at least 2");
}

// (1/d) sum_j max(0, gamma - sqrt(Var(Z_:,j) + eps)), unbiased column variance
template <class T>
TensorT<T> variance_term(const TensorT<T>& z, const VICRegConfig& cfg) {
  require_embedding_batch(z, "variance_term");
  int n = z.dim(0);
  auto centered = center_columns(z);
  auto col_var = affine(column_sums(mul(centered, centered)),
                        T(1) / static_cast<T>(n - 1), T(0));
  auto col_std = sqrt_elem(affine(col_var, T(1), static_cast<T>(cfg.eps)));
  auto hinge = relu(affine(col_std, T(-1), static_cast<T>(cfg.gamma)));
  return mean(hinge);
}

// (1/d) sum_{i != j} C_ij^2 with C the unbiased covariance of the batch
template <class T>
TensorT<T> covariance_term(const TensorT<T>& z) {
  require_embedding_batch(z, "covariance_term");
  int n = z.dim(0), d = z.dim(1);
  auto centered = center_columns(z);
  auto cov = affine(matmul(transpose2d(centered), centered),
                    T(1) / static_cast<T>(n - 1), T(0));
  std::vector<T> off(static_cast<size_t>(d) * d, T(1));
  for (int i = 0; i < d; ++i) off[static_cast<size_t>(i) * d + i] = T(0);
  auto off_mask = TensorT<T>::from({d, d}, std::move(off));
  return affine(sum(mul(mul(cov, cov), off_mask)), T(1) / static_cast<T>(d), T(0));
}

// (1/n) sum_i ||z1_i - z2_i||^2
template <class T>
TensorT<T> invariance_term(const TensorT<T>& z1, const TensorT<T>& z2) {
  if (z1.shape() != z2.shape())
    throw ContractError("invariance_term: embedding shapes differ");
  if (z1.rank() != 2) throw ContractError("invariance_term: expects [n,d] embeddings");
  int n = z1.dim(0);
  auto diff = sub(z1, z2);
  return affine(sum(mul(diff, diff)), T(1) / static_cast<T>(n), T(0));
}

template <class T>
struct VICRegTerms {
  TensorT<T> total, invariance, variance, covariance;
};

template <class T>
VICRegTerms<T> vicreg_loss(const TensorT<T>& z1, const TensorT<T>& z2,
                           const VICRegConfig& cfg) {
  cfg.validate();
  if (z1.shape() != z2.shape())
    throw ContractError("vicreg_loss: embedding shapes differ");
  VICRegTerms<T> terms;
  terms.invariance = invariance_term(z1, z2);
  terms.variance = add(variance_term(z1, cfg), variance_term(z2, cfg));
  terms.covariance = add(covariance_term(z1), covariance_term(z2));
  terms.total = add(add(affine(terms.variance, static_cast<T>(cfg.mu), T(0)),
                        affine(terms.covariance, static_cast<T>(cfg.nu), T(0))),
                    affine(terms.invariance, static_cast<T>(cfg.eta), T(0)));
  return terms;
}

}  // namespace vdg
