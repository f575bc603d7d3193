#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlsl/sampling.hpp"

namespace mlsl {

/// Pooled per-group feature statistics plus the retained component count.
/// Groups pool features of the same kind: all level-set values together, all
/// velocity components together, and so on.
struct TrainingStats {
  double mu_phi = 0.0, sigma_phi = 1.0;      // phi_a, 4 corners, phi_d
  double mu_u = 0.0, sigma_u = 1.0;          // u_hat + corner velocities, both components
  double mu_d = 0.0, sigma_d = 1.0;          // backtracking distance
  double mu_coords = 0.0, sigma_coords = 1.0;  // cell-local departure coordinates
  double mu_xxyy = 0.0, sigma_xxyy = 1.0;    // second derivatives
  double mu_kappa = 0.0, sigma_kappa = 1.0;  // curvature
  int n_components = 17;
};

struct PcaModel {
  std::array<double, DataPacket::n_features> mean{};
  std::vector<std::array<double, DataPacket::n_features>> components;  // orthonormal rows
  std::vector<double> eigenvalues;                                     // descending

  std::size_t rank() const { return components.size(); }
};

namespace detail {

// Feature-group membership of each flattened packet slot, matching the
// storage order of DataPacket::flatten().
enum class FeatureGroup { phi, u, d, coords, xxyy, kappa };

inline const std::array<FeatureGroup, DataPacket::n_features>& feature_groups() {
  using G = FeatureGroup;
  static const std::array<G, DataPacket::n_features> groups = {
      G::phi,    G::u, G::u, G::d,    G::coords, G::coords, G::phi,  G::phi,
      G::phi,    G::phi, G::u, G::u,  G::u,      G::u,      G::u,    G::u,
      G::u,      G::u, G::xxyy, G::xxyy, G::kappa, G::phi};
  return groups;
}

// h-scaled feature vector of Alg.-7 form: level-set values divide by h,
// second derivatives multiply by h^2, curvature multiplies by h, distance
// divides by h; cell-local coordinates are stored h-relative already.
inline std::array<double, DataPacket::n_features> scaled_features(const DataPacket& p, double h) {
  DataPacket q = p;
  q.phi_a /= h;
  for (double& v : q.phi_corners) v /= h;
  q.phi_d /= h;
  q.phixx_d *= h * h;
  q.phiyy_d *= h * h;
  q.kappa_a *= h;
  q.d /= h;
  return q.flatten();
}

inline std::pair<double, double> group_stats(const TrainingStats& st, FeatureGroup g) {
  switch (g) {
    case FeatureGroup::phi: return {st.mu_phi, st.sigma_phi};
    case FeatureGroup::u: return {st.mu_u, st.sigma_u};
    case FeatureGroup::d: return {st.mu_d, st.sigma_d};
    case FeatureGroup::coords: return {st.mu_coords, st.sigma_coords};
    case FeatureGroup::xxyy: return {st.mu_xxyy, st.sigma_xxyy};
    default: return {st.mu_kappa, st.sigma_kappa};
  }
}

inline std::array<double, DataPacket::n_features> standardize(
    const std::array<double, DataPacket::n_features>& x, const TrainingStats& st) {
  std::array<double, DataPacket::n_features> z;
  const auto& groups = feature_groups();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto [mu, sigma] = group_stats(st, groups[i]);
    z[i] = (x[i] - mu) / sigma;
  }
  return z;
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major, n x n).
/// Eigenvalues land on the diagonal; V accumulates the eigenvectors in its
/// columns.  Deterministic sweep order.
inline void jacobi_eigen(std::vector<double>& a, std::vector<double>& v, std::size_t n) {
  v.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::fabs(apq) < 1e-300) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
}

}  // namespace detail

/// Fits the preprocessing pipeline on curvature-normalized, reoriented
/// training packets: h-scaling, pooled group standardization, then PCA on the
/// standardized 22-vectors.  Whitening factors are the inverse root
/// eigenvalues.  Groups with zero variance abort the fit.
inline std::pair<TrainingStats, PcaModel> fit_preprocess(const std::vector<DataPacket>& packets,
                                                         double h, int n_components) {
  constexpr std::size_t F = DataPacket::n_features;
  if (n_components < 1 || n_components > static_cast<int>(F))
    throw std::invalid_argument("fit_preprocess: n_components out of range");
  if (packets.size() < static_cast<std::size_t>(n_components) + 1)
    throw std::invalid_argument("fit_preprocess: not enough packets");

  std::vector<std::array<double, F>> scaled;
  scaled.reserve(packets.size());
  for (const DataPacket& p : packets) scaled.push_back(detail::scaled_features(p, h));

  TrainingStats st;
  st.n_components = n_components;
  {
    using G = detail::FeatureGroup;
    const auto& groups = detail::feature_groups();
    for (G g : {G::phi, G::u, G::d, G::coords, G::xxyy, G::kappa}) {
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& row : scaled)
        for (std::size_t i = 0; i < F; ++i)
          if (groups[i] == g) {
            sum += row[i];
            ++count;
          }
      const double mu = sum / static_cast<double>(count);
      double ss = 0.0;
      for (const auto& row : scaled)
        for (std::size_t i = 0; i < F; ++i)
          if (groups[i] == g) ss += (row[i] - mu) * (row[i] - mu);
      const double sigma = std::sqrt(ss / static_cast<double>(count));
      static const char* names[] = {"phi", "u", "d", "coords", "xxyy", "kappa"};
      if (!(sigma > 1e-14 * (std::fabs(mu) + 1.0)))
        throw std::runtime_error(std::string("fit_preprocess: zero variance in feature group '") +
                                 names[static_cast<int>(g)] + "'");
      switch (g) {
        case G::phi: st.mu_phi = mu; st.sigma_phi = sigma; break;
        case G::u: st.mu_u = mu; st.sigma_u = sigma; break;
        case G::d: st.mu_d = mu; st.sigma_d = sigma; break;
        case G::coords: st.mu_coords = mu; st.sigma_coords = sigma; break;
        case G::xxyy: st.mu_xxyy = mu; st.sigma_xxyy = sigma; break;
        case G::kappa: st.mu_kappa = mu; st.sigma_kappa = sigma; break;
      }
    }
  }

  // Standardize and accumulate the covariance.
  PcaModel pca;
  const double inv_n = 1.0 / static_cast<double>(packets.size());
  std::vector<std::array<double, F>> z;
  z.reserve(scaled.size());
  for (const auto& row : scaled) z.push_back(detail::standardize(row, st));
  pca.mean.fill(0.0);
  for (const auto& row : z)
    for (std::size_t i = 0; i < F; ++i) pca.mean[i] += row[i] * inv_n;

  std::vector<double> cov(F * F, 0.0);
  for (const auto& row : z)
    for (std::size_t i = 0; i < F; ++i) {
      const double di = row[i] - pca.mean[i];
      for (std::size_t j = i; j < F; ++j) cov[i * F + j] += di * (row[j] - pca.mean[j]);
    }
  for (std::size_t i = 0; i < F; ++i)
    for (std::size_t j = i; j < F; ++j) {
      cov[i * F + j] *= inv_n;
      cov[j * F + i] = cov[i * F + j];
    }

  std::vector<double> vecs;
  detail::jacobi_eigen(cov, vecs, F);

  std::array<std::pair<double, std::size_t>, F> order;
  for (std::size_t i = 0; i < F; ++i) order[i] = {cov[i * F + i], i};
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  const double lambda_max = std::max(order[0].first, 0.0);
  std::size_t selectable = 0;
  for (std::size_t i = 0; i < F; ++i)
    if (order[i].first >= 1e-12 * lambda_max) ++selectable;
  if (static_cast<std::size_t>(n_components) > selectable)
    throw std::runtime_error("fit_preprocess: requested components exceed the usable rank");

  for (int r = 0; r < n_components; ++r) {
    const std::size_t col = order[static_cast<std::size_t>(r)].second;
    std::array<double, F> row;
    for (std::size_t i = 0; i < F; ++i) row[i] = vecs[i * F + col];
    // Deterministic sign: the largest-magnitude entry is positive.
    std::size_t arg = 0;
    for (std::size_t i = 1; i < F; ++i)
      if (std::fabs(row[i]) > std::fabs(row[arg])) arg = i;
    if (row[arg] < 0.0)
      for (double& vv : row) vv = -vv;
    pca.components.push_back(row);
    pca.eigenvalues.push_back(order[static_cast<std::size_t>(r)].first);
  }
  return {st, pca};
}

/// Packet-to-input transform: h-scaling, group standardization, projection
/// onto the retained components, and per-component whitening.
inline std::vector<double> transform_packet(const DataPacket& p, const TrainingStats& st,
                                            const PcaModel& pca, double h) {
  constexpr std::size_t F = DataPacket::n_features;
  const auto z = detail::standardize(detail::scaled_features(p, h), st);
  std::vector<double> out(pca.rank());
  for (std::size_t r = 0; r < pca.rank(); ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < F; ++i) acc += pca.components[r][i] * (z[i] - pca.mean[i]);
    out[r] = acc / std::sqrt(pca.eigenvalues[r]);
    if (!std::isfinite(out[r]))
      throw std::runtime_error("transform_packet: non-finite output");
  }
  return out;
}

/// The h-normalized numerical level-set value carried to the skip input.
inline double skip_input(const DataPacket& p, double h) { return p.phi_d / h; }

}  // namespace mlsl
