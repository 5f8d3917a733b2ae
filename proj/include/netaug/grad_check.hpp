#pragma once

// Central finite-difference gradient checking against an f64 reference loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "netaug/error.hpp"
#include "netaug/tensor.hpp"

namespace netaug {

using ParamsF64 = std::vector<std::vector<double>>;

/// Reference loss evaluated in double. `region` identifies the piecewise-smooth
/// region (e.g. the relu activation pattern); a finite difference whose two
/// probes land in different regions is retried with a smaller step.
struct ProbeResult {
  double loss = 0.0;
  std::uint64_t region = 0;
};

using ReferenceLoss = std::function<ProbeResult(const ParamsF64&)>;

inline ParamsF64 to_f64(const std::vector<Tensor>& params) {
  ParamsF64 out;
  out.reserve(params.size());
  for (const auto& t : params) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

/// Gradients are held in f32 and pick up absolute noise around 1e-8 where
/// batch terms cancel, so magnitudes below this floor are compared absolutely.
inline constexpr double kRelativeErrorFloor = 1e-4;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), kRelativeErrorFloor});
  return std::fabs(analytic - numeric) / denom;
}

/// Max over all parameter elements of |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double grad_check(const ReferenceLoss& loss, const std::vector<Tensor>& params,
                         const std::vector<Tensor>& analytic, double eps = 1e-3) {
  if (params.size() != analytic.size()) fail(ErrorKind::contract, "grad_check: params/gradients count mismatch");
  ParamsF64 theta = to_f64(params);
  const std::uint64_t home = loss(theta).region;
  double worst = 0.0;
  for (std::size_t p = 0; p < theta.size(); ++p) {
    if (analytic[p].shape() != params[p].shape()) fail(ErrorKind::dimension, "grad_check: gradient shape mismatch");
    for (std::size_t i = 0; i < theta[p].size(); ++i) {
      const double saved = theta[p][i];
      double h = eps;
      double numeric = 0.0;
      for (int attempt = 0; attempt < 8; ++attempt, h *= 0.1) {
        theta[p][i] = saved + h;
        const ProbeResult up = loss(theta);
        theta[p][i] = saved - h;
        const ProbeResult down = loss(theta);
        numeric = (up.loss - down.loss) / (2.0 * h);
        if (up.region == home && down.region == home) break;
      }
      theta[p][i] = saved;
      worst = std::max(worst, relative_error(analytic[p][i], numeric));
    }
  }
  return worst;
}

}  // namespace netaug
