#pragma once

#include "drofolio/types.h"

namespace drofolio {

enum class Kernel { bartlett };

struct LongRunCov {
    Matrix matrix;  // K x K, symmetric PSD
    Index bandwidth = 1;
    Kernel kernel = Kernel::bartlett;
};

/// (1/T) sum_{t > lag} (F_t - mu)(F_{t-lag} - mu)'. Divisor is T for every lag.
Matrix autocov(const Matrix& factors, const Vector& mean, Index lag);

/// Bartlett weight 1 - j/q for j < q, zero otherwise.
double bartlett_weight(Index lag, Index bandwidth);

/// Kernel-weighted sum of autocovariances, C(0) + sum_j w_j (C(j) + C(j)').
/// Negative eigenvalues below -1e-10 raise; smaller ones are clipped to 0.
LongRunCov hac_long_run_cov(const Matrix& factors, const Vector& mean, Index bandwidth);

/// Shortcut for serially independent factors under the PCA normalization:
/// I - mu mu'.
LongRunCov iid_long_run_cov(const Vector& factor_mean);

/// max(1, floor(c T^{-1/8} p^{1/4})).
Index default_bandwidth(Index t, Index p, double c = 5.0);

}  // namespace drofolio
