#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "epinet/dataset.hpp"
#include "epinet/moments.hpp"
#include "epinet/netgen.hpp"
#include "epinet/simulate.hpp"

namespace epinet {

/// Topology plus transmission parameters; gamma is always derived from l on demand.
struct ThetaCandidate {
    NeighborMatrix l;
    TransmissionParams params;

    Theta theta() const {
        return Theta{params.alpha, params.beta, mobility_from_topology(l, params.gamma_total)};
    }
};

enum TermFlag : std::uint8_t {
    kTermOk = 0,
    kTermRegularized = 1,  // ridge added before factorization
    kTermDegenerate = 2,   // covariance had a clearly negative eigenvalue, or zero variance
    kTermSkipped = 4,      // excluded from the sum
    kTermReduced = 8,      // point-mass coordinates removed before evaluation
};

struct LogLikelihood {
    double value = 0.0;
    std::vector<double> terms;          // one per conditional, length D-1
    std::vector<std::uint8_t> flags;    // TermFlag bits per term

    int count(TermFlag flag) const;
    bool degenerate() const { return count(kTermDegenerate) > 0; }
};

struct GaussianLogPdf {
    double value = 0.0;
    bool regularized = false;
    bool degenerate = false;
};

/// Log of the multivariate normal density. The covariance is factorized as given;
/// when it is not positive definite a ridge eps * max(trace/n, 1) * identity is added.
GaussianLogPdf gaussian_logpdf_ex(std::span<const double> x, std::span<const double> mean,
                                  const Eigen::MatrixXd& cov, double ridge_eps = 1e-8);

/// Value-only convenience wrapper; throws on non-finite input.
double gaussian_logpdf(std::span<const double> x, std::span<const double> mean, const Eigen::MatrixXd& cov);

enum class MomentMode { kApprox, kExact };
enum class DegeneratePolicy { kRegularize, kSkip };

struct LikelihoodOptions {
    MomentMode mode = MomentMode::kApprox;
    DegeneratePolicy policy = DegeneratePolicy::kSkip;
    double ridge_eps = 1e-8;
    /// Coordinates with zero conditional variance whose observation equals the mean
    /// (nodes no infected mass can reach within dt) carry probability one and are
    /// removed before the density is evaluated; other coordinates are kept.
    bool drop_point_mass = true;
    MomentOptions moments;
};

/// sum_{d=0}^{D-2} log p(I(t_{d+1}) | I(t_d), theta) with every conditional started
/// from the observed I(t_d) and zero covariance.
LogLikelihood loglik_I1(const TimeSeriesDataset& ds, const Theta& theta, const LikelihoodOptions& opts = {});

/// Aggregate-count likelihood; terms with I(t_d) = 0 are skipped and flagged.
LogLikelihood loglik_I2(std::span<const double> totals, double alpha, double beta, double delta_t);

/// Cumulative-case likelihood with moments measured from t_0 = 0:
/// sum_{d=0}^{D-2} log N(J(t_{d+1}); m_J((d+1) dt), v_JJ((d+1) dt)).
LogLikelihood loglik_J2(std::span<const double> totalsJ, double alpha, double beta, double I0, double delta_t);

}  // namespace epinet
