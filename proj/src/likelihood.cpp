#include "epinet/likelihood.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

#include "epinet/format.hpp"

namespace epinet {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

// In-place lower Cholesky of a row-major n x n matrix; false on a nonpositive pivot.
bool cholesky(double* c, int n) {
    for (int j = 0; j < n; ++j) {
        double diag = c[j * n + j];
        for (int k = 0; k < j; ++k) diag -= c[j * n + k] * c[j * n + k];
        if (!(diag > 0.0)) return false;
        const double ljj = std::sqrt(diag);
        c[j * n + j] = ljj;
        for (int i = j + 1; i < n; ++i) {
            double s = c[i * n + j];
            for (int k = 0; k < j; ++k) s -= c[i * n + k] * c[j * n + k];
            c[i * n + j] = s / ljj;
        }
    }
    return true;
}

// -0.5 (n log 2pi + log det + r^T C^{-1} r) from the Cholesky factor; overwrites r.
double logpdf_from_factor(const double* L, double* r, int n) {
    double logdet = 0.0;
    double quad = 0.0;
    for (int i = 0; i < n; ++i) {
        double s = r[i];
        for (int k = 0; k < i; ++k) s -= L[i * n + k] * r[k];
        r[i] = s / L[i * n + i];
        quad += r[i] * r[i];
        logdet += std::log(L[i * n + i]);
    }
    return -0.5 * (n * kLog2Pi + 2.0 * logdet + quad);
}

// Shared scratch for the per-term factorization.
struct Workspace {
    std::vector<double> cov, work, resid, resid_copy;

    void resize(int n) {
        const auto nn = static_cast<std::size_t>(n) * n;
        cov.resize(nn);
        work.resize(nn);
        resid.resize(static_cast<std::size_t>(n));
        resid_copy.resize(static_cast<std::size_t>(n));
    }
};

// Compacts ws.cov / ws.resid in place to the coordinates that are not exact point
// masses; returns the remaining dimension.
int drop_point_masses(Workspace& ws, int n) {
    double max_diag = 1.0;
    for (int i = 0; i < n; ++i) max_diag = std::max(max_diag, ws.cov[i * n + i]);
    const double var_tol = 1e-12 * max_diag;
    std::vector<int> keep;
    keep.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        if (!(ws.cov[i * n + i] <= var_tol && std::abs(ws.resid[i]) <= 1e-6)) keep.push_back(i);
    const int m = static_cast<int>(keep.size());
    if (m == n) return n;
    for (int a = 0; a < m; ++a) {
        for (int b = 0; b < m; ++b) ws.cov[a * m + b] = ws.cov[keep[a] * n + keep[b]];
        ws.resid[a] = ws.resid[keep[a]];
    }
    return m;
}

// Evaluates log N(resid; 0, cov) where cov is in ws.cov (row-major, symmetric).
GaussianLogPdf logpdf_workspace(Workspace& ws, int n, double ridge_eps) {
    GaussianLogPdf out;
    if (n == 0) return out;
    std::copy(ws.cov.begin(), ws.cov.begin() + static_cast<std::ptrdiff_t>(n) * n, ws.work.begin());
    std::copy(ws.resid.begin(), ws.resid.begin() + n, ws.resid_copy.begin());
    if (cholesky(ws.work.data(), n)) {
        out.value = logpdf_from_factor(ws.work.data(), ws.resid_copy.data(), n);
        return out;
    }

    out.regularized = true;
    double trace = 0.0;
    for (int i = 0; i < n; ++i) trace += ws.cov[i * n + i];
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> C(ws.cov.data(), n, n);
    const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(C, Eigen::EigenvaluesOnly).eigenvalues()(0);
    if (min_eig < -1e-6 * std::abs(trace)) out.degenerate = true;

    const double ridge = ridge_eps * std::max(trace / n, 1.0);
    std::copy(ws.cov.begin(), ws.cov.begin() + static_cast<std::ptrdiff_t>(n) * n, ws.work.begin());
    for (int i = 0; i < n; ++i) ws.work[i * n + i] += ridge;
    std::copy(ws.resid.begin(), ws.resid.begin() + n, ws.resid_copy.begin());
    if (!cholesky(ws.work.data(), n)) {
        out.degenerate = true;
        out.value = -std::numeric_limits<double>::infinity();
        return out;
    }
    out.value = logpdf_from_factor(ws.work.data(), ws.resid_copy.data(), n);
    return out;
}

void finish(LogLikelihood& ll) {
    CompensatedSum sum;
    for (double t : ll.terms) sum.add(t);
    ll.value = sum.value();
}

void record_term(LogLikelihood& ll, const GaussianLogPdf& p, DegeneratePolicy policy, bool reduced) {
    std::uint8_t flag = reduced ? kTermReduced : kTermOk;
    if (p.regularized) flag |= kTermRegularized;
    if (p.degenerate) flag |= kTermDegenerate;
    if (p.regularized && policy == DegeneratePolicy::kSkip) {
        ll.terms.push_back(0.0);
        ll.flags.push_back(flag | kTermSkipped);
        return;
    }
    ll.terms.push_back(p.value);
    ll.flags.push_back(flag);
}

void record_term_reduced(LogLikelihood& ll, Workspace& ws, int n, const LikelihoodOptions& opts) {
    const int m = opts.drop_point_mass ? drop_point_masses(ws, n) : n;
    record_term(ll, logpdf_workspace(ws, m, opts.ridge_eps), opts.policy, m < n);
}

}  // namespace

int LogLikelihood::count(TermFlag flag) const {
    int c = 0;
    for (auto f : flags) c += (f & flag) ? 1 : 0;
    return c;
}

GaussianLogPdf gaussian_logpdf_ex(std::span<const double> x, std::span<const double> mean,
                                  const Eigen::MatrixXd& cov, double ridge_eps) {
    const auto n = static_cast<int>(x.size());
    if (static_cast<int>(mean.size()) != n || cov.rows() != n || cov.cols() != n)
        throw std::invalid_argument("gaussian_logpdf: dimension mismatch");
    if (n == 0) throw std::invalid_argument("gaussian_logpdf: empty vector");
    Workspace ws;
    ws.resize(n);
    for (int i = 0; i < n; ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(mean[i]))
            throw std::invalid_argument("gaussian_logpdf: non-finite input");
        ws.resid[i] = x[i] - mean[i];
        for (int j = 0; j < n; ++j) {
            if (!std::isfinite(cov(i, j))) throw std::invalid_argument("gaussian_logpdf: non-finite covariance");
            ws.cov[i * n + j] = 0.5 * (cov(i, j) + cov(j, i));
        }
    }
    return logpdf_workspace(ws, n, ridge_eps);
}

double gaussian_logpdf(std::span<const double> x, std::span<const double> mean, const Eigen::MatrixXd& cov) {
    return gaussian_logpdf_ex(x, mean, cov).value;
}

LogLikelihood loglik_I1(const TimeSeriesDataset& ds, const Theta& theta, const LikelihoodOptions& opts) {
    if (ds.kind != DatasetKind::kInfectiousCounts) throw std::invalid_argument("loglik_I1: needs infectious counts");
    if (ds.D() < 2) throw std::invalid_argument("loglik_I1: need D >= 2");
    const int n = ds.n();
    if (theta.n() != n) throw std::invalid_argument("loglik_I1: theta and dataset sizes differ");
    const double dt = ds.delta_t;
    const Eigen::MatrixXd a = drift_matrix(theta).a;

    LogLikelihood ll;
    ll.terms.reserve(static_cast<std::size_t>(ds.D() - 1));
    ll.flags.reserve(static_cast<std::size_t>(ds.D() - 1));
    Workspace ws;
    ws.resize(n);

    if (opts.mode == MomentMode::kApprox) {
        // mean = (E + a dt) I(t_d); cov = B(I(t_d)) dt
        const Eigen::MatrixXd step = Eigen::MatrixXd::Identity(n, n) + dt * a;
        const Eigen::MatrixXd& g = theta.gamma.rates;
        std::vector<double> out_rate(static_cast<std::size_t>(n), 0.0);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < n; ++k)
                if (k != i) out_rate[i] += g(i, k);
        const double ab = theta.alpha + theta.beta;
        Eigen::VectorXd prev(n);
        for (int d = 0; d + 1 < ds.D(); ++d) {
            prev = ds.values.row(d).transpose();
            for (int i = 0; i < n; ++i) {
                double mean = 0.0;
                for (int k = 0; k < n; ++k) mean += step(i, k) * prev(k);
                ws.resid[i] = ds.values(d + 1, i) - mean;
            }
            for (int i = 0; i < n; ++i) {
                double inflow = 0.0;
                for (int k = 0; k < n; ++k)
                    if (k != i) inflow += g(k, i) * prev(k);
                ws.cov[i * n + i] = ((ab + out_rate[i]) * prev(i) + inflow) * dt;
                for (int j = i + 1; j < n; ++j) {
                    const double c = -(g(i, j) * prev(i) + g(j, i) * prev(j)) * dt;
                    ws.cov[i * n + j] = c;
                    ws.cov[j * n + i] = c;
                }
            }
            record_term_reduced(ll, ws, n, opts);
        }
    } else {
        // The conditional covariance is linear in I(t_d): sum_k I_k(t_d) W_k,
        // with W_k the covariance after dt from a unit count at node k.
        const Eigen::MatrixXd E = (a * dt).exp();
        std::vector<Eigen::MatrixXd> basis;
        basis.reserve(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k)
            basis.push_back(exact_moments(theta, Eigen::VectorXd::Unit(n, k), dt, opts.moments).vII);
        Eigen::MatrixXd cov(n, n);
        for (int d = 0; d + 1 < ds.D(); ++d) {
            const Eigen::VectorXd prev = ds.values.row(d).transpose();
            const Eigen::VectorXd mean = E * prev;
            cov.setZero();
            for (int k = 0; k < n; ++k)
                if (prev(k) != 0.0) cov += prev(k) * basis[k];
            for (int i = 0; i < n; ++i) {
                ws.resid[i] = ds.values(d + 1, i) - mean(i);
                for (int j = 0; j < n; ++j) ws.cov[i * n + j] = 0.5 * (cov(i, j) + cov(j, i));
            }
            record_term_reduced(ll, ws, n, opts);
        }
    }
    finish(ll);
    return ll;
}

LogLikelihood loglik_I2(std::span<const double> totals, double alpha, double beta, double delta_t) {
    if (totals.size() < 2) throw std::invalid_argument("loglik_I2: need D >= 2");
    if (!(delta_t > 0.0)) throw std::invalid_argument("loglik_I2: delta_t must be positive");
    LogLikelihood ll;
    for (std::size_t d = 0; d + 1 < totals.size(); ++d) {
        const double I = totals[d];
        if (I == 0.0) {
            ll.terms.push_back(0.0);
            ll.flags.push_back(kTermSkipped | kTermDegenerate);
            continue;
        }
        const auto [mean, var] = approx_aggregate_step(I, alpha, beta, delta_t);
        if (!(var > 0.0)) {
            ll.terms.push_back(-std::numeric_limits<double>::infinity());
            ll.flags.push_back(kTermDegenerate);
            continue;
        }
        const double r = totals[d + 1] - mean;
        ll.terms.push_back(-0.5 * (kLog2Pi + std::log(var) + r * r / var));
        ll.flags.push_back(kTermOk);
    }
    finish(ll);
    return ll;
}

LogLikelihood loglik_J2(std::span<const double> totalsJ, double alpha, double beta, double I0, double delta_t) {
    if (totalsJ.size() < 2) throw std::invalid_argument("loglik_J2: need D >= 2");
    if (!(I0 > 0.0)) throw std::invalid_argument("loglik_J2: I0 must be positive");
    if (!(delta_t > 0.0)) throw std::invalid_argument("loglik_J2: delta_t must be positive");
    LogLikelihood ll;
    for (std::size_t d = 0; d + 1 < totalsJ.size(); ++d) {
        const AggregateMoments m = aggregate_moments(alpha, beta, I0, static_cast<double>(d + 1) * delta_t);
        if (!(m.vJJ > 0.0) || !std::isfinite(m.vJJ) || !std::isfinite(m.mJ)) {
            ll.terms.push_back(-std::numeric_limits<double>::infinity());
            ll.flags.push_back(kTermDegenerate);
            continue;
        }
        const double r = totalsJ[d + 1] - m.mJ;
        ll.terms.push_back(-0.5 * (kLog2Pi + std::log(m.vJJ) + r * r / m.vJJ));
        ll.flags.push_back(kTermOk);
    }
    finish(ll);
    return ll;
}

}  // namespace epinet
