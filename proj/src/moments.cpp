#include "epinet/moments.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include <boost/numeric/odeint.hpp>
#include <unsupported/Eigen/MatrixFunctions>

namespace epinet {

namespace odeint = boost::numeric::odeint;

DriftMatrix drift_matrix(const Theta& theta) {
    const int n = theta.n();
    const Eigen::MatrixXd& g = theta.gamma.rates;
    Eigen::MatrixXd a = g.transpose();
    for (int i = 0; i < n; ++i) a(i, i) = theta.alpha - theta.beta - (g.row(i).sum() - g(i, i));
    return DriftMatrix{std::move(a)};
}

Eigen::MatrixXd noise_matrix(const Theta& theta, const Eigen::VectorXd& m) {
    const int n = theta.n();
    const Eigen::MatrixXd& g = theta.gamma.rates;
    Eigen::MatrixXd B(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) {
                double out = 0.0, in = 0.0;
                for (int k = 0; k < n; ++k) {
                    if (k == i) continue;
                    out += g(i, k);
                    in += g(k, i) * m(k);
                }
                B(i, i) = (theta.alpha + theta.beta + out) * m(i) + in;
            } else {
                B(i, j) = -g(i, j) * m(i) - g(j, i) * m(j);
            }
        }
    }
    return B;
}

nlohmann::json MomentState::to_json() const {
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    auto mat = [](const Eigen::MatrixXd& m) {
        nlohmann::json rows = nlohmann::json::array();
        for (int i = 0; i < m.rows(); ++i) {
            std::vector<double> row(static_cast<std::size_t>(m.cols()));
            for (int j = 0; j < m.cols(); ++j) row[j] = m(i, j);
            rows.push_back(row);
        }
        return rows;
    };
    return {{"t", t}, {"mI", vec(mI)}, {"mJ", vec(mJ)}, {"vII", mat(vII)}, {"vIJ", mat(vIJ)}, {"vJJ", mat(vJJ)}};
}

namespace {

using State = std::vector<double>;

// ODE state layout: [vII (n*n) | vIJ (n*n) | vJJ (n*n)]
struct CovarianceSystem {
    const Theta& theta;
    Eigen::MatrixXd a;
    Eigen::VectorXd I0;
    int n;

    void operator()(const State& y, State& dydt, double t) const {
        const auto nn = static_cast<Eigen::Index>(n) * n;
        const Eigen::VectorXd m = (a * t).exp() * I0;
        Eigen::Map<const Eigen::MatrixXd> vII(y.data(), n, n);
        Eigen::Map<const Eigen::MatrixXd> vIJ(y.data() + nn, n, n);
        Eigen::Map<Eigen::MatrixXd> dII(dydt.data(), n, n);
        Eigen::Map<Eigen::MatrixXd> dIJ(dydt.data() + nn, n, n);
        Eigen::Map<Eigen::MatrixXd> dJJ(dydt.data() + 2 * nn, n, n);
        const Eigen::MatrixXd c = m.asDiagonal();
        dII = a * vII + vII * a.transpose() + noise_matrix(theta, m);
        dIJ = a * vIJ + theta.alpha * (vII + c);
        dJJ = theta.alpha * (vIJ + vIJ.transpose() + c);
    }
};

}  // namespace

MomentState exact_moments(const Theta& theta, const Eigen::VectorXd& I0, double t, const MomentOptions& opts,
                          MomentDiagnostics* diag) {
    if (!(t >= 0.0)) throw std::invalid_argument("exact_moments: t must be >= 0");
    const int n = theta.n();
    if (I0.size() != n) throw std::invalid_argument("exact_moments: I0 has wrong length");

    const Eigen::MatrixXd a = drift_matrix(theta).a;
    // exp([[a, 1], [0, 0]] t) = [[e^{at}, int_0^t e^{as} ds], [0, 1]], valid for singular a as well.
    Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    aug.topLeftCorner(n, n) = a * t;
    aug.topRightCorner(n, n) = Eigen::MatrixXd::Identity(n, n) * t;
    const Eigen::MatrixXd expo = aug.exp();

    MomentState out;
    out.t = t;
    out.mI = expo.topLeftCorner(n, n) * I0;
    out.mJ = I0 + theta.alpha * (expo.topRightCorner(n, n) * I0);

    const auto nn = static_cast<std::size_t>(n) * n;
    State y(3 * nn, 0.0);

    int steps = 0;
    if (t > 0.0) {
        const CovarianceSystem sys{theta, a, I0, n};
        const double scale = std::max(1.0, I0.sum());
        using Stepper = odeint::runge_kutta_dopri5<State>;
        const double dt0 = std::min(t, 0.01);
        if (opts.max_step > 0.0) {
            auto stepper = odeint::make_controlled(opts.abs_tol * scale, opts.rel_tol, opts.max_step, Stepper());
            steps = static_cast<int>(odeint::integrate_adaptive(stepper, sys, y, 0.0, t, std::min(dt0, opts.max_step)));
        } else {
            auto stepper = odeint::make_controlled(opts.abs_tol * scale, opts.rel_tol, Stepper());
            steps = static_cast<int>(odeint::integrate_adaptive(stepper, sys, y, 0.0, t, dt0));
        }
    }

    Eigen::Map<const Eigen::MatrixXd> vII(y.data(), n, n);
    Eigen::Map<const Eigen::MatrixXd> vIJ(y.data() + nn, n, n);
    Eigen::Map<const Eigen::MatrixXd> vJJ(y.data() + 2 * nn, n, n);
    out.vII = 0.5 * (vII + vII.transpose());
    out.vIJ = vIJ;
    out.vJJ = 0.5 * (vJJ + vJJ.transpose());

    if (diag) diag->ode_steps = steps;
    return out;
}

namespace {

// d/dt (mI, mJ, vII, vIJ, vJJ) = M (mI, mJ, vII, vIJ, vJJ); regular at alpha = beta.
AggregateMoments aggregate_via_exponential(double alpha, double beta, double I0, double t) {
    const double g = alpha - beta;
    Eigen::Matrix<double, 5, 5> M = Eigen::Matrix<double, 5, 5>::Zero();
    M(0, 0) = g;
    M(1, 0) = alpha;
    M(2, 0) = alpha + beta;
    M(2, 2) = 2.0 * g;
    M(3, 0) = alpha;
    M(3, 2) = alpha;
    M(3, 3) = g;
    M(4, 0) = alpha;
    M(4, 3) = 2.0 * alpha;
    Eigen::Matrix<double, 5, 1> y0;
    y0 << I0, I0, 0.0, 0.0, 0.0;
    const Eigen::Matrix<double, 5, 1> y = (M * t).exp() * y0;
    return {t, y(0), y(1), y(2), y(3), y(4)};
}

}  // namespace

AggregateMoments aggregate_moments(double alpha, double beta, double I0, double t) {
    if (!(t >= 0.0)) throw std::invalid_argument("aggregate_moments: t must be >= 0");
    const double g = alpha - beta;
    if (std::abs(g) * t < kAggregateLimitThreshold || g == 0.0) return aggregate_via_exponential(alpha, beta, I0, t);

    const double s = alpha + beta;
    const double e1 = std::exp(g * t);
    const double e2 = e1 * e1;
    const double g2 = g * g;
    const double g3 = g2 * g;
    AggregateMoments m;
    m.t = t;
    m.mI = I0 * e1;
    m.mJ = I0 * (alpha / g * e1 - beta / g);
    m.vII = I0 * s / g * (e2 - e1);
    m.vIJ = I0 * (alpha * s / g2 * e2 - (alpha * s / g2 + 2.0 * alpha * beta / g * t) * e1);
    m.vJJ = I0 * (alpha * alpha * s / g3 * e2 - (alpha * s / g2 + 4.0 * alpha * alpha * beta / g2 * t) * e1 -
                  alpha * beta * s / g3);
    return m;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> approx_step_moments(const Eigen::VectorXd& I_prev, const Theta& theta,
                                                                 double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("approx_step_moments: dt must be positive");
    if (I_prev.size() != theta.n()) throw std::invalid_argument("approx_step_moments: I_prev has wrong length");
    const Eigen::MatrixXd a = drift_matrix(theta).a;
    Eigen::VectorXd mean = I_prev + dt * (a * I_prev);
    Eigen::MatrixXd cov = dt * noise_matrix(theta, I_prev);
    return {std::move(mean), std::move(cov)};
}

std::pair<double, double> approx_aggregate_step(double I_total_prev, double alpha, double beta, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("approx_aggregate_step: dt must be positive");
    return {I_total_prev + (alpha - beta) * I_total_prev * dt, (alpha + beta) * I_total_prev * dt};
}

}  // namespace epinet
