// SPDX-License-Identifier: Apache-2.0
//
// bfpos: network-side UE positioning from beamformed RSRP feedback
// Copyright (C) 2026 The bfpos Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef BFPOS_ESTIMATION_HPP
#define BFPOS_ESTIMATION_HPP

// Direction-of-departure estimation from one BRSRP report.
//
// Mean model of the reported BRSRP vector beta (K beams):
//
//   mu = A(theta, phi) alpha * P_Tx / M_f + 1 * sigma_n^2
//
// with A the K x 4 matrix of Hadamard products of the polarimetric beam
// responses. The columns of A are
//
//   [ conj(b_phi) b_phi, conj(b_theta) b_phi, conj(b_phi) b_theta, conj(b_theta) b_theta ]
//
// and alpha is ordered to match them. Columns 2 and 3 are conjugates of each
// other and alpha_3 = conj(alpha_2), so A alpha is real and equals the real
// basis [c1, c4, 2 Re c2, -2 Im c2] applied to (alpha_1, alpha_4, Re alpha_2,
// Im alpha_2). That real basis, scaled by P_Tx / M_f and augmented with the
// all-ones column, is what the projector and nuisance fit operate on.
//
// The full parameter vector used by the exact Gaussian likelihood and the
// bounds is
//
//   Theta = [theta, phi, alpha_1, alpha_4, Re alpha_2, Im alpha_2, sigma_n^2].

#include "common.hpp"
#include "measurement.hpp"
#include "scenario.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

namespace bfpos
{

using SteeringMatrix = Eigen::Matrix<cdouble, Eigen::Dynamic, 4>;
using ThetaVector = Eigen::Matrix<double, 7, 1>;

namespace theta_index
{
inline constexpr int kTheta = 0;
inline constexpr int kPhi = 1;
inline constexpr int kAlpha1 = 2;
inline constexpr int kAlpha4 = 3;
inline constexpr int kReAlpha2 = 4;
inline constexpr int kImAlpha2 = 5;
inline constexpr int kNoiseFloor = 6;
} // namespace theta_index

// ---- Steering matrix ------------------------------------------------------------

inline SteeringMatrix steering_matrix(const BeamBook &book, const DirectionAngles &dir)
{
    SteeringMatrix a(static_cast<Eigen::Index>(book.size()), 4);
    for (std::size_t j = 0; j < book.size(); ++j)
    {
        const Eigen::Vector2cd b = beam_response(book[j], dir);
        const cdouble bt = b(0), bp = b(1);
        const auto r = static_cast<Eigen::Index>(j);
        a(r, 0) = std::norm(bp);
        a(r, 1) = std::conj(bt) * bp;
        a(r, 2) = std::conj(bp) * bt;
        a(r, 3) = std::norm(bt);
    }
    return a;
}

struct SteeringDerivatives
{
    SteeringMatrix value;
    SteeringMatrix d_theta;
    SteeringMatrix d_phi;
};

inline SteeringDerivatives steering_matrix_derivatives(const BeamBook &book, const DirectionAngles &dir)
{
    const auto k = static_cast<Eigen::Index>(book.size());
    SteeringDerivatives out{SteeringMatrix(k, 4), SteeringMatrix(k, 4), SteeringMatrix(k, 4)};
    // d(conj(u) v) = conj(du) v + conj(u) dv
    auto fill = [](SteeringMatrix &m, Eigen::Index r, const Eigen::Vector2cd &b, const Eigen::Vector2cd &db) {
        const cdouble bt = b(0), bp = b(1), dbt = db(0), dbp = db(1);
        m(r, 0) = std::conj(dbp) * bp + std::conj(bp) * dbp;
        m(r, 1) = std::conj(dbt) * bp + std::conj(bt) * dbp;
        m(r, 2) = std::conj(dbp) * bt + std::conj(bp) * dbt;
        m(r, 3) = std::conj(dbt) * bt + std::conj(bt) * dbt;
    };
    for (std::size_t j = 0; j < book.size(); ++j)
    {
        const BeamResponse br = beam_response_derivatives(book[j], dir);
        const auto r = static_cast<Eigen::Index>(j);
        out.value(r, 0) = std::norm(br.value(1));
        out.value(r, 1) = std::conj(br.value(0)) * br.value(1);
        out.value(r, 2) = std::conj(br.value(1)) * br.value(0);
        out.value(r, 3) = std::norm(br.value(0));
        fill(out.d_theta, r, br.value, br.d_theta);
        fill(out.d_phi, r, br.value, br.d_phi);
    }
    return out;
}

/// Real K x 4 signal basis [c1, c4, 2 Re c2, -2 Im c2] (unscaled).
inline Eigen::MatrixXd signal_basis(const SteeringMatrix &a)
{
    Eigen::MatrixXd s(a.rows(), 4);
    s.col(0) = a.col(0).real();
    s.col(1) = a.col(3).real();
    s.col(2) = 2.0 * a.col(1).real();
    s.col(3) = -2.0 * a.col(1).imag();
    return s;
}

/// K x 5 basis [A P_Tx / M_f, 1] of the mean model in Theta order.
inline Eigen::MatrixXd mean_basis(const SteeringMatrix &a, double p_tx, int m_f)
{
    Eigen::MatrixXd b(a.rows(), 5);
    b.leftCols(4) = signal_basis(a) * (p_tx / m_f);
    b.col(4).setOnes();
    return b;
}

// ---- Projectors -------------------------------------------------------------------

inline constexpr double kRankTolerance = 1e-12;

/// Orthogonal projector onto the column space of [A P_Tx / M_f, 1].
struct Projector
{
    Eigen::MatrixXd basis;  // K x 5
    Eigen::MatrixXd ginv;   // 5 x K least-squares generalized inverse, basis * ginv = proj
    Eigen::MatrixXd proj;   // P_A1
    Eigen::MatrixXd perp;   // I - P_A1
    Eigen::Index rank = 0;
};

namespace detail
{

struct RankRevealed
{
    Eigen::MatrixXd u;    // orthonormal basis of the column space
    Eigen::MatrixXd ginv; // generalized inverse of the input
    Eigen::Index rank = 0;
};

// Column-equilibrated SVD; the rank decision ignores column scaling so that
// watts-scale signal columns are not swamped by the unit noise-floor column.
inline RankRevealed rank_revealed(const Eigen::MatrixXd &m)
{
    const Eigen::VectorXd norms = m.colwise().norm();
    Eigen::MatrixXd mn = m;
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        if (norms(c) > 0.0)
            mn.col(c) /= norms(c);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(mn, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    RankRevealed out;
    if (sv.size() == 0 || sv(0) <= 0.0)
    {
        out.u = Eigen::MatrixXd::Zero(m.rows(), 0);
        out.ginv = Eigen::MatrixXd::Zero(m.cols(), m.rows());
        return out;
    }
    const double tol = kRankTolerance * sv(0);
    while (out.rank < sv.size() && sv(out.rank) > tol)
        ++out.rank;
    out.u = svd.matrixU().leftCols(out.rank);
    const Eigen::MatrixXd vr = svd.matrixV().leftCols(out.rank);
    out.ginv = vr * sv.head(out.rank).cwiseInverse().asDiagonal() * out.u.transpose();
    for (Eigen::Index c = 0; c < m.cols(); ++c)
    {
        if (norms(c) > 0.0)
            out.ginv.row(c) /= norms(c);
        else
            out.ginv.row(c).setZero();
    }
    return out;
}

} // namespace detail

inline Projector projector_a1(const SteeringMatrix &a, double p_tx, int m_f)
{
    Projector p;
    p.basis = mean_basis(a, p_tx, m_f);
    const auto rr = detail::rank_revealed(p.basis);
    const Eigen::Index k = a.rows();
    if (k < rr.rank + 1)
        throw DegenerateBasisError("projector_a1: " + std::to_string(k) + " beams cannot support a basis of rank " +
                                   std::to_string(rr.rank));
    p.rank = rr.rank;
    p.ginv = rr.ginv;
    p.proj = rr.u * rr.u.transpose();
    p.perp = Eigen::MatrixXd::Identity(k, k) - p.proj;
    return p;
}

struct ObliqueProjectors
{
    Eigen::MatrixXd p_a; // range col(A), null space contains 1
    Eigen::MatrixXd p_1; // range span{1}, null space contains col(A)
};

/// Oblique decomposition P_A1 = p_a + p_1.
inline ObliqueProjectors oblique_projectors(const SteeringMatrix &a, double p_tx, int m_f)
{
    const Eigen::Index k = a.rows();
    const Eigen::MatrixXd sig = mean_basis(a, p_tx, m_f).leftCols(4);
    const auto rr = detail::rank_revealed(sig);
    const Eigen::MatrixXd &q = rr.u;
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(k);
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k, k);
    const Eigen::MatrixXd perp_1 = eye - ones * ones.transpose() / static_cast<double>(k);

    const Eigen::MatrixXd m = q.transpose() * perp_1 * q;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (rr.rank == 0 || es.eigenvalues().minCoeff() < 1e-10)
        throw SingularMatrixError("oblique_projectors: A^H P1_perp A is singular");

    ObliqueProjectors out;
    out.p_a = q * m.inverse() * q.transpose() * perp_1;
    const Eigen::MatrixXd perp_a = eye - q * q.transpose();
    const double denom = ones.dot(perp_a * ones);
    if (denom < 1e-10 * k)
        throw SingularMatrixError("oblique_projectors: all-ones vector lies in col(A)");
    out.p_1 = ones * (ones.transpose() * perp_a) / denom;
    return out;
}

/// ||P_A1_perp beta||^2 at the given angles.
inline double residual_norm2(const Eigen::VectorXd &beta, const DirectionAngles &dir, const BeamBook &book,
                             double p_tx, int m_f)
{
    const Projector p = projector_a1(steering_matrix(book, dir), p_tx, m_f);
    return (p.perp * beta).squaredNorm();
}

/// The same objective written with the oblique projector:
/// ||Pobl_A_perp beta||^2 - (1^T Pobl_A_perp beta)^2 / K.
inline double oblique_objective(const Eigen::VectorXd &beta, const DirectionAngles &dir, const BeamBook &book,
                                double p_tx, int m_f)
{
    const ObliqueProjectors op = oblique_projectors(steering_matrix(book, dir), p_tx, m_f);
    const Eigen::VectorXd r = beta - op.p_a * beta;
    const double s = r.sum();
    return r.squaredNorm() - s * s / static_cast<double>(beta.size());
}

inline double floored_residual(double r2, const Eigen::VectorXd &beta, double floor_rel)
{
    return std::max(r2, floor_rel * beta.squaredNorm());
}

/// Concentrated log-likelihood of the angles, nuisance parameters replaced by
/// their closed-form estimates.
inline double concentrated_loglik(const Eigen::VectorXd &beta, const DirectionAngles &dir, const BeamBook &book,
                                  double p_tx, int m_f, double residual_floor = 1e-15)
{
    const double k = static_cast<double>(beta.size());
    const double r2 = floored_residual(residual_norm2(beta, dir, book, p_tx, m_f), beta, residual_floor);
    return -0.5 * k * std::log(kTwoPi) - 0.5 * k - 0.5 * k * std::log(r2 / k);
}

// ---- Nuisance parameters ----------------------------------------------------------

struct NuisanceEstimates
{
    Eigen::Vector4cd alpha = Eigen::Vector4cd::Zero(); // in A's column order, alpha(2) = conj(alpha(1))
    Eigen::Vector4d alpha_real = Eigen::Vector4d::Zero(); // alpha_1, alpha_4, Re alpha_2, Im alpha_2
    double noise_floor = 0.0;  // sigma_n^2 estimate
    double residual_var = 0.0; // ||P_A1_perp beta||^2 / K
};

inline Eigen::Vector4cd alpha_from_real(const Eigen::Vector4d &r)
{
    const cdouble a2(r(2), r(3));
    return {cdouble(r(0), 0.0), a2, std::conj(a2), cdouble(r(1), 0.0)};
}

inline NuisanceEstimates nuisance_mle(const Eigen::VectorXd &beta, const DirectionAngles &dir, const BeamBook &book,
                                      double p_tx, int m_f)
{
    const Projector p = projector_a1(steering_matrix(book, dir), p_tx, m_f);
    const Eigen::VectorXd coef = p.ginv * beta;
    NuisanceEstimates n;
    n.alpha_real = coef.head<4>();
    n.alpha = alpha_from_real(n.alpha_real);
    n.noise_floor = coef(4);
    n.residual_var = (p.perp * beta).squaredNorm() / static_cast<double>(beta.size());
    return n;
}

// ---- Score and observed FIM -----------------------------------------------------------

/// Projected residual r = P_perp beta and its angle Jacobian dr/d(theta, phi),
/// using dP_perp = -(P_perp dB B^- + (P_perp dB B^-)^T).
struct ProjectedResidual
{
    Eigen::VectorXd residual;
    Eigen::Matrix<double, Eigen::Dynamic, 2> jacobian;
    Eigen::VectorXd coefficients; // B^- beta
    Projector projector;
};

inline ProjectedResidual projected_residual(const Eigen::VectorXd &beta, const DirectionAngles &dir,
                                            const BeamBook &book, double p_tx, int m_f)
{
    if (static_cast<std::size_t>(beta.size()) != book.size())
        throw DomainError("projected_residual: beta and beam book sizes differ");
    const SteeringDerivatives sd = steering_matrix_derivatives(book, dir);
    ProjectedResidual out;
    out.projector = projector_a1(sd.value, p_tx, m_f);
    const Projector &p = out.projector;
    out.residual = p.perp * beta;
    out.coefficients = p.ginv * beta;
    out.jacobian.resize(beta.size(), 2);
    const SteeringMatrix *derivs[2] = {&sd.d_theta, &sd.d_phi};
    for (int k = 0; k < 2; ++k)
    {
        Eigen::MatrixXd db = mean_basis(*derivs[k], p_tx, m_f);
        db.col(4).setZero();
        // dP_perp beta = -(P_perp dB B^- beta + B^-^T dB^T P_perp beta)
        out.jacobian.col(k) =
            -(p.perp * (db * out.coefficients) + p.ginv.transpose() * (db.transpose() * out.residual));
    }
    return out;
}

/// Gradient and first-order observed Fisher information of the concentrated
/// log-likelihood in (theta, phi).
///
/// With J = d(P_perp beta)/d(theta, phi) and r = P_perp beta the concentrated
/// log-likelihood has gradient -J^T r / s2 and Gauss-Newton information
/// J^T J / s2, s2 = ||r||^2 / K. These are the residual-norm expressions
/// 2 J^T r and 2 J^T J divided by -2 s2 and 2 s2 respectively, so `score` is
/// an ascent direction and the information has units of 1/rad^2.
struct ScoreFim
{
    Eigen::Vector2d score = Eigen::Vector2d::Zero();
    Eigen::Matrix2d fim = Eigen::Matrix2d::Zero();
    double residual_norm2 = 0.0;
    double residual_var = 0.0; // floored ||r||^2 / K used for scaling
    Eigen::Vector2d residual_gradient = Eigen::Vector2d::Zero(); // d||r||^2 / d(theta, phi) = 2 J^T r
    Eigen::Matrix2d residual_gn = Eigen::Matrix2d::Zero();       // 2 J^T J
};

inline ScoreFim score_and_fim(const Eigen::VectorXd &beta, const DirectionAngles &dir, const BeamBook &book,
                              double p_tx, int m_f, double residual_floor = 1e-15)
{
    const ProjectedResidual pr = projected_residual(beta, dir, book, p_tx, m_f);
    ScoreFim out;
    out.residual_norm2 = pr.residual.squaredNorm();
    out.residual_var = floored_residual(out.residual_norm2, beta, residual_floor) / static_cast<double>(beta.size());
    out.residual_gradient = 2.0 * pr.jacobian.transpose() * pr.residual;
    out.residual_gn = 2.0 * symmetrize(Eigen::Matrix2d(pr.jacobian.transpose() * pr.jacobian));
    if (!(out.residual_var > 0.0))
        return out; // beta == 0 carries no information
    out.score = -(pr.jacobian.transpose() * pr.residual) / out.residual_var;
    out.fim = symmetrize(Eigen::Matrix2d(pr.jacobian.transpose() * pr.jacobian)) / out.residual_var;
    return out;
}

// ---- Approximate MLE ----------------------------------------------------------

struct DodEstimate
{
    DirectionAngles angles;
    Eigen::Vector2d score = Eigen::Vector2d::Zero();
    Eigen::Matrix2d observed_fim = Eigen::Matrix2d::Zero();
    NuisanceEstimates nuisance;
    double loglik = 0.0;
    bool converged = false;
    bool few_beams = false; // fewer than five reported beams: ambiguous likelihood
    int iterations = 0;
};

struct MleOptions
{
    int max_iter = 50;
    double step_tol = 1e-8;        // radians
    double residual_floor = 1e-15; // relative to ||beta||^2
    double neighbor_factor = 1.5;  // midpoint candidates between beams closer than this x nearest spacing
};

namespace detail
{

inline double angular_distance(const DirectionAngles &a, const DirectionAngles &b)
{
    const double dt = a.theta - b.theta;
    const double dp = wrap_angle(a.phi - b.phi);
    return std::hypot(dt, dp);
}

inline DirectionAngles clamp_angles(double theta, double phi)
{
    return {std::clamp(theta, 0.0, kPi), wrap_angle(phi)};
}

/// Steering directions of the book plus midpoints of neighbouring beams.
inline std::vector<DirectionAngles> candidate_grid(const BeamBook &book, double neighbor_factor)
{
    std::vector<DirectionAngles> out;
    const std::size_t n = book.size();
    for (const Beam &b : book)
        out.push_back(b.steering);
    for (std::size_t i = 0; i < n; ++i)
    {
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i)
                nearest = std::min(nearest, angular_distance(book[i].steering, book[j].steering));
        for (std::size_t j = i + 1; j < n; ++j)
        {
            const auto &a = book[i].steering;
            const auto &b = book[j].steering;
            if (angular_distance(a, b) <= neighbor_factor * nearest + 1e-12)
                out.push_back({0.5 * (a.theta + b.theta), wrap_angle(a.phi + 0.5 * wrap_angle(b.phi - a.phi))});
        }
    }
    return out;
}

} // namespace detail

inline double objective_or_inf(const Eigen::VectorXd &beta, const DirectionAngles &dir, const BeamBook &book,
                               double p_tx, int m_f)
{
    try
    {
        return residual_norm2(beta, dir, book, p_tx, m_f);
    }
    catch (const DegenerateBasisError &)
    {
        return std::numeric_limits<double>::infinity();
    }
}

inline void fill_estimate(DodEstimate &est, const Eigen::VectorXd &beta, const BeamBook &book, double p_tx, int m_f,
                          const MleOptions &opt)
{
    const ScoreFim sf = score_and_fim(beta, est.angles, book, p_tx, m_f, opt.residual_floor);
    est.score = sf.score;
    est.observed_fim = sf.fim;
    est.nuisance = nuisance_mle(beta, est.angles, book, p_tx, m_f);
    est.loglik = concentrated_loglik(beta, est.angles, book, p_tx, m_f, opt.residual_floor);
}

/// Approximate MLE of the DoD: minimizes ||P_A1_perp(theta, phi) beta||^2 by a
/// coarse search over beam directions and their midpoints followed by
/// Gauss-Newton refinement with step halving. `book` holds the reported beams
/// in the order of `beta`.
inline DodEstimate approx_mle_dod(const Eigen::VectorXd &beta, const BeamBook &book, double p_tx, int m_f,
                                  const MleOptions &opt = {})
{
    if (static_cast<std::size_t>(beta.size()) != book.size() || book.empty())
        throw DomainError("approx_mle_dod: beta and beam book sizes differ or are empty");

    DodEstimate est;
    est.few_beams = book.size() < 5;

    double best = std::numeric_limits<double>::infinity();
    DirectionAngles x;
    for (const DirectionAngles &c : detail::candidate_grid(book, opt.neighbor_factor))
    {
        const double f = objective_or_inf(beta, c, book, p_tx, m_f);
        if (f < best)
        {
            best = f;
            x = c;
        }
    }
    if (!std::isfinite(best))
        throw DegenerateBasisError("approx_mle_dod: no candidate direction admits a nuisance fit");
    const DirectionAngles grid_best = x;

    double fx = best;
    const double floor_abs = opt.residual_floor * beta.squaredNorm();
    for (int it = 0; it < opt.max_iter; ++it)
    {
        est.iterations = it + 1;
        const ProjectedResidual pr = projected_residual(beta, x, book, p_tx, m_f);
        const Eigen::Matrix2d jtj = pr.jacobian.transpose() * pr.jacobian;
        const Eigen::Vector2d g = pr.jacobian.transpose() * pr.residual;
        Eigen::Vector2d step = -jtj.ldlt().solve(g);
        if (!step.allFinite())
            step = -symmetric_pinv(jtj).inverse * g;
        if (step.norm() < opt.step_tol || fx <= floor_abs)
        {
            est.converged = true;
            break;
        }
        bool accepted = false;
        for (int h = 0; h < 40; ++h)
        {
            const DirectionAngles trial = detail::clamp_angles(x.theta + step(0), x.phi + step(1));
            const double ft = objective_or_inf(beta, trial, book, p_tx, m_f);
            if (ft < fx)
            {
                x = trial;
                fx = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
            if (step.norm() < 1e-3 * opt.step_tol)
                break;
        }
        if (!accepted || step.norm() < opt.step_tol)
        {
            // No further decrease representable: at a local minimum.
            est.converged = true;
            break;
        }
    }

    est.angles = est.converged ? x : grid_best;
    fill_estimate(est, beta, book, p_tx, m_f, opt);
    return est;
}

/// Convenience overload taking a report and the BS's full beam book.
inline DodEstimate approx_mle_dod(const BrsrpReport &report, const BeamBook &full_book, double p_tx, int m_f,
                                  const MleOptions &opt = {})
{
    return approx_mle_dod(report.beta(), full_book.subset(report.beam_indices), p_tx, m_f, opt);
}

inline constexpr const char *kDodEstimateCsvHeader = "timestamp,bs_id,theta,phi,fim11,fim12,fim22,loglik,converged";

inline void write_dod_estimate_row(std::ostream &os, double timestamp, int bs_id, const DodEstimate &e)
{
    os << format_double(timestamp) << ',' << bs_id << ',' << format_double(e.angles.theta) << ','
       << format_double(e.angles.phi) << ',' << format_double(e.observed_fim(0, 0)) << ','
       << format_double(e.observed_fim(0, 1)) << ',' << format_double(e.observed_fim(1, 1)) << ','
       << format_double(e.loglik) << ',' << (e.converged ? 1 : 0) << '\n';
}

// ---- Exact Gaussian model and full MLE -------------------------------------------

inline ThetaVector make_theta(const DirectionAngles &dir, const Eigen::Vector4d &alpha_real, double noise_floor)
{
    ThetaVector t;
    t << dir.theta, dir.phi, alpha_real, noise_floor;
    return t;
}

/// Mean and diagonal covariance of beta under Theta, with derivatives.
///   mu = s h + sigma^2,  C = (2 sigma^2 s / M_f) h + sigma^4 / M_f,
/// where h = A alpha (real) and s = P_Tx / M_f.
struct GaussianModel
{
    Eigen::VectorXd mean;
    Eigen::VectorXd var;
    Eigen::Matrix<double, Eigen::Dynamic, 7> d_mean;
    Eigen::Matrix<double, Eigen::Dynamic, 7> d_var;
};

inline GaussianModel gaussian_model(const ThetaVector &theta, const BeamBook &book, double p_tx, int m_f)
{
    const DirectionAngles dir{theta(0), theta(1)};
    const SteeringDerivatives sd = steering_matrix_derivatives(book, dir);
    const Eigen::Vector4d alpha = theta.segment<4>(2);
    const double s2 = theta(6);
    const double mf = m_f;
    const double s = p_tx / mf;

    const Eigen::MatrixXd sig = signal_basis(sd.value);
    const Eigen::VectorXd h = sig * alpha;
    const Eigen::VectorXd dh_t = signal_basis(sd.d_theta) * alpha;
    const Eigen::VectorXd dh_p = signal_basis(sd.d_phi) * alpha;
    const double var_coupling = 2.0 * s2 * s / mf;

    GaussianModel g;
    const Eigen::Index k = sig.rows();
    g.mean = s * h + Eigen::VectorXd::Constant(k, s2);
    g.var = var_coupling * h + Eigen::VectorXd::Constant(k, s2 * s2 / mf);
    g.d_mean.resize(k, 7);
    g.d_var.resize(k, 7);
    g.d_mean.col(0) = s * dh_t;
    g.d_mean.col(1) = s * dh_p;
    g.d_mean.middleCols<4>(2) = s * sig;
    g.d_mean.col(6).setOnes();
    g.d_var.col(0) = var_coupling * dh_t;
    g.d_var.col(1) = var_coupling * dh_p;
    g.d_var.middleCols<4>(2) = var_coupling * sig;
    g.d_var.col(6) = (2.0 * s / mf) * h + Eigen::VectorXd::Constant(k, 2.0 * s2 / mf);
    return g;
}

/// Log-density of independent Gaussians with the given means and variances.
inline double gaussian_loglik(const Eigen::VectorXd &beta, const Eigen::VectorXd &mean, const Eigen::VectorXd &var)
{
    if (!(var.minCoeff() > 0.0))
        throw DomainError("gaussian_loglik: covariance has a non-positive diagonal entry");
    const Eigen::ArrayXd e = (beta - mean).array();
    const double k = static_cast<double>(beta.size());
    return -0.5 * k * std::log(kTwoPi) - 0.5 * var.array().log().sum() - 0.5 * (e.square() / var.array()).sum();
}

/// Exact Gaussian log-likelihood of Theta.
inline double full_loglik(const Eigen::VectorXd &beta, const ThetaVector &theta, const BeamBook &book, double p_tx,
                          int m_f)
{
    const GaussianModel g = gaussian_model(theta, book, p_tx, m_f);
    return gaussian_loglik(beta, g.mean, g.var);
}

inline ThetaVector full_loglik_gradient(const Eigen::VectorXd &beta, const ThetaVector &theta, const BeamBook &book,
                                        double p_tx, int m_f)
{
    const GaussianModel g = gaussian_model(theta, book, p_tx, m_f);
    if (!(g.var.minCoeff() > 0.0))
        throw DomainError("full_loglik_gradient: covariance has a non-positive diagonal entry");
    const Eigen::ArrayXd e = (beta - g.mean).array();
    const Eigen::ArrayXd inv_c = g.var.array().inverse();
    ThetaVector grad;
    for (int m = 0; m < 7; ++m)
    {
        const Eigen::ArrayXd dmu = g.d_mean.col(m).array();
        const Eigen::ArrayXd dc = g.d_var.col(m).array();
        grad(m) = (dmu * e * inv_c).sum() - 0.5 * (dc * inv_c).sum() + 0.5 * (e.square() * dc * inv_c.square()).sum();
    }
    return grad;
}

/// Expected Fisher information of Theta under the Gaussian model.
inline Eigen::Matrix<double, 7, 7> gaussian_fim(const GaussianModel &g)
{
    const Eigen::ArrayXd inv_c = g.var.array().inverse();
    Eigen::Matrix<double, 7, 7> f;
    for (int m = 0; m < 7; ++m)
        for (int n = m; n < 7; ++n)
        {
            const double mean_term = (g.d_mean.col(m).array() * g.d_mean.col(n).array() * inv_c).sum();
            const double var_term = 0.5 * (g.d_var.col(m).array() * g.d_var.col(n).array() * inv_c.square()).sum();
            f(m, n) = f(n, m) = mean_term + var_term;
        }
    return f;
}

struct FullMleResult
{
    DodEstimate estimate;
    ThetaVector theta = ThetaVector::Zero();
    ThetaVector gradient = ThetaVector::Zero();
    double loglik = 0.0;
    double init_loglik = 0.0;
    bool converged = false;
    int iterations = 0;
};

/// Refines an approximate-MLE estimate by quasi-Newton (BFGS) ascent of the
/// exact Gaussian log-likelihood over all seven coordinates of Theta. The noise
/// floor is optimized in log coordinates and every coordinate is scaled by the
/// square root of its Fisher information at the start point. Returns the
/// initial point unchanged (converged = false) when no ascent is possible.
inline FullMleResult full_mle_dod(const Eigen::VectorXd &beta, const BeamBook &book, double p_tx, int m_f,
                                  const DodEstimate &init, int max_iter = 200, double grad_tol = 1e-9)
{
    if (static_cast<std::size_t>(beta.size()) != book.size())
        throw DomainError("full_mle_dod: beta and beam book sizes differ");

    FullMleResult out;
    out.estimate = init;
    ThetaVector x0 = make_theta(init.angles, init.nuisance.alpha_real, init.nuisance.noise_floor);
    if (!(x0(6) > 0.0))
        x0(6) = std::max(1e-6 * beta.mean(), std::numeric_limits<double>::min());
    out.theta = x0;

    auto safe_loglik = [&](const ThetaVector &t) {
        try
        {
            return full_loglik(beta, t, book, p_tx, m_f);
        }
        catch (const DomainError &)
        {
            return -std::numeric_limits<double>::infinity();
        }
    };

    out.init_loglik = safe_loglik(x0);
    out.loglik = out.init_loglik;
    if (!std::isfinite(out.init_loglik))
        return out;

    // u = scale .* [theta, phi, alpha_r, log sigma^2]
    const Eigen::Matrix<double, 7, 7> f0 = gaussian_fim(gaussian_model(x0, book, p_tx, m_f));
    ThetaVector scale;
    for (int i = 0; i < 7; ++i)
    {
        double fii = f0(i, i);
        if (i == 6)
            fii *= x0(6) * x0(6);
        scale(i) = fii > 0.0 ? std::sqrt(fii) : 1.0;
    }
    auto to_theta = [&](const ThetaVector &u) {
        ThetaVector t = u.cwiseQuotient(scale);
        t(6) = std::exp(t(6));
        return t;
    };
    auto to_u = [&](const ThetaVector &t) {
        ThetaVector u = t;
        u(6) = std::log(t(6));
        return ThetaVector(u.cwiseProduct(scale));
    };
    auto grad_u = [&](const ThetaVector &t) {
        ThetaVector g = full_loglik_gradient(beta, t, book, p_tx, m_f);
        g(6) *= t(6);
        return ThetaVector(g.cwiseQuotient(scale));
    };

    Eigen::Matrix<double, 7, 7> fs = f0;
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j)
            fs(i, j) *= (i == 6 ? x0(6) : 1.0) * (j == 6 ? x0(6) : 1.0) / (scale(i) * scale(j));
    const SymmetricInverse h0 = symmetric_pinv(fs);
    Eigen::Matrix<double, 7, 7> hinv = h0.inverse;

    ThetaVector u = to_u(x0);
    ThetaVector g = grad_u(x0);
    double f = out.init_loglik;
    int it = 0;
    for (; it < max_iter; ++it)
    {
        if (g.norm() < grad_tol * (1.0 + std::abs(f)))
        {
            out.converged = true;
            break;
        }
        ThetaVector d = hinv * g;
        if (!(g.dot(d) > 0.0))
        {
            hinv = h0.inverse;
            d = hinv * g;
            if (!(g.dot(d) > 0.0))
                break;
        }
        double step = 1.0;
        bool accepted = false;
        ThetaVector u_new;
        double f_new = f;
        for (int ls = 0; ls < 50; ++ls)
        {
            u_new = u + step * d;
            f_new = safe_loglik(to_theta(u_new));
            if (std::isfinite(f_new) && f_new >= f + 1e-4 * step * g.dot(d))
            {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted)
        {
            out.converged = (step * d).norm() < 1e-12;
            break;
        }
        const ThetaVector g_new = grad_u(to_theta(u_new));
        const ThetaVector s_vec = u_new - u;
        const ThetaVector y_vec = g - g_new; // gradient change of -loglik
        const double sy = s_vec.dot(y_vec);
        if (sy > 1e-300)
        {
            const double rho = 1.0 / sy;
            const Eigen::Matrix<double, 7, 7> eye = Eigen::Matrix<double, 7, 7>::Identity();
            hinv = (eye - rho * s_vec * y_vec.transpose()) * hinv * (eye - rho * y_vec * s_vec.transpose()) +
                   rho * s_vec * s_vec.transpose();
        }
        const bool tiny = std::abs(f_new - f) <= 1e-15 * (1.0 + std::abs(f));
        u = u_new;
        g = g_new;
        f = f_new;
        if (tiny)
        {
            out.converged = true;
            break;
        }
    }
    out.iterations = it;

    const ThetaVector t = to_theta(u);
    if (!(f >= out.init_loglik))
        return out;
    out.theta = t;
    out.loglik = f;
    out.gradient = full_loglik_gradient(beta, t, book, p_tx, m_f);
    DodEstimate &e = out.estimate;
    e.angles = DirectionAngles::normalized(t(0), t(1));
    e.nuisance.alpha_real = t.segment<4>(2);
    e.nuisance.alpha = alpha_from_real(e.nuisance.alpha_real);
    e.nuisance.noise_floor = t(6);
    e.loglik = f;
    e.converged = out.converged;
    e.iterations = it;
    const Eigen::Matrix<double, 7, 7> fim = gaussian_fim(gaussian_model(t, book, p_tx, m_f));
    e.observed_fim = fim.topLeftCorner<2, 2>();
    e.score = out.gradient.head<2>();
    return out;
}

} // namespace bfpos

#endif // BFPOS_ESTIMATION_HPP
