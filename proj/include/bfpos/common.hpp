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

#ifndef BFPOS_COMMON_HPP
#define BFPOS_COMMON_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <complex>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace bfpos
{

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kSpeedOfLight = 299792458.0;

using cdouble = std::complex<double>;

// ---- Errors ------------------------------------------------------------

struct Error : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
struct DomainError : Error
{
    using Error::Error;
};

/// Two points closer than the coincidence tolerance (BS/UE geometry).
struct CoincidentPointsError : Error
{
    using Error::Error;
};

/// Too few reported beams for the rank of the nuisance basis.
struct DegenerateBasisError : Error
{
    using Error::Error;
};

/// A matrix that must be inverted is singular within tolerance.
struct SingularMatrixError : Error
{
    using Error::Error;
};

/// Bearing geometry does not determine a unique position.
struct DegenerateGeometryError : Error
{
    using Error::Error;
};

struct ConfigError : Error
{
    using Error::Error;
};

/// Report timestamp older than the tracker state.
struct OutOfOrderError : Error
{
    using Error::Error;
};

/// Every tracker dropped out of the fusion stage.
struct DivergenceError : Error
{
    using Error::Error;
};

// ---- Angles and units ----------------------------------------------------

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a)
{
    double r = std::remainder(a, kTwoPi);
    if (r <= -kPi)
        r += kTwoPi;
    return r;
}

inline constexpr double deg2rad(double d) { return d * (kPi / 180.0); }
inline constexpr double rad2deg(double r) { return r * (180.0 / kPi); }
inline double db2lin(double db) { return std::pow(10.0, db / 10.0); }
inline double lin2db(double x) { return 10.0 * std::log10(x); }
inline double dbm2watt(double dbm) { return 1e-3 * db2lin(dbm); }

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- Symmetric matrix helpers -------------------------------------------

template <typename Derived>
typename Derived::PlainObject symmetrize(const Eigen::MatrixBase<Derived> &m)
{
    return 0.5 * (m + m.transpose());
}

/// Symmetrizes and lifts every eigenvalue to at least `floor`.
template <typename Derived>
typename Derived::PlainObject floor_eigenvalues(const Eigen::MatrixBase<Derived> &m, double floor = 1e-12)
{
    using Plain = typename Derived::PlainObject;
    Plain s = symmetrize(m);
    Eigen::SelfAdjointEigenSolver<Plain> es(s);
    if (es.info() != Eigen::Success)
        return s;
    if (es.eigenvalues().minCoeff() >= floor)
        return s;
    auto lam = es.eigenvalues().cwiseMax(floor);
    Plain out = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    return symmetrize(out);
}

struct SymmetricInverse
{
    Eigen::MatrixXd inverse;
    Eigen::Index rank = 0;
    bool pseudo = false;     // true when any direction was discarded
    double condition = 0.0;  // of the diagonally equilibrated matrix
};

/// Pseudo-inverse of a symmetric PSD matrix.
///
/// The matrix is first equilibrated by its diagonal so that parameters with
/// very different physical scales (radians, watts) do not fall below the
/// relative threshold by accident. Eigenvalues below rel_tol * max are treated
/// as zero; rows with zero diagonal map to zero rows of the result.
inline SymmetricInverse symmetric_pinv(const Eigen::MatrixXd &m, double rel_tol = 1e-12)
{
    const Eigen::Index n = m.rows();
    SymmetricInverse out;
    out.inverse = Eigen::MatrixXd::Zero(n, n);

    Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < n; ++i)
        if (m(i, i) > 0.0 && std::isfinite(m(i, i)))
        {
            d(i) = std::sqrt(m(i, i));
            active.push_back(i);
        }
    const auto na = static_cast<Eigen::Index>(active.size());
    if (na == 0)
    {
        out.pseudo = n > 0;
        out.condition = std::numeric_limits<double>::infinity();
        return out;
    }

    Eigen::MatrixXd s(na, na);
    for (Eigen::Index a = 0; a < na; ++a)
        for (Eigen::Index b = 0; b < na; ++b)
            s(a, b) = 0.5 * (m(active[a], active[b]) + m(active[b], active[a])) / (d(active[a]) * d(active[b]));

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    const Eigen::VectorXd lam = es.eigenvalues();
    const double lmax = lam.maxCoeff();
    const double tol = rel_tol * lmax;
    Eigen::VectorXd inv_lam = Eigen::VectorXd::Zero(na);
    double lmin_kept = lmax;
    for (Eigen::Index k = 0; k < na; ++k)
        if (lam(k) > tol)
        {
            inv_lam(k) = 1.0 / lam(k);
            lmin_kept = std::min(lmin_kept, lam(k));
            ++out.rank;
        }
    const Eigen::MatrixXd si = es.eigenvectors() * inv_lam.asDiagonal() * es.eigenvectors().transpose();
    for (Eigen::Index a = 0; a < na; ++a)
        for (Eigen::Index b = 0; b < na; ++b)
            out.inverse(active[a], active[b]) = si(a, b) / (d(active[a]) * d(active[b]));

    out.inverse = symmetrize(out.inverse);
    out.pseudo = out.rank < n;
    out.condition = out.pseudo ? std::numeric_limits<double>::infinity() : lmax / lmin_kept;
    return out;
}

/// Inverse of a symmetric positive-definite matrix. Adds `jitter` to the
/// diagonal when the Cholesky factorization fails and reports it.
template <typename Matrix>
Matrix spd_inverse(const Matrix &m, bool &regularized, double jitter = 1e-12)
{
    Matrix s = symmetrize(m);
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() == Eigen::Success)
    {
        regularized = false;
        Matrix inv = llt.solve(Matrix::Identity(s.rows(), s.cols()));
        return symmetrize(inv);
    }
    regularized = true;
    Matrix j = s;
    double scale = jitter;
    for (int attempt = 0; attempt < 30; ++attempt)
    {
        j = s + scale * Matrix::Identity(s.rows(), s.cols());
        Eigen::LLT<Matrix> l2(j);
        if (l2.info() == Eigen::Success)
        {
            Matrix inv = l2.solve(Matrix::Identity(s.rows(), s.cols()));
            return symmetrize(inv);
        }
        scale *= 10.0;
    }
    throw SingularMatrixError("spd_inverse: matrix not positive definite even after regularization");
}

} // namespace bfpos

#endif // BFPOS_COMMON_HPP
