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

#ifndef BFPOS_BOUNDS_HPP
#define BFPOS_BOUNDS_HPP

// Fisher information and Cramer-Rao bounds for Theta and for the 3D position.

#include "common.hpp"
#include "estimation.hpp"
#include "measurement.hpp"
#include "scenario.hpp"
#include "tracking.hpp"

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace bfpos
{

struct FimResult
{
    Eigen::MatrixXd fim;
    Eigen::MatrixXd crb;
    double condition_number = 0.0;
    Eigen::Index rank = 0;
    bool pseudo = false; // crb is a pseudo-inverse
};

inline FimResult make_fim_result(const Eigen::MatrixXd &fim)
{
    FimResult r;
    r.fim = symmetrize(fim);
    const SymmetricInverse inv = symmetric_pinv(r.fim);
    r.crb = inv.inverse;
    r.rank = inv.rank;
    r.pseudo = inv.pseudo;
    r.condition_number = inv.condition;
    return r;
}

/// Theta of a line-of-sight link for a given UE beam. The channel's path
/// amplitude enters through `pilot_power`; `p_tx` is the transmit power the
/// estimator assumes.
inline ThetaVector true_theta(const ChannelRealization &channel, const Beam &ue_beam, double pilot_power, double p_tx,
                              double noise_var)
{
    const Eigen::Vector2cd bu = beam_response(ue_beam, channel.doa);
    const Eigen::Matrix2cd m = channel.gamma.adjoint() * bu.conjugate() * bu.transpose() * channel.gamma;
    const double g = pilot_power / p_tx;
    Eigen::Vector4d a;
    a << g * m(1, 1).real(), g * m(0, 0).real(), g * m(0, 1).real(), g * m(0, 1).imag();
    return make_theta(channel.dod, a, noise_var);
}

inline FimResult fim_dod(const ThetaVector &theta, const BeamBook &book, double p_tx, int m_f)
{
    const GaussianModel g = gaussian_model(theta, book, p_tx, m_f);
    if (!(g.var.minCoeff() > 0.0))
        throw DomainError("fim_dod: covariance is not positive definite");
    return make_fim_result(gaussian_fim(g));
}

inline Eigen::Matrix2d crb_dod_block(const FimResult &r)
{
    return symmetrize(Eigen::Matrix2d(r.crb.topLeftCorner<2, 2>()));
}

/// Position-dependent angle covariance of BS k.
using AngleCovFn = std::function<Eigen::Matrix2d(std::size_t k, const Position3D &p)>;

/// Position FIM from K angle measurements with covariances C_k(p):
///   J_k^T C_k^-1 J_k + 1/2 tr(C_k^-1 dC_k/dp_m C_k^-1 dC_k/dp_n).
/// dC_k/dp is taken by central differences with step `h` (meters).
inline FimResult fim_position(const Position3D &p, const std::vector<BsPose> &bs_poses, const AngleCovFn &cov_fn,
                              double h = 1e-3)
{
    if (bs_poses.empty())
        throw DomainError("fim_position: no base stations");
    Eigen::Matrix3d f = Eigen::Matrix3d::Zero();
    for (std::size_t k = 0; k < bs_poses.size(); ++k)
    {
        const Eigen::Matrix<double, 2, 3> jac = dod_jacobian(bs_poses[k].position, p);
        bool reg = false;
        const Eigen::Matrix2d ci = spd_inverse(Eigen::Matrix2d(cov_fn(k, p)), reg);
        f += jac.transpose() * ci * jac;

        Eigen::Matrix2d dc[3];
        bool varies = false;
        for (int m = 0; m < 3; ++m)
        {
            Eigen::Vector3d e = Eigen::Vector3d::Zero();
            e(m) = h;
            dc[m] = (cov_fn(k, Position3D::from(p.vec() + e)) - cov_fn(k, Position3D::from(p.vec() - e))) / (2.0 * h);
            varies = varies || !dc[m].isZero(0.0);
        }
        if (!varies)
            continue;
        for (int m = 0; m < 3; ++m)
            for (int n = 0; n < 3; ++n)
                f(m, n) += 0.5 * (ci * dc[m] * ci * dc[n]).trace();
    }
    return make_fim_result(f);
}

/// Position FIM with position-independent angle covariances.
inline FimResult fim_position(const Position3D &p, const std::vector<BsPose> &bs_poses,
                              const std::vector<Eigen::Matrix2d> &angle_covs)
{
    if (angle_covs.size() != bs_poses.size())
        throw DomainError("fim_position: one angle covariance per base station is required");
    return fim_position(p, bs_poses, [&](std::size_t k, const Position3D &) { return angle_covs[k]; });
}

} // namespace bfpos

#endif // BFPOS_BOUNDS_HPP
