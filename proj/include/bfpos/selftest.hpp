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

#ifndef BFPOS_SELFTEST_HPP
#define BFPOS_SELFTEST_HPP

// Quick invariant checks runnable from the command line.

#include "estimation.hpp"
#include "scenario.hpp"
#include "tracking.hpp"
#include "triangulation.hpp"

#include <Eigen/Dense>

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace bfpos
{

struct SelftestResult
{
    std::string name;
    bool passed = false;
    double worst = 0.0; // largest error seen
};

namespace detail
{

inline DirectionAngles random_direction(std::mt19937_64 &rng, double theta_lo = 0.3, double theta_hi = kPi - 0.3)
{
    std::uniform_real_distribution<double> ut(theta_lo, theta_hi), up(-kPi, kPi);
    return {ut(rng), up(rng)};
}

inline BeamBook random_book(std::mt19937_64 &rng, const DirectionAngles &around, int k, bool dual_pol)
{
    std::normal_distribution<double> n(0.0, deg2rad(4.0));
    std::uniform_real_distribution<double> w(deg2rad(3.0), deg2rad(8.0));
    std::vector<Beam> beams;
    for (int j = 0; j < k; ++j)
    {
        Beam b;
        b.steering = {std::clamp(around.theta + n(rng), 0.05, kPi - 0.05), wrap_angle(around.phi + n(rng))};
        b.width_az = w(rng);
        b.width_el = w(rng);
        b.peak_gain = 10.0;
        if (dual_pol)
        {
            std::normal_distribution<double> c(0.0, 1.0);
            b.polarization = Eigen::Vector2cd(cdouble(c(rng), c(rng)), cdouble(c(rng), c(rng))).normalized();
        }
        beams.push_back(b);
    }
    return BeamBook(std::move(beams));
}

} // namespace detail

inline std::vector<SelftestResult> run_selftest(std::uint64_t seed = 1)
{
    std::mt19937_64 rng(seed);
    std::vector<SelftestResult> out;

    {
        SelftestResult r{"projector identities", true, 0.0};
        for (int i = 0; i < 100; ++i)
        {
            const DirectionAngles d = detail::random_direction(rng);
            const BeamBook book = detail::random_book(rng, d, 12, i % 2 == 0);
            const SteeringMatrix a = steering_matrix(book, d);
            const Projector p = projector_a1(a, 1.0, 10);
            const ObliqueProjectors op = oblique_projectors(a, 1.0, 10);
            const Eigen::VectorXd ones = Eigen::VectorXd::Ones(a.rows());
            r.worst = std::max({r.worst, (p.proj * p.proj - p.proj).norm(), (op.p_a + op.p_1 - p.proj).norm(),
                                (op.p_a * ones).norm(), (p.perp * ones).norm()});
        }
        r.passed = r.worst < 1e-10;
        out.push_back(r);
    }
    {
        SelftestResult r{"tls exactness", true, 0.0};
        std::uniform_real_distribution<double> u(-200.0, 200.0), h(20.0, 60.0);
        for (int i = 0; i < 100; ++i)
        {
            const int k = 2 + i % 3;
            const Position3D ue{u(rng), u(rng), 1.5};
            std::vector<Position3D> bs;
            std::vector<DirectionAngles> dods;
            for (int b = 0; b < k; ++b)
            {
                bs.push_back({u(rng), u(rng), h(rng)});
                dods.push_back(dod_from_positions(bs.back(), ue));
            }
            try
            {
                const auto res = tls_triangulate(build_problem(dods, bs));
                r.worst = std::max(r.worst, (res.position.vec() - ue.vec()).norm());
            }
            catch (const DegenerateGeometryError &)
            {
            }
        }
        r.passed = r.worst < 1e-6;
        out.push_back(r);
    }
    {
        SelftestResult r{"information vs gain form", true, 0.0};
        std::normal_distribution<double> n(0.0, 1.0);
        for (int i = 0; i < 100; ++i)
        {
            Eigen::Matrix4d l, hm;
            for (int a = 0; a < 16; ++a)
            {
                l(a) = n(rng);
                hm(a) = n(rng);
            }
            const Eigen::Matrix4d prior = l * l.transpose() + 0.1 * Eigen::Matrix4d::Identity();
            const Eigen::Matrix2d rr = Eigen::Vector2d(0.5 + std::abs(n(rng)), 0.5 + std::abs(n(rng))).asDiagonal();
            const Eigen::Matrix<double, 2, 4> hh = hm.topRows<2>();
            Eigen::Vector4d s;
            Eigen::Vector2d z;
            for (int a = 0; a < 4; ++a)
                s(a) = n(rng);
            z << n(rng), n(rng);
            const Eigen::Vector4d q = hh.transpose() * rr.inverse() * (z - hh * s);
            const Eigen::Matrix4d f = hh.transpose() * rr.inverse() * hh;
            const auto upd = information_update<4>(s, prior, q, f);
            const Eigen::Matrix<double, 4, 2> gain = prior * hh.transpose() * (hh * prior * hh.transpose() + rr).inverse();
            const Eigen::Vector4d s_ref = s + gain * (z - hh * s);
            const Eigen::Matrix4d c_ref = (Eigen::Matrix4d::Identity() - gain * hh) * prior;
            r.worst = std::max({r.worst, (upd.s - s_ref).norm(), (upd.cov - c_ref).norm()});
        }
        r.passed = r.worst < 1e-8;
        out.push_back(r);
    }
    {
        SelftestResult r{"dod jacobian", true, 0.0};
        std::uniform_real_distribution<double> u(-100.0, 100.0);
        for (int i = 0; i < 100; ++i)
        {
            const Position3D bs{u(rng), u(rng), 50.0}, p{u(rng), u(rng), 1.5};
            const Eigen::Matrix<double, 2, 3> jac = dod_jacobian(bs, p);
            for (int m = 0; m < 3; ++m)
            {
                Eigen::Vector3d e = Eigen::Vector3d::Zero();
                e(m) = 1e-5;
                const auto a = dod_from_positions(bs, Position3D::from(p.vec() + e));
                const auto b = dod_from_positions(bs, Position3D::from(p.vec() - e));
                const Eigen::Vector2d fd((a.theta - b.theta) / 2e-5, wrap_angle(a.phi - b.phi) / 2e-5);
                r.worst = std::max(r.worst, (fd - jac.col(m)).norm() / std::max(jac.col(m).norm(), 1e-6));
            }
        }
        r.passed = r.worst < 1e-5;
        out.push_back(r);
    }
    return out;
}

} // namespace bfpos

#endif // BFPOS_SELFTEST_HPP
