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

#ifndef BFPOS_TRIANGULATION_HPP
#define BFPOS_TRIANGULATION_HPP

// Closed-form total-least-squares triangulation of the UE from K >= 2
// directions of departure. Each BS pair (n, m) contributes
//
//   r_n u_n - r_m u_m = p_m - p_n
//
// with u the unit vector of the DoD; the stacked system D r = p~ is solved
// in the TLS sense.

#include "common.hpp"
#include "scenario.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace bfpos
{

struct TriangulationProblem
{
    std::vector<int> bs_ids;
    std::vector<DirectionAngles> dods;
    std::vector<Position3D> bs_positions;
    std::vector<std::pair<int, int>> pairs; // (n, m) zero-based, ordered (0,1), (0,2), ..., (K-2, K-1)
    Eigen::MatrixXd d_matrix;               // 3P x 2P block diagonal, P = K(K-1)/2
    Eigen::VectorXd rhs;                    // 3P
};

struct TriangulationResult
{
    Eigen::VectorXd ranges;              // 2P
    std::vector<Position3D> candidates;  // 2P
    Position3D position;                 // component-wise median of the candidates
    bool negative_range = false;
};

inline TriangulationProblem build_problem(const std::vector<DirectionAngles> &dods,
                                          const std::vector<Position3D> &bs_positions,
                                          std::vector<int> bs_ids = {})
{
    const std::size_t k = dods.size();
    if (k < 2 || bs_positions.size() != k)
        throw DomainError("build_problem: need matching DoDs and positions for at least two base stations");
    if (bs_ids.empty())
        for (std::size_t i = 0; i < k; ++i)
            bs_ids.push_back(static_cast<int>(i) + 1);
    for (const auto &d : dods)
        if (!std::isfinite(d.theta) || !std::isfinite(d.phi) || d.theta < 0.0 || d.theta > kPi)
            throw DomainError("build_problem: invalid angles");

    TriangulationProblem p;
    p.bs_ids = std::move(bs_ids);
    p.dods = dods;
    p.bs_positions = bs_positions;
    for (std::size_t n = 0; n < k; ++n)
        for (std::size_t m = n + 1; m < k; ++m)
            p.pairs.emplace_back(static_cast<int>(n), static_cast<int>(m));

    const auto np = static_cast<Eigen::Index>(p.pairs.size());
    p.d_matrix = Eigen::MatrixXd::Zero(3 * np, 2 * np);
    p.rhs.resize(3 * np);
    for (Eigen::Index j = 0; j < np; ++j)
    {
        const auto [n, m] = p.pairs[static_cast<std::size_t>(j)];
        p.d_matrix.block<3, 1>(3 * j, 2 * j) = dods[n].unit_vector();
        p.d_matrix.block<3, 1>(3 * j, 2 * j + 1) = -dods[m].unit_vector();
        p.rhs.segment<3>(3 * j) = bs_positions[m].vec() - bs_positions[n].vec();
    }
    return p;
}

inline double median_of(std::vector<double> v)
{
    if (v.empty())
        throw DomainError("median_of: empty input");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline TriangulationResult tls_triangulate(const TriangulationProblem &problem)
{
    const Eigen::Index cols = problem.d_matrix.cols();
    Eigen::MatrixXd aug(problem.d_matrix.rows(), cols + 1);
    aug << problem.d_matrix, problem.rhs;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(aug, Eigen::ComputeFullV);
    const Eigen::VectorXd sv = svd.singularValues();
    const Eigen::VectorXd v = svd.matrixV().col(cols);
    const double v_last = v(cols);
    // sv(cols - 1) is the smallest singular value of the bearing part: it
    // vanishes when two bearings are parallel.
    if (std::abs(v_last) < 1e-12 || sv(cols - 1) <= 1e-9 * sv(0))
        throw DegenerateGeometryError("tls_triangulate: bearings are (nearly) parallel");

    TriangulationResult out;
    out.ranges = -v.head(cols) / v_last;
    std::vector<double> xs, ys, zs;
    for (std::size_t j = 0; j < problem.pairs.size(); ++j)
    {
        const auto [n, m] = problem.pairs[j];
        const auto slot = static_cast<Eigen::Index>(2 * j);
        for (int side = 0; side < 2; ++side)
        {
            const int b = side == 0 ? n : m;
            const double r = out.ranges(slot + side);
            out.negative_range = out.negative_range || r < 0.0;
            const Eigen::Vector3d c = r * problem.dods[b].unit_vector() + problem.bs_positions[b].vec();
            out.candidates.push_back(Position3D::from(c));
            xs.push_back(c.x());
            ys.push_back(c.y());
            zs.push_back(c.z());
        }
    }
    out.position = {median_of(xs), median_of(ys), median_of(zs)};
    return out;
}

} // namespace bfpos

#endif // BFPOS_TRIANGULATION_HPP
