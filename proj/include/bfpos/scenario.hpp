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

#ifndef BFPOS_SCENARIO_HPP
#define BFPOS_SCENARIO_HPP

#include "common.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace bfpos
{

// Coordinate conventions
// - global Cartesian frame, x east, y north, z up, meters
// - theta is co-elevation measured from +z, in [0, pi]; pi/2 is the horizon
// - phi is azimuth measured counter-clockwise from +x, in (-pi, pi]

struct Position3D
{
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Eigen::Vector3d vec() const { return {x, y, z}; }
    static Position3D from(const Eigen::Vector3d &v) { return {v.x(), v.y(), v.z()}; }
    bool is_finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

struct DirectionAngles
{
    double theta = kPi / 2.0;
    double phi = 0.0;

    /// Brings arbitrary (theta, phi) into the canonical ranges. A co-elevation
    /// beyond a pole is reflected back and the azimuth flipped by pi.
    static DirectionAngles normalized(double theta, double phi)
    {
        double t = std::remainder(theta, kTwoPi); // (-pi, pi]
        if (t < 0.0)
        {
            t = -t;
            phi += kPi;
        }
        return {t, wrap_angle(phi)};
    }

    Eigen::Vector3d unit_vector() const
    {
        const double st = std::sin(theta);
        return {st * std::cos(phi), st * std::sin(phi), std::cos(theta)};
    }
};

/// One beam of a panel: separable Gaussian main lobe, no side lobes.
struct Beam
{
    DirectionAngles steering;
    double width_el = deg2rad(3.0); // 3 dB (power) beamwidths
    double width_az = deg2rad(3.0);
    double peak_gain = 1.0;         // linear amplitude
    Eigen::Vector2cd polarization{cdouble(1.0, 0.0), cdouble(0.0, 0.0)}; // [theta, phi] components
};

/// Value and angular derivatives of a beam's polarimetric response.
struct BeamResponse
{
    Eigen::Vector2cd value;
    Eigen::Vector2cd d_theta;
    Eigen::Vector2cd d_phi;
};

namespace detail
{
// Amplitude taper exp(-2 ln2 u) with u the squared offset in beamwidths; the
// power pattern then drops by exactly 3 dB half a beamwidth off boresight.
inline constexpr double kTaper = 2.0 * std::numbers::ln2;
} // namespace detail

/// Real main-lobe amplitude gain of a beam towards `dir`.
inline double beam_gain(const Beam &beam, const DirectionAngles &dir)
{
    const double del = (dir.theta - beam.steering.theta) / beam.width_el;
    const double daz = wrap_angle(dir.phi - beam.steering.phi) / beam.width_az;
    return beam.peak_gain * std::exp(-detail::kTaper * (del * del + daz * daz));
}

inline Eigen::Vector2cd beam_response(const Beam &beam, const DirectionAngles &dir)
{
    return beam.polarization * beam_gain(beam, dir);
}

inline BeamResponse beam_response_derivatives(const Beam &beam, const DirectionAngles &dir)
{
    const double del = dir.theta - beam.steering.theta;
    const double daz = wrap_angle(dir.phi - beam.steering.phi);
    const double we2 = beam.width_el * beam.width_el;
    const double wa2 = beam.width_az * beam.width_az;
    const double g = beam.peak_gain * std::exp(-detail::kTaper * (del * del / we2 + daz * daz / wa2));
    const double dg_dt = -2.0 * detail::kTaper * del / we2 * g;
    const double dg_dp = -2.0 * detail::kTaper * daz / wa2 * g;
    return {beam.polarization * g, beam.polarization * dg_dt, beam.polarization * dg_dp};
}

/// Ordered set of beams of one panel (BS or UE).
class BeamBook
{
public:
    BeamBook() = default;

    explicit BeamBook(std::vector<Beam> beams) : beams_(std::move(beams))
    {
        for (std::size_t i = 0; i < beams_.size(); ++i)
        {
            const Beam &b = beams_[i];
            if (!(b.width_el > 0.0) || !(b.width_az > 0.0))
                throw DomainError("BeamBook: beamwidths must be positive");
            if (!(b.peak_gain > 0.0))
                throw DomainError("BeamBook: peak gain must be positive");
            for (std::size_t j = 0; j < i; ++j)
            {
                const auto &a = beams_[j].steering;
                if (std::abs(a.theta - b.steering.theta) < 1e-12 &&
                    std::abs(wrap_angle(a.phi - b.steering.phi)) < 1e-12)
                    throw DomainError("BeamBook: duplicate steering direction");
            }
        }
    }

    std::size_t size() const { return beams_.size(); }
    bool empty() const { return beams_.empty(); }
    const Beam &operator[](std::size_t i) const { return beams_[i]; }
    const std::vector<Beam> &beams() const { return beams_; }
    auto begin() const { return beams_.begin(); }
    auto end() const { return beams_.end(); }

    /// Beams at the given indices, in that order.
    BeamBook subset(std::span<const int> indices) const
    {
        BeamBook out;
        out.beams_.reserve(indices.size());
        for (int i : indices)
        {
            if (i < 0 || static_cast<std::size_t>(i) >= beams_.size())
                throw DomainError("BeamBook::subset: index out of range");
            out.beams_.push_back(beams_[static_cast<std::size_t>(i)]);
        }
        return out;
    }

    /// Shifts every steering direction by the given co-elevation and azimuth offsets.
    BeamBook rotated(double coelevation_offset, double azimuth_offset) const
    {
        std::vector<Beam> out = beams_;
        for (Beam &b : out)
            b.steering = DirectionAngles::normalized(b.steering.theta + coelevation_offset,
                                                     b.steering.phi + azimuth_offset);
        return BeamBook(std::move(out));
    }

private:
    std::vector<Beam> beams_;
};

struct BeamGridSpec
{
    double span_az = deg2rad(40.0);
    double span_el = deg2rad(40.0);
    int n_az = 8;
    int n_el = 8;
    double width_az = deg2rad(3.0);
    double width_el = deg2rad(3.0);
    double peak_gain = std::sqrt(1000.0);
    DirectionAngles center{kPi / 2.0, 0.0};
    Eigen::Vector2cd polarization{cdouble(1.0, 0.0), cdouble(0.0, 0.0)};
};

/// Uniform grid of n_az x n_el steering directions spaced span/n apart and
/// centred on `spec.center`. Beam index = i_el * n_az + i_az.
inline BeamBook make_beam_grid(const BeamGridSpec &spec)
{
    if (spec.n_az < 1 || spec.n_el < 1)
        throw DomainError("make_beam_grid: grid must contain at least one beam");
    if ((spec.n_az > 1 && !(spec.span_az > 0.0)) || (spec.n_el > 1 && !(spec.span_el > 0.0)))
        throw DomainError("make_beam_grid: spans must be positive");
    if (spec.span_az < 0.0 || spec.span_el < 0.0)
        throw DomainError("make_beam_grid: spans must be non-negative");

    const double step_az = spec.span_az / spec.n_az;
    const double step_el = spec.span_el / spec.n_el;
    std::vector<Beam> beams;
    beams.reserve(static_cast<std::size_t>(spec.n_az * spec.n_el));
    for (int ie = 0; ie < spec.n_el; ++ie)
        for (int ia = 0; ia < spec.n_az; ++ia)
        {
            Beam b;
            const double oe = (ie - 0.5 * (spec.n_el - 1)) * step_el;
            const double oa = (ia - 0.5 * (spec.n_az - 1)) * step_az;
            b.steering = DirectionAngles::normalized(spec.center.theta + oe, spec.center.phi + oa);
            b.width_az = spec.width_az;
            b.width_el = spec.width_el;
            b.peak_gain = spec.peak_gain;
            b.polarization = spec.polarization;
            beams.push_back(b);
        }
    return BeamBook(std::move(beams));
}

// ---- Geometry ------------------------------------------------------------

inline constexpr double kCoincidenceTolerance = 1e-9;

/// Line-of-sight departure angles from `from` towards `to`.
inline DirectionAngles dod_from_positions(const Position3D &from, const Position3D &to)
{
    const double dx = to.x - from.x;
    const double dy = to.y - from.y;
    const double dz = to.z - from.z;
    if (std::sqrt(dx * dx + dy * dy + dz * dz) < kCoincidenceTolerance)
        throw CoincidentPointsError("dod_from_positions: coincident points");
    const double d2d = std::hypot(dx, dy);
    // atan2 form of arctan(-dz / d2d) + pi/2, well defined at d2d = 0
    const double theta = std::atan2(-dz, d2d) + kPi / 2.0;
    const double phi = wrap_angle(std::atan2(dy, dx));
    return {theta, phi};
}

/// Jacobian of (theta, phi) = dod_from_positions(bs, p) with respect to p.
inline Eigen::Matrix<double, 2, 3> dod_jacobian(const Position3D &bs, const Position3D &p)
{
    const double dx = p.x - bs.x;
    const double dy = p.y - bs.y;
    const double dz = p.z - bs.z;
    const double d2 = dx * dx + dy * dy;
    const double d = std::sqrt(d2);
    const double rho2 = d2 + dz * dz;
    if (d < kCoincidenceTolerance)
        throw CoincidentPointsError("dod_jacobian: azimuth undefined directly above/below the BS");
    Eigen::Matrix<double, 2, 3> j;
    j(0, 0) = dz * dx / (d * rho2);
    j(0, 1) = dz * dy / (d * rho2);
    j(0, 2) = -d / rho2;
    j(1, 0) = -dy / d2;
    j(1, 1) = dx / d2;
    j(1, 2) = 0.0;
    return j;
}

// ---- Scenario --------------------------------------------------------------

struct BsPose
{
    Position3D position;
    double boresight_azimuth = 0.0;             // radians
    double boresight_coelevation = kPi / 2.0;   // radians, co-elevation of the grid centre
    int bs_id = 0;
};

/// Beam book of a BS in the global frame: the panel grid is centred at the
/// horizon/east and then shifted by the pose's boresight angles.
inline BeamBook oriented_book(const BeamBook &panel, const BsPose &pose)
{
    return panel.rotated(pose.boresight_coelevation - kPi / 2.0, pose.boresight_azimuth);
}

struct TrajectorySpec
{
    Position3D start{-15.0, 80.0, 1.5};
    double heading = kPi / 2.0; // azimuth of travel, radians (north)
    double speed = 2.0;         // m/s
    double duration = 50.0;     // s
};

struct ScenarioConfig
{
    std::vector<BsPose> bs_poses;
    BeamGridSpec bs_grid;
    BeamGridSpec ue_grid;

    double carrier_hz = 39e9;
    int num_subcarriers = 1656;
    double tx_power_watts = dbm2watt(21.0);
    double noise_variance = dbm2watt(-100.0); // per subcarrier, watts
    double feedback_period = 0.16;
    int feedback_k = 8;
    TrajectorySpec trajectory;
    std::uint64_t seed = 1;
    int runs = 1;

    // Tracking
    double dod_accel_psd = 1e-4;  // (rad/s^2)^2 / Hz
    double pos_accel_psd = 1.0;   // (m/s^2)^2 / Hz
    double dod_rate_init_std = 0.1;
    double pos_vel_init_std = 5.0;

    // Estimation
    int mle_max_iter = 50;
    double mle_step_tol = 1e-8;
    double residual_floor = 1e-15;

    // CRB map grid (x0, x1, nx) and (y0, y1, ny) at the trajectory height
    double crb_x0 = -60.0, crb_x1 = 30.0;
    double crb_y0 = 60.0, crb_y1 = 200.0;
    int crb_nx = 10, crb_ny = 15;

    int num_bs_beams() const { return bs_grid.n_az * bs_grid.n_el; }
    int num_ue_beams() const { return ue_grid.n_az * ue_grid.n_el; }

    void validate() const
    {
        if (num_subcarriers < 1)
            throw ConfigError("num_subcarriers must be >= 1");
        if (feedback_k < 1 || feedback_k > num_bs_beams())
            throw ConfigError("feedback_k must lie in [1, number of BS beams]");
        if (bs_poses.size() < 2)
            throw ConfigError("at least two base stations are required for 3D positioning");
        for (std::size_t i = 0; i < bs_poses.size(); ++i)
        {
            if (!bs_poses[i].position.is_finite())
                throw ConfigError("base-station position must be finite");
            for (std::size_t j = 0; j < i; ++j)
                if (bs_poses[i].bs_id == bs_poses[j].bs_id)
                    throw ConfigError("duplicate bs_id");
        }
        if (!(feedback_period > 0.0))
            throw ConfigError("feedback_period must be positive");
        if (!(tx_power_watts > 0.0) || !(noise_variance >= 0.0))
            throw ConfigError("tx power must be positive and noise variance non-negative");
        if (!(trajectory.speed >= 0.0) || !(trajectory.duration >= 0.0))
            throw ConfigError("trajectory speed and duration must be non-negative");
        if (!trajectory.start.is_finite())
            throw ConfigError("trajectory start must be finite");
        if (runs < 1)
            throw ConfigError("runs must be >= 1");
    }
};

/// Two-BS street deployment at 39 GHz used as the default experiment.
inline ScenarioConfig default_scenario()
{
    ScenarioConfig c;
    c.bs_poses = {
        BsPose{{0.0, 0.0, 50.0}, deg2rad(90.0), deg2rad(112.0), 1},
        BsPose{{-80.0, 242.6, 50.0}, deg2rad(-60.0), deg2rad(112.0), 2},
    };
    c.bs_grid = BeamGridSpec{};
    c.ue_grid.span_az = deg2rad(360.0);
    c.ue_grid.span_el = 0.0;
    c.ue_grid.n_az = 52;
    c.ue_grid.n_el = 1;
    c.ue_grid.width_az = deg2rad(6.0);
    c.ue_grid.width_el = deg2rad(40.0);
    c.ue_grid.peak_gain = std::sqrt(db2lin(17.0));
    c.ue_grid.center = {deg2rad(75.0), 0.0};
    c.bs_grid.peak_gain = std::sqrt(db2lin(30.0));
    return c;
}

} // namespace bfpos

#endif // BFPOS_SCENARIO_HPP
