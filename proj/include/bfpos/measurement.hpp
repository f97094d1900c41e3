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

#ifndef BFPOS_MEASUREMENT_HPP
#define BFPOS_MEASUREMENT_HPP

#include "common.hpp"
#include "scenario.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <ostream>
#include <random>
#include <vector>

namespace bfpos
{

/// Single dominant path between one BS and one UE.
struct ChannelRealization
{
    Eigen::Matrix2cd gamma = Eigen::Matrix2cd::Identity(); // polarimetric path weights
    Eigen::VectorXcd freq_response;                        // b_f, length M_f
    DirectionAngles dod;
    DirectionAngles doa;
};

/// Diagonal of the pilot symbol matrix.
struct PilotSpec
{
    Eigen::VectorXcd symbols;

    /// Constant-modulus pilots splitting `total_power` evenly over `m_f` subcarriers.
    static PilotSpec uniform(int m_f, double total_power)
    {
        if (m_f < 1)
            throw DomainError("PilotSpec::uniform: need at least one subcarrier");
        return {Eigen::VectorXcd::Constant(m_f, cdouble(std::sqrt(total_power / m_f), 0.0))};
    }

    int num_subcarriers() const { return static_cast<int>(symbols.size()); }
};

/// Received pilot power sum_m |s_m b_f,m|^2 (P_Tx).
inline double pilot_power(const PilotSpec &pilot, const ChannelRealization &channel)
{
    if (pilot.symbols.size() != channel.freq_response.size())
        throw DomainError("pilot_power: symbol and frequency-response lengths differ");
    return pilot.symbols.cwiseProduct(channel.freq_response).squaredNorm();
}

/// Beam-pair coupling b_UE^T(doa) Gamma b_BS(dod).
inline cdouble coupling(const ChannelRealization &channel, const Beam &bs_beam, const Beam &ue_beam)
{
    return beam_response(ue_beam, channel.doa).transpose() * channel.gamma * beam_response(bs_beam, channel.dod);
}

/// Free-space line-of-sight channel: amplitude c / (4 pi d f_c) in every
/// subcarrier, identity polarimetric weights. A nonzero `subcarrier_spacing`
/// adds the propagation-delay phase ramp across the band.
inline ChannelRealization los_channel(const Position3D &bs, const Position3D &ue, double carrier_hz, int m_f,
                                      double subcarrier_spacing = 0.0)
{
    const double d = (ue.vec() - bs.vec()).norm();
    if (d < kCoincidenceTolerance)
        throw CoincidentPointsError("los_channel: coincident BS and UE");
    const double amp = kSpeedOfLight / (4.0 * kPi * d * carrier_hz);
    ChannelRealization ch;
    ch.freq_response.resize(m_f);
    const double tau = d / kSpeedOfLight;
    for (int m = 0; m < m_f; ++m)
        ch.freq_response(m) = amp * std::polar(1.0, -kTwoPi * m * subcarrier_spacing * tau);
    ch.dod = dod_from_positions(bs, ue);
    ch.doa = dod_from_positions(ue, bs);
    return ch;
}

/// Multicarrier observation y = S b_f gamma + n, with n ~ CN(0, noise_var I).
template <class Rng>
Eigen::VectorXcd synthesize_observation(const PilotSpec &pilot, const ChannelRealization &channel,
                                        const Beam &bs_beam, const Beam &ue_beam, double noise_var, Rng &rng)
{
    if (pilot.symbols.size() != channel.freq_response.size())
        throw DomainError("synthesize_observation: symbol and frequency-response lengths differ");
    if (!(noise_var >= 0.0))
        throw DomainError("synthesize_observation: negative noise variance");
    const cdouble g = coupling(channel, bs_beam, ue_beam);
    Eigen::VectorXcd y = pilot.symbols.cwiseProduct(channel.freq_response) * g;
    if (noise_var > 0.0)
    {
        std::normal_distribution<double> n(0.0, std::sqrt(noise_var / 2.0));
        for (Eigen::Index m = 0; m < y.size(); ++m)
        {
            const double re = n(rng);
            const double im = n(rng);
            y(m) += cdouble(re, im);
        }
    }
    return y;
}

/// Beam RSRP: mean squared magnitude across subcarriers.
inline double brsrp(const Eigen::VectorXcd &y)
{
    if (y.size() == 0)
        throw DomainError("brsrp: empty observation");
    return y.squaredNorm() / static_cast<double>(y.size());
}

/// Noncentrality lambda = P_Tx |gamma|^2.
inline double noncentrality(const PilotSpec &pilot, const ChannelRealization &channel, const Beam &bs_beam,
                            const Beam &ue_beam)
{
    return pilot_power(pilot, channel) * std::norm(coupling(channel, bs_beam, ue_beam));
}

/// Draws one BRSRP value from its exact distribution without forming the
/// M_f-sample observation: M_f beta / noise_var is a sum of |sqrt(nu) + w|^2
/// and M_f - 1 unit exponentials, nu = lambda / noise_var.
template <class Rng>
double sample_brsrp(double lambda, double noise_var, int m_f, Rng &rng)
{
    if (m_f < 1)
        throw DomainError("sample_brsrp: m_f must be >= 1");
    if (noise_var == 0.0)
        return lambda / m_f;
    std::normal_distribution<double> n(0.0, std::sqrt(0.5));
    const double a = std::sqrt(lambda / noise_var) + n(rng);
    const double b = n(rng);
    double t = a * a + b * b;
    if (m_f > 1)
    {
        std::gamma_distribution<double> g(static_cast<double>(m_f - 1), 1.0);
        t += g(rng);
    }
    return noise_var * t / m_f;
}

// ---- Noncentral chi-squared density ------------------------------------------

namespace detail
{

// log I_nu(x) by the power series, accumulated with a running scale. All
// terms are positive so there is no cancellation; valid while e^x fits.
inline double log_bessel_i_series(double nu, double x)
{
    const double q = 0.25 * x * x;
    double term = 1.0, sum = 1.0;
    for (int k = 0; k < 100000; ++k)
    {
        term *= q / ((k + 1.0) * (nu + k + 1.0));
        sum += term;
        if (term < 1e-17 * sum && (k + 1.0) * (nu + k + 1.0) > q)
            break;
    }
    return nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) + std::log(sum);
}

// Hankel expansion for x >> nu^2.
inline double log_bessel_i_hankel(double nu, double x)
{
    const double mu = 4.0 * nu * nu;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k < 40; ++k)
    {
        const double next = -term * (mu - (2.0 * k - 1.0) * (2.0 * k - 1.0)) / (k * 8.0 * x);
        if (std::abs(next) > std::abs(term))
            break;
        term = next;
        sum += term;
        if (std::abs(term) < 1e-17 * std::abs(sum))
            break;
    }
    return x - 0.5 * std::log(kTwoPi * x) + std::log(sum);
}

// Debye uniform asymptotic expansion in 1/nu, four correction terms.
inline double log_bessel_i_debye(double nu, double x)
{
    const double z = x / nu;
    const double s = std::sqrt(1.0 + z * z);
    const double t = 1.0 / s;
    const double eta = s + std::log(z / (1.0 + s));
    const double t2 = t * t;
    const double u1 = t * (3.0 - 5.0 * t2) / 24.0;
    const double u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0;
    const double u3 = t * t2 * (30375.0 - 369603.0 * t2 + 765765.0 * t2 * t2 - 425425.0 * t2 * t2 * t2) / 414720.0;
    const double u4 = t2 * t2 *
                      (4465125.0 - 94121676.0 * t2 + 349922430.0 * t2 * t2 - 446185740.0 * t2 * t2 * t2 +
                       185910725.0 * t2 * t2 * t2 * t2) /
                      39813120.0;
    const double series = 1.0 + u1 / nu + u2 / (nu * nu) + u3 / (nu * nu * nu) + u4 / (nu * nu * nu * nu);
    return nu * eta - 0.5 * std::log(kTwoPi * nu) - 0.5 * std::log(s) + std::log(series);
}

} // namespace detail

/// Natural log of the modified Bessel function of the first kind I_nu(x),
/// x >= 0, nu >= 0, without overflow.
inline double log_bessel_i(double nu, double x)
{
    if (x < 0.0 || nu < 0.0)
        throw DomainError("log_bessel_i: negative argument");
    if (x == 0.0)
        return nu == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
    if (x <= 600.0)
        return detail::log_bessel_i_series(nu, x);
    if (nu * nu < 0.25 * x)
        return detail::log_bessel_i_hankel(nu, x);
    return detail::log_bessel_i_debye(nu, x);
}

/// Log-density of a BRSRP value: M_f beta follows a scaled noncentral
/// chi-squared law with 2 M_f degrees of freedom.
inline double log_chi2_pdf(double beta, double lambda, double noise_var, int m_f)
{
    if (m_f < 1 || !(noise_var > 0.0) || !(lambda >= 0.0))
        throw DomainError("chi2_pdf: need m_f >= 1, noise_var > 0, lambda >= 0");
    const double mf = m_f;
    const double nu = lambda / noise_var;
    if (beta < 0.0)
        throw DomainError("chi2_pdf: beta must be positive");
    if (beta == 0.0)
    {
        if (m_f == 1)
            return std::log(mf / noise_var) - nu; // limit of the density at the origin
        throw DomainError("chi2_pdf: beta must be positive");
    }
    const double t = mf * beta / noise_var;
    double log_pt = 0.0;
    if (lambda == 0.0)
        log_pt = (mf - 1.0) * std::log(t) - t - std::lgamma(mf);
    else
        log_pt = 0.5 * (mf - 1.0) * (std::log(t) - std::log(nu)) - (nu + t) +
                 log_bessel_i(mf - 1.0, 2.0 * std::sqrt(nu * t));
    return std::log(mf / noise_var) + log_pt;
}

inline double chi2_pdf(double beta, double lambda, double noise_var, int m_f)
{
    return std::exp(log_chi2_pdf(beta, lambda, noise_var, m_f));
}

// ---- Gaussian approximation ---------------------------------------------------

struct BrsrpMoments
{
    double mean = 0.0;
    double variance = 0.0;
    double noncentrality = 0.0;
    cdouble coupling{0.0, 0.0};
};

inline BrsrpMoments gaussian_moments(double lambda, double noise_var, int m_f, cdouble coupling_value = {})
{
    if (m_f < 1)
        throw DomainError("gaussian_moments: m_f must be >= 1");
    const double mf = m_f;
    return {lambda / mf + noise_var, noise_var * noise_var / mf + 2.0 * noise_var * lambda / (mf * mf), lambda,
            coupling_value};
}

/// Per-beam received SNR, lambda / (M_f noise_var).
inline double snr(double lambda, double noise_var, int m_f)
{
    if (!(noise_var > 0.0))
        throw DomainError("snr: noise variance must be positive");
    return lambda / (m_f * noise_var);
}

// ---- Beam selection and feedback ------------------------------------------------

/// UE beam whose row of BRSRPs (over BS beams) has the largest sum; lowest index wins ties.
inline int select_ue_beam(const Eigen::MatrixXd &beta)
{
    if (beta.size() == 0)
        throw DomainError("select_ue_beam: empty matrix");
    int best = 0;
    double best_sum = beta.row(0).sum();
    for (Eigen::Index i = 1; i < beta.rows(); ++i)
    {
        const double s = beta.row(i).sum();
        if (s > best_sum)
        {
            best_sum = s;
            best = static_cast<int>(i);
        }
    }
    return best;
}

struct FeedbackSelection
{
    std::vector<int> indices; // descending by value
    std::vector<double> values;
};

/// The k largest entries, descending, ties by lowest index.
inline FeedbackSelection select_feedback(const Eigen::VectorXd &beta_row, int k)
{
    if (k < 1 || k > beta_row.size())
        throw DomainError("select_feedback: k out of range");
    std::vector<int> idx(static_cast<std::size_t>(beta_row.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        return beta_row(a) > beta_row(b) || (beta_row(a) == beta_row(b) && a < b);
    });
    idx.resize(static_cast<std::size_t>(k));
    FeedbackSelection out;
    out.indices = idx;
    for (int i : idx)
        out.values.push_back(beta_row(i));
    return out;
}

/// One feedback event from a UE to one BS.
struct BrsrpReport
{
    int bs_id = 0;
    double timestamp = 0.0;
    int ue_beam_index = 0;
    std::vector<int> beam_indices;
    std::vector<double> values; // watts, aligned with beam_indices
    double noise_variance_est = 0.0;

    std::size_t size() const { return beam_indices.size(); }

    Eigen::VectorXd beta() const
    {
        return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    }
};

inline constexpr const char *kReportCsvHeader = "timestamp,bs_id,ue_beam,beam_idx,beta_watts";

/// One CSV row per reported beam.
inline void write_report_rows(std::ostream &os, const BrsrpReport &r)
{
    for (std::size_t k = 0; k < r.beam_indices.size(); ++k)
        os << format_double(r.timestamp) << ',' << r.bs_id << ',' << r.ue_beam_index << ',' << r.beam_indices[k]
           << ',' << format_double(r.values[k]) << '\n';
}

} // namespace bfpos

#endif // BFPOS_MEASUREMENT_HPP
