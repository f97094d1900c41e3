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

#ifndef BFPOS_SIMKIT_HPP
#define BFPOS_SIMKIT_HPP

// Monte-Carlo experiment engine: trajectory, per-epoch measurement and
// feedback, DoD and position tracking, metrics and CSV persistence.

#include "bounds.hpp"
#include "common.hpp"
#include "config.hpp"
#include "estimation.hpp"
#include "measurement.hpp"
#include "scenario.hpp"
#include "tracking.hpp"
#include "triangulation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace bfpos
{

// ---- Network and trajectory ---------------------------------------------------

/// Beam books of a scenario in the global frame.
struct Network
{
    ScenarioConfig config;
    std::vector<BeamBook> bs_books; // aligned with config.bs_poses
    BeamBook ue_book;
};

inline Network make_network(const ScenarioConfig &cfg)
{
    cfg.validate();
    Network n;
    n.config = cfg;
    const BeamBook panel = make_beam_grid(cfg.bs_grid);
    for (const BsPose &pose : cfg.bs_poses)
        n.bs_books.push_back(oriented_book(panel, pose));
    n.ue_book = make_beam_grid(cfg.ue_grid);
    return n;
}

struct TrajectorySample
{
    double t = 0.0;
    Position3D position;
    Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
};

/// Straight constant-velocity path sampled every `period` seconds over [0, duration].
inline std::vector<TrajectorySample> sample_trajectory(const TrajectorySpec &spec, double period)
{
    if (!(period > 0.0))
        throw DomainError("sample_trajectory: period must be positive");
    if (!(spec.speed >= 0.0) || !(spec.duration >= 0.0))
        throw DomainError("sample_trajectory: speed and duration must be non-negative");
    const auto n = static_cast<int>(std::floor(spec.duration / period + 1e-9)) + 1;
    const Eigen::Vector3d v(spec.speed * std::cos(spec.heading), spec.speed * std::sin(spec.heading), 0.0);
    std::vector<TrajectorySample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
    {
        const double t = i * period;
        out.push_back({t, Position3D::from(spec.start.vec() + t * v), v});
    }
    return out;
}

// ---- Per-epoch measurement ---------------------------------------------------------

/// Noncentralities lambda(i, j) for UE beam i and BS beam j of one link.
inline Eigen::MatrixXd link_noncentrality(const Network &net, std::size_t bs, const Position3D &ue)
{
    const ScenarioConfig &c = net.config;
    const ChannelRealization ch =
        los_channel(c.bs_poses[bs].position, ue, c.carrier_hz, 1); // flat response: amplitude only
    const double amp2 = std::norm(ch.freq_response(0));
    const double pp = c.tx_power_watts * amp2;
    const BeamBook &bb = net.bs_books[bs];
    std::vector<Eigen::Vector2cd> gb(bb.size());
    for (std::size_t j = 0; j < bb.size(); ++j)
        gb[j] = ch.gamma * beam_response(bb[j], ch.dod);
    Eigen::MatrixXd lam(static_cast<Eigen::Index>(net.ue_book.size()), static_cast<Eigen::Index>(bb.size()));
    for (std::size_t i = 0; i < net.ue_book.size(); ++i)
    {
        const Eigen::Vector2cd bu = beam_response(net.ue_book[i], ch.doa);
        for (std::size_t j = 0; j < bb.size(); ++j)
            lam(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                pp * std::norm(bu(0) * gb[j](0) + bu(1) * gb[j](1));
    }
    return lam;
}

/// Samples the full UE-beam x BS-beam BRSRP matrix of one link.
template <class Rng>
Eigen::MatrixXd sample_brsrp_matrix(const Eigen::MatrixXd &lambda, double noise_var, int m_f, Rng &rng)
{
    Eigen::MatrixXd beta(lambda.rows(), lambda.cols());
    for (Eigen::Index i = 0; i < lambda.rows(); ++i)
        for (Eigen::Index j = 0; j < lambda.cols(); ++j)
            beta(i, j) = sample_brsrp(lambda(i, j), noise_var, m_f, rng);
    return beta;
}

/// UE-side beam selection and top-k feedback.
inline BrsrpReport make_report(const Eigen::MatrixXd &beta, int k, int bs_id, double t, double noise_var)
{
    BrsrpReport r;
    r.bs_id = bs_id;
    r.timestamp = t;
    r.ue_beam_index = select_ue_beam(beta);
    const FeedbackSelection sel = select_feedback(beta.row(r.ue_beam_index).transpose(), k);
    r.beam_indices = sel.indices;
    r.values = sel.values;
    r.noise_variance_est = noise_var;
    return r;
}

// ---- Experiment ----------------------------------------------------------------------

struct EpochRecord
{
    int run = 0;
    int epoch = 0;
    double t = 0.0;
    Position3D truth;
    std::vector<BrsrpReport> reports;        // per BS
    std::vector<DirectionAngles> true_dods;  // per BS
    std::vector<DodState> dod_states;        // per BS
    std::vector<bool> active;                // per BS: still used for fusion
    UeState ue;
    double pos_error = 0.0;                  // meters
    std::vector<double> el_error;            // |theta error| per BS, rad
    std::vector<double> az_error;            // |phi error| per BS, rad
    std::vector<double> snr_db;              // reported beams of all BSs
};

struct EmpiricalCdf
{
    std::vector<double> sorted;
    std::vector<double> prob; // i / N

    /// Linear interpolation between order statistics at h = (N - 1) p.
    double quantile(double p) const
    {
        if (sorted.empty())
            throw DomainError("EmpiricalCdf::quantile: empty");
        p = std::clamp(p, 0.0, 1.0);
        const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
        return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    }
};

inline EmpiricalCdf empirical_cdf(std::vector<double> samples)
{
    if (samples.empty())
        throw DomainError("empirical_cdf: no samples");
    std::sort(samples.begin(), samples.end());
    EmpiricalCdf c;
    c.sorted = std::move(samples);
    const double n = static_cast<double>(c.sorted.size());
    c.prob.resize(c.sorted.size());
    for (std::size_t i = 0; i < c.sorted.size(); ++i)
        c.prob[i] = static_cast<double>(i + 1) / n;
    return c;
}

struct RunSummary
{
    ScenarioConfig config;
    std::uint64_t seed = 0;
    int runs = 0;
    int epochs_per_run = 0;
    std::vector<double> pos_errors;
    std::vector<double> el_errors;
    std::vector<double> az_errors;
    std::vector<double> snr_db;
    std::vector<int> dropped_bs; // bs_id per drop event
    EmpiricalCdf pos_cdf, el_cdf, az_cdf, snr_cdf;
};

struct MetricQuantiles
{
    double p50 = 0.0, p90 = 0.0, p95 = 0.0;
};

inline MetricQuantiles quantiles(const EmpiricalCdf &c)
{
    return {c.quantile(0.5), c.quantile(0.9), c.quantile(0.95)};
}

/// Independent generator for Monte-Carlo run `run` of base seed `seed`.
inline std::mt19937_64 run_rng(std::uint64_t seed, int run)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(run)};
    return std::mt19937_64(seq);
}

using EpochSink = std::function<void(const EpochRecord &)>;

/// One Monte-Carlo run along the configured trajectory. Calls `sink` once
/// per epoch. The random stream does not depend on feedback_k, so runs with
/// the same seed share their BRSRP realizations across k.
inline std::vector<int> run_single(const Network &net, int run, const EpochSink &sink)
{
    const ScenarioConfig &c = net.config;
    std::mt19937_64 rng = run_rng(c.seed, run);
    const std::size_t nbs = c.bs_poses.size();

    DodTrackerOptions dopt;
    dopt.accel_psd = c.dod_accel_psd;
    dopt.rate_init_std = c.dod_rate_init_std;
    dopt.mle.max_iter = c.mle_max_iter;
    dopt.mle.step_tol = c.mle_step_tol;
    dopt.mle.residual_floor = c.residual_floor;

    std::vector<DodTracker> trackers;
    for (std::size_t b = 0; b < nbs; ++b)
        trackers.emplace_back(c.bs_poses[b].bs_id, net.bs_books[b], c.tx_power_watts, c.num_subcarriers, dopt);
    std::vector<bool> active(nbs, true);
    std::vector<int> dropped;

    std::optional<UeState> ue;
    const auto traj = sample_trajectory(c.trajectory, c.feedback_period);
    for (std::size_t e = 0; e < traj.size(); ++e)
    {
        const TrajectorySample &ts = traj[e];
        EpochRecord rec;
        rec.run = run;
        rec.epoch = static_cast<int>(e);
        rec.t = ts.t;
        rec.truth = ts.position;

        for (std::size_t b = 0; b < nbs; ++b)
        {
            const Eigen::MatrixXd lam = link_noncentrality(net, b, ts.position);
            const Eigen::MatrixXd beta = sample_brsrp_matrix(lam, c.noise_variance, c.num_subcarriers, rng);
            BrsrpReport rep = make_report(beta, c.feedback_k, c.bs_poses[b].bs_id, ts.t, c.noise_variance);
            if (c.noise_variance > 0.0)
                for (int j : rep.beam_indices)
                    rec.snr_db.push_back(lin2db(snr(lam(rep.ue_beam_index, j), c.noise_variance, c.num_subcarriers)));

            const DirectionAngles truth = dod_from_positions(c.bs_poses[b].position, ts.position);
            const DodState &st = trackers[b].process(rep);
            if (active[b] && trackers[b].diverged())
            {
                active[b] = false;
                dropped.push_back(c.bs_poses[b].bs_id);
            }
            rec.reports.push_back(std::move(rep));
            rec.true_dods.push_back(truth);
            rec.dod_states.push_back(st);
            rec.el_error.push_back(std::abs(st.s(0) - truth.theta));
            rec.az_error.push_back(std::abs(wrap_angle(st.s(1) - truth.phi)));
        }
        rec.active = active;

        std::vector<DodMeasurement> meas;
        std::vector<BsPose> poses;
        for (std::size_t b = 0; b < nbs; ++b)
            if (active[b])
            {
                meas.push_back(to_measurement(trackers[b].state()));
                poses.push_back(c.bs_poses[b]);
            }
        if (meas.empty())
            throw DivergenceError("run_single: every base station has been dropped");

        if (!ue)
        {
            if (meas.size() < 2)
                throw DivergenceError("run_single: fewer than two usable base stations for initialization");
            std::vector<DirectionAngles> dods;
            std::vector<Position3D> pos;
            std::vector<int> ids;
            for (std::size_t i = 0; i < meas.size(); ++i)
            {
                dods.push_back({meas[i].mean(0), meas[i].mean(1)});
                pos.push_back(poses[i].position);
                ids.push_back(poses[i].bs_id);
            }
            const TriangulationResult tri = tls_triangulate(build_problem(dods, pos, ids));
            UeState s;
            s.s.head<3>() = tri.position.vec();
            s.last_update = ts.t;
            s.cov.setZero();
            Eigen::Matrix3d pc = 100.0 * Eigen::Matrix3d::Identity();
            try
            {
                std::vector<Eigen::Matrix2d> covs;
                for (const auto &m : meas)
                    covs.push_back(m.cov);
                const FimResult fr = fim_position(tri.position, poses, covs);
                if (!fr.pseudo)
                    pc = fr.crb;
            }
            catch (const Error &)
            {
            }
            s.cov.topLeftCorner<3, 3>() = pc;
            s.cov.bottomRightCorner<3, 3>() = c.pos_vel_init_std * c.pos_vel_init_std * Eigen::Matrix3d::Identity();
            s.cov = floor_eigenvalues(s.cov);
            ue = s;
        }
        else
        {
            UeState pred = pos_ekf_predict(*ue, cwna_matrices(ts.t - ue->last_update, c.pos_accel_psd, 3));
            pred.last_update = ts.t;
            ue = pos_ekf_update(pred, meas, poses);
        }
        rec.ue = *ue;
        rec.pos_error = (ue->s.head<3>() - ts.position.vec()).norm();
        if (sink)
            sink(rec);
    }
    return dropped;
}

/// Runs config.runs Monte-Carlo runs and gathers the metric distributions.
inline RunSummary run_experiment(const ScenarioConfig &cfg, const EpochSink &sink = {})
{
    const Network net = make_network(cfg);
    RunSummary s;
    s.config = cfg;
    s.seed = cfg.seed;
    s.runs = cfg.runs;
    for (int r = 0; r < cfg.runs; ++r)
    {
        int epochs = 0;
        const auto dropped = run_single(net, r, [&](const EpochRecord &rec) {
            ++epochs;
            s.pos_errors.push_back(rec.pos_error);
            for (std::size_t b = 0; b < rec.el_error.size(); ++b)
            {
                s.el_errors.push_back(rec.el_error[b]);
                s.az_errors.push_back(rec.az_error[b]);
            }
            s.snr_db.insert(s.snr_db.end(), rec.snr_db.begin(), rec.snr_db.end());
            if (sink)
                sink(rec);
        });
        s.epochs_per_run = epochs;
        s.dropped_bs.insert(s.dropped_bs.end(), dropped.begin(), dropped.end());
    }
    s.pos_cdf = empirical_cdf(s.pos_errors);
    s.el_cdf = empirical_cdf(s.el_errors);
    s.az_cdf = empirical_cdf(s.az_errors);
    if (!s.snr_db.empty())
        s.snr_cdf = empirical_cdf(s.snr_db);
    return s;
}

// ---- CSV output ------------------------------------------------------------------------

inline constexpr const char *kEpochCsvHeader = "run,epoch,t,x,y,z,x_hat,y_hat,z_hat,pos_err";
inline constexpr const char *kDodEpochCsvHeader =
    "run,epoch,t,bs_id,theta,phi,theta_hat,phi_hat,c11,c12,c22,el_err,az_err";

inline void write_epoch_row(std::ostream &os, const EpochRecord &r)
{
    os << r.run << ',' << r.epoch << ',' << format_double(r.t) << ',' << format_double(r.truth.x) << ','
       << format_double(r.truth.y) << ',' << format_double(r.truth.z) << ',' << format_double(r.ue.s(0)) << ','
       << format_double(r.ue.s(1)) << ',' << format_double(r.ue.s(2)) << ',' << format_double(r.pos_error) << '\n';
}

inline void write_dod_epoch_rows(std::ostream &os, const EpochRecord &r)
{
    for (std::size_t b = 0; b < r.dod_states.size(); ++b)
    {
        const DodState &s = r.dod_states[b];
        os << r.run << ',' << r.epoch << ',' << format_double(r.t) << ',' << s.bs_id << ','
           << format_double(r.true_dods[b].theta) << ',' << format_double(r.true_dods[b].phi) << ','
           << format_double(s.s(0)) << ',' << format_double(s.s(1)) << ',' << format_double(s.cov(0, 0)) << ','
           << format_double(s.cov(0, 1)) << ',' << format_double(s.cov(1, 1)) << ',' << format_double(r.el_error[b])
           << ',' << format_double(r.az_error[b]) << '\n';
    }
}

inline void write_cdf_csv(const std::filesystem::path &path, const EmpiricalCdf &c)
{
    std::ofstream os(path);
    if (!os)
        throw Error("cannot write " + path.string());
    os << "value,prob\n";
    for (std::size_t i = 0; i < c.sorted.size(); ++i)
        os << format_double(c.sorted[i]) << ',' << format_double(c.prob[i]) << '\n';
}

inline void write_summary_csv(const std::filesystem::path &path, const RunSummary &s)
{
    std::ofstream os(path);
    if (!os)
        throw Error("cannot write " + path.string());
    os << "metric,count,mean,p50,p90,p95\n";
    auto row = [&](const char *name, const std::vector<double> &v, const EmpiricalCdf &c) {
        if (v.empty())
            return;
        double mean = 0.0;
        for (double x : v)
            mean += x;
        mean /= static_cast<double>(v.size());
        const MetricQuantiles q = quantiles(c);
        os << name << ',' << v.size() << ',' << format_double(mean) << ',' << format_double(q.p50) << ','
           << format_double(q.p90) << ',' << format_double(q.p95) << '\n';
    };
    row("pos_err_m", s.pos_errors, s.pos_cdf);
    row("el_err_rad", s.el_errors, s.el_cdf);
    row("az_err_rad", s.az_errors, s.az_cdf);
    row("snr_db", s.snr_db, s.snr_cdf);
}

// ---- Bounds sweeps ------------------------------------------------------------------

/// Noiseless view of one link: best UE beam, strongest k BS beams and the
/// true Theta for them.
struct LinkTruth
{
    int ue_beam = 0;
    std::vector<int> beams;
    BeamBook book;
    ThetaVector theta = ThetaVector::Zero();
    double peak_lambda = 0.0;
};

inline LinkTruth link_truth(const Network &net, std::size_t bs, const Position3D &ue, int k, double noise_var)
{
    const ScenarioConfig &c = net.config;
    const Eigen::MatrixXd lam = link_noncentrality(net, bs, ue);
    const Eigen::MatrixXd mean = lam / c.num_subcarriers;
    LinkTruth t;
    t.ue_beam = select_ue_beam(mean);
    t.beams = select_feedback(mean.row(t.ue_beam).transpose(), k).indices;
    t.book = net.bs_books[bs].subset(t.beams);
    t.peak_lambda = lam.row(t.ue_beam).maxCoeff();
    const ChannelRealization ch = los_channel(c.bs_poses[bs].position, ue, c.carrier_hz, 1);
    t.theta = true_theta(ch, net.ue_book[static_cast<std::size_t>(t.ue_beam)], c.tx_power_watts * std::norm(ch.freq_response(0)),
                         c.tx_power_watts, noise_var);
    return t;
}

/// Noise variance giving the stated peak-beam SNR lambda_max / (M_f sigma^2).
inline double noise_for_snr(double peak_lambda, int m_f, double snr_db)
{
    return peak_lambda / (m_f * db2lin(snr_db));
}

struct CrbSnrRow
{
    double snr_db = 0.0;
    double crb_theta = 0.0; // rad^2
    double crb_phi = 0.0;
};

/// Angle CRB of BS `bs` at UE position `ue` against peak-beam SNR, using `k` beams.
inline std::vector<CrbSnrRow> crb_vs_snr(const Network &net, std::size_t bs, const Position3D &ue, int k,
                                         const std::vector<double> &snr_db)
{
    std::vector<CrbSnrRow> out;
    const ScenarioConfig &c = net.config;
    const LinkTruth base = link_truth(net, bs, ue, k, c.noise_variance);
    for (double s : snr_db)
    {
        ThetaVector th = base.theta;
        th(theta_index::kNoiseFloor) = noise_for_snr(base.peak_lambda, c.num_subcarriers, s);
        const Eigen::Matrix2d crb = crb_dod_block(fim_dod(th, base.book, c.tx_power_watts, c.num_subcarriers));
        out.push_back({s, crb(0, 0), crb(1, 1)});
    }
    return out;
}

struct CrbMapRow
{
    double x = 0.0, y = 0.0;
    double crb_x = 0.0, crb_y = 0.0, crb_z = 0.0; // m^2
};

/// Position CRB over the configured (x, y) grid at the trajectory height,
/// with each BS's angle covariance set to its DoD CRB for the fed-back beams.
inline std::vector<CrbMapRow> crb_map(const Network &net)
{
    const ScenarioConfig &c = net.config;
    std::vector<CrbMapRow> out;
    const double z = c.trajectory.start.z;
    for (int iy = 0; iy < c.crb_ny; ++iy)
        for (int ix = 0; ix < c.crb_nx; ++ix)
        {
            const double x = c.crb_nx > 1 ? c.crb_x0 + (c.crb_x1 - c.crb_x0) * ix / (c.crb_nx - 1) : c.crb_x0;
            const double y = c.crb_ny > 1 ? c.crb_y0 + (c.crb_y1 - c.crb_y0) * iy / (c.crb_ny - 1) : c.crb_y0;
            const Position3D p{x, y, z};
            std::vector<Eigen::Matrix2d> covs;
            for (std::size_t b = 0; b < c.bs_poses.size(); ++b)
            {
                const LinkTruth lt = link_truth(net, b, p, c.feedback_k, c.noise_variance);
                covs.push_back(crb_dod_block(fim_dod(lt.theta, lt.book, c.tx_power_watts, c.num_subcarriers)));
            }
            const FimResult fr = fim_position(p, c.bs_poses, covs);
            out.push_back({x, y, fr.crb(0, 0), fr.crb(1, 1), fr.crb(2, 2)});
        }
    return out;
}

// ---- MLE benchmark -----------------------------------------------------------------

struct MleBenchRow
{
    double snr_db = 0.0;
    int trials = 0;
    double rmse_theta = 0.0, rmse_phi = 0.0;
    double bias_theta = 0.0, bias_phi = 0.0;
    double crb_theta = 0.0, crb_phi = 0.0; // rad^2
    double ratio_theta = 0.0, ratio_phi = 0.0;       // rmse / sqrt(crb)
    double ratio_se_theta = 0.0, ratio_se_phi = 0.0; // standard error of the ratios
    int not_converged = 0;
};

struct MleBenchOptions
{
    std::size_t bs = 0;
    Position3D ue{-15.0, 80.0, 1.5};
    int beams = 0; // 0: every beam of the BS
    std::vector<double> snr_db{10.0, 20.0, 30.0};
    int trials = 500;
    std::uint64_t seed = 1;
};

/// Monte-Carlo RMSE of approx_mle_dod against the DoD CRB. BRSRPs are drawn
/// for the fixed, noiselessly selected UE beam and BS beams.
inline std::vector<MleBenchRow> run_mle_bench(const Network &net, const MleBenchOptions &opt)
{
    const ScenarioConfig &c = net.config;
    const int k = opt.beams > 0 ? opt.beams : static_cast<int>(net.bs_books[opt.bs].size());
    const LinkTruth lt = link_truth(net, opt.bs, opt.ue, k, c.noise_variance);
    const Eigen::MatrixXd lam = link_noncentrality(net, opt.bs, opt.ue);
    MleOptions mo;
    mo.max_iter = c.mle_max_iter;
    mo.step_tol = c.mle_step_tol;
    mo.residual_floor = c.residual_floor;

    std::vector<MleBenchRow> out;
    for (std::size_t si = 0; si < opt.snr_db.size(); ++si)
    {
        const double nv = noise_for_snr(lt.peak_lambda, c.num_subcarriers, opt.snr_db[si]);
        ThetaVector th = lt.theta;
        th(theta_index::kNoiseFloor) = nv;
        const Eigen::Matrix2d crb = crb_dod_block(fim_dod(th, lt.book, c.tx_power_watts, c.num_subcarriers));

        std::mt19937_64 rng = run_rng(opt.seed, static_cast<int>(si));
        std::vector<double> e2t, e2p;
        MleBenchRow row;
        row.snr_db = opt.snr_db[si];
        row.trials = opt.trials;
        row.crb_theta = crb(0, 0);
        row.crb_phi = crb(1, 1);
        for (int t = 0; t < opt.trials; ++t)
        {
            Eigen::VectorXd beta(k);
            for (int j = 0; j < k; ++j)
                beta(j) = sample_brsrp(lam(lt.ue_beam, lt.beams[static_cast<std::size_t>(j)]), nv, c.num_subcarriers, rng);
            const DodEstimate est = approx_mle_dod(beta, lt.book, c.tx_power_watts, c.num_subcarriers, mo);
            if (!est.converged)
                ++row.not_converged;
            const double et = est.angles.theta - th(0);
            const double ep = wrap_angle(est.angles.phi - th(1));
            row.bias_theta += et / opt.trials;
            row.bias_phi += ep / opt.trials;
            e2t.push_back(et * et);
            e2p.push_back(ep * ep);
        }
        auto stats = [&](const std::vector<double> &e2, double crb_v, double &rmse, double &ratio, double &se) {
            double m = 0.0, v = 0.0;
            for (double x : e2)
                m += x;
            m /= static_cast<double>(e2.size());
            for (double x : e2)
                v += (x - m) * (x - m);
            v /= static_cast<double>(e2.size() - 1);
            rmse = std::sqrt(m);
            ratio = rmse / std::sqrt(crb_v);
            // delta method: se(sqrt(m)) = se(m) / (2 sqrt(m))
            se = std::sqrt(v / static_cast<double>(e2.size())) / (2.0 * rmse) / std::sqrt(crb_v);
        };
        stats(e2t, row.crb_theta, row.rmse_theta, row.ratio_theta, row.ratio_se_theta);
        stats(e2p, row.crb_phi, row.rmse_phi, row.ratio_phi, row.ratio_se_phi);
        out.push_back(row);
    }
    return out;
}

inline constexpr const char *kMleBenchCsvHeader = "snr_db,trials,rmse_theta,rmse_phi,bias_theta,bias_phi,crb_theta,"
                                                  "crb_phi,ratio_theta,ratio_phi,ratio_se_theta,ratio_se_phi,"
                                                  "not_converged";

inline void write_mle_bench_row(std::ostream &os, const MleBenchRow &r)
{
    os << format_double(r.snr_db) << ',' << r.trials << ',' << format_double(r.rmse_theta) << ','
       << format_double(r.rmse_phi) << ',' << format_double(r.bias_theta) << ',' << format_double(r.bias_phi) << ','
       << format_double(r.crb_theta) << ',' << format_double(r.crb_phi) << ',' << format_double(r.ratio_theta) << ','
       << format_double(r.ratio_phi) << ',' << format_double(r.ratio_se_theta) << ','
       << format_double(r.ratio_se_phi) << ',' << r.not_converged << '\n';
}

} // namespace bfpos

#endif // BFPOS_SIMKIT_HPP
