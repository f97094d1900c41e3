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

#ifndef BFPOS_TRACKING_HPP
#define BFPOS_TRACKING_HPP

// Information-form EKFs: one DoD tracker per BS and a central position
// tracker fed by the DoD trackers' angle posteriors.

#include "common.hpp"
#include "estimation.hpp"
#include "measurement.hpp"
#include "scenario.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace bfpos
{

// ---- Dynamics ------------------------------------------------------------------

/// Continuous white-noise acceleration model discretized over dt.
struct CwnaModel
{
    Eigen::MatrixXd f;
    Eigen::MatrixXd q_mat;
    double spectral_density = 0.0;
    double dt = 0.0;
    int dims = 0;
};

inline CwnaModel cwna_matrices(double dt, double spectral_density, int dims)
{
    if (dims < 1)
        throw DomainError("cwna_matrices: dims must be >= 1");
    if (!(dt >= 0.0) || !(spectral_density >= 0.0))
        throw DomainError("cwna_matrices: dt and spectral density must be non-negative");
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dims, dims);
    CwnaModel m;
    m.dt = dt;
    m.dims = dims;
    m.spectral_density = spectral_density;
    m.f = Eigen::MatrixXd::Identity(2 * dims, 2 * dims);
    m.f.topRightCorner(dims, dims) = dt * eye;
    m.q_mat.resize(2 * dims, 2 * dims);
    m.q_mat.topLeftCorner(dims, dims) = (dt * dt * dt / 3.0) * eye;
    m.q_mat.topRightCorner(dims, dims) = (dt * dt / 2.0) * eye;
    m.q_mat.bottomLeftCorner(dims, dims) = (dt * dt / 2.0) * eye;
    m.q_mat.bottomRightCorner(dims, dims) = dt * eye;
    m.q_mat *= spectral_density;
    return m;
}

// ---- Information-form update ------------------------------------------------------

template <int N>
struct InformationUpdate
{
    Eigen::Matrix<double, N, 1> s;
    Eigen::Matrix<double, N, N> cov;
    bool regularized = false;
};

/// C+ = (C-^-1 + I)^-1, s+ = s- + C+ q.
template <int N>
InformationUpdate<N> information_update(const Eigen::Matrix<double, N, 1> &s, const Eigen::Matrix<double, N, N> &prior,
                                        const Eigen::Matrix<double, N, 1> &score,
                                        const Eigen::Matrix<double, N, N> &fim)
{
    using Mat = Eigen::Matrix<double, N, N>;
    InformationUpdate<N> out;
    bool reg_prior = false, reg_post = false;
    const Mat info = spd_inverse(prior, reg_prior) + symmetrize(fim);
    const Mat post = spd_inverse(info, reg_post);
    out.cov = floor_eigenvalues(post);
    out.s = s + post * score;
    out.regularized = reg_prior || reg_post;
    return out;
}

// ---- DoD tracker -----------------------------------------------------------------

struct DodState
{
    Eigen::Vector4d s = Eigen::Vector4d::Zero(); // theta, phi, d theta/dt, d phi/dt
    Eigen::Matrix4d cov = Eigen::Matrix4d::Identity();
    int bs_id = 0;
    double last_update = 0.0;
    bool regularized = false;
    int fim_rank = 2; // rank of the most recent report's angle information

    DirectionAngles angles() const { return {s(0), s(1)}; }
    Eigen::Matrix2d angle_cov() const { return cov.topLeftCorner<2, 2>(); }
};

namespace detail
{

inline void constrain_angles(Eigen::Vector4d &s)
{
    if (s(0) < 0.0 || s(0) > kPi)
    {
        s(0) = std::clamp(s(0), 0.0, kPi);
        s(2) = 0.0;
    }
    s(1) = wrap_angle(s(1));
}

} // namespace detail

inline DodState dod_ekf_predict(const DodState &state, const CwnaModel &model)
{
    if (model.dims != 2)
        throw DomainError("dod_ekf_predict: model must have dims = 2");
    const Eigen::Matrix4d f = model.f;
    const Eigen::Matrix4d q = model.q_mat;
    DodState out = state;
    out.s = f * state.s;
    detail::constrain_angles(out.s);
    out.cov = floor_eigenvalues(Eigen::Matrix4d(f * state.cov * f.transpose() + q));
    out.last_update = state.last_update + model.dt;
    return out;
}

/// One information-form step with the concentrated-likelihood score and
/// observed information of the report evaluated at the predicted angles.
/// `book` is the BS's full beam book; the report selects its beams.
inline DodState dod_ekf_update(const DodState &state, const BrsrpReport &report, const BeamBook &book, double p_tx,
                               int m_f, double residual_floor = 1e-15)
{
    if (report.bs_id != state.bs_id)
        throw DomainError("dod_ekf_update: report from BS " + std::to_string(report.bs_id) + " fed to tracker of BS " +
                          std::to_string(state.bs_id));
    const BeamBook sub = book.subset(report.beam_indices);
    const ScoreFim sf = score_and_fim(report.beta(), state.angles(), sub, p_tx, m_f, residual_floor);

    Eigen::Vector4d q = Eigen::Vector4d::Zero();
    Eigen::Matrix4d fim = Eigen::Matrix4d::Zero();
    q.head<2>() = sf.score;
    fim.topLeftCorner<2, 2>() = sf.fim;

    const auto upd = information_update<4>(state.s, state.cov, q, fim);
    DodState out = state;
    out.s = upd.s;
    detail::constrain_angles(out.s);
    out.cov = upd.cov;
    out.regularized = upd.regularized;
    out.fim_rank = static_cast<int>(symmetric_pinv(sf.fim).rank);
    out.last_update = report.timestamp;
    return out;
}

struct DodTrackerOptions
{
    double accel_psd = 1e-4;
    double rate_init_std = 0.1;
    MleOptions mle;
    int max_singular_epochs = 5;
};

/// Per-BS DoD-EKF with cold start from the approximate MLE of the first report.
class DodTracker
{
  public:
    DodTracker(int bs_id, BeamBook book, double p_tx, int m_f, DodTrackerOptions opt = {})
        : bs_id_(bs_id), book_(std::move(book)), p_tx_(p_tx), m_f_(m_f), opt_(opt)
    {
    }

    bool initialized() const { return state_.has_value(); }
    bool diverged() const { return singular_streak_ >= opt_.max_singular_epochs; }
    int bs_id() const { return bs_id_; }
    const BeamBook &book() const { return book_; }
    const DodState &state() const
    {
        if (!state_)
            throw DomainError("DodTracker: not initialized");
        return *state_;
    }

    /// Consumes one report: initializes on the first, otherwise predicts to
    /// the report time and updates. Reports must arrive in time order.
    const DodState &process(const BrsrpReport &report)
    {
        if (report.bs_id != bs_id_)
            throw DomainError("DodTracker: report for a different BS");
        if (state_ && report.timestamp < state_->last_update)
            throw OutOfOrderError("DodTracker: report at t=" + format_double(report.timestamp) +
                                  " precedes last update at t=" + format_double(state_->last_update));
        if (!state_)
        {
            initialize(report);
            return *state_;
        }
        const double dt = report.timestamp - state_->last_update;
        DodState pred = dod_ekf_predict(*state_, cwna_matrices(dt, opt_.accel_psd, 2));
        pred.last_update = report.timestamp;
        state_ = dod_ekf_update(pred, report, book_, p_tx_, m_f_, opt_.mle.residual_floor);
        track_singularity(state_->fim_rank);
        return *state_;
    }

  private:
    void initialize(const BrsrpReport &report)
    {
        const BeamBook sub = book_.subset(report.beam_indices);
        const DodEstimate est = approx_mle_dod(report.beta(), sub, p_tx_, m_f_, opt_.mle);
        DodState st;
        st.bs_id = bs_id_;
        st.last_update = report.timestamp;
        st.s << est.angles.theta, est.angles.phi, 0.0, 0.0;
        const SymmetricInverse inv = symmetric_pinv(est.observed_fim);
        Eigen::Matrix2d c = inv.inverse;
        // Directions the report cannot resolve start with one radian of spread.
        if (inv.pseudo)
            c += Eigen::Matrix2d::Identity();
        st.cov.setZero();
        st.cov.topLeftCorner<2, 2>() = c;
        st.cov.bottomRightCorner<2, 2>() = opt_.rate_init_std * opt_.rate_init_std * Eigen::Matrix2d::Identity();
        st.cov = floor_eigenvalues(st.cov);
        st.fim_rank = static_cast<int>(inv.rank);
        state_ = st;
        track_singularity(st.fim_rank);
    }

    void track_singularity(int rank)
    {
        singular_streak_ = rank < 2 ? singular_streak_ + 1 : 0;
    }

    int bs_id_;
    BeamBook book_;
    double p_tx_;
    int m_f_;
    DodTrackerOptions opt_;
    std::optional<DodState> state_;
    int singular_streak_ = 0;
};

// ---- Position tracker --------------------------------------------------------------

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

struct UeState
{
    Vector6d s = Vector6d::Zero(); // x, y, z, vx, vy, vz
    Matrix6d cov = Matrix6d::Identity();
    double last_update = 0.0;
    bool regularized = false;

    Position3D position() const { return Position3D::from(s.head<3>()); }
    Eigen::Vector3d velocity() const { return s.tail<3>(); }
};

/// Angle estimate of one BS passed to the fusion tracker.
struct DodMeasurement
{
    int bs_id = 0;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero(); // theta, phi
    Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
};

inline DodMeasurement to_measurement(const DodState &s)
{
    return {s.bs_id, s.s.head<2>(), s.angle_cov()};
}

inline UeState pos_ekf_predict(const UeState &state, const CwnaModel &model)
{
    if (model.dims != 3)
        throw DomainError("pos_ekf_predict: model must have dims = 3");
    const Matrix6d f = model.f;
    UeState out = state;
    out.s = f * state.s;
    out.cov = floor_eigenvalues(Matrix6d(f * state.cov * f.transpose() + Matrix6d(model.q_mat)));
    out.last_update = state.last_update + model.dt;
    return out;
}

inline const BsPose &find_pose(const std::vector<BsPose> &poses, int bs_id)
{
    for (const BsPose &p : poses)
        if (p.bs_id == bs_id)
            return p;
    throw DomainError("no base station with id " + std::to_string(bs_id));
}

struct PosLoglikTerms
{
    Vector6d q = Vector6d::Zero();
    Matrix6d fim = Matrix6d::Zero();
};

/// Score and Gauss-Newton information of the stacked angle likelihood at p.
inline PosLoglikTerms pos_loglik_terms(const Position3D &p, const std::vector<DodMeasurement> &measurements,
                                       const std::vector<BsPose> &bs_poses)
{
    if (measurements.empty())
        throw DomainError("pos_loglik_terms: no measurements");
    PosLoglikTerms out;
    for (const DodMeasurement &m : measurements)
    {
        const Position3D &bs = find_pose(bs_poses, m.bs_id).position;
        const DirectionAngles mu = dod_from_positions(bs, p);
        const Eigen::Matrix<double, 2, 3> jac = dod_jacobian(bs, p);
        const Eigen::Vector2d e(m.mean(0) - mu.theta, wrap_angle(m.mean(1) - mu.phi));
        bool reg = false;
        const Eigen::Matrix2d ci = spd_inverse(Eigen::Matrix2d(m.cov), reg);
        out.q.head<3>() += jac.transpose() * ci * e;
        out.fim.topLeftCorner<3, 3>() += jac.transpose() * ci * jac;
    }
    out.fim = symmetrize(out.fim);
    return out;
}

inline UeState pos_ekf_update(const UeState &state, const std::vector<DodMeasurement> &measurements,
                              const std::vector<BsPose> &bs_poses)
{
    const PosLoglikTerms t = pos_loglik_terms(state.position(), measurements, bs_poses);
    const auto upd = information_update<6>(state.s, state.cov, t.q, t.fim);
    UeState out = state;
    out.s = upd.s;
    out.cov = upd.cov;
    out.regularized = upd.regularized;
    return out;
}

/// Normalized estimation error squared e^T C^-1 e.
template <typename V, typename M>
double nees(const Eigen::MatrixBase<V> &error, const Eigen::MatrixBase<M> &cov)
{
    return error.dot(cov.ldlt().solve(error.eval()));
}

// ---- CSV --------------------------------------------------------------------------

inline constexpr const char *kDodTrackCsvHeader = "t,bs_id,theta,phi,c11,c12,c22";
inline constexpr const char *kUeTrackCsvHeader = "t,x,y,z,vx,vy,vz,p11,p22,p33,p44,p55,p66";

inline void write_dod_track_row(std::ostream &os, const DodState &s)
{
    os << format_double(s.last_update) << ',' << s.bs_id << ',' << format_double(s.s(0)) << ','
       << format_double(s.s(1)) << ',' << format_double(s.cov(0, 0)) << ',' << format_double(s.cov(0, 1)) << ','
       << format_double(s.cov(1, 1)) << '\n';
}

inline void write_ue_track_row(std::ostream &os, const UeState &s)
{
    os << format_double(s.last_update);
    for (int i = 0; i < 6; ++i)
        os << ',' << format_double(s.s(i));
    for (int i = 0; i < 6; ++i)
        os << ',' << format_double(s.cov(i, i));
    os << '\n';
}

} // namespace bfpos

#endif // BFPOS_TRACKING_HPP
