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

#include "bfpos/bounds.hpp"
#include "bfpos/estimation.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

using namespace bfpos;

namespace
{

Eigen::Vector2cd random_pol(std::mt19937_64 &rng)
{
    std::normal_distribution<double> n;
    return Eigen::Vector2cd(cdouble(n(rng), n(rng)), cdouble(n(rng), n(rng))).normalized();
}

// K beams scattered around `around`; dual-polarized when `dual`.
BeamBook scattered_book(std::mt19937_64 &rng, const DirectionAngles &around, int k, bool dual)
{
    std::normal_distribution<double> off(0.0, deg2rad(4.0));
    std::uniform_real_distribution<double> w(deg2rad(3.0), deg2rad(8.0));
    std::vector<Beam> beams;
    for (int j = 0; j < k; ++j)
    {
        Beam b;
        b.steering = {around.theta + off(rng), wrap_angle(around.phi + off(rng))};
        b.width_az = w(rng);
        b.width_el = w(rng);
        b.peak_gain = 5.0;
        if (dual)
            b.polarization = random_pol(rng);
        beams.push_back(b);
    }
    return BeamBook(std::move(beams));
}

DirectionAngles random_dir(std::mt19937_64 &rng)
{
    std::uniform_real_distribution<double> t(0.6, kPi - 0.6), p(-kPi, kPi);
    return {t(rng), p(rng)};
}

ThetaVector random_theta(std::mt19937_64 &rng, const DirectionAngles &d, bool dual)
{
    std::uniform_real_distribution<double> u(0.5, 2.0), s(-0.5, 0.5);
    Eigen::Vector4d a;
    if (dual)
    {
        // alpha comes from a rank-one Hermitian matrix in the paper's model;
        // any values with a positive mean are valid for these tests.
        a << u(rng), u(rng), s(rng), s(rng);
    }
    else
        a << 0.0, u(rng), 0.0, 0.0;
    return make_theta(d, a, 0.05 * u(rng));
}

// Direct per-beam evaluation of the Gaussian BRSRP model, for oracle use.
void oracle_moments(const ThetaVector &th, const BeamBook &book, double p_tx, int m_f, Eigen::VectorXd &mean,
                    Eigen::VectorXd &var)
{
    const Eigen::Vector4cd alpha = alpha_from_real(th.segment<4>(2));
    const auto k = static_cast<Eigen::Index>(book.size());
    mean.resize(k);
    var.resize(k);
    for (Eigen::Index j = 0; j < k; ++j)
    {
        const Eigen::Vector2cd b = beam_response(book[static_cast<std::size_t>(j)], {th(0), th(1)});
        const cdouble h = std::conj(b(1)) * b(1) * alpha(0) + std::conj(b(0)) * b(1) * alpha(1) +
                          std::conj(b(1)) * b(0) * alpha(2) + std::conj(b(0)) * b(0) * alpha(3);
        EXPECT_NEAR(h.imag(), 0.0, 1e-12 * std::abs(h) + 1e-300);
        const auto m = gaussian_moments(p_tx * h.real(), th(6), m_f);
        mean(j) = m.mean;
        var(j) = m.variance;
    }
}

constexpr double kPtx = 2.0;
constexpr int kMf = 100;

} // namespace

// ---- Steering matrix --------------------------------------------------------------

TEST(SteeringMatrix, BruteForceAndStructure)
{
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i)
    {
        const DirectionAngles d = random_dir(rng);
        const BeamBook book = scattered_book(rng, d, 10, true);
        const SteeringMatrix a = steering_matrix(book, d);
        for (std::size_t j = 0; j < book.size(); ++j)
        {
            const Eigen::Vector2cd b = beam_response(book[j], d);
            const auto r = static_cast<Eigen::Index>(j);
            EXPECT_NEAR(std::abs(a(r, 0) - std::conj(b(1)) * b(1)), 0.0, 1e-14);
            EXPECT_NEAR(std::abs(a(r, 1) - std::conj(b(0)) * b(1)), 0.0, 1e-14);
            EXPECT_NEAR(std::abs(a(r, 2) - std::conj(b(1)) * b(0)), 0.0, 1e-14);
            EXPECT_NEAR(std::abs(a(r, 3) - std::conj(b(0)) * b(0)), 0.0, 1e-14);
            EXPECT_EQ(a(r, 0).imag(), 0.0);
            EXPECT_GE(a(r, 0).real(), 0.0);
        }
    }
}

TEST(SteeringMatrix, SinglePolarizationZeroColumns)
{
    std::mt19937_64 rng(2);
    const DirectionAngles d = random_dir(rng);
    BeamBook theta_only = scattered_book(rng, d, 6, false);
    SteeringMatrix a = steering_matrix(theta_only, d);
    EXPECT_EQ(a.leftCols(3).norm(), 0.0);
    EXPECT_GT(a.col(3).norm(), 0.0);

    std::vector<Beam> beams = theta_only.beams();
    for (Beam &b : beams)
        b.polarization = Eigen::Vector2cd(0.0, 1.0);
    a = steering_matrix(BeamBook(beams), d);
    EXPECT_EQ(a.rightCols(3).norm(), 0.0);
    EXPECT_GT(a.col(0).norm(), 0.0);
}

TEST(SteeringMatrix, DerivativesMatchFiniteDifferences)
{
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i)
    {
        const DirectionAngles d = random_dir(rng);
        const BeamBook book = scattered_book(rng, d, 8, true);
        const SteeringDerivatives sd = steering_matrix_derivatives(book, d);
        const double h = 1e-6;
        const SteeringMatrix ft =
            (steering_matrix(book, {d.theta + h, d.phi}) - steering_matrix(book, {d.theta - h, d.phi})) / (2 * h);
        const SteeringMatrix fp =
            (steering_matrix(book, {d.theta, d.phi + h}) - steering_matrix(book, {d.theta, d.phi - h})) / (2 * h);
        EXPECT_LT((ft - sd.d_theta).norm(), 1e-5 * sd.d_theta.norm() + 1e-10);
        EXPECT_LT((fp - sd.d_phi).norm(), 1e-5 * sd.d_phi.norm() + 1e-10);
        EXPECT_LT((sd.value - steering_matrix(book, d)).norm(), 1e-14);
    }
}

TEST(SteeringMatrix, RealBasisReproducesComplexProduct)
{
    std::mt19937_64 rng(4);
    const DirectionAngles d = random_dir(rng);
    const BeamBook book = scattered_book(rng, d, 9, true);
    const ThetaVector th = random_theta(rng, d, true);
    const SteeringMatrix a = steering_matrix(book, d);
    const Eigen::VectorXcd h = a * alpha_from_real(th.segment<4>(2));
    EXPECT_LT(h.imag().norm(), 1e-12 * h.norm());
    EXPECT_LT((h.real() - signal_basis(a) * th.segment<4>(2)).norm(), 1e-12 * h.norm());
}

// ---- Projectors --------------------------------------------------------------------

TEST(Projectors, IdentitiesOnRandomInstances)
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> kk(6, 20);
    double max_asym = 0.0;
    for (int i = 0; i < 1000; ++i)
    {
        const DirectionAngles d = random_dir(rng);
        const bool dual = i % 2 == 0;
        const BeamBook book = scattered_book(rng, d, kk(rng), dual);
        const SteeringMatrix a = steering_matrix(book, d);
        const Projector p = projector_a1(a, kPtx, kMf);
        const ObliqueProjectors op = oblique_projectors(a, kPtx, kMf);
        const Eigen::VectorXd ones = Eigen::VectorXd::Ones(a.rows());
        const Eigen::MatrixXd sig = mean_basis(a, kPtx, kMf).leftCols(4);

        EXPECT_LT((p.proj * p.proj - p.proj).norm(), 1e-10);
        EXPECT_LT((p.perp * p.perp - p.perp).norm(), 1e-10);
        EXPECT_LT((p.proj - p.proj.transpose()).norm(), 1e-10);
        EXPECT_LT((p.perp * ones).norm(), 1e-10);
        EXPECT_LT((op.p_a + op.p_1 - p.proj).norm(), 1e-10);
        EXPECT_LT((op.p_a * op.p_a - op.p_a).norm(), 1e-10);
        EXPECT_LT((op.p_1 * op.p_1 - op.p_1).norm(), 1e-10);
        EXPECT_LT((op.p_a * ones).norm(), 1e-10);
        EXPECT_LT((op.p_1 * sig).norm(), 1e-10 * sig.norm());
        EXPECT_LT((op.p_a * sig - sig).norm(), 1e-10 * sig.norm());
        EXPECT_LT((p.basis * p.ginv - p.proj).norm(), 1e-10);
        max_asym = std::max(max_asym, (op.p_a - op.p_a.transpose()).norm());
    }
    // oblique, not orthogonal
    EXPECT_GT(max_asym, 1e-3);
}

TEST(Projectors, ObliqueEqualsOrthogonalWhenColumnsAreCentred)
{
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n;
    for (int i = 0; i < 50; ++i)
    {
        const int k = 10;
        SteeringMatrix a(k, 4);
        for (int r = 0; r < k; ++r)
        {
            a(r, 0) = n(rng);
            a(r, 1) = cdouble(n(rng), n(rng));
            a(r, 2) = std::conj(a(r, 1));
            a(r, 3) = n(rng);
        }
        // centre the real basis columns
        for (int c = 0; c < 4; ++c)
        {
            const cdouble m = a.col(c).mean();
            a.col(c).array() -= m;
        }
        const ObliqueProjectors op = oblique_projectors(a, kPtx, kMf);
        const Eigen::MatrixXd sig = signal_basis(a);
        const Eigen::MatrixXd q = sig.householderQr().householderQ() * Eigen::MatrixXd::Identity(k, 4);
        EXPECT_LT((op.p_a - q * q.transpose()).norm(), 1e-10);
    }
}

TEST(Projectors, DegenerateBasis)
{
    std::mt19937_64 rng(7);
    const DirectionAngles d = random_dir(rng);
    // single polarization: rank 2, so two beams are not enough
    EXPECT_THROW(projector_a1(steering_matrix(scattered_book(rng, d, 2, false), d), kPtx, kMf),
                 DegenerateBasisError);
    EXPECT_NO_THROW(projector_a1(steering_matrix(scattered_book(rng, d, 3, false), d), kPtx, kMf));
    // dual polarization: rank 5
    EXPECT_THROW(projector_a1(steering_matrix(scattered_book(rng, d, 5, true), d), kPtx, kMf), DegenerateBasisError);
    EXPECT_NO_THROW(projector_a1(steering_matrix(scattered_book(rng, d, 6, true), d), kPtx, kMf));
}

TEST(Projectors, ObliqueSingularThrows)
{
    // every signal column proportional to 1
    SteeringMatrix a = SteeringMatrix::Zero(6, 4);
    a.col(3).setConstant(2.0);
    EXPECT_THROW(oblique_projectors(a, kPtx, kMf), SingularMatrixError);
}

// ---- Concentrated likelihood and nuisance -------------------------------------------

TEST(ConcentratedLoglik, ExactFitHitsFloor)
{
    std::mt19937_64 rng(8);
    const DirectionAngles d = random_dir(rng);
    const BeamBook book = scattered_book(rng, d, 12, true);
    const ThetaVector th = random_theta(rng, d, true);
    const Eigen::VectorXd beta = gaussian_model(th, book, kPtx, kMf).mean;
    const double k = 12.0;
    const double r2 = 1e-15 * beta.squaredNorm();
    EXPECT_NEAR(concentrated_loglik(beta, d, book, kPtx, kMf),
                -0.5 * k * std::log(kTwoPi) - 0.5 * k - 0.5 * k * std::log(r2 / k), 1e-9);
    // any other direction fits worse
    EXPECT_LT(concentrated_loglik(beta, {d.theta + 0.01, d.phi}, book, kPtx, kMf),
              concentrated_loglik(beta, d, book, kPtx, kMf));
}

TEST(ConcentratedLoglik, OrthogonalBetaKeepsFullNorm)
{
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n;
    const DirectionAngles d = random_dir(rng);
    const BeamBook book = scattered_book(rng, d, 12, true);
    const Projector p = projector_a1(steering_matrix(book, d), kPtx, kMf);
    Eigen::VectorXd v(12);
    for (int i = 0; i < 12; ++i)
        v(i) = n(rng);
    const Eigen::VectorXd beta = p.perp * v;
    EXPECT_NEAR(residual_norm2(beta, d, book, kPtx, kMf), beta.squaredNorm(), 1e-12 * beta.squaredNorm());
}

TEST(ConcentratedLoglik, ArgmaxScaleInvariantAndObliqueEquivalent)
{
    std::mt19937_64 rng(10);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 20; ++trial)
    {
        const DirectionAngles d = random_dir(rng);
        const BeamBook book = scattered_book(rng, d, 12, trial % 2 == 0);
        const ThetaVector th = random_theta(rng, d, trial % 2 == 0);
        const GaussianModel g = gaussian_model(th, book, kPtx, kMf);
        Eigen::VectorXd beta = g.mean;
        for (Eigen::Index j = 0; j < beta.size(); ++j)
            beta(j) += 0.3 * std::sqrt(g.var(j)) * n(rng);

        int best_a = -1, best_b = -1, best_c = -1;
        double fa = INFINITY, fb = INFINITY, fc = -INFINITY;
        int idx = 0;
        for (int i = -6; i <= 6; ++i)
            for (int j = -6; j <= 6; ++j, ++idx)
            {
                const DirectionAngles x{d.theta + 0.01 * i, d.phi + 0.01 * j};
                const double r = residual_norm2(beta, x, book, kPtx, kMf);
                const double o = oblique_objective(beta, x, book, kPtx, kMf);
                const double l = concentrated_loglik(3.7 * beta, x, book, kPtx, kMf);
                EXPECT_NEAR(o, r, 1e-9 * beta.squaredNorm());
                if (r < fa)
                    fa = r, best_a = idx;
                if (o < fb)
                    fb = o, best_b = idx;
                if (l > fc)
                    fc = l, best_c = idx;
            }
        EXPECT_EQ(best_a, best_b);
        EXPECT_EQ(best_a, best_c);
    }
}

TEST(NuisanceMle, PureFloor)
{
    std::mt19937_64 rng(11);
    const DirectionAngles d = random_dir(rng);
    const BeamBook book = scattered_book(rng, d, 8, true);
    const NuisanceEstimates n = nuisance_mle(Eigen::VectorXd::Constant(8, 0.7), d, book, kPtx, kMf);
    EXPECT_LT(n.alpha.norm(), 1e-12);
    EXPECT_NEAR(n.noise_floor, 0.7, 1e-12);
    EXPECT_NEAR(n.residual_var, 0.0, 1e-20);
}

TEST(NuisanceMle, RecoversForwardModel)
{
    std::mt19937_64 rng(12);
    for (int i = 0; i < 100; ++i)
    {
        const bool dual = i % 2 == 0;
        const DirectionAngles d = random_dir(rng);
        const BeamBook book = scattered_book(rng, d, 10, dual);
        const ThetaVector th = random_theta(rng, d, dual);
        const Eigen::VectorXd beta = gaussian_model(th, book, kPtx, kMf).mean;
        const NuisanceEstimates n = nuisance_mle(beta, d, book, kPtx, kMf);
        EXPECT_LT((n.alpha_real - th.segment<4>(2)).norm(), 1e-8 * th.segment<4>(2).norm());
        EXPECT_NEAR(n.noise_floor, th(6), 1e-8 * th(6));
        EXPECT_LT(n.residual_var, 1e-20 * beta.squaredNorm());
        EXPECT_NEAR(std::abs(n.alpha(2) - std::conj(n.alpha(1))), 0.0, 0.0);
    }
}

// ---- Score and FIM ---------------------------------------------------------------------

TEST(ScoreFim, MatchesFiniteDifferences)
{
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n;
    for (int i = 0; i < 100; ++i)
    {
        const bool dual = i % 2 == 0;
        const DirectionAngles d = random_dir(rng);
        const BeamBook book = scattered_book(rng, d, 12, dual);
        const ThetaVector th = random_theta(rng, d, dual);
        const GaussianModel g = gaussian_model(th, book, kPtx, kMf);
        Eigen::VectorXd beta = g.mean;
        for (Eigen::Index j = 0; j < beta.size(); ++j)
            beta(j) += std::sqrt(g.var(j)) * n(rng);
        const DirectionAngles x{d.theta + 0.003 * n(rng), d.phi + 0.003 * n(rng)};

        const ScoreFim sf = score_and_fim(beta, x, book, kPtx, kMf);
        const ProjectedResidual pr = projected_residual(beta, x, book, kPtx, kMf);
        const double h = 1e-6;
        const DirectionAngles xs[2][2] = {{{x.theta + h, x.phi}, {x.theta - h, x.phi}},
                                          {{x.theta, x.phi + h}, {x.theta, x.phi - h}}};
        for (int c = 0; c < 2; ++c)
        {
            const Projector pp = projector_a1(steering_matrix(book, xs[c][0]), kPtx, kMf);
            const Projector pm = projector_a1(steering_matrix(book, xs[c][1]), kPtx, kMf);
            const Eigen::VectorXd fd_r = (pp.perp * beta - pm.perp * beta) / (2 * h);
            EXPECT_LT((fd_r - pr.jacobian.col(c)).norm(), 1e-5 * pr.jacobian.col(c).norm() + 1e-12);

            const double fd_n2 = (residual_norm2(beta, xs[c][0], book, kPtx, kMf) -
                                  residual_norm2(beta, xs[c][1], book, kPtx, kMf)) / (2 * h);
            EXPECT_NEAR(fd_n2, sf.residual_gradient(c), 1e-5 * std::abs(sf.residual_gradient(c)) + 1e-12);

            const double fd_l = (concentrated_loglik(beta, xs[c][0], book, kPtx, kMf) -
                                 concentrated_loglik(beta, xs[c][1], book, kPtx, kMf)) / (2 * h);
            EXPECT_NEAR(fd_l, sf.score(c), 1e-5 * std::abs(sf.score(c)) + 1e-8);
        }
        EXPECT_EQ(sf.fim(0, 1), sf.fim(1, 0));
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(sf.fim);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12 * es.eigenvalues().maxCoeff());
    }
}

TEST(ScoreFim, StationaryAtTruthWhenNoiseless)
{
    std::mt19937_64 rng(14);
    for (int i = 0; i < 20; ++i)
    {
        const DirectionAngles d = random_dir(rng);
        const BeamBook book = scattered_book(rng, d, 10, i % 2 == 0);
        const ThetaVector th = random_theta(rng, d, i % 2 == 0);
        const Eigen::VectorXd beta = gaussian_model(th, book, kPtx, kMf).mean;
        const ScoreFim sf = score_and_fim(beta, d, book, kPtx, kMf);
        EXPECT_LT(sf.residual_gradient.norm(), 1e-6 * beta.squaredNorm());
        EXPECT_GT(sf.fim.determinant(), 0.0);
    }
}

TEST(ScoreFim, ZeroBetaCarriesNoInformation)
{
    std::mt19937_64 rng(15);
    const DirectionAngles d = random_dir(rng);
    const BeamBook book = scattered_book(rng, d, 6, false);
    const ScoreFim sf = score_and_fim(Eigen::VectorXd::Zero(6), d, book, kPtx, kMf);
    EXPECT_EQ(sf.fim.norm(), 0.0);
    EXPECT_EQ(sf.score.norm(), 0.0);
}

// ---- Approximate MLE ----------------------------------------------------------------

namespace
{

struct GridCase
{
    BeamBook book;
    ThetaVector theta;
    Eigen::VectorXd beta;
};

// 8x8 grid of 3 degree beams spaced 5 degrees, strongest k beams of a noiseless report.
GridCase grid_case(const DirectionAngles &truth, int k)
{
    BeamGridSpec spec;
    spec.center = {1.9, 0.4};
    const BeamBook full = make_beam_grid(spec);
    Eigen::Vector4d a(0.0, 3e-3, 0.0, 0.0);
    const ThetaVector th = make_theta(truth, a, 1e-6);
    const Eigen::VectorXd mean = gaussian_model(th, full, kPtx, kMf).mean;
    const auto sel = select_feedback(mean, k);
    GridCase g{full.subset(sel.indices), th, Eigen::VectorXd()};
    g.beta = Eigen::Map<const Eigen::VectorXd>(sel.values.data(), k);
    return g;
}

} // namespace

TEST(ApproxMle, NoiselessOnGridDirection)
{
    BeamGridSpec spec;
    spec.center = {1.9, 0.4};
    const BeamBook full = make_beam_grid(spec);
    for (int j : {0, 9, 27, 36, 63})
    {
        const GridCase g = grid_case(full[static_cast<std::size_t>(j)].steering, 8);
        const DodEstimate e = approx_mle_dod(g.beta, g.book, kPtx, kMf);
        EXPECT_TRUE(e.converged);
        EXPECT_FALSE(e.few_beams);
        EXPECT_NEAR(e.angles.theta, g.theta(0), 1e-6);
        EXPECT_NEAR(wrap_angle(e.angles.phi - g.theta(1)), 0.0, 1e-6);
    }
}

TEST(ApproxMle, NoiselessOffGrid)
{
    std::mt19937_64 rng(16);
    std::uniform_real_distribution<double> u(-deg2rad(15.0), deg2rad(15.0));
    for (int i = 0; i < 30; ++i)
    {
        const DirectionAngles truth{1.9 + u(rng), 0.4 + u(rng)};
        const GridCase g = grid_case(truth, 8);
        const DodEstimate e = approx_mle_dod(g.beta, g.book, kPtx, kMf);
        EXPECT_NEAR(e.angles.theta, truth.theta, 1e-6);
        EXPECT_NEAR(wrap_angle(e.angles.phi - truth.phi), 0.0, 1e-6);
        EXPECT_NEAR(e.nuisance.noise_floor, 1e-6, 1e-9);
    }
}

TEST(ApproxMle, PermutationAndScaleInvariance)
{
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n;
    const DirectionAngles truth{1.93, 0.37};
    GridCase g = grid_case(truth, 10);
    const Eigen::VectorXd var = gaussian_model(g.theta, g.book, kPtx, kMf).var;
    for (Eigen::Index j = 0; j < g.beta.size(); ++j)
        g.beta(j) += 0.5 * std::sqrt(var(j)) * n(rng);
    const DodEstimate e0 = approx_mle_dod(g.beta, g.book, kPtx, kMf);

    std::vector<int> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::VectorXd bp(10);
    for (int j = 0; j < 10; ++j)
        bp(j) = g.beta(perm[static_cast<std::size_t>(j)]);
    const DodEstimate e1 = approx_mle_dod(bp, g.book.subset(perm), kPtx, kMf);
    EXPECT_NEAR(e1.angles.theta, e0.angles.theta, 1e-9);
    EXPECT_NEAR(e1.angles.phi, e0.angles.phi, 1e-9);

    const DodEstimate e2 = approx_mle_dod(4.5 * g.beta, g.book, kPtx, kMf);
    EXPECT_NEAR(e2.angles.theta, e0.angles.theta, 1e-9);
    EXPECT_NEAR(e2.angles.phi, e0.angles.phi, 1e-9);
    EXPECT_NEAR(e2.nuisance.noise_floor, 4.5 * e0.nuisance.noise_floor, 1e-8 * std::abs(e2.nuisance.noise_floor));
    EXPECT_LT((e2.nuisance.alpha_real - 4.5 * e0.nuisance.alpha_real).norm(), 1e-8 * e2.nuisance.alpha_real.norm());
}

TEST(ApproxMle, FewBeamsFlagged)
{
    const GridCase g = grid_case({1.93, 0.37}, 4);
    const DodEstimate e = approx_mle_dod(g.beta, g.book, kPtx, kMf);
    EXPECT_TRUE(e.few_beams);
}

TEST(ApproxMle, ReportOverloadAndCsv)
{
    BeamGridSpec spec;
    spec.center = {1.9, 0.4};
    const BeamBook full = make_beam_grid(spec);
    const GridCase g = grid_case({1.93, 0.37}, 8);
    const Eigen::VectorXd mean = gaussian_model(g.theta, full, kPtx, kMf).mean;
    const auto sel = select_feedback(mean, 8);
    BrsrpReport r;
    r.bs_id = 3;
    r.timestamp = 1.5;
    r.beam_indices = sel.indices;
    r.values = sel.values;
    const DodEstimate e = approx_mle_dod(r, full, kPtx, kMf);
    EXPECT_NEAR(e.angles.theta, 1.93, 1e-6);
    std::ostringstream os;
    write_dod_estimate_row(os, r.timestamp, r.bs_id, e);
    std::string s = os.str();
    EXPECT_EQ(std::count(s.begin(), s.end(), ','), 8);
    EXPECT_EQ(s.substr(0, 6), "1.5,3,");
    EXPECT_EQ(s.substr(s.size() - 3), ",1\n");
}

TEST(ApproxMle, MonteCarloNearCrbAtHighSnr)
{
    // 30 dB peak SNR, all 64 beams: RMSE within 1.5 sqrt(CRB).
    BeamGridSpec spec;
    spec.center = {1.9, 0.4};
    const BeamBook full = make_beam_grid(spec);
    const int mf = 1656;
    const DirectionAngles truth{1.9 + deg2rad(1.3), 0.4 - deg2rad(2.1)};
    Eigen::Vector4d a(0.0, 3e-3, 0.0, 0.0);
    ThetaVector th = make_theta(truth, a, 1.0);
    // noise floor from the peak-beam SNR lambda_max / (M_f sigma^2)
    const double lam_max = mf * (gaussian_model(th, full, kPtx, mf).mean.maxCoeff() - th(6));
    th(6) = lam_max / (mf * db2lin(30.0));
    const GaussianModel g = gaussian_model(th, full, kPtx, mf);
    const Eigen::Matrix2d crb = crb_dod_block(fim_dod(th, full, kPtx, mf));
    std::mt19937_64 rng(18);
    double st = 0, sp = 0;
    const int n = 200;
    for (int t = 0; t < n; ++t)
    {
        Eigen::VectorXd beta(64);
        for (int j = 0; j < 64; ++j)
            beta(j) = sample_brsrp(mf * (g.mean(j) - th(6)), th(6), mf, rng);
        const DodEstimate e = approx_mle_dod(beta, full, kPtx, mf);
        st += std::pow(e.angles.theta - truth.theta, 2) / n;
        sp += std::pow(wrap_angle(e.angles.phi - truth.phi), 2) / n;
    }
    EXPECT_LT(std::sqrt(st / crb(0, 0)), 1.5);
    EXPECT_LT(std::sqrt(sp / crb(1, 1)), 1.5);
    EXPECT_GT(std::sqrt(st / crb(0, 0)), 0.75);
    EXPECT_GT(std::sqrt(sp / crb(1, 1)), 0.75);
}

// ---- Exact Gaussian model ------------------------------------------------------------

TEST(GaussianModel, MatchesPerBeamMoments)
{
    std::mt19937_64 rng(19);
    for (int i = 0; i < 50; ++i)
    {
        const DirectionAngles d = random_dir(rng);
        const BeamBook book = scattered_book(rng, d, 9, i % 2 == 0);
        const ThetaVector th = random_theta(rng, d, i % 2 == 0);
        Eigen::VectorXd mean, var;
        oracle_moments(th, book, kPtx, kMf, mean, var);
        const GaussianModel g = gaussian_model(th, book, kPtx, kMf);
        EXPECT_LT((g.mean - mean).norm(), 1e-12 * mean.norm());
        EXPECT_LT((g.var - var).norm(), 1e-12 * var.norm());
    }
}

TEST(GaussianModel, DerivativesMatchFiniteDifferences)
{
    std::mt19937_64 rng(20);
    for (int i = 0; i < 100; ++i)
    {
        const bool dual = i % 2 == 0;
        const DirectionAngles d = random_dir(rng);
        const BeamBook book = scattered_book(rng, d, 9, dual);
        ThetaVector th = random_theta(rng, d, dual);
        th(0) += 0.01;
        const GaussianModel g = gaussian_model(th, book, kPtx, kMf);
        for (int m = 0; m < 7; ++m)
        {
            const double h = 1e-6 * std::max(1.0, std::abs(th(m)));
            ThetaVector tp = th, tm = th;
            tp(m) += h;
            tm(m) -= h;
            const GaussianModel gp = gaussian_model(tp, book, kPtx, kMf);
            const GaussianModel gm = gaussian_model(tm, book, kPtx, kMf);
            const Eigen::VectorXd fd_mu = (gp.mean - gm.mean) / (2 * h);
            const Eigen::VectorXd fd_c = (gp.var - gm.var) / (2 * h);
            EXPECT_LT((fd_mu - g.d_mean.col(m)).norm(), 1e-5 * g.d_mean.col(m).norm() + 1e-12) << m;
            EXPECT_LT((fd_c - g.d_var.col(m)).norm(), 1e-5 * g.d_var.col(m).norm() + 1e-12) << m;
        }
    }
}

TEST(FullLoglik, QuadraticTermAndVarianceScaling)
{
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n;
    const DirectionAngles d = random_dir(rng);
    const BeamBook book = scattered_book(rng, d, 9, true);
    const ThetaVector th = random_theta(rng, d, true);
    const GaussianModel g = gaussian_model(th, book, kPtx, kMf);
    const double k = 9.0;
    EXPECT_NEAR(full_loglik(g.mean, th, book, kPtx, kMf),
                -0.5 * k * std::log(kTwoPi) - 0.5 * g.var.array().log().sum(), 1e-10);

    Eigen::VectorXd beta = g.mean;
    for (Eigen::Index j = 0; j < beta.size(); ++j)
        beta(j) += std::sqrt(g.var(j)) * n(rng);
    const double q = ((beta - g.mean).array().square() / g.var.array()).sum();
    const double l1 = gaussian_loglik(beta, g.mean, g.var);
    const double l2 = gaussian_loglik(beta, g.mean, 2.0 * g.var);
    EXPECT_NEAR(l2 - l1, -0.5 * k * std::log(2.0) + 0.25 * q, 1e-10);

    EXPECT_THROW(full_loglik(beta, make_theta(d, Eigen::Vector4d(-50, -50, 0, 0), 0.0), book, kPtx, kMf), DomainError);
}

TEST(FullLoglik, GradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(22);
    std::normal_distribution<double> n;
    for (int i = 0; i < 100; ++i)
    {
        const bool dual = i % 2 == 0;
        const DirectionAngles d = random_dir(rng);
        const BeamBook book = scattered_book(rng, d, 10, dual);
        ThetaVector th = random_theta(rng, d, dual);
        const GaussianModel g = gaussian_model(th, book, kPtx, kMf);
        Eigen::VectorXd beta = g.mean;
        for (Eigen::Index j = 0; j < beta.size(); ++j)
            beta(j) += std::sqrt(g.var(j)) * n(rng);
        th(0) += 0.002 * n(rng);
        th(1) += 0.002 * n(rng);
        const ThetaVector grad = full_loglik_gradient(beta, th, book, kPtx, kMf);
        for (int m = 0; m < 7; ++m)
        {
            const double h = 1e-6 * std::max(1e-2, std::abs(th(m)));
            ThetaVector tp = th, tm = th;
            tp(m) += h;
            tm(m) -= h;
            const double fd = (full_loglik(beta, tp, book, kPtx, kMf) - full_loglik(beta, tm, book, kPtx, kMf)) / (2 * h);
            EXPECT_NEAR(fd, grad(m), 1e-5 * std::max(std::abs(grad(m)), 1e-3 * grad.norm())) << m;
        }
    }
}

TEST(FullLoglik, ScoreHasZeroMeanAtTruth)
{
    // E[score] = 0 under the exact BRSRP law since its first two moments match the model.
    std::mt19937_64 rng(23);
    const GridCase gc = grid_case({1.93, 0.37}, 10);
    ThetaVector th = gc.theta;
    th(6) = 5e-5;
    const int mf = 50;
    const GaussianModel g = gaussian_model(th, gc.book, kPtx, mf);
    const int n = 4000;
    ThetaVector sum = ThetaVector::Zero(), sum2 = ThetaVector::Zero();
    for (int t = 0; t < n; ++t)
    {
        Eigen::VectorXd beta(10);
        for (int j = 0; j < 10; ++j)
            beta(j) = sample_brsrp(mf * (g.mean(j) - th(6)), th(6), mf, rng);
        const ThetaVector s = full_loglik_gradient(beta, th, gc.book, kPtx, mf);
        sum += s;
        sum2 += s.cwiseProduct(s);
    }
    for (int m = 0; m < 7; ++m)
    {
        const double mean = sum(m) / n;
        const double se = std::sqrt((sum2(m) / n - mean * mean) / n);
        if (se == 0.0)
            EXPECT_EQ(mean, 0.0);
        else
            EXPECT_LT(std::abs(mean), 4.0 * se) << m;
    }
}

TEST(FullMle, AscentAndStationarity)
{
    std::mt19937_64 rng(24);
    std::normal_distribution<double> n;
    int converged = 0;
    const int trials = 30;
    for (int i = 0; i < trials; ++i)
    {
        const GridCase gc = grid_case({1.9 + 0.02 * n(rng), 0.4 + 0.02 * n(rng)}, 10);
        ThetaVector th = gc.theta;
        th(6) = 2e-5;
        const int mf = 200;
        const GaussianModel g = gaussian_model(th, gc.book, kPtx, mf);
        Eigen::VectorXd beta(10);
        for (int j = 0; j < 10; ++j)
            beta(j) = sample_brsrp(mf * (g.mean(j) - th(6)), th(6), mf, rng);
        const DodEstimate init = approx_mle_dod(beta, gc.book, kPtx, mf);
        const FullMleResult r = full_mle_dod(beta, gc.book, kPtx, mf, init);
        EXPECT_GE(r.loglik, r.init_loglik);
        if (!r.converged)
            continue;
        ++converged;
        // Newton decrement at the optimum
        const Eigen::Matrix<double, 7, 7> f = gaussian_fim(gaussian_model(r.theta, gc.book, kPtx, mf));
        const double dec = r.gradient.dot(symmetric_pinv(f).inverse * r.gradient);
        EXPECT_LT(dec, 1e-8);
    }
    EXPECT_GE(converged, trials * 9 / 10);
}

TEST(FullMle, AgreesWithApproximateMleAtHighSnr)
{
    std::mt19937_64 rng(25);
    const int mf = 1000;
    const GridCase gc = grid_case({1.93, 0.37}, 12);
    ThetaVector th = gc.theta;
    const double lam_max = mf * (gaussian_model(th, gc.book, kPtx, mf).mean.maxCoeff() - th(6));
    th(6) = lam_max / (mf * db2lin(30.0));
    const GaussianModel g = gaussian_model(th, gc.book, kPtx, mf);
    const Eigen::Matrix2d crb = crb_dod_block(fim_dod(th, gc.book, kPtx, mf));
    for (int t = 0; t < 20; ++t)
    {
        Eigen::VectorXd beta(12);
        for (int j = 0; j < 12; ++j)
            beta(j) = sample_brsrp(mf * (g.mean(j) - th(6)), th(6), mf, rng);
        const DodEstimate init = approx_mle_dod(beta, gc.book, kPtx, mf);
        const FullMleResult r = full_mle_dod(beta, gc.book, kPtx, mf, init);
        EXPECT_LT(std::abs(r.estimate.angles.theta - init.angles.theta), 3.0 * std::sqrt(crb(0, 0)));
        EXPECT_LT(std::abs(wrap_angle(r.estimate.angles.phi - init.angles.phi)), 3.0 * std::sqrt(crb(1, 1)));
    }
}

TEST(FullMle, NoiselessStaysAtTruth)
{
    const GridCase gc = grid_case({1.93, 0.37}, 10);
    const DodEstimate init = approx_mle_dod(gc.beta, gc.book, kPtx, kMf);
    const FullMleResult r = full_mle_dod(gc.beta, gc.book, kPtx, kMf, init);
    EXPECT_GE(r.loglik, r.init_loglik);
    EXPECT_NEAR(r.estimate.angles.theta, 1.93, 1e-6);
    EXPECT_NEAR(r.estimate.angles.phi, 0.37, 1e-6);
}
