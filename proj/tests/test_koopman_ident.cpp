#include <doctest.h>

#include <chrono>
#include <random>

#include <nlohmann/json.hpp>

#include "mkbf/errors.hpp"
#include "mkbf/kbf_runtime.hpp"
#include "mkbf/koopman_ident.hpp"
#include "test_support.hpp"

using namespace mkbf;
using namespace testing;
using Eigen::MatrixXcd;

namespace {

TrajectoryDataset tiny_dataset(std::vector<Index> lengths, Index m, double dt = 0.5) {
    TrajectoryDataset ds;
    ds.dt = dt;
    ds.n_states = 2;
    ds.n_inputs = static_cast<std::size_t>(m);
    double v = 1.0;
    for (Index n : lengths) {
        TrajectorySegment s;
        s.times = VectorXd::LinSpaced(n, 0.0, dt * static_cast<double>(n - 1));
        s.states.resize(2, n);
        s.inputs.resize(m, n);
        for (Index k = 0; k < n; ++k) {
            s.states(0, k) = v;
            s.states(1, k) = -0.5 * v;
            v += 1.0;
            for (Index i = 0; i < m; ++i) s.inputs(i, k) = 0.1 * static_cast<double>(k + i + 1);
        }
        ds.segments.push_back(std::move(s));
    }
    return ds;
}

KbfModel manual_model(const MatrixXd& A, double dt = 0.1) {
    KbfModel m;
    m.form = KbfForm::Explicit;
    m.dt = dt;
    m.dictionary = build_monomial_dictionary(static_cast<std::size_t>(A.rows()) - 1, 1);
    m.q = m.r = static_cast<std::size_t>(A.rows());
    m.m = 1;
    m.A = A;
    m.B = {MatrixXd::Zero(A.rows(), A.rows())};
    m.P = m.P_pinv = MatrixXd::Identity(A.rows(), A.rows());
    m.Cx = state_extractor(m.dictionary);
    return m;
}

}  // namespace

TEST_CASE("data matrix shapes and segment boundaries") {
    const auto dict = build_monomial_dictionary(2, 1);
    const auto dm = assemble_data_matrices(tiny_dataset({3}, 1), dict, KbfForm::Explicit);
    CHECK(dm.columns() == 2);
    CHECK(dm.X1().cols() == 2);
    CHECK(dm.gamma(0).cols() == 2);
    CHECK(dm.omega.rows() == 2 * 3);

    const auto ds = tiny_dataset({5, 4}, 2);
    const auto dm2 = assemble_data_matrices(ds, dict, KbfForm::Explicit);
    CHECK(dm2.columns() == 7);
    // Column j of X2 is the lift of the sample after column j of X1, never across segments.
    Index col = 0;
    for (const auto& seg : ds.segments) {
        for (Index k = 0; k + 1 < seg.states.cols(); ++k, ++col) {
            CHECK((dm2.X1().col(col) - lift(dict, seg.states.col(k))).norm() == 0.0);
            CHECK((dm2.X2.col(col) - lift(dict, seg.states.col(k + 1))).norm() == 0.0);
            for (std::size_t i = 0; i < 2; ++i) {
                const double u = seg.inputs(static_cast<Index>(i), k + 1);
                CHECK((dm2.gamma(i).col(col) - u * lift(dict, seg.states.col(k))).norm() == 0.0);
            }
        }
    }
    const auto dmi = assemble_data_matrices(ds, dict, KbfForm::Implicit);
    for (Index c = 0; c < dmi.X2.cols(); ++c) {
        const double u = dmi.gamma(0)(0, c);  // constant monomial times u
        CHECK((dmi.gamma(0).col(c) - u * dmi.X2.col(c)).norm() <= 1e-15);
    }
}

TEST_CASE("zero inputs give zero input blocks") {
    auto ds = tiny_dataset({6}, 2);
    for (auto& s : ds.segments) s.inputs.setZero();
    const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(2, 2), KbfForm::Explicit);
    CHECK(dm.gamma(0).isZero(0.0));
    CHECK(dm.gamma(1).isZero(0.0));
}

TEST_CASE("dataset validation rejects inconsistent segments") {
    auto ds = tiny_dataset({4, 4}, 1);
    ds.segments[1].inputs.resize(2, 4);
    CHECK_THROWS_AS(ds.validate(), InvalidArgument);
    auto short_ds = tiny_dataset({1}, 1);
    CHECK_THROWS_AS(assemble_data_matrices(short_ds, build_monomial_dictionary(2, 1), KbfForm::Explicit),
                    EmptyDataError);
}

TEST_CASE("linear map recovered from zero-input data") {
    std::mt19937_64 rng(21);
    BilinearTruth t;
    t.A = random_stable(4, 0.95, rng);
    t.B = {MatrixXd::Zero(4, 4)};
    auto ds = bilinear_dataset(t, 6, 40, KbfForm::Explicit, rng);
    for (auto& s : ds.segments) {
        s.inputs.setZero();
        for (Index k = 1; k < s.states.cols(); ++k) s.states.col(k) = t.A * s.states.col(k - 1);
    }
    const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(4, 1), KbfForm::Explicit);
    const auto model = solve_kbf(dm, dm.q(), false);
    CHECK((model.A - lifted(t.A, true)).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("bilinear pair recovered in both forms") {
    for (auto form : {KbfForm::Explicit, KbfForm::Implicit}) {
        CAPTURE(to_string(form));
        std::mt19937_64 rng(3);
        const auto t = random_bilinear(5, 2, rng);
        const auto ds = bilinear_dataset(t, 10, 60, form, rng);
        const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(5, 1), form);
        for (auto reg : {Regression::Snapshot, Regression::Increment}) {
            const auto model = solve_kbf(dm, dm.omega.rows(), false, reg);
            CHECK((model.A - lifted(t.A, true)).cwiseAbs().maxCoeff() <= 1e-6);
            for (std::size_t i = 0; i < 2; ++i)
                CHECK((model.B[i] - lifted(t.B[i], false)).cwiseAbs().maxCoeff() <= 1e-6);
        }
    }
}

TEST_CASE("identified model reproduces held-out one-step predictions") {
    std::mt19937_64 rng(8);
    const auto t = random_bilinear(4, 1, rng);
    const auto train = bilinear_dataset(t, 8, 50, KbfForm::Explicit, rng);
    const auto dm = assemble_data_matrices(train, build_monomial_dictionary(4, 1), KbfForm::Explicit);
    const auto model = solve_kbf(dm, dm.omega.rows(), false);
    const auto test = bilinear_dataset(t, 1, 101, KbfForm::Explicit, rng);
    const auto& s = test.segments[0];
    double worst = 0.0;
    for (Index k = 0; k < 100; ++k) {
        const VectorXd z = initial_lift(model, s.states.col(k));
        const VectorXd next = reconstruct_state(model, step_explicit(model, z, s.inputs.col(k + 1)));
        worst = std::max(worst, (next - s.states.col(k + 1)).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("residual does not increase with the truncation order") {
    std::mt19937_64 rng(13);
    const auto t = random_bilinear(3, 2, rng);
    auto ds = bilinear_dataset(t, 5, 30, KbfForm::Explicit, rng);
    std::normal_distribution<double> noise(0.0, 1e-3);
    for (auto& s : ds.segments)
        for (Index i = 0; i < s.states.size(); ++i) s.states.data()[i] += noise(rng);
    const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(3, 2), KbfForm::Explicit);
    for (auto reg : {Regression::Snapshot, Regression::Increment}) {
        const KbfFactorization f(dm, reg);
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t r = 1; r <= f.rank(); ++r) {
            const double res = f.model(r, false).residual;
            CHECK(res <= prev * (1.0 + 1e-12) + 1e-14);
            prev = res;
        }
        // Independent check of the reported residual at one order.
        const auto model = f.model(f.rank() / 2, false);
        MatrixXd G(dm.q(), dm.omega.rows());
        G.leftCols(static_cast<Index>(dm.q())) = model.A;
        if (reg == Regression::Increment)
            G.leftCols(static_cast<Index>(dm.q())) -= MatrixXd::Identity(static_cast<Index>(dm.q()),
                                                                         static_cast<Index>(dm.q()));
        for (std::size_t i = 0; i < dm.m; ++i)
            G.middleCols(static_cast<Index>(dm.q() * (i + 1)), static_cast<Index>(dm.q())) = model.B[i];
        const MatrixXd Y = reg == Regression::Increment ? MatrixXd(dm.X2 - dm.X1()) : dm.X2;
        CHECK(model.residual == doctest::Approx((Y - G * dm.omega).norm()).epsilon(1e-8));
    }
}

TEST_CASE("factorization reuse equals a direct solve") {
    std::mt19937_64 rng(17);
    const auto t = random_bilinear(3, 1, rng);
    const auto ds = bilinear_dataset(t, 4, 30, KbfForm::Implicit, rng);
    const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(3, 2), KbfForm::Implicit);
    const KbfFactorization f(dm, Regression::Increment);
    for (std::size_t r : {5u, 12u, 20u}) {
        const auto a = f.model(r, true);
        const auto b = solve_kbf(dm, r, true, Regression::Increment);
        CHECK((a.A - b.A).norm() == 0.0);
        CHECK((a.P - b.P).norm() == 0.0);
    }
    CHECK_THROWS_AS(f.model(0, false), InvalidArgument);
    CHECK_THROWS_AS(f.model(f.max_order() + 1, false), InvalidArgument);
}

TEST_CASE("reduction at the full rank reproduces unreduced one-step predictions") {
    std::mt19937_64 rng(23);
    const auto t = random_bilinear(3, 2, rng);
    const auto ds = bilinear_dataset(t, 6, 40, KbfForm::Explicit, rng);
    const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(3, 2), KbfForm::Explicit);
    for (auto reg : {Regression::Snapshot, Regression::Increment}) {
        const KbfFactorization f(dm, reg);
        const auto full = f.model(f.rank(), false);
        const auto red = f.model(f.rank(), true);
        for (Index k = 0; k < 20; ++k) {
            const VectorXd x = ds.segments[1].states.col(k);
            const VectorXd u = ds.segments[1].inputs.col(k + 1);
            const VectorXd zf = step_explicit(full, initial_lift(full, x), u);
            const VectorXd zr = step_explicit(red, initial_lift(red, x), u);
            const VectorXd lf = zf;
            const VectorXd lr = red.low_rank() ? zr : VectorXd(red.P * zr);
            CHECK((lf - lr).norm() <= 1e-8 * std::max(1.0, lf.norm()));
        }
    }
}

TEST_CASE("full-rank increment and snapshot regressions agree") {
    std::mt19937_64 rng(29);
    const auto t = random_bilinear(3, 1, rng);
    const auto ds = bilinear_dataset(t, 5, 40, KbfForm::Explicit, rng);
    const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(3, 2), KbfForm::Explicit);
    const auto a = solve_kbf(dm, dm.omega.rows(), false, Regression::Snapshot);
    const auto b = solve_kbf(dm, dm.omega.rows(), false, Regression::Increment);
    CHECK((a.A - b.A).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((a.B[0] - b.B[0]).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("low-rank increment model and its dense form step identically") {
    std::mt19937_64 rng(31);
    const auto t = random_bilinear(3, 2, rng);
    for (auto form : {KbfForm::Explicit, KbfForm::Implicit}) {
        const auto ds = bilinear_dataset(t, 5, 40, form, rng);
        const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(3, 2), form);
        const auto lr = solve_kbf(dm, 9, true, Regression::Increment);
        REQUIRE(lr.low_rank());
        CHECK(lr.state_dim() == dm.q());
        const auto dense = dense_form(lr);
        VectorXd z1 = initial_lift(lr, ds.segments[0].states.col(0));
        VectorXd z2 = initial_lift(dense, ds.segments[0].states.col(0));
        for (Index k = 1; k < 30; ++k) {
            const VectorXd u = ds.segments[0].inputs.col(k);
            z1 = form == KbfForm::Explicit ? step_explicit(lr, z1, u) : step_implicit(lr, z1, u);
            z2 = form == KbfForm::Explicit ? step_explicit(dense, z2, u) : step_implicit(dense, z2, u);
        }
        CHECK((z1 - z2).norm() <= 1e-10 * z2.norm());
    }
}

TEST_CASE("rank-one truncation with a target orthogonal to the leading direction warns") {
    DataMatrices dm;
    dm.dictionary = build_monomial_dictionary(1, 1);
    dm.form = KbfForm::Explicit;
    dm.dt = 0.1;
    dm.m = 0;
    dm.omega.resize(2, 3);
    dm.omega << 10, 0, 0, 0, 1, 0;
    dm.X2.resize(2, 3);
    dm.X2 << 0, 0, 0, 0, 1, 0;
    const auto model = solve_kbf(dm, 1, true);
    REQUIRE(model.warnings.size() == 1);
    CHECK(model.warnings[0].find("linear consistency") != std::string::npos);
}

TEST_CASE("tiny singular values are reported as ill-conditioned") {
    DataMatrices dm;
    dm.dictionary = build_monomial_dictionary(1, 1);
    dm.form = KbfForm::Explicit;
    dm.dt = 0.1;
    dm.m = 0;
    dm.omega.resize(2, 4);
    dm.omega << 1, 1, 1, 1, 1, 1, 1, 1;  // rank one
    dm.X2 = dm.omega;
    CHECK_THROWS_AS(solve_kbf(dm, 2, false), IllConditionedError);
    CHECK_NOTHROW(solve_kbf(dm, 1, false));
}

TEST_CASE("eigen analysis of simple matrices") {
    MatrixXd A(3, 3);
    A << 1, 0, 0, 0, 0.9, 0, 0, 0, 0.5;
    const auto m = eigen_analysis(manual_model(A, 0.1));
    CHECK(m.eigenvalues_continuous[0].real() == doctest::Approx(0.0));
    CHECK(m.eigenvalues_continuous[1].real() == doctest::Approx(std::log(0.9) / 0.1));
    CHECK(m.eigenvalues_continuous[2].real() == doctest::Approx(std::log(0.5) / 0.1));

    const auto id = eigen_analysis(manual_model(MatrixXd::Identity(4, 4)));
    CHECK(id.eigenvalues_continuous.cwiseAbs().maxCoeff() <= 1e-14);

    MatrixXd J(3, 3);
    J << 1, 0, 0, 0, 0.5, 1, 0, 0, 0.5;  // Jordan block
    CHECK_THROWS_AS(eigen_analysis(manual_model(J)), NonDiagonalizableError);
}

TEST_CASE("left eigenvectors satisfy the eigen relation") {
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 5; ++trial) {
        const auto t = random_bilinear(4, 1, rng);
        const auto ds = bilinear_dataset(t, 4, 40, KbfForm::Explicit, rng);
        const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(4, 1), KbfForm::Explicit);
        const auto m = eigen_analysis(solve_kbf(dm, dm.omega.rows(), false));
        const MatrixXcd Ac = m.A.cast<std::complex<double>>();
        const MatrixXcd lhs = m.W.adjoint() * Ac - m.eigenvalues_discrete.asDiagonal() * m.W.adjoint();
        CHECK(lhs.norm() / m.A.norm() <= 1e-8);
        for (Index i = 0; i < m.eigenvalues_discrete.size(); ++i)
            CHECK(std::abs(std::exp(m.eigenvalues_continuous[i] * m.dt) - m.eigenvalues_discrete[i]) <= 1e-12);
    }
}

TEST_CASE("identified eigenfunctions evolve exponentially along trajectories") {
    // x1' = mu x1, x2' = lam (x2 - x1^2) keeps span{1, x1, x2, x1^2} invariant, with
    // eigenvalues 0, mu, lam and 2 mu.
    const double mu = -0.5, lam = -2.0, dt = 0.01;
    auto flow = [&](double x1, double x2, double t) {
        const double c = lam / (lam - 2.0 * mu);
        const double e1 = x1 * std::exp(mu * t);
        const double e2 = (x2 - c * x1 * x1) * std::exp(lam * t) + c * e1 * e1;
        return std::pair{e1, e2};
    };
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    TrajectoryDataset ds;
    ds.dt = dt;
    ds.n_states = 2;
    ds.n_inputs = 0;
    for (int s = 0; s < 12; ++s) {
        TrajectorySegment seg;
        seg.times = VectorXd::LinSpaced(60, 0.0, dt * 59);
        seg.states.resize(2, 60);
        seg.inputs.resize(0, 60);
        const double a = u(rng), b = u(rng);
        for (Index k = 0; k < 60; ++k) {
            const auto [x1, x2] = flow(a, b, dt * static_cast<double>(k));
            seg.states(0, k) = x1;
            seg.states(1, k) = x2;
        }
        ds.segments.push_back(std::move(seg));
    }
    const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(2, 2), KbfForm::Explicit);
    const auto model = eigen_analysis(solve_kbf(dm, dm.q(), false));
    const auto& dict = model.dictionary;
    for (double target : {mu, lam, 2.0 * mu}) {
        Index best = 0;
        for (Index i = 1; i < model.eigenvalues_continuous.size(); ++i)
            if (std::abs(model.eigenvalues_continuous[i] - target) <
                std::abs(model.eigenvalues_continuous[best] - target))
                best = i;
        CHECK(std::abs(model.eigenvalues_continuous[best] - target) <= 1e-6);
        const Eigen::RowVectorXcd phi = model.eigenfunction_coefficients.row(best);
        const auto factor = model.eigenvalues_discrete[best];
        double worst = 0.0;
        for (int k = 0; k < 40; ++k) {
            const auto [x1, x2] = flow(0.7, -0.4, dt * k);
            const auto [y1, y2] = flow(0.7, -0.4, dt * (k + 1));
            const auto now = (phi * lift(dict, Eigen::Vector2d(x1, x2)).cast<std::complex<double>>())(0);
            const auto next = (phi * lift(dict, Eigen::Vector2d(y1, y2)).cast<std::complex<double>>())(0);
            worst = std::max(worst, std::abs(next - factor * now) / std::max(std::abs(next), 1e-12));
        }
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("canonical transform of a rotation pair gives one real block") {
    MatrixXd blk(2, 2);
    blk << 0.8, 0.1, -0.1, 0.8;
    MatrixXd T(2, 2);
    T << 1.0, 0.4, -0.3, 2.0;
    const auto c = canonical_transform(manual_model(T * blk * T.inverse()));
    CHECK((c.A - blk).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(c.canonical);
}

TEST_CASE("canonical transform keeps a real diagonal matrix up to permutation") {
    const VectorXd d = (VectorXd(3) << 0.3, 0.9, 0.6).finished();
    const auto c = canonical_transform(manual_model(MatrixXd(d.asDiagonal())));
    CHECK((c.A - MatrixXd(c.A.diagonal().asDiagonal())).norm() == 0.0);
    std::vector<double> got(c.A.diagonal().begin(), c.A.diagonal().end());
    std::sort(got.begin(), got.end());
    CHECK(got == std::vector<double>{0.3, 0.6, 0.9});
}

TEST_CASE("canonical coordinates simulate the same states") {
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 5; ++trial) {
        const auto t = random_bilinear(4, 1, rng);
        const auto ds = bilinear_dataset(t, 4, 40, KbfForm::Explicit, rng);
        const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(4, 1), KbfForm::Explicit);
        const auto orig = solve_kbf(dm, dm.omega.rows(), false);
        const auto canon = canonical_transform(orig);
        VectorXd z1 = initial_lift(orig, ds.segments[0].states.col(0));
        VectorXd z2 = initial_lift(canon, ds.segments[0].states.col(0));
        double worst = 0.0;
        for (Index k = 1; k <= 50 && k < 40; ++k) {
            const VectorXd u = ds.segments[0].inputs.col(k);
            z1 = step_explicit(orig, z1, u);
            z2 = step_explicit(canon, z2, u);
            worst = std::max(worst, (reconstruct_state(orig, z1) - reconstruct_state(canon, z2)).norm());
        }
        CHECK(worst <= 1e-9);
        // Block structure: nothing outside the 2x2 diagonal blocks.
        for (Index i = 0; i < canon.A.rows(); ++i)
            for (Index j = 0; j < canon.A.cols(); ++j)
                if (std::abs(i - j) > 1) CHECK(canon.A(i, j) == 0.0);
    }
}

TEST_CASE("repetition rule on a spectrum closed under addition") {
    for (Index k : {2, 3, 4, 6}) {
        CAPTURE(k);
        std::vector<std::complex<double>> gens;
        for (Index i = 0; i < k; ++i) gens.emplace_back(-1.0 - 0.13 * static_cast<double>(i) - 0.005 * static_cast<double>(i * i), 0.3 * static_cast<double>(i % 2));
        std::vector<std::complex<double>> all = gens;
        for (Index i = 0; i < k; ++i)
            for (Index j = i; j < k; ++j) all.push_back(gens[i] + gens[j]);
        std::sort(all.begin() + k, all.end(), [](auto a, auto b) { return a.real() > b.real(); });
        const VectorXcd spec = Eigen::Map<VectorXcd>(all.data(), static_cast<Index>(all.size()));
        const auto s = truncation_from_spectrum(spec);
        CHECK(s.r == static_cast<std::size_t>(k));
        CHECK(!s.flagged);
    }
}

TEST_CASE("repetition rule without sums keeps everything") {
    VectorXcd spec(8);
    for (Index i = 0; i < 8; ++i) spec[i] = {-std::pow(3.1, static_cast<double>(i)), 0.0};
    const auto s = truncation_from_spectrum(spec);
    CHECK(s.r == 8);
    CHECK(s.repeat_index == 0);
    const auto short_s = truncation_from_spectrum(spec.head(3));
    CHECK(short_s.flagged);
}

TEST_CASE("model JSON round trip keeps every matrix") {
    std::mt19937_64 rng(47);
    const auto t = random_bilinear(3, 2, rng);
    const auto ds = bilinear_dataset(t, 4, 30, KbfForm::Implicit, rng);
    const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(3, 2), KbfForm::Implicit);
    for (auto reg : {Regression::Snapshot, Regression::Increment}) {
        const auto model = eigen_analysis(solve_kbf(dm, 15, true, reg));
        const nlohmann::json j = model;
        const auto back = nlohmann::json::parse(j.dump()).get<KbfModel>();
        CHECK(back.form == model.form);
        CHECK(back.regression == model.regression);
        CHECK(back.r == model.r);
        CHECK(back.A == model.A);
        CHECK(back.B[1] == model.B[1]);
        CHECK(back.P == model.P);
        CHECK(back.dictionary == model.dictionary);
        CHECK(back.eigenvalues_continuous == model.eigenvalues_continuous);
        CHECK(back.residual == model.residual);
    }
}

TEST_CASE("oracle identification runs within a second at q = 20") {
    std::mt19937_64 rng(53);
    const auto t = random_bilinear(19, 2, rng);
    const auto ds = bilinear_dataset(t, 10, 501, KbfForm::Explicit, rng);
    const auto t0 = std::chrono::steady_clock::now();
    const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(19, 1), KbfForm::Explicit);
    const auto model = solve_kbf(dm, dm.omega.rows(), false);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(dm.columns() == 5000);
    CHECK(secs <= 1.0);
    CHECK((model.A - lifted(t.A, true)).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("wide data matrices match a direct SVD and least-squares solve") {
    std::mt19937_64 rng(59);
    const auto t = random_bilinear(3, 2, rng);
    const auto ds = bilinear_dataset(t, 8, 60, KbfForm::Explicit, rng);
    const auto dm = assemble_data_matrices(ds, build_monomial_dictionary(3, 2), KbfForm::Explicit);
    REQUIRE(dm.columns() > static_cast<std::size_t>(dm.omega.rows() + dm.X2.rows()));
    const VectorXd direct = Eigen::JacobiSVD<MatrixXd>(dm.omega).singularValues();
    const VectorXd s = omega_singular_values(dm);
    CHECK((s - direct).norm() <= 1e-10 * direct[0]);

    // Full-rank snapshot fit against X2 Omega^+ from a complete orthogonal decomposition.
    const MatrixXd G = dm.omega.transpose().completeOrthogonalDecomposition().solve(dm.X2.transpose()).transpose();
    const auto model = solve_kbf(dm, dm.omega.rows(), false);
    const auto q = static_cast<Index>(dm.q());
    CHECK((model.A - G.leftCols(q)).cwiseAbs().maxCoeff() <= 1e-8);
    for (Index i = 0; i < 2; ++i)
        CHECK((model.B[static_cast<std::size_t>(i)] - G.middleCols(q * (i + 1), q)).cwiseAbs().maxCoeff() <= 1e-8);
}
