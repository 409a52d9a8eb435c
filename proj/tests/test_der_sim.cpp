#include <doctest.h>

#include <numbers>
#include <random>

#include "mkbf/errors.hpp"
#include "mkbf/microgrid.hpp"
#include "test_support.hpp"

using namespace mkbf;
using namespace testing;
using Eigen::MatrixXcd;

namespace {

SystemConfig canonical() { return load_system(MKBF_SOURCE_DIR "/config/canonical.json"); }

DerVector random_state(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    DerVector x;
    for (auto& v : x) v = u(rng);
    x[1] *= std::numbers::pi;
    return x;
}

// Central-difference Jacobian of F with respect to its argument.
template <class F>
MatrixXd fd_jacobian(F&& f, const VectorXd& at, double h) {
    const VectorXd f0 = f(at);
    MatrixXd J(f0.size(), at.size());
    for (Index i = 0; i < at.size(); ++i) {
        VectorXd p = at, m = at;
        p[i] += h;
        m[i] -= h;
        J.col(i) = (f(p) - f(m)) / (2.0 * h);
    }
    return J;
}

template <class F>
VectorXd newton_solve(F&& f, VectorXd x) {
    for (int it = 0; it < 50; ++it) {
        const VectorXd r = f(x);
        if (r.cwiseAbs().maxCoeff() <= 1e-13) break;
        x -= fd_jacobian(f, x, 1e-7).colPivHouseholderQr().solve(r);
    }
    return x;
}

// Independent steady state: P2 voltages from a Kron-reduced power flow with the Vf port held at
// v_ref, then all node voltages.
VectorXcd steady_voltages(const SystemConfig& sys, const OperatingPoint& op) {
    const auto& d = sys.network;
    const MatrixXcd Y = oracle_admittance(d.network);
    const auto ports = sys.port_nodes();
    std::vector<Index> internal;
    for (std::size_t v = 0; v < d.network.n_nodes; ++v)
        if (std::find(ports.begin(), ports.end(), v) == ports.end()) internal.push_back(static_cast<Index>(v));
    const auto np = static_cast<Index>(ports.size()), ni = static_cast<Index>(internal.size());
    MatrixXcd Ypp(np, np), Ypi(np, ni), Yip(ni, np), Yii(ni, ni);
    for (Index a = 0; a < np; ++a) {
        for (Index b = 0; b < np; ++b) Ypp(a, b) = Y(static_cast<Index>(ports[a]), static_cast<Index>(ports[b]));
        for (Index b = 0; b < ni; ++b) {
            Ypi(a, b) = Y(static_cast<Index>(ports[a]), internal[b]);
            Yip(b, a) = Y(internal[b], static_cast<Index>(ports[a]));
        }
    }
    for (Index a = 0; a < ni; ++a)
        for (Index b = 0; b < ni; ++b) Yii(a, b) = Y(internal[a], internal[b]);
    const MatrixXcd Yr = Ypp - Ypi * Yii.partialPivLu().solve(Yip);

    VectorXcd S = VectorXcd::Zero(np);
    auto port_of = [&](std::size_t node) {
        return static_cast<Index>(std::find(ports.begin(), ports.end(), node) - ports.begin());
    };
    for (std::size_t u = 0; u < sys.pq_units.size(); ++u) S[port_of(sys.pq_units[u].node)] += op.pq_S[u];
    for (std::size_t l = 0; l < sys.loads.size(); ++l) S[port_of(sys.loads[l].node)] -= op.load_S[l];
    const Index n1 = static_cast<Index>(d.P1.size());
    auto assemble = [&](const VectorXd& w) {
        VectorXcd V(np);
        for (Index k = 0; k < n1; ++k) V[k] = sys.vf.v_ref;
        for (Index k = n1; k < np; ++k) V[k] = Complex(w[2 * (k - n1)], w[2 * (k - n1) + 1]);
        return V;
    };
    auto mismatch = [&](const VectorXd& w) {
        const VectorXcd V = assemble(w);
        const VectorXcd I = Yr * V;
        VectorXd r(2 * (np - n1));
        for (Index k = n1; k < np; ++k) {
            const Complex m = I[k] - std::conj(S[k] / V[k]);
            r[2 * (k - n1)] = m.real();
            r[2 * (k - n1) + 1] = m.imag();
        }
        return r;
    };
    VectorXd w0(2 * (np - n1));
    for (Index k = 0; k < np - n1; ++k) {
        w0[2 * k] = 1.0;
        w0[2 * k + 1] = 0.0;
    }
    return assemble(newton_solve(mismatch, w0));
}

}  // namespace

TEST_CASE("Vf input fields have the published entries") {
    const auto sys = canonical();
    std::mt19937_64 rng(1);
    const auto g = vf_input_fields(random_state(rng), sys.vf);
    CHECK(g(6, 0) == 1.0 / sys.vf.C);
    CHECK(g(8, 0) == -sys.vf.kp_i / sys.vf.L);
    CHECK(g(7, 1) == 1.0 / sys.vf.C);
    CHECK(g(9, 1) == -sys.vf.kp_i / sys.vf.L);
    const DerVector x = random_state(rng);
    const auto gx = vf_input_fields(x, sys.vf);
    CHECK(gx(4, 0) == -std::cos(x[1]));
    CHECK(gx(5, 0) == std::sin(x[1]));
}

TEST_CASE("both DER models are control affine") {
    const auto sys = canonical();
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> uu(-1.5, 1.5);
    double worst_vf = 0.0, worst_pq = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const DerVector x = random_state(rng);
        const VectorXd u2 = (VectorXd(2) << uu(rng), uu(rng)).finished();
        const VectorXd u4 = (VectorXd(4) << uu(rng), uu(rng), uu(rng), uu(rng)).finished();
        const MatrixXd Jvf = fd_jacobian(
            [&](const VectorXd& u) -> VectorXd { return vf_derivative(x, Eigen::Vector2d(u), sys.vf); }, u2, 1e-5);
        const MatrixXd Jpq = fd_jacobian(
            [&](const VectorXd& u) -> VectorXd { return pq_derivative(x, Eigen::Vector4d(u), sys.pq); }, u4, 1e-5);
        worst_vf = std::max(worst_vf, (Jvf - vf_input_fields(x, sys.vf)).cwiseAbs().maxCoeff());
        worst_pq = std::max(worst_pq, (Jpq - pq_input_fields(x, sys.pq)).cwiseAbs().maxCoeff());
        const DerVector lin = vf_derivative(x, Eigen::Vector2d(u2), sys.vf) -
                              vf_derivative(x, Eigen::Vector2d::Zero(), sys.vf);
        CHECK((lin - vf_input_fields(x, sys.vf) * u2).cwiseAbs().maxCoeff() <= 1e-9);
    }
    CAPTURE(worst_vf);
    CAPTURE(worst_pq);
    CHECK(worst_vf <= 1e-6);
    CHECK(worst_pq <= 1e-6);
}

TEST_CASE("closed-form equilibria match an independent Newton solve") {
    const auto sys = canonical();
    const Complex V = std::polar(sys.vf.v_ref, -0.05), I(0.6, -0.2), S(0.3, 0.05);
    const DerVector xv = vf_equilibrium(V, I, sys.vf);
    const DerVector xp = pq_equilibrium(V, S, sys.pq);
    const Eigen::Vector2d uv(I.real(), I.imag());
    const Eigen::Vector4d up(V.real(), V.imag(), S.real(), S.imag());
    CHECK(vf_derivative(xv, uv, sys.vf).norm() <= 1e-9);
    CHECK(pq_derivative(xp, up, sys.pq).norm() <= 1e-9);

    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    VectorXd start_v = xv, start_p = xp;
    for (Index i = 0; i < 10; ++i) {
        start_v[i] += 1e-3 * n01(rng);
        start_p[i] += 1e-3 * n01(rng);
    }
    const VectorXd nv = newton_solve(
        [&](const VectorXd& x) -> VectorXd { return vf_derivative(DerVector(x), uv, sys.vf); }, start_v);
    const VectorXd np = newton_solve(
        [&](const VectorXd& x) -> VectorXd { return pq_derivative(DerVector(x), up, sys.pq); }, start_p);
    // The Vf equilibria form a family, so only the residual is compared; the PQ one is isolated.
    CHECK(vf_derivative(DerVector(nv), uv, sys.vf).norm() <= 1e-9);
    CHECK((np - xp).norm() <= 1e-8);
}

TEST_CASE("PQ PLL is frozen at zero node voltage") {
    const auto sys = canonical();
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        DerVector x = random_state(rng);
        const DerVector dx = pq_derivative(x, Eigen::Vector2d(Eigen::Vector2d::Zero()), sys.pq);
        CHECK(dx[0] == 0.0);
        x[0] = 0.0;
        CHECK(pq_derivative(x, Eigen::Vector2d(Eigen::Vector2d::Zero()), sys.pq)[1] == 0.0);
    }
}

TEST_CASE("phase shift examples") {
    const Eigen::Vector2d v(0.3, -1.1);
    CHECK(shift_phase(v, 0.0) == v);
    const auto q = shift_phase(Eigen::Vector2d(1.0, 0.0), std::numbers::pi / 2.0);
    CHECK(std::abs(q[0]) <= 1e-16);
    CHECK(q[1] == 1.0);
    CHECK((shift_phase(shift_phase(v, 0.4), -1.3) - shift_phase(v, -0.9)).norm() <= 1e-15);

    std::mt19937_64 rng(5);
    const DerVector x = random_state(rng);
    const DerVector y = shift_phase_state(shift_phase_state(x, 2.0), 2.5);
    const DerVector z = shift_phase_state(x, 4.5);
    CHECK((y - z).norm() <= 1e-14);
    CHECK(y[1] > -std::numbers::pi);
    CHECK(y[1] <= std::numbers::pi);
    CHECK(wrap_angle(std::numbers::pi) == std::numbers::pi);
    CHECK(wrap_angle(-std::numbers::pi) == std::numbers::pi);
}

TEST_CASE("without events the microgrid stays at its equilibrium") {
    const auto sys = canonical();
    Scenario sc;
    sc.dt = sys.dt;
    sc.duration = 1.0;
    sc.initial = nominal_operating_point(sys);
    const auto res = simulate_microgrid(sys, sc);
    for (const auto& X : res.der_states) {
        const MatrixXd dev = X.colwise() - X.col(0);
        CHECK(dev.cwiseAbs().maxCoeff() <= 1e-7);
    }
    CHECK(res.max_algebraic_residual <= kAlgebraicTolerance);
}

TEST_CASE("rotating the initial condition rotates the trajectory") {
    const auto sys = canonical();
    GenerationOptions opt;
    opt.seed = 9;
    const Scenario sc = random_scenario(sys, opt, 0);
    const auto init = initial_state(sys, sc.initial);
    const double theta = 0.7;
    const auto a = simulate_microgrid(sys, sc, init);
    const auto b = simulate_microgrid(sys, sc, rotate_state(init, theta));
    const Complex rot = std::polar(1.0, theta);
    CHECK((b.V - a.V * rot).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((b.I - a.I * rot).cwiseAbs().maxCoeff() <= 1e-8);
    double worst = 0.0;
    for (std::size_t d = 0; d < a.der_states.size(); ++d)
        for (Index k = 0; k < a.t.size(); ++k) {
            const DerVector expect = shift_phase_state(a.der_states[d].col(k), theta);
            DerVector diff = b.der_states[d].col(k) - expect;
            diff[1] = wrap_angle(diff[1]);
            worst = std::max(worst, diff.cwiseAbs().maxCoeff());
        }
    CAPTURE(worst);
    CHECK(worst <= 1e-8);
}

TEST_CASE("a load step settles at the independently computed equilibrium") {
    const auto sys = canonical();
    Scenario sc;
    sc.dt = sys.dt;
    sc.duration = 6.0;
    sc.initial = nominal_operating_point(sys);
    const Complex new_load = sc.initial.load_S[1] * 1.5;
    sc.events.push_back({0.05, Event::Target::Load, 1, new_load});
    const auto res = simulate_microgrid(sys, sc);

    OperatingPoint after = sc.initial;
    after.load_S[1] = new_load;
    // The Vf unit fixes the voltage magnitude only, so the oracle is aligned to its final angle.
    const Index last = res.t.size() - 1;
    const Complex align = res.V(0, last) / std::abs(res.V(0, last));
    const VectorXcd V = steady_voltages(sys, after) * align;
    CHECK((res.V.col(last) - V).cwiseAbs().maxCoeff() <= 1e-6);
    const VectorXcd I = res.I.col(last);
    const DerVector xv = vf_equilibrium(V[0], I[0], sys.vf);
    CHECK((res.der_states[0].col(last) - xv).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("steady-state power balance") {
    const auto sys = canonical();
    const auto s = initial_state(sys, nominal_operating_point(sys));
    Scenario sc;
    sc.dt = sys.dt;
    sc.duration = 0.01;
    sc.initial = nominal_operating_point(sys);
    const auto res = simulate_microgrid(sys, sc, s);
    const auto ports = res.port_nodes;
    const auto& net = sys.network.network;

    // All node voltages from the port voltages.
    const VectorXcd Vall = solve_ports(net, ports, {}, res.V.col(0), VectorXcd::Zero(0)).V;

    Complex generated = res.V(0, 0) * std::conj(res.I(0, 0));
    for (std::size_t u = 0; u < sys.pq_units.size(); ++u) {
        const auto port = static_cast<Index>(std::find(ports.begin(), ports.end(), sys.pq_units[u].node) - ports.begin());
        generated += res.V(port, 0) * std::conj(pq_output_current(s.ders[1 + u]));
    }
    Complex load(0.0, 0.0);
    for (const auto& l : sys.loads) load += l.S;
    Complex losses(0.0, 0.0);
    for (const auto& l : net.lines) {
        const Complex dv = Vall[static_cast<Index>(l.from)] - Vall[static_cast<Index>(l.to)];
        losses += std::norm(dv) * std::conj(l.admittance);
    }
    CHECK(std::abs(generated - load - losses) <= 1e-8);
}

TEST_CASE("training data preprocessing and determinism") {
    const auto sys = canonical();
    GenerationOptions opt;
    opt.n_scenarios = 3;
    opt.duration = 0.2;
    opt.seed = 17;
    opt.augmentation = 0.0;
    opt.threads = 1;
    const auto a = generate_training_data(sys, opt);
    CHECK(a.vf.segments.size() == 3);
    CHECK(a.pq.segments.size() == 9);
    for (const auto& seg : a.vf.segments) CHECK(seg.states(1, 0) == 0.0);
    for (const auto& seg : a.pq.segments) CHECK(seg.states(1, 0) == 0.0);

    opt.threads = 3;
    const auto b = generate_training_data(sys, opt);
    for (std::size_t i = 0; i < a.vf.segments.size(); ++i) {
        CHECK(a.vf.segments[i].states == b.vf.segments[i].states);
        CHECK(a.vf.segments[i].inputs == b.vf.segments[i].inputs);
    }
    for (std::size_t i = 0; i < a.pq.segments.size(); ++i) CHECK(a.pq.segments[i].states == b.pq.segments[i].states);

    opt.augmentation = 0.01;
    const auto c = generate_training_data(sys, opt);
    bool any_nonzero = false;
    for (const auto& seg : c.vf.segments) {
        CHECK(std::abs(seg.states(1, 0)) <= 0.01);
        any_nonzero = any_nonzero || seg.states(1, 0) != 0.0;
    }
    CHECK(any_nonzero);
    for (const auto& seg : c.pq.segments) CHECK(seg.states(1, 0) == 0.0);
}

TEST_CASE("invalid scenarios are rejected") {
    const auto sys = canonical();
    GenerationOptions opt;
    opt.range = 0.0;
    CHECK_THROWS_AS(random_scenario(sys, opt, 0), InvalidArgument);
    opt.range = 1.2;
    CHECK_THROWS_AS(random_scenario(sys, opt, 0), InvalidArgument);
    Scenario sc;
    sc.dt = sys.dt;
    sc.duration = 0.1;
    sc.initial = nominal_operating_point(sys);
    sc.events.push_back({0.5, Event::Target::Load, 0, Complex(0.1, 0.0)});
    CHECK_THROWS_AS(simulate_microgrid(sys, sc), InvalidArgument);
}
