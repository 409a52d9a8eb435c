#include "mkbf/microgrid.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <thread>

#include <Eigen/LU>
#include <nlohmann/json.hpp>

#include "mkbf/errors.hpp"

namespace mkbf {

using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

std::vector<std::size_t> SystemConfig::port_nodes() const {
    std::vector<std::size_t> out = network.P1;
    out.insert(out.end(), network.P2.begin(), network.P2.end());
    return out;
}

void SystemConfig::validate() const {
    vf.validate();
    pq.validate();
    if (!(dt > 0.0)) throw InvalidArgument("simulation step must be positive");
    if (network.P1.empty()) throw InvalidArgument("at least one grid-forming node is required");
    std::map<std::size_t, PortTag> tag;
    for (auto v : network.P1) tag[v] = PortTag::P1;
    for (std::size_t k = 0; k < network.P2.size(); ++k) tag[network.P2[k]] = network.P2_tags[k];
    std::set<std::size_t> pq_nodes, load_nodes;
    for (const auto& u : pq_units) {
        auto it = tag.find(u.node);
        if (it == tag.end() || (it->second != PortTag::P2a && it->second != PortTag::P2b))
            throw InvalidArgument("PQ unit at node " + std::to_string(u.node) +
                                  " must sit on a P2a or P2b port");
        if (!pq_nodes.insert(u.node).second)
            throw InvalidArgument("two PQ units share node " + std::to_string(u.node));
    }
    for (const auto& l : loads) {
        auto it = tag.find(l.node);
        if (it == tag.end() || (it->second != PortTag::P2b && it->second != PortTag::P2c))
            throw InvalidArgument("load at node " + std::to_string(l.node) +
                                  " must sit on a P2b or P2c port");
        if (!load_nodes.insert(l.node).second)
            throw InvalidArgument("two loads share node " + std::to_string(l.node));
    }
    for (std::size_t k = 0; k < network.P2.size(); ++k) {
        const auto v = network.P2[k];
        const bool has_pq = pq_nodes.count(v) > 0, has_load = load_nodes.count(v) > 0;
        const PortTag expect = has_pq ? (has_load ? PortTag::P2b : PortTag::P2a) : PortTag::P2c;
        if (network.P2_tags[k] != expect || (!has_pq && !has_load))
            throw InvalidArgument("port tag of node " + std::to_string(v) +
                                  " does not match its attached devices");
    }
}

namespace {

Complex complex_from(const nlohmann::json& j) {
    if (j.is_array()) return {j.at(0).get<double>(), j.at(1).get<double>()};
    return {j.at("p").get<double>(), j.at("q").get<double>()};
}

nlohmann::json complex_pq(Complex c) { return {{"p", c.real()}, {"q", c.imag()}}; }

}  // namespace

SystemConfig system_from_json(const nlohmann::json& j) {
    SystemConfig sys;
    sys.network = network_from_json(j.at("network"));
    sys.vf = j.at("vf").get<VfParams>();
    sys.pq = j.at("pq").get<PqParams>();
    for (const auto& u : j.at("pq_units"))
        sys.pq_units.push_back({u.at("node").get<std::size_t>(), complex_from(u.at("setpoint"))});
    for (const auto& l : j.at("loads"))
        sys.loads.push_back({l.at("node").get<std::size_t>(), complex_from(l.at("power"))});
    sys.dt = j.value("dt", 1e-3);
    if (j.contains("scenario")) {
        const auto& s = j.at("scenario");
        sys.scenario.duration = s.value("duration", sys.scenario.duration);
        sys.scenario.first_event = s.value("first_event", sys.scenario.first_event);
        sys.scenario.events = s.value("events", sys.scenario.events);
    }
    sys.validate();
    return sys;
}

nlohmann::json system_to_json(const SystemConfig& sys) {
    nlohmann::json j;
    j["network"] = network_to_json(sys.network);
    j["vf"] = sys.vf;
    j["pq"] = sys.pq;
    auto units = nlohmann::json::array();
    for (const auto& u : sys.pq_units) units.push_back({{"node", u.node}, {"setpoint", complex_pq(u.S_ref)}});
    j["pq_units"] = units;
    auto loads = nlohmann::json::array();
    for (const auto& l : sys.loads) loads.push_back({{"node", l.node}, {"power", complex_pq(l.S)}});
    j["loads"] = loads;
    j["dt"] = sys.dt;
    j["scenario"] = {{"duration", sys.scenario.duration},
                     {"first_event", sys.scenario.first_event},
                     {"events", sys.scenario.events}};
    return j;
}

SystemConfig load_system(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFileError(path);
    return system_from_json(nlohmann::json::parse(in));
}

OperatingPoint nominal_operating_point(const SystemConfig& sys) {
    OperatingPoint op;
    for (const auto& l : sys.loads) op.load_S.push_back(l.S);
    for (const auto& u : sys.pq_units) op.pq_S.push_back(u.S_ref);
    return op;
}

namespace {

// Index bookkeeping and residual evaluation for the semi-explicit DAE.
class GridModel {
public:
    explicit GridModel(const SystemConfig& sys) : sys_(sys) {
        sys.validate();
        ports_ = sys.port_nodes();
        n1_ = static_cast<Index>(sys.network.P1.size());
        n2_ = static_cast<Index>(sys.network.P2.size());
        std::map<std::size_t, Index> pos;
        for (std::size_t k = 0; k < ports_.size(); ++k) pos[ports_[k]] = static_cast<Index>(k);

        // Kron-reduced admittance in port order.
        const MatrixXcd Yfull = kron_reduce(sys.network.network.admittance(),
                                            sys.network.network.zero_injection_nodes);
        std::set<std::size_t> zero(sys.network.network.zero_injection_nodes.begin(),
                                   sys.network.network.zero_injection_nodes.end());
        std::vector<Index> red_of_port(ports_.size());
        {
            std::map<std::size_t, Index> red;
            Index k = 0;
            for (std::size_t v = 0; v < sys.network.network.n_nodes; ++v)
                if (!zero.count(v)) red[v] = k++;
            for (std::size_t k2 = 0; k2 < ports_.size(); ++k2) red_of_port[k2] = red.at(ports_[k2]);
        }
        const Index np = static_cast<Index>(ports_.size());
        if (Yfull.rows() != np)
            throw InvalidArgument("every non-port node must be a zero-injection node");
        Y_.resize(np, np);
        for (Index a = 0; a < np; ++a)
            for (Index b = 0; b < np; ++b) Y_(a, b) = Yfull(red_of_port[static_cast<std::size_t>(a)], red_of_port[static_cast<std::size_t>(b)]);

        for (const auto& u : sys.pq_units) pq_port_.push_back(pos.at(u.node) - n1_);
        for (const auto& l : sys.loads) load_port_.push_back(pos.at(l.node) - n1_);
        n_der_ = n1_ + static_cast<Index>(sys.pq_units.size());
        n_x_ = kDerStates * n_der_;
        n_z_ = n_x_ + 2 * n2_;
    }

    Index n1() const { return n1_; }
    Index n2() const { return n2_; }
    Index n_der() const { return n_der_; }
    Index n_x() const { return n_x_; }
    Index n_z() const { return n_z_; }
    const MatrixXcd& Y() const { return Y_; }
    const std::vector<std::size_t>& ports() const { return ports_; }
    const std::vector<Index>& pq_port() const { return pq_port_; }
    const std::vector<Index>& load_port() const { return load_port_; }

    VectorXd pack(const GridState& s) const {
        VectorXd z(n_z_);
        for (Index d = 0; d < n_der_; ++d) z.segment<kDerStates>(kDerStates * d) = s.ders[static_cast<std::size_t>(d)];
        for (Index n = 0; n < n2_; ++n) {
            z[n_x_ + 2 * n] = s.V_P2[n].real();
            z[n_x_ + 2 * n + 1] = s.V_P2[n].imag();
        }
        return z;
    }

    GridState unpack(const VectorXd& z) const {
        GridState s;
        for (Index d = 0; d < n_der_; ++d) s.ders.emplace_back(z.segment<kDerStates>(kDerStates * d));
        s.V_P2.resize(n2_);
        for (Index n = 0; n < n2_; ++n) s.V_P2[n] = Complex(z[n_x_ + 2 * n], z[n_x_ + 2 * n + 1]);
        return s;
    }

    VectorXcd port_voltages(const VectorXd& z) const {
        VectorXcd V(n1_ + n2_);
        for (Index k = 0; k < n1_; ++k) V[k] = Complex(z[kDerStates * k + 6], z[kDerStates * k + 7]);
        for (Index n = 0; n < n2_; ++n) V[n1_ + n] = Complex(z[n_x_ + 2 * n], z[n_x_ + 2 * n + 1]);
        return V;
    }

    // Current the P2 devices inject given DER states and voltages.
    VectorXcd device_injection(const VectorXd& z, const VectorXcd& V,
                               const std::vector<Complex>& load_S) const {
        VectorXcd inj = VectorXcd::Zero(n2_);
        for (std::size_t u = 0; u < pq_port_.size(); ++u) {
            const Index base = kDerStates * (n1_ + static_cast<Index>(u));
            inj[pq_port_[u]] += Complex(z[base + 8], z[base + 9]);
        }
        for (std::size_t l = 0; l < load_port_.size(); ++l) {
            const Complex v = V[n1_ + load_port_[l]];
            inj[load_port_[l]] += std::conj(-load_S[l] / v);
        }
        return inj;
    }

    // Backward-Euler residual: ODE rows X - Xprev - dt F and network rows (Y V)_P2 - I_dev.
    void residual(const VectorXd& z, const VectorXd& xprev, double dt,
                  const std::vector<Complex>& load_S, const std::vector<Complex>& pq_S,
                  VectorXd& r) const {
        r.resize(n_z_);
        const VectorXcd V = port_voltages(z);
        const VectorXcd I = Y_ * V;
        for (Index k = 0; k < n1_; ++k) {
            const DerVector x = z.segment<kDerStates>(kDerStates * k);
            const Eigen::Vector2d u(I[k].real(), I[k].imag());
            r.segment<kDerStates>(kDerStates * k) =
                x - xprev.segment<kDerStates>(kDerStates * k) - dt * vf_derivative(x, u, sys_.vf);
        }
        for (std::size_t p = 0; p < pq_port_.size(); ++p) {
            const Index base = kDerStates * (n1_ + static_cast<Index>(p));
            const DerVector x = z.segment<kDerStates>(base);
            const Complex v = V[n1_ + pq_port_[p]];
            const Eigen::Vector4d u(v.real(), v.imag(), pq_S[p].real(), pq_S[p].imag());
            r.segment<kDerStates>(base) =
                x - xprev.segment<kDerStates>(base) - dt * pq_derivative(x, u, sys_.pq);
        }
        const VectorXcd inj = device_injection(z, V, load_S);
        for (Index n = 0; n < n2_; ++n) {
            const Complex mismatch = I[n1_ + n] - inj[n];
            r[n_x_ + 2 * n] = mismatch.real();
            r[n_x_ + 2 * n + 1] = mismatch.imag();
        }
    }

private:
    const SystemConfig& sys_;
    std::vector<std::size_t> ports_;
    Index n1_ = 0, n2_ = 0, n_der_ = 0, n_x_ = 0, n_z_ = 0;
    MatrixXcd Y_;
    std::vector<Index> pq_port_, load_port_;
};

// Newton with a forward-difference Jacobian refreshed every iteration.
template <typename Residual>
bool newton(VectorXd& z, Residual&& F, double tol, std::size_t max_iter, std::size_t& iterations,
            double& final_norm) {
    const Index n = z.size();
    VectorXd r, rp;
    MatrixXd J(n, n);
    F(z, r);
    for (iterations = 0; iterations < max_iter; ++iterations) {
        final_norm = r.cwiseAbs().maxCoeff();
        if (!std::isfinite(final_norm)) return false;
        if (final_norm <= tol) return true;
        for (Index j = 0; j < n; ++j) {
            const double h = 1e-7 * std::max(1.0, std::abs(z[j]));
            const double keep = z[j];
            z[j] = keep + h;
            F(z, rp);
            J.col(j) = (rp - r) / h;
            z[j] = keep;
        }
        z -= J.partialPivLu().solve(r);
        F(z, r);
    }
    final_norm = r.cwiseAbs().maxCoeff();
    return std::isfinite(final_norm) && final_norm <= tol;
}

constexpr double kNewtonTolerance = 1e-11;

}  // namespace

GridState initial_state(const SystemConfig& sys, const OperatingPoint& op) {
    const GridModel model(sys);
    if (op.load_S.size() != sys.loads.size() || op.pq_S.size() != sys.pq_units.size())
        throw InvalidArgument("operating point does not match the system devices");
    const Index n1 = model.n1(), n2 = model.n2();
    const MatrixXcd& Y = model.Y();
    VectorXcd V1 = VectorXcd::Constant(n1, Complex(sys.vf.v_ref, 0.0));

    // Constant-power flow for the P2 voltages.
    VectorXcd S_inj = VectorXcd::Zero(n2);
    for (std::size_t u = 0; u < sys.pq_units.size(); ++u) S_inj[model.pq_port()[u]] += op.pq_S[u];
    for (std::size_t l = 0; l < sys.loads.size(); ++l) S_inj[model.load_port()[l]] -= op.load_S[l];
    VectorXd v(2 * n2);
    for (Index n = 0; n < n2; ++n) {
        v[2 * n] = sys.vf.v_ref;
        v[2 * n + 1] = 0.0;
    }
    auto flow = [&](const VectorXd& w, VectorXd& r) {
        VectorXcd V(n1 + n2);
        V.head(n1) = V1;
        for (Index n = 0; n < n2; ++n) V[n1 + n] = Complex(w[2 * n], w[2 * n + 1]);
        const VectorXcd I = Y * V;
        r.resize(2 * n2);
        for (Index n = 0; n < n2; ++n) {
            const Complex mis = I[n1 + n] - std::conj(S_inj[n] / V[n1 + n]);
            r[2 * n] = mis.real();
            r[2 * n + 1] = mis.imag();
        }
    };
    std::size_t it = 0;
    double norm = 0.0;
    if (n2 > 0 && !newton(v, flow, 1e-12, kMaxNewtonIterations, it, norm))
        throw InitializationError("power flow did not converge (residual " + std::to_string(norm) + ")");

    VectorXcd V(n1 + n2);
    V.head(n1) = V1;
    for (Index n = 0; n < n2; ++n) V[n1 + n] = Complex(v[2 * n], v[2 * n + 1]);
    const VectorXcd I = Y * V;

    GridState s;
    for (Index k = 0; k < n1; ++k) s.ders.push_back(vf_equilibrium(V[k], I[k], sys.vf));
    for (std::size_t u = 0; u < sys.pq_units.size(); ++u)
        s.ders.push_back(pq_equilibrium(V[n1 + model.pq_port()[u]], op.pq_S[u], sys.pq));
    s.V_P2 = V.tail(n2);

    // The equilibrium must be a fixed point of the DAE.
    const VectorXd z = model.pack(s);
    VectorXd r;
    model.residual(z, z, 1.0, op.load_S, op.pq_S, r);
    const double res = r.cwiseAbs().maxCoeff();
    if (!(res <= 1e-9))
        throw InitializationError("inconsistent initial condition, residual " + std::to_string(res));
    return s;
}

GridState rotate_state(const GridState& s, double theta) {
    GridState out;
    for (const auto& x : s.ders) out.ders.push_back(shift_phase_state(x, theta));
    out.V_P2 = s.V_P2 * std::polar(1.0, theta);
    return out;
}

SimulationResult simulate_microgrid(const SystemConfig& sys, const Scenario& sc) {
    return simulate_microgrid(sys, sc, initial_state(sys, sc.initial));
}

SimulationResult simulate_microgrid(const SystemConfig& sys, const Scenario& sc,
                                    const GridState& init) {
    const auto start = std::chrono::steady_clock::now();
    if (!(sc.dt > 0.0) || !(sc.duration > 0.0))
        throw InvalidArgument("scenario needs positive duration and step");
    for (const auto& e : sc.events)
        if (e.time < 0.0 || e.time > sc.duration)
            throw InvalidArgument("event time outside the scenario horizon");

    const GridModel model(sys);
    const auto steps = static_cast<Index>(std::llround(sc.duration / sc.dt));
    const Index N = steps + 1;
    const Index np = model.n1() + model.n2();

    SimulationResult res;
    res.port_nodes = model.ports();
    res.t = VectorXd::LinSpaced(N, 0.0, static_cast<double>(steps) * sc.dt);
    res.V.resize(np, N);
    res.I.resize(np, N);
    res.load_S.resize(static_cast<Index>(sys.loads.size()), N);
    res.pq_S.resize(static_cast<Index>(sys.pq_units.size()), N);
    for (Index d = 0; d < model.n_der(); ++d) {
        res.der_states.emplace_back(kDerStates, N);
        res.der_inputs.emplace_back(d < model.n1() ? kVfInputs : kPqInputs, N);
        res.der_outputs.emplace_back(2, N);
    }

    auto events = sc.events;
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.time < b.time; });
    OperatingPoint op = sc.initial;
    std::size_t next_event = 0;
    auto apply_events = [&](double t) {
        while (next_event < events.size() && events[next_event].time <= t + 1e-9 * sc.dt) {
            const auto& e = events[next_event++];
            auto& list = e.target == Event::Target::Load ? op.load_S : op.pq_S;
            if (e.index >= list.size()) throw InvalidArgument("event targets an unknown device");
            list[e.index] = e.value;
        }
    };

    auto record = [&](Index k, const VectorXd& z) {
        const VectorXcd V = model.port_voltages(z);
        const VectorXcd I = model.Y() * V;
        res.V.col(k) = V;
        res.I.col(k) = I;
        for (std::size_t l = 0; l < op.load_S.size(); ++l) res.load_S(static_cast<Index>(l), k) = op.load_S[l];
        for (std::size_t u = 0; u < op.pq_S.size(); ++u) res.pq_S(static_cast<Index>(u), k) = op.pq_S[u];
        for (Index d = 0; d < model.n_der(); ++d) {
            const auto ds = static_cast<std::size_t>(d);
            res.der_states[ds].col(k) = z.segment<kDerStates>(kDerStates * d);
            if (d < model.n1()) {
                res.der_inputs[ds].col(k) << I[d].real(), I[d].imag();
                res.der_outputs[ds].col(k) << V[d].real(), V[d].imag();
            } else {
                const auto u = static_cast<std::size_t>(d - model.n1());
                const Complex v = V[model.n1() + model.pq_port()[u]];
                res.der_inputs[ds].col(k) << v.real(), v.imag(), op.pq_S[u].real(), op.pq_S[u].imag();
                res.der_outputs[ds].col(k) << z[kDerStates * d + 8], z[kDerStates * d + 9];
            }
        }
        // Algebraic consistency of the recorded sample.
        const VectorXcd inj = model.device_injection(z, V, op.load_S);
        const double alg = (I.tail(model.n2()) - inj).cwiseAbs().maxCoeff();
        res.max_algebraic_residual = std::max(res.max_algebraic_residual, model.n2() ? alg : 0.0);
    };

    apply_events(0.0);
    VectorXd z = model.pack(init);
    record(0, z);
    VectorXd xprev;
    for (Index k = 1; k < N; ++k) {
        const double t = res.t[k];
        apply_events(t);
        xprev = z;
        auto F = [&](const VectorXd& w, VectorXd& r) {
            model.residual(w, xprev, sc.dt, op.load_S, op.pq_S, r);
        };
        std::size_t it = 0;
        double norm = 0.0;
        if (!newton(z, F, kNewtonTolerance, kMaxNewtonIterations, it, norm))
            throw StepFailureError(t, "residual " + std::to_string(norm) + " after " +
                                          std::to_string(it) + " iterations");
        res.newton_iterations += it;
        for (Index d = 0; d < model.n_der(); ++d) z[kDerStates * d + 1] = wrap_angle(z[kDerStates * d + 1]);
        record(k, z);
    }
    if (res.max_algebraic_residual > kAlgebraicTolerance)
        throw StepFailureError(sc.duration, "network residual above tolerance");
    res.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

std::size_t thread_budget(std::size_t requested) {
    std::size_t n = requested;
    if (n == 0) {
        if (const char* env = std::getenv("KOOPMAN_GRID_THREADS")) {
            try {
                n = static_cast<std::size_t>(std::stoul(env));
            } catch (const std::exception&) {
                throw InvalidArgument("KOOPMAN_GRID_THREADS must be a positive integer");
            }
        }
    }
    if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

Scenario random_scenario(const SystemConfig& sys, const GenerationOptions& opt, std::size_t index) {
    if (!(opt.range > 0.0 && opt.range <= 1.0))
        throw InvalidArgument("disturbance range must lie in (0, 1]");
    std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                      static_cast<std::uint32_t>(index), 0x6b6266u};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> factor(-opt.range, opt.range);

    const OperatingPoint nominal = nominal_operating_point(sys);
    auto draw = [&](const OperatingPoint& base) {
        OperatingPoint op = base;
        if (opt.vary_loads)
            for (auto& s : op.load_S) s = s * (1.0 + factor(rng));
        if (opt.vary_pq)
            for (auto& s : op.pq_S) s = s * (1.0 + factor(rng));
        return op;
    };

    Scenario sc;
    sc.dt = sys.dt;
    sc.duration = opt.duration > 0.0 ? opt.duration : sys.scenario.duration;
    const std::size_t n_events = opt.events > 0 ? opt.events : sys.scenario.events;
    sc.initial = draw(nominal);
    // Events are spread evenly after the first one; each redraws every varied setpoint.
    const double first = std::min(sys.scenario.first_event, sc.duration);
    const double spacing = n_events > 1 ? (sc.duration - first) / static_cast<double>(n_events) : 0.0;
    for (std::size_t e = 0; e < n_events; ++e) {
        const double t = first + spacing * static_cast<double>(e);
        const OperatingPoint next = draw(nominal);
        if (opt.vary_loads)
            for (std::size_t l = 0; l < next.load_S.size(); ++l)
                sc.events.push_back({t, Event::Target::Load, l, next.load_S[l]});
        if (opt.vary_pq)
            for (std::size_t u = 0; u < next.pq_S.size(); ++u)
                sc.events.push_back({t, Event::Target::Pq, u, next.pq_S[u]});
    }
    return sc;
}

TrainingData generate_training_data(const SystemConfig& sys, const GenerationOptions& opt) {
    if (opt.n_scenarios == 0) throw InvalidArgument("at least one scenario is required");
    if (opt.augmentation < 0.0) throw InvalidArgument("augmentation must be non-negative");
    TrainingData data;
    for (std::size_t i = 0; i < opt.n_scenarios; ++i) data.scenarios.push_back(random_scenario(sys, opt, i));
    data.results.resize(opt.n_scenarios);

    const std::size_t workers = std::min(thread_budget(opt.threads), opt.n_scenarios);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(opt.n_scenarios);
    auto work = [&] {
        for (std::size_t i = next++; i < opt.n_scenarios; i = next++) {
            try {
                data.results[i] = simulate_microgrid(sys, data.scenarios[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    const std::size_t n1 = sys.network.P1.size();
    data.vf.dt = data.pq.dt = sys.dt;
    data.vf.n_states = data.pq.n_states = kDerStates;
    data.vf.n_inputs = kVfInputs;
    data.pq.n_inputs = kPqInputs;
    for (std::size_t i = 0; i < opt.n_scenarios; ++i) {
        const auto& r = data.results[i];
        // Augmentation angles come from a stream separate from the scenario draw.
        std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(i), 0x617567u};
        std::mt19937_64 rng(seq);
        std::uniform_real_distribution<double> angle(-opt.augmentation, opt.augmentation);
        for (std::size_t d = 0; d < r.der_states.size(); ++d) {
            const bool is_vf = d < n1;
            const double extra = is_vf && opt.augmentation > 0.0 ? angle(rng) : 0.0;
            const double theta = -r.der_states[d](1, 0) + extra;
            TrajectorySegment seg;
            seg.times = r.t;
            seg.states.resize(kDerStates, r.t.size());
            seg.inputs.resize(r.der_inputs[d].rows(), r.t.size());
            for (Index k = 0; k < r.t.size(); ++k) {
                seg.states.col(k) = shift_phase_state(r.der_states[d].col(k), theta);
                seg.inputs.col(k) = r.der_inputs[d].col(k);
                seg.inputs.col(k).head<2>() = shift_phase(Eigen::Vector2d(r.der_inputs[d].col(k).head<2>()), theta);
            }
            seg.frame_angle = theta;
            (is_vf ? data.vf : data.pq).segments.push_back(std::move(seg));
        }
    }
    return data;
}

}  // namespace mkbf
