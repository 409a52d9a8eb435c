#include "mkbf/predictor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "mkbf/errors.hpp"
#include "mkbf/kbf_runtime.hpp"

namespace mkbf {

using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

void PredictionPlan::validate() const {
    const auto n1 = network.P1.size(), n2 = network.P2.size();
    if (p1_models.size() != n1 || p1_initial.size() != n1)
        throw InvalidArgument("every P1 node needs a model and an initial state");
    if (p2_models.size() != n2 || p2_initial.size() != n2 || network.P2_tags.size() != n2)
        throw InvalidArgument("P2 model, state and tag lists must match the P2 node count");
    for (std::size_t k = 0; k < n1; ++k) {
        const auto& m = p1_models[k];
        if (!m || m->form != KbfForm::Implicit || m->m != kVfInputs)
            throw InvalidArgument("P1 node " + std::to_string(network.P1[k]) +
                                  " needs an implicit model with 2 inputs");
    }
    for (std::size_t k = 0; k < n2; ++k) {
        const bool has_pq = network.P2_tags[k] == PortTag::P2a || network.P2_tags[k] == PortTag::P2b;
        const auto& m = p2_models[k];
        if (has_pq && (!m || m->form != KbfForm::Explicit || m->m != kPqInputs))
            throw InvalidArgument("P2 node " + std::to_string(network.P2[k]) +
                                  " needs an explicit model with 4 inputs");
    }
    if (static_cast<std::size_t>(u0.size()) != n1 + n2)
        throw InvalidArgument("initial port vector has the wrong length");
    const auto cols = static_cast<Index>(steps + 1);
    if (load_schedule.rows() != static_cast<Index>(n2) || load_schedule.cols() < cols ||
        reference_schedule.rows() != static_cast<Index>(n2) || reference_schedule.cols() < cols)
        throw InvalidArgument("schedules are shorter than the prediction length");
    if (!(dt > 0.0)) throw InvalidArgument("prediction step must be positive");
}

namespace {

struct Unit {
    std::size_t node = 0;
    Index port = 0;  // position in [P1; P2]
    double theta0 = 0.0;
    KbfStepper stepper;
    VectorXd z;
    Eigen::MatrixXd* states = nullptr;
};

Eigen::Vector2d dq(Complex c) { return {c.real(), c.imag()}; }

}  // namespace

PredictionResult predict(const PredictionPlan& plan) {
    const auto start = std::chrono::steady_clock::now();
    plan.validate();
    const auto& net = plan.network;
    const auto n1 = static_cast<Index>(net.P1.size());
    const auto n2 = static_cast<Index>(net.P2.size());
    const Index N = static_cast<Index>(plan.steps) + 1;

    PredictionResult res;
    res.port_nodes = net.P1;
    res.port_nodes.insert(res.port_nodes.end(), net.P2.begin(), net.P2.end());
    res.t = VectorXd::LinSpaced(N, 0.0, static_cast<double>(plan.steps) * plan.dt);
    res.V.resize(n1 + n2, N);
    res.I.resize(n1 + n2, N);
    res.step_time_s = VectorXd::Zero(N);

    std::vector<Unit> vf, pq;
    std::size_t n_units = net.P1.size();
    for (Index k = 0; k < n2; ++k)
        if (plan.p2_models[static_cast<std::size_t>(k)] &&
            net.P2_tags[static_cast<std::size_t>(k)] != PortTag::P2c)
            ++n_units;
    res.der_states.assign(n_units, MatrixXd(kDerStates, N));

    // Algorithm 1 line 1: lift each unit in its own frame.
    auto make_unit = [&](const KbfModel& model, std::size_t node, Index port, const DerVector& x0,
                         MatrixXd* store, std::vector<Index> held) {
        Unit u{node, port, x0[1], KbfStepper(model, std::move(held)), VectorXd(), store};
        u.z = initial_lift(model, shift_phase_state(x0, -u.theta0));
        return u;
    };
    std::size_t slot = 0;
    for (Index k = 0; k < n1; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        vf.push_back(make_unit(*plan.p1_models[ks], net.P1[ks], k, plan.p1_initial[ks],
                               &res.der_states[slot++], {}));
    }
    for (Index k = 0; k < n2; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        if (!plan.p2_models[ks] || net.P2_tags[ks] == PortTag::P2c) continue;
        // P* and Q* only move at reference events.
        pq.push_back(make_unit(*plan.p2_models[ks], net.P2[ks], n1 + k, plan.p2_initial[ks],
                               &res.der_states[slot++], {2, 3}));
    }
    for (auto& u : vf) u.states->col(0) = shift_phase_state(u.stepper.reconstruct(u.z), u.theta0);
    for (auto& u : pq) u.states->col(0) = shift_phase_state(u.stepper.reconstruct(u.z), u.theta0);

    std::vector<bool> has_load(static_cast<std::size_t>(n2));
    for (Index k = 0; k < n2; ++k) {
        const auto tag = net.P2_tags[static_cast<std::size_t>(k)];
        has_load[static_cast<std::size_t>(k)] = tag == PortTag::P2b || tag == PortTag::P2c;
    }
    // PQ output current per P2 port, needed to rebuild P2b port currents.
    VectorXcd pq_current = VectorXcd::Zero(n2);
    for (const auto& unit : pq)
        pq_current[unit.port - n1] =
            pq_output_current(plan.p2_initial[static_cast<std::size_t>(unit.port - n1)]);

    VectorXcd u = plan.u0;
    VectorXcd y = net.H * u;
    res.V.col(0) << u.head(n1), y.tail(n2);
    res.I.col(0) << y.head(n1), u.tail(n2);

    auto abort = [](const Unit& unit, std::size_t step, const std::exception& e) {
        throw PredictionAbort(unit.node, step, e.what());
    };

    for (Index k = 0; k + 1 < N; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto step = static_cast<std::size_t>(k + 1);
        y.noalias() = net.H * u;
        // Load change.
        for (Index p = 0; p < n2; ++p) {
            if (!has_load[static_cast<std::size_t>(p)]) continue;
            const Complex dS = plan.load_schedule(p, k + 1) - plan.load_schedule(p, k);
            if (dS != Complex(0.0, 0.0)) u[n1 + p] += std::conj(dS / y[n1 + p]);
        }
        // Redo load current.
        y.noalias() = net.H * u;
        for (Index p = 0; p < n2; ++p) {
            if (!has_load[static_cast<std::size_t>(p)]) continue;
            u[n1 + p] = pq_current[p] + std::conj(plan.load_schedule(p, k + 1) / y[n1 + p]);
        }
        // PQ units in their local frames.
        for (auto& unit : pq) {
            const Index p = unit.port - n1;
            const Complex v_local = shift_phase(y[unit.port], -unit.theta0);
            const Complex ref = plan.reference_schedule(p, k + 1);
            const Eigen::Vector4d in(v_local.real(), v_local.imag(), ref.real(), ref.imag());
            try {
                unit.stepper.advance(unit.z, in, step);
            } catch (const Error& e) {
                abort(unit, step, e);
            }
            const DerVector x = unit.stepper.reconstruct(unit.z);
            const DerVector xg = shift_phase_state(x, unit.theta0);
            unit.states->col(k + 1) = xg;
            pq_current[p] = pq_output_current(xg);
            u[unit.port] = pq_current[p];
            if (has_load[static_cast<std::size_t>(p)])
                u[unit.port] += std::conj(plan.load_schedule(p, k + 1) / y[unit.port]);
        }
        y.noalias() = net.H * u;
        // Vf units.
        for (auto& unit : vf) {
            const Eigen::Vector2d i_local = dq(shift_phase(y[unit.port], -unit.theta0));
            try {
                unit.stepper.advance(unit.z, i_local, step);
            } catch (const Error& e) {
                abort(unit, step, e);
            }
            const DerVector x = unit.stepper.reconstruct(unit.z);
            const DerVector xg = shift_phase_state(x, unit.theta0);
            unit.states->col(k + 1) = xg;
            u[unit.port] = vf_output_voltage(xg);
        }
        y.noalias() = net.H * u;
        res.V.col(k + 1) << u.head(n1), y.tail(n2);
        res.I.col(k + 1) << y.head(n1), u.tail(n2);
        res.step_time_s[k + 1] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

PredictionPlan make_plan(const SystemConfig& sys, const Scenario& sc, const GridState& init,
                         const ModelPtr& vf, const ModelPtr& pq) {
    sys.validate();
    const auto& desc = sys.network;
    PredictionPlan plan;
    plan.network = hybrid_from_admittance(desc.network, desc.P1, desc.P2, desc.P2_tags);
    plan.dt = sc.dt;
    plan.steps = static_cast<std::size_t>(std::llround(sc.duration / sc.dt));
    const auto n1 = static_cast<Index>(desc.P1.size());
    const auto n2 = static_cast<Index>(desc.P2.size());
    if (init.ders.size() != desc.P1.size() + sys.pq_units.size() || init.V_P2.size() != n2)
        throw InvalidArgument("initial grid state does not match the system");

    std::map<std::size_t, Index> p2_pos;
    for (Index k = 0; k < n2; ++k) p2_pos[desc.P2[static_cast<std::size_t>(k)]] = k;

    plan.p1_models.assign(desc.P1.size(), vf);
    plan.p1_initial.assign(init.ders.begin(), init.ders.begin() + n1);
    plan.p2_models.assign(desc.P2.size(), nullptr);
    plan.p2_initial.assign(desc.P2.size(), DerVector::Zero());
    VectorXcd I_P2 = VectorXcd::Zero(n2);
    for (std::size_t i = 0; i < sys.pq_units.size(); ++i) {
        const Index p = p2_pos.at(sys.pq_units[i].node);
        const auto& x = init.ders[desc.P1.size() + i];
        plan.p2_models[static_cast<std::size_t>(p)] = pq;
        plan.p2_initial[static_cast<std::size_t>(p)] = x;
        I_P2[p] += pq_output_current(x);
    }

    // Replay the scenario events on the prediction grid, as the simulator does.
    const Index N = static_cast<Index>(plan.steps) + 1;
    plan.load_schedule = MatrixXcd::Zero(n2, N);
    plan.reference_schedule = MatrixXcd::Zero(n2, N);
    auto events = sc.events;
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.time < b.time; });
    OperatingPoint op = sc.initial;
    std::size_t next = 0;
    for (Index k = 0; k < N; ++k) {
        const double t = static_cast<double>(k) * sc.dt;
        while (next < events.size() && events[next].time <= t + 1e-9 * sc.dt) {
            const auto& e = events[next++];
            auto& list = e.target == Event::Target::Load ? op.load_S : op.pq_S;
            if (e.index >= list.size()) throw InvalidArgument("event targets an unknown device");
            list[e.index] = e.value;
        }
        for (std::size_t l = 0; l < sys.loads.size(); ++l)
            plan.load_schedule(p2_pos.at(sys.loads[l].node), k) = -op.load_S[l];
        for (std::size_t i = 0; i < sys.pq_units.size(); ++i)
            plan.reference_schedule(p2_pos.at(sys.pq_units[i].node), k) = op.pq_S[i];
    }
    for (std::size_t l = 0; l < sys.loads.size(); ++l) {
        const Index p = p2_pos.at(sys.loads[l].node);
        I_P2[p] += std::conj(plan.load_schedule(p, 0) / init.V_P2[p]);
    }

    plan.u0.resize(n1 + n2);
    for (Index k = 0; k < n1; ++k) plan.u0[k] = vf_output_voltage(init.ders[static_cast<std::size_t>(k)]);
    plan.u0.tail(n2) = I_P2;
    return plan;
}

EvaluationReport evaluate(const PredictionResult& predicted, const SimulationResult& truth) {
    if (predicted.port_nodes != truth.port_nodes || predicted.t.size() != truth.t.size() ||
        predicted.V.cols() != truth.V.cols() || predicted.V.rows() != truth.V.rows())
        throw InvalidArgument("prediction and ground truth are not on the same grid");
    if (predicted.t.size() > 0 &&
        (predicted.t - truth.t).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, truth.t.cwiseAbs().maxCoeff()))
        throw InvalidArgument("prediction and ground truth time grids differ");

    EvaluationReport rep;
    const MatrixXd err = (predicted.V - truth.V).cwiseAbs();
    const auto N = static_cast<double>(err.cols());
    for (Index p = 0; p < err.rows(); ++p) {
        NodeError ne;
        ne.node = predicted.port_nodes[static_cast<std::size_t>(p)];
        ne.rms = std::sqrt(err.row(p).squaredNorm() / N);
        ne.max = err.row(p).maxCoeff();
        rep.mean_rms += ne.rms;
        rep.per_node.push_back(ne);
    }
    if (!rep.per_node.empty()) rep.mean_rms /= static_cast<double>(rep.per_node.size());
    rep.wall_time_s = predicted.wall_time_s;
    rep.horizon_s = predicted.t.size() ? predicted.t[predicted.t.size() - 1] : 0.0;
    rep.simulation_time_s = truth.wall_time_s;
    rep.wall_time_ratio = truth.wall_time_s > 0.0 ? predicted.wall_time_s / truth.wall_time_s : 0.0;
    return rep;
}

nlohmann::json to_json(const EvaluationReport& report) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& n : report.per_node)
        per[std::to_string(n.node)] = {{"rms", n.rms}, {"max", n.max}};
    return {{"per_node", per},
            {"mean_rms", report.mean_rms},
            {"wall_time_s", report.wall_time_s},
            {"horizon_s", report.horizon_s},
            {"simulation_time_s", report.simulation_time_s},
            {"wall_time_ratio", report.wall_time_ratio}};
}

}  // namespace mkbf
