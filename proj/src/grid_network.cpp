#include "mkbf/grid_network.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <queue>
#include <set>

#include <Eigen/LU>
#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include "mkbf/errors.hpp"

namespace mkbf {

using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;

namespace {

constexpr double kSingularRcond = 1e-13;

MatrixXcd pick(const MatrixXcd& Y, const std::vector<std::size_t>& rows,
               const std::vector<std::size_t>& cols) {
    MatrixXcd out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k < cols.size(); ++k)
            out(static_cast<Index>(i), static_cast<Index>(k)) =
                Y(static_cast<Index>(rows[i]), static_cast<Index>(cols[k]));
    return out;
}

Eigen::PartialPivLU<MatrixXcd> factor_or_throw(const MatrixXcd& m, const std::string& what) {
    Eigen::PartialPivLU<MatrixXcd> lu(m);
    const double rc = m.size() == 0 ? 1.0 : lu.rcond();
    if (!(rc > kSingularRcond))
        throw NonExistenceError(
            what + " is singular (rcond " + std::to_string(rc) +
            "); the hybrid parameters exist only for passive lines with positive conductance or "
            "connected networks without shunt elements");
    return lu;
}

void check_node(std::size_t node, std::size_t n) {
    if (node >= n)
        throw InvalidArgument("node " + std::to_string(node) + " outside network of " +
                              std::to_string(n) + " nodes");
}

}  // namespace

Complex series_admittance(double r, double x) {
    const Complex z(r, x);
    if (std::abs(z) == 0.0) throw InvalidArgument("line impedance must be nonzero");
    return 1.0 / z;
}

MatrixXcd NetworkModel::admittance() const {
    const auto n = static_cast<Index>(n_nodes);
    MatrixXcd Y = MatrixXcd::Zero(n, n);
    for (const auto& l : lines) {
        check_node(l.from, n_nodes);
        check_node(l.to, n_nodes);
        if (l.from == l.to) throw InvalidArgument("line endpoints must differ");
        const auto a = static_cast<Index>(l.from), b = static_cast<Index>(l.to);
        Y(a, a) += l.admittance;
        Y(b, b) += l.admittance;
        Y(a, b) -= l.admittance;
        Y(b, a) -= l.admittance;
    }
    for (const auto& s : shunts) {
        check_node(s.node, n_nodes);
        Y(static_cast<Index>(s.node), static_cast<Index>(s.node)) += s.admittance;
    }
    return Y;
}

bool NetworkModel::connected() const {
    if (n_nodes == 0) return false;
    std::vector<std::vector<std::size_t>> adj(n_nodes);
    for (const auto& l : lines) {
        if (l.admittance == Complex(0.0, 0.0)) continue;
        adj[l.from].push_back(l.to);
        adj[l.to].push_back(l.from);
    }
    std::vector<bool> seen(n_nodes, false);
    std::queue<std::size_t> todo;
    todo.push(0);
    seen[0] = true;
    std::size_t count = 1;
    while (!todo.empty()) {
        const auto v = todo.front();
        todo.pop();
        for (auto w : adj[v])
            if (!seen[w]) {
                seen[w] = true;
                ++count;
                todo.push(w);
            }
    }
    return count == n_nodes;
}

std::string to_string(PortTag tag) {
    switch (tag) {
        case PortTag::P1: return "P1";
        case PortTag::P2a: return "P2a";
        case PortTag::P2b: return "P2b";
        case PortTag::P2c: return "P2c";
    }
    return "P1";
}

PortTag parse_port_tag(const std::string& text) {
    if (text == "P1") return PortTag::P1;
    if (text == "P2a") return PortTag::P2a;
    if (text == "P2b") return PortTag::P2b;
    if (text == "P2c") return PortTag::P2c;
    throw InvalidArgument("unknown port tag '" + text + "'");
}

MatrixXcd kron_reduce(const MatrixXcd& Y, const std::vector<std::size_t>& eliminate) {
    const auto n = static_cast<std::size_t>(Y.rows());
    std::set<std::size_t> gone(eliminate.begin(), eliminate.end());
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < n; ++i)
        if (!gone.count(i)) keep.push_back(i);
    if (gone.empty()) return Y;
    const std::vector<std::size_t> drop(gone.begin(), gone.end());
    const MatrixXcd Ybb = pick(Y, drop, drop);
    const auto lu = factor_or_throw(Ybb, "eliminated-node block Y_bb");
    return pick(Y, keep, keep) - pick(Y, keep, drop) * lu.solve(pick(Y, drop, keep));
}

HybridNetwork hybrid_from_admittance(const NetworkModel& net, const std::vector<std::size_t>& P1,
                                     const std::vector<std::size_t>& P2,
                                     const std::vector<PortTag>& P2_tags) {
    if (!P2_tags.empty() && P2_tags.size() != P2.size())
        throw InvalidArgument("one tag per P2 node is required");
    std::set<std::size_t> ports;
    for (auto v : P1) ports.insert(v);
    for (auto v : P2) ports.insert(v);
    if (ports.size() != P1.size() + P2.size()) throw InvalidArgument("port partitions overlap");
    const std::set<std::size_t> zero(net.zero_injection_nodes.begin(),
                                     net.zero_injection_nodes.end());
    for (std::size_t v = 0; v < net.n_nodes; ++v) {
        const bool is_port = ports.count(v) > 0;
        const bool is_zero = zero.count(v) > 0;
        if (is_port == is_zero)
            throw InvalidArgument("node " + std::to_string(v) +
                                  " must be either a port or a zero-injection node");
    }

    const MatrixXcd Yred = kron_reduce(net.admittance(), net.zero_injection_nodes);
    // Position of each retained node inside Yred.
    std::map<std::size_t, std::size_t> pos;
    {
        std::size_t k = 0;
        for (std::size_t v = 0; v < net.n_nodes; ++v)
            if (!zero.count(v)) pos[v] = k++;
    }
    std::vector<std::size_t> p1, p2;
    for (auto v : P1) p1.push_back(pos.at(v));
    for (auto v : P2) p2.push_back(pos.at(v));

    HybridNetwork hn;
    hn.P1 = P1;
    hn.P2 = P2;
    hn.P2_tags = P2_tags.empty() ? std::vector<PortTag>(P2.size(), PortTag::P2a) : P2_tags;
    const auto n1 = static_cast<Index>(p1.size()), n2 = static_cast<Index>(p2.size());
    hn.H.resize(n1 + n2, n1 + n2);
    const MatrixXcd Y11 = pick(Yred, p1, p1);
    if (n2 == 0) {
        hn.H = Y11;
        return hn;
    }
    const MatrixXcd Y12 = pick(Yred, p1, p2);
    const MatrixXcd Y21 = pick(Yred, p2, p1);
    const MatrixXcd Y22 = pick(Yred, p2, p2);
    const auto lu = factor_or_throw(Y22, "P2 block Y_22");
    const MatrixXcd Y22inv = lu.inverse();
    const MatrixXcd Y22invY21 = lu.solve(Y21);
    hn.H.topLeftCorner(n1, n1) = Y11 - Y12 * Y22invY21;
    hn.H.topRightCorner(n1, n2) = Y12 * Y22inv;
    hn.H.bottomLeftCorner(n2, n1) = -Y22invY21;
    hn.H.bottomRightCorner(n2, n2) = Y22inv;
    return hn;
}

MeasuredHybrid hybrid_from_measurements(const Eigen::Ref<const MatrixXcd>& U,
                                        const Eigen::Ref<const MatrixXcd>& Y) {
    const Index d = U.rows();
    if (U.cols() != Y.cols()) throw InvalidArgument("input and output sample counts differ");
    if (U.cols() < d)
        throw InsufficientExcitationError("need at least " + std::to_string(d) +
                                          " samples, got " + std::to_string(U.cols()));
    // Y = H U  <=>  U^T H^T = Y^T, solved column by column in the least-squares sense.
    const MatrixXcd Ut = U.transpose();
    Eigen::ColPivHouseholderQR<MatrixXcd> qr(Ut);
    if (qr.rank() < d)
        throw InsufficientExcitationError("port sample matrix has rank " +
                                          std::to_string(qr.rank()) + " < " + std::to_string(d));
    MeasuredHybrid out;
    out.H = qr.solve(MatrixXcd(Y.transpose())).transpose();
    out.residual = (Y - out.H * U).norm();
    return out;
}

ExistenceResult existence_check(const NetworkModel& net) {
    if (!net.connected()) return {false, "network graph is not connected"};
    const bool passive = std::all_of(net.lines.begin(), net.lines.end(),
                                     [](const Line& l) { return l.admittance.real() > 0.0; });
    if (passive) return {true, "every line has strictly positive conductance"};
    const bool no_shunts =
        std::all_of(net.shunts.begin(), net.shunts.end(),
                    [](const Shunt& s) { return s.admittance == Complex(0.0, 0.0); });
    if (no_shunts) return {true, "connected network without shunt elements"};
    return {false, "lossless lines combined with shunt elements: existence is not guaranteed"};
}

NetworkSolution solve_ports(const NetworkModel& net, const std::vector<std::size_t>& P1,
                            const std::vector<std::size_t>& P2,
                            const Eigen::Ref<const VectorXcd>& V_P1,
                            const Eigen::Ref<const VectorXcd>& I_P2) {
    const MatrixXcd Y = net.admittance();
    std::set<std::size_t> known_v(P1.begin(), P1.end());
    std::vector<std::size_t> unknown;
    for (std::size_t v = 0; v < net.n_nodes; ++v)
        if (!known_v.count(v)) unknown.push_back(v);

    VectorXcd I_unknown = VectorXcd::Zero(static_cast<Index>(unknown.size()));
    std::map<std::size_t, Complex> given_i;
    for (std::size_t k = 0; k < P2.size(); ++k) given_i[P2[k]] = I_P2[static_cast<Index>(k)];
    for (std::size_t k = 0; k < unknown.size(); ++k) {
        auto it = given_i.find(unknown[k]);
        if (it != given_i.end()) I_unknown[static_cast<Index>(k)] = it->second;
    }
    const MatrixXcd Yss = pick(Y, unknown, unknown);
    const MatrixXcd Ysp = pick(Y, unknown, P1);
    const VectorXcd Vs = Yss.partialPivLu().solve(I_unknown - Ysp * V_P1);

    NetworkSolution sol;
    sol.V.resize(static_cast<Index>(net.n_nodes));
    for (std::size_t k = 0; k < P1.size(); ++k) sol.V[static_cast<Index>(P1[k])] = V_P1[static_cast<Index>(k)];
    for (std::size_t k = 0; k < unknown.size(); ++k)
        sol.V[static_cast<Index>(unknown[k])] = Vs[static_cast<Index>(k)];
    sol.I = Y * sol.V;
    return sol;
}

NetworkDescription network_from_json(const nlohmann::json& j) {
    NetworkDescription d;
    d.network.n_nodes = j.at("n_nodes").get<std::size_t>();
    for (const auto& l : j.at("lines"))
        d.network.lines.push_back({l.at("from").get<std::size_t>(), l.at("to").get<std::size_t>(),
                                   series_admittance(l.at("r").get<double>(), l.at("x").get<double>())});
    if (j.contains("shunts"))
        for (const auto& s : j.at("shunts"))
            d.network.shunts.push_back(
                {s.at("node").get<std::size_t>(), Complex(s.value("g", 0.0), s.value("b", 0.0))});
    d.network.zero_injection_nodes =
        j.value("zero_injection", std::vector<std::size_t>{});

    const auto& parts = j.at("partitions");
    d.P1 = parts.value("P1", std::vector<std::size_t>{});
    std::vector<std::pair<std::size_t, PortTag>> p2;
    for (const char* tag : {"P2a", "P2b", "P2c"})
        for (auto v : parts.value(tag, std::vector<std::size_t>{})) p2.emplace_back(v, parse_port_tag(tag));
    std::sort(p2.begin(), p2.end());
    for (const auto& [v, t] : p2) {
        d.P2.push_back(v);
        d.P2_tags.push_back(t);
    }
    if (j.contains("bases")) {
        d.base_power = j.at("bases").value("power", 1.0);
        d.base_voltage = j.at("bases").value("voltage", 1.0);
    }
    for (const auto& l : d.network.lines) {
        check_node(l.from, d.network.n_nodes);
        check_node(l.to, d.network.n_nodes);
    }
    return d;
}

nlohmann::json network_to_json(const NetworkDescription& d) {
    nlohmann::json j;
    j["n_nodes"] = d.network.n_nodes;
    auto lines = nlohmann::json::array();
    for (const auto& l : d.network.lines) {
        const Complex z = 1.0 / l.admittance;
        lines.push_back({{"from", l.from}, {"to", l.to}, {"r", z.real()}, {"x", z.imag()}});
    }
    j["lines"] = lines;
    auto shunts = nlohmann::json::array();
    for (const auto& s : d.network.shunts)
        shunts.push_back({{"node", s.node}, {"g", s.admittance.real()}, {"b", s.admittance.imag()}});
    j["shunts"] = shunts;
    j["zero_injection"] = d.network.zero_injection_nodes;
    nlohmann::json parts = {{"P1", d.P1}, {"P2a", nlohmann::json::array()},
                            {"P2b", nlohmann::json::array()}, {"P2c", nlohmann::json::array()}};
    for (std::size_t k = 0; k < d.P2.size(); ++k) parts[to_string(d.P2_tags[k])].push_back(d.P2[k]);
    j["partitions"] = parts;
    j["bases"] = {{"power", d.base_power}, {"voltage", d.base_voltage}};
    return j;
}

}  // namespace mkbf
