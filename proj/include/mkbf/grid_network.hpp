#pragma once

#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace mkbf {

using Complex = std::complex<double>;

struct Line {
    std::size_t from = 0;
    std::size_t to = 0;
    Complex admittance;
};

struct Shunt {
    std::size_t node = 0;
    Complex admittance;
};

/// Passive network in per-unit. Currents are injections into the network: I = Y V.
struct NetworkModel {
    std::size_t n_nodes = 0;
    std::vector<Line> lines;
    std::vector<Shunt> shunts;
    std::vector<std::size_t> zero_injection_nodes;

    Eigen::MatrixXcd admittance() const;
    bool connected() const;
};

/// Line admittance 1 / (r + jx).
Complex series_admittance(double r, double x);

enum class PortTag { P1, P2a, P2b, P2c };

std::string to_string(PortTag tag);
PortTag parse_port_tag(const std::string& text);

/// y = H u with u = [V_P1; I_P2] and y = [I_P1; V_P2].
struct HybridNetwork {
    Eigen::MatrixXcd H;
    std::vector<std::size_t> P1;
    std::vector<std::size_t> P2;
    std::vector<PortTag> P2_tags;

    std::size_t size() const noexcept { return P1.size() + P2.size(); }
    Eigen::VectorXcd apply(const Eigen::Ref<const Eigen::VectorXcd>& u) const { return H * u; }
};

/// Y_aa - Y_ab Y_bb^{-1} Y_ba with `eliminate` as the b set. Retained nodes keep ascending order.
Eigen::MatrixXcd kron_reduce(const Eigen::MatrixXcd& Y, const std::vector<std::size_t>& eliminate);

/// Throws NonExistenceError when a required inverse does not exist.
HybridNetwork hybrid_from_admittance(const NetworkModel& net, const std::vector<std::size_t>& P1,
                                     const std::vector<std::size_t>& P2,
                                     const std::vector<PortTag>& P2_tags = {});

struct MeasuredHybrid {
    Eigen::MatrixXcd H;
    double residual = 0.0;
};

/// Least-squares H from port samples, one sample per column of U and Y.
MeasuredHybrid hybrid_from_measurements(const Eigen::Ref<const Eigen::MatrixXcd>& U,
                                        const Eigen::Ref<const Eigen::MatrixXcd>& Y);

struct ExistenceResult {
    bool exists = false;
    std::string reason;
};

ExistenceResult existence_check(const NetworkModel& net);

/// Full-network solve for the port convention: given V at P1 and I at P2 (all other nodes are
/// zero-injection), returns all node voltages and currents.
struct NetworkSolution {
    Eigen::VectorXcd V;
    Eigen::VectorXcd I;
};
NetworkSolution solve_ports(const NetworkModel& net, const std::vector<std::size_t>& P1,
                            const std::vector<std::size_t>& P2,
                            const Eigen::Ref<const Eigen::VectorXcd>& V_P1,
                            const Eigen::Ref<const Eigen::VectorXcd>& I_P2);

struct NetworkDescription {
    NetworkModel network;
    std::vector<std::size_t> P1;
    std::vector<std::size_t> P2;
    std::vector<PortTag> P2_tags;
    double base_power = 1.0;
    double base_voltage = 1.0;
};

NetworkDescription network_from_json(const nlohmann::json& j);
nlohmann::json network_to_json(const NetworkDescription& desc);

}  // namespace mkbf
