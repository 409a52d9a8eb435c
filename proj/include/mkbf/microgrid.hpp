#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "mkbf/der_models.hpp"
#include "mkbf/grid_network.hpp"
#include "mkbf/koopman_ident.hpp"

namespace mkbf {

struct PqUnit {
    std::size_t node = 0;
    Complex S_ref;  // nominal injected power
};

struct LoadSpec {
    std::size_t node = 0;
    Complex S;  // nominal consumed power
};

struct ScenarioDefaults {
    double duration = 1.0;
    double first_event = 0.05;
    std::size_t events = 1;
};

struct SystemConfig {
    NetworkDescription network;
    VfParams vf;
    PqParams pq;
    std::vector<PqUnit> pq_units;
    std::vector<LoadSpec> loads;
    double dt = 1e-3;
    ScenarioDefaults scenario;

    /// Port nodes in hybrid order [P1; P2].
    std::vector<std::size_t> port_nodes() const;
    void validate() const;
};

SystemConfig system_from_json(const nlohmann::json& j);
nlohmann::json system_to_json(const SystemConfig& sys);
SystemConfig load_system(const std::string& path);

/// Load consumption and PQ setpoints, aligned with SystemConfig::loads and ::pq_units.
struct OperatingPoint {
    std::vector<Complex> load_S;
    std::vector<Complex> pq_S;
};

OperatingPoint nominal_operating_point(const SystemConfig& sys);

struct Event {
    enum class Target { Load, Pq };
    double time = 0.0;
    Target target = Target::Load;
    std::size_t index = 0;
    Complex value;
};

struct Scenario {
    double duration = 0.0;
    double dt = 1e-3;
    OperatingPoint initial;
    std::vector<Event> events;
};

/// Full DAE state: DER states (Vf units first, then PQ units) and P2 node voltages.
struct GridState {
    std::vector<DerVector> ders;
    Eigen::VectorXcd V_P2;
};

/// Power flow plus DER equilibria for the operating point.
GridState initial_state(const SystemConfig& sys, const OperatingPoint& op);
/// Rotates every phasor and PLL angle of the state by theta.
GridState rotate_state(const GridState& s, double theta);

struct SimulationResult {
    Eigen::VectorXd t;
    std::vector<std::size_t> port_nodes;  // [P1; P2]
    Eigen::MatrixXcd V;                   // ports x N
    Eigen::MatrixXcd I;                   // ports x N, injections into the network
    std::vector<Eigen::MatrixXd> der_states;   // per DER, 10 x N
    std::vector<Eigen::MatrixXd> der_inputs;   // Vf: 2 x N, PQ: 4 x N
    std::vector<Eigen::MatrixXd> der_outputs;  // Vf: voltage, PQ: current, 2 x N
    Eigen::MatrixXcd load_S;  // consumed power per load, loads x N
    Eigen::MatrixXcd pq_S;    // PQ setpoints, units x N
    double max_algebraic_residual = 0.0;
    std::size_t newton_iterations = 0;
    double wall_time_s = 0.0;
};

constexpr std::size_t kMaxNewtonIterations = 50;
constexpr double kAlgebraicTolerance = 1e-8;

SimulationResult simulate_microgrid(const SystemConfig& sys, const Scenario& sc);
SimulationResult simulate_microgrid(const SystemConfig& sys, const Scenario& sc,
                                    const GridState& init);

struct GenerationOptions {
    std::size_t n_scenarios = 10;
    double range = 0.8;
    double augmentation = 0.0;  // radians, Vf segments only
    std::uint64_t seed = 1;
    double duration = 0.0;      // 0 uses the system default
    std::size_t events = 0;     // 0 uses the system default
    bool vary_loads = true;
    bool vary_pq = true;
    std::size_t threads = 0;    // 0 reads KOOPMAN_GRID_THREADS, else hardware concurrency
};

/// Random scenario; index selects an independent deterministic stream.
Scenario random_scenario(const SystemConfig& sys, const GenerationOptions& opt, std::size_t index);

struct TrainingData {
    TrajectoryDataset vf;
    TrajectoryDataset pq;
    std::vector<Scenario> scenarios;
    std::vector<SimulationResult> results;
};

/// Simulates scenarios and slices them into per-subsystem segments. Vf segments are rotated so
/// the initial PLL angle is zero plus a uniform angle within the augmentation range; PQ segments
/// are rotated to a zero initial PLL angle.
TrainingData generate_training_data(const SystemConfig& sys, const GenerationOptions& opt);

/// Parallelism cap from KOOPMAN_GRID_THREADS (at least 1).
std::size_t thread_budget(std::size_t requested = 0);

}  // namespace mkbf
