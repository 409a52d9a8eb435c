#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "mkbf/grid_network.hpp"
#include "mkbf/koopman_ident.hpp"
#include "mkbf/microgrid.hpp"

namespace mkbf {

using ModelPtr = std::shared_ptr<const KbfModel>;

/// Inputs of the connected prediction loop. Port order is [P1; P2] as in `network`.
///
/// Powers are injections into the network, so a consuming load has a negative real part.
struct PredictionPlan {
    HybridNetwork network;
    std::vector<ModelPtr> p1_models;           // one implicit model per P1 node
    std::vector<ModelPtr> p2_models;           // per P2 node: explicit PQ model, or null for P2c
    std::vector<DerVector> p1_initial;         // global-frame DER states
    std::vector<DerVector> p2_initial;         // entries for P2c nodes are ignored
    Eigen::VectorXcd u0;                       // [V_P1; I_P2]
    Eigen::MatrixXcd load_schedule;            // P2 x (steps+1), zero rows where no load
    Eigen::MatrixXcd reference_schedule;       // P2 x (steps+1), P* + jQ* of PQ units
    std::size_t steps = 0;
    double dt = 1e-3;

    /// Throws InvalidArgument when a model form or a schedule size is wrong.
    void validate() const;
};

struct PredictionResult {
    Eigen::VectorXd t;
    std::vector<std::size_t> port_nodes;
    Eigen::MatrixXcd V;  // ports x N
    Eigen::MatrixXcd I;  // ports x N, injections into the network
    std::vector<Eigen::MatrixXd> der_states;  // P1 units then P2 PQ units, global frame
    Eigen::VectorXd step_time_s;              // wall time of each step
    double wall_time_s = 0.0;
};

/// Runs the connected loop. Any surrogate failure raises PredictionAbort with the node and step.
PredictionResult predict(const PredictionPlan& plan);

/// Plan for a simulator scenario started from `init`. Every PQ node gets the `pq` model.
PredictionPlan make_plan(const SystemConfig& sys, const Scenario& sc, const GridState& init,
                         const ModelPtr& vf, const ModelPtr& pq);

struct NodeError {
    std::size_t node = 0;
    double rms = 0.0;
    double max = 0.0;
};

struct EvaluationReport {
    std::vector<NodeError> per_node;
    double mean_rms = 0.0;
    double wall_time_s = 0.0;
    double horizon_s = 0.0;
    double simulation_time_s = 0.0;
    double wall_time_ratio = 0.0;  // predict time / simulate time, 0 when unknown
};

/// Per-node RMS and max of |V_pred - V_true| over time.
EvaluationReport evaluate(const PredictionResult& predicted, const SimulationResult& truth);

nlohmann::json to_json(const EvaluationReport& report);

}  // namespace mkbf
