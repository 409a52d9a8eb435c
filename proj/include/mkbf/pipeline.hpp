#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mkbf/io.hpp"
#include "mkbf/koopman_ident.hpp"
#include "mkbf/microgrid.hpp"

namespace mkbf {

enum class DerKind { Vf, Pq };

/// Rows of the DER state that form the port output: voltage for Vf, current for PQ.
constexpr Eigen::Index output_row(DerKind kind) noexcept { return kind == DerKind::Vf ? 6 : 8; }

/// Truncation request: "auto" (eigenvalue-repetition heuristic), "rank" (numerical rank),
/// "validate" (best open-loop error on validation data) or a positive integer.
struct TruncationRequest {
    enum class Mode { Auto, Rank, Validate, Fixed };
    Mode mode = Mode::Auto;
    std::size_t order = 0;
};

TruncationRequest parse_truncation(const std::string& text);
std::string to_string(const TruncationRequest& request);

/// Low-rank storage is used when it needs fewer multiplications per step than the dense form.
bool prefer_low_rank(KbfForm form, std::size_t r, std::size_t q, std::size_t m);

struct TrainOptions {
    DerKind kind = DerKind::Vf;
    std::size_t degree = 2;
    KbfForm form = KbfForm::Implicit;
    Regression regression = Regression::Increment;
    TruncationRequest truncation;
    std::size_t validation_grid = 8;  // candidate orders for Mode::Validate
};

struct TrainedModel {
    KbfModel model;
    TruncationSuggestion suggestion;
    std::size_t rank = 0;
    std::vector<std::pair<std::size_t, double>> validation;  // (r, error) per candidate
};

/// Assembles, factors and truncates. `validation` is required for Mode::Validate.
TrainedModel train_model(const TrajectoryDataset& data, const TrainOptions& options,
                         const TrajectoryDataset* validation = nullptr);

/// Mean over segments of the RMS output error of an open-loop rollout. Infinity when any
/// rollout fails or leaves the finite range.
double open_loop_error(const KbfModel& model, const TrajectoryDataset& data, DerKind kind);

/// Mean absolute output error over the last `window` samples of each segment.
double final_offset(const KbfModel& model, const TrajectoryDataset& data, DerKind kind,
                    std::size_t window);

/// DAE state at the first sample of a simulation.
GridState state_at_start(const SimulationResult& result, const SystemConfig& sys);

/// Spectrum diagnostics: pre (untruncated) and post (chosen order) continuous eigenvalues
/// against their sorted index.
LongTable spectrum_table(const Eigen::VectorXcd& pre, const Eigen::VectorXcd& post);

}  // namespace mkbf
