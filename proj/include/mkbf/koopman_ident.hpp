#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "mkbf/observables.hpp"

namespace mkbf {

/// Explicit: inputs multiply the current lifted state. Implicit: they multiply the next one.
enum class KbfForm { Explicit, Implicit };

std::string to_string(KbfForm form);
KbfForm parse_form(const std::string& text);

/// Regression target. Snapshot fits X2 ~ G Omega directly. Increment fits X2 - X1 ~ G' Omega
/// and adds the identity back, so truncation only discards part of the one-step change. Both
/// give the same model when nothing is truncated.
enum class Regression { Snapshot, Increment };

std::string to_string(Regression regression);
Regression parse_regression(const std::string& text);

/// One uniformly sampled trajectory piece. Sample k is column k.
struct TrajectorySegment {
    Eigen::VectorXd times;
    Eigen::MatrixXd states;  // n_states x N
    Eigen::MatrixXd inputs;  // n_inputs x N
    double frame_angle = 0.0;
    std::size_t samples() const noexcept { return static_cast<std::size_t>(states.cols()); }
};

struct TrajectoryDataset {
    double dt = 0.0;
    std::size_t n_states = 0;
    std::size_t n_inputs = 0;
    std::vector<TrajectorySegment> segments;

    /// Throws InvalidArgument when segments disagree on dimensions or sampling.
    void validate() const;
};

/// Snapshot matrices for the bilinear regression X2 ~ G * Omega.
///
/// Omega stacks [X1; Gamma_1; ...; Gamma_m] so X1 and the Gammas are row blocks of it.
struct DataMatrices {
    ObservableDictionary dictionary;
    KbfForm form = KbfForm::Explicit;
    double dt = 0.0;
    std::size_t m = 0;
    Eigen::MatrixXd omega;  // q(m+1) x M
    Eigen::MatrixXd X2;     // q x M
    std::size_t skipped_segments = 0;

    std::size_t q() const noexcept { return dictionary.size(); }
    std::size_t columns() const noexcept { return static_cast<std::size_t>(X2.cols()); }
    auto X1() const { return omega.topRows(static_cast<Eigen::Index>(q())); }
    auto gamma(std::size_t i) const {
        return omega.middleRows(static_cast<Eigen::Index>(q() * (i + 1)),
                                static_cast<Eigen::Index>(q()));
    }
};

DataMatrices assemble_data_matrices(const TrajectoryDataset& data, const ObservableDictionary& dict,
                                    KbfForm form);

/// Identified discrete-time Koopman bilinear form.
///
/// Dense models: the state is z (length r when reduced, q otherwise), lifted observables are
/// recovered as P z and a model state is obtained from observables as P_pinv T(x).
///
/// Low-rank models (reduced increment regressions): the state is the full lift z of length q and
/// z_{k+1} = z_k + P (A z_k + sum_i u_i B_i z_k) with P of size q x r and A, B_i of size r x q.
/// The implicit form uses z_{k+1} in place of z_k inside the input sum.
struct KbfModel {
    KbfForm form = KbfForm::Explicit;
    Regression regression = Regression::Snapshot;
    double dt = 0.0;
    std::size_t q = 0;
    std::size_t r = 0;
    std::size_t m = 0;
    bool reduced = false;
    Eigen::MatrixXd A;
    std::vector<Eigen::MatrixXd> B;
    Eigen::MatrixXd P;
    Eigen::MatrixXd P_pinv;
    Eigen::MatrixXd Cx;
    ObservableDictionary dictionary;

    double residual = 0.0;
    Eigen::VectorXd singular_values;  // full spectrum of Omega, descending
    std::vector<std::string> warnings;

    // Filled by eigen_analysis.
    bool has_eigen = false;
    Eigen::VectorXcd eigenvalues_discrete;
    Eigen::VectorXcd eigenvalues_continuous;
    Eigen::MatrixXcd W;  // columns are left eigenvectors: W^* A = D W^*
    Eigen::MatrixXcd eigenfunction_coefficients;  // W^* P_pinv, one row per eigenfunction

    // Filled by canonical_transform: z_original = basis * z_canonical.
    bool canonical = false;
    Eigen::MatrixXd basis;
    Eigen::MatrixXd basis_inv;

    bool low_rank() const noexcept { return reduced && regression == Regression::Increment; }
    std::size_t state_dim() const noexcept {
        return low_rank() ? q : static_cast<std::size_t>(A.rows());
    }
    /// Linear map from model state to original state.
    Eigen::MatrixXd reconstruction() const { return low_rank() ? Cx : Eigen::MatrixXd(Cx * P); }
};

KbfModel solve_kbf(const DataMatrices& dm, std::size_t r, bool reduce,
                   Regression regression = Regression::Snapshot);

/// SVD of Omega kept so models at several truncation orders share one factorization.
class KbfFactorization {
public:
    KbfFactorization(const DataMatrices& dm, Regression regression = Regression::Snapshot);

    /// Same result as solve_kbf(dm, r, reduce, regression).
    KbfModel model(std::size_t r, bool reduce) const;

    const Eigen::VectorXd& singular_values() const noexcept { return s_; }
    std::size_t rank() const noexcept { return rank_; }
    std::size_t max_order() const noexcept { return max_order_; }

private:
    KbfForm form_;
    Regression regression_;
    double dt_;
    std::size_t m_;
    ObservableDictionary dictionary_;
    std::size_t max_order_;
    std::size_t rank_ = 0;
    Eigen::MatrixXd U_;
    Eigen::VectorXd s_;
    Eigen::MatrixXd YV_;
    double out_of_range_sq_ = 0.0;
};

/// Equivalent model with square q x q matrices acting on the full lift (identity for dense models).
KbfModel dense_form(KbfModel model);

/// Numerical rank of Omega (singular values above eps * max(dim) * sigma_1).
std::size_t numerical_rank(const Eigen::VectorXd& singular_values, std::size_t rows,
                           std::size_t cols);

/// Singular values of Omega without solving for the model.
Eigen::VectorXd omega_singular_values(const DataMatrices& dm);

constexpr double kDefectiveConditionThreshold = 1e12;

/// Eigen-decomposition of A. Low-rank models are analysed through their dense form but keep
/// their storage.
KbfModel eigen_analysis(KbfModel model);

/// Rewrites the model in real block-diagonal eigen-coordinates. Low-rank models become dense.
KbfModel canonical_transform(KbfModel model);

/// Continuous-time eigenvalues sorted by descending real part (conjugate pairs adjacent,
/// positive imaginary part first). Non-finite entries (from zero discrete eigenvalues) sort last.
Eigen::VectorXcd sort_continuous_spectrum(const Eigen::VectorXcd& discrete, double dt);

struct TruncationOptions {
    double delta_factor = 1e-2;
};

struct TruncationSuggestion {
    std::size_t r = 0;
    bool flagged = false;  // spectrum too short to analyze
    std::size_t repeat_index = 0;  // 1-based index of the first repeated eigenvalue, 0 if none
    std::size_t pair_i = 0, pair_j = 0;  // 1-based indices whose sum it repeats
    Eigen::VectorXcd spectrum;  // sorted continuous eigenvalues of the untruncated model
};

/// Applies the pattern-repetition rule to an already sorted continuous spectrum.
TruncationSuggestion truncation_from_spectrum(const Eigen::VectorXcd& sorted_spectrum,
                                              const TruncationOptions& options = {});

/// Runs the rule on the untruncated model at the numerical rank of Omega.
TruncationSuggestion suggest_truncation_order(const DataMatrices& dm,
                                              const TruncationOptions& options = {});
TruncationSuggestion suggest_truncation_order(const KbfFactorization& factorization,
                                              const TruncationOptions& options = {});

void to_json(nlohmann::json& j, const KbfModel& model);
void from_json(const nlohmann::json& j, KbfModel& model);

}  // namespace mkbf
