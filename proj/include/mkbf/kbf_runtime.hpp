#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "mkbf/koopman_ident.hpp"

namespace mkbf {

constexpr double kDivergenceNorm = 1e12;

/// z0 = P_pinv T(x0), or T(x0) for low-rank models.
Eigen::VectorXd initial_lift(const KbfModel& model, const Eigen::Ref<const Eigen::VectorXd>& x0);

/// z_{k+1} = A z_k + sum_i u_i B_i z_k (low-rank models: see KbfModel). `step` only labels errors.
Eigen::VectorXd step_explicit(const KbfModel& model, const Eigen::Ref<const Eigen::VectorXd>& z,
                              const Eigen::Ref<const Eigen::VectorXd>& u, std::size_t step = 0);

/// Solves (I - sum_i u_i B_i) z_{k+1} = A z_k.
Eigen::VectorXd step_implicit(const KbfModel& model, const Eigen::Ref<const Eigen::VectorXd>& z,
                              const Eigen::Ref<const Eigen::VectorXd>& u, std::size_t step = 0);

/// x = C^x P z (C^x z for low-rank models).
Eigen::VectorXd reconstruct_state(const KbfModel& model, const Eigen::Ref<const Eigen::VectorXd>& z);

/// Reusable stepping workspace bound to one model. The model must outlive the stepper.
///
/// Implicit steps reuse the LU factor from an earlier input and refine the solution against
/// the current matrix; the factor is recomputed when refinement stalls.
/// Explicit models may name `held` inputs that change rarely; their terms are folded into the
/// drift matrix, which is rebuilt whenever one of them changes.
class KbfStepper {
public:
    explicit KbfStepper(const KbfModel& model, std::vector<Eigen::Index> held = {});

    const KbfModel& model() const noexcept { return *model_; }

    /// Advances z in place with the model's own form.
    void advance(Eigen::VectorXd& z, const Eigen::Ref<const Eigen::VectorXd>& u, std::size_t step);

    Eigen::VectorXd reconstruct(const Eigen::Ref<const Eigen::VectorXd>& z) const {
        return recon_ * z;
    }

private:
    const KbfModel* model_;
    Eigen::MatrixXd recon_;
    Eigen::MatrixXd work_;
    Eigen::MatrixXd stack_;
    Eigen::VectorXd stacked_;
    Eigen::VectorXd rhs_;
    Eigen::VectorXd coef_;
    Eigen::MatrixXd shift_;  // [M_1; ...; M_m] of the implicit system (I - sum u_i M_i) s = b
    Eigen::VectorXd shifted_, sol_, corr_, res_;
    Eigen::VectorXd lu_input_;
    std::vector<Eigen::Index> held_, free_;
    Eigen::VectorXd held_value_;
    bool factored_ = false;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;

    void fold(const Eigen::Ref<const Eigen::VectorXd>& u);
    void factor(const Eigen::Ref<const Eigen::VectorXd>& u);
    void solve_shifted(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::VectorXd& b);
};

/// Open-loop rollout: inputs column k drives the step from sample k-1 to k.
/// Returns the reconstructed states, one column per sample (column 0 is x0 reconstructed).
Eigen::MatrixXd rollout(const KbfModel& model, const Eigen::Ref<const Eigen::VectorXd>& x0,
                        const Eigen::Ref<const Eigen::MatrixXd>& inputs);

}  // namespace mkbf
