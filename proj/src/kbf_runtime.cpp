#include "mkbf/kbf_runtime.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mkbf/errors.hpp"

namespace mkbf {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void check_input(const KbfModel& model, Index u_size) {
    if (static_cast<std::size_t>(u_size) != model.m)
        throw InvalidArgument("input has length " + std::to_string(u_size) + ", model expects " +
                              std::to_string(model.m));
}

void check_state(const KbfModel& model, Index z_size) {
    if (static_cast<std::size_t>(z_size) != model.state_dim())
        throw InvalidArgument("lifted state has length " + std::to_string(z_size) +
                              ", model expects " + std::to_string(model.state_dim()));
}

void check_finite(const VectorXd& z, std::size_t step) {
    if (!z.allFinite()) throw DivergenceError(step, "non-finite lifted state");
    const double norm = z.norm();
    if (norm > kDivergenceNorm)
        throw DivergenceError(step, "lifted state norm " + std::to_string(norm));
}

void check_rcond(const Eigen::PartialPivLU<MatrixXd>& lu) {
    const double rc = lu.rcond();
    if (!(rc > std::numeric_limits<double>::epsilon())) throw ImplicitSolveError(rc);
}

// Cheaper per-step test: smallest over largest pivot magnitude of the factor.
void check_pivots(const Eigen::PartialPivLU<MatrixXd>& lu) {
    const auto d = lu.matrixLU().diagonal().cwiseAbs();
    const double ratio = d.size() ? d.minCoeff() / d.maxCoeff() : 1.0;
    if (!(ratio > std::numeric_limits<double>::epsilon())) throw ImplicitSolveError(ratio);
}

}  // namespace

VectorXd initial_lift(const KbfModel& model, const Eigen::Ref<const VectorXd>& x0) {
    const VectorXd t = lift(model.dictionary, x0);
    if (model.low_rank()) return t;
    return model.P_pinv * t;
}

VectorXd step_explicit(const KbfModel& model, const Eigen::Ref<const VectorXd>& z,
                       const Eigen::Ref<const VectorXd>& u, std::size_t step) {
    if (model.form != KbfForm::Explicit) throw InvalidArgument("model is not in explicit form");
    check_state(model, z.size());
    check_input(model, u.size());
    if (model.low_rank()) {
        VectorXd c = model.A * z;
        for (Index i = 0; i < u.size(); ++i)
            c.noalias() += u[i] * (model.B[static_cast<std::size_t>(i)] * z);
        VectorXd next = z + model.P * c;
        check_finite(next, step);
        return next;
    }
    VectorXd next = model.A * z;
    for (Index i = 0; i < u.size(); ++i) next.noalias() += u[i] * (model.B[static_cast<std::size_t>(i)] * z);
    check_finite(next, step);
    return next;
}

VectorXd step_implicit(const KbfModel& model, const Eigen::Ref<const VectorXd>& z,
                       const Eigen::Ref<const VectorXd>& u, std::size_t step) {
    if (model.form != KbfForm::Implicit) throw InvalidArgument("model is not in implicit form");
    check_state(model, z.size());
    check_input(model, u.size());
    if (model.low_rank()) {
        // (I - P K) z' = y with K = sum_i u_i B_i, solved through the r x r system (I - K P).
        const VectorXd y = z + model.P * (model.A * z);
        const auto r = model.P.cols();
        MatrixXd lhs = MatrixXd::Identity(r, r);
        VectorXd ky = VectorXd::Zero(r);
        for (Index i = 0; i < u.size(); ++i) {
            const auto& B = model.B[static_cast<std::size_t>(i)];
            lhs.noalias() -= u[i] * (B * model.P);
            ky.noalias() += u[i] * (B * y);
        }
        const Eigen::PartialPivLU<MatrixXd> lu(lhs);
        check_rcond(lu);
        VectorXd next = y + model.P * lu.solve(ky);
        check_finite(next, step);
        return next;
    }
    MatrixXd lhs = MatrixXd::Identity(model.A.rows(), model.A.cols());
    for (Index i = 0; i < u.size(); ++i) lhs -= u[i] * model.B[static_cast<std::size_t>(i)];
    const Eigen::PartialPivLU<MatrixXd> lu(lhs);
    check_rcond(lu);
    VectorXd next = lu.solve(model.A * z);
    check_finite(next, step);
    return next;
}

VectorXd reconstruct_state(const KbfModel& model, const Eigen::Ref<const VectorXd>& z) {
    check_state(model, z.size());
    if (model.low_rank()) return model.Cx * z;
    return model.Cx * (model.P * z);
}

KbfStepper::KbfStepper(const KbfModel& model, std::vector<Index> held)
    : model_(&model), recon_(model.reconstruction()), held_(std::move(held)) {
    const Index h = model.A.rows();
    const auto m = static_cast<Index>(model.B.size());
    const bool stack_all = model.form == KbfForm::Explicit;
    if (!held_.empty() && !stack_all) throw InvalidArgument("held inputs need an explicit model");
    for (Index i = 0; i < m; ++i) {
        if (std::count(held_.begin(), held_.end(), i) > 1)
            throw InvalidArgument("held input listed twice");
        if (std::find(held_.begin(), held_.end(), i) == held_.end()) free_.push_back(i);
    }
    if (free_.size() + held_.size() != static_cast<std::size_t>(m))
        throw InvalidArgument("held input index out of range");
    // Explicit: [A + sum_held u_i B_i; B_free...]. Low-rank implicit: [B_1; ...; B_m].
    const auto blocks = stack_all ? static_cast<Index>(free_.size()) + 1 : m;
    stack_.resize(blocks * h, model.A.cols());
    if (stack_all) {
        stack_.topRows(h) = model.A;
        Index row = h;
        for (auto i : free_) {
            stack_.middleRows(row, h) = model.B[static_cast<std::size_t>(i)];
            row += h;
        }
        held_value_ = VectorXd::Zero(static_cast<Index>(held_.size()));
    } else {
        for (Index i = 0; i < m; ++i) stack_.middleRows(i * h, h) = model.B[static_cast<std::size_t>(i)];
    }
    stacked_.resize(stack_.rows());
    coef_.resize(h);
    rhs_.resize(static_cast<Index>(model.state_dim()));
    if (model.form == KbfForm::Implicit) {
        // Dense: M_i = B_i. Low-rank: M_i = B_i P, acting on the r-dimensional correction.
        const Index n = model.low_rank() ? model.P.cols() : h;
        shift_.resize(m * n, n);
        for (Index i = 0; i < m; ++i) {
            const auto& B = model.B[static_cast<std::size_t>(i)];
            if (model.low_rank())
                shift_.middleRows(i * n, n).noalias() = B * model.P;
            else
                shift_.middleRows(i * n, n) = B;
        }
        work_.resize(n, n);
        shifted_.resize(m * n);
    }
}

void KbfStepper::fold(const Eigen::Ref<const VectorXd>& u) {
    bool same = true;
    for (std::size_t j = 0; j < held_.size(); ++j) same = same && u[held_[j]] == held_value_[static_cast<Index>(j)];
    if (same) return;
    const KbfModel& m = *model_;
    auto drift = stack_.topRows(m.A.rows());
    drift = m.A;
    for (std::size_t j = 0; j < held_.size(); ++j) {
        held_value_[static_cast<Index>(j)] = u[held_[j]];
        if (u[held_[j]] != 0.0) drift.noalias() += u[held_[j]] * m.B[static_cast<std::size_t>(held_[j])];
    }
}

void KbfStepper::factor(const Eigen::Ref<const VectorXd>& u) {
    const Index n = work_.rows();
    work_.setIdentity();
    for (Index i = 0; i < u.size(); ++i) work_.noalias() -= u[i] * shift_.middleRows(i * n, n);
    lu_.compute(work_);
    check_pivots(lu_);
    lu_input_ = u;
    factored_ = true;
}

void KbfStepper::solve_shifted(const Eigen::Ref<const VectorXd>& u, const VectorXd& b) {
    constexpr double kRefineTolerance = 1e-13;
    constexpr int kMaxRefinements = 8;
    constexpr int kRefactorAfter = 5;
    const Index n = work_.rows();
    if (!factored_) factor(u);
    sol_ = lu_.solve(b);
    if (lu_input_ == u) return;
    double previous = std::numeric_limits<double>::infinity();
    for (int it = 1;; ++it) {
        shifted_.noalias() = shift_ * sol_;
        res_ = b - sol_;
        for (Index i = 0; i < u.size(); ++i) res_.noalias() += u[i] * shifted_.segment(i * n, n);
        corr_ = lu_.solve(res_);
        sol_ += corr_;
        const double c = corr_.norm();
        if (c <= kRefineTolerance * sol_.norm()) {
            if (it >= kRefactorAfter) factored_ = false;
            return;
        }
        if (it >= kMaxRefinements || !(c < 0.25 * previous)) {
            factor(u);
            sol_ = lu_.solve(b);
            return;
        }
        previous = c;
    }
}

void KbfStepper::advance(VectorXd& z, const Eigen::Ref<const VectorXd>& u, std::size_t step) {
    const KbfModel& m = *model_;
    check_input(m, u.size());
    const Index h = m.A.rows();
    if (m.form == KbfForm::Explicit) {
        if (!held_.empty()) fold(u);
        stacked_.noalias() = stack_ * z;
        coef_ = stacked_.head(h);
        for (std::size_t j = 0; j < free_.size(); ++j)
            coef_.noalias() += u[free_[j]] * stacked_.segment(static_cast<Index>(j + 1) * h, h);
        if (m.low_rank())
            z.noalias() += m.P * coef_;
        else
            z.swap(coef_);
    } else if (m.low_rank()) {
        // (I - P K) z' = y with y = z + P A z and K = sum_i u_i B_i, via the r x r system (I - K P).
        coef_.noalias() = m.A * z;
        rhs_ = z;
        rhs_.noalias() += m.P * coef_;
        stacked_.noalias() = stack_ * rhs_;
        coef_.setZero();
        for (Index i = 0; i < u.size(); ++i) coef_.noalias() += u[i] * stacked_.segment(i * h, h);
        solve_shifted(u, coef_);
        z = rhs_;
        z.noalias() += m.P * sol_;
    } else {
        rhs_.noalias() = m.A * z;
        solve_shifted(u, rhs_);
        z = sol_;
    }
    check_finite(z, step);
}

MatrixXd rollout(const KbfModel& model, const Eigen::Ref<const VectorXd>& x0,
                 const Eigen::Ref<const MatrixXd>& inputs) {
    KbfStepper stepper(model);
    VectorXd z = initial_lift(model, x0);
    MatrixXd out(model.Cx.rows(), inputs.cols());
    out.col(0) = stepper.reconstruct(z);
    for (Index k = 1; k < inputs.cols(); ++k) {
        stepper.advance(z, inputs.col(k), static_cast<std::size_t>(k));
        out.col(k) = stepper.reconstruct(z);
    }
    return out;
}

}  // namespace mkbf
