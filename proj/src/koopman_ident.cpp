#include "mkbf/koopman_ident.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "mkbf/errors.hpp"
#include "mkbf/json_eigen.hpp"

namespace mkbf {

using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

std::string to_string(KbfForm form) { return form == KbfForm::Explicit ? "explicit" : "implicit"; }

KbfForm parse_form(const std::string& text) {
    if (text == "explicit") return KbfForm::Explicit;
    if (text == "implicit") return KbfForm::Implicit;
    throw InvalidArgument("unknown model form '" + text + "'");
}

std::string to_string(Regression regression) {
    return regression == Regression::Snapshot ? "snapshot" : "increment";
}

Regression parse_regression(const std::string& text) {
    if (text == "snapshot") return Regression::Snapshot;
    if (text == "increment") return Regression::Increment;
    throw InvalidArgument("unknown regression target '" + text + "'");
}

void TrajectoryDataset::validate() const {
    if (!(dt > 0.0)) throw InvalidArgument("dataset sampling step must be positive");
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const auto& seg = segments[s];
        const auto n = static_cast<std::size_t>(seg.states.rows());
        if (n != n_states)
            throw InvalidArgument("segment " + std::to_string(s) + " has " + std::to_string(n) +
                                  " states, expected " + std::to_string(n_states));
        if (static_cast<std::size_t>(seg.inputs.rows()) != n_inputs)
            throw InvalidArgument("segment " + std::to_string(s) + " has the wrong input count");
        if (seg.inputs.cols() != seg.states.cols())
            throw InvalidArgument("segment " + std::to_string(s) +
                                  " has mismatched state and input sample counts");
        if (seg.times.size() != 0 && seg.times.size() != seg.states.cols())
            throw InvalidArgument("segment " + std::to_string(s) + " has a wrong time vector");
        for (Index k = 1; k < seg.times.size(); ++k) {
            const double h = seg.times[k] - seg.times[k - 1];
            if (std::abs(h - dt) > 1e-9 * std::max(1.0, dt) + 1e-12)
                throw InvalidArgument("segment " + std::to_string(s) +
                                      " is not uniformly sampled at the dataset step");
        }
    }
}

DataMatrices assemble_data_matrices(const TrajectoryDataset& data, const ObservableDictionary& dict,
                                    KbfForm form) {
    data.validate();
    if (dict.n_states() != data.n_states)
        throw InvalidArgument("dictionary state count does not match the dataset");

    DataMatrices dm;
    dm.dictionary = dict;
    dm.form = form;
    dm.dt = data.dt;
    dm.m = data.n_inputs;

    Index columns = 0;
    for (const auto& seg : data.segments) {
        if (seg.samples() < 2)
            ++dm.skipped_segments;
        else
            columns += static_cast<Index>(seg.samples()) - 1;
    }
    if (columns == 0) throw EmptyDataError("no trajectory segment has at least two samples");

    const auto q = static_cast<Index>(dict.size());
    const auto m = static_cast<Index>(dm.m);
    dm.omega.resize(q * (m + 1), columns);
    dm.X2.resize(q, columns);

    Index col = 0;
    for (const auto& seg : data.segments) {
        if (seg.samples() < 2) continue;
        const MatrixXd lifted = lift_columns(dict, seg.states);
        const Index n = lifted.cols() - 1;
        dm.omega.block(0, col, q, n) = lifted.leftCols(n);
        dm.X2.middleCols(col, n) = lifted.rightCols(n);
        const auto base = form == KbfForm::Explicit ? lifted.leftCols(n) : lifted.rightCols(n);
        for (Index i = 0; i < m; ++i)
            dm.omega.block(q * (i + 1), col, q, n) =
                base * seg.inputs.row(i).tail(n).asDiagonal();
        col += n;
    }
    return dm;
}

namespace {

struct ThinSvd {
    MatrixXd U;     // p x k
    VectorXd s;     // k
    MatrixXd X2V;   // q x k, target times the right singular vectors
    double x2_out_of_range_sq = 0.0;  // squared norm of the target outside the row space of Omega
};

// SVD of Omega together with Y V for the regression target Y, without forming the M x k matrix V.
//
// With a QR factorization [Omega^T | Y^T] = Q [R11 R12; 0 R22], Omega = R11^T Q1^T and
// Y = R12^T Q1^T + R22^T Q2^T, so the SVD R11^T = U S W^T gives V = Q1 W and Y V = R12^T W.
ThinSvd omega_svd(const DataMatrices& dm, Regression target, bool want_vectors) {
    const Index p = dm.omega.rows();
    const Index q = dm.X2.rows();
    const Index M = dm.omega.cols();
    ThinSvd out;
    const unsigned options = want_vectors ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : 0u;
    const auto fill_target = [&](auto&& dst) {
        if (target == Regression::Snapshot)
            dst = dm.X2;
        else
            dst = dm.X2 - dm.X1();
    };

    if (M > p + q) {
        const Index extra = want_vectors ? q : 0;
        MatrixXd stacked(M, p + extra);
        stacked.leftCols(p) = dm.omega.transpose();
        if (want_vectors) {
            MatrixXd Y(q, M);
            fill_target(Y);
            stacked.rightCols(q) = Y.transpose();
        }
        Eigen::HouseholderQR<Eigen::Ref<MatrixXd>> qr(stacked);
        const MatrixXd R = qr.matrixQR().topRows(p + extra).triangularView<Eigen::Upper>();
        const MatrixXd R11t = R.topLeftCorner(p, p).transpose();
        Eigen::BDCSVD<MatrixXd> svd(R11t, options);
        out.s = svd.singularValues();
        if (want_vectors) {
            out.U = svd.matrixU();
            out.X2V = R.topRightCorner(p, q).transpose() * svd.matrixV();
            out.x2_out_of_range_sq = R.bottomRightCorner(q, q).squaredNorm();
        }
        return out;
    }

    Eigen::BDCSVD<MatrixXd> svd(dm.omega, options);
    out.s = svd.singularValues();
    if (want_vectors) {
        MatrixXd Y(q, M);
        fill_target(Y);
        out.U = svd.matrixU();
        out.X2V = Y * svd.matrixV();
        // Component of the target orthogonal to the row space spanned by the thin V.
        const MatrixXd proj = out.X2V * svd.matrixV().transpose();
        out.x2_out_of_range_sq = (Y - proj).squaredNorm();
    }
    return out;
}

std::complex<double> continuous_eigenvalue(std::complex<double> mu, double dt) {
    if (mu == std::complex<double>(0.0, 0.0))
        return {-std::numeric_limits<double>::infinity(), 0.0};
    return std::log(mu) / dt;
}

// Order: descending real part, conjugate pairs adjacent with positive imaginary part first.
std::vector<Index> spectrum_order(const VectorXcd& cont) {
    std::vector<Index> idx(static_cast<std::size_t>(cont.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    const auto key_re = [&](Index i) {
        const double re = cont[i].real();
        return std::isfinite(re) ? re : -std::numeric_limits<double>::infinity();
    };
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
        const double ra = key_re(a), rb = key_re(b);
        if (ra != rb) return ra > rb;
        const double ia = std::abs(cont[a].imag()), ib = std::abs(cont[b].imag());
        if (ia != ib) return ia < ib;
        return cont[a].imag() > cont[b].imag();
    });
    return idx;
}

double frobenius_ratio(const MatrixXcd& num, const MatrixXd& den) {
    const double d = den.norm();
    return d > 0.0 ? num.norm() / d : num.norm();
}

}  // namespace

std::size_t numerical_rank(const VectorXd& singular_values, std::size_t rows, std::size_t cols) {
    if (singular_values.size() == 0 || singular_values[0] <= 0.0) return 0;
    const double tol = std::numeric_limits<double>::epsilon() *
                       static_cast<double>(std::max(rows, cols)) * singular_values[0];
    return static_cast<std::size_t>((singular_values.array() > tol).count());
}

VectorXd omega_singular_values(const DataMatrices& dm) {
    return omega_svd(dm, Regression::Snapshot, false).s;
}

KbfFactorization::KbfFactorization(const DataMatrices& dm, Regression regression)
    : form_(dm.form),
      regression_(regression),
      dt_(dm.dt),
      m_(dm.m),
      dictionary_(dm.dictionary),
      max_order_(std::min(static_cast<std::size_t>(dm.omega.rows()), dm.columns())) {
    if (dm.columns() == 0) throw EmptyDataError("data matrices are empty");
    ThinSvd svd = omega_svd(dm, regression, true);
    U_ = std::move(svd.U);
    s_ = std::move(svd.s);
    YV_ = std::move(svd.X2V);
    out_of_range_sq_ = svd.x2_out_of_range_sq;
    rank_ = numerical_rank(s_, static_cast<std::size_t>(dm.omega.rows()), dm.columns());
}

KbfModel KbfFactorization::model(std::size_t r, bool reduce) const {
    const auto q = static_cast<Index>(dictionary_.size());
    const auto m = static_cast<Index>(m_);
    if (r < 1 || r > max_order_)
        throw InvalidArgument("truncation order " + std::to_string(r) + " outside [1, " +
                              std::to_string(max_order_) + "]");
    const double s1 = s_[0];
    const auto ri = static_cast<Index>(r);
    for (Index i = 0; i < ri; ++i)
        if (!(s_[i] > std::numeric_limits<double>::epsilon() * s1))
            throw IllConditionedError(static_cast<std::size_t>(i), s_[i], s1);

    const auto Ur = U_.leftCols(ri);
    const VectorXd inv_s = s_.head(ri).cwiseInverse();
    const MatrixXd X2V = YV_.leftCols(ri);

    KbfModel model;
    model.form = form_;
    model.regression = regression_;
    model.dt = dt_;
    model.q = dictionary_.size();
    model.r = r;
    model.m = m_;
    model.reduced = reduce;
    model.dictionary = dictionary_;
    model.Cx = state_extractor(dictionary_);
    model.singular_values = s_;

    // Residual of the truncated least-squares fit, Y - G Omega = Y (I - V~ V~^T).
    const double discarded = YV_.rightCols(YV_.cols() - ri).squaredNorm();
    model.residual = std::sqrt(discarded + out_of_range_sq_);

    if (!reduce) {
        const MatrixXd left = X2V * inv_s.asDiagonal();  // q x r
        model.A = left * Ur.topRows(q).transpose();
        if (regression_ == Regression::Increment) model.A += MatrixXd::Identity(q, q);
        for (Index i = 0; i < m; ++i)
            model.B.push_back(left * Ur.middleRows(q * (i + 1), q).transpose());
        model.P = MatrixXd::Identity(q, q);
        model.P_pinv = MatrixXd::Identity(q, q);
        return model;
    }

    if (regression_ == Regression::Increment) {
        model.A = inv_s.asDiagonal() * Ur.topRows(q).transpose();
        for (Index i = 0; i < m; ++i)
            model.B.push_back(inv_s.asDiagonal() * Ur.middleRows(q * (i + 1), q).transpose());
        model.P = X2V;
        model.P_pinv = MatrixXd::Identity(q, q);
        const Eigen::ColPivHouseholderQR<MatrixXd> qr(X2V);
        if (qr.rank() < ri)
            model.warnings.push_back("linear consistency: P has column rank " +
                                     std::to_string(qr.rank()) + " < r = " + std::to_string(r));
        return model;
    }

    model.A = inv_s.asDiagonal() * (Ur.topRows(q).transpose() * X2V);
    for (Index i = 0; i < m; ++i)
        model.B.push_back(inv_s.asDiagonal() * (Ur.middleRows(q * (i + 1), q).transpose() * X2V));
    model.P = X2V;
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(X2V);
    model.P_pinv = cod.pseudoInverse();
    if (cod.rank() < ri)
        model.warnings.push_back("linear consistency: P has column rank " +
                                 std::to_string(cod.rank()) + " < r = " + std::to_string(r));
    return model;
}

KbfModel solve_kbf(const DataMatrices& dm, std::size_t r, bool reduce, Regression regression) {
    const std::size_t max_r =
        std::min(static_cast<std::size_t>(dm.omega.rows()), static_cast<std::size_t>(dm.columns()));
    if (r < 1 || r > max_r)
        throw InvalidArgument("truncation order " + std::to_string(r) + " outside [1, " +
                              std::to_string(max_r) + "]");
    return KbfFactorization(dm, regression).model(r, reduce);
}

VectorXcd sort_continuous_spectrum(const VectorXcd& discrete, double dt) {
    VectorXcd cont(discrete.size());
    for (Index i = 0; i < discrete.size(); ++i) cont[i] = continuous_eigenvalue(discrete[i], dt);
    const auto order = spectrum_order(cont);
    VectorXcd sorted(cont.size());
    for (Index i = 0; i < cont.size(); ++i) sorted[i] = cont[order[static_cast<std::size_t>(i)]];
    return sorted;
}

KbfModel dense_form(KbfModel model) {
    if (!model.low_rank()) return model;
    const auto q = static_cast<Index>(model.q);
    MatrixXd A = MatrixXd::Identity(q, q) + model.P * model.A;
    model.A = std::move(A);
    for (auto& B : model.B) B = model.P * B;
    model.P = MatrixXd::Identity(q, q);
    model.P_pinv = MatrixXd::Identity(q, q);
    model.reduced = false;
    return model;
}

KbfModel eigen_analysis(KbfModel model) {
    const MatrixXd A = model.low_rank() ? dense_form(model).A : model.A;
    const MatrixXd P_pinv = model.low_rank() ? MatrixXd::Identity(A.rows(), A.rows()) : model.P_pinv;
    const Index n = A.rows();
    Eigen::EigenSolver<MatrixXd> es(A, true);
    if (es.info() != Eigen::Success) throw NonDiagonalizableError(
        std::numeric_limits<double>::infinity());

    const VectorXcd mu = es.eigenvalues();
    const MatrixXcd V = es.eigenvectors();
    VectorXcd cont(n);
    for (Index i = 0; i < n; ++i) cont[i] = continuous_eigenvalue(mu[i], model.dt);
    const auto order = spectrum_order(cont);

    MatrixXcd Vs(n, n);
    model.eigenvalues_discrete.resize(n);
    model.eigenvalues_continuous.resize(n);
    for (Index k = 0; k < n; ++k) {
        const Index i = order[static_cast<std::size_t>(k)];
        Vs.col(k) = V.col(i);
        model.eigenvalues_discrete[k] = mu[i];
        model.eigenvalues_continuous[k] = cont[i];
    }

    Eigen::JacobiSVD<MatrixXcd> sv(Vs);
    const auto& s = sv.singularValues();
    const double cond = s[n - 1] > 0.0 ? s[0] / s[n - 1] : std::numeric_limits<double>::infinity();
    if (!(cond <= kDefectiveConditionThreshold)) throw NonDiagonalizableError(cond);

    const MatrixXcd Wstar = Vs.partialPivLu().inverse();
    model.W = Wstar.adjoint();
    model.eigenfunction_coefficients = Wstar * P_pinv.cast<std::complex<double>>();
    model.has_eigen = true;

    const MatrixXcd check = Wstar * A.cast<std::complex<double>>() -
                            model.eigenvalues_discrete.asDiagonal() * Wstar;
    const double rel = frobenius_ratio(check, A);
    if (rel > 1e-8)
        model.warnings.push_back("left eigen relation residual " + std::to_string(rel));
    return model;
}

KbfModel canonical_transform(KbfModel model) {
    model = dense_form(std::move(model));
    if (!model.has_eigen) model = eigen_analysis(std::move(model));
    const Index n = model.A.rows();
    const MatrixXcd V = model.W.adjoint().partialPivLu().inverse();

    MatrixXd T(n, n);
    MatrixXd block = MatrixXd::Zero(n, n);
    for (Index k = 0; k < n;) {
        const auto mu = model.eigenvalues_discrete[k];
        const bool pair = std::abs(mu.imag()) > 0.0 && k + 1 < n &&
                          std::abs(model.eigenvalues_discrete[k + 1] - std::conj(mu)) <=
                              1e-10 * std::max(1.0, std::abs(mu));
        if (!pair) {
            T.col(k) = V.col(k).real();
            block(k, k) = mu.real();
            k += 1;
            continue;
        }
        // A v = mu v with mu = a + ib gives A [Re v, Im v] = [Re v, Im v] [[a, b], [-b, a]].
        const auto v = mu.imag() > 0.0 ? V.col(k) : V.col(k + 1);
        const double a = mu.real(), b = std::abs(mu.imag());
        T.col(k) = v.real();
        T.col(k + 1) = v.imag();
        block(k, k) = a;
        block(k, k + 1) = b;
        block(k + 1, k) = -b;
        block(k + 1, k + 1) = a;
        if (mu.imag() < 0.0) {
            std::swap(model.eigenvalues_discrete[k], model.eigenvalues_discrete[k + 1]);
            std::swap(model.eigenvalues_continuous[k], model.eigenvalues_continuous[k + 1]);
        }
        k += 2;
    }

    const auto lu = T.partialPivLu();
    const MatrixXd Tinv = lu.inverse();
    model.A = block;
    for (auto& B : model.B) B = Tinv * B * T;
    model.P = model.P * T;
    model.P_pinv = Tinv * model.P_pinv;
    model.W = (model.W.adjoint() * T.cast<std::complex<double>>()).adjoint();
    model.basis = model.canonical ? MatrixXd(model.basis * T) : T;
    model.basis_inv = model.canonical ? MatrixXd(Tinv * model.basis_inv) : Tinv;
    model.canonical = true;
    return model;
}

TruncationSuggestion truncation_from_spectrum(const VectorXcd& spectrum,
                                              const TruncationOptions& options) {
    TruncationSuggestion out;
    out.spectrum = spectrum;
    const Index n = spectrum.size();
    out.r = static_cast<std::size_t>(n);
    if (n < 4) {
        out.flagged = true;
        return out;
    }
    for (Index k = 1; k < n; ++k) {
        const auto lk = spectrum[k];
        if (!std::isfinite(lk.real())) break;
        const double delta = options.delta_factor * std::abs(spectrum[k - 1]);
        for (Index i = 0; i < k; ++i) {
            if (std::abs(spectrum[i]) <= delta) continue;
            for (Index j = i; j < k; ++j) {
                if (std::abs(spectrum[j]) <= delta) continue;
                if (std::abs(spectrum[i] + spectrum[j] - lk) <= delta) {
                    out.r = static_cast<std::size_t>(k);
                    out.repeat_index = static_cast<std::size_t>(k + 1);
                    out.pair_i = static_cast<std::size_t>(i + 1);
                    out.pair_j = static_cast<std::size_t>(j + 1);
                    return out;
                }
            }
        }
    }
    return out;
}

TruncationSuggestion suggest_truncation_order(const DataMatrices& dm,
                                              const TruncationOptions& options) {
    if (dm.columns() == 0) throw EmptyDataError("data matrices are empty");
    if (dm.q() < 4) {
        TruncationSuggestion out;
        out.r = dm.q();
        out.flagged = true;
        return out;
    }
    return suggest_truncation_order(KbfFactorization(dm), options);
}

TruncationSuggestion suggest_truncation_order(const KbfFactorization& factorization,
                                              const TruncationOptions& options) {
    const std::size_t rank = std::max<std::size_t>(1, factorization.rank());
    const KbfModel full = factorization.model(rank, false);
    if (full.q < 4) {
        TruncationSuggestion out;
        out.r = full.q;
        out.flagged = true;
        return out;
    }
    const VectorXcd mu = full.A.eigenvalues();
    auto out = truncation_from_spectrum(sort_continuous_spectrum(mu, full.dt), options);
    out.r = std::min(out.r, rank);
    return out;
}

void to_json(nlohmann::json& j, const KbfModel& model) {
    j = nlohmann::json::object();
    j["form"] = to_string(model.form);
    j["regression"] = to_string(model.regression);
    j["dt"] = model.dt;
    j["q"] = model.q;
    j["r"] = model.r;
    j["m"] = model.m;
    j["reduced"] = model.reduced;
    j["residual"] = model.residual;
    j["dictionary"] = model.dictionary;
    j["A"] = matrix_to_json(model.A);
    auto bs = nlohmann::json::array();
    for (const auto& B : model.B) bs.push_back(matrix_to_json(B));
    j["B"] = std::move(bs);
    j["P"] = matrix_to_json(model.P);
    j["P_pinv"] = matrix_to_json(model.P_pinv);
    j["Cx"] = matrix_to_json(model.Cx);
    j["singular_values"] = vector_to_json(model.singular_values);
    j["warnings"] = model.warnings;
    if (model.has_eigen) {
        j["eigenvalues_discrete"] = complex_vector_to_json(model.eigenvalues_discrete);
        j["eigenvalues_continuous"] = complex_vector_to_json(model.eigenvalues_continuous);
        j["W"] = complex_matrix_to_json(model.W);
        j["eigenfunction_coefficients"] = complex_matrix_to_json(model.eigenfunction_coefficients);
    }
    if (model.canonical) {
        j["basis"] = matrix_to_json(model.basis);
        j["basis_inv"] = matrix_to_json(model.basis_inv);
    }
}

void from_json(const nlohmann::json& j, KbfModel& model) {
    model = KbfModel{};
    model.form = parse_form(j.at("form").get<std::string>());
    model.regression = parse_regression(j.value("regression", std::string("snapshot")));
    model.dt = j.at("dt").get<double>();
    model.q = j.at("q").get<std::size_t>();
    model.r = j.at("r").get<std::size_t>();
    model.m = j.at("m").get<std::size_t>();
    model.reduced = j.at("reduced").get<bool>();
    model.residual = j.at("residual").get<double>();
    model.dictionary = j.at("dictionary").get<ObservableDictionary>();
    model.A = matrix_from_json(j.at("A"));
    for (const auto& b : j.at("B")) model.B.push_back(matrix_from_json(b));
    model.P = matrix_from_json(j.at("P"));
    model.P_pinv = matrix_from_json(j.at("P_pinv"));
    model.Cx = matrix_from_json(j.at("Cx"));
    model.singular_values = vector_from_json(j.at("singular_values"));
    model.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (j.contains("eigenvalues_discrete")) {
        model.has_eigen = true;
        model.eigenvalues_discrete = complex_vector_from_json(j.at("eigenvalues_discrete"));
        model.eigenvalues_continuous = complex_vector_from_json(j.at("eigenvalues_continuous"));
        model.W = complex_matrix_from_json(j.at("W"));
        model.eigenfunction_coefficients =
            complex_matrix_from_json(j.at("eigenfunction_coefficients"));
    }
    if (j.contains("basis")) {
        model.canonical = true;
        model.basis = matrix_from_json(j.at("basis"));
        model.basis_inv = matrix_from_json(j.at("basis_inv"));
    }

    const auto q = static_cast<Index>(model.q);
    const auto rows = static_cast<Index>(model.A.rows());
    const auto cols = model.low_rank() ? q : rows;
    if (model.A.cols() != cols || model.B.size() != model.m || model.dictionary.size() != model.q ||
        model.P.rows() != q || model.P.cols() != rows || model.P_pinv.cols() != q ||
        model.P_pinv.rows() != (model.low_rank() ? q : rows) || model.Cx.cols() != q)
        throw InvalidArgument("model file has inconsistent matrix shapes");
    for (const auto& B : model.B)
        if (B.rows() != rows || B.cols() != cols)
            throw InvalidArgument("model file has inconsistent input matrix shapes");
}

}  // namespace mkbf
