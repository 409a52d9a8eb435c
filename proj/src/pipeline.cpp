#include "mkbf/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <limits>

#include "mkbf/errors.hpp"
#include "mkbf/kbf_runtime.hpp"

namespace mkbf {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

TruncationRequest parse_truncation(const std::string& text) {
    TruncationRequest req;
    if (text == "auto") return req;
    if (text == "rank") {
        req.mode = TruncationRequest::Mode::Rank;
        return req;
    }
    if (text == "validate") {
        req.mode = TruncationRequest::Mode::Validate;
        return req;
    }
    std::size_t r = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), r);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || r == 0)
        throw InvalidArgument("truncation must be auto, rank, validate or a positive integer, got '" +
                              text + "'");
    req.mode = TruncationRequest::Mode::Fixed;
    req.order = r;
    return req;
}

std::string to_string(const TruncationRequest& request) {
    switch (request.mode) {
        case TruncationRequest::Mode::Auto: return "auto";
        case TruncationRequest::Mode::Rank: return "rank";
        case TruncationRequest::Mode::Validate: return "validate";
        case TruncationRequest::Mode::Fixed: return std::to_string(request.order);
    }
    return "auto";
}

bool prefer_low_rank(KbfForm form, std::size_t r, std::size_t q, std::size_t m) {
    // Implicit low-rank: (m+2) r q per step against (m+1) q^2 plus a q x q solve.
    if (form == KbfForm::Implicit) return r < q;
    return r * (m + 2) < (m + 1) * q;
}

double open_loop_error(const KbfModel& model, const TrajectoryDataset& data, DerKind kind) {
    if (data.segments.empty()) throw EmptyDataError("no segments to evaluate");
    const Index row = output_row(kind);
    double sum = 0.0;
    for (const auto& seg : data.segments) {
        try {
            const MatrixXd X = rollout(model, seg.states.col(0), seg.inputs);
            const double rms = std::sqrt(
                (X.middleRows(row, 2) - seg.states.middleRows(row, 2)).colwise().squaredNorm().mean());
            if (!std::isfinite(rms)) return std::numeric_limits<double>::infinity();
            sum += rms;
        } catch (const Error&) {
            return std::numeric_limits<double>::infinity();
        }
    }
    return sum / static_cast<double>(data.segments.size());
}

double final_offset(const KbfModel& model, const TrajectoryDataset& data, DerKind kind,
                    std::size_t window) {
    if (data.segments.empty()) throw EmptyDataError("no segments to evaluate");
    const Index row = output_row(kind);
    double sum = 0.0;
    for (const auto& seg : data.segments) {
        try {
            const MatrixXd X = rollout(model, seg.states.col(0), seg.inputs);
            const Index w = std::min<Index>(static_cast<Index>(window), X.cols());
            const double off = (X.middleRows(row, 2).rightCols(w) -
                                seg.states.middleRows(row, 2).rightCols(w))
                                   .colwise()
                                   .norm()
                                   .mean();
            if (!std::isfinite(off)) return std::numeric_limits<double>::infinity();
            sum += off;
        } catch (const Error&) {
            return std::numeric_limits<double>::infinity();
        }
    }
    return sum / static_cast<double>(data.segments.size());
}

namespace {

KbfModel truncated(const KbfFactorization& f, KbfForm form, std::size_t r, std::size_t q,
                   std::size_t m) {
    return f.model(r, r < q && prefer_low_rank(form, r, q, m));
}

}  // namespace

TrainedModel train_model(const TrajectoryDataset& data, const TrainOptions& options,
                         const TrajectoryDataset* validation) {
    const auto dict = build_monomial_dictionary(data.n_states, options.degree);
    const DataMatrices dm = assemble_data_matrices(data, dict, options.form);
    const KbfFactorization f(dm, options.regression);
    const std::size_t q = dm.q();

    TrainedModel out;
    out.rank = f.rank();
    out.suggestion = suggest_truncation_order(f);

    std::size_t r = 0;
    switch (options.truncation.mode) {
        case TruncationRequest::Mode::Auto: r = out.suggestion.r; break;
        case TruncationRequest::Mode::Rank: r = f.rank(); break;
        case TruncationRequest::Mode::Fixed: r = options.truncation.order; break;
        case TruncationRequest::Mode::Validate: {
            if (!validation) throw InvalidArgument("validation truncation needs validation data");
            const std::size_t n = std::max<std::size_t>(1, options.validation_grid);
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t k = 1; k <= n; ++k) {
                const std::size_t cand = std::max<std::size_t>(1, (f.rank() * k + n / 2) / n);
                const double err =
                    open_loop_error(truncated(f, options.form, cand, q, dm.m), *validation, options.kind);
                out.validation.emplace_back(cand, err);
                if (err < best) {
                    best = err;
                    r = cand;
                }
            }
            if (r == 0) r = f.rank();
            break;
        }
    }
    if (r > f.max_order())
        throw InvalidArgument("truncation order " + std::to_string(r) + " exceeds the maximum " +
                              std::to_string(f.max_order()));
    out.model = truncated(f, options.form, r, q, dm.m);
    return out;
}

GridState state_at_start(const SimulationResult& result, const SystemConfig& sys) {
    GridState s;
    for (const auto& d : result.der_states) s.ders.push_back(d.col(0));
    const Index n_p2 = static_cast<Index>(sys.network.P2.size());
    s.V_P2 = result.V.col(0).tail(n_p2);
    return s;
}

LongTable spectrum_table(const VectorXcd& pre, const VectorXcd& post) {
    LongTable table;
    auto add = [&](const VectorXcd& v, const std::string& name) {
        const VectorXd idx = VectorXd::LinSpaced(v.size(), 1.0, static_cast<double>(v.size()));
        table.add(name + "_real", idx, v.real());
        table.add(name + "_imag", idx, v.imag());
    };
    add(pre, "pre");
    add(post, "post");
    return table;
}

}  // namespace mkbf
