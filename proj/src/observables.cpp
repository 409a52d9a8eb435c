#include "mkbf/observables.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "mkbf/errors.hpp"

namespace mkbf {

namespace {

// Every exponent vector of total degree `degree`, in descending lexicographic order.
std::vector<std::vector<int>> exponents_of_degree(std::size_t n, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> current(n, 0);
    std::function<void(std::size_t, int)> recurse = [&](std::size_t pos, int remaining) {
        if (pos + 1 == n) {
            current[pos] = remaining;
            out.push_back(current);
            return;
        }
        for (int e = remaining; e >= 0; --e) {
            current[pos] = e;
            recurse(pos + 1, remaining - e);
        }
        current[pos] = 0;
    };
    recurse(0, degree);
    return out;
}

std::vector<std::size_t> locate_linear_terms(const std::vector<std::vector<int>>& exponents,
                                             std::size_t n) {
    std::vector<std::size_t> index(n, exponents.size());
    for (std::size_t j = 0; j < exponents.size(); ++j) {
        const auto& e = exponents[j];
        if (std::accumulate(e.begin(), e.end(), 0) != 1) continue;
        const auto state = static_cast<std::size_t>(std::find(e.begin(), e.end(), 1) - e.begin());
        index[state] = j;
    }
    return index;
}

}  // namespace

std::size_t monomial_count(std::size_t n_states, std::size_t max_degree) {
    // binomial(n + d, d) computed incrementally; exact for the sizes used here.
    std::size_t result = 1;
    for (std::size_t k = 1; k <= max_degree; ++k) result = result * (n_states + k) / k;
    return result;
}

ObservableDictionary build_monomial_dictionary(std::size_t n_states, std::size_t max_degree) {
    if (n_states == 0) throw InvalidArgument("dictionary needs at least one state");
    if (max_degree == 0) throw InvalidArgument("dictionary degree must be at least 1");

    ObservableDictionary dict;
    dict.n_states_ = n_states;
    dict.max_degree_ = max_degree;
    dict.exponents_.reserve(monomial_count(n_states, max_degree));
    for (std::size_t d = 0; d <= max_degree; ++d) {
        auto block = exponents_of_degree(n_states, static_cast<int>(d));
        dict.exponents_.insert(dict.exponents_.end(), block.begin(), block.end());
    }
    dict.linear_index_ = locate_linear_terms(dict.exponents_, n_states);
    return dict;
}

ObservableDictionary dictionary_from_exponents(std::size_t n_states, std::size_t max_degree,
                                               std::vector<std::vector<int>> exponents) {
    auto reference = build_monomial_dictionary(n_states, max_degree);
    if (exponents != reference.exponents_)
        throw InvalidArgument("stored exponents do not match the graded-lex monomial basis for n=" +
                              std::to_string(n_states) + ", d=" + std::to_string(max_degree));
    return reference;
}

Eigen::VectorXd lift(const ObservableDictionary& dict, const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (static_cast<std::size_t>(x.size()) != dict.n_states())
        throw InvalidArgument("lift: state has length " + std::to_string(x.size()) + ", expected " +
                              std::to_string(dict.n_states()));
    const auto& exps = dict.exponents();
    Eigen::VectorXd out(static_cast<Eigen::Index>(exps.size()));
    for (std::size_t j = 0; j < exps.size(); ++j) {
        double value = 1.0;
        for (std::size_t i = 0; i < exps[j].size(); ++i)
            for (int p = 0; p < exps[j][i]; ++p) value *= x[static_cast<Eigen::Index>(i)];
        out[static_cast<Eigen::Index>(j)] = value;
    }
    return out;
}

Eigen::MatrixXd lift_columns(const ObservableDictionary& dict,
                             const Eigen::Ref<const Eigen::MatrixXd>& states) {
    if (static_cast<std::size_t>(states.rows()) != dict.n_states())
        throw InvalidArgument("lift_columns: state matrix has " + std::to_string(states.rows()) +
                              " rows, expected " + std::to_string(dict.n_states()));
    Eigen::MatrixXd out(static_cast<Eigen::Index>(dict.size()), states.cols());
    for (Eigen::Index k = 0; k < states.cols(); ++k) out.col(k) = lift(dict, states.col(k));
    return out;
}

Eigen::MatrixXd state_extractor(const ObservableDictionary& dict) {
    const auto n = static_cast<Eigen::Index>(dict.n_states());
    Eigen::MatrixXd cx = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(dict.size()));
    for (Eigen::Index i = 0; i < n; ++i)
        cx(i, static_cast<Eigen::Index>(dict.linear_index(static_cast<std::size_t>(i)))) = 1.0;
    return cx;
}

void to_json(nlohmann::json& j, const ObservableDictionary& dict) {
    j = nlohmann::json{{"n_states", dict.n_states()},
                       {"max_degree", dict.max_degree()},
                       {"exponents", dict.exponents()}};
}

void from_json(const nlohmann::json& j, ObservableDictionary& dict) {
    dict = dictionary_from_exponents(j.at("n_states").get<std::size_t>(),
                                     j.at("max_degree").get<std::size_t>(),
                                     j.at("exponents").get<std::vector<std::vector<int>>>());
}

}  // namespace mkbf
