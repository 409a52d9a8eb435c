#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace mkbf {

/// Ordered set of monomials x^e with total degree <= max_degree.
///
/// The constant monomial comes first, followed by the monomials of degree 1, 2, ...
/// Within a degree the exponent tuples are in descending lexicographic order, so for
/// two states and degree 2 the order is 1, x1, x2, x1^2, x1 x2, x2^2.
class ObservableDictionary {
public:
    ObservableDictionary() = default;

    std::size_t n_states() const noexcept { return n_states_; }
    std::size_t max_degree() const noexcept { return max_degree_; }
    std::size_t size() const noexcept { return exponents_.size(); }
    const std::vector<std::vector<int>>& exponents() const noexcept { return exponents_; }

    /// Position of the monomial x_i within the dictionary.
    std::size_t linear_index(std::size_t state) const { return linear_index_.at(state); }

    friend bool operator==(const ObservableDictionary&, const ObservableDictionary&) = default;

    friend ObservableDictionary build_monomial_dictionary(std::size_t, std::size_t);
    friend ObservableDictionary dictionary_from_exponents(std::size_t, std::size_t,
                                                          std::vector<std::vector<int>>);

private:
    std::size_t n_states_ = 0;
    std::size_t max_degree_ = 0;
    std::vector<std::vector<int>> exponents_;
    std::vector<std::size_t> linear_index_;
};

ObservableDictionary build_monomial_dictionary(std::size_t n_states, std::size_t max_degree);

/// Rebuilds a dictionary from stored exponents, validating every invariant.
ObservableDictionary dictionary_from_exponents(std::size_t n_states, std::size_t max_degree,
                                               std::vector<std::vector<int>> exponents);

/// T(x): evaluates every monomial of the dictionary at x.
Eigen::VectorXd lift(const ObservableDictionary& dict, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Column-wise lift of a state matrix (n_states x N) into (q x N).
Eigen::MatrixXd lift_columns(const ObservableDictionary& dict,
                             const Eigen::Ref<const Eigen::MatrixXd>& states);

/// Selection matrix C^x (n_states x q) with C^x T(x) = x.
Eigen::MatrixXd state_extractor(const ObservableDictionary& dict);

/// binomial(n + d, d), the dictionary size including the constant term.
std::size_t monomial_count(std::size_t n_states, std::size_t max_degree);

void to_json(nlohmann::json& j, const ObservableDictionary& dict);
void from_json(const nlohmann::json& j, ObservableDictionary& dict);

}  // namespace mkbf
