#include "mkbf/json_eigen.hpp"

#include "mkbf/errors.hpp"

namespace mkbf {

using Eigen::Index;

namespace {

template <typename Matrix, typename Entry>
nlohmann::json rows_to_json(const Matrix& m, Entry entry) {
    auto out = nlohmann::json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        auto row = nlohmann::json::array();
        for (Index k = 0; k < m.cols(); ++k) row.push_back(entry(m(i, k)));
        out.push_back(std::move(row));
    }
    return out;
}

template <typename Matrix, typename Entry>
Matrix rows_from_json(const nlohmann::json& j, Entry entry) {
    if (!j.is_array()) throw InvalidArgument("expected a nested array for a matrix");
    const auto rows = static_cast<Index>(j.size());
    const Index cols = rows > 0 ? static_cast<Index>(j.at(0).size()) : 0;
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        const auto& row = j.at(static_cast<std::size_t>(i));
        if (static_cast<Index>(row.size()) != cols)
            throw InvalidArgument("ragged matrix in JSON input");
        for (Index k = 0; k < cols; ++k) m(i, k) = entry(row.at(static_cast<std::size_t>(k)));
    }
    return m;
}

}  // namespace

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    return rows_to_json(m, [](double v) { return v; });
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    return rows_from_json<Eigen::MatrixXd>(j, [](const nlohmann::json& v) { return v.get<double>(); });
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
    auto out = nlohmann::json::array();
    for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    Eigen::VectorXd v(static_cast<Index>(j.size()));
    for (Index i = 0; i < v.size(); ++i) v[i] = j.at(static_cast<std::size_t>(i)).get<double>();
    return v;
}

nlohmann::json complex_to_json(std::complex<double> c) { return {c.real(), c.imag()}; }

std::complex<double> complex_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) throw InvalidArgument("complex number must be [re, im]");
    return {j[0].get<double>(), j[1].get<double>()};
}

nlohmann::json complex_matrix_to_json(const Eigen::MatrixXcd& m) {
    return rows_to_json(m, [](std::complex<double> v) { return complex_to_json(v); });
}

Eigen::MatrixXcd complex_matrix_from_json(const nlohmann::json& j) {
    return rows_from_json<Eigen::MatrixXcd>(j, complex_from_json);
}

nlohmann::json complex_vector_to_json(const Eigen::VectorXcd& v) {
    auto out = nlohmann::json::array();
    for (Index i = 0; i < v.size(); ++i) out.push_back(complex_to_json(v[i]));
    return out;
}

Eigen::VectorXcd complex_vector_from_json(const nlohmann::json& j) {
    Eigen::VectorXcd v(static_cast<Index>(j.size()));
    for (Index i = 0; i < v.size(); ++i) v[i] = complex_from_json(j.at(static_cast<std::size_t>(i)));
    return v;
}

}  // namespace mkbf
