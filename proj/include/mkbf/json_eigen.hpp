#pragma once

#include <complex>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace mkbf {

// Matrices are stored row-major as nested arrays; complex entries as [re, im].

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);

nlohmann::json complex_to_json(std::complex<double> c);
std::complex<double> complex_from_json(const nlohmann::json& j);

nlohmann::json complex_matrix_to_json(const Eigen::MatrixXcd& m);
Eigen::MatrixXcd complex_matrix_from_json(const nlohmann::json& j);

nlohmann::json complex_vector_to_json(const Eigen::VectorXcd& v);
Eigen::VectorXcd complex_vector_from_json(const nlohmann::json& j);

}  // namespace mkbf
