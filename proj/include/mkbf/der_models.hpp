#pragma once

#include <complex>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace mkbf {

constexpr int kDerStates = 10;
constexpr int kVfInputs = 2;   // node current injection [I^D, I^Q]
constexpr int kPqInputs = 4;   // [V^D, V^Q, P*, Q*]

using DerVector = Eigen::Matrix<double, kDerStates, 1>;

/// Grid-forming inverter. State x = [x1..x6, V_C^D, V_C^Q, I_L^D, I_L^Q].
struct VfParams {
    double kp_pll = 0.0, ki_pll = 0.0;
    double kp_v = 0.0, ki_v = 0.0;
    double kp_i = 0.0, ki_i = 0.0;
    double L = 0.0, R = 0.0, C = 0.0;
    double v_ref = 1.0;
    double omega = 1.0;

    void validate() const;
};

/// Grid-following inverter. State x = [x1..x6, V_C^D, V_C^Q, I_N^D, I_N^Q] where I_N is the
/// current injected into the node through the grid-side inductor.
struct PqParams {
    double kp_pll = 0.0, ki_pll = 0.0;
    double kp_pq = 0.0, ki_pq = 0.0;
    double kp_i = 0.0, ki_i = 0.0;
    double L = 0.0, R = 0.0, C = 0.0;
    double P_ref = 0.0, Q_ref = 0.0;
    double omega = 1.0;

    void validate() const;
};

/// Drift f(x).
DerVector vf_drift(const DerVector& x, const VfParams& p);
/// Input fields [g1 g2], 10 x 2.
Eigen::Matrix<double, kDerStates, kVfInputs> vf_input_fields(const DerVector& x, const VfParams& p);
/// f(x) + g1(x) u1 + g2(x) u2 with u the node current injection.
DerVector vf_derivative(const DerVector& x, const Eigen::Vector2d& u, const VfParams& p);

DerVector pq_drift(const DerVector& x, const PqParams& p);
/// Input fields for u = [V^D, V^Q, P*, Q*], 10 x 4.
Eigen::Matrix<double, kDerStates, kPqInputs> pq_input_fields(const DerVector& x, const PqParams& p);
/// Node voltage input; power references taken from the parameters.
DerVector pq_derivative(const DerVector& x, const Eigen::Vector2d& v_node, const PqParams& p);
DerVector pq_derivative(const DerVector& x, const Eigen::Vector4d& u, const PqParams& p);

/// Steady state of the Vf unit delivering injection I at node voltage V.
DerVector vf_equilibrium(std::complex<double> V, std::complex<double> I, const VfParams& p);
/// Steady state of the PQ unit at node voltage V delivering complex power S (injection).
DerVector pq_equilibrium(std::complex<double> V, std::complex<double> S, const PqParams& p);

/// Node current injection of a PQ unit, taken from its grid-side inductor state.
inline std::complex<double> pq_output_current(const DerVector& x) { return {x[8], x[9]}; }
/// Node voltage of a Vf unit, which is its capacitor voltage.
inline std::complex<double> vf_output_voltage(const DerVector& x) { return {x[6], x[7]}; }

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// Rotates a DQ pair by e^{j theta}.
Eigen::Vector2d shift_phase(const Eigen::Vector2d& dq, double theta);
std::complex<double> shift_phase(std::complex<double> v, double theta);

/// Rotates both DQ pairs of a DER state and advances the PLL angle by theta (wrapped).
DerVector shift_phase_state(const DerVector& x, double theta);

void to_json(nlohmann::json& j, const VfParams& p);
void from_json(const nlohmann::json& j, VfParams& p);
void to_json(nlohmann::json& j, const PqParams& p);
void from_json(const nlohmann::json& j, PqParams& p);

}  // namespace mkbf
