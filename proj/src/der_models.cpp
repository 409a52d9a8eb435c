#include "mkbf/der_models.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "mkbf/errors.hpp"

namespace mkbf {

using Complex = std::complex<double>;

namespace {

void require_positive(double v, const char* name) {
    if (!(v > 0.0)) throw InvalidArgument(std::string(name) + " must be positive");
}

Complex rotate(Complex v, double theta) { return v * std::polar(1.0, theta); }

}  // namespace

void VfParams::validate() const {
    require_positive(kp_pll, "kp_pll");
    require_positive(ki_pll, "ki_pll");
    require_positive(kp_v, "kp_v");
    require_positive(ki_v, "ki_v");
    require_positive(kp_i, "kp_i");
    require_positive(ki_i, "ki_i");
    require_positive(L, "L");
    require_positive(C, "C");
    if (!(R >= 0.0)) throw InvalidArgument("R must be non-negative");
    require_positive(v_ref, "v_ref");
}

void PqParams::validate() const {
    require_positive(kp_pll, "kp_pll");
    require_positive(ki_pll, "ki_pll");
    require_positive(kp_pq, "kp_pq");
    require_positive(ki_pq, "ki_pq");
    require_positive(kp_i, "kp_i");
    require_positive(ki_i, "ki_i");
    require_positive(L, "L");
    require_positive(C, "C");
    if (!(R >= 0.0)) throw InvalidArgument("R must be non-negative");
}

DerVector vf_drift(const DerVector& x, const VfParams& p) {
    const double c = std::cos(x[1]), s = std::sin(x[1]);
    const double vd = x[6], vq = x[7], ild = x[8], ilq = x[9];
    const double e = -vd * s + vq * c;
    const double dw = p.kp_pll * e + p.ki_pll * x[0];
    const double verr = p.v_ref - std::hypot(vd, vq);
    const double ird = p.kp_v * verr + p.ki_v * x[2];
    const double irq = -p.kp_v * dw + p.ki_v * x[3];
    const double vtd_l = p.kp_i * ird + p.ki_i * x[4];
    const double vtq_l = p.kp_i * irq + p.ki_i * x[5];
    const double vtd = c * vtd_l - s * vtq_l;
    const double vtq = s * vtd_l + c * vtq_l;

    DerVector f;
    f << e, dw, verr, -dw, ird, irq,
        p.omega * vq + ild / p.C,
        -p.omega * vd + ilq / p.C,
        p.omega * ilq + (vtd - vd - p.R * ild) / p.L,
        -p.omega * ild + (vtq - vq - p.R * ilq) / p.L;
    return f;
}

Eigen::Matrix<double, kDerStates, kVfInputs> vf_input_fields(const DerVector& x, const VfParams& p) {
    const double c = std::cos(x[1]), s = std::sin(x[1]);
    Eigen::Matrix<double, kDerStates, kVfInputs> g;
    g.col(0) << 0, 0, 0, 0, -c, s, 1.0 / p.C, 0, -p.kp_i / p.L, 0;
    g.col(1) << 0, 0, 0, 0, -s, -c, 0, 1.0 / p.C, 0, -p.kp_i / p.L;
    return g;
}

DerVector vf_derivative(const DerVector& x, const Eigen::Vector2d& u, const VfParams& p) {
    return vf_drift(x, p) + vf_input_fields(x, p) * u;
}

DerVector pq_drift(const DerVector& x, const PqParams& p) {
    const double c = std::cos(x[1]), s = std::sin(x[1]);
    const double ind = x[8], inq = x[9];
    const double ind_l = c * ind + s * inq;
    const double inq_l = -s * ind + c * inq;
    const double isd_l = p.kp_i * (p.ki_pq * x[2] - ind_l) + p.ki_i * x[4];
    const double isq_l = p.kp_i * (p.ki_pq * x[3] - inq_l) + p.ki_i * x[5];
    const double isd = c * isd_l - s * isq_l;
    const double isq = s * isd_l + c * isq_l;

    DerVector f;
    f << 0.0, p.ki_pll * x[0], 0.0, 0.0,
        p.ki_pq * x[2] - ind_l,
        p.ki_pq * x[3] - inq_l,
        p.omega * x[7] + (isd - ind) / p.C,
        -p.omega * x[6] + (isq - inq) / p.C,
        p.omega * inq + (x[6] - p.R * ind) / p.L,
        -p.omega * ind + (x[7] - p.R * inq) / p.L;
    return f;
}

Eigen::Matrix<double, kDerStates, kPqInputs> pq_input_fields(const DerVector& x, const PqParams& p) {
    const double c = std::cos(x[1]), s = std::sin(x[1]);
    const double ind = x[8], inq = x[9];
    Eigen::Matrix<double, kDerStates, kPqInputs> g = Eigen::Matrix<double, kDerStates, kPqInputs>::Zero();
    // PLL error e = -V^D sin x2 + V^Q cos x2.
    g(0, 0) = -s;
    g(0, 1) = c;
    g(1, 0) = -p.kp_pll * s;
    g(1, 1) = p.kp_pll * c;
    // Power errors: x3' = P* - P, x4' = Q - Q*, with P = V^D I^D + V^Q I^Q, Q = V^Q I^D - V^D I^Q.
    g(2, 0) = -ind;
    g(2, 1) = -inq;
    g(2, 2) = 1.0;
    g(3, 0) = -inq;
    g(3, 1) = ind;
    g(3, 3) = -1.0;
    g.row(4) = p.kp_pq * g.row(2);
    g.row(5) = p.kp_pq * g.row(3);
    const Eigen::Matrix<double, 1, kPqInputs> gd_l = p.kp_i * p.kp_pq * g.row(2);
    const Eigen::Matrix<double, 1, kPqInputs> gq_l = p.kp_i * p.kp_pq * g.row(3);
    g.row(6) = (c * gd_l - s * gq_l) / p.C;
    g.row(7) = (s * gd_l + c * gq_l) / p.C;
    g(8, 0) = -1.0 / p.L;
    g(9, 1) = -1.0 / p.L;
    return g;
}

DerVector pq_derivative(const DerVector& x, const Eigen::Vector4d& u, const PqParams& p) {
    return pq_drift(x, p) + pq_input_fields(x, p) * u;
}

DerVector pq_derivative(const DerVector& x, const Eigen::Vector2d& v_node, const PqParams& p) {
    return pq_derivative(x, Eigen::Vector4d(v_node[0], v_node[1], p.P_ref, p.Q_ref), p);
}

DerVector vf_equilibrium(Complex V, Complex I, const VfParams& p) {
    const double theta = std::arg(V);
    const Complex in_l = rotate(I, -theta);
    const Complex j(0.0, 1.0);
    const Complex il = j * p.omega * p.C * V - I;
    const Complex vt = V + (p.R + j * p.omega * p.L) * il;
    const Complex vt_l = rotate(vt, -theta) / p.ki_i;
    DerVector x;
    x << 0.0, theta, in_l.real() / p.ki_v, in_l.imag() / p.ki_v, vt_l.real(), vt_l.imag(),
        V.real(), V.imag(), il.real(), il.imag();
    return x;
}

DerVector pq_equilibrium(Complex V, Complex S, const PqParams& p) {
    if (std::abs(V) == 0.0) throw InvalidArgument("PQ equilibrium needs a nonzero node voltage");
    const double theta = std::arg(V);
    const Complex in = std::conj(S / V);
    const Complex in_l = rotate(in, -theta);
    const Complex j(0.0, 1.0);
    const Complex vc = V + (p.R + j * p.omega * p.L) * in;
    const Complex is = in + j * p.omega * p.C * vc;
    const Complex is_l = rotate(is, -theta) / p.ki_i;
    DerVector x;
    x << 0.0, theta, in_l.real() / p.ki_pq, in_l.imag() / p.ki_pq, is_l.real(), is_l.imag(),
        vc.real(), vc.imag(), in.real(), in.imag();
    return x;
}

double wrap_angle(double a) {
    constexpr double pi = std::numbers::pi;
    double w = std::remainder(a, 2.0 * pi);
    if (w <= -pi) w += 2.0 * pi;
    return w;
}

Eigen::Vector2d shift_phase(const Eigen::Vector2d& dq, double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * dq[0] - s * dq[1], s * dq[0] + c * dq[1]};
}

Complex shift_phase(Complex v, double theta) {
    const auto r = shift_phase(Eigen::Vector2d(v.real(), v.imag()), theta);
    return {r[0], r[1]};
}

DerVector shift_phase_state(const DerVector& x, double theta) {
    DerVector out = x;
    out[1] = wrap_angle(x[1] + theta);
    out.segment<2>(6) = shift_phase(Eigen::Vector2d(x.segment<2>(6)), theta);
    out.segment<2>(8) = shift_phase(Eigen::Vector2d(x.segment<2>(8)), theta);
    return out;
}

void to_json(nlohmann::json& j, const VfParams& p) {
    j = {{"kp_pll", p.kp_pll}, {"ki_pll", p.ki_pll}, {"kp_v", p.kp_v}, {"ki_v", p.ki_v},
         {"kp_i", p.kp_i},     {"ki_i", p.ki_i},     {"L", p.L},       {"R", p.R},
         {"C", p.C},           {"v_ref", p.v_ref},   {"omega", p.omega}};
}

void from_json(const nlohmann::json& j, VfParams& p) {
    p.kp_pll = j.at("kp_pll").get<double>();
    p.ki_pll = j.at("ki_pll").get<double>();
    p.kp_v = j.at("kp_v").get<double>();
    p.ki_v = j.at("ki_v").get<double>();
    p.kp_i = j.at("kp_i").get<double>();
    p.ki_i = j.at("ki_i").get<double>();
    p.L = j.at("L").get<double>();
    p.R = j.at("R").get<double>();
    p.C = j.at("C").get<double>();
    p.v_ref = j.value("v_ref", 1.0);
    p.omega = j.value("omega", 1.0);
    p.validate();
}

void to_json(nlohmann::json& j, const PqParams& p) {
    j = {{"kp_pll", p.kp_pll}, {"ki_pll", p.ki_pll}, {"kp_pq", p.kp_pq}, {"ki_pq", p.ki_pq},
         {"kp_i", p.kp_i},     {"ki_i", p.ki_i},     {"L", p.L},         {"R", p.R},
         {"C", p.C},           {"P_ref", p.P_ref},   {"Q_ref", p.Q_ref}, {"omega", p.omega}};
}

void from_json(const nlohmann::json& j, PqParams& p) {
    p.kp_pll = j.at("kp_pll").get<double>();
    p.ki_pll = j.at("ki_pll").get<double>();
    p.kp_pq = j.at("kp_pq").get<double>();
    p.ki_pq = j.at("ki_pq").get<double>();
    p.kp_i = j.at("kp_i").get<double>();
    p.ki_i = j.at("ki_i").get<double>();
    p.L = j.at("L").get<double>();
    p.R = j.at("R").get<double>();
    p.C = j.at("C").get<double>();
    p.P_ref = j.value("P_ref", 0.0);
    p.Q_ref = j.value("Q_ref", 0.0);
    p.omega = j.value("omega", 1.0);
    p.validate();
}

}  // namespace mkbf
