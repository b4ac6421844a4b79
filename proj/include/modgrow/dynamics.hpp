#pragma once

// Rate-neuron kernels shared by both architectures.

#include <Eigen/Dense>

#include <stdexcept>

namespace modgrow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Nonlinearity and time discretization. dt is fixed at one step.
struct ActivationConfig {
    double alpha = 0.01;
    static constexpr double dt = 1.0;
};

inline double leaky_relu(double x, double alpha) noexcept
{
    return x >= 0.0 ? x : alpha * x;
}

inline double leaky_relu_derivative(double x, double alpha) noexcept
{
    return x >= 0.0 ? 1.0 : alpha;
}

/// One leaky-integrator step: (1 - 1/tau) * r_prev + (1/tau) * [drive]_alpha.
inline double neuron_update(double r_prev, double drive, double tau, double alpha)
{
    if (!(tau >= 1.0)) {
        throw std::invalid_argument("neuron_update: tau must be >= 1");
    }
    const double inv_tau = ActivationConfig::dt / tau;
    return (1.0 - inv_tau) * r_prev + inv_tau * leaky_relu(drive, alpha);
}

namespace detail {

inline void require(bool ok, const char* what)
{
    if (!ok) {
        throw std::invalid_argument(what);
    }
}

}  // namespace detail

/// Pre-nonlinearity drive of a single recurrent population:
/// C_i = sum_{j != i} W^R_ij r_j + W^I_i S + b_i.
/// The diagonal of `recurrent_weights` must be zero.
inline Vector nonmodular_drive(const Matrix& recurrent_weights, const Vector& input_weights,
                               const Vector& biases, const Vector& state, double signal)
{
    const auto m = state.size();
    detail::require(recurrent_weights.rows() == m && recurrent_weights.cols() == m,
                    "nonmodular_drive: recurrent matrix does not match state");
    detail::require(input_weights.size() == m && biases.size() == m,
                    "nonmodular_drive: input/bias size does not match state");
    detail::require(recurrent_weights.diagonal().isZero(0.0),
                    "nonmodular_drive: recurrent diagonal must be zero");
    Vector drive = recurrent_weights * state;
    drive += input_weights * signal;
    drive += biases;
    return drive;
}

/// Drive of module m. `prev_module_state` holds r^{m-1}(t-1) and must be empty
/// (together with `ff_weights`) for the first module.
inline Vector modular_drive(const Matrix& recurrent_weights, const Matrix& ff_weights,
                            const Vector& input_weights, const Vector& biases, const Vector& state,
                            const Vector& prev_module_state, double signal)
{
    const auto m = state.size();
    detail::require(recurrent_weights.rows() == m && recurrent_weights.cols() == m,
                    "modular_drive: recurrent matrix does not match state");
    detail::require(input_weights.size() == m && biases.size() == m,
                    "modular_drive: input/bias size does not match state");
    detail::require(recurrent_weights.diagonal().isZero(0.0),
                    "modular_drive: recurrent diagonal must be zero");
    const bool has_ff = ff_weights.size() != 0;
    detail::require(has_ff == (prev_module_state.size() != 0),
                    "modular_drive: feedforward weights and previous-module state must be given together");
    Vector drive = recurrent_weights * state;
    if (has_ff) {
        detail::require(ff_weights.rows() == m && ff_weights.cols() == prev_module_state.size(),
                        "modular_drive: feedforward matrix does not match states");
        drive += ff_weights * prev_module_state;
    }
    drive += input_weights * signal;
    drive += biases;
    return drive;
}

}  // namespace modgrow
