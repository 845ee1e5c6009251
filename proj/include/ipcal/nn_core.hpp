#pragma once

// Feed-forward networks with bias units, softplus hidden layers and an
// identity output layer, plus exact reverse-mode derivatives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ipcal/error.hpp"

namespace ipcal {

enum class HiddenActivation { softplus };
enum class OutputActivation { identity };

/// ln(1 + e^x) without overflow for large |x|.
template <class T>
T softplus(T x) {
    using std::exp;
    using std::log1p;
    if (x > T(0)) {
        return x + T(log1p(exp(-x)));
    }
    return T(log1p(exp(x)));
}

/// Derivative of softplus: the logistic function.
inline double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Layer sizes n(1)..n(L), bias units excluded.
class NetSpec {
public:
    NetSpec() = default;

    explicit NetSpec(std::vector<std::size_t> layer_sizes,
                     HiddenActivation hidden = HiddenActivation::softplus,
                     OutputActivation output = OutputActivation::identity)
        : layers_(std::move(layer_sizes)), hidden_(hidden), output_(output) {
        if (layers_.size() < 2) {
            throw ValidationError("NetSpec needs at least an input and an output layer");
        }
        for (std::size_t n : layers_) {
            if (n == 0) {
                throw ValidationError("NetSpec layer sizes must be positive");
            }
        }
        offsets_.resize(layers_.size());
        std::size_t k = 0;
        for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
            offsets_[l] = k;
            k += (layers_[l] + 1) * layers_[l + 1];
        }
        offsets_.back() = k;
    }

    const std::vector<std::size_t>& layer_sizes() const noexcept { return layers_; }
    std::size_t depth() const noexcept { return layers_.size(); }
    std::size_t inputs() const noexcept { return layers_.front(); }
    std::size_t outputs() const noexcept { return layers_.back(); }
    HiddenActivation hidden_activation() const noexcept { return hidden_; }
    OutputActivation output_activation() const noexcept { return output_; }

    /// K = sum over layer transitions of (n(l) + 1) * n(l+1).
    std::size_t param_count() const noexcept { return offsets_.empty() ? 0 : offsets_.back(); }

    /// Flat index of the weight from source neuron `src` (0 = bias) of layer
    /// `layer` to target neuron `dst` of layer `layer + 1`.
    std::size_t weight_index(std::size_t layer, std::size_t dst, std::size_t src) const noexcept {
        return offsets_[layer] + dst * (layers_[layer] + 1) + src;
    }

    friend bool operator==(const NetSpec& a, const NetSpec& b) { return a.layers_ == b.layers_; }

    std::string to_string() const {
        std::string s;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (i) s += '-';
            s += std::to_string(layers_[i]);
        }
        return s;
    }

private:
    std::vector<std::size_t> layers_;
    std::vector<std::size_t> offsets_;
    HiddenActivation hidden_ = HiddenActivation::softplus;
    OutputActivation output_ = OutputActivation::identity;
};

/// Network weights flattened layer-major, then by target neuron, then by
/// source neuron with the bias weight first.
class NetParams {
public:
    NetParams() = default;

    NetParams(NetSpec spec, std::vector<double> values) : spec_(std::move(spec)), values_(std::move(values)) {
        if (values_.size() != spec_.param_count()) {
            throw ValidationError("NetParams: expected " + std::to_string(spec_.param_count()) +
                                  " weights, got " + std::to_string(values_.size()));
        }
        for (double v : values_) {
            if (!std::isfinite(v)) {
                throw ValidationError("NetParams: non-finite weight");
            }
        }
    }

    static NetParams zeros(NetSpec spec) {
        std::vector<double> v(spec.param_count(), 0.0);
        return {std::move(spec), std::move(v)};
    }

    const NetSpec& spec() const noexcept { return spec_; }
    std::span<const double> values() const noexcept { return values_; }

    double weight(std::size_t layer, std::size_t dst, std::size_t src) const noexcept {
        return values_[spec_.weight_index(layer, dst, src)];
    }

private:
    NetSpec spec_;
    std::vector<double> values_;
};

/// Stored forward pass. activations[l] carries the bias entry 1 at index 0
/// for every non-output layer; pre_activations[l] is empty for the input.
template <class T>
struct BasicNetEvalTrace {
    std::vector<std::vector<T>> activations;
    std::vector<std::vector<T>> pre_activations;
};

using NetEvalTrace = BasicNetEvalTrace<double>;

namespace detail {

// Evaluates with weights given as a raw span so callers holding a packed
// parameter vector do not need to copy into NetParams.
template <class T>
const std::vector<T>& forward(const NetSpec& spec, std::span<const T> w, std::span<const T> input,
                              BasicNetEvalTrace<T>& trace) {
    if (input.size() != spec.inputs()) {
        throw ValidationError("network input has length " + std::to_string(input.size()) + ", expected " +
                              std::to_string(spec.inputs()));
    }
    if (w.size() != spec.param_count()) {
        throw ValidationError("weight vector does not match the network shape");
    }
    const auto& n = spec.layer_sizes();
    const std::size_t depth = n.size();
    trace.activations.resize(depth);
    trace.pre_activations.resize(depth);

    auto& a0 = trace.activations[0];
    a0.resize(n[0] + 1);
    a0[0] = T(1);
    std::copy(input.begin(), input.end(), a0.begin() + 1);
    trace.pre_activations[0].clear();

    for (std::size_t l = 0; l + 1 < depth; ++l) {
        const auto& src = trace.activations[l];
        const bool to_output = (l + 2 == depth);
        auto& z = trace.pre_activations[l + 1];
        auto& dst = trace.activations[l + 1];
        z.assign(n[l + 1], T(0));
        dst.resize(to_output ? n[l + 1] : n[l + 1] + 1);
        if (!to_output) dst[0] = T(1);
        for (std::size_t k = 0; k < n[l + 1]; ++k) {
            const T* row = w.data() + spec.weight_index(l, k, 0);
            T s = T(0);
            for (std::size_t j = 0; j <= n[l]; ++j) s += row[j] * src[j];
            z[k] = s;
            if (to_output) {
                dst[k] = s;
            } else {
                dst[k + 1] = softplus(s);
            }
        }
    }
    return trace.activations.back();
}

// Reverse pass for one output cotangent. Accumulates (+=) into input_bar and
// param_bar; either may be empty to skip it.
inline void backward(const NetSpec& spec, std::span<const double> w, const NetEvalTrace& trace,
                     std::span<const double> cotangent, std::span<double> input_bar,
                     std::span<double> param_bar) {
    const auto& n = spec.layer_sizes();
    const std::size_t depth = n.size();
    if (trace.activations.size() != depth || trace.activations.back().size() != n.back() ||
        trace.activations.front().size() != n.front() + 1) {
        throw ValidationError("network trace does not match the network shape");
    }
    if (cotangent.size() != n.back()) {
        throw ValidationError("cotangent length does not match network outputs");
    }
    const bool want_params = !param_bar.empty();
    const bool want_input = !input_bar.empty();
    if (want_params && param_bar.size() != spec.param_count()) {
        throw ValidationError("parameter gradient buffer has the wrong length");
    }
    if (want_input && input_bar.size() != n.front()) {
        throw ValidationError("input gradient buffer has the wrong length");
    }

    // delta holds dCost/d(pre-activation) of layer l + 1.
    std::vector<double> delta(cotangent.begin(), cotangent.end());
    std::vector<double> src_bar;
    for (std::size_t l = depth - 1; l-- > 0;) {
        const auto& src = trace.activations[l];
        src_bar.assign(n[l] + 1, 0.0);
        for (std::size_t k = 0; k < n[l + 1]; ++k) {
            const double dk = delta[k];
            if (dk == 0.0) continue;
            const std::size_t base = spec.weight_index(l, k, 0);
            for (std::size_t j = 0; j <= n[l]; ++j) {
                if (want_params) param_bar[base + j] += dk * src[j];
                src_bar[j] += w[base + j] * dk;
            }
        }
        if (l == 0) {
            if (want_input) {
                for (std::size_t j = 0; j < n[0]; ++j) input_bar[j] += src_bar[j + 1];
            }
        } else {
            const auto& z = trace.pre_activations[l];
            delta.assign(n[l], 0.0);
            for (std::size_t j = 0; j < n[l]; ++j) delta[j] = src_bar[j + 1] * logistic(z[j]);
        }
    }
}

} // namespace detail

/// Output of the network and the trace needed by the derivative routines.
inline std::pair<std::vector<double>, NetEvalTrace> forward(const NetParams& params, std::span<const double> input) {
    NetEvalTrace trace;
    auto out = detail::forward<double>(params.spec(), params.values(), input, trace);
    return {std::move(out), std::move(trace)};
}

/// Jacobian d output / d input, row-major n(L) x n(1).
inline std::vector<double> jac_input(const NetParams& params, const NetEvalTrace& trace) {
    const auto& spec = params.spec();
    const std::size_t rows = spec.outputs();
    const std::size_t cols = spec.inputs();
    std::vector<double> jac(rows * cols, 0.0);
    std::vector<double> e(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        std::fill(e.begin(), e.end(), 0.0);
        e[r] = 1.0;
        detail::backward(spec, params.values(), trace, e, std::span<double>(jac).subspan(r * cols, cols), {});
    }
    return jac;
}

/// (d output / d params)ᵀ · cotangent, i.e. backpropagation of one cotangent.
inline std::vector<double> grad_params_transposed(const NetParams& params, const NetEvalTrace& trace,
                                                  std::span<const double> cotangent) {
    std::vector<double> g(params.spec().param_count(), 0.0);
    detail::backward(params.spec(), params.values(), trace, cotangent, {}, g);
    return g;
}

} // namespace ipcal
