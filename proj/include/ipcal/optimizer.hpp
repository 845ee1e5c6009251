#pragma once

// Mini-batch stochastic descent: ADADELTA updates driven by gradients with
// annealed Gaussian noise, followed by projection onto the admissible set.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ipcal/error.hpp"
#include "ipcal/model.hpp"
#include "ipcal/sequence.hpp"

namespace ipcal {

// ---------------------------------------------------------------------------
// ADADELTA
// ---------------------------------------------------------------------------

struct AdadeltaState {
    std::vector<double> eg2;  // E[g²]
    std::vector<double> edx2; // E[Δα²]
    double rho = 0.95;
    double eps = 1e-6;
    std::size_t k = 0;

    AdadeltaState() = default;
    explicit AdadeltaState(std::size_t n, double rho_ = 0.95, double eps_ = 1e-6)
        : eg2(n, 0.0), edx2(n, 0.0), rho(rho_), eps(eps_) {
        if (!(rho > 0.0 && rho < 1.0)) throw ValidationError("ADADELTA rho must lie in (0, 1)");
        if (!(eps > 0.0)) throw ValidationError("ADADELTA eps must be positive");
    }
};

struct AdadeltaStep {
    std::vector<double> update;
    AdadeltaState state;
};

/// E[g²]_k = ρE[g²]_{k−1} + (1−ρ)g²
/// Δα_k    = −√(E[Δα²]_{k−1} + ε) / √(E[g²]_k + ε) · g
/// E[Δα²]_k = ρE[Δα²]_{k−1} + (1−ρ)Δα_k²
inline AdadeltaStep adadelta_step(AdadeltaState state, std::span<const double> grad) {
    if (grad.size() != state.eg2.size()) throw ValidationError("gradient length does not match ADADELTA state");
    const double rho = state.rho;
    const double eps = state.eps;
    std::vector<double> dx(grad.size());
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = grad[i];
        state.eg2[i] = rho * state.eg2[i] + (1.0 - rho) * g * g;
        dx[i] = -(std::sqrt(state.edx2[i] + eps) / std::sqrt(state.eg2[i] + eps)) * g;
        state.edx2[i] = rho * state.edx2[i] + (1.0 - rho) * dx[i] * dx[i];
    }
    ++state.k;
    return {std::move(dx), std::move(state)};
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

struct NoiseSchedule {
    double eta1 = 1.0;
    double eta2 = 0.55;
    std::uint64_t seed = 0;

    /// Per-component variance η1 / (1 + k)^η2.
    double variance(std::size_t k) const { return eta1 / std::pow(1.0 + static_cast<double>(k), eta2); }
};

/// grad + N(0, Σ_k) with diagonal Σ_k. With η1 = 0 the gradient is returned
/// untouched and the stream is not advanced.
template <class Rng>
std::vector<double> noisy_gradient(std::span<const double> grad, const NoiseSchedule& sched, std::size_t k, Rng& rng) {
    std::vector<double> out(grad.begin(), grad.end());
    const double var = sched.variance(k);
    if (!(var > 0.0)) return out;
    std::normal_distribution<double> normal(0.0, std::sqrt(var));
    for (double& g : out) g += normal(rng);
    return out;
}

// ---------------------------------------------------------------------------
// Admissible sets
// ---------------------------------------------------------------------------

/// box_pm1: every entry in [−1, 1]. nonneg: every entry ≥ 0. lwr: (v0, L)
/// with L ≥ l_min. nn_with_speed: entry 0 (v0) ≥ 0, the rest in [−1, 1].
struct AdmissibleSet {
    enum class Kind { box_pm1, nonneg, lwr, nn_with_speed, unconstrained };
    Kind kind = Kind::unconstrained;
    double l_min = kDefaultMinCarLength;
};

inline std::string_view to_string(AdmissibleSet::Kind k) {
    switch (k) {
    case AdmissibleSet::Kind::box_pm1: return "box_pm1";
    case AdmissibleSet::Kind::nonneg: return "nonneg";
    case AdmissibleSet::Kind::lwr: return "lwr";
    case AdmissibleSet::Kind::nn_with_speed: return "nn_with_speed";
    case AdmissibleSet::Kind::unconstrained: return "unconstrained";
    }
    return "?";
}

inline AdmissibleSet::Kind parse_admissible_kind(std::string_view s) {
    using K = AdmissibleSet::Kind;
    for (auto k : {K::box_pm1, K::nonneg, K::lwr, K::nn_with_speed, K::unconstrained}) {
        if (to_string(k) == s) return k;
    }
    throw ValidationError("unknown admissible set '" + std::string(s) + "'");
}

inline AdmissibleSet default_admissible(const ModelSpec& model) {
    using K = AdmissibleSet::Kind;
    switch (model.family) {
    case ModelFamily::traffic_lwr_log:
    case ModelFamily::traffic_lwr_linear: return {K::lwr, model.l_min};
    case ModelFamily::traffic_nn: return {K::nn_with_speed, model.l_min};
    case ModelFamily::crowd_sf: return {K::nonneg, model.l_min};
    case ModelFamily::crowd_nn: return {K::box_pm1, model.l_min};
    }
    return {};
}

inline std::vector<double> project(std::span<const double> u, const AdmissibleSet& set) {
    std::vector<double> out(u.begin(), u.end());
    using K = AdmissibleSet::Kind;
    switch (set.kind) {
    case K::box_pm1:
        for (double& v : out) v = std::clamp(v, -1.0, 1.0);
        break;
    case K::nonneg:
        for (double& v : out) v = std::max(v, 0.0);
        break;
    case K::lwr:
        if (out.size() != 2) throw ValidationError("lwr admissible set expects (v0, L)");
        out[1] = std::max(out[1], set.l_min);
        break;
    case K::nn_with_speed:
        if (out.empty()) break;
        out[0] = std::max(out[0], 0.0);
        for (std::size_t i = 1; i < out.size(); ++i) out[i] = std::clamp(out[i], -1.0, 1.0);
        break;
    case K::unconstrained: break;
    }
    return out;
}

/// Initial iterate: NN weights uniform on [−1, 1], social force constants
/// uniform on [0, 50]³, traffic speed 30 m/s and car length 5 m.
template <class Rng>
std::vector<double> default_initial_params(const ModelSpec& model, Rng& rng) {
    std::uniform_real_distribution<double> weight(-1.0, 1.0);
    std::vector<double> u;
    switch (model.family) {
    case ModelFamily::traffic_lwr_log:
    case ModelFamily::traffic_lwr_linear: return {30.0, 5.0};
    case ModelFamily::traffic_nn:
        u.push_back(30.0);
        for (std::size_t i = 1; i < model.param_count(); ++i) u.push_back(weight(rng));
        return u;
    case ModelFamily::crowd_sf: {
        std::uniform_real_distribution<double> c(0.0, 50.0);
        for (int i = 0; i < 3; ++i) u.push_back(c(rng));
        return u;
    }
    case ModelFamily::crowd_nn:
        for (std::size_t i = 0; i < model.param_count(); ++i) u.push_back(weight(rng));
        return u;
    }
    return u;
}

// ---------------------------------------------------------------------------
// Calibration loop
// ---------------------------------------------------------------------------

struct CalibrationOptions {
    std::size_t batch_size = 16;
    std::size_t iterations = 2000;
    double rho = 0.95;
    double eps = 1e-6;
    NoiseSchedule noise;
    AdmissibleSet admissible;
    std::size_t threads = 1;
    std::size_t checkpoint_every = 0; // 0 disables the callback
};

/// Resumable optimizer state; everything the loop needs to continue
/// bit-identically.
struct CalibrationState {
    std::vector<double> params;
    AdadeltaState adadelta;
    std::size_t iteration = 0;
    std::mt19937_64 shuffle_rng;
    std::mt19937_64 noise_rng;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::vector<double> best_params;
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<double> loss_history;
    std::vector<char> degenerate;
};

struct CalibrationResult {
    std::vector<double> best_params;
    double best_cost = 0.0;
    std::vector<double> loss_history; // mean batch cost per iteration
    std::size_t skipped_sequences = 0;
    CalibrationState final_state;
};

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += threads) fn(i);
        });
    }
}

inline void reshuffle(CalibrationState& st, std::size_t n) {
    st.order.resize(n);
    std::iota(st.order.begin(), st.order.end(), std::size_t{0});
    std::shuffle(st.order.begin(), st.order.end(), st.shuffle_rng);
    st.cursor = 0;
}

} // namespace detail

inline CalibrationState initial_calibration_state(std::span<const double> init, std::size_t dataset_size,
                                                  const CalibrationOptions& opt) {
    CalibrationState st;
    st.params = project(init, opt.admissible);
    st.adadelta = AdadeltaState(st.params.size(), opt.rho, opt.eps);
    std::seed_seq shuffle_seed{opt.noise.seed, std::uint64_t{0x5eed}};
    std::seed_seq noise_seed{opt.noise.seed, std::uint64_t{0x9015e}};
    st.shuffle_rng.seed(shuffle_seed);
    st.noise_rng.seed(noise_seed);
    st.degenerate.assign(dataset_size, 0);
    detail::reshuffle(st, dataset_size);
    return st;
}

/// Mean full-dataset cost; degenerate sequences are flagged in `degenerate`
/// and left out.
inline double full_dataset_cost(const ModelSpec& model, std::span<const SequenceSample> data, std::span<const double> u,
                                std::vector<char>& degenerate, std::size_t threads) {
    std::vector<double> costs(data.size(), 0.0);
    std::vector<char> bad(data.size(), 0);
    detail::parallel_for(data.size(), threads, [&](std::size_t i) {
        if (degenerate[i]) return;
        try {
            costs[i] = sequence_cost(model, data[i], u);
            if (!std::isfinite(costs[i])) bad[i] = 1;
        } catch (const NumericalError&) {
            bad[i] = 1;
        }
    });
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (bad[i]) degenerate[i] = 1;
        if (degenerate[i]) continue;
        sum += costs[i];
        ++used;
    }
    if (used == 0) throw NumericalError("all sequences are degenerate");
    return sum / static_cast<double>(used);
}

using CheckpointFn = std::function<void(const CalibrationState&)>;

/// Per iteration: draw a batch without replacement (reshuffling per epoch),
/// average the reduced gradients, add noise, take an ADADELTA step and
/// project. Returns the iterate with the lowest full-dataset cost.
inline CalibrationResult run_calibration(std::span<const SequenceSample> data, const ModelSpec& model,
                                         std::span<const double> init, const CalibrationOptions& opt,
                                         const CheckpointFn& checkpoint = {}, CalibrationState* resume = nullptr) {
    if (data.empty()) throw ValidationError("no sequences to calibrate on");
    if (init.size() != model.param_count()) {
        throw ValidationError("initial parameter vector has length " + std::to_string(init.size()) + ", expected " +
                              std::to_string(model.param_count()));
    }
    if (opt.batch_size == 0) throw ValidationError("batch size must be positive");

    CalibrationState st = resume ? *resume : initial_calibration_state(init, data.size(), opt);
    if (st.degenerate.size() != data.size()) throw ValidationError("resume state does not match the dataset");
    if (!resume) {
        st.best_params = st.params;
        st.best_cost = full_dataset_cost(model, data, st.params, st.degenerate, opt.threads);
    }

    const std::size_t batch = std::min(opt.batch_size, data.size());
    std::vector<std::size_t> idx;
    std::vector<GradientResult> results;
    std::vector<char> failed;

    for (; st.iteration < opt.iterations; ++st.iteration) {
        idx.clear();
        while (idx.size() < batch) {
            if (st.cursor == st.order.size()) detail::reshuffle(st, data.size());
            idx.push_back(st.order[st.cursor++]);
        }
        results.assign(idx.size(), {});
        failed.assign(idx.size(), 0);
        detail::parallel_for(idx.size(), opt.threads, [&](std::size_t b) {
            if (st.degenerate[idx[b]]) {
                failed[b] = 1;
                return;
            }
            try {
                results[b] = sequence_gradient(model, data[idx[b]], st.params);
            } catch (const NumericalError&) {
                failed[b] = 1;
            }
        });

        std::vector<double> grad(st.params.size(), 0.0);
        double batch_cost = 0.0;
        std::size_t used = 0;
        for (std::size_t b = 0; b < idx.size(); ++b) {
            if (failed[b]) {
                st.degenerate[idx[b]] = 1;
                continue;
            }
            for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += results[b].grad[k];
            batch_cost += results[b].cost.value;
            ++used;
        }
        if (std::all_of(st.degenerate.begin(), st.degenerate.end(), [](char c) { return c != 0; })) {
            throw NumericalError("all sequences are degenerate", static_cast<std::ptrdiff_t>(st.iteration));
        }
        if (used == 0) {
            st.loss_history.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        const double inv = 1.0 / static_cast<double>(used);
        for (double& g : grad) g *= inv;
        st.loss_history.push_back(batch_cost * inv);

        const auto noisy = noisy_gradient(grad, opt.noise, st.iteration, st.noise_rng);
        auto step = adadelta_step(std::move(st.adadelta), noisy);
        st.adadelta = std::move(step.state);
        for (std::size_t k = 0; k < st.params.size(); ++k) st.params[k] += step.update[k];
        st.params = project(st.params, opt.admissible);

        const double full = full_dataset_cost(model, data, st.params, st.degenerate, opt.threads);
        if (full < st.best_cost) {
            st.best_cost = full;
            st.best_params = st.params;
        }
        if (checkpoint && opt.checkpoint_every > 0 && (st.iteration + 1) % opt.checkpoint_every == 0) {
            CalibrationState snapshot = st;
            ++snapshot.iteration;
            checkpoint(snapshot);
        }
    }

    CalibrationResult res;
    res.best_params = st.best_params;
    res.best_cost = st.best_cost;
    res.loss_history = st.loss_history;
    res.skipped_sequences = static_cast<std::size_t>(std::count(st.degenerate.begin(), st.degenerate.end(), 1));
    res.final_state = std::move(st);
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace detail {

inline std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline void restore_rng(std::mt19937_64& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
    if (!is) throw ValidationError("corrupt PRNG state in checkpoint");
}

// JSON numbers cannot hold inf/nan.
inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

} // namespace detail

inline nlohmann::json checkpoint_to_json(const CalibrationState& st) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["params"] = st.params;
    j["eg2"] = st.adadelta.eg2;
    j["edx2"] = st.adadelta.edx2;
    j["rho"] = st.adadelta.rho;
    j["eps"] = st.adadelta.eps;
    j["adadelta_k"] = st.adadelta.k;
    j["iteration"] = st.iteration;
    j["shuffle_rng"] = detail::rng_state(st.shuffle_rng);
    j["noise_rng"] = detail::rng_state(st.noise_rng);
    j["order"] = st.order;
    j["cursor"] = st.cursor;
    j["best_params"] = st.best_params;
    j["best_cost"] = detail::finite_or_null(st.best_cost);
    nlohmann::json hist = nlohmann::json::array();
    for (double v : st.loss_history) hist.push_back(detail::finite_or_null(v));
    j["loss_history"] = hist;
    std::vector<int> deg(st.degenerate.begin(), st.degenerate.end());
    j["degenerate"] = deg;
    return j;
}

inline CalibrationState checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("schema_version").get<int>() != 1) throw ValidationError("unsupported checkpoint schema version");
        CalibrationState st;
        st.params = j.at("params").get<std::vector<double>>();
        st.adadelta.eg2 = j.at("eg2").get<std::vector<double>>();
        st.adadelta.edx2 = j.at("edx2").get<std::vector<double>>();
        st.adadelta.rho = j.at("rho").get<double>();
        st.adadelta.eps = j.at("eps").get<double>();
        st.adadelta.k = j.at("adadelta_k").get<std::size_t>();
        st.iteration = j.at("iteration").get<std::size_t>();
        detail::restore_rng(st.shuffle_rng, j.at("shuffle_rng").get<std::string>());
        detail::restore_rng(st.noise_rng, j.at("noise_rng").get<std::string>());
        st.order = j.at("order").get<std::vector<std::size_t>>();
        st.cursor = j.at("cursor").get<std::size_t>();
        st.best_params = j.at("best_params").get<std::vector<double>>();
        st.best_cost = j.at("best_cost").is_null() ? std::numeric_limits<double>::infinity()
                                                   : j.at("best_cost").get<double>();
        for (const auto& v : j.at("loss_history")) {
            st.loss_history.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
        }
        for (int d : j.at("degenerate").get<std::vector<int>>()) st.degenerate.push_back(static_cast<char>(d != 0));
        if (st.adadelta.eg2.size() != st.params.size() || st.adadelta.edx2.size() != st.params.size()) {
            throw ValidationError("checkpoint accumulators do not match the parameter vector");
        }
        return st;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const CalibrationState& st) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write checkpoint " + path.string());
    out << checkpoint_to_json(st).dump(2) << '\n';
}

inline CalibrationState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    return checkpoint_from_json(j);
}

} // namespace ipcal
