#pragma once

// Run configuration and the subcommands of the `ipcal` tool. Every command
// reads a RunConfig, writes its files under the output directory and maps
// ValidationError to exit code 1 and NumericalError to exit code 2.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ipcal/csv.hpp"
#include "ipcal/data_pipeline.hpp"
#include "ipcal/dynamics.hpp"
#include "ipcal/error.hpp"
#include "ipcal/force_models.hpp"
#include "ipcal/gradcheck.hpp"
#include "ipcal/model.hpp"
#include "ipcal/nn_core.hpp"
#include "ipcal/optimizer.hpp"

namespace ipcal::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kConfigSchemaVersion = 1;

/// Command-line flags shared by all subcommands; they override the file.
struct GlobalOptions {
    std::optional<std::filesystem::path> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::filesystem::path out_dir = ".";
    std::optional<std::string> lane;
};

struct RunConfig {
    // model
    ModelFamily family = ModelFamily::traffic_lwr_linear;
    std::vector<std::size_t> traffic_hidden{4};
    std::vector<std::size_t> crowd_interaction_hidden{4};
    std::vector<std::size_t> crowd_wall_hidden{4};
    double l_min = kDefaultMinCarLength;
    SocialForceParams fixed;
    std::string walls = "corridor"; // "corridor", "none" or a wall CSV

    // sim
    double sim_dt = 0.002;

    // optimizer
    double rho = 0.95;
    double eps = 1e-6;
    double eta1 = 1.0;
    double eta2 = 0.55;
    std::size_t batch = 16;
    std::size_t iterations = 2000;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::size_t checkpoint_every = 0;
    std::string resume;
    std::optional<std::string> admissible;

    // data
    std::vector<std::string> tracks;
    std::optional<double> dt_data; // 0.2 s traffic, 0.04 s crowd
    std::size_t crowd_steps = 25;
    std::size_t min_agents = 2;
    std::optional<std::string> lane;

    // params
    std::vector<double> params;
    std::string params_file;

    // synth
    std::size_t synth_sequences = 50;
    std::size_t synth_agents = 3;
    std::size_t synth_steps = 25;
    double synth_noise = 0.0;
    std::vector<double> synth_truth;

    // gradcheck
    GradcheckOptions gradcheck;
    std::vector<std::string> gradcheck_families;
    bool corrupt_jacobian = false;

    // force_grid
    double grid_extent = 0.5;
    std::size_t grid_resolution = 51;
    std::vector<Vec2> grid_dv{Vec2{0.0, 0.0}};
    std::string grid_network = "interaction"; // crowd NN: "interaction" or "wall"

    // pair_study
    std::string scenarios;

    // Relative paths are resolved against this directory.
    std::filesystem::path base_dir = ".";

    double data_dt() const { return dt_data.value_or(is_traffic(family) ? 0.2 : 0.04); }

    std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }
};

namespace detail {

class Section {
public:
    Section(const nlohmann::json& j, std::string name, std::initializer_list<const char*> allowed)
        : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ValidationError("config section '" + name_ + "' must be an object");
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
            if (!known) throw ValidationError("unknown config key '" + qualified(it.key()) + "'");
        }
    }

    template <class T>
    void get(const char* key, T& out) const {
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("config key '" + qualified(key) + "': " + e.what());
        }
    }

    template <class T>
    void get(const char* key, std::optional<T>& out) const {
        if (!j_.contains(key) || j_.at(key).is_null()) return;
        T v{};
        get(key, v);
        out = v;
    }

    bool has(const char* key) const { return j_.contains(key); }
    const nlohmann::json& at(const char* key) const { return j_.at(key); }

    std::string qualified(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

private:
    const nlohmann::json& j_;
    std::string name_;
};

inline const nlohmann::json& sub(const nlohmann::json& root, const char* key) {
    static const nlohmann::json empty = nlohmann::json::object();
    return root.contains(key) ? root.at(key) : empty;
}

template <class T>
void require_positive(const char* what, T v) {
    if (!(v > T(0))) throw ValidationError(std::string("config: ") + what + " must be positive");
}

} // namespace detail

/// Validates and applies a configuration document. Keys not listed in the
/// schema are rejected.
inline RunConfig parse_run_config(const nlohmann::json& root, const std::filesystem::path& base_dir = ".") {
    using detail::Section;
    RunConfig c;
    c.base_dir = base_dir;
    Section top(root, "",
                {"schema_version", "model", "sim", "optimizer", "data", "params", "synth", "gradcheck", "force_grid",
                 "pair_study"});
    int version = kConfigSchemaVersion;
    top.get("schema_version", version);
    if (version != kConfigSchemaVersion) {
        throw ValidationError("unsupported config schema_version " + std::to_string(version));
    }

    {
        Section s(detail::sub(root, "model"), "model",
                  {"family", "traffic_hidden", "crowd_interaction_hidden", "crowd_wall_hidden", "l_min", "m", "r", "tau",
                   "B", "walls"});
        std::string family(to_string(c.family));
        s.get("family", family);
        c.family = parse_model_family(family);
        s.get("traffic_hidden", c.traffic_hidden);
        s.get("crowd_interaction_hidden", c.crowd_interaction_hidden);
        s.get("crowd_wall_hidden", c.crowd_wall_hidden);
        s.get("l_min", c.l_min);
        s.get("m", c.fixed.m);
        s.get("r", c.fixed.r);
        s.get("tau", c.fixed.tau);
        s.get("B", c.fixed.B);
        s.get("walls", c.walls);
        for (const auto* h : {&c.traffic_hidden, &c.crowd_interaction_hidden, &c.crowd_wall_hidden}) {
            if (std::find(h->begin(), h->end(), std::size_t{0}) != h->end()) {
                throw ValidationError("config: hidden layer sizes must be positive");
            }
        }
        detail::require_positive("model.m", c.fixed.m);
        detail::require_positive("model.tau", c.fixed.tau);
        detail::require_positive("model.B", c.fixed.B);
        detail::require_positive("model.r", c.fixed.r);
    }
    {
        Section s(detail::sub(root, "sim"), "sim", {"dt"});
        s.get("dt", c.sim_dt);
        detail::require_positive("sim.dt", c.sim_dt);
    }
    {
        Section s(detail::sub(root, "optimizer"), "optimizer",
                  {"rho", "eps", "eta1", "eta2", "batch", "iterations", "seed", "threads", "checkpoint_every", "resume",
                   "admissible"});
        s.get("rho", c.rho);
        s.get("eps", c.eps);
        s.get("eta1", c.eta1);
        s.get("eta2", c.eta2);
        s.get("batch", c.batch);
        s.get("iterations", c.iterations);
        s.get("seed", c.seed);
        s.get("threads", c.threads);
        s.get("checkpoint_every", c.checkpoint_every);
        s.get("resume", c.resume);
        s.get("admissible", c.admissible);
        if (!(c.rho > 0.0 && c.rho < 1.0)) throw ValidationError("config: optimizer.rho must lie in (0, 1)");
        detail::require_positive("optimizer.eps", c.eps);
        detail::require_positive("optimizer.batch", c.batch);
        if (c.eta1 < 0.0) throw ValidationError("config: optimizer.eta1 must be non-negative");
        if (c.admissible) parse_admissible_kind(*c.admissible);
    }
    {
        const auto& d = detail::sub(root, "data");
        Section s(d, "data", {"tracks", "dt_data", "steps", "min_agents", "lane"});
        if (s.has("tracks") && s.at("tracks").is_string()) {
            c.tracks = {s.at("tracks").get<std::string>()};
        } else {
            s.get("tracks", c.tracks);
        }
        s.get("dt_data", c.dt_data);
        s.get("steps", c.crowd_steps);
        s.get("min_agents", c.min_agents);
        s.get("lane", c.lane);
        if (c.dt_data) detail::require_positive("data.dt_data", *c.dt_data);
        detail::require_positive("data.steps", c.crowd_steps);
        detail::require_positive("data.min_agents", c.min_agents);
    }
    {
        Section s(detail::sub(root, "params"), "params", {"values", "file"});
        s.get("values", c.params);
        s.get("file", c.params_file);
    }
    {
        Section s(detail::sub(root, "synth"), "synth", {"sequences", "agents", "steps", "noise_std", "truth"});
        s.get("sequences", c.synth_sequences);
        s.get("agents", c.synth_agents);
        s.get("steps", c.synth_steps);
        s.get("noise_std", c.synth_noise);
        s.get("truth", c.synth_truth);
        if (c.synth_noise < 0.0) throw ValidationError("config: synth.noise_std must be non-negative");
    }
    {
        Section s(detail::sub(root, "gradcheck"), "gradcheck",
                  {"instances", "max_agents", "max_steps", "fd_step", "tolerance", "stride", "quad_reference", "families",
                   "corrupt_jacobian"});
        auto& g = c.gradcheck;
        s.get("instances", g.instances);
        s.get("max_agents", g.max_agents);
        s.get("max_steps", g.max_steps);
        s.get("fd_step", g.fd_step);
        s.get("tolerance", g.tolerance);
        s.get("stride", g.stride);
        s.get("quad_reference", g.quad_reference);
        s.get("families", c.gradcheck_families);
        s.get("corrupt_jacobian", c.corrupt_jacobian);
        detail::require_positive("gradcheck.fd_step", g.fd_step);
        detail::require_positive("gradcheck.stride", g.stride);
    }
    {
        Section s(detail::sub(root, "force_grid"), "force_grid", {"extent", "resolution", "dv", "network"});
        s.get("extent", c.grid_extent);
        s.get("resolution", c.grid_resolution);
        if (s.has("dv")) {
            std::vector<std::vector<double>> dv;
            s.get("dv", dv);
            c.grid_dv.clear();
            for (const auto& v : dv) {
                if (v.size() != 2) throw ValidationError("config: force_grid.dv entries must be [dvx, dvy]");
                c.grid_dv.push_back({v[0], v[1]});
            }
        }
        s.get("network", c.grid_network);
        detail::require_positive("force_grid.extent", c.grid_extent);
        if (c.grid_resolution < 2) throw ValidationError("config: force_grid.resolution must be at least 2");
        if (c.grid_network != "interaction" && c.grid_network != "wall") {
            throw ValidationError("config: force_grid.network must be 'interaction' or 'wall'");
        }
    }
    {
        Section s(detail::sub(root, "pair_study"), "pair_study", {"scenarios"});
        s.get("scenarios", c.scenarios);
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

/// File contents merged with the command-line overrides.
inline RunConfig effective_config(const GlobalOptions& g) {
    RunConfig c = g.config ? load_run_config(*g.config) : RunConfig{};
    if (g.seed) c.seed = *g.seed;
    if (g.threads) c.threads = std::max<std::size_t>(1, *g.threads);
    if (g.lane) c.lane = *g.lane;
    return c;
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

inline ModelSpec model_spec(const RunConfig& c) {
    ModelSpec m;
    m.family = c.family;
    m.traffic_hidden = c.traffic_hidden;
    auto crowd_net = [](const std::vector<std::size_t>& hidden) {
        std::vector<std::size_t> sizes{4};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(2);
        return NetSpec(sizes);
    };
    m.crowd_nets = {crowd_net(c.crowd_interaction_hidden), crowd_net(c.crowd_wall_hidden)};
    m.fixed = c.fixed;
    m.l_min = c.l_min;
    m.sim_dt = c.sim_dt;
    if (!is_traffic(c.family)) {
        if (c.walls == "corridor") {
            m.walls = std::make_shared<const WallGeometry>(corridor_walls());
        } else if (c.walls == "none" || c.walls.empty()) {
            m.walls = std::make_shared<const WallGeometry>();
        } else {
            m.walls = std::make_shared<const WallGeometry>(load_walls(c.resolve(c.walls)));
        }
    }
    return m;
}

inline AdmissibleSet admissible_set(const RunConfig& c, const ModelSpec& m) {
    AdmissibleSet set = default_admissible(m);
    if (c.admissible) set.kind = parse_admissible_kind(*c.admissible);
    return set;
}

inline PreprocessOptions preprocess_options(const RunConfig& c) {
    PreprocessOptions p;
    p.kind = is_traffic(c.family) ? "traffic" : "crowd";
    p.dt_data = c.data_dt();
    p.steps = c.crowd_steps;
    p.min_agents = c.min_agents;
    p.lane = c.lane;
    return p;
}

/// Sequences of one track file; the manifest is written next to the outputs.
inline std::vector<SequenceSample> load_dataset(const RunConfig& c, const std::string& file, nlohmann::json* manifest) {
    return preprocess(c.resolve(file), preprocess_options(c), manifest);
}

inline std::vector<SequenceSample> load_all_datasets(const RunConfig& c, const std::filesystem::path& out_dir) {
    if (c.tracks.empty()) throw ValidationError("no track files configured (data.tracks)");
    std::vector<SequenceSample> all;
    nlohmann::json manifests = nlohmann::json::array();
    for (const auto& f : c.tracks) {
        nlohmann::json m;
        auto seqs = load_dataset(c, f, &m);
        manifests.push_back(std::move(m));
        all.insert(all.end(), std::make_move_iterator(seqs.begin()), std::make_move_iterator(seqs.end()));
    }
    std::ofstream(out_dir / "manifest.json") << manifests.dump(2) << '\n';
    if (all.empty()) throw ValidationError("no sequences extracted from the configured track files");
    return all;
}

inline nlohmann::json params_to_json(const ModelSpec& m, std::span<const double> values) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["family"] = std::string(to_string(m.family));
    j["names"] = m.param_names();
    j["values"] = std::vector<double>(values.begin(), values.end());
    if (m.family == ModelFamily::traffic_nn) j["layer_sizes"] = m.traffic_net().layer_sizes();
    if (m.family == ModelFamily::crowd_nn) {
        j["layer_sizes"] = {{"interaction", m.crowd_nets.interaction.layer_sizes()},
                            {"wall", m.crowd_nets.wall.layer_sizes()}};
    }
    return j;
}

/// Parameters from `params.values`, else from `params.file` (a params.json or
/// a calibration checkpoint). Empty when neither is configured.
inline std::vector<double> configured_params(const RunConfig& c, const ModelSpec& m) {
    std::vector<double> u = c.params;
    if (u.empty() && !c.params_file.empty()) {
        const auto path = c.resolve(c.params_file);
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open parameter file " + path.string());
        nlohmann::json j;
        try {
            in >> j;
            if (j.contains("family") && j.at("family").get<std::string>() != to_string(m.family)) {
                throw ValidationError("parameter file " + path.string() + " belongs to model family " +
                                      j.at("family").get<std::string>());
            }
            u = j.contains("values") ? j.at("values").get<std::vector<double>>()
                                     : j.at("best_params").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("malformed parameter file " + path.string() + ": " + e.what());
        }
    }
    if (!u.empty() && u.size() != m.param_count()) {
        throw ValidationError("parameter vector has length " + std::to_string(u.size()) + ", model " +
                              std::string(to_string(m.family)) + " expects " + std::to_string(m.param_count()));
    }
    for (double v : u) {
        if (!std::isfinite(v)) throw ValidationError("parameter vector contains a non-finite value");
    }
    return u;
}

inline std::vector<double> required_params(const RunConfig& c, const ModelSpec& m) {
    auto u = configured_params(c, m);
    if (u.empty()) throw ValidationError("this command needs parameters (params.values or params.file)");
    return u;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Fits the configured model to all track files jointly.
inline int cmd_calibrate(const RunConfig& c, const std::filesystem::path& out_dir, std::ostream& log) {
    const ModelSpec m = model_spec(c);
    const auto data = load_all_datasets(c, out_dir);

    CalibrationOptions opt;
    opt.batch_size = c.batch;
    opt.iterations = c.iterations;
    opt.rho = c.rho;
    opt.eps = c.eps;
    opt.noise = {c.eta1, c.eta2, c.seed};
    opt.admissible = admissible_set(c, m);
    opt.threads = c.threads;
    opt.checkpoint_every = c.checkpoint_every;

    std::vector<double> init = configured_params(c, m);
    if (init.empty()) {
        std::mt19937_64 rng(c.seed);
        init = default_initial_params(m, rng);
    }
    std::optional<CalibrationState> resume;
    if (!c.resume.empty()) resume = load_checkpoint(c.resolve(c.resume));

    const auto checkpoint_path = out_dir / "checkpoint.json";
    const auto res = run_calibration(
        data, m, init, opt, [&](const CalibrationState& st) { save_checkpoint(checkpoint_path, st); },
        resume ? &*resume : nullptr);

    save_checkpoint(checkpoint_path, res.final_state);
    open_output(out_dir / "params.json") << params_to_json(m, res.best_params).dump(2) << '\n';
    {
        auto out = open_output(out_dir / "loss_history.csv");
        out << "iteration,batch_cost\n";
        for (std::size_t k = 0; k < res.loss_history.size(); ++k) {
            out << k << ',' << format_double(res.loss_history[k]) << '\n';
        }
    }
    nlohmann::json summary;
    summary["family"] = std::string(to_string(m.family));
    summary["sequences"] = data.size();
    summary["skipped_sequences"] = res.skipped_sequences;
    summary["iterations"] = res.loss_history.size();
    summary["best_cost"] = res.best_cost;
    nlohmann::json identified = nlohmann::json::object();
    const auto names = m.param_names();
    for (std::size_t k = 0; k < names.size(); ++k) identified[names[k]] = res.best_params[k];
    summary["identified"] = identified;
    open_output(out_dir / "summary.json") << summary.dump(2) << '\n';

    log << "calibrated " << to_string(m.family) << " on " << data.size() << " sequences, best cost "
        << format_double(res.best_cost) << '\n';
    if (m.param_count() <= 8) {
        for (std::size_t k = 0; k < names.size(); ++k) {
            log << "  " << names[k] << " = " << format_double(res.best_params[k]) << '\n';
        }
    }
    return kExitOk;
}

/// Adjoint gradient against central differences on random instances.
inline int cmd_gradcheck(const RunConfig& c, const std::filesystem::path& out_dir, std::ostream& log) {
    auto families = gradcheck_families();
    if (!c.gradcheck_families.empty()) {
        std::vector<GradcheckFamily> keep;
        for (const auto& name : c.gradcheck_families) {
            auto it = std::find_if(families.begin(), families.end(), [&](const auto& f) { return f.name == name; });
            if (it == families.end()) throw ValidationError("unknown gradcheck family '" + name + "'");
            keep.push_back(*it);
        }
        families = std::move(keep);
    }
    GradcheckOptions opt = c.gradcheck;
    opt.seed = c.seed;
    if (c.corrupt_jacobian) opt.state_jacobian_scale = 1.5;
    const auto rows = run_gradcheck(families, opt);

    auto out = open_output(out_dir / "gradcheck.csv");
    out << "family,instance,param_index,adjoint_grad,fd_grad,rel_err\n";
    std::size_t failures = 0;
    for (const auto& r : rows) {
        out << r.family << ',' << r.instance << ',' << r.param_index << ',' << format_double(r.adjoint_grad) << ','
            << format_double(r.fd_grad) << ',' << format_double(r.rel_err) << '\n';
        if (!(r.rel_err <= opt.tolerance)) ++failures;
    }
    for (const auto& f : families) {
        double worst = 0.0;
        for (const auto& r : rows) {
            if (r.family == f.name) worst = std::max(worst, r.rel_err);
        }
        log << f.name << ": worst rel_err " << format_double(worst) << '\n';
    }
    log << rows.size() << " components, " << failures << " above " << format_double(opt.tolerance) << '\n';
    return failures == 0 ? kExitOk : kExitNumerical;
}

/// Simulates every extracted sequence from its data initial state and writes
/// the result in the ingestion schema (original orientation, ids prefixed by
/// the sequence index).
inline int cmd_simulate(const RunConfig& c, const std::filesystem::path& out_dir, std::ostream& log) {
    const ModelSpec m = model_spec(c);
    const auto u = required_params(c, m);
    const auto data = load_all_datasets(c, out_dir);
    std::vector<RawTrack> tracks;
    for (std::size_t s = 0; s < data.size(); ++s) {
        const auto& seq = data[s];
        const Trajectory sim = subsample(simulate_sequence(m, seq, u), stride_for(m, seq));
        const std::size_t n = seq.agents();
        const std::size_t dim = sim.layout.dim;
        const double sign = static_cast<double>(seq.direction);
        for (std::size_t i = 0; i < n; ++i) {
            RawTrack tr;
            tr.agent_id = "seq" + std::to_string(s) + "_" + seq.ref.agent_ids[i];
            for (std::size_t k = 0; k < sim.nodes(); ++k) {
                tr.t.push_back(seq.ref.times[k]);
                tr.x.push_back(sign * sim.states[k][dim * i]);
                if (dim == 2) tr.y.push_back(sim.states[k][dim * i + 1]);
            }
            tracks.push_back(std::move(tr));
        }
    }
    auto out = open_output(out_dir / "simulated_tracks.csv");
    write_tracks(out, tracks);
    log << "simulated " << data.size() << " sequences\n";
    return kExitOk;
}

/// Mean sequence cost per track file plus the average over files.
inline int cmd_cost(const RunConfig& c, const std::filesystem::path& out_dir, std::ostream& log) {
    const ModelSpec m = model_spec(c);
    const auto u = required_params(c, m);
    if (c.tracks.empty()) throw ValidationError("no track files configured (data.tracks)");
    auto out = open_output(out_dir / "cost_report.csv");
    out << "dataset,sequences,skipped,cost\n";
    double total = 0.0;
    std::size_t datasets = 0;
    for (const auto& f : c.tracks) {
        const auto seqs = load_dataset(c, f, nullptr);
        if (seqs.empty()) throw ValidationError("no sequences extracted from " + f);
        std::vector<char> degenerate(seqs.size(), 0);
        const double cost = full_dataset_cost(m, seqs, u, degenerate, c.threads);
        const auto skipped = static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), 1));
        out << f << ',' << seqs.size() << ',' << skipped << ',' << format_double(cost) << '\n';
        log << f << ": " << format_double(cost) << '\n';
        total += cost;
        ++datasets;
    }
    const double average = total / static_cast<double>(datasets);
    out << "average,,," << format_double(average) << '\n';
    log << "average: " << format_double(average) << '\n';
    return kExitOk;
}

/// Synthetic dataset in the ingestion schema.
inline int cmd_synth(const RunConfig& c, const std::filesystem::path& out_dir, std::ostream& log) {
    const ModelSpec m = model_spec(c);
    std::vector<double> truth = c.synth_truth;
    if (truth.empty()) {
        if (m.family == ModelFamily::traffic_lwr_linear || m.family == ModelFamily::traffic_lwr_log) {
            truth = {22.0, 5.0};
        } else {
            throw ValidationError("synth.truth is required for model family " + std::string(to_string(m.family)));
        }
    }
    truth = project(truth, admissible_set(c, m));
    SynthOptions opt;
    opt.n_sequences = c.synth_sequences;
    opt.agents = c.synth_agents;
    opt.noise_std = c.synth_noise;
    opt.data_steps = c.synth_steps;
    opt.dt_data = c.data_dt();
    opt.seed = c.seed;
    const auto ds = synth_generate(m, truth, opt);
    save_tracks(out_dir / "synth_tracks.csv", ds.tracks);
    nlohmann::json j;
    j["family"] = std::string(to_string(m.family));
    j["truth"] = truth;
    j["sequences"] = opt.n_sequences;
    j["agents"] = opt.agents;
    j["steps"] = opt.data_steps;
    j["dt_data"] = opt.dt_data;
    j["noise_std"] = opt.noise_std;
    j["seed"] = c.seed;
    open_output(out_dir / "synth_manifest.json") << j.dump(2) << '\n';
    log << "wrote " << ds.tracks.size() << " tracks in " << opt.n_sequences << " sequences\n";
    return kExitOk;
}

/// Pair force over relative positions [−e, e]² at fixed relative velocity;
/// one file per component and velocity. The social force is undefined at the
/// origin and reported as nan there.
inline int cmd_force_grid(const RunConfig& c, const std::filesystem::path& out_dir, std::ostream& log) {
    if (is_traffic(c.family)) throw ValidationError("force-grid needs a crowd model family");
    const ModelSpec m = model_spec(c);
    const auto u = required_params(c, m);
    const std::size_t res = c.grid_resolution;
    const double e = c.grid_extent;
    auto coord = [&](std::size_t i) { return -e + 2.0 * e * static_cast<double>(i) / static_cast<double>(res - 1); };

    std::vector<double> w;
    const NetSpec* net = nullptr;
    if (m.family == ModelFamily::crowd_nn) {
        const std::size_t split = m.crowd_nets.interaction.param_count();
        if (c.grid_network == "interaction") {
            net = &m.crowd_nets.interaction;
            w.assign(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(split));
        } else {
            net = &m.crowd_nets.wall;
            w.assign(u.begin() + static_cast<std::ptrdiff_t>(split), u.end());
        }
    }
    SocialForceParams sp = m.fixed;
    if (m.family == ModelFamily::crowd_sf) {
        sp.A = u[0];
        sp.k = u[1];
        sp.kappa = u[2];
    }
    NetEvalTrace trace;
    for (std::size_t j = 0; j < c.grid_dv.size(); ++j) {
        const Vec2 dv = c.grid_dv[j];
        auto fx = open_output(out_dir / ("force_grid_fx_dv" + std::to_string(j) + ".csv"));
        auto fy = open_output(out_dir / ("force_grid_fy_dv" + std::to_string(j) + ".csv"));
        fx << "dx,dy,dvx,dvy,fx\n";
        fy << "dx,dy,dvx,dvy,fy\n";
        for (std::size_t a = 0; a < res; ++a) {
            for (std::size_t b = 0; b < res; ++b) {
                const Vec2 dx{coord(a), coord(b)};
                Vec2 f;
                if (net) {
                    const double in[4] = {dx.x, dx.y, dv.x, dv.y};
                    const auto& o = ipcal::detail::forward<double>(*net, w, in, trace);
                    f = {o[0], o[1]};
                } else if (norm(dx) > 0.0) {
                    f = social_pair_force(PairKinematics{dx, dv}, sp, 2.0 * sp.r);
                } else {
                    f = {std::nan(""), std::nan("")};
                }
                const std::string key = format_double(dx.x) + ',' + format_double(dx.y) + ',' + format_double(dv.x) +
                                        ',' + format_double(dv.y) + ',';
                fx << key << format_double(f.x) << '\n';
                fy << key << format_double(f.y) << '\n';
            }
        }
    }
    log << "wrote " << 2 * c.grid_dv.size() << " grids of " << res << "x" << res << '\n';
    return kExitOk;
}

struct PairScenario {
    std::string name;
    Vec2 x_blue, x_red, v_blue, v_red;
};

inline std::vector<PairScenario> read_pair_scenarios(std::istream& in, const std::string& source) {
    CsvReader reader(in, source);
    reader.expect_header({"scenario", "x_blue", "y_blue", "x_red", "y_red", "vx_blue", "vy_blue", "vx_red", "vy_red"});
    std::vector<PairScenario> out;
    std::vector<std::string_view> f;
    while (reader.next(f)) {
        if (f.size() != 9) reader.fail("expected 9 fields, found " + std::to_string(f.size()));
        double v[8];
        for (int k = 0; k < 8; ++k) {
            v[k] = reader.number(f[static_cast<std::size_t>(k) + 1]);
            if (!std::isfinite(v[k])) reader.fail("non-finite value");
        }
        out.push_back({std::string(f[0]), {v[0], v[1]}, {v[2], v[3]}, {v[4], v[5]}, {v[6], v[7]}});
    }
    return out;
}

struct PairForces {
    Vec2 blue;
    Vec2 red;
};

/// Force on each agent of the pair from the other. For the social force the
/// raw pair force; for the crowd NN the interaction network plus the
/// wall-averaged wall network.
inline PairForces pair_forces(const ModelSpec& m, std::span<const double> u, const PairScenario& s) {
    if (m.family == ModelFamily::crowd_sf) {
        SocialForceParams p = m.fixed;
        p.A = u[0];
        p.k = u[1];
        p.kappa = u[2];
        const double R = 2.0 * p.r;
        return {social_pair_force(PairKinematics{s.x_blue - s.x_red, s.v_blue - s.v_red}, p, R),
                social_pair_force(PairKinematics{s.x_red - s.x_blue, s.v_red - s.v_blue}, p, R)};
    }
    if (m.family != ModelFamily::crowd_nn) throw ValidationError("pair-study needs a crowd model family");
    const std::size_t split = m.crowd_nets.interaction.param_count();
    const auto wi = u.first(split);
    const auto ww = u.subspan(split);
    NetEvalTrace trace;
    auto net = [&](const NetSpec& spec, std::span<const double> w, Vec2 dx, Vec2 dv) {
        const double in[4] = {dx.x, dx.y, dv.x, dv.y};
        const auto& o = ipcal::detail::forward<double>(spec, w, in, trace);
        return Vec2{o[0], o[1]};
    };
    auto total = [&](Vec2 xi, Vec2 vi, Vec2 xj, Vec2 vj) {
        Vec2 f = net(m.crowd_nets.interaction, wi, xi - xj, vi - vj);
        if (!m.walls->empty()) {
            Vec2 wall;
            for (const auto& p : m.walls->points) wall += net(m.crowd_nets.wall, ww, xi - p.position, vi);
            f += (1.0 / static_cast<double>(m.walls->count())) * wall;
        }
        return f;
    };
    return {total(s.x_blue, s.v_blue, s.x_red, s.v_red), total(s.x_red, s.v_red, s.x_blue, s.v_blue)};
}

inline int cmd_pair_study(const RunConfig& c, const std::filesystem::path& out_dir, std::ostream& log) {
    if (is_traffic(c.family)) throw ValidationError("pair-study needs a crowd model family");
    if (c.scenarios.empty()) throw ValidationError("pair_study.scenarios is not configured");
    const ModelSpec m = model_spec(c);
    const auto u = required_params(c, m);
    const auto path = c.resolve(c.scenarios);
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scenario file " + path.string());
    const auto scenarios = read_pair_scenarios(in, path.string());
    auto out = open_output(out_dir / "pair_study.csv");
    out << "scenario,fx_blue,fy_blue,fx_red,fy_red\n";
    for (const auto& s : scenarios) {
        const PairForces f = pair_forces(m, u, s);
        out << s.name << ',' << format_double(f.blue.x) << ',' << format_double(f.blue.y) << ','
            << format_double(f.red.x) << ',' << format_double(f.red.y) << '\n';
        log << s.name << ": blue (" << f.blue.x << ", " << f.blue.y << ") red (" << f.red.x << ", " << f.red.y
            << ")\n";
    }
    return kExitOk;
}

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"calibrate", "gradcheck", "simulate",  "cost",
                                                "synth",     "force-grid", "pair-study"};
    return names;
}

/// Runs one subcommand and converts failures into exit codes.
inline int run_command(const std::string& command, const GlobalOptions& g, std::ostream& log, std::ostream& err) {
    try {
        const RunConfig c = effective_config(g);
        std::filesystem::create_directories(g.out_dir);
        if (command == "calibrate") return cmd_calibrate(c, g.out_dir, log);
        if (command == "gradcheck") return cmd_gradcheck(c, g.out_dir, log);
        if (command == "simulate") return cmd_simulate(c, g.out_dir, log);
        if (command == "cost") return cmd_cost(c, g.out_dir, log);
        if (command == "synth") return cmd_synth(c, g.out_dir, log);
        if (command == "force-grid") return cmd_force_grid(c, g.out_dir, log);
        if (command == "pair-study") return cmd_pair_study(c, g.out_dir, log);
        throw ValidationError("unknown command '" + command + "'");
    } catch (const NumericalError& e) {
        err << "error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    }
}

} // namespace ipcal::cli
