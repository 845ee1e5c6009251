#pragma once

// Trajectory ingestion (CSV `t,agent_id,x[,y][,lane]`), resampling onto a
// uniform grid, sequence extraction for traffic and crowd data, and
// synthetic dataset generation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ipcal/csv.hpp"
#include "ipcal/dynamics.hpp"
#include "ipcal/error.hpp"
#include "ipcal/model.hpp"
#include "ipcal/sequence.hpp"

namespace ipcal {

struct RawTrack {
    std::string agent_id;
    std::vector<double> t;
    std::vector<double> x;
    std::vector<double> y; // empty for 1D tracks

    std::size_t size() const noexcept { return t.size(); }
    bool planar() const noexcept { return !y.empty(); }
};

struct TrackFile {
    std::vector<RawTrack> tracks; // first-appearance order
    std::size_t dim = 1;
    std::size_t dropped_rows = 0; // non-finite coordinates
    std::size_t filtered_rows = 0; // other lanes
};

/// Reads an ingestion CSV. `lane`, when given, keeps only rows of that lane
/// (requires a lane column).
inline TrackFile read_tracks(std::istream& in, const std::string& source,
                             const std::optional<std::string>& lane = std::nullopt) {
    CsvReader reader(in, source);
    TrackFile out;
    if (reader.empty_file()) return out;
    const auto& h = reader.header();
    const bool has_y = h.size() >= 4 && h[3] == "y";
    const bool has_lane = h.back() == "lane" && h.size() == (has_y ? 5u : 4u);
    const std::size_t width = 3 + (has_y ? 1 : 0) + (has_lane ? 1 : 0);
    if (h.size() < 3 || h[0] != "t" || h[1] != "agent_id" || h[2] != "x" || h.size() != width) {
        throw ValidationError(source + ":1: expected header t,agent_id,x[,y][,lane]");
    }
    if (lane && !has_lane) throw ValidationError(source + ": lane filter given but the file has no lane column");
    out.dim = has_y ? 2 : 1;

    std::unordered_map<std::string, std::size_t> index;
    std::vector<std::string_view> f;
    while (reader.next(f)) {
        if (f.size() != width) {
            reader.fail("expected " + std::to_string(width) + " fields, found " + std::to_string(f.size()) +
                        " (mixed 1D/2D rows are not allowed)");
        }
        if (has_lane && lane && f.back() != *lane) {
            ++out.filtered_rows;
            continue;
        }
        const double t = reader.number(f[0]);
        const double x = reader.number(f[2]);
        const double y = has_y ? reader.number(f[3]) : 0.0;
        if (!std::isfinite(t)) reader.fail("non-finite timestamp");
        if (f[1].empty()) reader.fail("empty agent_id");
        if (!std::isfinite(x) || !std::isfinite(y)) {
            ++out.dropped_rows;
            continue;
        }
        const std::string id(f[1]);
        auto [it, inserted] = index.try_emplace(id, out.tracks.size());
        if (inserted) out.tracks.push_back(RawTrack{id, {}, {}, {}});
        RawTrack& tr = out.tracks[it->second];
        if (!tr.t.empty() && !(t > tr.t.back())) {
            reader.fail("timestamps of agent '" + id + "' are not strictly increasing");
        }
        tr.t.push_back(t);
        tr.x.push_back(x);
        if (has_y) tr.y.push_back(y);
    }
    return out;
}

inline TrackFile load_tracks(const std::filesystem::path& path, const std::optional<std::string>& lane = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open track file " + path.string());
    return read_tracks(in, path.string(), lane);
}

inline void write_tracks(std::ostream& out, std::span<const RawTrack> tracks) {
    const bool planar = !tracks.empty() && tracks.front().planar();
    out << (planar ? "t,agent_id,x,y\n" : "t,agent_id,x\n");
    // Rows sorted by time, agents in their given order within a timestamp.
    std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> rows;
    for (std::size_t a = 0; a < tracks.size(); ++a) {
        if (tracks[a].planar() != planar) throw ValidationError("cannot mix 1D and 2D tracks in one file");
        for (std::size_t s = 0; s < tracks[a].size(); ++s) rows.push_back({tracks[a].t[s], {a, s}});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
    for (const auto& [t, as] : rows) {
        const RawTrack& tr = tracks[as.first];
        out << format_double(t) << ',' << tr.agent_id << ',' << format_double(tr.x[as.second]);
        if (planar) out << ',' << format_double(tr.y[as.second]);
        out << '\n';
    }
}

inline void save_tracks(const std::filesystem::path& path, std::span<const RawTrack> tracks) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write track file " + path.string());
    write_tracks(out, tracks);
}

// ---------------------------------------------------------------------------
// Grid alignment
// ---------------------------------------------------------------------------

/// Nodes t_n = n·dt for integer n.
struct UniformGrid {
    double dt = 0.2;
    double time(long n) const { return static_cast<double>(n) * dt; }

    /// Nodes n with t_lo ≤ time(n) ≤ t_hi, compared exactly.
    std::pair<long, long> covered(double t_lo, double t_hi) const {
        long lo = static_cast<long>(std::ceil(t_lo / dt));
        long hi = static_cast<long>(std::floor(t_hi / dt));
        while (time(lo) < t_lo) ++lo;
        while (lo > std::numeric_limits<long>::min() && time(lo - 1) >= t_lo) --lo;
        while (time(hi) > t_hi) --hi;
        while (time(hi + 1) <= t_hi) ++hi;
        return {lo, hi};
    }
};

/// Piecewise-linear interpolation of the track at the given times, one
/// value per time and coordinate (x or x,y interleaved). nullopt if any time
/// falls outside the track's span.
inline std::optional<std::vector<double>> interpolate_to_grid(const RawTrack& track, std::span<const double> times) {
    if (track.size() == 0) return std::nullopt;
    const std::size_t dim = track.planar() ? 2 : 1;
    std::vector<double> out;
    out.reserve(times.size() * dim);
    for (double t : times) {
        if (t < track.t.front() || t > track.t.back()) return std::nullopt;
        const auto it = std::upper_bound(track.t.begin(), track.t.end(), t);
        const std::size_t hi = static_cast<std::size_t>(it - track.t.begin());
        const std::size_t lo = hi - 1; // track.t[lo] <= t
        if (track.t[lo] == t || hi == track.size()) {
            out.push_back(track.x[lo]);
            if (dim == 2) out.push_back(track.y[lo]);
            continue;
        }
        const double w = (t - track.t[lo]) / (track.t[hi] - track.t[lo]);
        out.push_back(track.x[lo] + w * (track.x[hi] - track.x[lo]));
        if (dim == 2) out.push_back(track.y[lo] + w * (track.y[hi] - track.y[lo]));
    }
    return out;
}

namespace detail {

struct NodeRange {
    long lo = 0;
    long hi = -1;
    bool empty() const { return hi < lo; }
};

inline std::vector<NodeRange> coverage(std::span<const RawTrack> tracks, const UniformGrid& grid) {
    std::vector<NodeRange> r(tracks.size());
    for (std::size_t a = 0; a < tracks.size(); ++a) {
        if (tracks[a].size() == 0) continue;
        const auto [lo, hi] = grid.covered(tracks[a].t.front(), tracks[a].t.back());
        r[a] = {lo, hi};
    }
    return r;
}

inline std::vector<double> node_times(const UniformGrid& grid, long first, long last) {
    std::vector<double> t;
    for (long n = first; n <= last; ++n) t.push_back(grid.time(n));
    return t;
}

} // namespace detail

/// Maximal windows of constant agent membership with at least `min_agents`
/// agents and at least two nodes. Only x is used; windows travelling towards
/// −x are mirrored, and agents are sorted by initial position (leader last).
inline std::vector<SequenceSample> extract_traffic_sequences(std::span<const RawTrack> tracks, double dt_data,
                                                             std::size_t min_agents = 2,
                                                             const std::string& source = {}) {
    if (!(dt_data > 0.0)) throw ValidationError("data time step must be positive");
    if (min_agents < 1) throw ValidationError("min_agents must be positive");
    const UniformGrid grid{dt_data};
    const auto cov = detail::coverage(tracks, grid);
    long first = std::numeric_limits<long>::max(), last = std::numeric_limits<long>::min();
    for (const auto& c : cov) {
        if (c.empty()) continue;
        first = std::min(first, c.lo);
        last = std::max(last, c.hi);
    }
    std::vector<SequenceSample> out;
    if (first > last) return out;

    auto members_at = [&](long n) {
        std::vector<std::size_t> m;
        for (std::size_t a = 0; a < cov.size(); ++a) {
            if (!cov[a].empty() && cov[a].lo <= n && n <= cov[a].hi) m.push_back(a);
        }
        return m;
    };

    auto emit = [&](long w0, long w1, const std::vector<std::size_t>& members) {
        if (members.size() < min_agents || w1 <= w0) return;
        const auto times = detail::node_times(grid, w0, w1);
        const std::size_t nodes = times.size();
        std::vector<std::vector<double>> pos; // [member][node]
        for (std::size_t a : members) {
            RawTrack xonly{tracks[a].agent_id, tracks[a].t, tracks[a].x, {}};
            auto v = interpolate_to_grid(xonly, times);
            if (!v) return; // cannot happen for covered nodes
            pos.push_back(std::move(*v));
        }
        double net = 0.0;
        for (const auto& p : pos) net += p.back() - p.front();
        const int direction = net < 0.0 ? -1 : 1;
        if (direction < 0) {
            for (auto& p : pos) {
                for (double& v : p) v = -v;
            }
        }
        std::vector<std::size_t> order(members.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return pos[l][0] < pos[r][0]; });

        SequenceSample s;
        s.source = source;
        s.window_start = w0;
        s.direction = direction;
        s.ref.layout = {members.size(), 1, false};
        s.ref.times = times;
        s.ref.dt = dt_data;
        for (std::size_t i : order) s.ref.agent_ids.push_back(tracks[members[i]].agent_id);
        s.ref.states.assign(nodes, std::vector<double>(members.size()));
        for (std::size_t k = 0; k < nodes; ++k) {
            for (std::size_t i = 0; i < order.size(); ++i) s.ref.states[k][i] = pos[order[i]][k];
            for (std::size_t i = 0; i + 1 < order.size(); ++i) {
                if (s.ref.states[k][i + 1] < s.ref.states[k][i]) ++s.order_violations;
            }
        }
        s.initial_state = s.ref.states.front();
        out.push_back(std::move(s));
    };

    long start = first;
    auto current = members_at(first);
    for (long n = first + 1; n <= last + 1; ++n) {
        auto m = n <= last ? members_at(n) : std::vector<std::size_t>{};
        if (n > last || m != current) {
            emit(start, n - 1, current);
            start = n;
            current = std::move(m);
        }
    }
    return out;
}

/// Consecutive non-overlapping windows of `steps` intervals starting at the
/// first grid node of the recording. Pedestrians covering the whole window
/// are kept; velocities come from finite differences (one-sided at the
/// window ends, central inside) and the destination is the last position.
inline std::vector<SequenceSample> extract_crowd_sequences(std::span<const RawTrack> tracks, double dt = 0.04,
                                                           std::size_t steps = 25, const std::string& source = {}) {
    if (!(dt > 0.0)) throw ValidationError("data time step must be positive");
    if (steps < 1) throw ValidationError("sequence length must be at least one step");
    for (const auto& t : tracks) {
        if (t.size() > 0 && !t.planar()) throw ValidationError("crowd sequences need 2D tracks");
    }
    const UniformGrid grid{dt};
    const auto cov = detail::coverage(tracks, grid);
    long first = std::numeric_limits<long>::max(), last = std::numeric_limits<long>::min();
    for (const auto& c : cov) {
        if (c.empty()) continue;
        first = std::min(first, c.lo);
        last = std::max(last, c.hi);
    }
    std::vector<SequenceSample> out;
    if (first > last) return out;
    const long len = static_cast<long>(steps);
    for (long w0 = first; w0 + len <= last; w0 += len) {
        const long w1 = w0 + len;
        const auto times = detail::node_times(grid, w0, w1);
        std::vector<std::size_t> members;
        for (std::size_t a = 0; a < cov.size(); ++a) {
            if (!cov[a].empty() && cov[a].lo <= w0 && w1 <= cov[a].hi) members.push_back(a);
        }
        if (members.empty()) continue;
        const std::size_t n = members.size();
        const std::size_t nodes = times.size();
        SequenceSample s;
        s.source = source;
        s.window_start = w0;
        s.ref.layout = {n, 2, true};
        s.ref.times = times;
        s.ref.dt = dt;
        s.ref.states.assign(nodes, std::vector<double>(4 * n, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            const auto p = *interpolate_to_grid(tracks[members[i]], times);
            s.ref.agent_ids.push_back(tracks[members[i]].agent_id);
            for (std::size_t k = 0; k < nodes; ++k) {
                s.ref.states[k][2 * i] = p[2 * k];
                s.ref.states[k][2 * i + 1] = p[2 * k + 1];
                const std::size_t a = k == 0 ? 0 : (k + 1 == nodes ? k - 1 : k - 1);
                const std::size_t b = k == 0 ? 1 : (k + 1 == nodes ? k : k + 1);
                const double span = static_cast<double>(b - a) * dt;
                s.ref.states[k][2 * n + 2 * i] = (p[2 * b] - p[2 * a]) / span;
                s.ref.states[k][2 * n + 2 * i + 1] = (p[2 * b + 1] - p[2 * a + 1]) / span;
            }
            s.destinations.push_back({p[2 * (nodes - 1)], p[2 * (nodes - 1) + 1]});
        }
        s.initial_state = s.ref.states.front();
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct PreprocessOptions {
    std::string kind = "traffic"; // or "crowd"
    double dt_data = 0.2;
    std::size_t steps = 25;       // crowd window length
    std::size_t min_agents = 2;   // traffic
    std::optional<std::string> lane;
};

/// Sequence descriptors, grid parameters and preprocessing provenance.
inline nlohmann::json dataset_manifest(const std::string& source, const TrackFile& file,
                                       std::span<const SequenceSample> seqs, const PreprocessOptions& opt) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["source"] = source;
    j["kind"] = opt.kind;
    j["dt_data"] = opt.dt_data;
    if (opt.kind == "crowd") {
        j["steps"] = opt.steps;
        j["T_seq"] = static_cast<double>(opt.steps) * opt.dt_data;
    } else {
        j["min_agents"] = opt.min_agents;
    }
    j["lane_filter"] = opt.lane ? nlohmann::json(*opt.lane) : nlohmann::json();
    j["tracks"] = file.tracks.size();
    j["dropped_nonfinite_rows"] = file.dropped_rows;
    j["filtered_lane_rows"] = file.filtered_rows;
    nlohmann::json list = nlohmann::json::array();
    for (const auto& s : seqs) {
        list.push_back({{"source", s.source},
                        {"window_start_node", s.window_start},
                        {"t_start", s.ref.times.front()},
                        {"nodes", s.ref.nodes()},
                        {"agents", s.agents()},
                        {"agent_ids", s.ref.agent_ids},
                        {"direction", s.direction},
                        {"order_violations", s.order_violations}});
    }
    j["sequences"] = list;
    return j;
}

/// Loads a track file and cuts it into sequences per `opt`.
inline std::vector<SequenceSample> preprocess(const std::filesystem::path& path, const PreprocessOptions& opt,
                                              nlohmann::json* manifest = nullptr) {
    const TrackFile file = load_tracks(path, opt.lane);
    std::vector<SequenceSample> seqs;
    if (opt.kind == "crowd") {
        seqs = extract_crowd_sequences(file.tracks, opt.dt_data, opt.steps, path.filename().string());
    } else if (opt.kind == "traffic") {
        seqs = extract_traffic_sequences(file.tracks, opt.dt_data, opt.min_agents, path.filename().string());
    } else {
        throw ValidationError("unknown dataset kind '" + opt.kind + "'");
    }
    if (manifest) *manifest = dataset_manifest(path.filename().string(), file, seqs, opt);
    return seqs;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SynthOptions {
    std::size_t n_sequences = 50;
    std::size_t agents = 3;
    double noise_std = 0.0;
    std::size_t data_steps = 25; // data intervals per sequence
    double dt_data = 0.2;
    std::uint64_t seed = 0;
    std::size_t max_retries = 20;
    // traffic initial gaps (m)
    double gap_min = 8.0;
    double gap_max = 25.0;
};

struct SynthDataset {
    std::vector<RawTrack> tracks;          // ingestion form, noise included
    std::vector<Trajectory> clean;         // simulated states on the data grid
    std::vector<std::vector<double>> initial_states;
};

/// Random admissible initial conditions, forward Euler at model.sim_dt,
/// sampling at data nodes, optional Gaussian position noise. Sequences are
/// laid out back to back in time with distinct agent ids so that the
/// ingestion path recovers one window per sequence.
inline SynthDataset synth_generate(const ModelSpec& model, std::span<const double> true_params, const SynthOptions& opt) {
    if (true_params.size() != model.param_count()) throw ValidationError("true parameter vector has the wrong length");
    if (opt.agents == 0 || opt.n_sequences == 0 || opt.data_steps == 0) {
        throw ValidationError("synthetic dataset needs agents, sequences and steps");
    }
    const bool traffic = is_traffic(model.family);
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const UniformGrid grid{opt.dt_data};
    // Crowd windows are cut back to back; traffic sequences get a spacer.
    const long span = static_cast<long>(opt.data_steps) + (traffic ? 5 : 0);

    SynthDataset ds;
    for (std::size_t s = 0; s < opt.n_sequences; ++s) {
        const long offset = static_cast<long>(s) * span;
        SequenceSample seq;
        seq.ref.layout = traffic ? StateLayout{opt.agents, 1, false} : StateLayout{opt.agents, 2, true};
        seq.ref.dt = opt.dt_data;
        for (long k = 0; k <= static_cast<long>(opt.data_steps); ++k) seq.ref.times.push_back(grid.time(offset + k));
        seq.ref.states.assign(opt.data_steps + 1, std::vector<double>(seq.ref.layout.size(), 0.0));

        Trajectory sampled;
        bool ok = false;
        for (std::size_t attempt = 0; attempt < opt.max_retries && !ok; ++attempt) {
            std::vector<double> y0;
            if (traffic) {
                std::uniform_real_distribution<double> gap(opt.gap_min, opt.gap_max);
                double x = 0.0;
                for (std::size_t i = 0; i < opt.agents; ++i) {
                    y0.push_back(x);
                    x += gap(rng);
                }
            } else {
                std::uniform_real_distribution<double> px(-4.0, 4.0), py(-2.0, 2.0), speed(0.8, 1.4);
                std::vector<Vec2> p, v;
                seq.destinations.clear();
                for (std::size_t i = 0; i < opt.agents; ++i) {
                    Vec2 cand;
                    for (int tries = 0; tries < 1000; ++tries) {
                        cand = {px(rng), py(rng)};
                        bool clear = true;
                        for (const auto& q : p) clear = clear && norm(cand - q) > 0.6;
                        if (clear) break;
                    }
                    const double dir = (i % 2 == 0) ? 1.0 : -1.0;
                    const Vec2 vel{dir * speed(rng), 0.0};
                    p.push_back(cand);
                    v.push_back(vel);
                    seq.destinations.push_back(cand + 10.0 * vel);
                }
                y0 = flatten(CrowdState{p, v, seq.destinations});
            }
            seq.initial_state = y0;
            try {
                const Trajectory fine = simulate_sequence(model, seq, true_params);
                sampled = subsample(fine, stride_for(model, seq));
                ok = true;
            } catch (const NumericalError&) {
            }
        }
        if (!ok) throw NumericalError("synthetic sequence " + std::to_string(s) + " failed after retries");

        Trajectory clean;
        clean.layout = seq.ref.layout;
        clean.dt = opt.dt_data;
        clean.times = seq.ref.times;
        clean.states = sampled.states;
        const std::size_t n = opt.agents;
        for (std::size_t i = 0; i < n; ++i) {
            RawTrack tr;
            tr.agent_id = "s" + std::to_string(s) + "_a" + std::to_string(i);
            clean.agent_ids.push_back(tr.agent_id);
            for (std::size_t k = 0; k < clean.nodes(); ++k) {
                tr.t.push_back(clean.times[k]);
                if (traffic) {
                    tr.x.push_back(clean.states[k][i] + opt.noise_std * noise(rng));
                } else {
                    tr.x.push_back(clean.states[k][2 * i] + opt.noise_std * noise(rng));
                    tr.y.push_back(clean.states[k][2 * i + 1] + opt.noise_std * noise(rng));
                }
            }
            ds.tracks.push_back(std::move(tr));
        }
        ds.initial_states.push_back(seq.initial_state);
        ds.clean.push_back(std::move(clean));
    }
    return ds;
}

} // namespace ipcal
