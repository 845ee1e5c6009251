// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "ipcal/optimizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Proc {
    int status = -1;
    std::string output;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Proc run(const std::string& cmd) {
    Proc r;
    FILE* p = popen((cmd + " 2>&1").c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
    const int st = pclose(p);
    r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

Proc cli(const std::string& command, const fs::path& config, const fs::path& out, const std::string& extra = {}) {
    return run(quote(IPCAL_CLI_PATH) + " " + command + " --config " + quote(config.string()) + " --out-dir " +
               quote(out.string()) + (extra.empty() ? "" : " " + extra));
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        rows.push_back(f);
    }
    return rows;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path write_json(const fs::path& p, const json& j) {
    std::ofstream(p) << j.dump(2);
    return p;
}

double rel(double a, double b) {
    const double s = std::max(std::abs(a), std::abs(b));
    return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// 1. Adjoint gradient against central differences, every family, 20 instances.
Outcome adjoint_exactness(const fs::path& work) {
    const auto t0 = Clock::now();
    const auto r = cli("gradcheck", fs::path(IPCAL_SAMPLES_DIR) / "gradcheck.json", work / "gradcheck");
    const double secs = seconds_since(t0);
    const auto rows = read_csv(work / "gradcheck" / "gradcheck.csv");
    std::map<std::string, std::set<std::string>> instances;
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t k = 1; k < rows.size(); ++k) {
        if (rows[k].size() != 6) return {false, "malformed gradcheck row " + std::to_string(k + 1)};
        instances[rows[k][0]].insert(rows[k][1]);
        worst = std::max(worst, std::stod(rows[k][5]));
        ++checked;
    }
    bool enough = instances.size() == 7;
    for (const auto& [fam, ids] : instances) enough = enough && ids.size() >= 20;
    std::ostringstream d;
    d << instances.size() << " families, " << checked << " components, worst rel_err " << worst << ", " << secs
      << " s";
    return {r.status == 0 && enough && worst <= 1e-5 && secs <= 60.0, d.str()};
}

// 2. Pair forces for the published social-force optimum.
Outcome pair_force_table(const fs::path& work) {
    const auto r = cli("pair-study", fs::path(IPCAL_SAMPLES_DIR) / "crowd_sf_forces.json", work / "pair");
    if (r.status != 0) return {false, "pair-study exited " + std::to_string(r.status) + ": " + r.output};
    const auto rows = read_csv(work / "pair" / "pair_study.csv");
    // Published blue and red force per scenario S1..S6.
    const double table[6][4] = {{0, 2.1118, 0, -2.1118},           {0, 2.1118, 0, -2.1118},
                                {0.0417, 2.0961, -0.0417, -2.0961}, {0.0952, 2.0936, -0.0952, -2.0936},
                                {2.1118, 1.1867, -2.1118, -1.1867}, {2.1118, 0, -2.1118, 0}};
    if (rows.size() != 7) return {false, "expected 6 scenario rows"};
    double worst_rel = 0.0, worst_abs = 0.0;
    bool ok = true;
    for (std::size_t s = 0; s < 6; ++s) {
        for (std::size_t c = 0; c < 4; ++c) {
            const double got = std::stod(rows[s + 1][c + 1]);
            const double want = table[s][c];
            if (std::abs(want) < 1e-3) {
                worst_abs = std::max(worst_abs, std::abs(got - want));
                ok = ok && std::abs(got - want) <= 1e-3;
            } else {
                const double e = std::abs(got - want) / std::abs(want);
                worst_rel = std::max(worst_rel, e);
                ok = ok && e <= 0.01;
            }
        }
    }
    const double s5 = std::abs(std::stod(rows[5][2]) - 1.1867) / 1.1867;
    std::ostringstream d;
    d << "worst relative " << worst_rel << ", worst absolute " << worst_abs << ", S5 tangential rel " << s5;
    return {ok && s5 <= 1e-3, d.str()};
}

// 3. Recovery of (v0, L) = (22, 5) from noisy synthetic data, starting at (30, 5).
Outcome synthetic_recovery(const fs::path& work) {
    const auto t0 = Clock::now();
    const auto synth_cfg = write_json(work / "synth.json",
                                      {{"schema_version", 1},
                                       {"model", {{"family", "traffic_lwr_linear"}}},
                                       {"synth",
                                        {{"sequences", 50},
                                         {"agents", 3},
                                         {"steps", 25},
                                         {"noise_std", 0.05},
                                         {"truth", {22.0, 5.0}}}},
                                       {"optimizer", {{"seed", 1}}}});
    const auto s = cli("synth", synth_cfg, work / "synth");
    if (s.status != 0) return {false, "synth exited " + std::to_string(s.status) + ": " + s.output};
    const auto cal_cfg = write_json(work / "calibrate.json",
                                    {{"schema_version", 1},
                                     {"model", {{"family", "traffic_lwr_linear"}}},
                                     {"data", {{"tracks", (work / "synth" / "synth_tracks.csv").string()}}},
                                     {"params", {{"values", {30.0, 5.0}}}},
                                     {"optimizer", {{"iterations", 3500}, {"seed", 1}, {"threads", 1}}}});
    const auto c = cli("calibrate", cal_cfg, work / "recovery", "--threads 1");
    const double secs = seconds_since(t0);
    if (c.status != 0) return {false, "calibrate exited " + std::to_string(c.status) + ": " + c.output};
    const auto summary = json::parse(slurp(work / "recovery" / "summary.json"));
    const double v0 = summary["identified"]["v0"], L = summary["identified"]["L"];
    const double ev = std::abs(v0 - 22.0) / 22.0, eL = std::abs(L - 5.0) / 5.0;
    std::ostringstream d;
    d << "v0 " << v0 << " (rel " << ev << "), L " << L << " (rel " << eL << "), " << secs << " s";
    return {ev <= 0.05 && eL <= 0.05 && secs <= 300.0, d.str()};
}

// 4. ADADELTA: hand-evaluated first two steps and a 100-step straight-line oracle.
Outcome adadelta_recursion() {
    const double rho = 0.95, eps = 1e-6;
    auto s1 = ipcal::adadelta_step(ipcal::AdadeltaState(1, rho, eps), std::vector<double>{1.0});
    const double dx1 = -std::sqrt(1e-6) / std::sqrt(0.050001);
    const double ex1 = 0.05 * dx1 * dx1;
    auto s2 = ipcal::adadelta_step(s1.state, std::vector<double>{1.0});
    const double eg2 = 0.95 * 0.05 + 0.05;
    const double dx2 = -std::sqrt(ex1 + 1e-6) / std::sqrt(eg2 + 1e-6);
    const double ex2 = 0.95 * ex1 + 0.05 * dx2 * dx2;
    double worst = std::max({rel(s1.update[0], dx1), rel(s1.state.eg2[0], 0.05), rel(s1.state.edx2[0], ex1),
                             rel(s2.update[0], dx2), rel(s2.state.eg2[0], eg2), rel(s2.state.edx2[0], ex2)});
    const bool four_sf = std::abs(s1.update[0] + 4.4721e-3) < 5e-8 && std::abs(ex1 - 9.9998e-7) < 5e-12;

    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g(0.0, 1.5);
    ipcal::AdadeltaState st(6, rho, eps);
    std::vector<double> a(6, 0.0), b(6, 0.0);
    for (int k = 0; k < 100; ++k) {
        std::vector<double> grad(6);
        for (double& v : grad) v = g(rng);
        auto step = ipcal::adadelta_step(st, grad);
        for (std::size_t i = 0; i < 6; ++i) {
            a[i] = rho * a[i] + (1 - rho) * grad[i] * grad[i];
            const double dx = -std::sqrt(b[i] + eps) / std::sqrt(a[i] + eps) * grad[i];
            b[i] = rho * b[i] + (1 - rho) * dx * dx;
            worst = std::max({worst, rel(step.update[i], dx), rel(step.state.eg2[i], a[i]),
                              rel(step.state.edx2[i], b[i])});
        }
        st = std::move(step.state);
    }
    std::ostringstream d;
    d << "worst relative deviation " << worst << (four_sf ? "" : ", first step differs from -4.4721e-3");
    return {worst <= 1e-12 && four_sf, d.str()};
}

// 5. Empirical noise variance against eta1/(1+k)^eta2.
Outcome noise_variance() {
    const ipcal::NoiseSchedule sched{1.0, 0.55, 77};
    std::mt19937_64 rng(sched.seed);
    const std::vector<double> zero(1, 0.0);
    double worst = 0.0;
    for (std::size_t k : {0u, 3u, 10u}) {
        const int n = 100000;
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double x = ipcal::noisy_gradient(zero, sched, k, rng)[0];
            sum += x;
            sum2 += x * x;
        }
        const double mean = sum / n;
        const double var = (sum2 - n * mean * mean) / (n - 1);
        const double want = 1.0 / std::pow(1.0 + static_cast<double>(k), 0.55);
        worst = std::max(worst, std::abs(var - want) / want);
    }
    std::ostringstream d;
    d << "worst relative variance error " << worst;
    return {worst <= 0.03, d.str()};
}

// 6. Invariant cases from the unit suites.
Outcome invariant_suites() {
    const std::vector<std::pair<std::string, std::string>> suites{
        {"test_nn_core", "JacInput.MatchesCentralDifferences:GradParams.DirectionalDerivative:"
                         "GradParams.MatchesCentralDifferencesPerWeight"},
        {"test_force_models", "SocialForce.AntisymmetricUnderSwap:SocialForce.RotationEquivariant:Lwr.MonotoneInGap"},
        {"test_dynamics", "Euler.FirstOrderConvergence:TrafficDynamics.TranslationInvariance:TrajectoryCsv.*"},
        {"test_optimizer", "Project.Idempotent"},
        {"test_data_pipeline", "Preprocess.*:WriteTracks.RoundTripIsExact:Synth.WriteReadRoundTrip"}};
    const std::regex passed(R"(\[  PASSED  \] (\d+) test)");
    std::size_t total = 0;
    std::string failed;
    for (const auto& [bin, filter] : suites) {
        const auto r = run(quote((fs::path(IPCAL_TEST_BIN_DIR) / bin).string()) + " --gtest_filter=" + quote(filter));
        std::smatch m;
        const bool any = std::regex_search(r.output, m, passed) && std::stoul(m[1]) > 0;
        if (r.status != 0 || !any) {
            failed += (failed.empty() ? "" : ", ") + bin;
        } else {
            total += std::stoul(m[1]);
        }
    }
    return {failed.empty(), failed.empty() ? std::to_string(total) + " invariant cases passed" : "failed: " + failed};
}

// 7. Bit-identical loss histories without noise.
Outcome determinism(const fs::path& work) {
    const auto cfg = write_json(work / "determinism.json",
                                {{"schema_version", 1},
                                 {"model", {{"family", "traffic_lwr_linear"}}},
                                 {"data", {{"tracks", (work / "synth" / "synth_tracks.csv").string()}}},
                                 {"params", {{"values", {30.0, 5.0}}}},
                                 {"optimizer", {{"iterations", 200}, {"eta1", 0.0}, {"seed", 5}}}});
    if (!fs::exists(work / "synth" / "synth_tracks.csv")) return {false, "synthetic tracks missing"};
    const auto a = cli("calibrate", cfg, work / "det_a");
    const auto b = cli("calibrate", cfg, work / "det_b");
    if (a.status != 0 || b.status != 0) return {false, "calibrate failed: " + a.output + b.output};
    const auto ha = slurp(work / "det_a" / "loss_history.csv");
    const auto hb = slurp(work / "det_b" / "loss_history.csv");
    const auto lines = static_cast<std::size_t>(std::count(ha.begin(), ha.end(), '\n'));
    return {ha == hb && lines == 201, std::to_string(lines - 1) + " iterations, histories " +
                                          (ha == hb ? "identical" : "differ")};
}

} // namespace

int main() {
    const fs::path work = fs::temp_directory_path() / "ipcal_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"adjoint gradient matches finite differences", [&] { return adjoint_exactness(work); }},
        {"pair force table reproduced", [&] { return pair_force_table(work); }},
        {"synthetic parameter recovery", [&] { return synthetic_recovery(work); }},
        {"ADADELTA recursion", [] { return adadelta_recursion(); }},
        {"noise schedule variance", [] { return noise_variance(); }},
        {"invariant suites", [] { return invariant_suites(); }},
        {"deterministic calibration", [&] { return determinism(work); }},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].first << " ("
                  << o.detail << ")" << std::endl;
        failures += o.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
