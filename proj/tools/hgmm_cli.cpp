/// Command-line front end: split optimisation, scalar benchmarks, scenario generation, anticipation
/// runs, particle truth, synthetic tracks, metric evaluation and timing sweeps.
///
/// Exit codes:
///   0 success
///   1 unreadable or malformed input file, or any other failure
///   2 invalid flags or argument values
///   3 split optimiser failure
///   4 split cache missing a required (N, sigma) entry
///   5 model evaluation failure during a run
///   6 misaligned timestamps between frames and evaluation data

#include "hgmm/hgmm.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace {

using namespace hgmm;
using Json = io::Json;
namespace fs = std::filesystem;

enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,
    exit_invalid_flags = 2,
    exit_optimizer = 3,
    exit_missing_cache = 4,
    exit_model_failure = 5,
    exit_misaligned = 6,
};

/// Failure carrying the process exit code.
class CommandError : public std::runtime_error {
public:
    CommandError(int code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    [[nodiscard]] int code() const { return code_; }

private:
    int code_;
};

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::InvalidSigma:
        return exit_invalid_flags;
    case ErrorKind::QpInfeasible:
    case ErrorKind::MaxIterations:
        return exit_optimizer;
    case ErrorKind::MissingSplit:
        return exit_missing_cache;
    case ErrorKind::ModelEvaluationFailure:
    case ErrorKind::NoSuccessor:
        return exit_model_failure;
    case ErrorKind::NoFrameMatch:
        return exit_misaligned;
    default:
        return exit_failure;
    }
}

// ---------------------------------------------------------------------------------------------
// Run manifest

std::string sha256_hex(const std::string& data) {
    const std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 || EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
        throw std::runtime_error("SHA-256 computation failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return os.str();
}

/// Configuration echo, input and output hashes, seed, version and per-stage wall-clock timings.
class Manifest {
public:
    explicit Manifest(std::string command) : command_(std::move(command)) {}

    void set_config(Json config) { config_ = std::move(config); }
    void set_seed(std::uint64_t seed) { seed_ = seed; }
    void add_input(const std::string& path) { inputs_[path] = sha256_hex(io::read_file(path)); }
    void add_output(const std::string& path) { outputs_[path] = sha256_hex(io::read_file(path)); }

    template <typename F>
    auto timed(const std::string& stage, F&& f) {
        const auto start = std::chrono::steady_clock::now();
        struct Record {
            Manifest* self;
            std::string stage;
            std::chrono::steady_clock::time_point start;
            ~Record() {
                self->timings_[stage] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            }
        } record{this, stage, start};
        return f();
    }

    void write(const std::string& path) const {
        Json j{{"tool", "hgmm_cli"}, {"version", std::string(kVersion)}, {"command", command_}, {"config", config_},
               {"seed", seed_ ? Json(*seed_) : Json(nullptr)}, {"inputs", inputs_}, {"outputs", outputs_}, {"timings_ms", timings_}};
        io::write_file(path, j.dump(2) + "\n");
    }

private:
    std::string command_;
    Json config_ = Json::object();
    std::optional<std::uint64_t> seed_;
    Json inputs_ = Json::object();
    Json outputs_ = Json::object();
    Json timings_ = Json::object();
};

std::string manifest_path(const std::string& flag, const std::string& output) { return flag.empty() ? output + ".manifest.json" : flag; }

// ---------------------------------------------------------------------------------------------
// Shared helpers

double parse_real(const std::string& s, const std::string& flag) {
    std::string lower = s;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "inf" || lower == "+inf" || lower == "infinity") return std::numeric_limits<double>::infinity();
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw CommandError(exit_invalid_flags, flag + ": not a number: '" + s + "'");
    }
}

SplitLibrary load_cache(const std::string& path) {
    if (path.empty()) throw CommandError(exit_missing_cache, "a split cache is required (--cache)");
    if (!fs::exists(path)) throw CommandError(exit_missing_cache, "split cache '" + path + "' does not exist");
    return io::load_split_library(path);
}

void require_keys(const SplitLibrary& lib, const std::vector<std::pair<int, double>>& keys, const std::string& path) {
    std::string missing;
    for (const auto& [n, s] : keys) {
        if (!lib.contains(n, s)) missing += " (N=" + std::to_string(n) + ", sigma=" + io::format_number(s) + ")";
    }
    if (!missing.empty()) throw CommandError(exit_missing_cache, "split cache '" + path + "' lacks" + missing);
}

int default_threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

/// Scenario file plus its road network, with command-line overrides of the engine settings.
struct ScenarioInputs {
    std::string scenario_path;
    std::string network_path;
    std::string e_res_max;
    int max_mixands = 0;
    double horizon = 0.0;
    double dt = 0.0;
    std::int64_t seed = -1;

    void add_options(CLI::App* cmd, bool engine_overrides) {
        cmd->add_option("--scenario", scenario_path, "Scenario JSON file")->required()->check(CLI::ExistingFile);
        cmd->add_option("--network", network_path, "Road network JSON file")->required()->check(CLI::ExistingFile);
        cmd->add_option("--horizon", horizon, "Prediction horizon in seconds")->check(CLI::PositiveNumber);
        cmd->add_option("--dt", dt, "Time step in seconds")->check(CLI::PositiveNumber);
        cmd->add_option("--seed", seed, "Random seed (defaults to the scenario seed)")->check(CLI::NonNegativeNumber);
        if (engine_overrides) {
            cmd->add_option("--e-res-max", e_res_max, "Linearity threshold; 'inf' disables splitting");
            cmd->add_option("--max-mixands", max_mixands, "Mixand cap after reduction")->check(CLI::PositiveNumber);
        }
    }

    [[nodiscard]] models::Scenario load(Manifest& manifest) const {
        manifest.add_input(scenario_path);
        manifest.add_input(network_path);
        const models::RoadNetwork net = io::network_from(io::parse_json(io::read_file(network_path), network_path));
        models::Scenario s = io::scenario_from(io::parse_json(io::read_file(scenario_path), scenario_path), net);
        if (!e_res_max.empty()) s.config.e_res_max = parse_real(e_res_max, "--e-res-max");
        if (max_mixands > 0) s.config.reduction.max_mixands = max_mixands;
        if (horizon > 0.0) s.config.horizon = horizon;
        if (dt > 0.0) s.config.dt = dt;
        s.params.dt = s.config.dt;
        if (seed >= 0) s.seed = static_cast<std::uint64_t>(seed);
        (void)s.config.steps();
        manifest.set_seed(s.seed);
        return s;
    }
};

Json scenario_echo(const models::Scenario& s) {
    return Json{{"scenario", s.name}, {"engine", io::config_json(s.config)}, {"params", io::params_json(s.params)}};
}

/// Frames file with the time step recovered from its (k, t) pairs.
struct FramesFile {
    std::vector<HybridMixture> frames;
    double dt = 0.0;
};

FramesFile load_frames(const std::string& path, double dt_flag) {
    const std::string text = io::read_file(path);
    FramesFile f;
    f.frames = io::frames_from_jsonl(text);
    if (f.frames.empty()) throw Error(ErrorKind::ParseError, path + ": no frames");
    f.dt = dt_flag;
    if (!(f.dt > 0.0)) {
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const Json j = io::parse_json(line, path);
            const int k = j.value("k", 0);
            if (k > 0 && j.contains("t")) {
                f.dt = io::read_number(j.at("t")) / k;
                break;
            }
        }
    }
    if (!(f.dt > 0.0)) throw CommandError(exit_invalid_flags, path + ": cannot infer the time step; pass --dt");
    return f;
}

void write_output(const std::string& path, const std::string& content, Manifest& manifest) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    io::write_file(path, content);
    manifest.add_output(path);
}

// ---------------------------------------------------------------------------------------------
// optimize-split

struct OptimizeSplitCmd {
    std::vector<int> ns;
    std::vector<double> sigmas;
    double grid_step = 1e-3;
    double delta_max = 4.0;
    std::string out;
    std::string manifest;

    void add(CLI::App& app) {
        CLI::App* cmd = app.add_subcommand("optimize-split", "Optimise canonical splits and write the split cache");
        cmd->add_option("--n", ns, "Comma-separated odd component counts")->required()->delimiter(',');
        cmd->add_option("--sigma", sigmas, "Comma-separated child standard-deviation factors in (0, 1]")->required()->delimiter(',');
        cmd->add_option("--grid-step", grid_step, "Step of the offset grid search")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--delta-max", delta_max, "Upper end of the offset grid")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--out", out, "Output split cache (JSON)")->required();
        cmd->add_option("--manifest", manifest, "Manifest path (default: <out>.manifest.json)");
        cmd->final_callback([this] { run(); });
    }

    void run() const {
        for (int n : ns) {
            if (n < 1 || n % 2 == 0) throw CommandError(exit_invalid_flags, "N must be odd (got " + std::to_string(n) + ")");
        }
        for (double s : sigmas) {
            if (!(s > 0.0 && s <= 1.0)) throw CommandError(exit_invalid_flags, "sigma must lie in (0, 1] (got " + io::format_number(s) + ")");
        }
        Manifest m("optimize-split");
        m.set_config(Json{{"n", ns}, {"sigma", sigmas}, {"grid_step", grid_step}, {"delta_max", delta_max}});
        const SplitLibrary lib = m.timed("optimize", [&] {
            try {
                return build_split_library(ns, sigmas, SplitGrid{0.0, delta_max, grid_step});
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::QpInfeasible || e.kind() == ErrorKind::MaxIterations) throw CommandError(exit_optimizer, e.what());
                throw;
            }
        });
        write_output(out, io::to_string(io::split_library_json(lib)) + "\n", m);
        std::cout << std::setw(4) << "N" << std::setw(10) << "sigma" << std::setw(12) << "delta_mu" << std::setw(16) << "J_ISD" << "\n";
        for (const auto& e : lib.entries()) {
            std::cout << std::setw(4) << e.n_components << std::setw(10) << e.sigma << std::setw(12) << e.delta_mu << std::setw(16) << std::setprecision(6)
                      << e.isd << "\n";
        }
        m.write(manifest_path(manifest, out));
    }
};

// ---------------------------------------------------------------------------------------------
// benchmark

struct BenchmarkCmd {
    std::string model;
    int samples = 100;
    std::uint64_t seed = 7;
    bool no_split = false;
    std::string cache;
    std::vector<std::string> splits;
    std::string engine_e_res_max;
    double lambda = 0.0;
    std::string direction = "approx";
    int kld_points = 20000;
    std::string out;
    std::string manifest;
    CLI::App* cmd = nullptr;

    void add(CLI::App& app) {
        cmd = app.add_subcommand("benchmark", "Randomised one-step KLD benchmark on a scalar map");
        cmd->add_option("--model", model, "ungm or cubic")->required()->check(CLI::IsMember({"ungm", "cubic"}));
        cmd->add_option("--samples", samples, "Number of random priors")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
        cmd->add_flag("--no-split", no_split, "Only the single-Gaussian baseline");
        cmd->add_option("--cache", cache, "Split cache for the split arms");
        cmd->add_option("--splits", splits, "Split arms as N:sigma (default: every cache entry)")->delimiter(',');
        cmd->add_option("--engine-e-res-max", engine_e_res_max, "Add a recursive-splitting arm gated by this raw residual");
        cmd->add_option("--lambda", lambda, "Sigma-point scaling (default 3 - n)");
        cmd->add_option("--direction", direction, "KLD weighting: approx or truth")->capture_default_str()->check(CLI::IsMember({"approx", "truth"}));
        cmd->add_option("--kld-points", kld_points, "Quadrature nodes")->capture_default_str()->check(CLI::Range(2, 10000000));
        cmd->add_option("--out", out, "Per-sample metrics CSV");
        cmd->add_option("--manifest", manifest, "Manifest path (default: <out>.manifest.json)");
        cmd->final_callback([this] { run(); });
    }

    void run() const {
        if (samples < 3) throw CommandError(exit_invalid_flags, "--samples must be at least 3");
        BenchmarkConfig cfg;
        cfg.model = model;
        cfg.samples = samples;
        cfg.seed = seed;
        cfg.kld_points = kld_points;
        cfg.direction = direction == "truth" ? KldDirection::truth_weighted : KldDirection::approx_weighted;
        if (cmd->count("--lambda") > 0) cfg.lambda = lambda;
        Manifest m("benchmark");
        m.set_seed(seed);

        SplitLibrary lib;
        if (!no_split) {
            for (const auto& s : splits) {
                const auto colon = s.find(':');
                if (colon == std::string::npos) throw CommandError(exit_invalid_flags, "--splits entries must look like N:sigma (got '" + s + "')");
                int n = 0;
                try {
                    n = std::stoi(s.substr(0, colon));
                } catch (const std::exception&) {
                    throw CommandError(exit_invalid_flags, "--splits: bad N in '" + s + "'");
                }
                cfg.splits.emplace_back(n, parse_real(s.substr(colon + 1), "--splits"));
            }
            if (!engine_e_res_max.empty()) cfg.engine_e_res_max = parse_real(engine_e_res_max, "--engine-e-res-max");
            lib = load_cache(cache);
            m.add_input(cache);
            if (cfg.splits.empty()) {
                for (const auto& e : lib.entries()) cfg.splits.emplace_back(e.n_components, e.sigma);
            }
            require_keys(lib, required_splits(cfg), cache);
        }
        Json echo{{"model", model}, {"samples", samples}, {"no_split", no_split}, {"direction", direction}, {"kld_points", kld_points}};
        echo["lambda"] = cfg.lambda ? Json(*cfg.lambda) : Json(nullptr);
        Json arms = Json::array();
        for (const auto& [n, s] : cfg.splits) arms.push_back(Json{{"n", n}, {"sigma", s}});
        echo["splits"] = arms;
        m.set_config(echo);

        const BenchmarkReport report = m.timed("benchmark", [&] { return run_benchmark(cfg, lib); });

        std::cout << "arm,mean_kld,std_kld\n";
        std::cout << report.no_split.label << "," << io::format_number(report.no_split.mean) << "," << io::format_number(report.no_split.std) << "\n";
        for (const auto& a : report.split_arms) std::cout << a.label << "," << io::format_number(a.mean) << "," << io::format_number(a.std) << "\n";
        if (report.engine_arm) {
            std::cout << report.engine_arm->label << "," << io::format_number(report.engine_arm->mean) << "," << io::format_number(report.engine_arm->std)
                      << "\n";
        }
        std::cout << "pearson(e_res, kld_no_split)," << io::format_number(report.pearson_e_res_kld) << "\n";

        if (!out.empty()) {
            std::string csv = "sample,mean,variance,e_res,kld_no_split";
            for (const auto& [n, s] : cfg.splits) csv += ",kld_n" + std::to_string(n) + "_s" + io::format_number(s);
            if (report.engine_arm) csv += ",kld_engine,engine_mixands";
            csv += "\n";
            for (std::size_t i = 0; i < report.samples.size(); ++i) {
                const PriorSample& p = report.samples[i];
                csv += std::to_string(i) + "," + io::format_number(p.mean) + "," + io::format_number(p.variance) + "," + io::format_number(p.e_res) + "," +
                       io::format_number(p.kld_no_split);
                for (double k : p.kld_split) csv += "," + io::format_number(k);
                if (p.kld_engine) csv += "," + io::format_number(*p.kld_engine) + "," + std::to_string(p.engine_mixands);
                csv += "\n";
            }
            write_output(out, csv, m);
            m.write(manifest_path(manifest, out));
        } else if (!manifest.empty()) {
            m.write(manifest);
        }
    }
};

// ---------------------------------------------------------------------------------------------
// scenario

struct ScenarioCmd {
    std::string kind;
    double radius = 0.0;
    std::string out_dir;

    void add(CLI::App& app) {
        CLI::App* cmd = app.add_subcommand("scenario", "Write a bundled scenario and its road network");
        cmd->add_option("--kind", kind, "straight, turn or intersection")->required()->check(CLI::IsMember({"straight", "turn", "intersection"}));
        cmd->add_option("--radius", radius, "Arc radius in metres (default per scenario)")->check(CLI::NonNegativeNumber);
        cmd->add_option("--out-dir", out_dir, "Output directory")->required();
        cmd->final_callback([this] { run(); });
    }

    void run() const {
        const models::Scenario s = models::make_scenario(kind, radius);
        fs::create_directories(out_dir);
        const std::string scenario_file = (fs::path(out_dir) / (kind + ".scenario.json")).string();
        const std::string network_file = (fs::path(out_dir) / (kind + ".network.json")).string();
        io::write_file(scenario_file, io::scenario_json(s).dump(2) + "\n");
        io::write_file(network_file, io::network_json(s.network).dump(2) + "\n");
        std::cout << scenario_file << "\n" << network_file << "\n";
    }
};

// ---------------------------------------------------------------------------------------------
// run

struct RunCmd {
    ScenarioInputs inputs;
    std::string cache;
    std::string out;
    std::string manifest;
    std::string stats_out;
    int threads = default_threads();
    bool sequential = false;

    void add(CLI::App& app) {
        CLI::App* cmd = app.add_subcommand("run", "Anticipate a scenario and write one JSON line per frame");
        inputs.add_options(cmd, true);
        cmd->add_option("--cache", cache, "Split cache (not needed when splitting is disabled)");
        cmd->add_option("--out", out, "Frames output (JSON lines)")->required();
        cmd->add_option("--manifest", manifest, "Manifest path (default: <out>.manifest.json)");
        cmd->add_option("--stats", stats_out, "Per-step statistics CSV");
        cmd->add_option("--threads", threads, "Worker threads for mixand propagation")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_flag("--sequential", sequential, "Force a single worker");
        cmd->final_callback([this] { run(); });
    }

    void run() const {
        Manifest m("run");
        models::Scenario s = inputs.load(m);
        s.config.threads = sequential ? 1 : threads;
        SplitLibrary lib;
        if (s.config.splitting_enabled()) {
            lib = load_cache(cache);
            m.add_input(cache);
            require_keys(lib, {{s.config.split_n, s.config.split_sigma}}, cache);
        }
        Json echo = scenario_echo(s);
        echo["threads"] = s.config.threads;
        m.set_config(echo);

        const models::BicycleModel model(s.network, s.params);
        std::vector<StepStats> stats;
        const auto frames = m.timed("anticipate", [&] {
            try {
                return anticipate(s.initial, model, s.config, lib, &stats);
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::ModelEvaluationFailure || e.kind() == ErrorKind::NoSuccessor) {
                    throw CommandError(exit_model_failure, std::string("model evaluation failed: ") + e.what());
                }
                throw;
            }
        });
        m.timed("write", [&] {
            write_output(out, io::frames_jsonl(frames, s.config.dt), m);
            return 0;
        });
        if (!stats_out.empty()) {
            std::string csv = "step,splits,forced_recombinations,mixands_after_discrete,mixands_after_continuous,mixands_after_reduction,anomalies\n";
            for (std::size_t i = 0; i < stats.size(); ++i) {
                const StepStats& st = stats[i];
                csv += std::to_string(i + 1) + "," + std::to_string(st.splits) + "," + std::to_string(st.forced_recombinations) + "," +
                       std::to_string(st.mixands_after_discrete) + "," + std::to_string(st.mixands_after_continuous) + "," +
                       std::to_string(st.mixands_after_reduction) + "," + std::to_string(st.anomalies) + "\n";
            }
            write_output(stats_out, csv, m);
        }
        m.write(manifest_path(manifest, out));
        std::size_t max_mixands = 0;
        for (const auto& f : frames) max_mixands = std::max(max_mixands, f.size());
        std::cout << "frames=" << frames.size() << " max_mixands=" << max_mixands << "\n";
    }
};

// ---------------------------------------------------------------------------------------------
// particles and tracks

struct ParticlesCmd {
    ScenarioInputs inputs;
    std::size_t count = 10000;
    std::string out;
    std::string manifest;

    void add(CLI::App& app) {
        CLI::App* cmd = app.add_subcommand("particles", "Monte Carlo particle truth for a scenario");
        inputs.add_options(cmd, false);
        cmd->add_option("--count", count, "Number of particles")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--out", out, "Particle CSV (k,alpha,x0,...)")->required();
        cmd->add_option("--manifest", manifest, "Manifest path (default: <out>.manifest.json)");
        cmd->final_callback([this] { run(); });
    }

    void run() const {
        Manifest m("particles");
        const models::Scenario s = inputs.load(m);
        Json echo = scenario_echo(s);
        echo["count"] = count;
        m.set_config(echo);
        const models::BicycleModel model(s.network, s.params);
        const auto sets = m.timed("simulate", [&] { return particle_truth(s.initial, model, s.config.steps(), count, s.seed); });
        write_output(out, io::particles_csv(sets), m);
        m.write(manifest_path(manifest, out));
    }
};

struct TracksCmd {
    ScenarioInputs inputs;
    std::size_t count = 40;
    std::string out_dir;

    void add(CLI::App& app) {
        CLI::App* cmd = app.add_subcommand("tracks", "Synthetic observation tracks simulated from the bicycle model");
        inputs.add_options(cmd, false);
        cmd->add_option("--count", count, "Number of tracks")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--out-dir", out_dir, "Output directory")->required();
        cmd->final_callback([this] { run(); });
    }

    void run() const {
        Manifest m("tracks");
        const models::Scenario s = inputs.load(m);
        Json echo = scenario_echo(s);
        echo["count"] = count;
        m.set_config(echo);
        const models::BicycleModel model(s.network, s.params);
        const auto sets = m.timed("simulate", [&] { return particle_truth(s.initial, model, s.config.steps(), count, s.seed); });
        fs::create_directories(out_dir);
        Json index = Json::array();
        for (std::size_t i = 0; i < count; ++i) {
            TrackObservations track;
            std::vector<std::string> route;
            for (const auto& set : sets) {
                const Vector& x = set.states[i];
                track.observations.push_back({set.time_index * s.config.dt, x(0), x(1), x(2), x(3)});
                if (route.empty() || route.back() != set.discrete[i]) route.push_back(set.discrete[i]);
            }
            std::ostringstream name;
            name << "track_" << std::setw(3) << std::setfill('0') << i << ".csv";
            const std::string file = (fs::path(out_dir) / name.str()).string();
            write_output(file, io::track_csv(track), m);
            index.push_back(Json{{"file", name.str()}, {"route", route}});
        }
        const std::string index_file = (fs::path(out_dir) / "tracks.json").string();
        write_output(index_file, index.dump(2) + "\n", m);
        m.write((fs::path(out_dir) / "tracks.manifest.json").string());
    }
};

// ---------------------------------------------------------------------------------------------
// evaluate

struct EvaluateCmd {
    std::string metric;
    std::string frames_path;
    double dt = 0.0;
    std::string out;
    std::string manifest;
    // nll
    std::string particles_path;
    ScenarioInputs truth_inputs;
    std::size_t count = 10000;
    // ll
    std::string track_path;
    // eote
    std::string network_path;
    std::vector<std::string> route;
    // eote and collision
    std::size_t samples = 10000;
    std::uint64_t seed = 1;
    // collision
    std::string ego_path;
    double ego_length = 4.5;
    double ego_width = 1.8;
    double obstacle_length = 4.5;
    double obstacle_width = 1.8;

    CLI::App* nll_cmd = nullptr;

    static void common(CLI::App* cmd, EvaluateCmd& self) {
        cmd->add_option("--frames", self.frames_path, "Frames file (JSON lines)")->required()->check(CLI::ExistingFile);
        cmd->add_option("--dt", self.dt, "Time step (default: inferred from the frames)")->check(CLI::PositiveNumber);
        cmd->add_option("--out", self.out, "Metric CSV (step,t,value)")->required();
        cmd->add_option("--manifest", self.manifest, "Manifest path (default: <out>.manifest.json)");
    }

    void add(CLI::App& app) {
        CLI::App* cmd = app.add_subcommand("evaluate", "Evaluate frames against particles, tracks, a route or an ego trajectory");
        cmd->require_subcommand(1);

        nll_cmd = cmd->add_subcommand("nll", "Negative log-likelihood of particle truth");
        common(nll_cmd, *this);
        nll_cmd->add_option("--particles", particles_path, "Particle CSV; otherwise simulated from --scenario/--network")->check(CLI::ExistingFile);
        nll_cmd->add_option("--scenario", truth_inputs.scenario_path, "Scenario JSON for simulated truth")->check(CLI::ExistingFile);
        nll_cmd->add_option("--network", truth_inputs.network_path, "Road network JSON for simulated truth")->check(CLI::ExistingFile);
        nll_cmd->add_option("--count", count, "Simulated particle count")->capture_default_str()->check(CLI::PositiveNumber);
        nll_cmd->add_option("--seed", truth_inputs.seed, "Simulation seed (default: scenario seed)")->check(CLI::NonNegativeNumber);
        nll_cmd->final_callback([this] { metric = "nll"; });

        CLI::App* ll = cmd->add_subcommand("ll", "Log-likelihood of an observation track");
        common(ll, *this);
        ll->add_option("--track", track_path, "Track CSV with t,x,y[,v,theta]")->required()->check(CLI::ExistingFile);
        ll->final_callback([this] { metric = "ll"; });

        CLI::App* eote_cmd = cmd->add_subcommand("eote", "Expected off-track error against a route centerline");
        common(eote_cmd, *this);
        eote_cmd->add_option("--network", network_path, "Road network JSON")->required()->check(CLI::ExistingFile);
        eote_cmd->add_option("--route", route, "Comma-separated segment ids")->required()->delimiter(',');
        eote_cmd->add_option("--samples", samples, "Samples per frame")->capture_default_str()->check(CLI::PositiveNumber);
        eote_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
        eote_cmd->final_callback([this] { metric = "eote"; });

        CLI::App* col = cmd->add_subcommand("collision", "Collision probability against an ego trajectory");
        common(col, *this);
        col->add_option("--ego", ego_path, "Ego pose CSV with t,x,y,theta")->required()->check(CLI::ExistingFile);
        col->add_option("--samples", samples, "Samples per frame")->capture_default_str()->check(CLI::PositiveNumber);
        col->add_option("--seed", seed, "Random seed")->capture_default_str();
        col->add_option("--ego-length", ego_length, "Ego footprint length")->capture_default_str()->check(CLI::PositiveNumber);
        col->add_option("--ego-width", ego_width, "Ego footprint width")->capture_default_str()->check(CLI::PositiveNumber);
        col->add_option("--obstacle-length", obstacle_length, "Obstacle footprint length")->capture_default_str()->check(CLI::PositiveNumber);
        col->add_option("--obstacle-width", obstacle_width, "Obstacle footprint width")->capture_default_str()->check(CLI::PositiveNumber);
        col->final_callback([this] { metric = "collision"; });

        cmd->final_callback([this] { run(); });
    }

    [[nodiscard]] std::string rows(const FramesFile& f, const std::vector<double>& values) const {
        std::vector<int> steps;
        std::vector<double> times;
        for (const auto& fr : f.frames) {
            steps.push_back(fr.time_index);
            times.push_back(fr.time_index * f.dt);
        }
        return io::metrics_csv(steps, times, values);
    }

    void run() {
        Manifest m("evaluate " + metric);
        m.add_input(frames_path);
        const FramesFile f = load_frames(frames_path, dt);
        Json echo{{"metric", metric}, {"dt", f.dt}};
        try {
            if (metric == "nll") run_nll(f, m, echo);
            else if (metric == "ll") run_ll(f, m, echo);
            else if (metric == "eote") run_eote(f, m, echo);
            else run_collision(f, m, echo);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::NoFrameMatch || (metric == "nll" && e.kind() == ErrorKind::DimensionMismatch)) {
                throw CommandError(exit_misaligned, std::string("misaligned timestamps: ") + e.what());
            }
            throw;
        }
        m.set_config(echo);
        m.write(manifest_path(manifest, out));
    }

    void run_nll(const FramesFile& f, Manifest& m, Json& echo) {
        std::vector<ParticleSet> truth;
        if (!particles_path.empty()) {
            m.add_input(particles_path);
            truth = io::particles_from_csv(io::read_file(particles_path));
            echo["particles"] = particles_path;
        } else {
            if (truth_inputs.scenario_path.empty() || truth_inputs.network_path.empty()) {
                throw CommandError(exit_invalid_flags, "nll needs --particles or both --scenario and --network");
            }
            models::Scenario s = truth_inputs.load(m);
            s.config.dt = f.dt;
            s.params.dt = f.dt;
            const models::BicycleModel model(s.network, s.params);
            const int steps = f.frames.back().time_index;
            truth = m.timed("simulate", [&] { return particle_truth(s.initial, model, steps, count, s.seed); });
            echo["count"] = count;
            echo["seed"] = s.seed;
        }
        // Keep only the particle steps that the frames cover.
        std::vector<ParticleSet> aligned;
        for (const auto& fr : f.frames) {
            const auto it = std::find_if(truth.begin(), truth.end(), [&](const ParticleSet& p) { return p.time_index == fr.time_index; });
            if (it == truth.end()) throw CommandError(exit_misaligned, "misaligned timestamps: no particles at step " + std::to_string(fr.time_index));
            aligned.push_back(*it);
        }
        const NllResult r = m.timed("nll", [&] { return nll(f.frames, aligned); });
        write_output(out, rows(f, r.values), m);
        std::cout << "mean_nll=" << io::format_number(r.mean()) << " standard_error=" << io::format_number(r.mean_standard_error())
                  << " zero_likelihood_particles=" << r.floored << "\n";
    }

    void run_ll(const FramesFile& f, Manifest& m, Json& echo) {
        m.add_input(track_path);
        TrackObservations track;
        try {
            track = io::track_from_csv(io::read_file(track_path), track_path);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::InvalidArgument) throw CommandError(exit_misaligned, std::string("misaligned timestamps: ") + e.what());
            throw;
        }
        echo["track"] = track_path;
        std::vector<int> steps;
        std::vector<double> times;
        std::vector<double> values;
        double total = 0.0;
        for (const auto& o : track.observations) {
            const std::size_t idx = match_frame(f.frames, f.dt, o.t);
            const double v = log_likelihood(f.frames, f.dt, TrackObservations{track.source, {o}});
            steps.push_back(f.frames[idx].time_index);
            times.push_back(o.t);
            values.push_back(v);
            total += v;
        }
        write_output(out, io::metrics_csv(steps, times, values), m);
        std::cout << "total_ll=" << io::format_number(total) << " observations=" << values.size() << "\n";
    }

    void run_eote(const FramesFile& f, Manifest& m, Json& echo) {
        m.add_input(network_path);
        const models::RoadNetwork net = io::network_from(io::parse_json(io::read_file(network_path), network_path));
        for (const auto& id : route) {
            if (!net.contains(id)) throw CommandError(exit_invalid_flags, "--route: unknown segment '" + id + "'");
        }
        echo["route"] = route;
        echo["samples"] = samples;
        m.set_seed(seed);
        const EoteResult r = m.timed("eote", [&] { return eote(f.frames, route_centerline(net, route), samples, seed); });
        write_output(out, rows(f, r.per_frame), m);
        std::cout << "total_eote=" << io::format_number(r.total) << "\n";
    }

    void run_collision(const FramesFile& f, Manifest& m, Json& echo) {
        m.add_input(ego_path);
        const auto poses = io::poses_from_csv(io::read_file(ego_path), ego_path);
        echo["samples"] = samples;
        echo["ego_footprint"] = {ego_length, ego_width};
        echo["obstacle_footprint"] = {obstacle_length, obstacle_width};
        m.set_seed(seed);
        const auto est = m.timed("collision", [&] {
            return collision_probability(f.frames, f.dt, poses, Footprint{ego_length, ego_width}, Footprint{obstacle_length, obstacle_width}, samples, seed);
        });
        std::string csv = "step,t,value,lower,upper\n";
        double peak = 0.0;
        for (std::size_t i = 0; i < est.size(); ++i) {
            const int k = f.frames[i].time_index;
            csv += std::to_string(k) + "," + io::format_number(k * f.dt) + "," + io::format_number(est[i].probability) + "," + io::format_number(est[i].lower) +
                   "," + io::format_number(est[i].upper) + "\n";
            peak = std::max(peak, est[i].probability);
        }
        write_output(out, csv, m);
        std::cout << "max_collision_probability=" << io::format_number(peak) << "\n";
    }
};

// ---------------------------------------------------------------------------------------------
// timing

struct TimingCmd {
    ScenarioInputs inputs;
    std::string cache;
    std::vector<std::string> thresholds{"0.05", "0.1", "0.2", "0.5", "1", "inf"};
    std::vector<int> caps{5, 10, 20, 40};
    int repeats = 3;
    std::string out;

    void add(CLI::App& app) {
        CLI::App* cmd = app.add_subcommand("timing", "Wall-clock anticipation time over an (e_res_max, cap) grid");
        inputs.add_options(cmd, false);
        cmd->add_option("--cache", cache, "Split cache")->required();
        cmd->add_option("--e-res-max", thresholds, "Comma-separated thresholds")->delimiter(',')->capture_default_str();
        cmd->add_option("--caps", caps, "Comma-separated mixand caps")->delimiter(',')->capture_default_str();
        cmd->add_option("--repeats", repeats, "Timed repetitions per cell (median reported)")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--out", out, "Output CSV")->required();
        cmd->final_callback([this] { run(); });
    }

    void run() const {
        Manifest m("timing");
        models::Scenario s = inputs.load(m);
        s.config.threads = 1;
        const SplitLibrary lib = load_cache(cache);
        m.add_input(cache);
        require_keys(lib, {{s.config.split_n, s.config.split_sigma}}, cache);
        Json echo = scenario_echo(s);
        echo["e_res_max"] = thresholds;
        echo["caps"] = caps;
        echo["repeats"] = repeats;
        m.set_config(echo);
        const models::BicycleModel model(s.network, s.params);
        std::string csv = "e_res_max,max_mixands,median_ms,mean_mixands\n";
        for (const auto& t : thresholds) {
            for (int cap : caps) {
                if (cap < 1) throw CommandError(exit_invalid_flags, "--caps must be positive");
                EngineConfig cfg = s.config;
                cfg.e_res_max = parse_real(t, "--e-res-max");
                cfg.reduction.max_mixands = cap;
                std::vector<double> ms;
                double mean_mixands = 0.0;
                for (int r = 0; r < repeats; ++r) {
                    const auto start = std::chrono::steady_clock::now();
                    const auto frames = anticipate(s.initial, model, cfg, lib);
                    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
                    double total = 0.0;
                    for (const auto& f : frames) total += static_cast<double>(f.size());
                    mean_mixands = total / static_cast<double>(frames.size());
                }
                std::sort(ms.begin(), ms.end());
                const double median = ms[ms.size() / 2];
                csv += io::format_number(cfg.e_res_max) + "," + std::to_string(cap) + "," + io::format_number(median) + "," + io::format_number(mean_mixands) +
                       "\n";
                std::cout << "e_res_max=" << t << " cap=" << cap << " median_ms=" << median << "\n";
            }
        }
        write_output(out, csv, m);
        m.write(out + ".manifest.json");
    }
};

// ---------------------------------------------------------------------------------------------
// verify-manifest

struct VerifyCmd {
    std::string path;

    void add(CLI::App& app) {
        CLI::App* cmd = app.add_subcommand("verify-manifest", "Check that the inputs and outputs recorded in a manifest are unchanged");
        cmd->add_option("manifest", path, "Manifest JSON")->required()->check(CLI::ExistingFile);
        cmd->final_callback([this] { run(); });
    }

    void run() const {
        const Json j = io::parse_json(io::read_file(path), path);
        int bad = 0;
        for (const char* group : {"inputs", "outputs"}) {
            if (!j.contains(group)) continue;
            for (const auto& [file, hash] : j.at(group).items()) {
                const bool ok = fs::exists(file) && sha256_hex(io::read_file(file)) == hash.get<std::string>();
                std::cout << (ok ? "ok       " : "CHANGED  ") << file << "\n";
                if (!ok) ++bad;
            }
        }
        if (bad > 0) throw CommandError(exit_failure, std::to_string(bad) + " file(s) differ from the manifest");
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hgmm_cli: hybrid Gaussian mixture anticipation engine"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    OptimizeSplitCmd optimize_split;
    BenchmarkCmd benchmark;
    ScenarioCmd scenario;
    RunCmd run;
    ParticlesCmd particles;
    TracksCmd tracks;
    EvaluateCmd evaluate;
    TimingCmd timing;
    VerifyCmd verify;
    optimize_split.add(app);
    benchmark.add(app);
    scenario.add(app);
    run.add(app);
    particles.add(app);
    tracks.add(app);
    evaluate.add(app);
    timing.add(app);
    verify.add(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_invalid_flags;
    } catch (const CommandError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_failure;
    }
    return exit_ok;
}
