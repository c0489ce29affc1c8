#pragma once

#include "hgmm/anticipation.hpp"
#include "hgmm/evaluation.hpp"
#include "hgmm/models/bicycle.hpp"
#include "hgmm/splitting.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace hgmm::io {

using Json = nlohmann::ordered_json;

/// Formats a number with 17 significant digits; non-finite values become quoted strings.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "\"nan\"";
    if (std::isinf(v)) return v > 0 ? "\"inf\"" : "\"-inf\"";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Compact JSON writer that formats floating-point values with 17 significant digits.
inline void write_json(std::ostream& os, const Json& j) {
    switch (j.type()) {
    case Json::value_t::object: {
        os << '{';
        bool first = true;
        for (const auto& [k, v] : j.items()) {
            if (!first) os << ',';
            first = false;
            os << Json(k).dump() << ':';
            write_json(os, v);
        }
        os << '}';
        break;
    }
    case Json::value_t::array: {
        os << '[';
        bool first = true;
        for (const auto& v : j) {
            if (!first) os << ',';
            first = false;
            write_json(os, v);
        }
        os << ']';
        break;
    }
    case Json::value_t::number_float:
        os << format_number(j.get<double>());
        break;
    default:
        os << j.dump();
    }
}

inline std::string to_string(const Json& j) {
    std::ostringstream os;
    write_json(os, j);
    return os.str();
}

/// Reads a number that may be stored as the strings "inf", "-inf" or "nan".
inline double read_number(const Json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "Infinity") return std::numeric_limits<double>::infinity();
        if (s == "-inf" || s == "-Infinity") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        throw Error(ErrorKind::ParseError, "expected a number, got \"" + s + "\"");
    }
    if (!j.is_number()) throw Error(ErrorKind::ParseError, "expected a number");
    return j.get<double>();
}

inline Json parse_json(const std::string& text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ParseError, what + ": " + e.what());
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::ParseError, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write '" + path + "'");
    out << content;
}

template <typename F>
auto guarded(const std::string& what, F&& f) {
    try {
        return f();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ParseError, what + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------------------------
// Vectors and matrices

inline Json vector_json(const Vector& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Json matrix_json(const Matrix& m) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
    return a;
}

inline Vector vector_from(const Json& j) {
    if (!j.is_array()) throw Error(ErrorKind::ParseError, "expected an array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = read_number(j[i]);
    return v;
}

inline Matrix matrix_from(const Json& j) {
    if (!j.is_array()) throw Error(ErrorKind::ParseError, "expected an array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Vector r = vector_from(j[static_cast<std::size_t>(i)]);
        if (r.size() != cols) throw Error(ErrorKind::ParseError, "ragged matrix");
        m.row(i) = r.transpose();
    }
    return m;
}

// ---------------------------------------------------------------------------------------------
// Split library

inline Json split_library_json(const SplitLibrary& lib) {
    Json entries = Json::array();
    for (const auto& e : lib.entries()) {
        Json w = Json::array();
        for (double v : e.weights) w.push_back(v);
        entries.push_back(Json{{"n", e.n_components}, {"sigma", e.sigma}, {"delta_mu", e.delta_mu}, {"weights", w}, {"isd", e.isd}});
    }
    return Json{{"grid_step", lib.grid_step()}, {"entries", entries}};
}

inline SplitLibrary split_library_from(const Json& j) {
    return guarded("split cache", [&] {
        SplitLibrary lib(read_number(j.at("grid_step")));
        for (const auto& e : j.at("entries")) {
            CanonicalSplit s;
            s.n_components = e.at("n").get<int>();
            s.sigma = read_number(e.at("sigma"));
            s.delta_mu = read_number(e.at("delta_mu"));
            s.weights.clear();
            for (const auto& w : e.at("weights")) s.weights.push_back(read_number(w));
            s.isd = read_number(e.at("isd"));
            lib.insert(std::move(s));
        }
        return lib;
    });
}

inline void save_split_library(const std::string& path, const SplitLibrary& lib) { write_file(path, to_string(split_library_json(lib)) + "\n"); }

inline SplitLibrary load_split_library(const std::string& path) { return split_library_from(parse_json(read_file(path), path)); }

// ---------------------------------------------------------------------------------------------
// Mixtures and frames

inline Json mixture_json(const HybridMixture& mix, double dt) {
    Json mixands = Json::array();
    for (const auto& m : mix.mixands) {
        mixands.push_back(Json{{"w", m.weight}, {"alpha", m.discrete}, {"mu", vector_json(m.gaussian.mean)}, {"sigma", matrix_json(m.gaussian.covariance)}});
    }
    return Json{{"k", mix.time_index}, {"t", mix.time_index * dt}, {"mixands", mixands}};
}

inline HybridMixture mixture_from(const Json& j) {
    return guarded("mixture", [&] {
        HybridMixture mix;
        mix.time_index = j.contains("k") ? j.at("k").get<int>() : 0;
        for (const auto& m : j.at("mixands")) {
            HybridMixand x;
            x.weight = read_number(m.at("w"));
            x.discrete = m.at("alpha").get<std::string>();
            x.gaussian.mean = vector_from(m.at("mu"));
            x.gaussian.covariance = matrix_from(m.at("sigma"));
            mix.mixands.push_back(std::move(x));
        }
        return mix;
    });
}

inline std::string frames_jsonl(const std::vector<HybridMixture>& frames, double dt) {
    std::string out;
    for (const auto& f : frames) out += to_string(mixture_json(f, dt)) + "\n";
    return out;
}

inline std::vector<HybridMixture> frames_from_jsonl(const std::string& text) {
    std::vector<HybridMixture> frames;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        frames.push_back(mixture_from(parse_json(line, "frames line " + std::to_string(line_no))));
    }
    return frames;
}

// ---------------------------------------------------------------------------------------------
// Road network and scenario

inline Json network_json(const models::RoadNetwork& net) {
    Json segs = Json::array();
    for (const auto& s : net.segments()) {
        Json pts = Json::array();
        for (const auto& p : s.centerline.points()) pts.push_back(Json::array({p.x(), p.y()}));
        segs.push_back(Json{{"id", s.id}, {"centerline", pts}, {"half_width", s.half_width}, {"successors", s.successors}});
    }
    return Json{{"segments", segs}};
}

inline models::RoadNetwork network_from(const Json& j) {
    return guarded("road network", [&] {
        std::vector<models::RoadSegment> segs;
        for (const auto& s : j.at("segments")) {
            std::vector<models::Point2> pts;
            for (const auto& p : s.at("centerline")) pts.emplace_back(read_number(p.at(0)), read_number(p.at(1)));
            models::RoadSegment seg;
            seg.id = s.at("id").get<std::string>();
            seg.centerline = models::Polyline(std::move(pts));
            seg.half_width = read_number(s.at("half_width"));
            seg.successors = s.at("successors").get<std::vector<std::string>>();
            segs.push_back(std::move(seg));
        }
        return models::RoadNetwork(std::move(segs));
    });
}

inline Json config_json(const EngineConfig& c) {
    Json j{{"e_res_max", c.e_res_max},
           {"scaling", c.scaling == ResidualScaling::raw ? "raw" : "scaled"},
           {"split_n", c.split_n},
           {"split_sigma", c.split_sigma},
           {"max_split_depth", c.max_split_depth},
           {"max_mixands", c.reduction.max_mixands},
           {"dt", c.dt},
           {"horizon", c.horizon},
           {"weight_floor", c.weight_floor}};
    j["lambda"] = c.lambda ? Json(*c.lambda) : Json(nullptr);
    return j;
}

inline EngineConfig config_from(const Json& j, EngineConfig c = {}) {
    return guarded("engine config", [&] {
        if (j.contains("e_res_max")) c.e_res_max = read_number(j.at("e_res_max"));
        if (j.contains("scaling")) {
            const auto s = j.at("scaling").get<std::string>();
            if (s == "raw") c.scaling = ResidualScaling::raw;
            else if (s == "scaled") c.scaling = ResidualScaling::scaled;
            else throw Error(ErrorKind::ParseError, "scaling must be raw or scaled");
        }
        if (j.contains("split_n")) c.split_n = j.at("split_n").get<int>();
        if (j.contains("split_sigma")) c.split_sigma = read_number(j.at("split_sigma"));
        if (j.contains("max_split_depth")) c.max_split_depth = j.at("max_split_depth").get<int>();
        if (j.contains("max_mixands")) c.reduction.max_mixands = j.at("max_mixands").get<int>();
        if (j.contains("dt")) c.dt = read_number(j.at("dt"));
        if (j.contains("horizon")) c.horizon = read_number(j.at("horizon"));
        if (j.contains("weight_floor")) c.weight_floor = read_number(j.at("weight_floor"));
        if (j.contains("lambda") && !j.at("lambda").is_null()) c.lambda = read_number(j.at("lambda"));
        return c;
    });
}

inline Json params_json(const models::BicycleParams& p) {
    return Json{{"l", p.l},
                {"q", matrix_json(p.q)},
                {"target_speed", p.target_speed},
                {"k_v", p.k_v},
                {"lookahead", p.lookahead},
                {"heading_gain", p.heading_gain},
                {"a_max", p.a_max},
                {"u2_max", p.u2_max},
                {"off_network_factor", p.off_network_factor}};
}

inline models::BicycleParams params_from(const Json& j, models::BicycleParams p = {}) {
    return guarded("model parameters", [&] {
        if (j.contains("l")) p.l = read_number(j.at("l"));
        if (j.contains("q")) p.q = matrix_from(j.at("q"));
        if (j.contains("target_speed")) p.target_speed = read_number(j.at("target_speed"));
        if (j.contains("k_v")) p.k_v = read_number(j.at("k_v"));
        if (j.contains("lookahead")) p.lookahead = read_number(j.at("lookahead"));
        if (j.contains("heading_gain")) p.heading_gain = read_number(j.at("heading_gain"));
        if (j.contains("a_max")) p.a_max = read_number(j.at("a_max"));
        if (j.contains("u2_max")) p.u2_max = read_number(j.at("u2_max"));
        if (j.contains("off_network_factor")) p.off_network_factor = read_number(j.at("off_network_factor"));
        return p;
    });
}

/// Scenario document; the road network is stored in its own file.
inline Json scenario_json(const models::Scenario& s) {
    Json mixands = mixture_json(s.initial, s.config.dt).at("mixands");
    return Json{{"name", s.name}, {"model", s.model}, {"seed", s.seed}, {"initial", {{"mixands", mixands}}}, {"config", config_json(s.config)},
                {"params", params_json(s.params)}};
}

inline models::Scenario scenario_from(const Json& j, models::RoadNetwork network) {
    return guarded("scenario", [&] {
        models::Scenario s;
        s.name = j.value("name", std::string("scenario"));
        s.model = j.value("model", std::string("bicycle"));
        if (s.model != "bicycle") throw Error(ErrorKind::ParseError, "scenario model must be 'bicycle'");
        s.seed = j.value("seed", std::uint64_t{1});
        s.network = std::move(network);
        s.initial = mixture_from(j.at("initial"));
        s.initial.time_index = 0;
        if (j.contains("config")) s.config = config_from(j.at("config"));
        if (j.contains("params")) s.params = params_from(j.at("params"));
        s.params.dt = s.config.dt;
        for (const auto& m : s.initial.mixands) {
            if (!s.network.contains(m.discrete)) throw Error(ErrorKind::ParseError, "scenario: unknown segment '" + m.discrete + "'");
        }
        return s;
    });
}

// ---------------------------------------------------------------------------------------------
// CSV

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    return out;
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) throw Error(ErrorKind::ParseError, "not a number: '" + s + "'");
    return v;
}

/// Rows of a CSV file with a header; columns are looked up by name.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    [[nodiscard]] int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return static_cast<int>(i);
        }
        return -1;
    }
};

inline CsvTable parse_csv(const std::string& text, const std::string& what) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool have_header = false;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto cells = split_csv_line(line);
        if (!have_header) {
            t.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != t.header.size()) throw Error(ErrorKind::ParseError, what + ": wrong cell count on line " + std::to_string(line_no));
        std::vector<double> row;
        for (const auto& c : cells) row.push_back(parse_double(c));
        t.rows.push_back(std::move(row));
    }
    if (!have_header) throw Error(ErrorKind::ParseError, what + ": missing header");
    return t;
}

inline TrackObservations track_from_csv(const std::string& text, const std::string& source) {
    const CsvTable t = parse_csv(text, source);
    const int ct = t.column("t");
    const int cx = t.column("x");
    const int cy = t.column("y");
    const int cv = t.column("v");
    const int cth = t.column("theta");
    if (ct < 0 || cx < 0 || cy < 0) throw Error(ErrorKind::ParseError, source + ": header must contain t,x,y");
    TrackObservations track;
    track.source = source;
    for (const auto& r : t.rows) {
        Observation o{r[static_cast<std::size_t>(ct)], r[static_cast<std::size_t>(cx)], r[static_cast<std::size_t>(cy)], std::nullopt, std::nullopt};
        if (cv >= 0) o.v = r[static_cast<std::size_t>(cv)];
        if (cth >= 0) o.theta = r[static_cast<std::size_t>(cth)];
        track.observations.push_back(o);
    }
    validate_track(track);
    return track;
}

inline std::string track_csv(const TrackObservations& track) {
    const bool full = !track.observations.empty() && track.observations.front().v && track.observations.front().theta;
    std::string out = full ? "t,x,y,v,theta\n" : "t,x,y\n";
    for (const auto& o : track.observations) {
        out += format_number(o.t) + "," + format_number(o.x) + "," + format_number(o.y);
        if (full) out += "," + format_number(o.v.value_or(0.0)) + "," + format_number(o.theta.value_or(0.0));
        out += "\n";
    }
    return out;
}

inline std::vector<Pose> poses_from_csv(const std::string& text, const std::string& source) {
    const CsvTable t = parse_csv(text, source);
    const int ct = t.column("t");
    const int cx = t.column("x");
    const int cy = t.column("y");
    const int cth = t.column("theta");
    if (ct < 0 || cx < 0 || cy < 0 || cth < 0) throw Error(ErrorKind::ParseError, source + ": header must contain t,x,y,theta");
    std::vector<Pose> out;
    for (const auto& r : t.rows) {
        out.push_back({r[static_cast<std::size_t>(ct)], r[static_cast<std::size_t>(cx)], r[static_cast<std::size_t>(cy)], r[static_cast<std::size_t>(cth)]});
    }
    return out;
}

/// Metric output: `step,t,value` rows.
inline std::string metrics_csv(const std::vector<int>& steps, const std::vector<double>& times, const std::vector<double>& values) {
    std::string out = "step,t,value\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        out += std::to_string(steps[i]) + "," + format_number(times[i]) + "," + format_number(values[i]) + "\n";
    }
    return out;
}

/// Particle truth CSV: `k,alpha,x0,...,x{n-1}`, one row per particle per step.
inline std::string particles_csv(const std::vector<ParticleSet>& sets) {
    std::string out;
    const Eigen::Index n = sets.empty() || sets.front().states.empty() ? 0 : sets.front().states.front().size();
    out += "k,alpha";
    for (Eigen::Index i = 0; i < n; ++i) out += ",x" + std::to_string(i);
    out += "\n";
    for (const auto& s : sets) {
        for (std::size_t p = 0; p < s.size(); ++p) {
            out += std::to_string(s.time_index) + "," + s.discrete[p];
            for (Eigen::Index i = 0; i < n; ++i) out += "," + format_number(s.states[p](i));
            out += "\n";
        }
    }
    return out;
}

inline std::vector<ParticleSet> particles_from_csv(const std::string& text) {
    std::vector<ParticleSet> sets;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (header) {
            header = false;
            continue;
        }
        const auto cells = split_csv_line(line);
        if (cells.size() < 3) throw Error(ErrorKind::ParseError, "particles: expected k,alpha,x0,...");
        const int k = static_cast<int>(parse_double(cells[0]));
        if (sets.empty() || sets.back().time_index != k) {
            sets.emplace_back();
            sets.back().time_index = k;
        }
        Vector x(static_cast<Eigen::Index>(cells.size() - 2));
        for (std::size_t i = 2; i < cells.size(); ++i) x(static_cast<Eigen::Index>(i - 2)) = parse_double(cells[i]);
        sets.back().states.push_back(std::move(x));
        sets.back().discrete.push_back(cells[1]);
    }
    return sets;
}

} // namespace hgmm::io
