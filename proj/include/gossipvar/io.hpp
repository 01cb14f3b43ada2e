#pragma once

// Run outputs: CSV metric tables and the summary.json document.

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "gossipvar/errors.hpp"
#include "gossipvar/metrics.hpp"

namespace gossipvar {

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, end);
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ParseError("csv: missing column '" + name + "'");
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot read " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    t.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != t.header.size())
            throw ParseError(path.string() + ": row has " + std::to_string(cells.size()) + " fields, header has " +
                             std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

}  // namespace detail

inline void write_accuracy_csv(const std::filesystem::path& path, std::span<const AccuracyRow> rows) {
    auto out = detail::open_out(path);
    out << "tick,node,accuracy\n";
    for (const auto& r : rows) out << r.tick << ',' << r.node << ',' << format_double(r.accuracy) << '\n';
}

inline void write_variance_csv(const std::filesystem::path& path, std::span<const VarianceRow> rows) {
    auto out = detail::open_out(path);
    out << "tick,node,layer,variance\n";
    for (const auto& r : rows) out << r.tick << ',' << r.node << ',' << r.layer << ',' << format_double(r.variance) << '\n';
}

inline void write_weight_diff_csv(const std::filesystem::path& path, std::span<const WeightDiffRow> rows) {
    auto out = detail::open_out(path);
    out << "tick,layer,diff\n";
    for (const auto& r : rows) out << r.tick << ',' << r.layer << ',' << format_double(r.diff) << '\n';
}

inline void write_server_accuracy_csv(const std::filesystem::path& path, std::span<const ServerAccuracyRow> rows) {
    auto out = detail::open_out(path);
    out << "tick,accuracy\n";
    for (const auto& r : rows) out << r.tick << ',' << format_double(r.accuracy) << '\n';
}

inline std::vector<AccuracyRow> read_accuracy_csv(const std::filesystem::path& path) {
    const auto t = read_csv(path);
    const auto ct = t.column("tick"), cn = t.column("node"), ca = t.column("accuracy");
    std::vector<AccuracyRow> out;
    for (const auto& r : t.rows) out.push_back({std::stoll(r[ct]), std::stoul(r[cn]), std::stod(r[ca])});
    return out;
}

/// Derived statistics of one run, serialized as summary.json.
struct RunSummary {
    std::string mode;
    std::uint64_t seed = 0;
    std::string config_digest;
    std::size_t nodes = 0;
    Tick max_ticks = 0;
    Tick eval_interval = 0;
    std::optional<Tick> t_first_average;
    std::optional<Tick> plateau_delay;
    bool plateau_degenerate = false;
    std::optional<Tick> first_90;
    std::optional<Tick> most_90;
    std::optional<Tick> server_first_90;
    double final_mean_accuracy = 0.0;
};

inline RunSummary summarize(const MetricsLog& log, std::size_t smoothing_window) {
    RunSummary s;
    s.config_digest = log.config_digest;
    s.t_first_average = log.t_first_average;
    const auto series = accuracy_series(log.accuracy);
    if (!series.ticks.empty()) {
        s.nodes = series.per_node.front().size();
        const auto r = reach_90(series);
        s.first_90 = r.first;
        s.most_90 = r.most;
        const auto mean = series.mean();
        s.final_mean_accuracy = mean.back();
        if (log.t_first_average) {
            try {
                const auto rep = plateau_delay(series.ticks, mean, *log.t_first_average, smoothing_window);
                s.plateau_delay = rep.t_plateau_delay;
                s.plateau_degenerate = rep.degenerate;
            } catch (const std::invalid_argument&) {
                // too few samples after the first averaging
            }
        }
    }
    if (!log.server_accuracy.empty()) {
        std::vector<Tick> ticks;
        std::vector<double> acc;
        for (const auto& r : log.server_accuracy) {
            ticks.push_back(r.tick);
            acc.push_back(r.accuracy);
        }
        s.server_first_90 = first_crossing(ticks, acc);
    }
    return s;
}

inline nlohmann::json to_json(const RunSummary& s) {
    auto opt = [](const std::optional<Tick>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j{
        {"mode", s.mode},
        {"seed", s.seed},
        {"config_digest", s.config_digest},
        {"nodes", s.nodes},
        {"max_ticks", s.max_ticks},
        {"eval_interval", s.eval_interval},
        {"t_first_average", opt(s.t_first_average)},
        {"plateau_delay", opt(s.plateau_delay)},
        {"plateau_degenerate", s.plateau_degenerate},
        {"first_90", opt(s.first_90)},
        {"most_90", opt(s.most_90)},
        {"final_mean_accuracy", s.final_mean_accuracy},
    };
    if (s.mode == "federated") j["server_first_90"] = opt(s.server_first_90);
    return j;
}

inline RunSummary summary_from_json(const nlohmann::json& j) {
    auto opt = [&](const char* k) -> std::optional<Tick> {
        if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
        return j.at(k).get<Tick>();
    };
    RunSummary s;
    try {
        s.mode = j.value("mode", "");
        s.seed = j.value("seed", std::uint64_t{0});
        s.config_digest = j.value("config_digest", "");
        s.nodes = j.value("nodes", std::size_t{0});
        s.max_ticks = j.value("max_ticks", Tick{0});
        s.eval_interval = j.value("eval_interval", Tick{0});
        s.t_first_average = opt("t_first_average");
        s.plateau_delay = opt("plateau_delay");
        s.plateau_degenerate = j.value("plateau_degenerate", false);
        s.first_90 = opt("first_90");
        s.most_90 = opt("most_90");
        s.server_first_90 = opt("server_first_90");
        s.final_mean_accuracy = j.value("final_mean_accuracy", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("summary.json: ") + e.what());
    }
    return s;
}

inline RunSummary read_summary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return summary_from_json(j);
}

}  // namespace gossipvar
