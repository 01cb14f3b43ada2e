#pragma once

// The three experiment-runner commands. Each returns a process exit code:
// 0 success, 1 runtime failure, 2 invalid input (config, missing files).

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <string>

#include "gossipvar/config.hpp"
#include "gossipvar/data.hpp"
#include "gossipvar/io.hpp"
#include "gossipvar/simulator.hpp"
#include "gossipvar/svg.hpp"
#include "gossipvar/topology.hpp"

namespace gossipvar {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitInvalid = 2;

struct LoadedData {
    Dataset train;
    Dataset test;
};

/// Resolves and loads the train/test IDX files named in `cfg`. Throws
/// ConfigError naming the first missing file.
inline LoadedData load_experiment_data(const ExperimentConfig& cfg,
                                       const std::filesystem::path& base = std::filesystem::current_path()) {
    const auto ti = resolve_data_path(cfg.data.train_images, base);
    const auto tl = resolve_data_path(cfg.data.train_labels, base);
    const auto vi = resolve_data_path(cfg.data.test_images, base);
    const auto vl = resolve_data_path(cfg.data.test_labels, base);
    for (const auto& p : {ti, tl, vi, vl})
        if (!std::filesystem::exists(p)) throw ConfigError("missing dataset file: " + p.string());
    return {load_idx(ti, tl).head(cfg.data.train_subset), load_idx(vi, vl).head(cfg.data.test_subset)};
}

/// Writes every run artifact into `dir`. Returns the summary that was written.
inline RunSummary write_run_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const Graph& graph,
                                    const SimResult& res) {
    std::filesystem::create_directories(dir);
    write_accuracy_csv(dir / "accuracy.csv", res.metrics.accuracy);
    write_variance_csv(dir / "variance.csv", res.metrics.variance);
    write_weight_diff_csv(dir / "weight_diff.csv", res.metrics.weight_diff);
    if (cfg.mode == SimMode::federated) write_server_accuracy_csv(dir / "server_accuracy.csv", res.metrics.server_accuracy);
    {
        std::ofstream ev(dir / "events.csv", std::ios::binary);
        ev << "tick,node,kind,detail\n";
        for (const auto& e : res.events.events()) ev << e.tick << ',' << e.node << ',' << to_string(e.kind) << ',' << e.detail << '\n';
    }
    {
        std::ofstream topo(dir / "topology.txt", std::ios::binary);
        write_edge_list(graph, topo);
    }
    {
        std::ofstream c(dir / "config.json", std::ios::binary);
        c << to_json(cfg).dump(2) << '\n';
    }
    RunSummary s = summarize(res.metrics, cfg.smoothing_window);
    s.mode = to_string(cfg.mode);
    s.seed = cfg.seed;
    s.max_ticks = cfg.max_ticks;
    s.eval_interval = cfg.eval_interval;
    std::ofstream sj(dir / "summary.json", std::ios::binary);
    sj << to_json(s).dump(2) << '\n';
    return s;
}

/// Runs a fully-specified experiment on already-loaded data and writes its outputs.
inline RunSummary run_experiment(const ExperimentConfig& cfg, const LoadedData& data, const std::filesystem::path& out_dir) {
    const SimConfig sim = cfg.to_sim();
    const Graph graph = build_topology(sim);
    SimResult res = sim.mode == SimMode::gossip ? run_gossip(sim, data.train, data.test, graph)
                                                : run_federated(sim, data.train, data.test, graph);
    res.metrics.config_digest = config_digest(cfg);
    return write_run_outputs(out_dir, cfg, graph, res);
}

inline std::string describe(const std::optional<Tick>& v) { return v ? std::to_string(*v) : "absent"; }

inline int cmd_run(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err,
                   const std::optional<std::filesystem::path>& out_override = std::nullopt) {
    ExperimentConfig cfg;
    LoadedData data;
    try {
        cfg = load_config(config_path);
        data = load_experiment_data(cfg);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    }
    const std::filesystem::path dir = out_override ? *out_override : std::filesystem::path(cfg.output_dir);
    try {
        const auto s = run_experiment(cfg, data, dir);
        out << "wrote " << dir.string() << "\n"
            << "  t_first_average " << describe(s.t_first_average) << "\n"
            << "  plateau_delay   " << describe(s.plateau_delay) << "\n"
            << "  first_90        " << describe(s.first_90) << "\n"
            << "  most_90         " << describe(s.most_90) << "\n";
        if (cfg.mode == SimMode::federated) out << "  server_first_90 " << describe(s.server_first_90) << "\n";
        out << "  final accuracy  " << s.final_mean_accuracy << "\n";
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::exception& e) {
        err << "run failed: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

namespace detail {

inline std::vector<ChartMarker> summary_markers(const RunSummary& s) {
    std::vector<ChartMarker> m;
    if (s.plateau_delay) m.push_back({static_cast<double>(*s.plateau_delay), "plateau delay " + std::to_string(*s.plateau_delay)});
    if (s.first_90) m.push_back({static_cast<double>(*s.first_90), "first 90% " + std::to_string(*s.first_90)});
    if (s.most_90) m.push_back({static_cast<double>(*s.most_90), "most 90% " + std::to_string(*s.most_90)});
    return m;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream o(p, std::ios::binary);
    if (!o) throw std::runtime_error("cannot write " + p.string());
    o << s;
}

}  // namespace detail

inline int cmd_report(const std::filesystem::path& run_dir, std::ostream& out, std::ostream& err) {
    CsvTable acc, var, diff;
    RunSummary summary;
    try {
        for (const char* f : {"accuracy.csv", "variance.csv", "weight_diff.csv", "summary.json"})
            if (!std::filesystem::exists(run_dir / f)) throw ParseError("missing " + (run_dir / f).string());
        acc = read_csv(run_dir / "accuracy.csv");
        var = read_csv(run_dir / "variance.csv");
        diff = read_csv(run_dir / "weight_diff.csv");
        summary = read_summary(run_dir / "summary.json");
        if (acc.rows.empty() || var.rows.empty() || diff.rows.empty())
            throw ParseError("run outputs in " + run_dir.string() + " contain no data rows");
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    }

    try {
        const auto markers = detail::summary_markers(summary);

        LineChart ac;
        ac.title = "Accuracy";
        ac.y_label = "accuracy";
        std::map<std::size_t, ChartSeries> per_node;
        std::map<Tick, std::pair<double, int>> mean;
        const auto ct = acc.column("tick"), cn = acc.column("node"), ca = acc.column("accuracy");
        for (const auto& r : acc.rows) {
            const Tick t = std::stoll(r[ct]);
            const double a = std::stod(r[ca]);
            auto& s = per_node[std::stoul(r[cn])];
            s.points.emplace_back(static_cast<double>(t), a);
            mean[t].first += a;
            mean[t].second += 1;
        }
        for (auto& [node, s] : per_node) {
            s.name = "node " + std::to_string(node);
            s.stroke_width = 0.6;
            s.opacity = 0.35;
            s.legend = false;
            ac.series.push_back(std::move(s));
        }
        ChartSeries ms{"mean accuracy", {}, 2.5, 1.0, true};
        for (const auto& [t, v] : mean) ms.points.emplace_back(static_cast<double>(t), v.first / v.second);
        ac.series.push_back(std::move(ms));
        if (std::filesystem::exists(run_dir / "server_accuracy.csv")) {
            const auto sv = read_csv(run_dir / "server_accuracy.csv");
            ChartSeries ss{"server", {}, 2.0, 1.0, true};
            for (const auto& r : sv.rows) ss.points.emplace_back(std::stod(r[sv.column("tick")]), std::stod(r[sv.column("accuracy")]));
            ac.series.push_back(std::move(ss));
        }
        ac.markers = markers;
        detail::write_text(run_dir / "accuracy.svg", ac.render());

        LineChart vc;
        vc.title = "Layer weight variance (mean over nodes)";
        vc.y_label = "variance";
        vc.log_y = true;
        std::map<std::string, std::map<Tick, std::pair<double, int>>> by_layer;
        const auto vt = var.column("tick"), vl = var.column("layer"), vv = var.column("variance");
        for (const auto& r : var.rows) {
            auto& cell = by_layer[r[vl]][std::stoll(r[vt])];
            cell.first += std::stod(r[vv]);
            cell.second += 1;
        }
        for (const auto& [layer, pts] : by_layer) {
            ChartSeries s{layer, {}, 2.0, 1.0, true};
            for (const auto& [t, v] : pts) s.points.emplace_back(static_cast<double>(t), v.first / v.second);
            vc.series.push_back(std::move(s));
        }
        vc.markers = markers;
        detail::write_text(run_dir / "variance.svg", vc.render());

        LineChart dc;
        dc.title = "Model weight difference";
        dc.y_label = "L1 ring difference";
        std::map<std::string, ChartSeries> dl;
        const auto dt = diff.column("tick"), dlc = diff.column("layer"), dd = diff.column("diff");
        for (const auto& r : diff.rows) dl[r[dlc]].points.emplace_back(std::stod(r[dt]), std::stod(r[dd]));
        for (auto& [layer, s] : dl) {
            s.name = layer;
            dc.series.push_back(std::move(s));
        }
        dc.markers = markers;
        detail::write_text(run_dir / "weight_diff.svg", dc.render());
    } catch (const std::exception& e) {
        err << "report failed: " << e.what() << '\n';
        return kExitRuntime;
    }
    out << "wrote accuracy.svg, variance.svg, weight_diff.svg in " << run_dir.string() << '\n';
    return kExitOk;
}

/// Ratio a/b: how many times sooner run b reaches the milestone than run a.
inline std::optional<double> milestone_ratio(const std::optional<Tick>& a, const std::optional<Tick>& b) {
    if (!a || !b || *b <= 0) return std::nullopt;
    return static_cast<double>(*a) / static_cast<double>(*b);
}

inline int cmd_compare(const std::filesystem::path& a, const std::filesystem::path& b,
                       const std::filesystem::path& out_json, std::ostream& out, std::ostream& err) {
    RunSummary sa, sb;
    try {
        for (const auto& d : {a, b})
            if (!std::filesystem::exists(d / "summary.json")) throw ParseError("missing " + (d / "summary.json").string());
        sa = read_summary(a / "summary.json");
        sb = read_summary(b / "summary.json");
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    }

    const std::vector<std::pair<std::string, std::pair<std::optional<Tick>, std::optional<Tick>>>> rows{
        {"plateau_delay", {sa.plateau_delay, sb.plateau_delay}},
        {"first_90", {sa.first_90, sb.first_90}},
        {"most_90", {sa.most_90, sb.most_90}},
    };
    nlohmann::json metrics = nlohmann::json::object();
    out << std::left << std::setw(16) << "metric" << std::setw(12) << "a" << std::setw(12) << "b"
        << "ratio a/b\n";
    for (const auto& [name, vals] : rows) {
        const auto ratio = milestone_ratio(vals.first, vals.second);
        out << std::setw(16) << name << std::setw(12) << describe(vals.first) << std::setw(12) << describe(vals.second)
            << (ratio ? format_double(*ratio) : std::string("absent")) << '\n';
        auto val = [](const std::optional<Tick>& v) { return v ? nlohmann::json(*v) : nlohmann::json("absent"); };
        metrics[name] = {{"a", val(vals.first)},
                         {"b", val(vals.second)},
                         {"ratio", ratio ? nlohmann::json(*ratio) : nlohmann::json("absent")}};
    }
    try {
        if (out_json.has_parent_path()) std::filesystem::create_directories(out_json.parent_path());
        std::ofstream o(out_json, std::ios::binary);
        if (!o) throw std::runtime_error("cannot write " + out_json.string());
        o << nlohmann::json{{"a", a.string()}, {"b", b.string()}, {"metrics", metrics}}.dump(2) << '\n';
    } catch (const std::exception& e) {
        err << "compare failed: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace gossipvar
