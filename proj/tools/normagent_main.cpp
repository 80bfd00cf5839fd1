// normagent: stories -> agent runs -> PANAS aggregation, end to end.

#include "normagent/config.hpp"
#include "normagent/experiment.hpp"
#include "normagent/gateway.hpp"
#include "normagent/pipeline.hpp"
#include "normagent/storygen.hpp"
#include "normagent/util.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace normagent;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;  // usage / config / missing inputs
constexpr int kExitPartial = 2;  // ran, but some items failed

struct GlobalFlags {
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> cassette;
    std::optional<std::string> cassette_mode;
    std::optional<int> parallelism;
    bool verbose = false;

    std::map<std::string, std::string> overrides() const {
        std::map<std::string, std::string> flags;
        if (seed) flags["run.base_seed"] = std::to_string(*seed);
        if (cassette) flags["gateway.cassette_path"] = *cassette;
        if (cassette_mode) flags["gateway.cassette_mode"] = *cassette_mode;
        if (parallelism) flags["run.parallelism"] = std::to_string(*parallelism);
        if (verbose) flags["run.verbose"] = "true";
        return flags;
    }
};

RunConfig make_config(const GlobalFlags& globals,
                      std::map<std::string, std::string> extra_overrides) {
    auto flags = globals.overrides();
    for (auto& [key, value] : extra_overrides) flags[key] = value;
    std::optional<fs::path> config_path;
    if (globals.config_path) config_path = fs::path(*globals.config_path);
    return load_config(flags, config_path);
}

int cmd_stories_generate(const GlobalFlags& globals, const std::string& input,
                         const std::string& out, std::optional<int> limit) {
    if (!fs::exists(input)) {
        std::cerr << "error: input file not found: " << input << "\n";
        return kExitFailure;
    }
    RunConfig config = make_config(globals, {});
    auto situations = ingest_situations(input);
    if (limit && static_cast<size_t>(*limit) < situations.size()) {
        situations.resize(static_cast<size_t>(*limit));
    }

    Gateway gateway(config.gateway);
    GenerationReport report =
        generate_dataset(gateway, situations, config.story_retry_limit, config.parallelism);
    write_story_dataset(out, report.records);
    write_failures_sidecar(out, report.failures);

    if (config.verbose) {
        for (const auto& record : report.records) {
            for (const auto& warning : emotional_word_warnings(record)) {
                std::cerr << "note: " << record.situation_id << " emotional word, " << warning
                          << "\n";
            }
        }
    }
    std::cout << "attempted: " << report.attempted << "\n"
              << "records:   " << report.records.size() << "\n"
              << "failures:  " << report.failures.size() << "\n";
    return report.failures.empty() ? kExitOk : kExitPartial;
}

int cmd_run(const GlobalFlags& globals, const std::string& stories_path, const std::string& arm,
            const std::string& out, std::optional<std::string> run_id) {
    std::map<std::string, std::string> overrides{{"run.arms", arm},
                                                 {"run.output_dir", out}};
    if (run_id) overrides["run.run_id"] = *run_id;
    RunConfig config = make_config(globals, overrides);

    if (!fs::exists(stories_path)) {
        std::cerr << "error: stories file not found: " << stories_path << "\n";
        return kExitFailure;
    }
    const auto stories = read_story_dataset(stories_path);
    for (const auto& story : stories) {
        if (story.scenes.size() != 5) {
            std::cerr << "error: story " << story.situation_id << " does not have 5 scenes\n";
            return kExitFailure;
        }
    }

    Gateway gateway(config.gateway);
    MemoryStore store(fs::path(config.output_dir) / "graph");

    RunOptions options;
    options.run_id = config.run_id;
    options.arms = config.arm_list();
    options.base_seed = config.base_seed;
    options.parallelism = config.parallelism;
    options.out_dir = config.output_dir;
    options.story = config.story_options();

    RunManifest manifest = run_dataset(gateway, store, stories, options);
    manifest.config_snapshot = config.snapshot();
    write_text_file_atomic(fs::path(config.output_dir) / "manifest.json",
                           manifest_to_json(manifest).dump(2) + "\n");

    size_t failed = 0;
    for (const auto& entry : manifest.entries) {
        if (entry.status != "success") {
            ++failed;
            std::cerr << "failed: " << entry.story_id << " [" << arm_token(entry.arm)
                      << "]: " << entry.error << "\n";
        }
    }
    std::cout << "pairs:    " << manifest.entries.size() << "\n"
              << "failed:   " << failed << "\n"
              << "manifest: " << (fs::path(config.output_dir) / "manifest.json").string() << "\n";
    return failed == 0 ? kExitOk : kExitPartial;
}

int cmd_baseline(const GlobalFlags& globals, int n, const std::string& out) {
    if (n < 1) {
        std::cerr << "error: --n must be >= 1\n";
        return kExitFailure;
    }
    RunConfig config = make_config(globals, {});
    Gateway gateway(config.gateway);
    BaselineStats stats =
        run_default_baseline(gateway, n, config.base_seed, config.panas_retry_limit);
    write_text_file_atomic(out, baseline_to_json(stats).dump(2) + "\n");
    std::cout << "n:       " << stats.n << "\n"
              << "pa_mean: " << format_fixed(stats.pa_mean, 2) << " ± "
              << format_fixed(stats.pa_std, 2) << "\n"
              << "na_mean: " << format_fixed(stats.na_mean, 2) << " ± "
              << format_fixed(stats.na_std, 2) << "\n";
    return stats.failures.empty() ? kExitOk : kExitPartial;
}

std::vector<Trajectory> load_run_trajectories(const fs::path& runs_dir) {
    const fs::path dir = runs_dir / "trajectories";
    if (!fs::is_directory(dir)) {
        throw std::runtime_error("no trajectories directory under " + runs_dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<Trajectory> trajectories;
    trajectories.reserve(files.size());
    for (const auto& file : files) trajectories.push_back(read_trajectory(file));
    return trajectories;
}

Category category_for_story(const std::string& story_id) {
    auto dash = story_id.find('-');
    const std::string prefix = dash == std::string::npos ? story_id : story_id.substr(0, dash);
    auto category = category_from_string(prefix);
    if (!category) {
        throw std::runtime_error("cannot derive category from story id: " + story_id);
    }
    return *category;
}

int cmd_aggregate(const GlobalFlags& globals, const std::string& runs,
                  const std::string& baseline_path, const std::string& out) {
    RunConfig config = make_config(globals, {});
    if (!fs::exists(baseline_path)) {
        std::cerr << "error: baseline file not found: " << baseline_path << "\n";
        return kExitFailure;
    }
    BaselineStats baseline = baseline_from_json(ojson::parse(read_text_file(baseline_path)));

    std::vector<CategorizedExtremes> extremes;
    for (const auto& trajectory : load_run_trajectories(runs)) {
        try {
            extremes.push_back(
                {category_for_story(trajectory.story_id), summarize_story(trajectory)});
        } catch (const EmptyTrajectory& e) {
            std::cerr << "skipping: " << e.what() << "\n";
        }
    }
    if (extremes.empty()) {
        std::cerr << "error: no usable trajectories under " << runs << "\n";
        return kExitFailure;
    }

    const auto rows = aggregate(extremes, baseline);
    write_text_file_atomic(out, summary_csv(rows));
    std::cout << summary_table(rows, baseline);
    if (config.verbose) std::cout << "summary csv: " << out << "\n";
    return kExitOk;
}

int cmd_plot_data(const GlobalFlags& globals, const std::string& runs, const std::string& story,
                  const std::string& out) {
    (void)make_config(globals, {});
    const fs::path dir = fs::path(runs) / "trajectories";
    const fs::path with_path = dir / (story + ".with_norm.json");
    const fs::path without_path = dir / (story + ".without_norm.json");
    for (const auto& path : {with_path, without_path}) {
        if (!fs::exists(path)) {
            std::cerr << "error: trajectory not found: " << path.string() << "\n";
            return kExitFailure;
        }
    }
    emit_plot_data(read_trajectory(with_path), read_trajectory(without_path), out);
    std::cout << "plot data: " << out << "\n";
    return kExitOk;
}

int cmd_graph_export(const GlobalFlags& globals, const std::string& run_dir,
                     const std::string& arm, const std::string& format,
                     std::optional<std::string> out) {
    (void)make_config(globals, {});
    const fs::path manifest_path = fs::path(run_dir) / "manifest.json";
    if (!fs::exists(manifest_path)) {
        std::cerr << "error: manifest not found: " << manifest_path.string() << "\n";
        return kExitFailure;
    }
    const std::string run_id =
        ojson::parse(read_text_file(manifest_path)).at("run_id").get<std::string>();
    auto arm_value = arm_from_string(arm);
    if (!arm_value) {
        std::cerr << "error: unknown arm: " << arm << "\n";
        return kExitFailure;
    }
    GraphFormat graph_format;
    if (format == "dot") {
        graph_format = GraphFormat::Dot;
    } else if (format == "json") {
        graph_format = GraphFormat::Json;
    } else {
        std::cerr << "error: unknown format: " << format << "\n";
        return kExitFailure;
    }

    MemoryStore store(fs::path(run_dir) / "graph");
    const std::string text = store.export_graph(store_run_id(run_id, *arm_value), graph_format);
    if (out) {
        write_text_file_atomic(*out, text);
        std::cout << "graph: " << *out << "\n";
    } else {
        std::cout << text;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generative-agent emotional dynamics: story generation, norm-based perception, "
                 "PANAS measurement and aggregation"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags globals;
    app.add_option("--config", globals.config_path, "Config file (flat key = value)");
    app.add_option("--seed", globals.seed, "Base seed for all randomized steps");
    app.add_option("--cassette", globals.cassette, "Cassette file for record/replay");
    app.add_option("--cassette-mode", globals.cassette_mode, "record|replay|passthrough");
    app.add_option("--parallelism", globals.parallelism, "Concurrent stories bound");
    app.add_flag("--verbose", globals.verbose, "Verbose output");

    // stories generate
    auto* stories_cmd = app.add_subcommand("stories", "Story dataset commands");
    stories_cmd->require_subcommand(1);
    auto* generate_cmd =
        stories_cmd->add_subcommand("generate", "Expand situations into 5-scene stories");
    std::string gen_input, gen_out;
    std::optional<int> gen_limit;
    generate_cmd->add_option("--input", gen_input, "Situations CSV or JSON")->required();
    generate_cmd->add_option("--out", gen_out, "Output dataset (JSON Lines)")->required();
    generate_cmd->add_option("--limit", gen_limit, "Only the first N situations");

    // run
    auto* run_cmd = app.add_subcommand("run", "Run both arms over a story dataset");
    std::string run_stories, run_arm = "both", run_out;
    std::optional<std::string> run_run_id;
    run_cmd->add_option("--stories", run_stories, "Story dataset (JSON Lines)")->required();
    run_cmd->add_option("--arm", run_arm, "both|with-norm|without-norm");
    run_cmd->add_option("--out", run_out, "Run output directory")->required();
    run_cmd->add_option("--run-id", run_run_id, "Run identifier (default: run)");

    // baseline
    auto* baseline_cmd = app.add_subcommand("baseline", "Default PANAS baseline (no scenario)");
    int baseline_n = 0;
    std::string baseline_out;
    baseline_cmd->add_option("--n", baseline_n, "Number of administrations")->required();
    baseline_cmd->add_option("--out", baseline_out, "Output JSON file")->required();

    // aggregate
    auto* aggregate_cmd = app.add_subcommand("aggregate", "Per-category summary vs baseline");
    std::string agg_runs, agg_baseline, agg_out;
    aggregate_cmd->add_option("--runs", agg_runs, "Run output directory")->required();
    aggregate_cmd->add_option("--baseline", agg_baseline, "Baseline JSON file")->required();
    aggregate_cmd->add_option("--out", agg_out, "Summary CSV path")->required();

    // plot-data
    auto* plot_cmd = app.add_subcommand("plot-data", "Per-story PA/NA series CSV");
    std::string plot_runs, plot_story, plot_out;
    plot_cmd->add_option("--runs", plot_runs, "Run output directory")->required();
    plot_cmd->add_option("--story", plot_story, "Story id")->required();
    plot_cmd->add_option("--out", plot_out, "Output CSV path")->required();

    // graph export
    auto* graph_cmd = app.add_subcommand("graph", "Memory graph commands");
    graph_cmd->require_subcommand(1);
    auto* export_cmd = graph_cmd->add_subcommand("export", "Export a run's memory graph");
    std::string graph_run, graph_arm = "with_norm", graph_format = "dot";
    std::optional<std::string> graph_out;
    export_cmd->add_option("--run", graph_run, "Run output directory")->required();
    export_cmd->add_option("--arm", graph_arm, "with-norm|without-norm");
    export_cmd->add_option("--format", graph_format, "dot|json");
    export_cmd->add_option("--out", graph_out, "Output file (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitFailure;
    }

    try {
        if (generate_cmd->parsed()) {
            return cmd_stories_generate(globals, gen_input, gen_out, gen_limit);
        }
        if (run_cmd->parsed()) {
            return cmd_run(globals, run_stories, run_arm, run_out, run_run_id);
        }
        if (baseline_cmd->parsed()) {
            return cmd_baseline(globals, baseline_n, baseline_out);
        }
        if (aggregate_cmd->parsed()) {
            return cmd_aggregate(globals, agg_runs, agg_baseline, agg_out);
        }
        if (plot_cmd->parsed()) {
            return cmd_plot_data(globals, plot_runs, plot_story, plot_out);
        }
        if (export_cmd->parsed()) {
            return cmd_graph_export(globals, graph_run, graph_arm, graph_format, graph_out);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    std::cerr << "error: no command\n";
    return kExitFailure;
}
