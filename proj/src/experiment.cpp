#include "normagent/experiment.hpp"

#include "normagent/util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <sstream>
#include <thread>

namespace normagent {

namespace {

constexpr std::string_view kArrowDown = "↓";   // ↓
constexpr std::string_view kArrowUp = "↑";     // ↑
constexpr std::string_view kArrowLevel = "−";  // −

struct MeanStd {
    double mean = 0.0;
    double std_dev = 0.0;
    bool degenerate = false;
};

MeanStd sample_stats(const std::vector<double>& values) {
    MeanStd out;
    if (values.empty()) {
        out.degenerate = true;
        return out;
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    out.mean = sum / static_cast<double>(values.size());
    if (values.size() < 2) {
        out.degenerate = true;
        return out;
    }
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std_dev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return out;
}

}  // namespace

BaselineStats run_default_baseline(Gateway& gateway, int n, std::uint64_t base_seed,
                                   int retry_limit) {
    if (n < 1) throw std::invalid_argument("baseline repetition count must be >= 1");
    BaselineStats stats;
    stats.attempted = n;
    for (int i = 0; i < n; ++i) {
        const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
        try {
            stats.reports.push_back(administer(gateway, "", seed, retry_limit));
        } catch (const AdministrationFailed& e) {
            stats.failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
        }
    }

    stats.n = static_cast<int>(stats.reports.size());
    std::vector<double> pa, na;
    pa.reserve(stats.reports.size());
    na.reserve(stats.reports.size());
    for (const auto& report : stats.reports) {
        pa.push_back(report.positive_affect);
        na.push_back(report.negative_affect);
    }
    MeanStd pa_stats = sample_stats(pa);
    MeanStd na_stats = sample_stats(na);
    stats.pa_mean = pa_stats.mean;
    stats.pa_std = pa_stats.std_dev;
    stats.na_mean = na_stats.mean;
    stats.na_std = na_stats.std_dev;
    stats.degenerate_std = pa_stats.degenerate;
    return stats;
}

ojson baseline_to_json(const BaselineStats& stats) {
    ojson j;
    j["n"] = stats.n;
    j["attempted"] = stats.attempted;
    j["pa_mean"] = stats.pa_mean;
    j["pa_std"] = stats.pa_std;
    j["na_mean"] = stats.na_mean;
    j["na_std"] = stats.na_std;
    j["std_convention"] = stats.std_convention;
    j["degenerate_std"] = stats.degenerate_std;
    j["failures"] = stats.failures;
    auto& reports = j["reports"] = ojson::array();
    for (const auto& report : stats.reports) reports.push_back(panas_report_to_json(report));
    return j;
}

BaselineStats baseline_from_json(const ojson& j) {
    BaselineStats stats;
    stats.n = j.at("n").get<int>();
    stats.attempted = j.value("attempted", stats.n);
    stats.pa_mean = j.at("pa_mean").get<double>();
    stats.pa_std = j.at("pa_std").get<double>();
    stats.na_mean = j.at("na_mean").get<double>();
    stats.na_std = j.at("na_std").get<double>();
    stats.std_convention = j.value("std_convention", "sample");
    stats.degenerate_std = j.value("degenerate_std", false);
    if (j.contains("failures")) stats.failures = j.at("failures").get<std::vector<std::string>>();
    if (j.contains("reports")) {
        for (const auto& report : j.at("reports")) {
            stats.reports.push_back(panas_report_from_json(report));
        }
    }
    return stats;
}

StoryExtremes summarize_story(const Trajectory& trajectory) {
    StoryExtremes extremes;
    extremes.story_id = trajectory.story_id;
    extremes.arm = trajectory.arm;
    bool any = false;
    for (const auto& step : trajectory.steps) {
        if (!step.panas) continue;
        if (!any) {
            extremes.min_pa = step.panas->positive_affect;
            extremes.max_na = step.panas->negative_affect;
            any = true;
        } else {
            extremes.min_pa = std::min(extremes.min_pa, step.panas->positive_affect);
            extremes.max_na = std::max(extremes.max_na, step.panas->negative_affect);
        }
        ++extremes.scenes_counted;
    }
    if (!any) {
        throw EmptyTrajectory("no successful PANAS step in story " + trajectory.story_id);
    }
    return extremes;
}

std::string arrow_for(double delta, double threshold) {
    if (delta <= -threshold) return std::string(kArrowDown);
    if (delta >= threshold) return std::string(kArrowUp);
    return std::string(kArrowLevel);
}

std::vector<CategorySummary> aggregate(const std::vector<CategorizedExtremes>& extremes,
                                       const BaselineStats& baseline, double arrow_threshold) {
    struct Bucket {
        double sum_min_pa = 0.0;
        double sum_max_na = 0.0;
        int n = 0;
    };
    // (category index or kCategoryCount for Overall, arm) -> bucket
    std::map<std::pair<int, int>, Bucket> buckets;
    for (const auto& entry : extremes) {
        auto add = [&](int category_key) {
            Bucket& b = buckets[{category_key, static_cast<int>(entry.extremes.arm)}];
            b.sum_min_pa += entry.extremes.min_pa;
            b.sum_max_na += entry.extremes.max_na;
            ++b.n;
        };
        add(static_cast<int>(entry.category));
        add(kCategoryCount);  // Overall pool
    }

    std::vector<CategorySummary> rows;
    for (int c = 0; c <= kCategoryCount; ++c) {
        for (Arm arm : {Arm::WithNorm, Arm::WithoutNorm}) {
            auto it = buckets.find({c, static_cast<int>(arm)});
            if (it == buckets.end()) continue;
            const Bucket& b = it->second;
            CategorySummary row;
            row.category = c == kCategoryCount
                               ? "Overall"
                               : std::string(category_name(static_cast<Category>(c)));
            row.arm = arm;
            row.mean_min_pa = b.sum_min_pa / b.n;
            row.mean_max_na = b.sum_max_na / b.n;
            row.delta_pa = row.mean_min_pa - baseline.pa_mean;
            row.delta_na = row.mean_max_na - baseline.na_mean;
            row.arrow_pa = arrow_for(row.delta_pa, arrow_threshold);
            row.arrow_na = arrow_for(row.delta_na, arrow_threshold);
            row.n_stories = b.n;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string summary_csv(const std::vector<CategorySummary>& rows) {
    std::string out =
        "category,arm,mean_min_pa,delta_pa,arrow_pa,mean_max_na,delta_na,arrow_na,n_stories\n";
    for (const auto& row : rows) {
        out += row.category;
        out += ',';
        out += arm_token(row.arm);
        out += ',';
        out += format_fixed(row.mean_min_pa, 4);
        out += ',';
        out += format_fixed(row.delta_pa, 4);
        out += ',';
        out += row.arrow_pa;
        out += ',';
        out += format_fixed(row.mean_max_na, 4);
        out += ',';
        out += format_fixed(row.delta_na, 4);
        out += ',';
        out += row.arrow_na;
        out += ',';
        out += std::to_string(row.n_stories);
        out += '\n';
    }
    return out;
}

std::string summary_table(const std::vector<CategorySummary>& rows,
                          const BaselineStats& baseline) {
    std::ostringstream out;
    out << "Emotion        Arm            Positive (min)        Negative (max)        N\n";
    out << "-------        ---            --------------        --------------        -\n";
    // Pad by display columns, not bytes; arrows and the plus-minus sign are
    // multi-byte but single-column.
    auto pad = [](std::string s, size_t width) {
        size_t columns = 0;
        for (unsigned char c : s) {
            if ((c & 0xC0) != 0x80) ++columns;
        }
        if (columns < width) s.append(width - columns, ' ');
        return s;
    };
    out << pad("Default", 15) << pad("-", 15)
        << pad(format_fixed(baseline.pa_mean, 1) + " ± " + format_fixed(baseline.pa_std, 1),
               22)
        << pad(format_fixed(baseline.na_mean, 1) + " ± " + format_fixed(baseline.na_std, 1),
               22)
        << baseline.n << "\n";
    for (const auto& row : rows) {
        std::string pa = row.arrow_pa + " (" + format_signed(row.delta_pa, 1) + ")";
        std::string na = row.arrow_na + " (" + format_signed(row.delta_na, 1) + ")";
        out << pad(row.category, 15) << pad(arm_token(row.arm), 15) << pad(pa, 22) << pad(na, 22)
            << row.n_stories << "\n";
    }
    return out.str();
}

std::string plot_data_csv(const Trajectory& with_norm, const Trajectory& without_norm) {
    if (with_norm.story_id != without_norm.story_id) {
        throw StoryMismatch("trajectories belong to different stories: " + with_norm.story_id +
                            " vs " + without_norm.story_id);
    }
    auto cell = [](const Trajectory& t, int scene, bool positive) -> std::string {
        for (const auto& step : t.steps) {
            if (step.scene_index != scene) continue;
            if (!step.panas) return "";
            return std::to_string(positive ? step.panas->positive_affect
                                           : step.panas->negative_affect);
        }
        return "";
    };
    std::string out = "scene,pa_with,na_with,pa_without,na_without\n";
    for (int scene = 1; scene <= 5; ++scene) {
        out += std::to_string(scene);
        out += ',';
        out += cell(with_norm, scene, true);
        out += ',';
        out += cell(with_norm, scene, false);
        out += ',';
        out += cell(without_norm, scene, true);
        out += ',';
        out += cell(without_norm, scene, false);
        out += '\n';
    }
    return out;
}

void emit_plot_data(const Trajectory& with_norm, const Trajectory& without_norm,
                    const std::filesystem::path& path) {
    write_text_file_atomic(path, plot_data_csv(with_norm, without_norm));
}

bool RunManifest::all_succeeded() const {
    return std::all_of(entries.begin(), entries.end(),
                       [](const ManifestEntry& e) { return e.status == "success"; });
}

ojson manifest_to_json(const RunManifest& manifest) {
    ojson j;
    j["run_id"] = manifest.run_id;
    j["config"] = manifest.config_snapshot;
    ojson cassette;
    cassette["path"] = manifest.cassette_path;
    cassette["mode"] = manifest.cassette_mode;
    cassette["entries"] = manifest.cassette_entries;
    cassette["fingerprints_used"] = manifest.fingerprints_used;
    j["cassette"] = std::move(cassette);
    auto& entries = j["entries"] = ojson::array();
    for (const auto& entry : manifest.entries) {
        ojson e;
        e["story_id"] = entry.story_id;
        e["arm"] = arm_token(entry.arm);
        e["artifact"] = entry.artifact;
        e["base_seed"] = entry.base_seed;
        e["status"] = entry.status;
        e["cached"] = entry.cached;
        if (!entry.error.empty()) e["error"] = entry.error;
        entries.push_back(std::move(e));
    }
    return j;
}

RunManifest run_dataset(Gateway& gateway, MemoryStore& store,
                        const std::vector<StoryRecord>& stories, const RunOptions& options) {
    const auto trajectories_dir = options.out_dir / "trajectories";
    std::filesystem::create_directories(trajectories_dir);

    struct Task {
        const StoryRecord* story;
        Arm arm;
        std::uint64_t base_seed;
    };
    std::vector<Task> tasks;
    for (size_t i = 0; i < stories.size(); ++i) {
        // Deterministic per-story seed from dataset order; the stride leaves
        // room for the per-scene offsets and retry bumps.
        const std::uint64_t seed = options.base_seed + 1000 * static_cast<std::uint64_t>(i);
        for (Arm arm : options.arms) tasks.push_back({&stories[i], arm, seed});
    }

    std::vector<ManifestEntry> entries(tasks.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const size_t index = next.fetch_add(1);
            if (index >= tasks.size()) return;
            const Task& task = tasks[index];
            ManifestEntry& entry = entries[index];
            entry.story_id = task.story->situation_id;
            entry.arm = task.arm;
            entry.base_seed = task.base_seed;
            const std::string filename =
                task.story->situation_id + "." + arm_token(task.arm) + ".json";
            entry.artifact = "trajectories/" + filename;
            const auto path = trajectories_dir / filename;

            if (std::filesystem::exists(path)) {
                try {
                    Trajectory existing = read_trajectory(path);
                    if (existing.complete()) {
                        entry.status = "success";
                        entry.cached = true;
                        continue;
                    }
                } catch (const std::exception&) {
                    // Unreadable artifact: fall through and re-run the pair.
                }
            }

            try {
                store.reset_story(store_run_id(options.run_id, task.arm),
                                  task.story->situation_id);
                Trajectory trajectory = run_story(gateway, store, *task.story, task.arm,
                                                  task.base_seed, options.run_id, options.story);
                write_trajectory(path, trajectory);
                if (trajectory.failure) {
                    entry.status = "failed";
                    entry.error = *trajectory.failure;
                } else {
                    entry.status = "success";
                }
            } catch (const std::exception& e) {
                entry.status = "failed";
                entry.error = e.what();
            }
        }
    };

    const int workers =
        std::max(1, std::min<int>(options.parallelism, static_cast<int>(tasks.size())));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    RunManifest manifest;
    manifest.run_id = options.run_id;
    manifest.entries = std::move(entries);
    const GatewayStats stats = gateway.stats();
    manifest.fingerprints_used = stats.fingerprints_used.size();
    if (gateway.cassette()) {
        manifest.cassette_entries = gateway.cassette()->size();
        manifest.cassette_mode = cassette_mode_name(gateway.cassette()->mode());
        manifest.cassette_path = gateway.cassette()->path().string();
    }
    return manifest;
}

}  // namespace normagent
