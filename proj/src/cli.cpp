#include "owd/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "owd/discovery.hpp"
#include "owd/eval.hpp"
#include "owd/formats.hpp"
#include "owd/moe.hpp"
#include "owd/random.hpp"
#include "owd/render.hpp"
#include "owd/synth.hpp"

namespace owd::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& flag, const std::string& text)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size())
                throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(flag + ": cannot parse '" + item + "' as a number");
        }
    }
    if (out.empty())
        throw UsageError(flag + ": empty list");
    return out;
}

std::pair<int, int> parse_range(const std::string& flag, const std::string& text)
{
    const auto dots = text.find("..");
    try {
        if (dots == std::string::npos) {
            const int v = std::stoi(text);
            return {v, v};
        }
        const int lo = std::stoi(text.substr(0, dots));
        const int hi = std::stoi(text.substr(dots + 2));
        if (lo > hi || lo < 0)
            throw std::invalid_argument(text);
        return {lo, hi};
    } catch (const std::exception&) {
        throw UsageError(flag + ": expected N or A..B with 0 <= A <= B, got '" + text + "'");
    }
}

std::array<int, 3> parse_grid(const std::string& flag, const std::string& text)
{
    std::array<int, 3> g{};
    char x1 = 0, x2 = 0;
    std::istringstream in(text);
    if (!(in >> g[0] >> x1 >> g[1] >> x2 >> g[2]) || x1 != 'x' || x2 != 'x' || !in.eof() || g[0] < 1 || g[1] < 1 ||
        g[2] < 1)
        throw UsageError(flag + ": expected XxYxZ with positive sizes, got '" + text + "'");
    return g;
}

std::string join(const std::vector<std::string>& parts)
{
    std::string s;
    for (std::size_t i = 0; i < parts.size(); ++i)
        s += (i ? "," : "") + parts[i];
    return s;
}

Record config_record(const std::string& command)
{
    Record r("config");
    r.set("command", command);
    r.set("tool", std::string(kToolName));
    r.set("version", std::string(kVersion));
    return r;
}

/// Runs `work(i)` for i in [0, n) on up to `jobs` threads; results stay indexed.
template <typename T>
std::vector<T> parallel_map(std::size_t n, int jobs, const std::function<T(std::size_t)>& work)
{
    std::vector<T> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                results[i] = work(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto threads = static_cast<std::size_t>(std::max(1, jobs));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::min(threads, n); ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    return results;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::uint64_t seed = 7;
    int scenes = 1;
    std::string objects = "3..8";
    int frag = 1;
    double drop = 0.0;
    std::string out;
    int jobs = 1;
};

int run_synth(const SynthArgs& a)
{
    const auto [lo, hi] = parse_range("--objects", a.objects);
    if (a.scenes < 1)
        throw UsageError("--scenes: must be at least 1");
    if (a.frag < 1)
        throw UsageError("--frag: must be at least 1");
    if (!(a.drop >= 0.0 && a.drop <= 1.0))
        throw UsageError("--drop: must lie in [0,1]");
    fs::create_directories(a.out);
    const auto n = static_cast<std::size_t>(a.scenes);
    const auto written = parallel_map<std::string>(n, a.jobs, [&](std::size_t i) {
        synth::SynthSpec spec;
        spec.seed = derive_seed(a.seed, i);
        SplitMix64 count_rng(derive_seed(a.seed, 1000000 + i));
        spec.n_objects = static_cast<int>(count_rng.integer(lo, hi));
        spec.fragments = a.frag;
        spec.drop = a.drop;
        char stem[32];
        std::snprintf(stem, sizeof stem, "scene_%03zu", i);
        synth::SynthScene s = synth::generate_scene(spec);
        s.scene.name = stem;
        return synth::write_synth_scene(s, a.out, stem).filename().string();
    });
    Record cfg = config_record("synth");
    cfg.set("seed", std::to_string(a.seed));
    cfg.set("scenes", a.scenes);
    cfg.set("objects", a.objects);
    cfg.set("frag", a.frag);
    cfg.set("drop", a.drop);
    std::vector<Record> index{cfg};
    for (const auto& m : written)
        index.push_back(Record("scene").set("manifest", m));
    write_records(fs::path(a.out) / "scenes.index", index);
    std::cout << "wrote " << written.size() << " scenes to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- discover

struct DiscoverArgs {
    std::vector<std::string> scenes;
    std::string deltas = "0.2,0.5,1,2";
    double nms_iou = 0.5;
    double nms_iou_3d = 0.5;
    double score_thresh = 0.6;
    double cluster_eps = 0.1;
    std::size_t cluster_min_pts = 5;
    std::size_t min_cluster = 20;
    double search_radius = kDefaultSearchRadiusPx;
    std::size_t budget = 0; ///< 0 means half of the assigned pixels
    std::string mode = "full";
    std::string out;
    int jobs = 1;
};

Record to_record(const DiscoveredBox& d, const std::string& scene)
{
    Record r = owd::to_record(d.box);
    r.set("scene", scene);
    r.set("label", static_cast<long long>(d.label_id));
    if (!d.deltas.empty())
        r.set("deltas", std::span<const double>(d.deltas));
    return r;
}

int run_discover(const DiscoverArgs& a)
{
    DiscoveryConfig config;
    config.schedule.deltas = parse_list("--deltas", a.deltas);
    try {
        config.schedule.validate();
    } catch (const InvariantError& e) {
        throw UsageError(std::string("--deltas: ") + e.what());
    }
    if (!(a.nms_iou >= 0.0 && a.nms_iou <= 1.0))
        throw UsageError("--nms-iou: must lie in [0,1]");
    if (!(a.nms_iou_3d >= 0.0 && a.nms_iou_3d <= 1.0))
        throw UsageError("--nms-iou-3d: must lie in [0,1]");
    if (!(a.cluster_eps > 0.0))
        throw UsageError("--cluster-eps: must be positive");
    if (a.mode != "full" && a.mode != "raw")
        throw UsageError("--mode: expected full or raw, got '" + a.mode + "'");
    config.nms_iou = a.nms_iou;
    config.nms_iou_3d = a.nms_iou_3d;
    config.score_threshold = a.score_thresh;
    config.search_radius_px = a.search_radius;
    config.cluster = ClusterParams{a.cluster_eps, a.cluster_min_pts, a.min_cluster};
    if (a.budget > 0)
        config.budget.n_point = a.budget;

    const auto manifests = expand_manifests(a.scenes);
    if (manifests.empty())
        throw UsageError("--scene: no manifests found");
    struct Result {
        std::string name;
        std::vector<DiscoveredBox> boxes;
    };
    const auto results = parallel_map<Result>(manifests.size(), a.jobs, [&](std::size_t i) {
        const Scene scene = load_scene(manifests[i]);
        return Result{scene.name, a.mode == "full" ? discover(scene, config) : discover_raw(scene, config.cluster)};
    });

    Record cfg = config_record("discover");
    cfg.set("deltas", std::span<const double>(config.schedule.deltas));
    cfg.set("nms_iou", a.nms_iou);
    cfg.set("nms_iou_3d", a.nms_iou_3d);
    cfg.set("score_thresh", a.score_thresh);
    cfg.set("cluster_eps", a.cluster_eps);
    cfg.set("cluster_min_pts", a.cluster_min_pts);
    cfg.set("min_cluster", a.min_cluster);
    cfg.set("search_radius", a.search_radius);
    cfg.set("budget", a.budget > 0 ? std::to_string(a.budget) : std::string("half"));
    cfg.set("mode", a.mode);
    cfg.set("scenes", manifests.size());
    std::vector<Record> records{cfg};
    std::size_t total = 0;
    for (const auto& r : results) {
        for (const auto& d : r.boxes)
            records.push_back(to_record(d, r.name));
        total += r.boxes.size();
    }
    write_records(a.out, records);
    std::cout << "wrote " << total << " boxes for " << results.size() << " scenes to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::vector<std::string> preds;
    std::vector<std::string> gts;
    double iou = 0.25;
    std::string split_ap = "none";
    std::string report;
};

int run_eval(const EvalArgs& a)
{
    if (!(a.iou > 0.0 && a.iou <= 1.0))
        throw UsageError("--iou: must lie in (0,1]");
    if (a.split_ap != "none" && a.split_ap != "ignore-other")
        throw UsageError("--split-ap: expected none or ignore-other, got '" + a.split_ap + "'");
    const auto manifests = expand_manifests(a.gts);
    if (manifests.empty())
        throw UsageError("--gt: no manifests found");

    std::vector<Scene> scenes;
    std::map<std::string, std::size_t> by_name;
    std::vector<std::string> gt_names;
    for (const auto& m : manifests) {
        scenes.push_back(load_scene(m));
        if (!by_name.emplace(scenes.back().name, scenes.size() - 1).second)
            throw UsageError("--gt: duplicate scene name '" + scenes.back().name + "'");
        gt_names.push_back(m.filename().string());
    }

    std::vector<std::vector<Box3D>> preds(scenes.size());
    std::vector<Record> upstream;
    std::vector<std::string> pred_names;
    for (const auto& p : a.preds) {
        pred_names.push_back(fs::path(p).filename().string());
        for (const Record& r : read_records(p)) {
            if (r.kind() == "config") {
                upstream.push_back(r);
                continue;
            }
            if (r.kind() != "box")
                continue;
            std::size_t target = 0;
            if (r.has("scene")) {
                const auto it = by_name.find(r.text("scene"));
                if (it == by_name.end())
                    throw UsageError("--pred: " + r.origin + ": scene '" + r.text("scene") +
                                     "' is not among the --gt manifests");
                target = it->second;
            } else if (scenes.size() != 1) {
                throw UsageError("--pred: " + r.origin + ": box without a scene field needs exactly one --gt");
            }
            preds[target].push_back(box_from_record(r));
        }
    }

    std::vector<EvalScene> eval_scenes;
    for (std::size_t i = 0; i < scenes.size(); ++i)
        eval_scenes.push_back(make_eval_scene(scenes[i], preds[i]));
    const EvalReport report = evaluate(eval_scenes, a.iou, a.split_ap == "ignore-other");

    Record cfg = config_record("eval");
    cfg.set("iou", a.iou);
    cfg.set("split_ap", a.split_ap);
    cfg.set("pred", join(pred_names));
    cfg.set("gt", join(gt_names));
    std::vector<Record> records{cfg};
    records.insert(records.end(), upstream.begin(), upstream.end());
    records.push_back(to_record(report));
    const std::string text = "# " + std::string(kToolName) + " " + kVersion + "\n" + format_records(records);
    write_file(a.report, text);
    std::cout << format_record(records.back()) << "\n";
    return 0;
}

// ---------------------------------------------------------------- moe

struct MoeCheckArgs {
    std::uint64_t seed = 0;
    int channels = 4;
    std::string grid = "4x4x4";
    double step = 1e-6;
    double tol = 1e-4;
    std::string out;
};

int run_moe_check(const MoeCheckArgs& a)
{
    if (a.channels < 1)
        throw UsageError("--channels: must be at least 1");
    if (!(a.step > 0.0))
        throw UsageError("--step: must be positive");
    const auto g = parse_grid("--grid", a.grid);
    const moe::CheckInstance inst = moe::make_check_instance(a.seed, a.channels, g[0], g[1], g[2]);
    const auto groups = moe::check_moe_gradients(inst.f_p, inst.f_i, inst.block, inst.upstream, a.step);
    bool ok = true;
    std::vector<Record> records;
    Record cfg = config_record("moe-check");
    cfg.set("seed", std::to_string(a.seed));
    cfg.set("channels", a.channels);
    cfg.set("grid", a.grid);
    cfg.set("step", a.step);
    cfg.set("tol", a.tol);
    records.push_back(cfg);
    for (const auto& gc : groups) {
        const bool pass = gc.max_rel_error < a.tol;
        ok = ok && pass;
        char line[160];
        std::snprintf(line, sizeof line, "%-16s n=%-6zu max_rel_error=%.3e %s", gc.name.c_str(), gc.size,
                      gc.max_rel_error, pass ? "PASS" : "FAIL");
        std::cout << line << "\n";
        Record r("group");
        r.set("name", gc.name);
        r.set("size", gc.size);
        r.set("max_rel_error", gc.max_rel_error);
        r.set("pass", std::string(pass ? "true" : "false"));
        records.push_back(r);
    }
    std::cout << (ok ? "moe-check: PASS" : "moe-check: FAIL") << "\n";
    if (!a.out.empty())
        write_records(a.out, records);
    return ok ? 0 : 2;
}

struct MoeDemoArgs {
    std::uint64_t seed = 0;
    int channels = 4;
    int grid = 6;
    int epochs = 30;
    double lr = 0.5;
};

int run_moe_demo(const MoeDemoArgs& a)
{
    if (a.channels < 1 || a.grid < 1 || a.epochs < 1)
        throw UsageError("--channels, --grid and --epochs must be positive");
    const auto losses = moe::train_objectness_demo(a.seed, a.channels, a.grid, a.epochs, a.lr);
    for (std::size_t e = 0; e < losses.size(); ++e)
        std::cout << "epoch " << e << " loss " << format_number(losses[e]) << "\n";
    return 0;
}

// ---------------------------------------------------------------- render

struct RenderArgs {
    std::string scene;
    std::vector<std::string> preds;
    std::string out;
};

int run_render(const RenderArgs& a)
{
    const Scene scene = load_scene(a.scene);
    std::vector<Box3D> preds;
    for (const auto& p : a.preds)
        for (const Record& r : read_records(p))
            if (r.kind() == "box" && (!r.has("scene") || r.text("scene") == scene.name))
                preds.push_back(box_from_record(r));
    const auto gts = ground_truth_boxes(scene);
    write_render(a.out, scene.cloud, gts, preds);
    std::cout << "wrote " << a.out << "\n";
    return 0;
}

} // namespace

std::vector<fs::path> expand_manifests(const std::vector<std::string>& inputs)
{
    std::vector<fs::path> out;
    for (const auto& in : inputs) {
        const fs::path p(in);
        if (fs::is_directory(p)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::directory_iterator(p))
                if (e.path().extension() == ".manifest")
                    found.push_back(e.path());
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else {
            out.push_back(p);
        }
    }
    return out;
}

int run(const std::vector<std::string>& args)
{
    CLI::App app{"Prompt-free 3D object discovery toolkit", kToolName};
    app.set_version_flag("--version", std::string(kToolName) + " " + kVersion);
    app.require_subcommand(1);

    SynthArgs sa;
    auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic scenes");
    synth_cmd->add_option("--seed", sa.seed, "Base seed")->capture_default_str();
    synth_cmd->add_option("--scenes", sa.scenes, "Number of scenes")->capture_default_str();
    synth_cmd->add_option("--objects", sa.objects, "Objects per scene, N or A..B")->capture_default_str();
    synth_cmd->add_option("--frag", sa.frag, "Fragments per object mask (1 = clean)")->capture_default_str();
    synth_cmd->add_option("--drop", sa.drop, "Fragment drop probability")->capture_default_str();
    synth_cmd->add_option("--jobs", sa.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    synth_cmd->add_option("--out", sa.out, "Output directory")->required();

    DiscoverArgs da;
    auto* disc_cmd = app.add_subcommand("discover", "Discover class-agnostic 3D boxes");
    disc_cmd->add_option("--scene", da.scenes, "Scene manifest or directory of manifests (repeatable)")
        ->required()
        ->check(CLI::ExistingPath);
    disc_cmd->add_option("--deltas", da.deltas, "Suppression radii in meters")->capture_default_str();
    disc_cmd->add_option("--nms-iou", da.nms_iou, "Cross-scale 2D NMS threshold")->capture_default_str();
    disc_cmd->add_option("--nms-iou-3d", da.nms_iou_3d, "Final 3D NMS threshold")->capture_default_str();
    disc_cmd->add_option("--score-thresh", da.score_thresh, "Fused score threshold")->capture_default_str();
    disc_cmd->add_option("--cluster-eps", da.cluster_eps, "DBSCAN radius in meters")->capture_default_str();
    disc_cmd->add_option("--cluster-min-pts", da.cluster_min_pts, "DBSCAN core size")->capture_default_str();
    disc_cmd->add_option("--min-cluster", da.min_cluster, "Smallest accepted cluster")->capture_default_str();
    disc_cmd->add_option("--search-radius", da.search_radius, "Pixel-point search radius")->capture_default_str();
    disc_cmd->add_option("--budget", da.budget, "Pixels per scale (0 = half of assigned)")->capture_default_str();
    disc_cmd->add_option("--mode", da.mode, "full or raw")->capture_default_str();
    disc_cmd->add_option("--jobs", da.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    disc_cmd->add_option("--out", da.out, "Output boxes file")->required();

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Class-agnostic AR/AP");
    eval_cmd->add_option("--pred", ea.preds, "Boxes file(s)")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--gt", ea.gts, "Scene manifest(s) or directories")->required()->check(CLI::ExistingPath);
    eval_cmd->add_option("--iou", ea.iou, "IoU threshold")->capture_default_str();
    eval_cmd->add_option("--split-ap", ea.split_ap, "none or ignore-other")->capture_default_str();
    eval_cmd->add_option("--report,--out", ea.report, "Report path")->required();

    MoeCheckArgs ma;
    auto* check_cmd = app.add_subcommand("moe-check", "Finite-difference check of the fusion block");
    check_cmd->add_option("--seed", ma.seed, "Instance seed")->capture_default_str();
    check_cmd->add_option("--channels", ma.channels, "Channels per modality")->capture_default_str();
    check_cmd->add_option("--grid", ma.grid, "Grid XxYxZ")->capture_default_str();
    check_cmd->add_option("--step", ma.step, "Central difference step")->capture_default_str();
    check_cmd->add_option("--tol", ma.tol, "Max relative error")->capture_default_str();
    check_cmd->add_option("--out", ma.out, "Optional report path");

    MoeDemoArgs md;
    auto* demo_cmd = app.add_subcommand("moe-demo", "Toy objectness fit with the fusion block");
    demo_cmd->add_option("--seed", md.seed, "Seed")->capture_default_str();
    demo_cmd->add_option("--channels", md.channels, "Channels per modality")->capture_default_str();
    demo_cmd->add_option("--grid", md.grid, "Cubic grid size")->capture_default_str();
    demo_cmd->add_option("--epochs", md.epochs, "Epochs")->capture_default_str();
    demo_cmd->add_option("--lr", md.lr, "Learning rate")->capture_default_str();

    RenderArgs ra;
    auto* render_cmd = app.add_subcommand("render", "Top-down SVG of a scene and boxes");
    render_cmd->add_option("--scene", ra.scene, "Scene manifest")->required()->check(CLI::ExistingFile);
    render_cmd->add_option("--pred", ra.preds, "Boxes file(s)")->check(CLI::ExistingFile);
    render_cmd->add_option("--out", ra.out, "Output SVG path")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth_cmd)
            return run_synth(sa);
        if (*disc_cmd)
            return run_discover(da);
        if (*eval_cmd)
            return run_eval(ea);
        if (*check_cmd)
            return run_moe_check(ma);
        if (*demo_cmd)
            return run_moe_demo(md);
        if (*render_cmd)
            return run_render(ra);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

int run(int argc, char** argv)
{
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i)
        args.emplace_back(argv[i]);
    return run(args);
}

} // namespace owd::cli
