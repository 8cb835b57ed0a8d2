// One line per acceptance criterion: "criterion N: PASS|FAIL <summary>".
// Usage: acceptance [--golden DIR] [--only N]... [--expect-fail N]...
// Exit status is 0 when every criterion passes, except that criteria listed
// with --expect-fail may fail (their line still reads FAIL).
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "owd/boxes.hpp"
#include "owd/discovery.hpp"
#include "owd/eval.hpp"
#include "owd/moe.hpp"
#include "owd/records.hpp"
#include "../reference/ref_boxes.hpp"
#include "../reference/ref_eval.hpp"
#include "../reference/ref_geometry.hpp"
#include "../reference/ref_sampling.hpp"
#include "../support/cli_runs.hpp"
#include "../support/instances.hpp"
#include "../support/tempdir.hpp"

using namespace owd;

namespace {

// Pinned tolerances and sizes.
constexpr int kSamplingInstances = 200;
constexpr int kSamplingMaxSide = 64;
constexpr double kSamplingSeconds = 30.0;
const std::vector<double> kPackingDeltas{0.2, 0.5, 1.0, 2.0};
constexpr int kRoundTripPoints = 10000;
constexpr int kRoundTripCameras = 20;
constexpr double kRoundTripTol = 1e-9;
constexpr int kGradSeeds = 10;
constexpr int kGradChannels = 4;
constexpr int kGradGrid = 4;
constexpr double kGradStep = 1e-6;
constexpr double kGradTol = 1e-4;
constexpr double kFaultDetect = 1e-2;
constexpr int kRouterEvals = 1000;
constexpr double kSimplexTol = 1e-12;
constexpr double kOneHotTol = 1e-12;
constexpr int kMetricInstances = 100;
constexpr double kMetricTol = 1e-12;
constexpr double kRecallSeconds = 60.0;

struct Verdict {
    bool pass = false;
    std::string summary;
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<ref::Selected> to_ref(const ScaleSelection& s)
{
    std::vector<ref::Selected> out;
    for (const auto& p : s)
        out.push_back({p.pixel.x, p.pixel.y, p.prior});
    return out;
}

bool same(const std::vector<ref::Selected>& a, const std::vector<ref::Selected>& b)
{
    if (a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].x != b[i].x || a[i].y != b[i].y || a[i].prior != b[i].prior)
            return false;
    return true;
}

Verdict sampling_oracle()
{
    const auto t0 = std::chrono::steady_clock::now();
    int single_mismatch = 0, multi_mismatch = 0;
    ScaleSchedule sched;
    sched.deltas = kPackingDeltas;
    for (int seed = 0; seed < kSamplingInstances; ++seed) {
        const auto c = inst::sampling_case(static_cast<std::uint64_t>(seed), kSamplingMaxSide);
        const auto layout = ref::layout_from(c.index, c.cloud);
        const std::size_t budget = c.budget.n_point ? *c.budget.n_point : ref::default_budget(layout);
        std::vector<std::vector<ref::Selected>> per;
        for (double d : sched.deltas) {
            per.push_back(ref::single_scale(c.prior, layout, d, budget));
            single_mismatch += !same(to_ref(sample_single_scale(c.prior, c.index, c.cloud, d, c.budget)), per.back());
        }
        const auto multi = sample_multi_scale(c.prior, c.index, c.cloud, sched, c.budget, c.labels, c.proposals, 0.5);
        bool ok = multi.per_scale.size() == per.size();
        for (std::size_t k = 0; ok && k < per.size(); ++k)
            ok = same(to_ref(multi.per_scale[k]), per[k]);
        std::vector<std::size_t> survivors;
        for (const auto& h : multi.survivors)
            survivors.push_back(h.proposal);
        ok = ok && survivors == ref::multi_scale_survivors(per, c.labels, c.proposals, 0.5);
        multi_mismatch += !ok;
    }
    const double secs = seconds_since(t0);
    return {single_mismatch == 0 && multi_mismatch == 0 && secs < kSamplingSeconds,
            std::to_string(kSamplingInstances) + " instances, single-scale mismatches " +
                std::to_string(single_mismatch) + ", multi-scale mismatches " + std::to_string(multi_mismatch) +
                ", " + fmt("%.1f", secs) + " s (limit " + fmt("%.0f", kSamplingSeconds) + " s)"};
}

Verdict packing()
{
    long violations = 0, pairs = 0;
    for (int seed = 0; seed < kSamplingInstances; ++seed) {
        const auto c = inst::sampling_case(static_cast<std::uint64_t>(seed), kSamplingMaxSide);
        for (double d : kPackingDeltas) {
            const auto s = sample_single_scale(c.prior, c.index, c.cloud, d, c.budget);
            for (std::size_t i = 0; i < s.size(); ++i)
                for (std::size_t j = 0; j < i; ++j) {
                    ++pairs;
                    const auto dist = pixel_distance_3d(s[i].pixel, s[j].pixel, c.index, c.cloud);
                    violations += !(dist && *dist >= d);
                }
        }
    }
    return {violations == 0 && pairs > 0,
            std::to_string(pairs) + " selected pairs, " + std::to_string(violations) + " closer than delta"};
}

Verdict projection_round_trip()
{
    SplitMix64 rng(3);
    double worst = 0.0;
    long inconsistent = 0, visible = 0;
    for (int c = 0; c < kRoundTripCameras; ++c) {
        const auto cam = inst::random_camera(rng);
        PointCloud cloud;
        for (int i = 0; i < kRoundTripPoints; ++i) {
            // Mostly in front of the camera, some behind or outside the frame.
            const double u = rng.uniform(-0.2, 1.2) * cam.width(), v = rng.uniform(-0.2, 1.2) * cam.height();
            cloud.points.push_back(cam.back_project(u, v, rng.uniform(-1.0, 20.0)));
        }
        const auto proj = project_points(cloud, cam);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const auto r = ref::project(cloud.points[i], cam);
            inconsistent += proj[i].visible != r.visible;
            if (!proj[i].visible)
                continue;
            ++visible;
            inconsistent += !cam.in_image(proj[i].u, proj[i].v) || !(proj[i].depth > kMinDepth);
            worst = std::max(worst, (cam.back_project(proj[i].u, proj[i].v, proj[i].depth) - cloud.points[i]).norm());
        }
        // Pixel ownership must only ever use visible points.
        const auto index = build_pixel_point_index(cloud, cam);
        for (std::size_t p = 0; p < index.pixel_count(); ++p)
            if (const auto o = index.owner_at(p))
                inconsistent += !proj[*o].visible;
    }
    return {worst < kRoundTripTol && inconsistent == 0,
            std::to_string(visible) + " visible of " + std::to_string(kRoundTripPoints * kRoundTripCameras) +
                " points, max error " + fmt("%.3e", worst) + " m, " + std::to_string(inconsistent) +
                " culling inconsistencies"};
}

double dot(const moe::VoxelTensor& a, const moe::VoxelTensor& b)
{
    return std::inner_product(a.values.begin(), a.values.end(), b.values.begin(), 0.0);
}

Verdict moe_gradients(std::ostream& log)
{
    double worst = 0.0;
    std::string worst_where;
    int failing_seeds = 0;
    for (int seed = 0; seed < kGradSeeds; ++seed) {
        const auto inst = moe::make_check_instance(static_cast<std::uint64_t>(seed), kGradChannels, kGradGrid,
                                                   kGradGrid, kGradGrid);
        double seed_worst = 0.0;
        std::string seed_group;
        for (const auto& g : moe::check_moe_gradients(inst.f_p, inst.f_i, inst.block, inst.upstream, kGradStep)) {
            if (g.max_rel_error > seed_worst) {
                seed_worst = g.max_rel_error;
                seed_group = g.name;
            }
        }
        failing_seeds += seed_worst >= kGradTol;
        log << "  seed " << seed << ": worst " << seed_group << " rel " << fmt("%.3e", seed_worst) << "\n";
        if (seed_worst > worst) {
            worst = seed_worst;
            worst_where = seed_group + " (seed " + std::to_string(seed) + ")";
        }
    }

    // Fault injection: flip the sign of the largest analytic entry of each group.
    auto inst = moe::make_check_instance(0, kGradChannels, 2, 2, 2);
    moe::MoECache cache;
    moe::moe_forward(inst.f_p, inst.f_i, inst.block, &cache);
    auto grads = moe::moe_backward(cache, inst.block, inst.upstream);
    auto loss = [&] { return dot(inst.upstream, moe::moe_forward(inst.f_p, inst.f_i, inst.block)); };
    auto params = inst.block.parameter_groups();
    auto analytic = grads.params.parameter_groups();
    double weakest_detection = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < params.size(); ++k) {
        std::vector<double> wrong(analytic[k].values.begin(), analytic[k].values.end());
        std::size_t big = 0;
        for (std::size_t i = 1; i < wrong.size(); ++i)
            if (std::abs(wrong[i]) > std::abs(wrong[big]))
                big = i;
        if (wrong[big] == 0.0)
            continue;
        wrong[big] = -wrong[big];
        weakest_detection = std::min(weakest_detection, moe::grad_check(loss, params[k].values, wrong, kGradStep).max_rel_error);
    }
    const bool detected = weakest_detection > kFaultDetect;
    return {failing_seeds == 0 && detected,
            std::to_string(kGradSeeds - failing_seeds) + "/" + std::to_string(kGradSeeds) + " seeds within " +
                fmt("%.0e", kGradTol) + " at step " + fmt("%.0e", kGradStep) + ", worst " + fmt("%.3e", worst) +
                " in " + worst_where + "; fault injection " + (detected ? "detected" : "MISSED") + " (min " +
                fmt("%.3e", weakest_detection) + ")"};
}

Verdict gate_simplex()
{
    SplitMix64 rng(5);
    double worst_sum = 0.0, worst_onehot = 0.0;
    for (int t = 0; t < kRouterEvals; ++t) {
        const int c = static_cast<int>(rng.integer(1, 4));
        const int n = static_cast<int>(rng.integer(1, 4));
        moe::RouterParams p(2 * c, static_cast<int>(rng.integer(1, 8)));
        const double scale = rng.uniform(0.1, 5.0);
        for (auto* v : {&p.conv.weight, &p.conv.bias, &p.fc_weight, &p.fc_bias})
            for (double& x : *v)
                x = rng.uniform(-scale, scale);
        moe::VoxelTensor x(2 * c, n, n, n);
        for (double& v : x.values)
            v = rng.uniform(-1, 1);
        const auto g = moe::route(x, p);
        worst_sum = std::max(worst_sum, std::abs(g.p[0] + g.p[1] + g.p[2] - 1.0));
    }
    for (int t = 0; t < 20; ++t) {
        moe::MoEBlock blk = moe::MoEBlock::create(3, 4);
        blk.init_uniform(static_cast<std::uint64_t>(t), 0.5);
        moe::VoxelTensor fp(3, 3, 3, 3), fi(3, 3, 3, 3);
        for (double& v : fp.values)
            v = rng.uniform(-1, 1);
        for (double& v : fi.values)
            v = rng.uniform(-1, 1);
        const auto fm = moe::concat_modalities(fp, fi);
        const moe::VoxelTensor* in[3] = {&fp, &fi, &fm};
        const moe::ExpertParams* ex[3] = {&blk.expert_p, &blk.expert_i, &blk.expert_m};
        for (int k = 0; k < 3; ++k) {
            moe::RouterGate g;
            g.p = {0, 0, 0};
            g.p[k] = 1.0;
            const auto fused = moe::fuse(g, fp, fi, fm, blk.expert_p, blk.expert_i, blk.expert_m);
            const auto single = moe::expert_forward(*in[k], *ex[k]);
            for (std::size_t i = 0; i < fused.values.size(); ++i)
                worst_onehot = std::max(worst_onehot, std::abs(fused.values[i] - single.values[i]));
        }
    }
    return {worst_sum < kSimplexTol && worst_onehot < kOneHotTol,
            std::to_string(kRouterEvals) + " gates, max |sum-1| " + fmt("%.3e", worst_sum) +
                "; one-hot max deviation " + fmt("%.3e", worst_onehot)};
}

Verdict metric_oracles()
{
    SplitMix64 rng(6);
    double worst = 0.0;
    int presence = 0;
    auto diff = [&](const std::optional<double>& a, const std::optional<double>& b) {
        if (a.has_value() != b.has_value()) {
            ++presence;
            return;
        }
        if (a)
            worst = std::max(worst, std::abs(*a - *b));
    };
    for (int t = 0; t < kMetricInstances; ++t) {
        std::vector<EvalScene> scenes;
        for (long long k = rng.integer(1, 4); k > 0; --k)
            scenes.push_back(inst::eval_scene(rng, 10));
        const double thr = t % 2 ? 0.25 : rng.uniform(0.1, 0.7);
        diff(average_recall(scenes, thr), ref::recall(scenes, thr));
        diff(average_recall(scenes, thr, SplitFilter::base), ref::recall(scenes, thr, Split::base));
        diff(average_recall(scenes, thr, SplitFilter::novel), ref::recall(scenes, thr, Split::novel));
        diff(average_precision(scenes, thr), ref::precision(scenes, thr));
        for (Split s : {Split::base, Split::novel})
            diff(average_precision_ignore_other(scenes, thr, s), ref::precision_ignore_other(scenes, thr, s));
    }
    const Box3D a = Box3D::from_corners({0, 0, 0}, {1, 1, 1}, 1.0), b = Box3D::from_corners({0.5, 0, 0}, {1.5, 1, 1}, 1.0);
    const bool cube = iou_3d(a, b) == 1.0 / 3.0;
    EvalScene s;
    s.gts = {a, Box3D::from_corners({5, 5, 0}, {6, 6, 1}, 1.0)};
    s.splits = {Split::novel, Split::novel};
    s.preds = {a};
    const bool ar_half = *average_recall(std::vector<EvalScene>{s}, 0.25) == 0.5;
    return {worst <= kMetricTol && presence == 0 && cube && ar_half,
            std::to_string(kMetricInstances) + " instances, max deviation " + fmt("%.3e", worst) + ", " +
                std::to_string(presence) + " presence mismatches; offset cubes IoU " + fmt("%.17g", iou_3d(a, b)) +
                ", 2-GT/1-TP AR " + (ar_half ? "0.5" : "wrong")};
}

double read_floor(const std::filesystem::path& golden)
{
    const auto text = read_file(golden / "recall_floor.txt");
    return std::stod(text);
}

Verdict end_to_end_recall(const std::filesystem::path& golden)
{
    const double floor = read_floor(golden);
    inst::TempDir dir("accept_recall");
    const auto t0 = std::chrono::steady_clock::now();
    inst::cli(inst::concat({"synth", "--out", dir.str("scenes")}, inst::kRecallScenes));
    inst::cli({"discover", "--scene", dir.str("scenes"), "--out", dir.str("boxes.txt")});
    inst::cli({"eval", "--pred", dir.str("boxes.txt"), "--gt", dir.str("scenes"), "--report", dir.str("report.txt")});
    const double secs = seconds_since(t0);
    const Record rep = read_records(dir.str("report.txt")).back();
    const double ar = rep.number("ar_all");
    return {ar >= floor && secs < kRecallSeconds, "AR@0.25 " + format_number(ar) + " vs committed floor " +
                                                       format_number(floor) + " over " + rep.text("gt_all") +
                                                       " GT, " + fmt("%.1f", secs) + " s"};
}

Verdict fragmentation_trend()
{
    inst::TempDir dir("accept_frag");
    inst::cli(inst::concat({"synth", "--out", dir.str("scenes")}, inst::kFragmentedScenes));
    inst::cli({"discover", "--scene", dir.str("scenes"), "--out", dir.str("full.txt")});
    inst::cli({"discover", "--scene", dir.str("scenes"), "--mode", "raw", "--out", dir.str("raw.txt")});
    inst::cli({"eval", "--pred", dir.str("full.txt"), "--gt", dir.str("scenes"), "--report", dir.str("full_r.txt")});
    inst::cli({"eval", "--pred", dir.str("raw.txt"), "--gt", dir.str("scenes"), "--report", dir.str("raw_r.txt")});
    const double full = read_records(dir.str("full_r.txt")).back().number("ap_all");
    const double raw = read_records(dir.str("raw_r.txt")).back().number("ap_all");
    return {full > raw, "AP@0.25 full pipeline " + fmt("%.4f", full) + " vs raw proposals " + fmt("%.4f", raw)};
}

Verdict determinism(const std::filesystem::path& golden)
{
    const std::string want = read_file(golden / "seed7_report.txt");
    inst::TempDir dir("accept_det");
    std::filesystem::create_directories(dir.path() / "a");
    std::filesystem::create_directories(dir.path() / "b");
    std::filesystem::create_directories(dir.path() / "c");
    const std::string r1 = read_file(inst::golden_pipeline(dir.str("a"), "1"));
    const std::string r2 = read_file(inst::golden_pipeline(dir.str("b"), "1"));
    const std::string r8 = read_file(inst::golden_pipeline(dir.str("c"), "8"));
    const bool golden_ok = r1 == want, repeat_ok = r1 == r2, jobs_ok = r1 == r8;
    return {golden_ok && repeat_ok && jobs_ok, std::string("golden ") + (golden_ok ? "identical" : "DIFFERS") +
                                                   ", repeat " + (repeat_ok ? "identical" : "DIFFERS") +
                                                   ", --jobs 1 vs 8 " + (jobs_ok ? "identical" : "DIFFERS")};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance checks"};
    std::string golden = OWD_GOLDEN_DIR;
    std::vector<int> only, expect_fail;
    bool verbose = false;
    app.add_option("--golden", golden, "Directory with recall_floor.txt and seed7_report.txt");
    app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 9));
    app.add_option("--expect-fail", expect_fail, "Criteria known to fail")->check(CLI::Range(1, 9));
    app.add_flag("-v,--verbose", verbose, "Per-seed diagnostics");
    CLI11_PARSE(app, argc, argv);

    std::ostringstream log;
    const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
        {1, sampling_oracle},
        {2, packing},
        {3, projection_round_trip},
        {4, [&] { return moe_gradients(log); }},
        {5, gate_simplex},
        {6, metric_oracles},
        {7, [&] { return end_to_end_recall(golden); }},
        {8, fragmentation_trend},
        {9, [&] { return determinism(golden); }},
    };
    const std::set<int> selected(only.begin(), only.end()), tolerated(expect_fail.begin(), expect_fail.end());
    int unexpected = 0;
    for (const auto& [id, fn] : criteria) {
        if (!selected.empty() && !selected.count(id))
            continue;
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << " " << v.summary;
        if (!v.pass && tolerated.count(id))
            std::cout << " [known failure]";
        std::cout << "\n";
        if (verbose && !log.str().empty()) {
            std::cout << log.str();
            log.str("");
        }
        std::cout.flush();
        unexpected += !v.pass && !tolerated.count(id);
    }
    return unexpected == 0 ? 0 : 1;
}
