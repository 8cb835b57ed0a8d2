// Regenerates tests/golden/. The recall floor comes from the reference
// pipeline and reference metrics, not from the library; the determinism
// report is the CLI's own output, cross-checked against the same oracles
// before it is frozen.
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "owd/eval.hpp"
#include "owd/records.hpp"
#include "../reference/ref_eval.hpp"
#include "../reference/ref_pipeline.hpp"
#include "../support/cli_runs.hpp"
#include "../support/tempdir.hpp"

using namespace owd;

namespace {

std::vector<EvalScene> oracle_scenes(const std::string& dir)
{
    std::vector<EvalScene> out;
    for (const auto& m : cli::expand_manifests({dir})) {
        const Scene s = load_scene(m);
        std::vector<Box3D> preds;
        for (const auto& f : ref::discover(s, DiscoveryConfig{}))
            preds.push_back(f.box);
        out.push_back(make_eval_scene(s, preds));
    }
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    if (argc != 2) {
        std::cerr << "usage: make_goldens <golden-dir>\n";
        return 1;
    }
    const std::filesystem::path golden = argv[1];
    std::filesystem::create_directories(golden);
    inst::TempDir tmp("goldens");

    const std::string recall_dir = tmp.str("recall");
    inst::cli(inst::concat({"synth", "--out", recall_dir}, inst::kRecallScenes));
    const auto ar = ref::recall(oracle_scenes(recall_dir), 0.25);
    if (!ar) {
        std::cerr << "no ground truth\n";
        return 1;
    }
    write_file(golden / "recall_floor.txt", format_number(*ar) + "\n");
    std::cout << "recall floor " << format_number(*ar) << "\n";

    const std::string report = inst::golden_pipeline(tmp.str("golden"), "1");
    const Record rep = read_records(report).back();
    const auto scenes = oracle_scenes(tmp.str("golden/scenes"));
    const double want_ar = *ref::recall(scenes, 0.25), want_ap = *ref::precision(scenes, 0.25);
    if (std::abs(rep.number("ar_all") - want_ar) > 1e-12 || std::abs(rep.number("ap_all") - want_ap) > 1e-12) {
        std::cerr << "CLI report disagrees with the reference pipeline: ar " << rep.number("ar_all") << " vs "
                  << want_ar << ", ap " << rep.number("ap_all") << " vs " << want_ap << "\n";
        return 1;
    }
    std::filesystem::copy_file(report, golden / "seed7_report.txt", std::filesystem::copy_options::overwrite_existing);
    std::cout << "golden report ar_all " << rep.text("ar_all") << " ap_all " << rep.text("ap_all") << "\n";
    return 0;
}
