#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "owd/boxes.hpp"
#include "owd/formats.hpp"
#include "owd/records.hpp"

namespace owd {

struct MatchResult {
    std::vector<std::optional<std::size_t>> gt_match; ///< matched prediction per GT
    std::vector<bool> pred_tp;
    std::vector<double> pred_iou; ///< IoU with the matched GT, 0 for false positives
};

/// Predictions in descending score order (ties: lower index) each claim the
/// unmatched GT of highest IoU at or above the threshold (ties: lower GT index).
MatchResult match_greedy(std::span<const Box3D> preds, std::span<const Box3D> gts, double iou_threshold);

/// One evaluated view: class-agnostic predictions and split-tagged ground truth.
struct EvalScene {
    std::vector<Box3D> preds;
    std::vector<Box3D> gts;
    std::vector<Split> splits; ///< parallel to gts
};

enum class SplitFilter { all, base, novel };

/// Matched GT over total GT in the split, pooled over scenes. Predictions are
/// never split-filtered. nullopt when the split holds no GT.
std::optional<double> average_recall(std::span<const EvalScene> scenes, double iou_threshold,
                                     SplitFilter split = SplitFilter::all);

/// All-point interpolated AP over predictions pooled across scenes. nullopt
/// when there is no GT.
std::optional<double> average_precision(std::span<const EvalScene> scenes, double iou_threshold);

/// AP for one split where GT of the other split is ignored: predictions that
/// miss every counted GT but overlap an ignored GT at the threshold are
/// neither true nor false positives.
std::optional<double> average_precision_ignore_other(std::span<const EvalScene> scenes, double iou_threshold,
                                                     Split split);

struct EvalReport {
    double iou_threshold = 0.25;
    std::optional<double> ar_all, ar_base, ar_novel;
    std::optional<double> ap_all, ap_base, ap_novel;
    std::size_t scenes = 0;
    std::size_t gt_all = 0, gt_base = 0, gt_novel = 0;
    std::size_t preds = 0;
};

EvalReport evaluate(std::span<const EvalScene> scenes, double iou_threshold, bool split_ap);

/// `kind:report` record; absent metrics are written as "absent".
Record to_record(const EvalReport& report);

/// Pairs a scene's annotations (objectness 1 only) with predictions.
EvalScene make_eval_scene(const Scene& scene, std::vector<Box3D> preds);

} // namespace owd
