#include "owd/eval.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace owd {

namespace {

std::vector<std::size_t> score_order(std::span<const Box3D> preds)
{
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
    return order;
}

bool in_split(Split s, SplitFilter f)
{
    return f == SplitFilter::all || (f == SplitFilter::base) == (s == Split::base);
}

struct Detection {
    double score;
    bool tp;
};

/// All-point interpolation: area under the monotone precision envelope.
/// Equal scores form one operating point, so pooling order cannot matter.
double integrate_pr(std::vector<Detection> dets, std::size_t n_gt)
{
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<double> recall, precision;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        (dets[i].tp ? tp : fp) += 1;
        if (i + 1 < dets.size() && dets[i + 1].score == dets[i].score)
            continue;
        recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    for (std::size_t i = precision.size(); i-- > 1;)
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
        if (recall[i] > prev_recall) {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
    }
    return ap;
}

void check_threshold(double t)
{
    if (!(t > 0.0 && t <= 1.0))
        throw std::invalid_argument("IoU threshold must lie in (0, 1]");
}

} // namespace

MatchResult match_greedy(std::span<const Box3D> preds, std::span<const Box3D> gts, double iou_threshold)
{
    check_threshold(iou_threshold);
    MatchResult m;
    m.gt_match.assign(gts.size(), std::nullopt);
    m.pred_tp.assign(preds.size(), false);
    m.pred_iou.assign(preds.size(), 0.0);
    for (std::size_t p : score_order(preds)) {
        std::optional<std::size_t> best;
        double best_iou = 0.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (m.gt_match[g])
                continue;
            const double iou = iou_3d(preds[p], gts[g]);
            if (iou >= iou_threshold && (!best || iou > best_iou)) {
                best = g;
                best_iou = iou;
            }
        }
        if (best) {
            m.gt_match[*best] = p;
            m.pred_tp[p] = true;
            m.pred_iou[p] = best_iou;
        }
    }
    return m;
}

std::optional<double> average_recall(std::span<const EvalScene> scenes, double iou_threshold, SplitFilter split)
{
    std::size_t total = 0, matched = 0;
    for (const EvalScene& s : scenes) {
        const MatchResult m = match_greedy(s.preds, s.gts, iou_threshold);
        for (std::size_t g = 0; g < s.gts.size(); ++g) {
            if (!in_split(s.splits[g], split))
                continue;
            ++total;
            matched += m.gt_match[g] ? 1 : 0;
        }
    }
    if (total == 0)
        return std::nullopt;
    return static_cast<double>(matched) / static_cast<double>(total);
}

std::optional<double> average_precision(std::span<const EvalScene> scenes, double iou_threshold)
{
    std::vector<Detection> dets;
    std::size_t n_gt = 0;
    for (const EvalScene& s : scenes) {
        const MatchResult m = match_greedy(s.preds, s.gts, iou_threshold);
        n_gt += s.gts.size();
        for (std::size_t p : score_order(s.preds))
            dets.push_back({s.preds[p].score, m.pred_tp[p]});
    }
    if (n_gt == 0)
        return std::nullopt;
    return integrate_pr(std::move(dets), n_gt);
}

std::optional<double> average_precision_ignore_other(std::span<const EvalScene> scenes, double iou_threshold,
                                                     Split split)
{
    std::vector<Detection> dets;
    std::size_t n_gt = 0;
    for (const EvalScene& s : scenes) {
        std::vector<Box3D> counted, ignored;
        for (std::size_t g = 0; g < s.gts.size(); ++g)
            (s.splits[g] == split ? counted : ignored).push_back(s.gts[g]);
        n_gt += counted.size();
        const MatchResult m = match_greedy(s.preds, counted, iou_threshold);
        for (std::size_t p : score_order(s.preds)) {
            if (!m.pred_tp[p]) {
                const bool overlaps_ignored = std::any_of(ignored.begin(), ignored.end(), [&](const Box3D& g) {
                    return iou_3d(s.preds[p], g) >= iou_threshold;
                });
                if (overlaps_ignored)
                    continue;
            }
            dets.push_back({s.preds[p].score, m.pred_tp[p]});
        }
    }
    if (n_gt == 0)
        return std::nullopt;
    return integrate_pr(std::move(dets), n_gt);
}

EvalReport evaluate(std::span<const EvalScene> scenes, double iou_threshold, bool split_ap)
{
    EvalReport r;
    r.iou_threshold = iou_threshold;
    r.scenes = scenes.size();
    for (const EvalScene& s : scenes) {
        r.preds += s.preds.size();
        r.gt_all += s.gts.size();
        for (Split sp : s.splits)
            (sp == Split::base ? r.gt_base : r.gt_novel) += 1;
    }
    r.ar_all = average_recall(scenes, iou_threshold, SplitFilter::all);
    r.ar_base = average_recall(scenes, iou_threshold, SplitFilter::base);
    r.ar_novel = average_recall(scenes, iou_threshold, SplitFilter::novel);
    r.ap_all = average_precision(scenes, iou_threshold);
    if (split_ap) {
        r.ap_base = average_precision_ignore_other(scenes, iou_threshold, Split::base);
        r.ap_novel = average_precision_ignore_other(scenes, iou_threshold, Split::novel);
    }
    return r;
}

Record to_record(const EvalReport& report)
{
    Record rec("report");
    auto metric = [&](const char* key, const std::optional<double>& v) {
        if (v)
            rec.set(key, *v);
        else
            rec.set(key, std::string("absent"));
    };
    metric("ar_all", report.ar_all);
    metric("ar_base", report.ar_base);
    metric("ar_novel", report.ar_novel);
    metric("ap_all", report.ap_all);
    metric("ap_base", report.ap_base);
    metric("ap_novel", report.ap_novel);
    rec.set("iou", report.iou_threshold);
    rec.set("scenes", report.scenes);
    rec.set("gt_all", report.gt_all);
    rec.set("gt_base", report.gt_base);
    rec.set("gt_novel", report.gt_novel);
    rec.set("preds", report.preds);
    return rec;
}

EvalScene make_eval_scene(const Scene& scene, std::vector<Box3D> preds)
{
    EvalScene e;
    e.preds = std::move(preds);
    for (const Annotation& a : scene.annotations) {
        if (a.objectness != 1)
            continue;
        e.gts.push_back(a.box);
        e.splits.push_back(a.split);
    }
    return e;
}

} // namespace owd
