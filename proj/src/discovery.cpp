#include "owd/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

namespace owd {

namespace {

struct CellKey {
    std::int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellHash {
    std::size_t operator()(const CellKey& k) const noexcept
    {
        std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
        h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
        h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
        return static_cast<std::size_t>(h);
    }
};

/// Uniform hash grid with cell size equal to the query radius, so every
/// neighbor within the radius lives in the 27 surrounding cells.
class RadiusGrid {
public:
    RadiusGrid(double cell, std::span<const Vec3> points, std::span<const std::size_t> ids)
        : cell_(cell), points_(points)
    {
        for (std::size_t id : ids)
            cells_[key(points[id])].push_back(id);
    }

    template <typename Fn>
    void for_each_candidate(const Vec3& p, Fn&& fn) const
    {
        const CellKey c = key(p);
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dz = -1; dz <= 1; ++dz) {
                    const auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == cells_.end())
                        continue;
                    for (std::size_t id : it->second)
                        fn(id);
                }
    }

private:
    CellKey key(const Vec3& p) const
    {
        return {static_cast<std::int64_t>(std::floor(p.x() / cell_)),
                static_cast<std::int64_t>(std::floor(p.y() / cell_)),
                static_cast<std::int64_t>(std::floor(p.z() / cell_))};
    }

    double cell_;
    std::span<const Vec3> points_;
    std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> cells_;
};

void require_same_dims(const PriorRaster& a, const PriorRaster& b)
{
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw InvariantError("prior rasters: dimension mismatch");
}

} // namespace

void ScaleSchedule::validate() const
{
    if (deltas.empty())
        throw InvariantError("scale schedule: at least one delta required");
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (!(deltas[i] > 0.0) || !std::isfinite(deltas[i]))
            throw InvariantError("scale schedule: deltas must be positive and finite");
        if (i > 0 && !(deltas[i] > deltas[i - 1]))
            throw InvariantError("scale schedule: deltas must be strictly ascending");
    }
}

std::size_t SamplingBudget::resolve(const PixelPointIndex& index) const
{
    if (n_point)
        return *n_point;
    return (index.assigned_count() + 1) / 2;
}

PriorRaster normalize_min_max(const PriorRaster& raster)
{
    PriorRaster out = raster;
    if (raster.values.empty())
        return out;
    const auto [lo_it, hi_it] = std::minmax_element(raster.values.begin(), raster.values.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    for (float& v : out.values)
        v = hi > lo ? static_cast<float>((static_cast<double>(v) - lo) / (hi - lo)) : 1.0f;
    return out;
}

PriorRaster combine_priors(const PriorRaster& iou_map, const PriorRaster& attention_map)
{
    require_same_dims(iou_map, attention_map);
    const PriorRaster a = normalize_min_max(iou_map);
    const PriorRaster b = normalize_min_max(attention_map);
    PriorRaster out = a;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = static_cast<float>(static_cast<double>(a.values[i]) * static_cast<double>(b.values[i]));
    return out;
}

ScaleSelection sample_single_scale(const PriorRaster& prior, const PixelPointIndex& index,
                                   const PointCloud& cloud, double delta, const SamplingBudget& budget)
{
    if (prior.width != static_cast<std::uint32_t>(index.width()) ||
        prior.height != static_cast<std::uint32_t>(index.height()))
        throw InvariantError("sample_single_scale: prior and index dimensions differ");
    if (!(delta > 0.0))
        throw InvariantError("sample_single_scale: delta must be positive");

    const std::size_t limit = budget.resolve(index);
    std::vector<std::size_t> assigned;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < index.pixel_count(); ++i) {
        if (!index.owner_at(i))
            continue;
        assigned.push_back(i);
        if (prior.values[i] > 0.0f)
            candidates.push_back(i);
    }
    // Suppression only ever zeroes values, so the relative order of the
    // surviving pixels is fixed up front: descending prior, then row-major.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t l, std::size_t r) { return prior.values[l] > prior.values[r]; });

    // Grid over pixel ids keyed by their owning point.
    std::vector<Vec3> pixel_points(index.pixel_count(), Vec3::Zero());
    for (std::size_t i : assigned)
        pixel_points[i] = cloud.points[*index.owner_at(i)];
    const RadiusGrid grid(delta, pixel_points, assigned);

    ScaleSelection selected;
    std::vector<char> suppressed(index.pixel_count(), 0);
    for (std::size_t i : candidates) {
        if (selected.size() >= limit)
            break;
        if (suppressed[i])
            continue;
        const int w = index.width();
        selected.push_back({Pixel{static_cast<int>(i % w), static_cast<int>(i / w)}, prior.values[i]});
        const Vec3& source = pixel_points[i];
        suppressed[i] = 1;
        grid.for_each_candidate(source, [&](std::size_t j) {
            if (!suppressed[j] && distance_3d(source, pixel_points[j]) < delta)
                suppressed[j] = 1;
        });
    }
    return selected;
}

std::vector<ProposalHit> propose_boxes(std::span<const ScaleSelection> selections, const LabelRaster& labels,
                                       std::span<const MaskProposal> proposals)
{
    std::unordered_map<std::uint32_t, std::size_t> by_label;
    for (std::size_t i = 0; i < proposals.size(); ++i)
        by_label.emplace(proposals[i].label_id, i);

    std::vector<ProposalHit> hits;
    std::unordered_map<std::size_t, std::size_t> slot;
    auto record = [&](std::size_t proposal, std::size_t scale, Pixel px) {
        auto [it, fresh] = slot.emplace(proposal, hits.size());
        if (fresh) {
            hits.push_back({proposal, {scale}, px});
            return;
        }
        auto& scales = hits[it->second].scales;
        if (scales.back() != scale)
            scales.push_back(scale);
    };

    for (std::size_t s = 0; s < selections.size(); ++s) {
        for (const SelectedPixel& sel : selections[s]) {
            const std::uint16_t label = labels.at(sel.pixel.x, sel.pixel.y);
            if (label == 0)
                continue;
            const auto it = by_label.find(label);
            if (it == by_label.end())
                continue;
            record(it->second, s, sel.pixel);
            if (const auto& parent = proposals[it->second].parent) {
                const auto pit = by_label.find(*parent);
                if (pit != by_label.end())
                    record(pit->second, s, sel.pixel);
            }
        }
    }
    return hits;
}

SelectionSet sample_multi_scale(const PriorRaster& prior, const PixelPointIndex& index, const PointCloud& cloud,
                                const ScaleSchedule& schedule, const SamplingBudget& budget,
                                const LabelRaster& labels, std::span<const MaskProposal> proposals,
                                double nms_iou)
{
    schedule.validate();
    SelectionSet set;
    set.deltas = schedule.deltas;
    for (double delta : schedule.deltas)
        set.per_scale.push_back(sample_single_scale(prior, index, cloud, delta, budget));

    const auto hits = propose_boxes(set.per_scale, labels, proposals);
    std::vector<Box2D> boxes;
    boxes.reserve(hits.size());
    for (const ProposalHit& h : hits) {
        Box2D b = proposals[h.proposal].box2d;
        b.score = fuse_scores(proposals[h.proposal]);
        boxes.push_back(b);
    }
    for (std::size_t k : nms_indices(boxes, nms_iou))
        set.survivors.push_back(hits[k]);
    return set;
}

double fuse_scores(const MaskProposal& p)
{
    return p.sam_iou * p.objectness_2d;
}

std::vector<MaskProposal> filter_proposals(std::span<const MaskProposal> proposals, double threshold)
{
    std::vector<MaskProposal> out;
    for (const MaskProposal& p : proposals)
        if (fuse_scores(p) >= threshold)
            out.push_back(p);
    return out;
}

std::vector<ProposalHit> filter_proposals(std::span<const ProposalHit> hits,
                                          std::span<const MaskProposal> proposals, double threshold)
{
    std::vector<ProposalHit> out;
    for (const ProposalHit& h : hits)
        if (fuse_scores(proposals[h.proposal]) >= threshold)
            out.push_back(h);
    return out;
}

std::vector<int> dbscan(std::span<const Vec3> points, double eps, std::size_t min_pts)
{
    constexpr int kUnvisited = -2;
    constexpr int kNoise = -1;
    std::vector<int> label(points.size(), kUnvisited);
    if (points.empty())
        return label;

    std::vector<std::size_t> ids(points.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    const RadiusGrid grid(eps, points, ids);
    auto neighbors = [&](std::size_t i) {
        std::vector<std::size_t> out;
        grid.for_each_candidate(points[i], [&](std::size_t j) {
            if (distance_3d(points[i], points[j]) <= eps)
                out.push_back(j);
        });
        std::sort(out.begin(), out.end());
        return out;
    };

    int next = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (label[i] != kUnvisited)
            continue;
        auto seeds = neighbors(i);
        if (seeds.size() < min_pts) {
            label[i] = kNoise;
            continue;
        }
        const int cluster = next++;
        label[i] = cluster;
        for (std::size_t k = 0; k < seeds.size(); ++k) {
            const std::size_t q = seeds[k];
            if (label[q] == kNoise)
                label[q] = cluster;
            if (label[q] != kUnvisited)
                continue;
            label[q] = cluster;
            const auto more = neighbors(q);
            if (more.size() >= min_pts)
                seeds.insert(seeds.end(), more.begin(), more.end());
        }
    }
    return label;
}

std::optional<Box3D> lift_box_2d_to_3d(const Box2D& box2d, const PointCloud& cloud, const CameraModel& cam,
                                       const ClusterParams& params)
{
    Box2D clamped = box2d;
    clamped.x_min = std::clamp(box2d.x_min, 0.0, static_cast<double>(cam.width()));
    clamped.x_max = std::clamp(box2d.x_max, 0.0, static_cast<double>(cam.width()));
    clamped.y_min = std::clamp(box2d.y_min, 0.0, static_cast<double>(cam.height()));
    clamped.y_max = std::clamp(box2d.y_max, 0.0, static_cast<double>(cam.height()));

    const auto inside = points_in_box_2d(cloud, cam, clamped);
    std::vector<Vec3> pts;
    pts.reserve(inside.size());
    for (std::size_t i : inside)
        pts.push_back(cloud.points[i]);
    const auto labels = dbscan(pts, params.eps, params.min_pts);

    std::map<int, std::size_t> counts;
    for (int l : labels)
        if (l >= 0)
            ++counts[l];
    int best = -1;
    std::size_t best_count = 0;
    for (const auto& [l, n] : counts)
        if (n > best_count) {
            best = l;
            best_count = n;
        }
    if (best < 0 || best_count < params.min_cluster)
        return std::nullopt;

    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (labels[i] != best)
            continue;
        lo = lo.cwiseMin(pts[i]);
        hi = hi.cwiseMax(pts[i]);
    }
    for (int k = 0; k < 3; ++k) {
        if (hi[k] - lo[k] < kMinLiftedExtent) {
            const double mid = 0.5 * (lo[k] + hi[k]);
            lo[k] = mid - 0.5 * kMinLiftedExtent;
            hi[k] = mid + 0.5 * kMinLiftedExtent;
        }
    }
    return Box3D::from_corners(lo, hi, 0.0);
}

std::vector<DiscoveredBox> discover(const Scene& scene, const DiscoveryConfig& config)
{
    config.schedule.validate();
    if (scene.proposals.empty())
        return {};
    const PriorRaster ones(scene.iou_prior.width, scene.iou_prior.height, 1, 1.0f);
    const PriorRaster prior = combine_priors(scene.iou_prior, scene.attention_prior ? *scene.attention_prior : ones);
    const PixelPointIndex index = build_pixel_point_index(scene.cloud, scene.camera, config.search_radius_px);
    const SelectionSet selection = sample_multi_scale(prior, index, scene.cloud, config.schedule, config.budget,
                                                      scene.labels, scene.proposals, config.nms_iou);
    const auto kept = filter_proposals(selection.survivors, scene.proposals, config.score_threshold);

    std::vector<DiscoveredBox> lifted;
    for (const ProposalHit& h : kept) {
        const MaskProposal& p = scene.proposals[h.proposal];
        auto box = lift_box_2d_to_3d(p.box2d, scene.cloud, scene.camera, config.cluster);
        if (!box)
            continue;
        DiscoveredBox d;
        d.score = fuse_scores(p);
        d.box = *box;
        d.box.score = d.score;
        d.label_id = p.label_id;
        for (std::size_t s : h.scales)
            d.deltas.push_back(selection.deltas[s]);
        lifted.push_back(std::move(d));
    }

    std::vector<Box3D> boxes;
    for (const DiscoveredBox& d : lifted)
        boxes.push_back(d.box);
    std::vector<DiscoveredBox> out;
    for (std::size_t k : nms_indices(boxes, config.nms_iou_3d))
        out.push_back(lifted[k]);
    return out;
}

std::optional<Box2D> mask_box(const LabelRaster& labels, std::span<const MaskProposal> proposals,
                              std::size_t proposal)
{
    const std::uint32_t id = proposals[proposal].label_id;
    std::vector<char> member(0x10000, 0);
    member[id] = 1;
    for (const MaskProposal& p : proposals)
        if (p.parent && *p.parent == id)
            member[p.label_id] = 1;
    bool any = false;
    Box2D b;
    for (std::uint32_t y = 0; y < labels.height; ++y)
        for (std::uint32_t x = 0; x < labels.width; ++x) {
            if (!member[labels.at(x, y)] || labels.at(x, y) == 0)
                continue;
            if (!any) {
                b = Box2D{double(x), double(y), double(x), double(y), 0.0};
                any = true;
            }
            b.x_min = std::min(b.x_min, double(x));
            b.x_max = std::max(b.x_max, double(x));
            b.y_min = std::min(b.y_min, double(y));
            b.y_max = std::max(b.y_max, double(y));
        }
    if (!any)
        return std::nullopt;
    b.score = proposals[proposal].sam_iou;
    return b;
}

std::vector<DiscoveredBox> discover_raw(const Scene& scene, const ClusterParams& params)
{
    std::vector<bool> has_parts(scene.proposals.size(), false);
    for (const MaskProposal& p : scene.proposals)
        if (p.parent)
            for (std::size_t j = 0; j < scene.proposals.size(); ++j)
                if (scene.proposals[j].label_id == *p.parent)
                    has_parts[j] = true;
    std::vector<DiscoveredBox> out;
    for (std::size_t i = 0; i < scene.proposals.size(); ++i) {
        if (has_parts[i])
            continue; // only the finest granularity is a raw proposal
        const auto box2d = mask_box(scene.labels, scene.proposals, i);
        if (!box2d)
            continue;
        auto box = lift_box_2d_to_3d(*box2d, scene.cloud, scene.camera, params);
        if (!box)
            continue;
        DiscoveredBox d;
        d.score = scene.proposals[i].sam_iou;
        d.box = *box;
        d.box.score = d.score;
        d.label_id = scene.proposals[i].label_id;
        out.push_back(std::move(d));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const DiscoveredBox& a, const DiscoveredBox& b) { return a.score > b.score; });
    return out;
}

} // namespace owd
