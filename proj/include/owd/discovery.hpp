#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "owd/boxes.hpp"
#include "owd/formats.hpp"
#include "owd/geometry.hpp"

namespace owd {

/// Ascending suppression radii in meters.
struct ScaleSchedule {
    std::vector<double> deltas{0.2, 0.5, 1.0, 2.0};

    /// Non-empty, strictly ascending, all positive.
    void validate() const;
};

/// Per-scale cap on selected pixels. Unset means half of the assigned pixels (rounded up).
struct SamplingBudget {
    std::optional<std::size_t> n_point;

    std::size_t resolve(const PixelPointIndex& index) const;
};

struct SelectedPixel {
    Pixel pixel;
    float prior = 0.0f; ///< prior value at selection time

    friend bool operator==(const SelectedPixel&, const SelectedPixel&) = default;
};

using ScaleSelection = std::vector<SelectedPixel>;

/// A proposal reached by at least one selected pixel.
struct ProposalHit {
    std::size_t proposal = 0;        ///< index into the scene's proposal list
    std::vector<std::size_t> scales; ///< ascending scale indices whose selections hit it
    Pixel first_pixel;

    friend bool operator==(const ProposalHit&, const ProposalHit&) = default;
};

struct SelectionSet {
    std::vector<double> deltas;
    std::vector<ScaleSelection> per_scale;
    /// Proposals surviving cross-scale NMS, in kept order.
    std::vector<ProposalHit> survivors;
};

struct ClusterParams {
    double eps = 0.1;              ///< neighborhood radius in meters (closed)
    std::size_t min_pts = 5;       ///< neighbors, self included, for a core point
    std::size_t min_cluster = 20;  ///< smallest cluster accepted as an object
};

struct DiscoveryConfig {
    ScaleSchedule schedule;
    SamplingBudget budget;
    double search_radius_px = kDefaultSearchRadiusPx;
    double nms_iou = 0.5;    ///< cross-scale NMS on 2D proposal boxes
    double nms_iou_3d = 0.5; ///< final NMS on lifted boxes
    double score_threshold = 0.6;
    ClusterParams cluster;
};

struct DiscoveredBox {
    Box3D box; ///< box.score equals `score`
    double score = 0.0;
    std::uint32_t label_id = 0;
    std::vector<double> deltas; ///< scales that reached the proposal; empty for the raw baseline

    friend bool operator==(const DiscoveredBox&, const DiscoveredBox&) = default;
};

/// Min-max normalization to [0,1]; a constant raster maps to all ones.
PriorRaster normalize_min_max(const PriorRaster& raster);

/// Elementwise product of the two independently min-max normalized maps.
PriorRaster combine_priors(const PriorRaster& iou_map, const PriorRaster& attention_map);

/// Greedy prior-ordered selection with 3D suppression: repeatedly take the
/// assigned pixel with the highest remaining prior (ties row-major) and zero
/// every assigned pixel whose owning point lies closer than `delta` to the
/// selected one. Stops at the budget or when the remaining maximum is 0.
ScaleSelection sample_single_scale(const PriorRaster& prior, const PixelPointIndex& index,
                                   const PointCloud& cloud, double delta, const SamplingBudget& budget);

/// Proposals owning the labels under the selected pixels (a part also yields
/// its parent). Background pixels are skipped; each proposal appears once, in
/// order of first hit.
std::vector<ProposalHit> propose_boxes(std::span<const ScaleSelection> selections, const LabelRaster& labels,
                                       std::span<const MaskProposal> proposals);

/// Runs every scale from a fresh prior, then deduplicates the union of hit
/// proposals by 2D NMS on their boxes ordered by fused score.
SelectionSet sample_multi_scale(const PriorRaster& prior, const PixelPointIndex& index, const PointCloud& cloud,
                                const ScaleSchedule& schedule, const SamplingBudget& budget,
                                const LabelRaster& labels, std::span<const MaskProposal> proposals,
                                double nms_iou);

double fuse_scores(const MaskProposal& p);
std::vector<MaskProposal> filter_proposals(std::span<const MaskProposal> proposals, double threshold);
std::vector<ProposalHit> filter_proposals(std::span<const ProposalHit> hits,
                                          std::span<const MaskProposal> proposals, double threshold);

/// DBSCAN over `points`; returns a cluster id per point, -1 for noise.
/// Clusters are numbered in order of their first core point.
std::vector<int> dbscan(std::span<const Vec3> points, double eps, std::size_t min_pts);

/// Bounding box of the largest density cluster among the visible points
/// projecting into `box2d` (clamped to the image); nullopt when that cluster
/// has fewer than `min_cluster` points.
std::optional<Box3D> lift_box_2d_to_3d(const Box2D& box2d, const PointCloud& cloud, const CameraModel& cam,
                                       const ClusterParams& params);

/// Smallest box extent emitted by lifting; flat clusters are padded to it.
inline constexpr double kMinLiftedExtent = 0.01;

/// Full pipeline, sorted by descending score.
std::vector<DiscoveredBox> discover(const Scene& scene, const DiscoveryConfig& config);

/// Pixel bounding box of a proposal's mask (its own pixels plus those of its parts).
std::optional<Box2D> mask_box(const LabelRaster& labels, std::span<const MaskProposal> proposals,
                              std::size_t proposal);

/// Baseline without sampling, detector refinement, score fusion or NMS: every
/// leaf proposal (one without parts) is lifted from its mask box and scored
/// by its SAM IoU alone.
std::vector<DiscoveredBox> discover_raw(const Scene& scene, const ClusterParams& params);

} // namespace owd
