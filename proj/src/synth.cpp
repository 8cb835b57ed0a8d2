#include "owd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "owd/random.hpp"

namespace owd::synth {

void SynthSpec::validate() const
{
    if (n_objects < 0)
        throw InvariantError("synth: n_objects must be non-negative");
    if (!((room_max - room_min).array() > 0.0).all())
        throw InvariantError("synth: room bounds are degenerate");
    if (!(size_min > 0.0 && size_max >= size_min))
        throw InvariantError("synth: size range must be positive and ordered");
    if (width < 8 || height < 8)
        throw InvariantError("synth: raster must be at least 8x8");
    if (fragments < 1)
        throw InvariantError("synth: fragments must be >= 1");
    if (!(drop >= 0.0 && drop <= 1.0))
        throw InvariantError("synth: drop probability must lie in [0,1]");
    if (max_attempts < 1)
        throw InvariantError("synth: max_attempts must be positive");
}

CameraModel SynthSpec::camera() const
{
    return CameraModel::look_at(focal, focal, 0.5 * (width - 1), 0.5 * (height - 1), eye, target, Vec3(0, 0, 1),
                                width, height);
}

namespace {

struct Hit {
    double t;
    int axis;
    double plane;
};

/// Slab test; returns the entry point of a ray starting outside the box.
std::optional<Hit> intersect(const Vec3& origin, const Vec3& dir, const Box3D& box)
{
    const Vec3 lo = box.min_corner(), hi = box.max_corner();
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int axis = -1;
    double plane = 0.0;
    for (int k = 0; k < 3; ++k) {
        if (dir[k] == 0.0) {
            if (origin[k] < lo[k] || origin[k] > hi[k])
                return std::nullopt;
            continue;
        }
        double t0 = (lo[k] - origin[k]) / dir[k];
        double t1 = (hi[k] - origin[k]) / dir[k];
        double p0 = lo[k];
        if (t0 > t1) {
            std::swap(t0, t1);
            p0 = hi[k];
        }
        if (t0 > t_near) {
            t_near = t0;
            axis = k;
            plane = p0;
        }
        t_far = std::min(t_far, t1);
    }
    if (axis < 0 || t_near > t_far || t_near <= 0.0)
        return std::nullopt;
    return Hit{t_near, axis, plane};
}

bool overlaps_with_gap(const Box3D& a, const Box3D& b, double gap)
{
    const Vec3 alo = a.min_corner(), ahi = a.max_corner();
    const Vec3 blo = b.min_corner(), bhi = b.max_corner();
    for (int k = 0; k < 2; ++k)
        if (ahi[k] + gap <= blo[k] || bhi[k] + gap <= alo[k])
            return false;
    return true;
}

struct PixelSet {
    std::vector<std::uint32_t> pixels; // linear indices, ascending
};

Box2D pixel_bbox(const std::vector<std::uint32_t>& pixels, std::uint32_t width, double score)
{
    Box2D b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), score};
    for (std::uint32_t p : pixels) {
        const double x = p % width, y = p / width;
        b.x_min = std::min(b.x_min, x);
        b.y_min = std::min(b.y_min, y);
        b.x_max = std::max(b.x_max, x);
        b.y_max = std::max(b.y_max, y);
    }
    return b;
}

std::vector<std::vector<std::uint32_t>> masks_of(const LabelRaster& labels, std::size_t objects)
{
    std::vector<std::vector<std::uint32_t>> masks(objects);
    for (std::uint32_t i = 0; i < labels.labels.size(); ++i)
        if (labels.labels[i] != 0)
            masks[labels.labels[i] - 1].push_back(i);
    return masks;
}

} // namespace

SynthScene generate(const SynthSpec& spec)
{
    spec.validate();
    SplitMix64 rng(spec.seed);
    SynthScene out;
    Scene& scene = out.scene;
    scene.name = "synth_" + std::to_string(spec.seed);
    scene.camera = spec.camera();

    // 1. Object placement: size x, y, z then center x, y per attempt.
    for (int obj = 0; obj < spec.n_objects; ++obj) {
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
            Vec3 size;
            for (int k = 0; k < 3; ++k)
                size[k] = rng.uniform(spec.size_min, spec.size_max);
            size.z() = std::min(size.z(), spec.room_max.z() - spec.room_min.z());
            Vec3 center;
            for (int k = 0; k < 2; ++k) {
                const double lo = spec.room_min[k] + 0.5 * size[k];
                const double hi = spec.room_max[k] - 0.5 * size[k];
                center[k] = lo <= hi ? rng.uniform(lo, hi) : 0.5 * (spec.room_min[k] + spec.room_max[k]);
            }
            center.z() = spec.room_min.z() + 0.5 * size.z();
            Box3D candidate;
            candidate.center = center;
            candidate.size = size;
            candidate.score = 1.0;
            const bool clear = std::none_of(out.amodal.begin(), out.amodal.end(), [&](const Box3D& b) {
                return overlaps_with_gap(candidate, b, spec.gap);
            });
            if (clear) {
                out.amodal.push_back(candidate);
                placed = true;
            }
        }
        if (!placed)
            throw GenerationError("synth: object placement exceeded the iteration cap max_attempts=" +
                                  std::to_string(spec.max_attempts));
    }

    // 2. Ray casting: one ray per pixel center, nearest hit wins (ties: lower id).
    const auto w = static_cast<std::uint32_t>(spec.width);
    const auto h = static_cast<std::uint32_t>(spec.height);
    out.clean_labels = LabelRaster(w, h);
    const Vec3 origin = scene.camera.center();
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const Vec3 dir = scene.camera.ray_direction(x, y);
            std::optional<Hit> best;
            std::size_t best_obj = 0;
            for (std::size_t o = 0; o < out.amodal.size(); ++o) {
                const auto hit = intersect(origin, dir, out.amodal[o]);
                if (hit && (!best || hit->t < best->t)) {
                    best = hit;
                    best_obj = o;
                }
            }
            if (!best)
                continue;
            const Box3D& box = out.amodal[best_obj];
            Vec3 p = origin + best->t * dir;
            p = p.cwiseMax(box.min_corner()).cwiseMin(box.max_corner());
            p[best->axis] = best->plane;
            scene.cloud.points.push_back(p);
            out.point_object.push_back(static_cast<std::uint16_t>(best_obj + 1));
            out.clean_labels.at(x, y) = static_cast<std::uint16_t>(best_obj + 1);
        }
    scene.labels = out.clean_labels;

    out.visible.assign(out.amodal.size(), std::nullopt);
    {
        std::vector<Vec3> lo(out.amodal.size(), Vec3::Constant(std::numeric_limits<double>::infinity()));
        std::vector<Vec3> hi(out.amodal.size(), Vec3::Constant(-std::numeric_limits<double>::infinity()));
        std::vector<std::size_t> count(out.amodal.size(), 0);
        for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
            const std::size_t o = out.point_object[i] - 1;
            lo[o] = lo[o].cwiseMin(scene.cloud.points[i]);
            hi[o] = hi[o].cwiseMax(scene.cloud.points[i]);
            ++count[o];
        }
        for (std::size_t o = 0; o < out.amodal.size(); ++o) {
            if (count[o] == 0)
                continue;
            Box3D b = Box3D::from_corners(lo[o], hi[o], 1.0);
            out.visible[o] = b;
        }
    }

    // 3. Proposal scores, drawn for every object in id order.
    const auto masks = masks_of(out.clean_labels, out.amodal.size());
    for (std::size_t o = 0; o < out.amodal.size(); ++o) {
        const double sam = rng.uniform(0.7, 1.0);
        const double objectness = rng.uniform(0.7, 1.0);
        if (masks[o].empty())
            continue;
        MaskProposal p;
        p.label_id = static_cast<std::uint32_t>(o + 1);
        p.sam_iou = sam;
        p.objectness_2d = objectness;
        p.box2d = pixel_bbox(masks[o], w, objectness);
        scene.proposals.push_back(p);
    }

    // 4. Splits: the largest 30% of objects by volume are base.
    std::vector<std::size_t> by_volume(out.amodal.size());
    std::iota(by_volume.begin(), by_volume.end(), std::size_t{0});
    std::stable_sort(by_volume.begin(), by_volume.end(),
                     [&](std::size_t a, std::size_t b) { return out.amodal[a].volume() > out.amodal[b].volume(); });
    const auto n_base = static_cast<std::size_t>(std::floor(0.3 * static_cast<double>(out.amodal.size()) + 0.5));
    std::vector<Split> split(out.amodal.size(), Split::novel);
    for (std::size_t r = 0; r < n_base; ++r)
        split[by_volume[r]] = Split::base;
    for (std::size_t o = 0; o < out.amodal.size(); ++o)
        scene.annotations.push_back(Annotation{1, out.amodal[o], split[o]});

    // 5. Priors: a radial bump per object peaking at the mask pixel nearest the
    // mask centroid, max-combined; attention marks mask pixels.
    scene.iou_prior = PriorRaster(w, h, 1, 0.0f);
    PriorRaster attention(w, h, 1, 0.0f);
    for (const auto& mask : masks) {
        if (mask.empty())
            continue;
        double cx = 0.0, cy = 0.0;
        for (std::uint32_t p : mask) {
            cx += p % w;
            cy += p / w;
            attention.values[p] = 1.0f;
        }
        cx /= static_cast<double>(mask.size());
        cy /= static_cast<double>(mask.size());
        std::uint32_t peak = mask.front();
        double best = std::numeric_limits<double>::infinity();
        for (std::uint32_t p : mask) {
            const double d = std::hypot(p % w - cx, p / w - cy);
            if (d < best) {
                best = d;
                peak = p;
            }
        }
        const double px = peak % w, py = peak / w;
        const double sigma = std::max(2.0, 0.5 * std::sqrt(static_cast<double>(mask.size())));
        for (std::uint32_t y = 0; y < h; ++y)
            for (std::uint32_t x = 0; x < w; ++x) {
                const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
                const float v = static_cast<float>(std::clamp(std::exp(-d2 / (2.0 * sigma * sigma)), 0.0, 1.0));
                float& cell = scene.iou_prior.at(x, y);
                cell = std::max(cell, v);
            }
    }
    scene.attention_prior = attention;
    return out;
}

SynthScene fragment_masks(const SynthScene& input, const SynthSpec& spec)
{
    spec.validate();
    SynthScene out = input;
    if (spec.fragments <= 1)
        return out;
    SplitMix64 rng(derive_seed(spec.seed, 1));
    Scene& scene = out.scene;
    const std::uint32_t w = scene.labels.width;
    const auto masks = masks_of(out.clean_labels, out.amodal.size());

    std::uint32_t next_label = static_cast<std::uint32_t>(out.amodal.size()) + 1;
    const std::vector<MaskProposal> clean = input.scene.proposals;
    for (const MaskProposal& parent : clean) {
        const auto& mask = masks[parent.label_id - 1];
        std::vector<std::vector<std::uint32_t>> pieces{mask};
        while (static_cast<int>(pieces.size()) < spec.fragments) {
            std::size_t largest = 0;
            for (std::size_t i = 1; i < pieces.size(); ++i)
                if (pieces[i].size() > pieces[largest].size())
                    largest = i;
            const Box2D bb = pixel_bbox(pieces[largest], w, 0.0);
            int axis = static_cast<int>(rng.integer(0, 1));
            if ((axis == 0 ? bb.x_max - bb.x_min : bb.y_max - bb.y_min) < 1.0)
                axis = 1 - axis;
            const double lo = axis == 0 ? bb.x_min : bb.y_min;
            const double hi = axis == 0 ? bb.x_max : bb.y_max;
            if (hi - lo < 1.0)
                break; // single pixel: nothing left to bisect
            const double cut = static_cast<double>(rng.integer(static_cast<std::int64_t>(lo) + 1, static_cast<std::int64_t>(hi)));
            std::vector<std::uint32_t> below, above;
            for (std::uint32_t p : pieces[largest]) {
                const double coord = axis == 0 ? p % w : p / w;
                (coord < cut ? below : above).push_back(p);
            }
            pieces[largest] = std::move(below);
            pieces.push_back(std::move(above));
        }
        if (pieces.size() <= 1)
            continue;
        for (const auto& piece : pieces) {
            const double objectness = rng.uniform(0.7, 1.0);
            const bool dropped = rng.uniform() < spec.drop;
            if (dropped)
                continue;
            MaskProposal part;
            part.label_id = next_label++;
            if (part.label_id > 0xFFFF)
                throw GenerationError("synth: fragment labels exceed the 16-bit label range");
            part.parent = parent.label_id;
            part.sam_iou = parent.sam_iou * static_cast<double>(piece.size()) / static_cast<double>(mask.size());
            part.objectness_2d = objectness;
            part.box2d = pixel_bbox(piece, w, objectness);
            for (std::uint32_t p : piece)
                scene.labels.labels[p] = static_cast<std::uint16_t>(part.label_id);
            scene.proposals.push_back(part);
        }
    }
    return out;
}

SynthScene generate_scene(const SynthSpec& spec)
{
    SynthScene s = generate(spec);
    return spec.fragments > 1 ? fragment_masks(s, spec) : s;
}

std::filesystem::path write_synth_scene(const SynthScene& scene, const std::filesystem::path& dir,
                                        const std::string& stem)
{
    const auto manifest = save_scene(scene.scene, dir, stem);
    std::vector<Record> records;
    for (std::size_t o = 0; o < scene.visible.size(); ++o) {
        if (!scene.visible[o])
            continue;
        Record r = to_record(*scene.visible[o]);
        r.set("object", static_cast<long long>(o + 1));
        records.push_back(r);
    }
    write_records(dir / (stem + "_visible.boxes"), records);
    return manifest;
}

} // namespace owd::synth
