#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "owd/boxes.hpp"
#include "owd/geometry.hpp"
#include "owd/records.hpp"

namespace owd {

enum class FormatErrorKind {
    bad_magic,
    truncated,
    bad_header,
    non_finite,
    prior_out_of_range,
    trailing_bytes,
};

/// Binary parse failure; `offset()` is the byte offset of the offending field.
class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrorKind kind, std::size_t offset, const std::string& what);
    FormatErrorKind kind() const { return kind_; }
    std::size_t offset() const { return offset_; }

private:
    FormatErrorKind kind_;
    std::size_t offset_;
};

/// "OWRF": u32 width, u32 height, u32 channels, then channel planes of
/// row-major little-endian float32.
struct FloatRaster {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t channels = 1;
    std::vector<float> values;

    FloatRaster() = default;
    FloatRaster(std::uint32_t w, std::uint32_t h, std::uint32_t c = 1, float fill = 0.0f)
        : width(w), height(h), channels(c), values(static_cast<std::size_t>(w) * h * c, fill)
    {
    }

    std::size_t plane_size() const { return static_cast<std::size_t>(width) * height; }
    float at(std::uint32_t x, std::uint32_t y, std::uint32_t c = 0) const { return values[c * plane_size() + y * width + x]; }
    float& at(std::uint32_t x, std::uint32_t y, std::uint32_t c = 0) { return values[c * plane_size() + y * width + x]; }

    friend bool operator==(const FloatRaster&, const FloatRaster&) = default;
};

/// Single-channel per-pixel object prior with values in [0, 1].
using PriorRaster = FloatRaster;

/// "OWRM": u32 width, u32 height, then row-major little-endian u16 labels; 0 is background.
struct LabelRaster {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint16_t> labels;

    LabelRaster() = default;
    LabelRaster(std::uint32_t w, std::uint32_t h) : width(w), height(h), labels(static_cast<std::size_t>(w) * h, 0) {}

    std::uint16_t at(std::uint32_t x, std::uint32_t y) const { return labels[y * width + x]; }
    std::uint16_t& at(std::uint32_t x, std::uint32_t y) { return labels[y * width + x]; }

    friend bool operator==(const LabelRaster&, const LabelRaster&) = default;
};

enum class RasterKind { prior, feature };

std::string encode_raster(const FloatRaster& raster);
/// Prior rasters additionally require a single channel and values in [0, 1].
FloatRaster decode_raster(std::string_view bytes, RasterKind kind);
FloatRaster read_raster(const std::filesystem::path& path, RasterKind kind);
void write_raster(const FloatRaster& raster, const std::filesystem::path& path);
void validate_prior(const PriorRaster& raster);

std::string encode_labels(const LabelRaster& raster);
LabelRaster decode_labels(std::string_view bytes);
LabelRaster read_label_raster(const std::filesystem::path& path);
void write_label_raster(const LabelRaster& raster, const std::filesystem::path& path);

/// "OWPC": u32 count, then count records of three little-endian float32.
std::string encode_cloud(const PointCloud& cloud);
PointCloud decode_cloud(std::string_view bytes);
PointCloud read_point_cloud(const std::filesystem::path& path);
void write_point_cloud(const PointCloud& cloud, const std::filesystem::path& path);

/// One class-agnostic mask candidate. A proposal with `parent` set is a part
/// of the parent's mask, so its pixels also belong to the parent.
struct MaskProposal {
    std::uint32_t label_id = 0;
    double sam_iou = 0.0;
    double objectness_2d = 0.0;
    Box2D box2d;
    std::optional<std::uint32_t> parent;

    friend bool operator==(const MaskProposal&, const MaskProposal&) = default;
};

Record to_record(const MaskProposal& p);
MaskProposal proposal_from_record(const Record& r);
std::vector<MaskProposal> read_proposals(const std::filesystem::path& path);
void write_proposals(std::span<const MaskProposal> proposals, const std::filesystem::path& path);

Record to_record(const Box3D& box);
Box3D box_from_record(const Record& r);
/// Every `kind:box` record of a boxes file, in file order.
std::vector<Box3D> read_boxes(const std::filesystem::path& path);

enum class Split { base, novel };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Annotation {
    int objectness = 1;
    Box3D box;
    Split split = Split::novel;

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// Everything the discovery pipeline and the evaluator consume for one view.
struct Scene {
    std::string name;
    CameraModel camera;
    PointCloud cloud;
    PriorRaster iou_prior;
    std::optional<PriorRaster> attention_prior;
    LabelRaster labels;
    std::vector<MaskProposal> proposals;
    std::vector<Annotation> annotations;

    /// Throws InvariantError naming the offending field.
    void validate() const;

    friend bool operator==(const Scene&, const Scene&) = default;
};

/// Loads and validates a manifest and every file it references (paths are
/// relative to the manifest's directory).
Scene load_scene(const std::filesystem::path& manifest);

/// Writes `<stem>.manifest` and its companion files into `dir`; returns the manifest path.
std::filesystem::path save_scene(const Scene& scene, const std::filesystem::path& dir,
                                 const std::string& stem);

/// Ground-truth boxes with objectness 1, in annotation order.
std::vector<Box3D> ground_truth_boxes(const Scene& scene);

} // namespace owd
