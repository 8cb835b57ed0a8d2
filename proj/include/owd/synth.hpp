#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "owd/boxes.hpp"
#include "owd/formats.hpp"

namespace owd::synth {

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SynthSpec {
    std::uint64_t seed = 7;
    int n_objects = 5;
    Vec3 room_min{0.0, 0.0, 0.0}; ///< objects rest on room_min.z
    Vec3 room_max{4.0, 4.0, 2.0};
    double size_min = 0.3;
    double size_max = 1.0;
    double gap = 0.15; ///< minimum clearance between objects
    int max_attempts = 1000;

    Vec3 eye{2.0, -1.5, 3.5};
    Vec3 target{2.0, 2.2, 0.0};
    double focal = 170.0;
    int width = 200;
    int height = 150;

    int fragments = 1;
    double drop = 0.0;

    void validate() const;
    CameraModel camera() const;
};

struct SynthScene {
    Scene scene;
    std::vector<Box3D> amodal;                ///< per object
    std::vector<std::optional<Box3D>> visible; ///< bounding box of each object's hit points
    LabelRaster clean_labels;                  ///< object id (1-based) per pixel
    std::vector<std::uint16_t> point_object;   ///< object id per cloud point

    friend bool operator==(const SynthScene&, const SynthScene&) = default;
};

/// Places boxes by rejection sampling, ray casts one depth per pixel, and
/// derives labels, priors and one proposal per visible object.
SynthScene generate(const SynthSpec& spec);

/// Splits every clean mask into up to `spec.fragments` pieces by random
/// axis-aligned bisections and adds each piece as a part proposal of its
/// object. Part SAM IoU is the object's scaled by the piece's area fraction;
/// with probability `spec.drop` a piece is deleted and its pixels fall back to
/// the object's label.
SynthScene fragment_masks(const SynthScene& scene, const SynthSpec& spec);

/// generate() followed by fragment_masks() when fragments > 1.
SynthScene generate_scene(const SynthSpec& spec);

/// save_scene() plus `<stem>_visible.boxes` with the visible-point boxes.
std::filesystem::path write_synth_scene(const SynthScene& scene, const std::filesystem::path& dir,
                                        const std::string& stem);

} // namespace owd::synth
