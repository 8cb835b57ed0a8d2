#include "owd/formats.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <set>

namespace owd {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

FormatError::FormatError(FormatErrorKind kind, std::size_t offset, const std::string& what)
    : std::runtime_error(what + " at byte offset " + std::to_string(offset)), kind_(kind), offset_(offset)
{
}

namespace {

constexpr std::string_view kRasterMagic = "OWRF";
constexpr std::string_view kLabelMagic = "OWRM";
constexpr std::string_view kCloudMagic = "OWPC";

template <typename T>
void put(std::string& out, T value)
{
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    void magic(std::string_view expected)
    {
        if (bytes_.size() < expected.size() || bytes_.substr(0, expected.size()) != expected)
            throw FormatError(FormatErrorKind::bad_magic, 0,
                              "malformed magic (expected " + std::string(expected) + ")");
        pos_ = expected.size();
    }

    template <typename T>
    T get(const char* field)
    {
        if (bytes_.size() - pos_ < sizeof(T))
            throw FormatError(FormatErrorKind::truncated, pos_, std::string("truncated payload reading ") + field);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    void require(std::size_t n, const char* what)
    {
        if (bytes_.size() - pos_ < n)
            throw FormatError(FormatErrorKind::truncated, bytes_.size(), std::string("truncated payload in ") + what);
    }

    void finish()
    {
        if (pos_ != bytes_.size())
            throw FormatError(FormatErrorKind::trailing_bytes, pos_, "unexpected trailing bytes");
    }

    std::size_t pos() const { return pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

[[noreturn]] void field_error(const std::string& field, const std::string& what)
{
    throw InvariantError(field + ": " + what);
}

void check_unit_interval(double v, const std::string& field)
{
    if (!(v >= 0.0 && v <= 1.0))
        field_error(field, "must lie in [0,1]");
}

std::vector<double> matrix_values(const Mat3& m)
{
    std::vector<double> v;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            v.push_back(m(r, c));
    return v;
}

Mat3 matrix_from(const Record& r, std::string_view key)
{
    const auto v = r.numbers(key);
    if (v.size() != 9)
        throw RecordError(r.origin + ": field '" + std::string(key) + "' must hold 9 numbers");
    Mat3 m;
    for (int i = 0; i < 9; ++i)
        m(i / 3, i % 3) = v[i];
    return m;
}

} // namespace

std::string encode_raster(const FloatRaster& raster)
{
    std::string out(kRasterMagic);
    put(out, raster.width);
    put(out, raster.height);
    put(out, raster.channels);
    for (float v : raster.values)
        put(out, v);
    return out;
}

FloatRaster decode_raster(std::string_view bytes, RasterKind kind)
{
    Reader in(bytes);
    in.magic(kRasterMagic);
    FloatRaster r;
    r.width = in.get<std::uint32_t>("width");
    r.height = in.get<std::uint32_t>("height");
    const std::size_t channel_offset = in.pos();
    r.channels = in.get<std::uint32_t>("channels");
    if (r.channels == 0 || (kind == RasterKind::prior && r.channels != 1))
        throw FormatError(FormatErrorKind::bad_header, channel_offset, "unsupported channel count");
    const std::size_t n = static_cast<std::size_t>(r.width) * r.height * r.channels;
    in.require(n * sizeof(float), "raster");
    r.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t offset = in.pos();
        const float v = in.get<float>("value");
        if (!std::isfinite(v))
            throw FormatError(FormatErrorKind::non_finite, offset, "non-finite float");
        if (kind == RasterKind::prior && !(v >= 0.0f && v <= 1.0f))
            throw FormatError(FormatErrorKind::prior_out_of_range, offset, "prior out of range");
        r.values[i] = v;
    }
    in.finish();
    return r;
}

FloatRaster read_raster(const std::filesystem::path& path, RasterKind kind)
{
    return decode_raster(read_file(path), kind);
}

void write_raster(const FloatRaster& raster, const std::filesystem::path& path)
{
    write_file(path, encode_raster(raster));
}

void validate_prior(const PriorRaster& raster)
{
    if (raster.channels != 1)
        throw InvariantError("prior raster must have one channel");
    if (raster.values.size() != raster.plane_size())
        throw InvariantError("prior raster payload size mismatch");
    for (float v : raster.values)
        if (!(v >= 0.0f && v <= 1.0f))
            throw InvariantError("prior raster value outside [0,1]");
}

std::string encode_labels(const LabelRaster& raster)
{
    std::string out(kLabelMagic);
    put(out, raster.width);
    put(out, raster.height);
    for (std::uint16_t v : raster.labels)
        put(out, v);
    return out;
}

LabelRaster decode_labels(std::string_view bytes)
{
    Reader in(bytes);
    in.magic(kLabelMagic);
    LabelRaster r;
    r.width = in.get<std::uint32_t>("width");
    r.height = in.get<std::uint32_t>("height");
    const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
    in.require(n * sizeof(std::uint16_t), "label raster");
    r.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        r.labels[i] = in.get<std::uint16_t>("label");
    in.finish();
    return r;
}

LabelRaster read_label_raster(const std::filesystem::path& path)
{
    return decode_labels(read_file(path));
}

void write_label_raster(const LabelRaster& raster, const std::filesystem::path& path)
{
    write_file(path, encode_labels(raster));
}

std::string encode_cloud(const PointCloud& cloud)
{
    std::string out(kCloudMagic);
    put(out, static_cast<std::uint32_t>(cloud.size()));
    for (const Vec3& p : cloud.points) {
        put(out, static_cast<float>(p.x()));
        put(out, static_cast<float>(p.y()));
        put(out, static_cast<float>(p.z()));
    }
    return out;
}

PointCloud decode_cloud(std::string_view bytes)
{
    Reader in(bytes);
    in.magic(kCloudMagic);
    const auto n = in.get<std::uint32_t>("count");
    in.require(static_cast<std::size_t>(n) * 3 * sizeof(float), "point records");
    PointCloud cloud;
    cloud.points.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        float xyz[3];
        for (float& v : xyz) {
            const std::size_t offset = in.pos();
            v = in.get<float>("coordinate");
            if (!std::isfinite(v))
                throw FormatError(FormatErrorKind::non_finite, offset, "non-finite float");
        }
        cloud.points.emplace_back(xyz[0], xyz[1], xyz[2]);
    }
    in.finish();
    return cloud;
}

PointCloud read_point_cloud(const std::filesystem::path& path)
{
    return decode_cloud(read_file(path));
}

void write_point_cloud(const PointCloud& cloud, const std::filesystem::path& path)
{
    write_file(path, encode_cloud(cloud));
}

Record to_record(const MaskProposal& p)
{
    Record r("proposal");
    const double box[4] = {p.box2d.x_min, p.box2d.y_min, p.box2d.x_max, p.box2d.y_max};
    r.set("box", std::span<const double>(box));
    r.set("label", static_cast<long long>(p.label_id));
    r.set("objectness", p.objectness_2d);
    r.set("sam_iou", p.sam_iou);
    if (p.parent)
        r.set("parent", static_cast<long long>(*p.parent));
    return r;
}

MaskProposal proposal_from_record(const Record& r)
{
    MaskProposal p;
    const long long label = r.integer("label");
    if (label <= 0 || label > 0xFFFF)
        throw RecordError(r.origin + ": field 'label' must be in [1, 65535]");
    p.label_id = static_cast<std::uint32_t>(label);
    p.sam_iou = r.number("sam_iou");
    p.objectness_2d = r.number("objectness");
    const auto box = r.numbers("box");
    if (box.size() != 4)
        throw RecordError(r.origin + ": field 'box' must hold 4 numbers");
    p.box2d = Box2D{box[0], box[1], box[2], box[3], p.objectness_2d};
    if (r.has("parent"))
        p.parent = static_cast<std::uint32_t>(r.integer("parent"));
    return p;
}

std::vector<MaskProposal> read_proposals(const std::filesystem::path& path)
{
    std::vector<MaskProposal> out;
    for (const Record& r : read_records(path))
        if (r.kind() == "proposal")
            out.push_back(proposal_from_record(r));
    return out;
}

void write_proposals(std::span<const MaskProposal> proposals, const std::filesystem::path& path)
{
    std::vector<Record> records;
    for (const MaskProposal& p : proposals)
        records.push_back(to_record(p));
    write_records(path, records);
}

Record to_record(const Box3D& box)
{
    Record r("box");
    r.set("center", box.center);
    r.set("score", box.score);
    r.set("size", box.size);
    return r;
}

Box3D box_from_record(const Record& r)
{
    Box3D b;
    b.center = r.vec3("center");
    b.size = r.vec3("size");
    b.score = r.has("score") ? r.number("score") : 1.0;
    try {
        b.validate();
    } catch (const InvariantError& e) {
        throw RecordError(r.origin + ": " + e.what());
    }
    return b;
}

std::vector<Box3D> read_boxes(const std::filesystem::path& path)
{
    std::vector<Box3D> out;
    for (const Record& r : read_records(path))
        if (r.kind() == "box")
            out.push_back(box_from_record(r));
    return out;
}

std::string_view to_string(Split s)
{
    return s == Split::base ? "base" : "novel";
}

Split parse_split(std::string_view s)
{
    if (s == "base")
        return Split::base;
    if (s == "novel")
        return Split::novel;
    throw RecordError("split must be 'base' or 'novel', got '" + std::string(s) + "'");
}

void Scene::validate() const
{
    cloud.validate();
    const auto w = static_cast<std::uint32_t>(camera.width());
    const auto h = static_cast<std::uint32_t>(camera.height());
    auto check_dims = [&](std::uint32_t rw, std::uint32_t rh, const std::string& field) {
        if (rw != w || rh != h)
            field_error(field, "dimension mismatch (" + std::to_string(rw) + "x" + std::to_string(rh) +
                                   " raster vs " + std::to_string(w) + "x" + std::to_string(h) + " camera)");
    };
    check_dims(iou_prior.width, iou_prior.height, "prior");
    validate_prior(iou_prior);
    if (attention_prior) {
        check_dims(attention_prior->width, attention_prior->height, "attention");
        validate_prior(*attention_prior);
    }
    check_dims(labels.width, labels.height, "labels");

    std::set<std::uint32_t> present(labels.labels.begin(), labels.labels.end());
    std::set<std::uint32_t> ids;
    for (const MaskProposal& p : proposals) {
        const std::string field = "proposals[label " + std::to_string(p.label_id) + "]";
        if (p.label_id == 0)
            field_error(field, "label must be positive");
        if (!ids.insert(p.label_id).second)
            field_error(field, "duplicate label");
        check_unit_interval(p.sam_iou, field + ".sam_iou");
        check_unit_interval(p.objectness_2d, field + ".objectness");
        try {
            p.box2d.validate();
        } catch (const InvariantError& e) {
            field_error(field + ".box", e.what());
        }
    }
    // A parent's pixels may all be owned by its parts.
    std::set<std::uint32_t> reachable = present;
    for (const MaskProposal& p : proposals)
        if (p.parent && present.count(p.label_id))
            reachable.insert(*p.parent);
    for (const MaskProposal& p : proposals) {
        const std::string field = "proposals[label " + std::to_string(p.label_id) + "]";
        if (!reachable.count(p.label_id))
            field_error(field, "label not present in the label raster");
        if (p.parent && !ids.count(*p.parent))
            field_error(field + ".parent", "refers to an unknown proposal");
    }
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const Annotation& a = annotations[i];
        const std::string field = "annotations[" + std::to_string(i) + "]";
        if (a.objectness != 0 && a.objectness != 1)
            field_error(field + ".objectness", "must be 0 or 1");
        try {
            a.box.validate();
        } catch (const InvariantError& e) {
            field_error(field + ".box", e.what());
        }
    }
}

Scene load_scene(const std::filesystem::path& manifest)
{
    const auto records = read_records(manifest);
    const auto dir = manifest.parent_path();
    Scene scene;
    scene.name = manifest.stem().string();
    const Record* camera = nullptr;
    const Record* files = nullptr;
    for (const Record& r : records) {
        const std::string kind = r.kind();
        if (kind == "camera") {
            camera = &r;
        } else if (kind == "files") {
            files = &r;
        } else if (kind == "scene") {
            scene.name = r.text("name");
        } else if (kind == "annotation") {
            Annotation a;
            a.objectness = static_cast<int>(r.integer("objectness"));
            a.box.center = r.vec3("center");
            a.box.size = r.vec3("size");
            a.box.score = 1.0;
            a.split = parse_split(r.text("split"));
            scene.annotations.push_back(a);
        } else {
            throw RecordError(r.origin + ": unknown record kind '" + kind + "'");
        }
    }
    if (!camera)
        throw RecordError(manifest.string() + ": missing camera record");
    if (!files)
        throw RecordError(manifest.string() + ": missing files record");

    scene.camera = CameraModel(matrix_from(*camera, "intrinsics"), matrix_from(*camera, "rotation"),
                               camera->vec3("translation"), static_cast<int>(camera->integer("width")),
                               static_cast<int>(camera->integer("height")));
    auto path_of = [&](std::string_view key) {
        const auto p = dir / files->text(key);
        if (!std::filesystem::exists(p))
            throw RecordError("missing file for '" + std::string(key) + "': " + p.string());
        return p;
    };
    scene.cloud = read_point_cloud(path_of("cloud"));
    scene.iou_prior = read_raster(path_of("prior"), RasterKind::prior);
    if (files->has("attention"))
        scene.attention_prior = read_raster(path_of("attention"), RasterKind::prior);
    scene.labels = read_label_raster(path_of("labels"));
    scene.proposals = read_proposals(path_of("proposals"));
    scene.validate();
    return scene;
}

std::filesystem::path save_scene(const Scene& scene, const std::filesystem::path& dir, const std::string& stem)
{
    std::filesystem::create_directories(dir);
    Record files("files");
    files.set("cloud", stem + ".owpc");
    files.set("prior", stem + "_prior.owrf");
    files.set("labels", stem + ".owrm");
    files.set("proposals", stem + ".proposals");
    if (scene.attention_prior)
        files.set("attention", stem + "_attention.owrf");

    write_point_cloud(scene.cloud, dir / (stem + ".owpc"));
    write_raster(scene.iou_prior, dir / (stem + "_prior.owrf"));
    if (scene.attention_prior)
        write_raster(*scene.attention_prior, dir / (stem + "_attention.owrf"));
    write_label_raster(scene.labels, dir / (stem + ".owrm"));
    write_proposals(scene.proposals, dir / (stem + ".proposals"));

    std::vector<Record> records;
    records.push_back(Record("scene").set("name", scene.name));
    Record cam("camera");
    const auto k = matrix_values(scene.camera.intrinsics());
    const auto r = matrix_values(scene.camera.rotation());
    cam.set("intrinsics", std::span<const double>(k));
    cam.set("rotation", std::span<const double>(r));
    cam.set("translation", scene.camera.translation());
    cam.set("width", scene.camera.width());
    cam.set("height", scene.camera.height());
    records.push_back(cam);
    records.push_back(files);
    for (const Annotation& a : scene.annotations) {
        Record rec("annotation");
        rec.set("center", a.box.center);
        rec.set("size", a.box.size);
        rec.set("objectness", a.objectness);
        rec.set("split", std::string(to_string(a.split)));
        records.push_back(rec);
    }
    const auto manifest = dir / (stem + ".manifest");
    write_records(manifest, records);
    return manifest;
}

std::vector<Box3D> ground_truth_boxes(const Scene& scene)
{
    std::vector<Box3D> out;
    for (const Annotation& a : scene.annotations)
        if (a.objectness == 1)
            out.push_back(a.box);
    return out;
}

} // namespace owd
