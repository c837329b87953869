#include "nodule/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "nodule/error.hpp"
#include "nodule/log.hpp"

namespace nodule {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::size_t element_size(ElementType t) {
    switch (t) {
        case ElementType::uint8: return 1;
        case ElementType::int16: return 2;
        case ElementType::float32: return 4;
    }
    return 0;
}

const char* element_name(ElementType t) {
    switch (t) {
        case ElementType::uint8: return "MET_UCHAR";
        case ElementType::int16: return "MET_SHORT";
        case ElementType::float32: return "MET_FLOAT";
    }
    return "";
}

template <std::size_t N>
std::array<double, N> parse_reals(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    std::array<double, N> out{};
    for (auto& x : out) {
        if (!(in >> x) || !std::isfinite(x)) {
            throw FormatError("header field " + key + " needs " + std::to_string(N) +
                              " numeric values, got '" + value + "'");
        }
    }
    std::string extra;
    if (in >> extra) {
        throw FormatError("header field " + key + " has trailing values: '" + value + "'");
    }
    return out;
}

bool host_is_big_endian() { return std::endian::native == std::endian::big; }

void swap_bytes(char* p, std::size_t width) { std::reverse(p, p + width); }

// Clamp a continuous index into the voxel-centre range when it lies inside
// the half-voxel border; report whether it is inside the physical extent.
bool inside_extent(const Volume& v, Eigen::Vector3d& idx) {
    constexpr double kEps = 1e-9;
    for (int a = 0; a < 3; ++a) {
        const double hi = static_cast<double>(v.dims[a]) - 0.5;
        if (idx[a] < -0.5 - kEps || idx[a] > hi + kEps) {
            return false;
        }
        idx[a] = std::clamp(idx[a], 0.0, static_cast<double>(v.dims[a] - 1));
    }
    return true;
}

}  // namespace

Volume::Volume(std::array<int, 3> dims_, Eigen::Vector3d spacing_, Eigen::Vector3d origin_,
               VolumeKind kind_, float value)
    : dims(dims_), spacing(std::move(spacing_)), origin(std::move(origin_)), kind(kind_),
      element_type(kind_ == VolumeKind::mask ? ElementType::uint8 : ElementType::int16) {
    for (int d : dims) {
        if (d <= 0) {
            throw ArgumentError("volume dims must be positive");
        }
    }
    data.assign(voxel_count(), value);
}

void Volume::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] <= 0) {
            throw ArgumentError("volume dims must be positive");
        }
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw ArgumentError("volume spacing must be positive");
        }
    }
    if (data.size() != voxel_count()) {
        throw ArgumentError("volume data length does not match dims");
    }
    if (kind == VolumeKind::mask) {
        for (float x : data) {
            if (x != 0.0F && x != 1.0F) {
                throw ArgumentError("mask volume contains values other than 0 and 1");
            }
        }
    }
}

Volume read_volume(const std::filesystem::path& header_path) {
    std::ifstream in(header_path);
    if (!in) {
        throw IoError("cannot open volume header " + header_path.string());
    }
    std::map<std::string, std::string> fields;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError("header line without '=': " + line);
        }
        fields[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }

    static const std::array<const char*, 7> kKnown = {
        "NDims", "DimSize", "ElementSpacing", "Offset", "ElementType", "ElementByteOrderMSB",
        "ElementDataFile"};
    for (const auto& [key, value] : fields) {
        if (std::find_if(kKnown.begin(), kKnown.end(),
                         [&](const char* k) { return key == k; }) == kKnown.end()) {
            log::warn("ignoring unknown MetaImage key '" + key + "' in " + header_path.string());
        }
    }
    auto require = [&](const char* key) -> const std::string& {
        auto it = fields.find(key);
        if (it == fields.end()) {
            throw FormatError(std::string("missing header field ") + key + " in " +
                              header_path.string());
        }
        return it->second;
    };

    if (require("NDims") != "3") {
        throw FormatError("NDims must be 3, got " + require("NDims"));
    }
    Volume v;
    const auto dims = parse_reals<3>("DimSize", require("DimSize"));
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1 || dims[a] != std::floor(dims[a])) {
            throw FormatError("DimSize entries must be positive integers");
        }
        v.dims[a] = static_cast<int>(dims[a]);
    }
    const auto spacing = parse_reals<3>("ElementSpacing", require("ElementSpacing"));
    v.spacing = Eigen::Vector3d(spacing[0], spacing[1], spacing[2]);
    if ((v.spacing.array() <= 0.0).any()) {
        throw FormatError("ElementSpacing entries must be positive");
    }
    if (auto it = fields.find("Offset"); it != fields.end()) {
        const auto off = parse_reals<3>("Offset", it->second);
        v.origin = Eigen::Vector3d(off[0], off[1], off[2]);
    }
    const std::string& type = require("ElementType");
    if (type == "MET_UCHAR") {
        v.element_type = ElementType::uint8;
    } else if (type == "MET_SHORT") {
        v.element_type = ElementType::int16;
    } else if (type == "MET_FLOAT") {
        v.element_type = ElementType::float32;
    } else {
        throw FormatError("unsupported ElementType " + type);
    }
    bool msb = false;
    if (auto it = fields.find("ElementByteOrderMSB"); it != fields.end()) {
        if (it->second == "True") {
            msb = true;
        } else if (it->second != "False") {
            throw FormatError("ElementByteOrderMSB must be True or False");
        }
    }
    const std::filesystem::path data_path = header_path.parent_path() / require("ElementDataFile");

    std::ifstream raw(data_path, std::ios::binary);
    if (!raw) {
        throw IoError("cannot open volume data file " + data_path.string());
    }
    const std::size_t width = element_size(v.element_type);
    const std::size_t expected = v.voxel_count() * width;
    std::vector<char> bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
    if (bytes.size() != expected) {
        throw TruncationError("data file " + data_path.string() + " has " +
                              std::to_string(bytes.size()) + " bytes, header implies " +
                              std::to_string(expected));
    }
    const bool swap = msb != host_is_big_endian();
    v.data.resize(v.voxel_count());
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        char* p = bytes.data() + i * width;
        if (swap) {
            swap_bytes(p, width);
        }
        switch (v.element_type) {
            case ElementType::uint8: v.data[i] = static_cast<unsigned char>(*p); break;
            case ElementType::int16: {
                std::int16_t x;
                std::memcpy(&x, p, 2);
                v.data[i] = x;
                break;
            }
            case ElementType::float32: std::memcpy(&v.data[i], p, 4); break;
        }
    }
    v.kind = VolumeKind::intensity;
    if (v.element_type == ElementType::uint8 &&
        std::all_of(v.data.begin(), v.data.end(), [](float x) { return x == 0.0F || x == 1.0F; })) {
        v.kind = VolumeKind::mask;
    }
    return v;
}

void write_volume(const Volume& v, const std::filesystem::path& header_path,
                  const WriteOptions& options) {
    v.validate();
    std::filesystem::path data_path = header_path;
    data_path.replace_extension(".raw");
    {
        std::ofstream out(header_path);
        if (!out) {
            throw IoError("cannot write volume header " + header_path.string());
        }
        out.precision(17);
        out << "NDims = 3\n"
            << "DimSize = " << v.dims[0] << ' ' << v.dims[1] << ' ' << v.dims[2] << '\n'
            << "ElementSpacing = " << v.spacing[0] << ' ' << v.spacing[1] << ' ' << v.spacing[2]
            << '\n'
            << "Offset = " << v.origin[0] << ' ' << v.origin[1] << ' ' << v.origin[2] << '\n'
            << "ElementType = " << element_name(v.element_type) << '\n'
            << "ElementByteOrderMSB = " << (options.big_endian ? "True" : "False") << '\n'
            << "ElementDataFile = " << data_path.filename().string() << '\n';
    }
    const std::size_t width = element_size(v.element_type);
    std::vector<char> bytes(v.voxel_count() * width);
    const bool swap = options.big_endian != host_is_big_endian();
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        char* p = bytes.data() + i * width;
        switch (v.element_type) {
            case ElementType::uint8: {
                const auto x = static_cast<unsigned char>(std::clamp(std::lround(v.data[i]), 0L, 255L));
                std::memcpy(p, &x, 1);
                break;
            }
            case ElementType::int16: {
                const auto x =
                    static_cast<std::int16_t>(std::clamp(std::lround(v.data[i]), -32768L, 32767L));
                std::memcpy(p, &x, 2);
                break;
            }
            case ElementType::float32: std::memcpy(p, &v.data[i], 4); break;
        }
        if (swap) {
            swap_bytes(p, width);
        }
    }
    std::ofstream raw(data_path, std::ios::binary);
    if (!raw) {
        throw IoError("cannot write volume data " + data_path.string());
    }
    raw.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

double trilinear_sample(const Volume& v, const PointMm& p, std::optional<double> fill) {
    Eigen::Vector3d idx = v.continuous_index(p);
    if (!inside_extent(v, idx)) {
        return fill.value_or(v.default_fill());
    }
    std::array<int, 3> lo{};
    std::array<double, 3> t{};
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(static_cast<int>(std::floor(idx[a])), std::max(v.dims[a] - 2, 0));
        t[a] = v.dims[a] > 1 ? idx[a] - lo[a] : 0.0;
    }
    auto value = [&](int di, int dj, int dk) -> double {
        const int i = std::min(lo[0] + di, v.dims[0] - 1);
        const int j = std::min(lo[1] + dj, v.dims[1] - 1);
        const int k = std::min(lo[2] + dk, v.dims[2] - 1);
        return v.at(i, j, k);
    };
    const double c00 = value(0, 0, 0) * (1 - t[0]) + value(1, 0, 0) * t[0];
    const double c10 = value(0, 1, 0) * (1 - t[0]) + value(1, 1, 0) * t[0];
    const double c01 = value(0, 0, 1) * (1 - t[0]) + value(1, 0, 1) * t[0];
    const double c11 = value(0, 1, 1) * (1 - t[0]) + value(1, 1, 1) * t[0];
    const double c0 = c00 * (1 - t[1]) + c10 * t[1];
    const double c1 = c01 * (1 - t[1]) + c11 * t[1];
    return c0 * (1 - t[2]) + c1 * t[2];
}

double nearest_sample(const Volume& v, const PointMm& p, std::optional<double> fill) {
    Eigen::Vector3d idx = v.continuous_index(p);
    if (!inside_extent(v, idx)) {
        return fill.value_or(v.default_fill());
    }
    // Round half up so that exact cell boundaries resolve deterministically.
    return v.at(static_cast<int>(std::floor(idx[0] + 0.5)), static_cast<int>(std::floor(idx[1] + 0.5)),
                static_cast<int>(std::floor(idx[2] + 0.5)));
}

Volume resample_isotropic(const Volume& v, double target_spacing) {
    if (!(target_spacing > 0.0) || !std::isfinite(target_spacing)) {
        throw ArgumentError("target spacing must be positive");
    }
    v.validate();
    std::array<int, 3> dims{};
    for (int a = 0; a < 3; ++a) {
        // Guard against ceil(4.000000001) from spacing products that are exact in decimal.
        const double n = static_cast<double>(v.dims[a]) * v.spacing[a] / target_spacing;
        dims[a] = std::max(1, static_cast<int>(std::ceil(n - 1e-9)));
    }
    Volume out(dims, Eigen::Vector3d::Constant(target_spacing), v.origin, v.kind);
    out.element_type = v.is_mask() ? ElementType::uint8 : ElementType::float32;
    for (int k = 0; k < dims[2]; ++k) {
        for (int j = 0; j < dims[1]; ++j) {
            for (int i = 0; i < dims[0]; ++i) {
                // The output grid spans dims * spacing from the first voxel centre, which can
                // overshoot the source extent by up to one target step; replicate the edge there.
                const Eigen::Vector3d idx = v.continuous_index(out.physical(i, j, k))
                                                .cwiseMax(Eigen::Vector3d::Zero())
                                                .cwiseMin(Eigen::Vector3d(v.dims[0] - 1, v.dims[1] - 1, v.dims[2] - 1));
                const PointMm p = v.physical(idx.x(), idx.y(), idx.z());
                if (v.is_mask()) {
                    out.at(i, j, k) = nearest_sample(v, p) >= 0.5 ? 1.0F : 0.0F;
                } else {
                    out.at(i, j, k) = static_cast<float>(trilinear_sample(v, p));
                }
            }
        }
    }
    return out;
}

std::size_t foreground_count(const Volume& mask) {
    return static_cast<std::size_t>(
        std::count_if(mask.data.begin(), mask.data.end(), [](float x) { return x >= 0.5F; }));
}

PointMm mask_center_of_mass(const Volume& mask) {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    std::size_t n = 0;
    for (int k = 0; k < mask.dims[2]; ++k) {
        for (int j = 0; j < mask.dims[1]; ++j) {
            for (int i = 0; i < mask.dims[0]; ++i) {
                if (mask.at(i, j, k) >= 0.5F) {
                    sum += Eigen::Vector3d(i, j, k);
                    ++n;
                }
            }
        }
    }
    if (n == 0) {
        throw EmptyInputError("mask has no foreground voxels");
    }
    const Eigen::Vector3d mean = sum / static_cast<double>(n);
    return mask.physical(mean[0], mean[1], mean[2]);
}

}  // namespace nodule
