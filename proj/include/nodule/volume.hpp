#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace nodule {

/// Physical-space point in millimetres: origin + index * spacing.
using PointMm = Eigen::Vector3d;

enum class VolumeKind { intensity, mask };

/// On-disk element type of a MetaImage volume.
enum class ElementType { uint8, int16, float32 };

inline constexpr double kIntensityFill = -1000.0;  // air, HU
inline constexpr double kMaskFill = 0.0;

/// Dense 3D scalar grid with physical geometry, x-fastest ordering.
///
/// Voxel (i,j,k) sits at origin + (i,j,k)*spacing. A voxel owns the cell of
/// half a spacing on every side, so the physical extent of the grid is
/// [origin - spacing/2, origin + (dims - 1/2)*spacing].
struct Volume {
    std::array<int, 3> dims{0, 0, 0};
    Eigen::Vector3d spacing{1.0, 1.0, 1.0};
    Eigen::Vector3d origin{0.0, 0.0, 0.0};
    VolumeKind kind = VolumeKind::intensity;
    ElementType element_type = ElementType::int16;
    std::vector<float> data;

    Volume() = default;
    Volume(std::array<int, 3> dims, Eigen::Vector3d spacing, Eigen::Vector3d origin,
           VolumeKind kind, float value = 0.0F);

    [[nodiscard]] std::size_t voxel_count() const noexcept {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    [[nodiscard]] std::size_t linear_index(int i, int j, int k) const noexcept {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) +
                                                     static_cast<std::size_t>(dims[1]) * k);
    }
    [[nodiscard]] float at(int i, int j, int k) const { return data[linear_index(i, j, k)]; }
    float& at(int i, int j, int k) { return data[linear_index(i, j, k)]; }

    [[nodiscard]] PointMm physical(double i, double j, double k) const {
        return origin + Eigen::Vector3d(i, j, k).cwiseProduct(spacing);
    }
    /// Continuous voxel index of a physical point.
    [[nodiscard]] Eigen::Vector3d continuous_index(const PointMm& p) const {
        return (p - origin).cwiseQuotient(spacing);
    }
    [[nodiscard]] double default_fill() const noexcept {
        return kind == VolumeKind::mask ? kMaskFill : kIntensityFill;
    }
    [[nodiscard]] bool is_mask() const noexcept { return kind == VolumeKind::mask; }

    /// Throws ArgumentError when dims/spacing/data length or mask binarity are violated.
    void validate() const;
};

struct WriteOptions {
    bool big_endian = false;
};

/// Reads a MetaImage-subset header (`Key = Value` lines) and its raw data file.
Volume read_volume(const std::filesystem::path& header_path);

/// Writes `<stem>.mhd` at header_path plus `<stem>.raw` next to it.
/// Integer element types round to nearest.
void write_volume(const Volume& v, const std::filesystem::path& header_path,
                  const WriteOptions& options = {});

/// Trilinear blend of the 8 voxels around p. Inside the half-voxel border the
/// nearest edge value is used; points outside the physical extent return
/// `fill` (defaults to the kind's fill value).
double trilinear_sample(const Volume& v, const PointMm& p,
                        std::optional<double> fill = std::nullopt);

/// Nearest-voxel lookup with the same extent rule as trilinear_sample.
double nearest_sample(const Volume& v, const PointMm& p,
                      std::optional<double> fill = std::nullopt);

/// Resample onto an isotropic grid of spacing t with the same origin;
/// dims = ceil(dims * spacing / t). Output samples past the last source voxel
/// centre take the edge value. Intensity volumes are interpolated
/// trilinearly and stored as float32; masks use nearest neighbour.
Volume resample_isotropic(const Volume& v, double target_spacing);

/// Foreground voxel count of a mask (value >= 0.5).
std::size_t foreground_count(const Volume& mask);

/// Mask centre of mass in physical coordinates. Throws EmptyInputError on empty masks.
PointMm mask_center_of_mass(const Volume& mask);

}  // namespace nodule
