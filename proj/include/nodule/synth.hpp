#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nodule/eval.hpp"
#include "nodule/volume.hpp"

namespace nodule {

struct SynthOptions {
    int n_per_class = 10;
    std::uint64_t seed = 0;
    std::array<int, 3> dims{56, 56, 28};
    Eigen::Vector3d spacing{0.7, 0.7, 1.4};
    /// Half-width of the offset between the shape and texture latents.
    double latent_spread = 1.2;
};

/// Everything needed to render one nodule and its two segmentations.
struct SynthNodule {
    int index = 0;
    int rating = 0;
    double spikiness = 0.0;  // shape latent, rating + offset
    double contrast = 0.0;   // texture latent, rating - offset
    double radius_mm = 0.0;
    PointMm center = PointMm::Zero();
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    std::uint64_t seed = 0;
    std::array<std::string, 2> annotators;
};

/// Deterministic corpus plan: n_per_class nodules for each rating 1..5, in
/// rating-major order, each with its own volume origin 100 mm from the next.
std::vector<SynthNodule> plan_corpus(const SynthOptions& options);

/// Lobulation amplitude (mm) and spike height (mm) both grow with spikiness.
double synth_radius(const SynthNodule& n, const Eigen::Vector3d& direction);

/// Lung background near -850 HU with a textured soft-tissue nodule whose
/// standard deviation grows with the contrast latent.
Volume render_intensity(const SynthNodule& n, const SynthOptions& options);

/// Segmentation 0 or 1: the nodule surface shifted by a small per-annotator
/// radial offset and smooth wobble.
Volume render_mask(const SynthNodule& n, const SynthOptions& options, int segmentation);

/// Writes volumes/, masks/ and labels.csv under out_dir; returns the records.
std::vector<NoduleRecord> write_corpus(const SynthOptions& options, const std::filesystem::path& out_dir,
                                       int jobs = 1);

}  // namespace nodule
