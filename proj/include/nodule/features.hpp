#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "nodule/image_io.hpp"

namespace nodule {

enum class FeatureSource { shape_sh, appearance_external, appearance_baseline, fused };

struct FeatureVector {
    std::string id;
    std::vector<double> values;
    FeatureSource source = FeatureSource::shape_sh;
};

inline constexpr int kHistogramBins = 32;
inline constexpr int kBaselinePerChannel = kHistogramBins + 4;

/// Per channel: normalised 32-bin histogram, mean, std, then mean and std of the
/// central-difference gradient magnitude (one-sided at the border). 108 values.
FeatureVector baseline_appearance(const RgbImage& rgb, const std::string& id = {});

using FeatureMap = std::map<std::string, FeatureVector>;

/// Header-free `id,v0,...` rows. Ragged rows, duplicate ids and non-numeric
/// fields raise FormatError naming the line.
FeatureMap load_features_csv(const std::filesystem::path& path, FeatureSource source);
FeatureMap load_external_features(const std::filesystem::path& path);

/// Values printed with 9 significant digits.
void write_feature_row(std::ostream& out, const FeatureVector& f);
void save_features_csv(const std::filesystem::path& path, const std::vector<FeatureVector>& rows);

/// Shape then appearance. Throws ArgumentError when the ids differ.
FeatureVector fuse(const FeatureVector& shape, const FeatureVector& appearance);

}  // namespace nodule
