#include "nodule/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "nodule/error.hpp"

namespace nodule {

namespace {

void channel_features(const RgbImage& img, int c, std::vector<double>& out) {
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    std::vector<double> hist(kHistogramBins, 0.0);
    double sum = 0.0;
    for (std::uint8_t v : img.channels[c]) {
        hist[v * kHistogramBins / 256] += 1.0;
        sum += v;
    }
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (std::uint8_t v : img.channels[c]) {
        var += (v - mean) * (v - mean);
    }
    for (double& h : hist) {
        h /= static_cast<double>(n);
    }
    out.insert(out.end(), hist.begin(), hist.end());
    out.push_back(mean);
    out.push_back(std::sqrt(var / static_cast<double>(n)));

    auto diff = [&](int x0, int y0, int x1, int y1, double span) {
        return (static_cast<double>(img.at(c, x1, y1)) - img.at(c, x0, y0)) / span;
    };
    std::vector<double> mag;
    mag.reserve(n);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const int xl = std::max(x - 1, 0), xr = std::min(x + 1, img.width - 1);
            const int yl = std::max(y - 1, 0), yr = std::min(y + 1, img.height - 1);
            const double gx = xr > xl ? diff(xl, y, xr, y, xr - xl) : 0.0;
            const double gy = yr > yl ? diff(x, yl, x, yr, yr - yl) : 0.0;
            mag.push_back(std::hypot(gx, gy));
        }
    }
    double gsum = 0.0;
    for (double g : mag) {
        gsum += g;
    }
    const double gmean = gsum / static_cast<double>(n);
    double gvar = 0.0;
    for (double g : mag) {
        gvar += (g - gmean) * (g - gmean);
    }
    out.push_back(gmean);
    out.push_back(std::sqrt(gvar / static_cast<double>(n)));
}

std::string line_ref(const std::filesystem::path& path, int line) {
    return path.string() + ":" + std::to_string(line);
}

}  // namespace

FeatureVector baseline_appearance(const RgbImage& rgb, const std::string& id) {
    if (rgb.width <= 0 || rgb.height <= 0) {
        throw ArgumentError("baseline_appearance: empty image");
    }
    FeatureVector f;
    f.id = id;
    f.source = FeatureSource::appearance_baseline;
    f.values.reserve(3 * kBaselinePerChannel);
    for (int c = 0; c < 3; ++c) {
        channel_features(rgb, c, f.values);
    }
    return f;
}

FeatureMap load_features_csv(const std::filesystem::path& path, FeatureSource source) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open feature file " + path.string());
    }
    FeatureMap out;
    std::size_t width = 0;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string field;
        FeatureVector f;
        f.source = source;
        std::getline(ss, f.id, ',');
        if (f.id.empty()) {
            throw FormatError(line_ref(path, line_no) + ": empty id");
        }
        while (std::getline(ss, field, ',')) {
            double v = 0.0;
            const char* end = field.data() + field.size();
            const auto res = std::from_chars(field.data(), end, v);
            if (res.ec != std::errc() || res.ptr != end || field.empty() || !std::isfinite(v)) {
                throw FormatError(line_ref(path, line_no) + ": non-numeric value '" + field + "'");
            }
            f.values.push_back(v);
        }
        if (line.back() == ',') {
            throw FormatError(line_ref(path, line_no) + ": trailing empty field");
        }
        if (out.empty()) {
            width = f.values.size();
        } else if (f.values.size() != width) {
            throw FormatError(line_ref(path, line_no) + ": ragged row with " +
                              std::to_string(f.values.size()) + " values, expected " +
                              std::to_string(width));
        }
        const std::string id = f.id;
        if (!out.emplace(id, std::move(f)).second) {
            throw FormatError(line_ref(path, line_no) + ": duplicate id '" + id + "'");
        }
    }
    return out;
}

FeatureMap load_external_features(const std::filesystem::path& path) {
    return load_features_csv(path, FeatureSource::appearance_external);
}

void write_feature_row(std::ostream& out, const FeatureVector& f) {
    out << f.id;
    char buf[32];
    for (double v : f.values) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        out << ',' << buf;
    }
    out << '\n';
}

void save_features_csv(const std::filesystem::path& path, const std::vector<FeatureVector>& rows) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write feature file " + path.string());
    }
    for (const auto& f : rows) {
        write_feature_row(out, f);
    }
}

FeatureVector fuse(const FeatureVector& shape, const FeatureVector& appearance) {
    if (shape.id != appearance.id) {
        throw ArgumentError("fuse: id mismatch '" + shape.id + "' vs '" + appearance.id + "'");
    }
    FeatureVector f;
    f.id = shape.id;
    f.source = FeatureSource::fused;
    f.values = shape.values;
    f.values.insert(f.values.end(), appearance.values.begin(), appearance.values.end());
    return f;
}

}  // namespace nodule
