#include "nodule/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "nodule/error.hpp"
#include "nodule/parallel.hpp"
#include "nodule/random.hpp"

namespace nodule {

namespace {

constexpr double kNoduleSpacingMm = 100.0;  // keeps distinct nodules far beyond the grouping threshold
constexpr double kLatentMin = 0.3;
constexpr double kLatentMax = 5.7;
constexpr int kSpikes = 6;
constexpr int kTextureWaves = 16;
const std::array<std::string, 4> kAnnotators{"r1", "r2", "r3", "r4"};

// Stream tags so each aspect of a nodule draws from its own generator.
enum Stream : std::uint64_t { spikes = 1, texture = 2, background = 3, segmentation = 16 };

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

Rng stream(const SynthNodule& n, std::uint64_t tag) { return Rng(splitmix64(n.seed ^ splitmix64(tag))); }

Eigen::Vector3d random_direction(Rng& rng) {
    while (true) {
        const Eigen::Vector3d v(uniform_real(rng, -1, 1), uniform_real(rng, -1, 1), uniform_real(rng, -1, 1));
        const double r = v.norm();
        if (r > 1e-3 && r <= 1.0) {
            return v / r;
        }
    }
}

struct Wave {
    Eigen::Vector3d k;
    double phase;
};

std::vector<Wave> texture_waves(const SynthNodule& n) {
    Rng rng = stream(n, Stream::texture);
    std::vector<Wave> waves;
    for (int i = 0; i < kTextureWaves; ++i) {
        const double wavelength = uniform_real(rng, 2.5, 5.0);
        const Eigen::Vector3d dir = random_direction(rng);
        waves.push_back({dir * (2.0 * M_PI / wavelength), uniform_real(rng, 0.0, 2.0 * M_PI)});
    }
    return waves;
}

Eigen::Vector3d volume_center(const SynthOptions& o, const Eigen::Vector3d& origin) {
    return origin + 0.5 * Eigen::Vector3d(o.dims[0] - 1, o.dims[1] - 1, o.dims[2] - 1).cwiseProduct(o.spacing);
}

Eigen::Vector3d unit_or_z(const Eigen::Vector3d& d) {
    const double r = d.norm();
    return r > 1e-12 ? Eigen::Vector3d(d / r) : Eigen::Vector3d::UnitZ();
}

std::vector<Eigen::Vector3d> spike_directions(const SynthNodule& n) {
    Rng rng = stream(n, Stream::spikes);
    std::vector<Eigen::Vector3d> dirs;
    for (int i = 0; i < kSpikes; ++i) {
        dirs.push_back(random_direction(rng));
    }
    return dirs;
}

double radius_at(const SynthNodule& n, const std::vector<Eigen::Vector3d>& spikes, const Eigen::Vector3d& direction) {
    const Eigen::Vector3d u = unit_or_z(direction);
    const double quartic = std::pow(u.x(), 4) + std::pow(u.y(), 4) + std::pow(u.z(), 4);
    double r = n.radius_mm + 0.45 * n.spikiness * 5.0 * (quartic - 0.6);
    for (const auto& d : spikes) {
        r += 0.35 * n.spikiness * std::exp(-(1.0 - u.dot(d)) / 0.04);
    }
    return r;
}

}  // namespace

std::vector<SynthNodule> plan_corpus(const SynthOptions& options) {
    if (options.n_per_class < 1) {
        throw ArgumentError("synth needs at least one nodule per class");
    }
    Rng rng(splitmix64(options.seed));
    std::vector<SynthNodule> out;
    for (int rating = 1; rating <= 5; ++rating) {
        for (int j = 0; j < options.n_per_class; ++j) {
            SynthNodule n;
            n.index = static_cast<int>(out.size());
            n.rating = rating;
            n.seed = rng();
            const double offset = uniform_real(rng, -options.latent_spread, options.latent_spread);
            n.spikiness = std::clamp(rating + offset, kLatentMin, kLatentMax);
            n.contrast = std::clamp(rating - offset, kLatentMin, kLatentMax);
            n.radius_mm = uniform_real(rng, 7.5, 9.5);
            n.origin = Eigen::Vector3d(kNoduleSpacingMm * n.index, 0.0, 0.0);
            const Eigen::Vector3d jitter(uniform_real(rng, -1.5, 1.5), uniform_real(rng, -1.5, 1.5),
                                         uniform_real(rng, -1.5, 1.5));
            n.center = volume_center(options, n.origin) + jitter;
            const auto first = uniform_index(rng, kAnnotators.size());
            const auto second = (first + 1 + uniform_index(rng, kAnnotators.size() - 1)) % kAnnotators.size();
            n.annotators = {kAnnotators[first], kAnnotators[second]};
            out.push_back(n);
        }
    }
    return out;
}

double synth_radius(const SynthNodule& n, const Eigen::Vector3d& direction) {
    return radius_at(n, spike_directions(n), direction);
}

Volume render_intensity(const SynthNodule& n, const SynthOptions& options) {
    Volume v(options.dims, options.spacing, n.origin, VolumeKind::intensity, 0.0F);
    const auto waves = texture_waves(n);
    const auto spikes = spike_directions(n);
    const double amplitude = 12.0 + 22.0 * n.contrast;
    const double norm = std::sqrt(2.0 / kTextureWaves);
    Rng noise = stream(n, Stream::background);
    for (int k = 0; k < v.dims[2]; ++k) {
        for (int j = 0; j < v.dims[1]; ++j) {
            for (int i = 0; i < v.dims[0]; ++i) {
                const Eigen::Vector3d p = v.physical(i, j, k);
                const Eigen::Vector3d d = p - n.center;
                const double background = -850.0 + 30.0 * standard_normal(noise);
                const double dist = radius_at(n, spikes, d) - d.norm();
                const double w = std::clamp(0.5 + dist / 1.4, 0.0, 1.0);
                double hu = background;
                if (w > 0.0) {
                    double field = 0.0;
                    for (const auto& wave : waves) {
                        field += std::cos(wave.k.dot(d) + wave.phase);
                    }
                    hu = (1.0 - w) * background + w * (30.0 + amplitude * norm * field);
                }
                v.at(i, j, k) = static_cast<float>(std::round(hu));
            }
        }
    }
    return v;
}

Volume render_mask(const SynthNodule& n, const SynthOptions& options, int segmentation) {
    if (segmentation < 0 || segmentation > 1) {
        throw ArgumentError("segmentation index must be 0 or 1");
    }
    Rng rng = stream(n, Stream::segmentation + static_cast<std::uint64_t>(segmentation));
    const double offset = uniform_real(rng, -0.3, 0.3);
    const Eigen::Vector3d axis_a = random_direction(rng);
    const Eigen::Vector3d axis_b = random_direction(rng);
    const double phase_a = uniform_real(rng, 0.0, 2.0 * M_PI);
    const double phase_b = uniform_real(rng, 0.0, 2.0 * M_PI);

    const auto spikes = spike_directions(n);
    Volume m(options.dims, options.spacing, n.origin, VolumeKind::mask, 0.0F);
    for (int k = 0; k < m.dims[2]; ++k) {
        for (int j = 0; j < m.dims[1]; ++j) {
            for (int i = 0; i < m.dims[0]; ++i) {
                const Eigen::Vector3d d = m.physical(i, j, k) - n.center;
                const Eigen::Vector3d u = unit_or_z(d);
                const double wobble = 0.2 * std::cos(3.0 * u.dot(axis_a) + phase_a) +
                                      0.2 * std::cos(2.0 * u.dot(axis_b) + phase_b);
                if (d.norm() <= radius_at(n, spikes, d) + offset + wobble) {
                    m.at(i, j, k) = 1.0F;
                }
            }
        }
    }
    return m;
}

std::vector<NoduleRecord> write_corpus(const SynthOptions& options, const std::filesystem::path& out_dir,
                                       int jobs) {
    const auto plan = plan_corpus(options);
    std::filesystem::create_directories(out_dir / "volumes");
    std::filesystem::create_directories(out_dir / "masks");
    std::vector<NoduleRecord> records(2 * plan.size());
    parallel_for(plan.size(), jobs, [&](std::size_t idx) {
        const SynthNodule& n = plan[idx];
        char stem[32];
        std::snprintf(stem, sizeof stem, "n%04d", n.index + 1);
        const auto volume_path = out_dir / "volumes" / (std::string(stem) + ".mhd");
        write_volume(render_intensity(n, options), volume_path);
        for (int s = 0; s < 2; ++s) {
            const std::string id = std::string(stem) + "_s" + std::to_string(s + 1);
            const auto mask_path = out_dir / "masks" / (id + ".mhd");
            const Volume mask = render_mask(n, options, s);
            write_volume(mask, mask_path);
            NoduleRecord& r = records[2 * idx + s];
            r.id = id;
            r.rating = n.rating;
            r.annotator = n.annotators[s];
            r.center = mask_center_of_mass(mask);
            r.mask_path = mask_path;
            r.volume_path = volume_path;
        }
    });
    write_labels_csv(out_dir / "labels.csv", records);
    return records;
}

}  // namespace nodule
