#include "nodule/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nodule/error.hpp"
#include "nodule/log.hpp"
#include "nodule/mesh.hpp"
#include "nodule/parallel.hpp"
#include "nodule/volume.hpp"

namespace nodule {

namespace {

using nlohmann::json;

template <typename T>
T get_as(const json& j, const std::string& key) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type: " + j.dump());
    }
}

void require(bool ok, const std::string& what) {
    if (!ok) {
        throw ConfigError("config: " + what);
    }
}

std::string describe(const NoduleRecord& r) { return "record '" + r.id + "'"; }

void ensure_dir(const std::filesystem::path& p) {
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec) {
        throw IoError("cannot create directory " + p.string() + ": " + ec.message());
    }
}

std::ofstream open_out(const std::filesystem::path& p) {
    ensure_dir(p.parent_path());
    std::ofstream out(p);
    if (!out) {
        throw IoError("cannot write " + p.string());
    }
    return out;
}

// Runs fn over all records in parallel, logging and counting failures. Only
// library errors are treated as per-record failures; anything else propagates.
StageStatus for_each_record(const PipelineConfig& c, const std::vector<NoduleRecord>& records,
                            const char* stage, const std::function<void(std::size_t)>& fn) {
    StageStatus status;
    status.total = static_cast<int>(records.size());
    std::mutex m;
    parallel_for(records.size(), c.jobs, [&](std::size_t i) {
        try {
            fn(i);
        } catch (const Error& e) {
            log::warn(std::string(stage) + ": skipping " + describe(records[i]) + ": " + e.what());
            std::lock_guard lock(m);
            ++status.failed;
        }
    });
    if (status.failed > 0) {
        log::warn(std::string(stage) + ": " + std::to_string(status.failed) + " of " +
                  std::to_string(status.total) + " records skipped");
    }
    return status;
}

}  // namespace

void PipelineConfig::validate() const {
    require(iso_spacing_mm > 0.0 && std::isfinite(iso_spacing_mm), "iso_spacing_mm must be positive");
    require(smoothing_steps >= 0, "smoothing_steps must be >= 0");
    try {
        map.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("config: map: ") + e.what());
    }
    require(l_max >= 0 && l_max <= 50, "l_max must lie in [0, 50]");
    require(!sh_counts.empty(), "sh_counts must not be empty");
    for (int n : sh_counts) {
        require(n >= 1 && n <= sh_count(l_max), "sh_counts entries must lie in [1, (l_max+1)^2]");
    }
    require(roi_margin > 0.0, "roi_margin must be positive");
    require(patch_px >= 8, "patch_px must be >= 8");
    require(image_px >= 1, "image_px must be >= 1");
    require(hu_window.lo < hu_window.hi, "hu_window needs lo < hi");
    require(forest.n_trees >= 1, "forest.n_trees must be >= 1");
    require(forest.features_per_split >= 0, "forest.features_per_split must be >= 0 (0 = sqrt(d))");
    require(forest.min_leaf >= 1, "forest.min_leaf must be >= 1");
    require(k_folds >= 2, "k_folds must be >= 2");
    require(!min_annotations.empty(), "min_annotations must not be empty");
    for (int m : min_annotations) {
        require(m >= 1, "min_annotations entries must be >= 1");
    }
    require(group_threshold_mm > 0.0, "group_threshold_mm must be positive");
    require(jobs >= 0, "jobs must be >= 0");
}

PipelineConfig config_from_json(const std::string& text, PipelineConfig c) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    require(j.is_object(), "top level must be an object");
    const std::map<std::string, std::function<void(const json&)>> handlers{
        {"iso_spacing_mm", [&](const json& v) { c.iso_spacing_mm = get_as<double>(v, "iso_spacing_mm"); }},
        {"smoothing_steps", [&](const json& v) { c.smoothing_steps = get_as<int>(v, "smoothing_steps"); }},
        {"map",
         [&](const json& v) {
             require(v.is_object(), "map must be an object");
             for (const auto& [k, x] : v.items()) {
                 if (k == "step_size") {
                     c.map.step_size = get_as<double>(x, "map.step_size");
                 } else if (k == "max_iterations") {
                     c.map.max_iterations = get_as<int>(x, "map.max_iterations");
                 } else if (k == "energy_rel_tol") {
                     c.map.energy_rel_tol = get_as<double>(x, "map.energy_rel_tol");
                 } else if (k == "normalize_every") {
                     c.map.normalize_every = get_as<int>(x, "map.normalize_every");
                 } else {
                     throw ConfigError("unknown config key 'map." + k + "'");
                 }
             }
         }},
        {"l_max", [&](const json& v) { c.l_max = get_as<int>(v, "l_max"); }},
        {"sh_counts", [&](const json& v) { c.sh_counts = get_as<std::vector<int>>(v, "sh_counts"); }},
        {"roi_margin", [&](const json& v) { c.roi_margin = get_as<double>(v, "roi_margin"); }},
        {"patch_px", [&](const json& v) { c.patch_px = get_as<int>(v, "patch_px"); }},
        {"image_px", [&](const json& v) { c.image_px = get_as<int>(v, "image_px"); }},
        {"hu_window",
         [&](const json& v) {
             const auto w = get_as<std::vector<double>>(v, "hu_window");
             require(w.size() == 2, "hu_window must be [lo, hi]");
             c.hu_window = {w[0], w[1]};
         }},
        {"forest",
         [&](const json& v) {
             require(v.is_object(), "forest must be an object");
             for (const auto& [k, x] : v.items()) {
                 if (k == "n_trees") {
                     c.forest.n_trees = get_as<int>(x, "forest.n_trees");
                 } else if (k == "features_per_split") {
                     c.forest.features_per_split = get_as<int>(x, "forest.features_per_split");
                 } else if (k == "min_leaf") {
                     c.forest.min_leaf = get_as<int>(x, "forest.min_leaf");
                 } else if (k == "max_depth") {
                     c.forest.max_depth = get_as<int>(x, "forest.max_depth");
                 } else {
                     throw ConfigError("unknown config key 'forest." + k + "'");
                 }
             }
         }},
        {"k_folds", [&](const json& v) { c.k_folds = get_as<int>(v, "k_folds"); }},
        {"min_annotations",
         [&](const json& v) { c.min_annotations = get_as<std::vector<int>>(v, "min_annotations"); }},
        {"group_threshold_mm",
         [&](const json& v) { c.group_threshold_mm = get_as<double>(v, "group_threshold_mm"); }},
        {"seed", [&](const json& v) { c.seed = get_as<std::uint64_t>(v, "seed"); }},
        {"jobs", [&](const json& v) { c.jobs = get_as<int>(v, "jobs"); }},
        {"write_energy_traces",
         [&](const json& v) { c.write_energy_traces = get_as<bool>(v, "write_energy_traces"); }},
        {"use_baseline_appearance",
         [&](const json& v) { c.use_baseline_appearance = get_as<bool>(v, "use_baseline_appearance"); }},
        {"labels_csv", [&](const json& v) { c.labels_csv = get_as<std::string>(v, "labels_csv"); }},
        {"external_features_csv",
         [&](const json& v) { c.external_features_csv = get_as<std::string>(v, "external_features_csv"); }},
        {"output_dir", [&](const json& v) { c.output_dir = get_as<std::string>(v, "output_dir"); }},
    };
    for (const auto& [key, value] : j.items()) {
        const auto it = handlers.find(key);
        if (it == handlers.end()) {
            throw ConfigError("unknown config key '" + key + "'");
        }
        it->second(value);
    }
    c.forest.seed = c.seed;
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

std::string config_to_json(const PipelineConfig& c) {
    nlohmann::ordered_json j;
    j["iso_spacing_mm"] = c.iso_spacing_mm;
    j["smoothing_steps"] = c.smoothing_steps;
    j["map"] = {{"step_size", c.map.step_size},
                {"max_iterations", c.map.max_iterations},
                {"energy_rel_tol", c.map.energy_rel_tol},
                {"normalize_every", c.map.normalize_every}};
    j["l_max"] = c.l_max;
    j["sh_counts"] = c.sh_counts;
    j["roi_margin"] = c.roi_margin;
    j["patch_px"] = c.patch_px;
    j["image_px"] = c.image_px;
    j["hu_window"] = {c.hu_window.lo, c.hu_window.hi};
    j["forest"] = {{"n_trees", c.forest.n_trees},
                   {"features_per_split", c.forest.features_per_split},
                   {"min_leaf", c.forest.min_leaf},
                   {"max_depth", c.forest.max_depth}};
    j["k_folds"] = c.k_folds;
    j["min_annotations"] = c.min_annotations;
    j["group_threshold_mm"] = c.group_threshold_mm;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["write_energy_traces"] = c.write_energy_traces;
    j["use_baseline_appearance"] = c.use_baseline_appearance;
    j["labels_csv"] = c.labels_csv.string();
    j["external_features_csv"] = c.external_features_csv.string();
    j["output_dir"] = c.output_dir.string();
    return j.dump(2);
}

ShapeResult shape_from_mesh(const TriMesh& mesh, const PipelineConfig& c) {
    if (!check_genus_zero(mesh)) {
        throw TopologyError("surface is not a closed genus-zero manifold (Euler characteristic " +
                            std::to_string(euler_characteristic(mesh)) + ")");
    }
    ShapeResult r;
    r.mesh = mesh;
    r.map = conformal_map_traced(mesh, c.map);
    r.param = r.map.param;
    r.coeffs = fit_coefficients(mesh, r.param, c.l_max);
    r.rms_error = reconstruct(r.coeffs, r.param, mesh).rms_error;
    return r;
}

ShapeResult shape_from_mask(const Volume& mask, const PipelineConfig& c) {
    if (!mask.is_mask()) {
        throw ArgumentError("shape extraction expects a binary mask");
    }
    const Volume iso = resample_isotropic(mask, c.iso_spacing_mm);
    TriMesh mesh = laplacian_smooth(fill_holes(remove_islands(extract_isosurface(iso))), c.smoothing_steps);
    const PointMm center = mask_center_of_mass(iso);
    for (auto& v : mesh.vertices) {
        v -= center;
    }
    return shape_from_mesh(mesh, c);
}

StageStatus run_shape_stage(const PipelineConfig& c, const std::vector<NoduleRecord>& records) {
    const OutputLayout out{c.output_dir};
    if (c.write_energy_traces) {
        ensure_dir(out.traces_dir());
    }
    struct Row {
        bool ok = false;
        ShCoeffs coeffs;
        int vertices = 0, iterations = 0;
        bool converged = false;
        double energy = 0.0, rms = 0.0;
    };
    std::vector<Row> rows(records.size());
    const auto status = for_each_record(c, records, "shape", [&](std::size_t i) {
        const Volume mask = read_volume(records[i].mask_path);
        if (!mask.is_mask()) {
            throw FormatError(records[i].mask_path.string() + " is not a binary mask");
        }
        ShapeResult s = shape_from_mask(mask, c);
        if (c.write_energy_traces) {
            write_energy_trace(s.map.trace, out.traces_dir() / (records[i].id + "_energy.csv"));
        }
        rows[i] = {true, std::move(s.coeffs), s.mesh.vertex_count(), s.map.iterations, s.map.converged,
                   s.map.trace.empty() ? 0.0 : s.map.trace.back().energy, s.rms_error};
    });

    auto coeff_out = open_out(out.coefficients());
    write_coefficients_header(coeff_out);
    auto diag = open_out(out.shape_diagnostics());
    diag << "id,status,vertices,iterations,converged,energy,rms_error\n";
    char buf[96];
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Row& r = rows[i];
        if (!r.ok) {
            diag << records[i].id << ",failed,,,,,\n";
            continue;
        }
        write_coefficients_csv(coeff_out, records[i].id, r.coeffs);
        std::snprintf(buf, sizeof buf, "%d,%d,%d,%.9g,%.9g", r.vertices, r.iterations, r.converged ? 1 : 0,
                      r.energy, r.rms);
        diag << records[i].id << ",ok," << buf << '\n';
    }
    return status;
}

StageStatus run_patches_stage(const PipelineConfig& c, const std::vector<NoduleRecord>& records) {
    const OutputLayout out{c.output_dir};
    ensure_dir(out.patches_dir());
    // The ROI edge is shared by the whole corpus: the largest nodule sets it.
    std::vector<double> edges(records.size(), 0.0);
    parallel_for(records.size(), c.jobs, [&](std::size_t i) {
        try {
            edges[i] = bounding_box_edge(read_volume(records[i].mask_path));
        } catch (const Error&) {
            edges[i] = 0.0;  // reported by the main pass below
        }
    });
    const double edge = *std::max_element(edges.begin(), edges.end()) * c.roi_margin;
    if (!(edge > 0.0)) {
        throw EmptyInputError("no readable non-empty mask in the corpus");
    }
    std::mutex io;
    return for_each_record(c, records, "patches", [&](std::size_t i) {
        const NoduleRecord& r = records[i];
        const Volume mask = read_volume(r.mask_path);
        if (!mask.is_mask()) {
            throw FormatError(r.mask_path.string() + " is not a binary mask");
        }
        const PointMm center = mask_center_of_mass(mask);
        const PcaAxes axes = pca_axes(mask);
        const Volume volume = read_volume(r.volume_path);
        PatchSet ps = extract_triplanar(volume, center, axes.axes, edge, c.patch_px);
        ps.axes_fallback = axes.fallback;
        const RgbImage img = montage_rgb(ps, c.hu_window, c.image_px);
        std::lock_guard lock(io);
        write_patch_outputs(out.patches_dir(), r.id, img, ps, c.hu_window);
    });
}

StageStatus run_baseline_features_stage(const PipelineConfig& c, const std::vector<NoduleRecord>& records) {
    const OutputLayout out{c.output_dir};
    std::vector<std::optional<FeatureVector>> rows(records.size());
    const auto status = for_each_record(c, records, "features-baseline", [&](std::size_t i) {
        const RgbImage img = read_png(out.patches_dir() / (records[i].id + "_rgb.png"));
        rows[i] = baseline_appearance(img, records[i].id);
    });
    auto f = open_out(out.baseline_features());
    for (const auto& r : rows) {
        if (r) {
            write_feature_row(f, *r);
        }
    }
    return status;
}

std::map<std::string, std::vector<double>> load_appearance(const PipelineConfig& c) {
    FeatureMap fm;
    if (!c.external_features_csv.empty()) {
        fm = load_external_features(c.external_features_csv);
    } else if (c.use_baseline_appearance) {
        const OutputLayout out{c.output_dir};
        if (std::filesystem::exists(out.baseline_features())) {
            fm = load_features_csv(out.baseline_features(), FeatureSource::appearance_baseline);
        }
    }
    std::map<std::string, std::vector<double>> m;
    for (auto& [id, f] : fm) {
        m.emplace(id, std::move(f.values));
    }
    return m;
}

std::map<std::string, ShCoeffs> load_shape(const PipelineConfig& c) {
    const OutputLayout out{c.output_dir};
    std::map<std::string, ShCoeffs> m;
    if (!std::filesystem::exists(out.coefficients())) {
        return m;
    }
    for (auto& [id, coeffs] : read_coefficients_csv(out.coefficients())) {
        m.emplace(id, std::move(coeffs));
    }
    return m;
}

std::optional<std::vector<double>> mode_features(Mode mode, int n_sh, const std::string& id,
                                                 const std::map<std::string, ShCoeffs>& shape,
                                                 const std::map<std::string, std::vector<double>>& appearance) {
    std::vector<double> v;
    if (mode != Mode::appearance_only) {
        const auto it = shape.find(id);
        if (it == shape.end()) {
            return std::nullopt;
        }
        v = truncate(it->second, n_sh);
    }
    if (mode != Mode::shape_only) {
        const auto it = appearance.find(id);
        if (it == appearance.end()) {
            return std::nullopt;
        }
        v.insert(v.end(), it->second.begin(), it->second.end());
    }
    return v;
}

Mode parse_mode(const std::string& name) {
    for (Mode m : {Mode::shape_only, Mode::appearance_only, Mode::hybrid}) {
        if (name == mode_name(m)) {
            return m;
        }
    }
    throw ConfigError("unknown mode '" + name + "' (shape_only, appearance_only, hybrid)");
}

namespace {

void check_sources(Mode mode, int n_sh, const std::map<std::string, ShCoeffs>& shape,
                   const std::map<std::string, std::vector<double>>& appearance) {
    if (mode != Mode::appearance_only) {
        if (shape.empty()) {
            throw ConfigError("no shape coefficients found; run the shape stage first");
        }
        const int per_channel = shape.begin()->second.per_channel_count();
        if (n_sh < 1 || n_sh > per_channel) {
            throw ConfigError("n_sh " + std::to_string(n_sh) + " outside [1, " + std::to_string(per_channel) + "]");
        }
    }
    if (mode != Mode::shape_only && appearance.empty()) {
        throw ConfigError("no appearance features: give an external feature CSV or run features-baseline");
    }
}

}  // namespace

Forest run_train(const PipelineConfig& c, const std::vector<NoduleRecord>& records, Mode mode, int n_sh) {
    const auto shape = load_shape(c);
    const auto appearance = load_appearance(c);
    check_sources(mode, n_sh, shape, appearance);
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (const auto& r : records) {
        if (auto f = mode_features(mode, n_sh, r.id, shape, appearance)) {
            x.push_back(std::move(*f));
            y.push_back(r.rating);
        }
    }
    if (x.size() < 2) {
        throw ConfigError("fewer than two records have the features required for training");
    }
    for (const auto& row : x) {
        if (row.size() != x.front().size()) {
            throw ConfigError("feature rows differ in dimension");
        }
    }
    ForestParams p = c.forest;
    p.seed = c.seed;
    Forest f = train(x, y, p, c.jobs);
    const OutputLayout out{c.output_dir};
    ensure_dir(out.forest().parent_path());
    save_forest(f, out.forest());
    return f;
}

StageStatus run_predict(const PipelineConfig& c, const std::vector<NoduleRecord>& records, Mode mode,
                        int n_sh, const std::filesystem::path& forest_path) {
    const Forest forest = load_forest(forest_path);
    const auto shape = load_shape(c);
    const auto appearance = load_appearance(c);
    check_sources(mode, n_sh, shape, appearance);
    const OutputLayout out{c.output_dir};
    auto o = open_out(out.predictions());
    o << "id,rating,truth,votes\n";
    StageStatus status;
    status.total = static_cast<int>(records.size());
    for (const auto& r : records) {
        const auto f = mode_features(mode, n_sh, r.id, shape, appearance);
        if (!f) {
            log::warn("predict: no features for record '" + r.id + "'");
            ++status.failed;
            continue;
        }
        if (static_cast<int>(f->size()) != forest.d) {
            throw ConfigError("feature dimension " + std::to_string(f->size()) +
                              " does not match the forest's " + std::to_string(forest.d));
        }
        const Prediction p = predict(forest, *f);
        o << r.id << ',' << p.rating << ',' << r.rating << ',';
        bool first = true;
        for (const auto& [label, count] : p.votes) {
            o << (first ? "" : ";") << label << ':' << count;
            first = false;
        }
        o << '\n';
    }
    return status;
}

Report run_eval(const PipelineConfig& c, const std::vector<NoduleRecord>& records) {
    AblationData data;
    data.records = records;
    data.shape = load_shape(c);
    data.appearance = load_appearance(c);
    AblationConfig ac;
    ac.sh_counts = c.sh_counts;
    ac.min_annotations = c.min_annotations;
    ac.k_folds = c.k_folds;
    ac.group_threshold_mm = c.group_threshold_mm;
    ac.seed = c.seed;
    ac.forest = c.forest;
    ac.forest.seed = c.seed;
    ac.jobs = c.jobs;
    const Report report = run_ablation(data, ac);

    const OutputLayout out{c.output_dir};
    auto rep = open_out(out.report());
    write_report_csv(rep, report);
    auto sum = open_out(out.summary());
    write_summary_csv(sum, report);
    auto tab = open_out(out.table());
    tab << format_report_table(report);
    return report;
}

}  // namespace nodule
