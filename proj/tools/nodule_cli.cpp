// Command-line front end: synth, shape, patches, features-baseline, train, predict, eval.
//
// Exit codes: 0 ok, 2 input error, 3 more than 10% of records failed, 4 configuration error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "nodule/error.hpp"
#include "nodule/eval.hpp"
#include "nodule/log.hpp"
#include "nodule/pipeline.hpp"
#include "nodule/synth.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitRecords = 3;
constexpr int kExitConfig = 4;

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::string out;
    std::string labels;
    std::string features;
    std::string log_level = "warn";
    bool energy_trace = false;
};

nodule::PipelineConfig resolve_config(const Globals& g) {
    nodule::PipelineConfig c = g.config_path.empty() ? nodule::PipelineConfig{} : nodule::load_config(g.config_path);
    if (g.seed) {
        c.seed = *g.seed;
    }
    c.forest.seed = c.seed;
    if (g.jobs) {
        c.jobs = *g.jobs;
    }
    if (!g.out.empty()) {
        c.output_dir = g.out;
    }
    if (!g.labels.empty()) {
        c.labels_csv = g.labels;
    }
    if (!g.features.empty()) {
        c.external_features_csv = g.features;
    }
    if (g.energy_trace) {
        c.write_energy_traces = true;
    }
    c.validate();
    return c;
}

std::vector<nodule::NoduleRecord> load_records(const nodule::PipelineConfig& c) {
    if (c.labels_csv.empty()) {
        throw nodule::ArgumentError("no labels CSV: pass --labels or set labels_csv in the config");
    }
    return nodule::read_labels_csv(c.labels_csv);
}

int stage_exit(const char* stage, const nodule::StageStatus& s) {
    std::cout << stage << ": " << (s.total - s.failed) << " of " << s.total << " records processed\n";
    return s.excessive() ? kExitRecords : kExitOk;
}

void set_log_level(const std::string& level) {
    using nodule::log::Level;
    if (level == "debug") {
        nodule::log::threshold() = Level::debug;
    } else if (level == "info") {
        nodule::log::threshold() = Level::info;
    } else if (level == "warn") {
        nodule::log::threshold() = Level::warn;
    } else if (level == "error") {
        nodule::log::threshold() = Level::error;
    } else {
        nodule::log::threshold() = Level::off;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lung nodule shape and appearance pipeline"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "JSON configuration file");
    app.add_option("--seed", g.seed, "Random seed (overrides config)");
    app.add_option("--jobs", g.jobs, "Worker threads, 0 = all cores (overrides config)");
    app.add_option("--out", g.out, "Output directory (overrides config)");
    app.add_option("--log-level", g.log_level, "debug, info, warn, error or off")
        ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

    int n_per_class = 10;
    double spread = nodule::SynthOptions{}.latent_spread;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus (volumes, masks, labels.csv)");
    synth->add_option("--n", n_per_class, "Nodules per rating class")->check(CLI::PositiveNumber);
    synth->add_option("--latent-spread", spread, "Offset half-width between shape and texture latents");

    std::string mode_name = "hybrid";
    int n_sh = 150;
    std::string forest_path;
    auto add_labels = [&](CLI::App* sub) { sub->add_option("--labels", g.labels, "Labels CSV"); };
    auto* shape = app.add_subcommand("shape", "Fit spherical-harmonic coefficients for every record");
    auto* patches = app.add_subcommand("patches", "Write tri-planar RGB patches and sidecars");
    auto* feats = app.add_subcommand("features-baseline", "Baseline appearance features from the patches");
    auto* train = app.add_subcommand("train", "Train a forest on all records");
    auto* predict = app.add_subcommand("predict", "Predict ratings with a saved forest");
    auto* eval = app.add_subcommand("eval", "Grouped k-fold ablation over modes, counts and filters");
    for (auto* sub : {shape, patches, feats, train, predict, eval}) {
        add_labels(sub);
    }
    shape->add_flag("--energy-trace", g.energy_trace, "Write per-record energy traces under shape/traces");
    for (auto* sub : {train, predict, eval}) {
        sub->add_option("--features", g.features, "External appearance feature CSV (id,v0,...)");
    }
    for (auto* sub : {train, predict}) {
        sub->add_option("--mode", mode_name, "shape_only, appearance_only or hybrid");
        sub->add_option("--n-sh", n_sh, "Coefficients per channel");
    }
    predict->add_option("--forest", forest_path, "Forest file (default: <out>/model/forest.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitInput;
    }
    set_log_level(g.log_level);

    try {
        const nodule::PipelineConfig c = resolve_config(g);
        if (synth->parsed()) {
            nodule::SynthOptions o;
            o.n_per_class = n_per_class;
            o.seed = c.seed;
            o.latent_spread = spread;
            const auto records = nodule::write_corpus(o, c.output_dir, c.jobs);
            std::cout << "synth: " << records.size() << " segmentations of " << records.size() / 2
                      << " nodules written to " << c.output_dir.string() << '\n';
            return kExitOk;
        }
        const auto records = load_records(c);
        if (shape->parsed()) {
            return stage_exit("shape", nodule::run_shape_stage(c, records));
        }
        if (patches->parsed()) {
            return stage_exit("patches", nodule::run_patches_stage(c, records));
        }
        if (feats->parsed()) {
            return stage_exit("features-baseline", nodule::run_baseline_features_stage(c, records));
        }
        if (train->parsed()) {
            const auto f = nodule::run_train(c, records, nodule::parse_mode(mode_name), n_sh);
            std::cout << "train: " << f.trees.size() << " trees, d = " << f.d << ", saved to "
                      << nodule::OutputLayout{c.output_dir}.forest().string() << '\n';
            return kExitOk;
        }
        if (predict->parsed()) {
            const std::filesystem::path fp =
                forest_path.empty() ? nodule::OutputLayout{c.output_dir}.forest() : std::filesystem::path(forest_path);
            return stage_exit("predict", nodule::run_predict(c, records, nodule::parse_mode(mode_name), n_sh, fp));
        }
        if (eval->parsed()) {
            const auto report = nodule::run_eval(c, records);
            std::cout << nodule::format_report_table(report);
            return kExitOk;
        }
    } catch (const nodule::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const nodule::Error& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitInput;
}
