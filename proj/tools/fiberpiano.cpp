// fiberpiano command-line front end: init, speckle, optimize, schmidt, replay.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fiberpiano/errors.hpp"
#include "fiberpiano/experiment.hpp"

namespace fp = fiberpiano;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::string out;
    std::string variant;
};

void add_common(CLI::App* cmd, Common& c, bool with_variant) {
    cmd->add_option("--config", c.config, "Configuration file (JSON, comments allowed) or run manifest");
    cmd->add_option("--seed", c.seed, "Root seed; replaces every seed in the configuration");
    cmd->add_option("--workers", c.workers, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out", c.out, "Output directory (default: $FIBERPIANO_OUT, then run.output_dir)");
    if (with_variant)
        cmd->add_option("--variant", c.variant, "Override cost.variant")
            ->check(CLI::IsMember({"single_spot", "two_spot", "smf_coupling", "singles_feedback"}));
}

fp::ExperimentConfig resolve(const Common& c) {
    fp::ExperimentConfig cfg = c.config.empty() ? fp::default_config() : fp::load_config(c.config);
    if (c.seed) fp::override_seeds(cfg, *c.seed);
    if (c.workers) cfg.run.workers = cfg.pso.workers = *c.workers;
    if (!c.variant.empty()) {
        nlohmann::json j = fp::config_to_json(cfg);
        j["cost"]["variant"] = c.variant;
        cfg = fp::config_from_json(j);
    }
    fp::validate_config(cfg);
    return cfg;
}

std::string output_dir(const Common& c, const fp::ExperimentConfig& cfg) {
    if (!c.out.empty()) return c.out;
    if (const char* env = std::getenv("FIBERPIANO_OUT"); env && *env) return env;
    return cfg.run.output_dir;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fiber-piano simulator: shaping heralded photons and two-photon speckle through a multimode fiber"};
    app.set_version_flag("--version", std::string(fp::kVersion));
    app.require_subcommand(1);

    std::string init_path = "fiberpiano.json";
    auto* init = app.add_subcommand("init", "Write the default configuration with comments");
    init->add_option("path", init_path, "Destination file");

    Common speckle_opts, optimize_opts, schmidt_opts;
    auto* speckle = app.add_subcommand("speckle", "Singles and coincidence maps before optimization");
    add_common(speckle, speckle_opts, false);
    auto* optimize = app.add_subcommand("optimize", "Disorder baseline, swarm optimization and enhancement report");
    add_common(optimize, optimize_opts, true);
    auto* schmidt = app.add_subcommand("schmidt", "Schmidt-number estimate from contrast over random configurations");
    add_common(schmidt, schmidt_opts, false);

    std::string manifest, replay_out;
    int replay_workers = 0;
    auto* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
    replay->add_option("manifest", manifest, "manifest.json of a previous run")->required();
    replay->add_option("--out", replay_out, "Output directory")->required();
    replay->add_option("--workers", replay_workers, "Worker threads (default: as recorded)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*init) {
            std::cout << fp::cmd_init(init_path);
        } else if (*speckle) {
            const auto cfg = resolve(speckle_opts);
            std::cout << fp::cmd_speckle(cfg, output_dir(speckle_opts, cfg));
        } else if (*optimize) {
            const auto cfg = resolve(optimize_opts);
            std::cout << fp::cmd_optimize(cfg, output_dir(optimize_opts, cfg));
        } else if (*schmidt) {
            const auto cfg = resolve(schmidt_opts);
            std::cout << fp::cmd_schmidt(cfg, output_dir(schmidt_opts, cfg));
        } else if (*replay) {
            std::cout << fp::replay_manifest(manifest, replay_out, replay_workers);
        }
    } catch (const fp::ConfigError& e) {
        std::cerr << "fiberpiano: configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "fiberpiano: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
