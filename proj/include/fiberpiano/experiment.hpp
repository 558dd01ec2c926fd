#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fiberpiano/fiber.hpp"
#include "fiberpiano/metrics.hpp"
#include "fiberpiano/modes.hpp"
#include "fiberpiano/optimize.hpp"
#include "fiberpiano/quantum.hpp"

namespace fiberpiano {

inline constexpr const char* kVersion = FIBERPIANO_VERSION;

/// Detector position in the detection plane behind the imaging optics, in micrometres.
/// The collection fiber core diameter sets the collection-mode radius.
struct DetectorPlacement {
    double x_um = 0.0;
    double y_um = 0.0;
    double core_diameter_um = 50.0;

    bool operator==(const DetectorPlacement&) const = default;
};

/// Raster of the scanning detector in the detection plane.
struct ScanSpec {
    double center_x_um = 0.0;
    double center_y_um = 0.0;
    double step_um = 25.0;
    int nx = 21;
    int ny = 21;
    double core_diameter_um = 50.0;

    bool operator==(const ScanSpec&) const = default;
};

struct ActuatorSettings {
    int count = 37;
    double coupling_strength = 0.8;
    double loss_coefficient = 0.03;
    LossModel loss_model = LossModel::Uniform;
    std::uint64_t bank_seed = 1;
    std::uint64_t segment_seed = 2;

    bool operator==(const ActuatorSettings&) const = default;
};

struct StateSettings {
    double schmidt_number = 15.0;
    SpectrumKind spectrum = SpectrumKind::Geometric;
    Configuration configuration = Configuration::Heralded;

    bool operator==(const StateSettings&) const = default;
};

struct DetectorSettings {
    /// Detection-plane micrometres per fiber-facet micrometre.
    double magnification = 12.5;
    DetectorPlacement herald{37.5, 25.0, 50.0};
    DetectorPlacement fixed{-50.0, 0.0, 50.0};
    std::vector<DetectorPlacement> targets{{50.0, 0.0, 50.0}, {-25.0, 75.0, 50.0}};
    ScanSpec scan;

    bool operator==(const DetectorSettings&) const = default;
};

struct CountSettings {
    double pair_rate_hz = 40000.0;
    double integration_time_s = 5.0;
    bool poisson = false;

    double scale() const { return pair_rate_hz * integration_time_s; }
    bool operator==(const CountSettings&) const = default;
};

struct EnsembleSettings {
    int baseline_samples = 100;
    std::uint64_t baseline_seed = 3;
    bool full_aperture_totals = false;

    bool operator==(const EnsembleSettings&) const = default;
};

/// The Schmidt protocol runs on its own, larger mode set: the contrast-ratio estimator is
/// biased when the fiber supports only a few times K modes.
struct SchmidtSettings {
    int samples = 1900;
    std::uint64_t seed = 4;
    int mode_count = 189;
    double grid_side_um = 80.0;
    int grid_samples_per_side = 128;

    bool operator==(const SchmidtSettings&) const = default;
};

struct RunSettings {
    int workers = 1;
    std::string output_dir = "fiberpiano-out";

    bool operator==(const RunSettings&) const = default;
};

struct ExperimentConfig {
    FiberSpec fiber;
    GridSpec grid;
    ActuatorSettings actuators;
    StateSettings state;
    DetectorSettings detectors;
    CostVariant cost_variant = CostVariant::SingleSpot;
    double alpha = 0.04;
    CountSettings counts;
    PsoConfig pso;
    EnsembleSettings ensembles;
    SchmidtSettings schmidt;
    RunSettings run;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Desk-scale default: 30 modes, K = 15, 37 actuators, heralded single-spot focusing.
ExperimentConfig default_config();

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
/// Validates every field. Throws ConfigError naming the offending path, e.g. "pso.inertia".
/// Missing fields keep their defaults; unknown fields are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// JSON text with a // comment above every field.
std::string config_to_commented_text(const ExperimentConfig& cfg);
/// Parses a config document or a run manifest (its "config" member). Comments are allowed.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Cross-field checks that need no simulation (mode capacity, targets on the scan raster...).
void validate_config(const ExperimentConfig& cfg);

/// Replaces every seed with a stream derived from `root`.
void override_seeds(ExperimentConfig& cfg, std::uint64_t root);

/// FNV-1a of the compact JSON dump.
std::uint64_t config_hash(const ExperimentConfig& cfg);

/// Simulation objects built from a config. Rates returned here are expected counts per acquisition.
class Experiment {
public:
    explicit Experiment(const ExperimentConfig& cfg);

    const ExperimentConfig& config() const { return cfg_; }
    const ModeBasis& basis() const { return *basis_; }
    const FiberModel& fiber() const { return *fiber_; }
    const TwoPhotonState& state() const { return state_; }
    const CostContext& context() const { return *context_; }
    const ScanGrid& scan() const { return scan_; }
    double collection_radius_um() const { return scan_radius_um_; }
    const std::vector<DetectorSpec>& targets() const { return targets_; }

    DetectorSpec to_facet(const DetectorPlacement& p, DetectorRole role) const;

    DetectionMap singles_map(std::span<const double> v) const;
    /// Heralded coincidences, or coincidences with the fixed detector in the two-photon configuration.
    DetectionMap coincidence_map(std::span<const double> v) const;
    /// Coincidence total over the whole output plane, in counts.
    double full_aperture_total(std::span<const double> v) const;

    /// Quantity an enhancement is quoted for: coincidences at target i, or SMF coupling.
    CostFunction measured(int target) const;
    CostFunction measured_singles(int target) const;

private:
    ExperimentConfig cfg_;
    std::shared_ptr<const ModeBasis> basis_;
    std::shared_ptr<const FiberModel> fiber_;
    TwoPhotonState state_;
    std::unique_ptr<CostContext> context_;
    ScanGrid scan_;
    double scan_radius_um_ = 0.0;
    std::vector<DetectorSpec> targets_;
};

struct SpeckleResult {
    DetectionMap singles;
    DetectionMap coincidences;
    double singles_contrast = 0.0;       ///< spatial, over the scan raster
    double coincidence_contrast = 0.0;
};

struct OptimizeResult {
    OptimizationRun run;
    DisorderStats baseline;                 ///< measured quantity at the first target
    std::vector<DisorderStats> spot_baselines;  ///< per target (two-spot)
    DisorderStats singles_baseline;
    EnhancementReport report;
    std::vector<double> spot_values;        ///< measured quantity per target at the optimum
    std::vector<double> spot_enhancements;
    double imbalance = 0.0;                 ///< |c1 - c2| / max(c1, c2) for two-spot
    std::optional<int> five_fold_iteration;  ///< first iteration whose best reaches 5x the baseline
    DetectionMap singles_before, singles_after, coincidences_before, coincidences_after;
};

struct SchmidtResult {
    int samples = 0;
    int modes = 0;
    double singles_contrast = 0.0;
    double coincidence_contrast = 0.0;
    double singles_modes = 0.0;
    double coincidence_modes = 0.0;
    double schmidt_estimate = 0.0;
    std::vector<double> singles;
    std::vector<double> coincidences;
};

SpeckleResult run_speckle(const ExperimentConfig& cfg);
OptimizeResult run_optimize(const ExperimentConfig& cfg);
SchmidtResult run_schmidt(const ExperimentConfig& cfg);

nlohmann::ordered_json report_to_json(const OptimizeResult& r, const ExperimentConfig& cfg);
nlohmann::ordered_json schmidt_to_json(const SchmidtResult& r);

void write_map_csv(const std::filesystem::path& path, const DetectionMap& map, double magnification);
void write_trace_csv(const std::filesystem::path& path, const OptimizationRun& run);
/// 8-bit portable graymap, scaled to the map maximum.
void write_map_pgm(const std::filesystem::path& path, const DetectionMap& map);

/// Commands. Each writes its outputs plus manifest.json into `out_dir` and returns a short
/// human-readable summary.
std::string cmd_init(const std::filesystem::path& path);
std::string cmd_speckle(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);
std::string cmd_optimize(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);
std::string cmd_schmidt(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Re-runs the command recorded in a manifest into `out_dir`. `workers` > 0 overrides the
/// recorded worker count (results do not depend on it, the manifest hash does).
std::string replay_manifest(const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
                            int workers = 0);

std::string to_string(CostVariant v);
std::string to_string(Configuration c);
std::string to_string(SpectrumKind k);
std::string to_string(LossModel m);

}  // namespace fiberpiano
