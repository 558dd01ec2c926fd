#include "fiberpiano/experiment.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "fiberpiano/errors.hpp"
#include "fiberpiano/parallel.hpp"
#include "fiberpiano/random.hpp"

namespace fiberpiano {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string to_string(CostVariant v) {
    switch (v) {
        case CostVariant::SingleSpot: return "single_spot";
        case CostVariant::TwoSpot: return "two_spot";
        case CostVariant::SmfCoupling: return "smf_coupling";
        case CostVariant::SinglesFeedback: return "singles_feedback";
    }
    return "?";
}

std::string to_string(Configuration c) { return c == Configuration::Heralded ? "heralded" : "two_photon"; }
std::string to_string(SpectrumKind k) { return k == SpectrumKind::Geometric ? "geometric" : "equal_weight"; }
std::string to_string(LossModel m) { return m == LossModel::Uniform ? "uniform" : "mode_dependent"; }

ExperimentConfig default_config() { return ExperimentConfig{}; }

namespace {

ordered_json placement_json(const DetectorPlacement& p) {
    return {{"x_um", p.x_um}, {"y_um", p.y_um}, {"core_diameter_um", p.core_diameter_um}};
}

// Field-path aware reader over one JSON object.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_, "expected an object");
    }

    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* find(const std::string& key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void number(const std::string& key, double& out) {
        const json* v = find(key);
        if (!v) return;
        if (!v->is_number()) throw ConfigError(join(key), "expected a number");
        out = v->get<double>();
        if (!std::isfinite(out)) throw ConfigError(join(key), "must be finite");
    }

    void integer(const std::string& key, int& out) {
        const json* v = find(key);
        if (!v) return;
        if (!v->is_number_integer()) throw ConfigError(join(key), "expected an integer");
        const auto x = v->get<long long>();
        if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
            throw ConfigError(join(key), "integer out of range");
        out = static_cast<int>(x);
    }

    void seed(const std::string& key, std::uint64_t& out) {
        const json* v = find(key);
        if (!v) return;
        if (v->is_number_unsigned()) {
            out = v->get<std::uint64_t>();
        } else if (v->is_number_integer() && v->get<long long>() >= 0) {
            out = static_cast<std::uint64_t>(v->get<long long>());
        } else {
            throw ConfigError(join(key), "expected a non-negative integer seed");
        }
    }

    void boolean(const std::string& key, bool& out) {
        const json* v = find(key);
        if (!v) return;
        if (!v->is_boolean()) throw ConfigError(join(key), "expected true or false");
        out = v->get<bool>();
    }

    void string(const std::string& key, std::string& out) {
        const json* v = find(key);
        if (!v) return;
        if (!v->is_string()) throw ConfigError(join(key), "expected a string");
        out = v->get<std::string>();
    }

    template <class E>
    void choice(const std::string& key, E& out, std::initializer_list<std::pair<const char*, E>> options) {
        const json* v = find(key);
        if (!v) return;
        std::string names;
        if (v->is_string()) {
            for (const auto& [name, value] : options)
                if (*v == name) {
                    out = value;
                    return;
                }
        }
        for (const auto& [name, value] : options) names += (names.empty() ? "" : ", ") + std::string(name);
        throw ConfigError(join(key), "expected one of: " + names);
    }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key())) throw ConfigError(join(item.key()), "unknown field");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_placement(Section& parent, const std::string& key, DetectorPlacement& p) {
    const json* v = parent.find(key);
    if (!v) return;
    Section s(*v, parent.join(key));
    s.number("x_um", p.x_um);
    s.number("y_um", p.y_um);
    s.number("core_diameter_um", p.core_diameter_um);
    s.finish();
}

template <class F>
void with_section(Section& parent, const std::string& key, F&& body) {
    const json* v = parent.find(key);
    if (!v) return;
    Section s(*v, parent.join(key));
    body(s);
    s.finish();
}

void require(bool ok, const std::string& path, const std::string& message) {
    if (!ok) throw ConfigError(path, message);
}

}  // namespace

ordered_json config_to_json(const ExperimentConfig& c) {
    ordered_json j;
    j["fiber"] = {{"core_radius_um", c.fiber.core_radius_um},
                  {"numerical_aperture", c.fiber.numerical_aperture},
                  {"wavelength_nm", c.fiber.wavelength_nm},
                  {"mode_truncation", c.fiber.mode_truncation}};
    j["grid"] = {{"side_um", c.grid.side_um}, {"samples_per_side", c.grid.samples_per_side}};
    j["actuators"] = {{"count", c.actuators.count},
                      {"coupling_strength", c.actuators.coupling_strength},
                      {"loss_coefficient", c.actuators.loss_coefficient},
                      {"loss_model", to_string(c.actuators.loss_model)},
                      {"bank_seed", c.actuators.bank_seed},
                      {"segment_seed", c.actuators.segment_seed}};
    j["state"] = {{"schmidt_number", c.state.schmidt_number},
                  {"spectrum", to_string(c.state.spectrum)},
                  {"configuration", to_string(c.state.configuration)}};
    ordered_json targets = ordered_json::array();
    for (const auto& t : c.detectors.targets) targets.push_back(placement_json(t));
    const ScanSpec& sc = c.detectors.scan;
    j["detectors"] = {{"magnification", c.detectors.magnification},
                      {"herald", placement_json(c.detectors.herald)},
                      {"fixed", placement_json(c.detectors.fixed)},
                      {"targets", targets},
                      {"scan",
                       {{"center_x_um", sc.center_x_um},
                        {"center_y_um", sc.center_y_um},
                        {"step_um", sc.step_um},
                        {"nx", sc.nx},
                        {"ny", sc.ny},
                        {"core_diameter_um", sc.core_diameter_um}}}};
    j["cost"] = {{"variant", to_string(c.cost_variant)}, {"alpha", c.alpha}};
    j["counts"] = {{"pair_rate_hz", c.counts.pair_rate_hz},
                   {"integration_time_s", c.counts.integration_time_s},
                   {"poisson", c.counts.poisson}};
    j["pso"] = {{"swarm_size", c.pso.swarm_size},
                {"max_iterations", c.pso.max_iterations},
                {"inertia", c.pso.inertia},
                {"cognitive", c.pso.cognitive},
                {"social", c.pso.social},
                {"velocity_clamp", c.pso.velocity_clamp},
                {"evaluations_per_cost", c.pso.evaluations_per_cost},
                {"seed", c.pso.seed}};
    j["ensembles"] = {{"baseline_samples", c.ensembles.baseline_samples},
                      {"baseline_seed", c.ensembles.baseline_seed},
                      {"full_aperture_totals", c.ensembles.full_aperture_totals}};
    j["schmidt"] = {{"samples", c.schmidt.samples},
                    {"seed", c.schmidt.seed},
                    {"mode_count", c.schmidt.mode_count},
                    {"grid_side_um", c.schmidt.grid_side_um},
                    {"grid_samples_per_side", c.schmidt.grid_samples_per_side}};
    j["run"] = {{"workers", c.run.workers}, {"output_dir", c.run.output_dir}};
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    Section root(j, "");
    with_section(root, "fiber", [&](Section& s) {
        s.number("core_radius_um", c.fiber.core_radius_um);
        s.number("numerical_aperture", c.fiber.numerical_aperture);
        s.number("wavelength_nm", c.fiber.wavelength_nm);
        s.integer("mode_truncation", c.fiber.mode_truncation);
    });
    with_section(root, "grid", [&](Section& s) {
        s.number("side_um", c.grid.side_um);
        s.integer("samples_per_side", c.grid.samples_per_side);
    });
    with_section(root, "actuators", [&](Section& s) {
        s.integer("count", c.actuators.count);
        s.number("coupling_strength", c.actuators.coupling_strength);
        s.number("loss_coefficient", c.actuators.loss_coefficient);
        s.choice("loss_model", c.actuators.loss_model,
                 {{"uniform", LossModel::Uniform}, {"mode_dependent", LossModel::ModeDependent}});
        s.seed("bank_seed", c.actuators.bank_seed);
        s.seed("segment_seed", c.actuators.segment_seed);
    });
    with_section(root, "state", [&](Section& s) {
        s.number("schmidt_number", c.state.schmidt_number);
        s.choice("spectrum", c.state.spectrum,
                 {{"geometric", SpectrumKind::Geometric}, {"equal_weight", SpectrumKind::EqualWeight}});
        s.choice("configuration", c.state.configuration,
                 {{"heralded", Configuration::Heralded}, {"two_photon", Configuration::TwoPhoton}});
    });
    with_section(root, "detectors", [&](Section& s) {
        s.number("magnification", c.detectors.magnification);
        read_placement(s, "herald", c.detectors.herald);
        read_placement(s, "fixed", c.detectors.fixed);
        if (const json* t = s.find("targets")) {
            if (!t->is_array()) throw ConfigError(s.join("targets"), "expected an array");
            c.detectors.targets.assign(t->size(), DetectorPlacement{});
            for (std::size_t i = 0; i < t->size(); ++i) {
                Section e((*t)[i], s.join("targets[" + std::to_string(i) + "]"));
                e.number("x_um", c.detectors.targets[i].x_um);
                e.number("y_um", c.detectors.targets[i].y_um);
                e.number("core_diameter_um", c.detectors.targets[i].core_diameter_um);
                e.finish();
            }
        }
        with_section(s, "scan", [&](Section& sc) {
            sc.number("center_x_um", c.detectors.scan.center_x_um);
            sc.number("center_y_um", c.detectors.scan.center_y_um);
            sc.number("step_um", c.detectors.scan.step_um);
            sc.integer("nx", c.detectors.scan.nx);
            sc.integer("ny", c.detectors.scan.ny);
            sc.number("core_diameter_um", c.detectors.scan.core_diameter_um);
        });
    });
    with_section(root, "cost", [&](Section& s) {
        s.choice("variant", c.cost_variant,
                 {{"single_spot", CostVariant::SingleSpot},
                  {"two_spot", CostVariant::TwoSpot},
                  {"smf_coupling", CostVariant::SmfCoupling},
                  {"singles_feedback", CostVariant::SinglesFeedback}});
        s.number("alpha", c.alpha);
    });
    with_section(root, "counts", [&](Section& s) {
        s.number("pair_rate_hz", c.counts.pair_rate_hz);
        s.number("integration_time_s", c.counts.integration_time_s);
        s.boolean("poisson", c.counts.poisson);
    });
    with_section(root, "pso", [&](Section& s) {
        s.integer("swarm_size", c.pso.swarm_size);
        s.integer("max_iterations", c.pso.max_iterations);
        s.number("inertia", c.pso.inertia);
        s.number("cognitive", c.pso.cognitive);
        s.number("social", c.pso.social);
        s.number("velocity_clamp", c.pso.velocity_clamp);
        s.integer("evaluations_per_cost", c.pso.evaluations_per_cost);
        s.seed("seed", c.pso.seed);
    });
    with_section(root, "ensembles", [&](Section& s) {
        s.integer("baseline_samples", c.ensembles.baseline_samples);
        s.seed("baseline_seed", c.ensembles.baseline_seed);
        s.boolean("full_aperture_totals", c.ensembles.full_aperture_totals);
    });
    with_section(root, "schmidt", [&](Section& s) {
        s.integer("samples", c.schmidt.samples);
        s.seed("seed", c.schmidt.seed);
        s.integer("mode_count", c.schmidt.mode_count);
        s.number("grid_side_um", c.schmidt.grid_side_um);
        s.integer("grid_samples_per_side", c.schmidt.grid_samples_per_side);
    });
    with_section(root, "run", [&](Section& s) {
        s.integer("workers", c.run.workers);
        s.string("output_dir", c.run.output_dir);
    });
    root.finish();
    c.pso.workers = c.run.workers;
    validate_config(c);
    return c;
}

namespace {

void validate_grid(const FiberSpec& fiber, double side_um, int samples, const std::string& path_side,
                   const std::string& path_samples) {
    require(side_um > 0.0, path_side, "must be positive");
    require(samples >= 64, path_samples, "must be at least 64");
    const double w = fiber.fundamental_waist_um();
    require(side_um >= 3.0 * w, path_side, "grid must span at least three fundamental-mode waists");
    require(w / (side_um / samples) >= 8.0, path_samples, "grid too coarse: need at least 8 samples per waist");
}

}  // namespace

void validate_config(const ExperimentConfig& c) {
    require(c.fiber.core_radius_um > 0.0, "fiber.core_radius_um", "must be positive");
    require(c.fiber.numerical_aperture > 0.0 && c.fiber.numerical_aperture < 1.0, "fiber.numerical_aperture",
            "must lie in (0, 1)");
    require(c.fiber.wavelength_nm > 0.0, "fiber.wavelength_nm", "must be positive");
    const int capacity = c.fiber.mode_capacity();
    require(c.fiber.mode_truncation >= 1, "fiber.mode_truncation", "must be at least 1");
    require(c.fiber.mode_truncation <= capacity, "fiber.mode_truncation",
            "exceeds the fiber capacity of " + std::to_string(capacity) + " modes");
    validate_grid(c.fiber, c.grid.side_um, c.grid.samples_per_side, "grid.side_um", "grid.samples_per_side");

    require(c.actuators.count >= 1, "actuators.count", "must be at least 1");
    require(c.actuators.coupling_strength > 0.0, "actuators.coupling_strength", "must be positive");
    require(c.actuators.loss_coefficient >= 0.0, "actuators.loss_coefficient", "must be non-negative");

    require(c.state.schmidt_number >= 1.0, "state.schmidt_number", "must be at least 1");
    require(c.state.schmidt_number <= c.fiber.mode_truncation, "state.schmidt_number",
            "exceeds fiber.mode_truncation");
    if (c.state.spectrum == SpectrumKind::EqualWeight)
        require(std::abs(c.state.schmidt_number - std::round(c.state.schmidt_number)) < 1e-9, "state.schmidt_number",
                "equal_weight spectrum needs an integer Schmidt number");

    const auto& d = c.detectors;
    require(d.magnification > 0.0, "detectors.magnification", "must be positive");
    const double half = 0.5 * c.grid.side_um * d.magnification;
    auto check_placement = [&](const DetectorPlacement& p, const std::string& path) {
        require(p.core_diameter_um > 0.0, path + ".core_diameter_um", "must be positive");
        require(std::abs(p.x_um) <= half && std::abs(p.y_um) <= half, path, "detector lies outside the simulation grid");
    };
    check_placement(d.herald, "detectors.herald");
    check_placement(d.fixed, "detectors.fixed");
    require(!d.targets.empty(), "detectors.targets", "needs at least one target");
    require(d.scan.step_um > 0.0, "detectors.scan.step_um", "must be positive");
    require(d.scan.nx >= 1, "detectors.scan.nx", "must be at least 1");
    require(d.scan.ny >= 1, "detectors.scan.ny", "must be at least 1");
    require(d.scan.core_diameter_um > 0.0, "detectors.scan.core_diameter_um", "must be positive");
    const double ex = 0.5 * (d.scan.nx - 1) * d.scan.step_um;
    const double ey = 0.5 * (d.scan.ny - 1) * d.scan.step_um;
    require(std::abs(d.scan.center_x_um) + ex <= half && std::abs(d.scan.center_y_um) + ey <= half, "detectors.scan",
            "scan raster extends outside the simulation grid");
    for (std::size_t i = 0; i < d.targets.size(); ++i) {
        const std::string path = "detectors.targets[" + std::to_string(i) + "]";
        check_placement(d.targets[i], path);
        const double fx = (d.targets[i].x_um - d.scan.center_x_um) / d.scan.step_um + 0.5 * (d.scan.nx - 1);
        const double fy = (d.targets[i].y_um - d.scan.center_y_um) / d.scan.step_um + 0.5 * (d.scan.ny - 1);
        require(fx >= -0.5 && fx <= d.scan.nx - 0.5 && fy >= -0.5 && fy <= d.scan.ny - 0.5, path,
                "target lies outside the scan raster");
    }

    require(c.alpha >= 0.0, "cost.alpha", "must be non-negative");
    if (c.cost_variant == CostVariant::TwoSpot)
        require(d.targets.size() >= 2, "detectors.targets", "two_spot cost needs two targets");
    if (c.cost_variant == CostVariant::SmfCoupling)
        require(c.state.configuration == Configuration::Heralded, "cost.variant",
                "smf_coupling needs the heralded configuration");

    require(c.counts.pair_rate_hz > 0.0, "counts.pair_rate_hz", "must be positive");
    require(c.counts.integration_time_s > 0.0, "counts.integration_time_s", "must be positive");

    require(c.pso.swarm_size >= 2, "pso.swarm_size", "must be at least 2");
    require(c.pso.max_iterations >= 0, "pso.max_iterations", "must be non-negative");
    require(c.pso.inertia > 0.0 && c.pso.inertia < 1.0, "pso.inertia", "must lie in (0, 1)");
    require(c.pso.cognitive > 0.0, "pso.cognitive", "must be positive");
    require(c.pso.social > 0.0, "pso.social", "must be positive");
    require(c.pso.velocity_clamp > 0.0, "pso.velocity_clamp", "must be positive");
    require(c.pso.evaluations_per_cost >= 1, "pso.evaluations_per_cost", "must be at least 1");

    require(c.ensembles.baseline_samples >= 2, "ensembles.baseline_samples", "must be at least 2");
    require(c.schmidt.samples >= 2, "schmidt.samples", "must be at least 2");
    require(c.schmidt.mode_count >= 1 && c.schmidt.mode_count <= capacity, "schmidt.mode_count",
            "must lie in [1, " + std::to_string(capacity) + "]");
    require(c.state.schmidt_number <= c.schmidt.mode_count, "schmidt.mode_count", "smaller than state.schmidt_number");
    validate_grid(c.fiber, c.schmidt.grid_side_um, c.schmidt.grid_samples_per_side, "schmidt.grid_side_um",
                  "schmidt.grid_samples_per_side");
    require(c.run.workers >= 1, "run.workers", "must be at least 1");
}

namespace {

const std::map<std::string, std::string>& field_comments() {
    static const std::map<std::string, std::string> comments{
        {"fiber", "Parabolic graded-index multimode fiber."},
        {"fiber.core_radius_um", "Core radius in micrometres."},
        {"fiber.numerical_aperture", "Numerical aperture."},
        {"fiber.wavelength_nm", "Photon wavelength in nanometres."},
        {"fiber.mode_truncation", "Number of guided modes simulated (at most floor(V^2/8))."},
        {"grid", "Sampling grid at the fiber facet."},
        {"grid.side_um", "Side length of the square grid in micrometres."},
        {"grid.samples_per_side", "Samples along each axis."},
        {"actuators", "Piezo actuator bank; one random coupling generator per actuator."},
        {"actuators.count", "Number of actuators."},
        {"actuators.coupling_strength", "Operator norm of each generator at full stroke (calibrated, frozen)."},
        {"actuators.loss_coefficient", "Loss per actuator: amplitude factor exp(-beta v^2 / 2)."},
        {"actuators.loss_model", "uniform or mode_dependent."},
        {"actuators.bank_seed", "Seed of the generator draw."},
        {"actuators.segment_seed", "Seed of the static fiber segments."},
        {"state", "Photon-pair source."},
        {"state.schmidt_number", "Schmidt number K of the pair state."},
        {"state.spectrum", "geometric or equal_weight Schmidt spectrum."},
        {"state.configuration", "heralded: one photon heralds its twin in the fiber. two_photon: both photons in the fiber."},
        {"detectors", "Detector layout in the detection plane (micrometres behind the imaging optics)."},
        {"detectors.magnification", "Detection-plane micrometres per fiber-facet micrometre."},
        {"detectors.herald", "Heralding detector (heralded configuration)."},
        {"detectors.fixed", "Fixed detector (two-photon configuration)."},
        {"detectors.targets", "Optimization targets; two_spot uses the first two. Must lie on the scan raster."},
        {"detectors.scan", "Raster of the scanning detector."},
        {"cost", "Optimization objective."},
        {"cost.variant", "single_spot, two_spot, smf_coupling or singles_feedback."},
        {"cost.alpha", "Balancing weight of the two-spot cost sqrt(c1) + sqrt(c2) - alpha |c1 - c2|."},
        {"counts", "Conversion of probabilities into counts per acquisition."},
        {"counts.pair_rate_hz", "Pair rate reaching the fiber."},
        {"counts.integration_time_s", "Acquisition time per configuration."},
        {"counts.poisson", "Draw Poisson counts instead of expected values."},
        {"pso", "Particle swarm optimizer (global best, reflecting bounds [-1, 1])."},
        {"pso.swarm_size", "Particles."},
        {"pso.max_iterations", "Iterations after the initial swarm."},
        {"pso.inertia", "Inertia weight."},
        {"pso.cognitive", "Attraction to the personal best."},
        {"pso.social", "Attraction to the global best."},
        {"pso.velocity_clamp", "Velocity limit as a fraction of the stroke range."},
        {"pso.evaluations_per_cost", "Averaged evaluations per noisy cost."},
        {"pso.seed", "Optimizer seed."},
        {"ensembles", "Disorder baseline over random actuator configurations."},
        {"ensembles.baseline_samples", "Random configurations in the baseline."},
        {"ensembles.baseline_seed", "Baseline seed."},
        {"ensembles.full_aperture_totals", "Use whole-output-plane totals instead of scan-raster totals."},
        {"schmidt", "Schmidt-number estimation from singles and coincidence contrast."},
        {"schmidt.samples", "Random actuator configurations."},
        {"schmidt.seed", "Ensemble seed."},
        {"schmidt.mode_count", "Guided modes simulated for this protocol."},
        {"schmidt.grid_side_um", "Grid side for this protocol."},
        {"schmidt.grid_samples_per_side", "Grid samples per axis for this protocol."},
        {"run", "Execution."},
        {"run.workers", "Worker threads for ensembles and swarm evaluation."},
        {"run.output_dir", "Default output directory (overridden by --out or FIBERPIANO_OUT)."},
    };
    return comments;
}

void emit(std::ostringstream& out, const ordered_json& j, const std::string& path, int indent) {
    const std::string pad(static_cast<std::size_t>(indent), ' ');
    const std::string inner(static_cast<std::size_t>(indent + 2), ' ');
    if (j.is_object()) {
        out << "{\n";
        std::size_t i = 0;
        for (const auto& item : j.items()) {
            const std::string child = path.empty() ? item.key() : path + "." + item.key();
            const auto it = field_comments().find(child);
            if (it != field_comments().end()) out << inner << "// " << it->second << "\n";
            out << inner << json(item.key()).dump() << ": ";
            emit(out, item.value(), child, indent + 2);
            out << (++i < j.size() ? ",\n" : "\n");
        }
        out << pad << "}";
    } else if (j.is_array() && !j.empty()) {
        out << "[\n";
        for (std::size_t i = 0; i < j.size(); ++i) {
            out << inner;
            emit(out, j[i], path + "[]", indent + 2);
            out << (i + 1 < j.size() ? ",\n" : "\n");
        }
        out << pad << "]";
    } else {
        out << j.dump();
    }
}

std::string hex64(std::uint64_t x) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, x);
    return buf;
}

std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
    if (!f) throw Error("failed writing " + path.string());
}

}  // namespace

std::string config_to_commented_text(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "// fiberpiano experiment configuration. Lengths in micrometres unless the key says otherwise.\n";
    emit(out, config_to_json(cfg), "", 0);
    out << "\n";
    return out.str();
}

ExperimentConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("malformed JSON: ") + e.what());
    }
    if (j.is_object() && j.contains("config") && j.contains("command")) return config_from_json(j["config"]);
    return config_from_json(j);
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("", "cannot open config file " + path.string());
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str());
}

void override_seeds(ExperimentConfig& cfg, std::uint64_t root) {
    cfg.actuators.bank_seed = derive_seed(root, 1);
    cfg.actuators.segment_seed = derive_seed(root, 2);
    cfg.pso.seed = derive_seed(root, 3);
    cfg.ensembles.baseline_seed = derive_seed(root, 4);
    cfg.schmidt.seed = derive_seed(root, 5);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : config_to_json(cfg).dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Experiment::Experiment(const ExperimentConfig& cfg) : cfg_(cfg) {
    validate_config(cfg_);
    cfg_.pso.workers = cfg_.run.workers;
    basis_ = std::make_shared<const ModeBasis>(build_mode_basis(cfg_.fiber, cfg_.grid));
    const int n = basis_->size();
    fiber_ = std::make_shared<const FiberModel>(
        build_actuator_bank(n, cfg_.actuators.count, cfg_.actuators.coupling_strength,
                            cfg_.actuators.loss_coefficient, cfg_.actuators.bank_seed, cfg_.actuators.loss_model),
        cfg_.actuators.segment_seed);
    state_ = spdc_state(cfg_.state.schmidt_number, n, cfg_.state.spectrum);

    const ScanSpec& s = cfg_.detectors.scan;
    const double m = cfg_.detectors.magnification;
    scan_ = ScanGrid{s.center_x_um / m, s.center_y_um / m, s.step_um / m, s.nx, s.ny};
    scan_radius_um_ = 0.5 * s.core_diameter_um / m;
    for (const auto& t : cfg_.detectors.targets) targets_.push_back(to_facet(t, DetectorRole::Scanning));

    std::optional<DetectorSpec> fixed;
    std::optional<Eigen::VectorXcd> herald_mode;
    if (cfg_.state.configuration == Configuration::TwoPhoton) {
        fixed = to_facet(cfg_.detectors.fixed, DetectorRole::Fixed);
    } else {
        Eigen::VectorXcd h = detector_vector(*basis_, to_facet(cfg_.detectors.herald, DetectorRole::Heralding));
        const double norm = h.norm();
        if (!(norm > 1e-12)) throw ZeroProbabilityHeraldError("heralding detector collects none of the fiber modes");
        herald_mode = h / norm;
    }
    context_ = std::make_unique<CostContext>(fiber_, *basis_, state_, cfg_.state.configuration, targets_, fixed,
                                             herald_mode, cfg_.counts.scale(), NoiseModel{cfg_.counts.poisson});
}

DetectorSpec Experiment::to_facet(const DetectorPlacement& p, DetectorRole role) const {
    const double m = cfg_.detectors.magnification;
    return {p.x_um / m, p.y_um / m, 0.5 * p.core_diameter_um / m, role};
}

DetectionMap Experiment::singles_map(std::span<const double> v) const {
    const Eigen::MatrixXcd t = fiber_->assemble(Displacements(std::vector<double>(v.begin(), v.end()))).matrix;
    DetectionMap map = fiberpiano::singles_map(state_, t, *basis_, scan_, scan_radius_um_);
    for (double& x : map.values) x *= cfg_.counts.scale();
    return map;
}

DetectionMap Experiment::coincidence_map(std::span<const double> v) const {
    const Eigen::MatrixXcd t = fiber_->assemble(Displacements(std::vector<double>(v.begin(), v.end()))).matrix;
    DetectionMap map = cfg_.state.configuration == Configuration::TwoPhoton
                           ? fiberpiano::coincidence_map(state_, t, *basis_, *context_->fixed(), scan_, scan_radius_um_)
                           : heralded_coincidence_map(state_, *context_->heralded(), t, *basis_, scan_, scan_radius_um_);
    for (double& x : map.values) x *= cfg_.counts.scale();
    return map;
}

double Experiment::full_aperture_total(std::span<const double> v) const {
    const Eigen::MatrixXcd t = fiber_->assemble(Displacements(std::vector<double>(v.begin(), v.end()))).matrix;
    const double p = cfg_.state.configuration == Configuration::TwoPhoton
                         ? full_aperture_total_pairs(state_, t, *basis_)
                         : full_aperture_total_heralded(state_, *context_->heralded(), t, *basis_);
    return cfg_.counts.scale() * p;
}

CostFunction Experiment::measured(int target) const {
    const CostContext* c = context_.get();
    if (cfg_.cost_variant == CostVariant::SmfCoupling)
        return [c](std::span<const double> v, std::uint64_t s) { return cost_smf(v, *c, s); };
    const auto i = static_cast<std::size_t>(target);
    if (i >= targets_.size()) throw DomainError("no target detector with index " + std::to_string(target));
    return [c, i](std::span<const double> v, std::uint64_t s) {
        return c->sample_counts(c->readout(v).coincidences[i], s);
    };
}

CostFunction Experiment::measured_singles(int target) const {
    const CostContext* c = context_.get();
    const auto i = static_cast<std::size_t>(target);
    if (i >= targets_.size()) throw DomainError("no target detector with index " + std::to_string(target));
    return [c, i](std::span<const double> v, std::uint64_t s) { return c->sample_counts(c->readout(v).singles[i], s); };
}

SpeckleResult run_speckle(const ExperimentConfig& cfg) {
    const Experiment ex(cfg);
    const std::vector<double> rest(static_cast<std::size_t>(cfg.actuators.count), 0.0);
    SpeckleResult r;
    r.singles = ex.singles_map(rest);
    r.coincidences = ex.coincidence_map(rest);
    r.singles_contrast = contrast(r.singles.values);
    r.coincidence_contrast = contrast(r.coincidences.values);
    return r;
}

OptimizeResult run_optimize(const ExperimentConfig& cfg) {
    const Experiment ex(cfg);
    const ExperimentConfig& c = ex.config();
    const int dim = c.actuators.count;
    const int spots = c.cost_variant == CostVariant::TwoSpot ? 2 : 1;

    CostSpec spec;
    spec.variant = c.cost_variant;
    spec.alpha = c.alpha;
    spec.configuration = c.state.configuration;
    spec.targets.assign(ex.targets().begin(), ex.targets().begin() + spots);
    const CostFunction cost = make_cost(spec, ex.context());

    OptimizeResult r;
    const int n = c.ensembles.baseline_samples;
    const std::uint64_t bseed = c.ensembles.baseline_seed;
    for (int i = 0; i < spots; ++i) {
        DisorderStats b = disorder_average(ex.measured(i), dim, n, derive_seed(bseed, static_cast<std::uint64_t>(i)),
                                           c.run.workers);
        b.targets = {ex.targets()[static_cast<std::size_t>(i)]};
        r.spot_baselines.push_back(b);
    }
    r.baseline = r.spot_baselines.front();
    r.singles_baseline = disorder_average(ex.measured_singles(0), dim, n, derive_seed(bseed, 0x51), c.run.workers);
    r.singles_baseline.targets = {ex.targets().front()};

    r.run = pso_run(cost, dim, c.pso);
    const std::span<const double> best = r.run.best_displacements;
    const std::vector<double> rest(static_cast<std::size_t>(dim), 0.0);

    for (int i = 0; i < spots; ++i) {
        const double value = ex.measured(i)(best, derive_seed(bseed, 0xF1, static_cast<std::uint64_t>(i)));
        r.spot_values.push_back(value);
        r.spot_enhancements.push_back(enhancement(value, r.spot_baselines[static_cast<std::size_t>(i)]).value);
    }
    if (spots == 2) {
        const double hi = std::max(r.spot_values[0], r.spot_values[1]);
        r.imbalance = hi > 0.0 ? std::abs(r.spot_values[0] - r.spot_values[1]) / hi : 0.0;
    }

    if (c.cost_variant == CostVariant::SingleSpot || c.cost_variant == CostVariant::SmfCoupling)
        r.five_fold_iteration = r.run.first_iteration_reaching(5.0 * r.baseline.mean);
    else if (c.cost_variant == CostVariant::SinglesFeedback)
        r.five_fold_iteration = r.run.first_iteration_reaching(5.0 * r.singles_baseline.mean);

    r.singles_before = ex.singles_map(rest);
    r.singles_after = ex.singles_map(best);
    r.coincidences_before = ex.coincidence_map(rest);
    r.coincidences_after = ex.coincidence_map(best);

    ReportExtras extras;
    extras.singles_after = r.singles_after;
    extras.singles_baseline = r.singles_baseline;
    if (c.ensembles.full_aperture_totals || c.cost_variant == CostVariant::SmfCoupling) {
        extras.total_before = ex.full_aperture_total(rest);
        extras.total_after = ex.full_aperture_total(best);
    }
    r.report = enhancement_report(r.coincidences_before, r.coincidences_after, ex.targets().front(), r.baseline, extras);
    if (c.cost_variant == CostVariant::SmfCoupling) {
        // The quoted quantity is the coupling efficiency, not the map value at the target.
        const Enhancement e = enhancement(r.spot_values.front(), r.baseline);
        r.report.peak = r.spot_values.front();
        r.report.enhancement = e.value;
        r.report.enhancement_uncertainty = e.uncertainty;
        r.report.normalized_enhancement = e.value / r.report.total_ratio;
    }
    return r;
}

SchmidtResult run_schmidt(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.fiber.mode_truncation = cfg.schmidt.mode_count;
    c.grid = GridSpec{cfg.schmidt.grid_side_um, cfg.schmidt.grid_samples_per_side};
    const Experiment ex(c);
    const CostContext& ctx = ex.context();

    SchmidtResult r;
    r.samples = c.schmidt.samples;
    r.modes = ex.basis().size();
    r.singles.resize(static_cast<std::size_t>(r.samples));
    r.coincidences.resize(static_cast<std::size_t>(r.samples));
    parallel_for(r.singles.size(), c.run.workers, [&](std::size_t s) {
        const auto v = random_displacements(c.actuators.count, derive_seed(c.schmidt.seed, s));
        const Readout out = ctx.readout(v.values());
        r.singles[s] = ctx.sample_counts(out.singles[0], derive_seed(c.schmidt.seed, s, 1));
        r.coincidences[s] = ctx.sample_counts(out.coincidences[0], derive_seed(c.schmidt.seed, s, 2));
    });
    r.singles_contrast = contrast(r.singles);
    r.coincidence_contrast = contrast(r.coincidences);
    r.singles_modes = 1.0 / (r.singles_contrast * r.singles_contrast);
    r.coincidence_modes = 1.0 / (r.coincidence_contrast * r.coincidence_contrast);
    r.schmidt_estimate = schmidt_estimate(r.singles_contrast, r.coincidence_contrast);
    return r;
}

namespace {

ordered_json stats_json(const DisorderStats& s) {
    return {{"mean", s.mean}, {"std", s.stddev}, {"standard_error", s.standard_error()}, {"samples", s.samples},
            {"seed", s.seed}};
}

}  // namespace

ordered_json report_to_json(const OptimizeResult& r, const ExperimentConfig& cfg) {
    ordered_json j;
    j["variant"] = to_string(cfg.cost_variant);
    j["configuration"] = to_string(cfg.state.configuration);
    j["quantity"] = cfg.cost_variant == CostVariant::SmfCoupling ? "smf_coupling_efficiency" : "coincidence_counts";
    j["baseline"] = stats_json(r.baseline);
    j["singles_baseline"] = stats_json(r.singles_baseline);
    j["peak"] = r.report.peak;
    j["enhancement"] = r.report.enhancement;
    j["enhancement_uncertainty"] = r.report.enhancement_uncertainty;
    j["normalized_enhancement"] = r.report.normalized_enhancement;
    j["total_ratio"] = r.report.total_ratio;
    j["singles_enhancement"] = r.report.singles_enhancement ? ordered_json(*r.report.singles_enhancement) : ordered_json();
    ordered_json spots = ordered_json::array();
    for (std::size_t i = 0; i < r.spot_values.size(); ++i)
        spots.push_back({{"value", r.spot_values[i]},
                         {"baseline_mean", r.spot_baselines[i].mean},
                         {"enhancement", r.spot_enhancements[i]}});
    j["spots"] = spots;
    if (r.spot_values.size() == 2) j["imbalance"] = r.imbalance;
    j["five_fold_iteration"] = r.five_fold_iteration ? ordered_json(*r.five_fold_iteration) : ordered_json();
    j["best_cost"] = r.run.best_cost;
    j["best_displacements"] = r.run.best_displacements;
    j["iterations"] = static_cast<int>(r.run.trace.size()) - 1;
    j["evaluations"] = r.run.evaluations;
    return j;
}

ordered_json schmidt_to_json(const SchmidtResult& r) {
    return {{"samples", r.samples},
            {"modes", r.modes},
            {"singles_contrast", r.singles_contrast},
            {"coincidence_contrast", r.coincidence_contrast},
            {"singles_modes", r.singles_modes},
            {"coincidence_modes", r.coincidence_modes},
            {"schmidt_estimate", r.schmidt_estimate}};
}

void write_map_csv(const fs::path& path, const DetectionMap& map, double magnification) {
    std::ostringstream out;
    out << "x_um,y_um,value\n";
    for (int p = 0; p < map.scan.size(); ++p)
        out << fmt_double(map.scan.x(p) * magnification) << ',' << fmt_double(map.scan.y(p) * magnification) << ','
            << fmt_double(map.values[static_cast<std::size_t>(p)]) << '\n';
    write_text(path, out.str());
}

void write_trace_csv(const fs::path& path, const OptimizationRun& run) {
    std::ostringstream out;
    out << "iteration,best,mean\n";
    for (const auto& t : run.trace) out << t.iteration << ',' << fmt_double(t.best) << ',' << fmt_double(t.mean) << '\n';
    write_text(path, out.str());
}

void write_map_pgm(const fs::path& path, const DetectionMap& map) {
    const double peak = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
    std::string data = "P5\n" + std::to_string(map.scan.nx) + " " + std::to_string(map.scan.ny) + "\n255\n";
    // Top row is the largest y.
    for (int iy = map.scan.ny - 1; iy >= 0; --iy)
        for (int ix = 0; ix < map.scan.nx; ++ix) {
            const double v = map.values[static_cast<std::size_t>(iy * map.scan.nx + ix)];
            const double level = peak > 0.0 ? std::clamp(v / peak, 0.0, 1.0) : 0.0;
            data.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * level))));
        }
    write_text(path, data);
}

namespace {

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg,
                    const std::vector<std::string>& outputs) {
    ordered_json m;
    m["tool"] = "fiberpiano";
    m["version"] = kVersion;
    m["command"] = command;
    m["config_hash"] = hex64(config_hash(cfg));
    m["seeds"] = {{"bank", cfg.actuators.bank_seed},
                  {"segment", cfg.actuators.segment_seed},
                  {"pso", cfg.pso.seed},
                  {"baseline", cfg.ensembles.baseline_seed},
                  {"schmidt", cfg.schmidt.seed}};
    m["outputs"] = outputs;
    m["config"] = config_to_json(cfg);
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

void prepare_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::string row(const std::string& name, const std::string& value) {
    std::string s = "  " + name;
    s.resize(std::max<std::size_t>(s.size() + 1, 30), ' ');
    return s + value + "\n";
}

std::string fixed(double x, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

}  // namespace

std::string cmd_init(const fs::path& path) {
    if (path.has_parent_path()) prepare_dir(path.parent_path());
    write_text(path, config_to_commented_text(default_config()));
    return "wrote default configuration to " + path.string() + "\n";
}

std::string cmd_speckle(const ExperimentConfig& cfg, const fs::path& out_dir) {
    const SpeckleResult r = run_speckle(cfg);
    prepare_dir(out_dir);
    const double m = cfg.detectors.magnification;
    write_map_csv(out_dir / "singles.csv", r.singles, m);
    write_map_csv(out_dir / "coincidences.csv", r.coincidences, m);
    write_map_pgm(out_dir / "singles.pgm", r.singles);
    write_map_pgm(out_dir / "coincidences.pgm", r.coincidences);
    ordered_json summary{{"singles_contrast", r.singles_contrast}, {"coincidence_contrast", r.coincidence_contrast}};
    write_text(out_dir / "speckle.json", summary.dump(2) + "\n");
    write_manifest(out_dir, "speckle", cfg,
                   {"singles.csv", "coincidences.csv", "singles.pgm", "coincidences.pgm", "speckle.json"});
    return "speckle (" + to_string(cfg.state.configuration) + ", K = " + fixed(cfg.state.schmidt_number, 2) + ")\n" +
           row("singles contrast", fixed(r.singles_contrast)) +
           row("coincidence contrast", fixed(r.coincidence_contrast)) + row("output", out_dir.string());
}

std::string cmd_optimize(const ExperimentConfig& cfg, const fs::path& out_dir) {
    const OptimizeResult r = run_optimize(cfg);
    prepare_dir(out_dir);
    const double m = cfg.detectors.magnification;
    write_trace_csv(out_dir / "trace.csv", r.run);
    write_map_csv(out_dir / "singles_before.csv", r.singles_before, m);
    write_map_csv(out_dir / "singles_after.csv", r.singles_after, m);
    write_map_csv(out_dir / "coincidences_before.csv", r.coincidences_before, m);
    write_map_csv(out_dir / "coincidences_after.csv", r.coincidences_after, m);
    write_map_pgm(out_dir / "coincidences_before.pgm", r.coincidences_before);
    write_map_pgm(out_dir / "coincidences_after.pgm", r.coincidences_after);
    write_text(out_dir / "report.json", report_to_json(r, cfg).dump(2) + "\n");
    write_manifest(out_dir, "optimize", cfg,
                   {"trace.csv", "singles_before.csv", "singles_after.csv", "coincidences_before.csv",
                    "coincidences_after.csv", "coincidences_before.pgm", "coincidences_after.pgm", "report.json"});

    std::string s = "optimize (" + to_string(cfg.cost_variant) + ", " + to_string(cfg.state.configuration) + ")\n";
    s += row("baseline mean", fixed(r.baseline.mean) + " +/- " + fixed(r.baseline.standard_error()));
    s += row("peak", fixed(r.report.peak));
    s += row("enhancement", fixed(r.report.enhancement, 2) + " +/- " + fixed(r.report.enhancement_uncertainty, 2));
    s += row("normalized enhancement", fixed(r.report.normalized_enhancement, 2));
    s += row("total ratio", fixed(r.report.total_ratio, 3));
    if (r.report.singles_enhancement) s += row("singles enhancement", fixed(*r.report.singles_enhancement, 2));
    if (r.spot_enhancements.size() == 2) {
        s += row("spot enhancements", fixed(r.spot_enhancements[0], 2) + ", " + fixed(r.spot_enhancements[1], 2));
        s += row("imbalance", fixed(r.imbalance, 3));
    }
    if (r.five_fold_iteration) s += row("5x reached at iteration", std::to_string(*r.five_fold_iteration));
    s += row("evaluations", std::to_string(r.run.evaluations));
    s += row("wall time [s]", fixed(r.run.wall_seconds, 1));
    s += row("output", out_dir.string());
    return s;
}

std::string cmd_schmidt(const ExperimentConfig& cfg, const fs::path& out_dir) {
    const SchmidtResult r = run_schmidt(cfg);
    prepare_dir(out_dir);
    std::ostringstream samples;
    samples << "sample,singles,coincidences\n";
    for (std::size_t i = 0; i < r.singles.size(); ++i)
        samples << i << ',' << fmt_double(r.singles[i]) << ',' << fmt_double(r.coincidences[i]) << '\n';
    write_text(out_dir / "schmidt_samples.csv", samples.str());
    write_text(out_dir / "schmidt.json", schmidt_to_json(r).dump(2) + "\n");
    write_manifest(out_dir, "schmidt", cfg, {"schmidt_samples.csv", "schmidt.json"});
    return "schmidt (" + std::to_string(r.samples) + " configurations, " + std::to_string(r.modes) + " modes)\n" +
           row("singles contrast", fixed(r.singles_contrast)) +
           row("coincidence contrast", fixed(r.coincidence_contrast)) +
           row("singles modes", fixed(r.singles_modes, 2)) + row("coincidence modes", fixed(r.coincidence_modes, 3)) +
           row("Schmidt estimate", fixed(r.schmidt_estimate, 2)) + row("output", out_dir.string());
}

std::string replay_manifest(const fs::path& manifest, const fs::path& out_dir, int workers) {
    std::ifstream f(manifest, std::ios::binary);
    if (!f) throw ConfigError("", "cannot open manifest " + manifest.string());
    json j;
    try {
        j = json::parse(f, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("malformed manifest: ") + e.what());
    }
    if (!j.is_object() || !j.contains("command") || !j.contains("config"))
        throw ConfigError("", "manifest needs \"command\" and \"config\"");
    ExperimentConfig cfg = config_from_json(j["config"]);
    if (workers > 0) {
        cfg.run.workers = workers;
        cfg.pso.workers = workers;
    }
    const std::string command = j["command"].is_string() ? j["command"].get<std::string>() : "";
    if (command == "speckle") return cmd_speckle(cfg, out_dir);
    if (command == "optimize") return cmd_optimize(cfg, out_dir);
    if (command == "schmidt") return cmd_schmidt(cfg, out_dir);
    throw ConfigError("command", "unknown command '" + command + "'");
}

}  // namespace fiberpiano
