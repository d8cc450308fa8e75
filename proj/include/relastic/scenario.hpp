#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "relastic/inversion.hpp"

namespace relastic {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Failure of a named pipeline stage.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

enum class PhantomKind { constant, gaussian_bump, layered };
enum class DataSource { full, surrogate };

struct PhantomSpec {
    PhantomKind kind = PhantomKind::gaussian_bump;
    double value = 1.0;              // constant
    Vec3 center = Vec3::Zero();      // bump
    double width = 0.25;
    double amplitude = 1.0;
    int axis = 2;                    // layered
    std::vector<double> interfaces;  // coordinates along axis
    std::vector<double> values;      // size interfaces+1
    double smoothing = 0.1;
};

struct ScenarioConfig {
    ElasticMedium medium;
    PhantomSpec phantom;
    Vec3 omega_center = Vec3::Zero();
    double omega_radius = 1.0;
    int omega_cells = 12;
    int b_cells = 6;
    double a = 0.05;
    double c1 = 10.0;
    std::optional<int> mode;
    double h = 0.5;
    double b = 1.0;
    int sign = -1;
    int lattice_n = 5;
    double lattice_spacing = 0.0;  // 0 -> one Omega cell
    Vec3 lattice_center = Vec3::Zero();
    int sphere_nodes = 128;
    int surface_nodes = 128;
    double k_radius_factor = 1.5;
    Vec3 anchor_direction{0.3, 0.4, 0.866};
    double anchor_distance_factor = 1.4;  // times the radius of K
    Vec3 incidence{1.0, 0.0, 0.0};
    double beta1 = 1.0;
    double beta2 = 0.0;
    double delta = 0.0;
    double delta1 = 0.0;
    std::uint64_t seed = 1;
    double alpha_max = 1e-1;
    double alpha_min = 1e-9;
    double morozov_factor = 1.0;
    double tau_rel = 1e-3;
    double denom_rel = 1e-3;
    DataSource source = DataSource::full;
    std::string output = "out";
    std::string cache;  // eigensystem cache file, empty disables

    void validate() const;
    std::vector<double> alphas() const;
};

ScenarioConfig parse_config(const std::string& text);
ScenarioConfig load_config(const std::string& path);
std::string config_to_json(const ScenarioConfig& c);  // canonical, defaults filled
std::uint64_t config_hash(const ScenarioConfig& c);

double phantom_value(const PhantomSpec& p, const ElasticMedium& m, const Vec3& x);
Background build_phantom(const ScenarioConfig& c);

// All shared, z-independent state of a scenario.
struct ScenarioSetup {
    ScenarioConfig config;
    Background background;
    EigenSystem eigB;
    VoxelGrid gridB;
    ResonanceInfo res;
    PlaneWave wave;
    Lattice lattice;
    SphereGrid sphere;   // kernel nodes d; data live on -d
    MeasurementSurfaceK surface;
    Vec3 anchor = Vec3::Zero();
    SweepPolicy policy;
};

ScenarioSetup prepare(const ScenarioConfig& c);
HerglotzSolver make_kernel_solver(const ScenarioSetup& s);
SweepPolicy policy_for(const ScenarioConfig& c);
InversionConfig inversion_config(const ScenarioSetup& s);

struct MeasurementReport {
    std::vector<std::string> node_errors;  // empty string when fine
    std::vector<double> planted_rho;       // surrogate only, per node
    double realized_delta = 0.0;           // measured relative noise, background bank
    double realized_delta1 = 0.0;          // measured relative noise, perturbed banks (node average)
};

using Progress = std::function<void(std::size_t done, std::size_t total)>;

InjectionSweep generate_measurements(const ScenarioSetup& s, const HerglotzSolver& kernels,
                                     MeasurementReport* report = nullptr, const Progress& progress = {});

// Multiplicative complex Gaussian noise, independent per sample component.
void add_noise(FarField& f, double level, std::uint64_t seed, std::uint64_t stream);
void add_noise(Vec3c& v, double level, std::uint64_t seed, std::uint64_t stream);

struct Metrics {
    double linf_rel = 0.0;
    double l2_rel = 0.0;
    std::size_t valid = 0;
    std::size_t masked = 0;
    std::size_t silent_masked = 0;
};

Metrics compute_metrics(const std::vector<double>& rho_true, const ReconstructionResult& r);

struct ScenarioOutcome {
    ScenarioSetup setup;
    InjectionSweep sweep;
    ReconstructionResult result;
    std::vector<double> rho_true;
    Metrics metrics;
    MeasurementReport report;
};

// Full loop without touching the file system.
ScenarioOutcome run_pipeline(const ScenarioConfig& c, const Progress& progress = {});
ReconstructionResult invert_sweep(const ScenarioSetup& s, const InjectionSweep& sweep);
std::vector<double> true_density(const ScenarioSetup& s);

// ---- files ----
void save_sweep(const std::string& path, const InjectionSweep& s);
InjectionSweep load_sweep(const std::string& path);

struct ResultRow {
    Vec3 z;
    double rho_true = 0.0;
    double rho_rec = 0.0;
    int mask = 0;
    std::string reason;
    double im_residual = 0.0;
};
void write_results_csv(const std::string& path, const std::vector<double>& rho_true, const ReconstructionResult& r);
std::vector<ResultRow> read_results_csv(const std::string& path);
void write_farfield_csv(const std::string& path, const FarField& f);
FarField read_farfield_csv(const std::string& path);
std::string summary_json(const ScenarioOutcome& o);

// Refuses an existing non-empty directory unless `force`.
void prepare_output_dir(const std::string& dir, bool force);
void write_outputs(const std::string& dir, const ScenarioOutcome& o, double seconds);

}  // namespace relastic
