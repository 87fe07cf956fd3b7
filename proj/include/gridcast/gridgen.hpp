#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gridcast/tensor.hpp"

namespace gridcast {

// Published energy targets the synthesizer is scaled against.
inline constexpr double kResidentialDailyKwh = 37.0;         // per household per day
inline constexpr double kCommercialAnnualKwhPerSqft = 22.5;  // per square foot per year
inline constexpr int kHoursPerYear = 8760;                   // 365-day year, no leap handling
inline constexpr int kFeederNodes = 44;
inline constexpr int kFeederEdges = 42;
inline constexpr int kFeatureColumns = 2 * kFeederNodes;  // [P_0..P_43, Q_0..Q_43]

enum class LoadClass { residential, hospital, restaurant, retail, hotel, office };

std::string to_string(LoadClass c);
LoadClass parse_load_class(const std::string& name);

struct GridNode {
    int id = 0;
    LoadClass load_class = LoadClass::residential;
    double size = 0;  // households (residential) or floor area in ft^2 (commercial)
};

/// Two radial feeders over 44 nodes joined by nothing: 42 edges, 2 components.
struct DistributionNetwork {
    std::vector<GridNode> nodes;
    std::vector<std::pair<int, int>> edges;

    void validate() const;
};

std::string network_hash(const DistributionNetwork& net);

/// Parametric stand-in for a simulated base profile: daily shape x weekly
/// factor x seasonal swing x multiplicative noise.
struct LoadProfileSpec {
    LoadClass load_class = LoadClass::residential;
    std::array<double, 24> base_daily_shape{};  // nonnegative, sums to 1
    std::array<double, 7> weekly_factor{};      // day 0 = Monday
    double seasonal_amplitude = 0;
    double noise_std = 0;
    double power_factor = 0.95;

    static LoadProfileSpec defaults_for(LoadClass c);
    void validate() const;
};

struct LoadDataset {
    MatrixRM matrix;  // T x 88
    std::vector<std::string> timestamps;
    std::uint64_t seed = 0;
    int years = 0;
    std::string network_hash;
};

/// Lazy sliding-window view: inputs[i] = rows i..i+lookback-1, target[i] =
/// row i+lookback, strictly chronological, no wraparound.
struct WindowedSamples {
    const MatrixRM* data = nullptr;
    Index lookback = 24;

    Index count() const { return data->rows() - lookback; }
    auto input(Index i) const { return data->middleRows(i, lookback); }
    auto target(Index i) const { return data->row(i + lookback); }
};

DistributionNetwork build_network(std::uint64_t seed);

/// Hourly envelope with noise; hours must be 8760 or 43800. Values are
/// nonnegative; noise is clipped to three standard deviations.
Eigen::VectorXd synthesize_base_profile(const LoadProfileSpec& spec, Index hours, std::uint64_t seed);

/// Scale a mean-one base series so the node hits its published consumption
/// target (37 kWh/household/day or 22.5 kWh/ft^2/year).
Eigen::VectorXd scale_to_node(const GridNode& node, const Eigen::VectorXd& base_mean_one);

/// Q_t = P_t * tan(arccos(pf)), lagging convention.
Eigen::VectorXd derive_reactive(const Eigen::VectorXd& active_kw, double power_factor);

LoadDataset generate_dataset(const DistributionNetwork& net, int years, std::uint64_t seed);

WindowedSamples window(const LoadDataset& dataset, Index lookback = 24);

// Deterministic per-stream seed derivation.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// CSV with header timestamp,P_0..P_43,Q_0..Q_43; values in kW/kvar with
/// shortest round-trip formatting. Leading comment lines carry embedded
/// metadata and start with '#'.
void write_dataset_csv(const std::string& path, const LoadDataset& dataset,
                       const std::string& embedded_config_json = "");
LoadDataset read_dataset_csv(const std::string& path);

void write_dataset_meta(const std::string& path, const LoadDataset& dataset,
                        const std::string& embedded_config_json = "");

void write_network_json(const std::string& path, const DistributionNetwork& net);
DistributionNetwork read_network_json(const std::string& path);

}  // namespace gridcast
