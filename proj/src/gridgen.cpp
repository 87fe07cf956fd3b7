#include "gridcast/gridgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <queue>
#include <random>
#include <set>
#include <sstream>

namespace gridcast {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kSeasonalPeakDay = 196;   // mid-July cooling peak
constexpr int kFirstDayOfWeek = 3;      // series starts on a Thursday (2015-01-01)
constexpr double kResidentialPowerFactor = 0.95;
constexpr double kCommercialPowerFactor = 0.90;

void expect(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

std::string to_string(LoadClass c) {
    switch (c) {
        case LoadClass::residential: return "residential";
        case LoadClass::hospital: return "hospital";
        case LoadClass::restaurant: return "restaurant";
        case LoadClass::retail: return "retail";
        case LoadClass::hotel: return "hotel";
        case LoadClass::office: return "office";
    }
    throw std::logic_error("unreachable load class");
}

LoadClass parse_load_class(const std::string& name) {
    for (LoadClass c : {LoadClass::residential, LoadClass::hospital, LoadClass::restaurant, LoadClass::retail,
                        LoadClass::hotel, LoadClass::office})
        if (name == to_string(c)) return c;
    throw std::invalid_argument("unknown load class '" + name + "'");
}

void DistributionNetwork::validate() const {
    expect(static_cast<int>(nodes.size()) == kFeederNodes,
           "network must have exactly " + std::to_string(kFeederNodes) + " nodes, got " +
               std::to_string(nodes.size()));
    expect(static_cast<int>(edges.size()) == kFeederEdges,
           "network must have exactly " + std::to_string(kFeederEdges) + " edges, got " +
               std::to_string(edges.size()));
    std::vector<bool> seen_id(nodes.size(), false);
    for (const GridNode& n : nodes) {
        expect(n.id >= 0 && n.id < kFeederNodes, "node id out of range: " + std::to_string(n.id));
        expect(!seen_id[static_cast<std::size_t>(n.id)], "duplicate node id: " + std::to_string(n.id));
        seen_id[static_cast<std::size_t>(n.id)] = true;
        expect(n.size > 0, "node " + std::to_string(n.id) + " has nonpositive size");
    }
    std::set<std::pair<int, int>> seen;
    std::vector<std::vector<int>> adj(nodes.size());
    for (auto [a, b] : edges) {
        expect(a >= 0 && a < kFeederNodes && b >= 0 && b < kFeederNodes, "edge endpoint out of range");
        expect(a != b, "self-loop at node " + std::to_string(a));
        expect(seen.insert(std::minmax(a, b)).second, "duplicate edge");
        adj[static_cast<std::size_t>(a)].push_back(b);
        adj[static_cast<std::size_t>(b)].push_back(a);
    }
    // 44 nodes, 42 edges and 2 components together force a radial forest
    int components = 0;
    std::vector<bool> visited(nodes.size(), false);
    for (std::size_t start = 0; start < nodes.size(); ++start) {
        if (visited[start]) continue;
        ++components;
        std::queue<int> q;
        q.push(static_cast<int>(start));
        visited[start] = true;
        while (!q.empty()) {
            int u = q.front();
            q.pop();
            for (int v : adj[static_cast<std::size_t>(u)])
                if (!visited[static_cast<std::size_t>(v)]) {
                    visited[static_cast<std::size_t>(v)] = true;
                    q.push(v);
                }
        }
    }
    expect(components == 2, "network must form exactly 2 feeders, got " + std::to_string(components));
}

std::string network_hash(const DistributionNetwork& net) {
    std::string canon;
    char buf[64];
    for (const GridNode& n : net.nodes) {
        std::snprintf(buf, sizeof(buf), "%d:%s:%.17g;", n.id, to_string(n.load_class).c_str(), n.size);
        canon += buf;
    }
    canon += "|";
    for (auto [a, b] : net.edges) {
        std::snprintf(buf, sizeof(buf), "%d-%d;", std::min(a, b), std::max(a, b));
        canon += buf;
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Load profile shapes
// ---------------------------------------------------------------------------

namespace {

struct ClassDefaults {
    std::array<double, 24> daily;
    std::array<double, 7> weekly;
    double seasonal;
    double power_factor;
};

ClassDefaults class_defaults(LoadClass c) {
    switch (c) {
        case LoadClass::residential:
            return {{0.55, 0.50, 0.45, 0.42, 0.42, 0.50, 0.70, 0.90, 0.85, 0.75, 0.70, 0.70,
                     0.72, 0.70, 0.72, 0.80, 1.00, 1.30, 1.60, 1.75, 1.70, 1.50, 1.10, 0.75},
                    {1.00, 0.98, 0.98, 0.98, 1.00, 1.08, 1.08},
                    0.30,
                    kResidentialPowerFactor};
        case LoadClass::hospital:
            return {{0.88, 0.86, 0.85, 0.85, 0.86, 0.90, 0.95, 1.05, 1.10, 1.12, 1.15, 1.15,
                     1.12, 1.12, 1.10, 1.08, 1.05, 1.05, 1.02, 1.00, 0.98, 0.95, 0.92, 0.90},
                    {1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 1.00},
                    0.10,
                    kCommercialPowerFactor};
        case LoadClass::restaurant:
            return {{0.25, 0.20, 0.18, 0.18, 0.20, 0.30, 0.50, 0.70, 0.90, 1.10, 1.40, 1.70,
                     1.80, 1.60, 1.20, 1.00, 1.20, 1.60, 1.90, 1.95, 1.70, 1.20, 0.70, 0.40},
                    {0.90, 0.90, 0.95, 1.00, 1.15, 1.25, 1.10},
                    0.12,
                    kCommercialPowerFactor};
        case LoadClass::retail:
            return {{0.30, 0.28, 0.28, 0.28, 0.30, 0.35, 0.50, 0.70, 0.95, 1.30, 1.50, 1.55,
                     1.55, 1.50, 1.50, 1.50, 1.55, 1.60, 1.60, 1.50, 1.30, 0.90, 0.50, 0.35},
                    {0.95, 0.92, 0.95, 1.00, 1.10, 1.25, 1.05},
                    0.15,
                    kCommercialPowerFactor};
        case LoadClass::hotel:
            return {{0.65, 0.60, 0.58, 0.58, 0.60, 0.80, 1.10, 1.30, 1.20, 1.00, 0.90, 0.85,
                     0.85, 0.85, 0.85, 0.90, 1.00, 1.20, 1.35, 1.40, 1.35, 1.20, 1.00, 0.80},
                    {0.95, 0.92, 0.92, 0.95, 1.10, 1.20, 1.15},
                    0.18,
                    kCommercialPowerFactor};
        case LoadClass::office:
            return {{0.30, 0.28, 0.28, 0.28, 0.30, 0.40, 0.70, 1.10, 1.40, 1.50, 1.55, 1.55,
                     1.50, 1.55, 1.55, 1.50, 1.40, 1.10, 0.80, 0.60, 0.50, 0.40, 0.35, 0.32},
                    {1.15, 1.18, 1.18, 1.15, 1.10, 0.45, 0.35},
                    0.15,
                    kCommercialPowerFactor};
    }
    throw std::logic_error("unreachable load class");
}

}  // namespace

LoadProfileSpec LoadProfileSpec::defaults_for(LoadClass c) {
    ClassDefaults d = class_defaults(c);
    LoadProfileSpec spec;
    spec.load_class = c;
    double total = 0;
    for (double v : d.daily) total += v;
    for (std::size_t i = 0; i < 24; ++i) spec.base_daily_shape[i] = d.daily[i] / total;
    spec.weekly_factor = d.weekly;
    spec.seasonal_amplitude = d.seasonal;
    spec.noise_std = 0.05;
    spec.power_factor = d.power_factor;
    spec.validate();
    return spec;
}

void LoadProfileSpec::validate() const {
    double total = 0;
    for (double v : base_daily_shape) {
        expect(v >= 0, "daily shape weights must be nonnegative");
        total += v;
    }
    expect(std::abs(total - 1.0) <= 1e-9, "daily shape must sum to 1");
    for (double v : weekly_factor) expect(v > 0, "weekly factors must be positive");
    expect(seasonal_amplitude >= 0 && seasonal_amplitude < 1, "seasonal amplitude must lie in [0, 1)");
    expect(noise_std >= 0 && noise_std <= 0.3, "noise_std must lie in [0, 0.3]");
    expect(power_factor > 0.7 && power_factor <= 1.0, "power_factor must lie in (0.7, 1.0]");
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

DistributionNetwork build_network(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    DistributionNetwork net;
    net.nodes.resize(kFeederNodes);

    // two radial feeders grown by random attachment; roots at 0 and 22
    const int half = kFeederNodes / 2;
    for (int i = 1; i < half; ++i) {
        std::uniform_int_distribution<int> pick(0, i - 1);
        net.edges.emplace_back(pick(rng), i);
    }
    for (int i = half + 1; i < kFeederNodes; ++i) {
        std::uniform_int_distribution<int> pick(half, i - 1);
        net.edges.emplace_back(pick(rng), i);
    }

    // ~70/30 residential/commercial split: 31 residential, 13 commercial
    std::vector<LoadClass> classes(31, LoadClass::residential);
    for (int i = 0; i < 3; ++i) classes.push_back(LoadClass::office);
    for (int i = 0; i < 3; ++i) classes.push_back(LoadClass::retail);
    for (int i = 0; i < 3; ++i) classes.push_back(LoadClass::restaurant);
    for (int i = 0; i < 2; ++i) classes.push_back(LoadClass::hotel);
    for (int i = 0; i < 2; ++i) classes.push_back(LoadClass::hospital);
    std::shuffle(classes.begin(), classes.end(), rng);

    std::uniform_int_distribution<int> households(50, 400);
    std::uniform_real_distribution<double> log_area(std::log(20000.0), std::log(500000.0));
    for (int i = 0; i < kFeederNodes; ++i) {
        GridNode& n = net.nodes[static_cast<std::size_t>(i)];
        n.id = i;
        n.load_class = classes[static_cast<std::size_t>(i)];
        n.size = n.load_class == LoadClass::residential ? static_cast<double>(households(rng))
                                                        : std::exp(log_area(rng));
    }
    net.validate();
    return net;
}

Eigen::VectorXd synthesize_base_profile(const LoadProfileSpec& spec, Index hours, std::uint64_t seed) {
    spec.validate();
    expect(hours == kHoursPerYear || hours == 5 * kHoursPerYear,
           "profile length must be 8760 or 43800 hours, got " + std::to_string(hours));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, spec.noise_std > 0 ? spec.noise_std : 1.0);
    const double clip = 3.0 * spec.noise_std;

    Eigen::VectorXd out(hours);
    for (Index t = 0; t < hours; ++t) {
        const Index hour = t % 24;
        const Index day = t / 24;
        const Index dow = (day + kFirstDayOfWeek) % 7;
        const Index doy = day % 365;
        double v = spec.base_daily_shape[static_cast<std::size_t>(hour)] *
                   spec.weekly_factor[static_cast<std::size_t>(dow)] *
                   (1.0 + spec.seasonal_amplitude *
                              std::cos(2.0 * kPi * static_cast<double>(doy - kSeasonalPeakDay) / 365.0));
        if (spec.noise_std > 0) {
            const double eps = std::clamp(noise(rng), -clip, clip);
            v *= 1.0 + eps;
        }
        out[t] = std::max(v, 0.0);
    }
    return out;
}

Eigen::VectorXd scale_to_node(const GridNode& node, const Eigen::VectorXd& base_mean_one) {
    expect(node.size > 0, "node " + std::to_string(node.id) + " has nonpositive size");
    expect(base_mean_one.size() > 0, "empty base series");
    expect(std::abs(base_mean_one.mean() - 1.0) <= 1e-9, "base series must be mean-normalized to 1");
    const double mean_kw = node.load_class == LoadClass::residential
                               ? node.size * kResidentialDailyKwh / 24.0
                               : node.size * kCommercialAnnualKwhPerSqft / static_cast<double>(kHoursPerYear);
    return base_mean_one * mean_kw;
}

Eigen::VectorXd derive_reactive(const Eigen::VectorXd& active_kw, double power_factor) {
    expect(power_factor > 0.7 && power_factor <= 1.0,
           "power_factor must lie in (0.7, 1.0], got " + std::to_string(power_factor));
    const double ratio = std::tan(std::acos(power_factor));
    return active_kw * ratio;
}

namespace {

std::vector<std::string> make_timestamps(Index hours) {
    static constexpr int kMonthDays[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(hours));
    int year = 2015, month = 0, day = 0, hour = 0;
    char buf[64];
    for (Index t = 0; t < hours; ++t) {
        std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:00:00", year, month + 1, day + 1, hour);
        out.emplace_back(buf);
        if (++hour == 24) {
            hour = 0;
            if (++day == kMonthDays[month]) {
                day = 0;
                if (++month == 12) {
                    month = 0;
                    ++year;
                }
            }
        }
    }
    return out;
}

}  // namespace

LoadDataset generate_dataset(const DistributionNetwork& net, int years, std::uint64_t seed) {
    expect(years == 1 || years == 5, "unsupported dataset length: " + std::to_string(years) + " years");
    net.validate();
    const Index hours = static_cast<Index>(years) * kHoursPerYear;

    LoadDataset ds;
    ds.matrix.resize(hours, kFeatureColumns);
    for (const GridNode& node : net.nodes) {
        LoadProfileSpec spec = LoadProfileSpec::defaults_for(node.load_class);
        Eigen::VectorXd base = synthesize_base_profile(spec, hours, mix_seed(seed, static_cast<std::uint64_t>(node.id)));
        base /= base.mean();
        Eigen::VectorXd p = scale_to_node(node, base);
        Eigen::VectorXd q = derive_reactive(p, spec.power_factor);
        ds.matrix.col(node.id) = p;
        ds.matrix.col(kFeederNodes + node.id) = q;
    }
    ds.timestamps = make_timestamps(hours);
    ds.seed = seed;
    ds.years = years;
    ds.network_hash = network_hash(net);
    return ds;
}

WindowedSamples window(const LoadDataset& dataset, Index lookback) {
    expect(lookback >= 1, "lookback must be >= 1");
    expect(dataset.matrix.rows() > lookback,
           "dataset has " + std::to_string(dataset.matrix.rows()) + " rows; need more than lookback " +
               std::to_string(lookback));
    return WindowedSamples{&dataset.matrix, lookback};
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace {

std::string shortest_double(double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

std::string expected_header() {
    std::string h = "timestamp";
    for (int i = 0; i < kFeederNodes; ++i) h += ",P_" + std::to_string(i);
    for (int i = 0; i < kFeederNodes; ++i) h += ",Q_" + std::to_string(i);
    return h;
}

}  // namespace

void write_dataset_csv(const std::string& path, const LoadDataset& dataset,
                       const std::string& embedded_config_json) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open dataset file for writing: " + path);
    if (!embedded_config_json.empty()) os << "# config: " << embedded_config_json << "\n";
    os << "# seed: " << dataset.seed << " years: " << dataset.years << " network: " << dataset.network_hash
       << "\n";
    os << expected_header() << "\n";
    for (Index r = 0; r < dataset.matrix.rows(); ++r) {
        os << dataset.timestamps[static_cast<std::size_t>(r)];
        for (Index c = 0; c < dataset.matrix.cols(); ++c) os << ',' << shortest_double(dataset.matrix(r, c));
        os << '\n';
    }
    if (!os) throw std::runtime_error("failed writing dataset: " + path);
}

LoadDataset read_dataset_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open dataset: " + path);

    std::string line;
    std::uint64_t seed = 0;
    int years = 0;
    std::string net_hash;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ls(line);
            std::string tag, key;
            ls >> tag >> key;
            if (key == "seed:") {
                ls >> seed >> key >> years >> key >> net_hash;
            }
            continue;
        }
        break;  // header line reached
    }
    if (line != expected_header()) throw std::runtime_error("unexpected dataset header in " + path);

    std::vector<std::string> timestamps;
    std::vector<double> values;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::size_t pos = line.find(',');
        if (pos == std::string::npos) throw std::runtime_error("malformed dataset row in " + path);
        timestamps.push_back(line.substr(0, pos));
        const char* ptr = line.c_str() + pos + 1;
        const char* end = line.c_str() + line.size();
        for (int c = 0; c < kFeatureColumns; ++c) {
            double v = 0;
            auto [next, ec] = std::from_chars(ptr, end, v);
            if (ec != std::errc()) throw std::runtime_error("malformed number in " + path);
            values.push_back(v);
            ptr = next;
            if (ptr < end && *ptr == ',') ++ptr;
        }
    }

    LoadDataset ds;
    const Index rows = static_cast<Index>(timestamps.size());
    ds.matrix = Eigen::Map<const MatrixRM>(values.data(), rows, kFeatureColumns);
    ds.timestamps = std::move(timestamps);
    ds.seed = seed;
    ds.years = years;
    ds.network_hash = net_hash;
    return ds;
}

void write_dataset_meta(const std::string& path, const LoadDataset& dataset,
                        const std::string& embedded_config_json) {
    nlohmann::json j;
    j["generator_version"] = "1.0";
    j["seed"] = dataset.seed;
    j["years"] = dataset.years;
    j["network_hash"] = dataset.network_hash;
    j["rows"] = dataset.matrix.rows();
    j["columns"] = dataset.matrix.cols();
    j["config"] = embedded_config_json.empty() ? nlohmann::json(nullptr)
                                               : nlohmann::json::parse(embedded_config_json);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open metadata file for writing: " + path);
    os << j.dump(2) << "\n";
}

void write_network_json(const std::string& path, const DistributionNetwork& net) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const GridNode& n : net.nodes)
        nodes.push_back({{"id", n.id}, {"class", to_string(n.load_class)}, {"size", n.size}});
    nlohmann::json edges = nlohmann::json::array();
    for (auto [a, b] : net.edges) edges.push_back({a, b});
    nlohmann::json j{{"nodes", nodes}, {"edges", edges}, {"hash", network_hash(net)}};
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open network file for writing: " + path);
    os << j.dump(2) << "\n";
}

DistributionNetwork read_network_json(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open network file: " + path);
    nlohmann::json j = nlohmann::json::parse(is);
    DistributionNetwork net;
    for (const auto& n : j.at("nodes"))
        net.nodes.push_back({n.at("id").get<int>(), parse_load_class(n.at("class").get<std::string>()),
                             n.at("size").get<double>()});
    for (const auto& e : j.at("edges")) net.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    net.validate();
    return net;
}

}  // namespace gridcast
