#include "usra/evalharness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "usra/error.hpp"
#include "usra/rng.hpp"

namespace usra {

double evaluate(const ModelBundle& bundle, Variant variant, int episodes, uint64_t seed) {
    if (episodes < 1) raise(ErrorKind::logic, "evaluate needs episodes >= 1");
    double total = 0.0;
    StriderEnv env;
    for (int e = 0; e < episodes; ++e) {
        const DomainSpec spec = make_domain(variant, derive_seed(seed, 0xd0, static_cast<uint64_t>(e)));
        env.reset(spec, derive_seed(seed, 0xe1, static_cast<uint64_t>(e)));
        double ep_return = 0.0;
        while (!env.done()) {
            const Tensor stacked = env.observation().stacked();
            Tensor obs({1, kObsChannels, kFrameSize, kFrameSize},
                       std::vector<float>(stacked.data(), stacked.data() + stacked.size()));
            const Tensor q = q_values_eval(bundle, obs);
            int best = 0;
            for (int a = 1; a < kActionCount; ++a)
                if (q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)]) best = a;
            ep_return += static_cast<double>(env.step(ActionId::from_index(best)).reward);
        }
        total += ep_return;
    }
    return total / episodes;
}

double AdaptationTable::cell(const std::string& method, Variant v) const {
    for (std::size_t i = 0; i < methods.size(); ++i)
        if (methods[i] == method) return cells[i][static_cast<std::size_t>(v)];
    raise(ErrorKind::logic, "no table row for method '" + method + "'");
}

AdaptationTable adaptation_table(const std::vector<std::pair<std::string, const ModelBundle*>>& bundles,
                                 int episodes, uint64_t seed) {
    if (bundles.empty()) raise(ErrorKind::logic, "adaptation_table needs at least one method");
    AdaptationTable table;
    for (const auto& [name, bundle] : bundles) {
        std::array<double, 5> row{};
        for (Variant v : all_variants())
            row[static_cast<std::size_t>(v)] = evaluate(*bundle, v, episodes, seed);
        table.methods.push_back(name);
        table.cells.push_back(row);
    }
    return table;
}

const char* const kTableHeader = "method,train,color_easy,color_hard,video_easy,video_hard";

void write_table_csv(const std::string& path, const AdaptationTable& table) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(ErrorKind::filesystem, "cannot open '" + path + "' for writing");
    out << kTableHeader << "\n";
    char buf[256];
    for (std::size_t i = 0; i < table.methods.size(); ++i) {
        const auto& c = table.cells[i];
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f", table.methods[i].c_str(), c[0], c[1],
                      c[2], c[3], c[4]);
        out << buf << "\n";
    }
    if (!out) raise(ErrorKind::filesystem, "short write to '" + path + "'");
}

AdaptationTable read_table_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorKind::filesystem, "cannot open table '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != kTableHeader)
        raise(ErrorKind::config, "bad table header in '" + path + "'");
    AdaptationTable table;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string method;
        if (!std::getline(ss, method, ',')) raise(ErrorKind::config, "bad table row: " + line);
        std::array<double, 5> cells{};
        std::string field;
        for (int i = 0; i < 5; ++i) {
            if (!std::getline(ss, field, ',')) raise(ErrorKind::config, "bad table row: " + line);
            cells[static_cast<std::size_t>(i)] = std::strtod(field.c_str(), nullptr);
        }
        table.methods.push_back(method);
        table.cells.push_back(cells);
    }
    return table;
}

double relative_improvement(double a, double b) {
    if (b == 0.0) raise(ErrorKind::logic, "relative_improvement: reference return is 0");
    return std::round(100.0 * (a - b) / b * 10.0) / 10.0;
}

double mean_improvement(const std::array<double, 5>& a, const std::array<double, 5>& b) {
    double sum = 0.0;
    for (std::size_t i = 1; i < 5; ++i) sum += relative_improvement(a[i], b[i]);
    return sum / 4.0;
}

std::vector<CurvePoint> learning_curve(const std::vector<MetricsRow>& log, int window) {
    if (log.empty()) raise(ErrorKind::config, "learning_curve: empty metrics log");
    if (window < 1) raise(ErrorKind::logic, "learning_curve: window must be >= 1");
    const int n = static_cast<int>(log.size());
    std::vector<CurvePoint> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int lo = std::max(0, i - (window - 1) / 2);
        const int hi = std::min(n - 1, i + window / 2);
        double sum = 0.0;
        for (int j = lo; j <= hi; ++j) sum += static_cast<double>(log[static_cast<std::size_t>(j)].train_return);
        out[static_cast<std::size_t>(i)] = {log[static_cast<std::size_t>(i)].episode,
                                            static_cast<double>(log[static_cast<std::size_t>(i)].train_return),
                                            sum / (hi - lo + 1)};
    }
    return out;
}

const char* const kCurveHeader = "episode,raw_return,smoothed_return";

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(ErrorKind::filesystem, "cannot open '" + path + "' for writing");
    out << kCurveHeader << "\n";
    char buf[128];
    for (const CurvePoint& p : curve) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f", p.episode, p.raw, p.smoothed);
        out << buf << "\n";
    }
    if (!out) raise(ErrorKind::filesystem, "short write to '" + path + "'");
}

}  // namespace usra
