#pragma once

#include <array>
#include <string>
#include <vector>

#include "usra/envsim.hpp"
#include "usra/models.hpp"
#include "usra/trainer.hpp"

namespace usra {

constexpr int kDefaultEvalEpisodes = 10;

/// Greedy (epsilon = 0) rollouts; one fresh DomainSpec per episode seeded
/// from (seed, episode index). Never touches replay or mutates the bundle.
double evaluate(const ModelBundle& bundle, Variant variant, int episodes, uint64_t seed);

/// method rows x the five domain columns of mean returns.
struct AdaptationTable {
    std::vector<std::string> methods;
    std::vector<std::array<double, 5>> cells;  // column order = all_variants()

    double cell(const std::string& method, Variant v) const;  // error if missing
};

AdaptationTable adaptation_table(const std::vector<std::pair<std::string, const ModelBundle*>>& bundles,
                                 int episodes, uint64_t seed);

extern const char* const kTableHeader;  // method,train,color_easy,color_hard,video_easy,video_hard
void write_table_csv(const std::string& path, const AdaptationTable& table);
AdaptationTable read_table_csv(const std::string& path);

/// 100*(a-b)/b, reported to one decimal. Error when b == 0.
double relative_improvement(double a, double b);

/// Mean of the four non-train per-domain improvements of row a over row b.
double mean_improvement(const std::array<double, 5>& a, const std::array<double, 5>& b);

struct CurvePoint {
    int episode = 0;
    double raw = 0.0;
    double smoothed = 0.0;
};

/// Centered moving average of train_return, window truncated at the
/// boundaries; window w covers [i-(w-1)/2, i+w/2].
std::vector<CurvePoint> learning_curve(const std::vector<MetricsRow>& log, int window = 10);

extern const char* const kCurveHeader;  // episode,raw_return,smoothed_return
void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve);

}  // namespace usra
