#ifndef LSC_FEATURES_HPP
#define LSC_FEATURES_HPP

#include <set>
#include <string>
#include <vector>

#include "lsc/common.hpp"
#include "lsc/dataio.hpp"

namespace lsc {

// Derived optical index channels, appended as channels 12..17. Every index
// is a normalized difference (a-b)/(a+b+eps) of two raw optical bands.
struct IndexSpec {
    std::string name;
    int band_a;
    int band_b;
};

constexpr double kIndexEpsilon = 1e-10;

const std::vector<IndexSpec>& index_definitions();

// Name of channel c in an enriched layout: raw names for 0..11, index names
// for 12..17.
std::string channel_name(std::size_t c);
int channel_index(const std::string& name, std::size_t channel_count);

enum class ScalerMode { kStandard, kRobust, kNone };

ScalerMode scaler_mode_from_string(const std::string& s);
std::string to_string(ScalerMode mode);

struct ScalerParams {
    ScalerMode mode = ScalerMode::kNone;
    // standard: mean/stddev; robust: 5th/95th percentile
    std::vector<double> center;
    std::vector<double> scale_hi;  // stddev for standard, p95 for robust
    std::string fitted_on;

    std::size_t channels() const { return center.size(); }
};

struct FeatureTable {
    std::size_t n_rows = 0;
    std::vector<std::string> column_names;  // "ch{c}_{stat}"
    std::vector<std::string> row_ids;
    std::vector<double> matrix;  // n_rows x columns, row-major

    std::size_t cols() const { return column_names.size(); }
    double& at(std::size_t r, std::size_t c) { return matrix[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return matrix[r * cols() + c]; }
};

const std::vector<std::string>& statistic_names();  // min,mean,median,max,std,skew,kurt

// Appends the six index channels; input must have exactly 12 channels.
PatchStack compute_indices(const PatchStack& stack);

ScalerParams fit_scaler(const std::vector<const PatchStack*>& stacks, ScalerMode mode);
PatchStack apply_scaler(const PatchStack& stack, const ScalerParams& params);

// Per patch and channel: min, mean, median, max, population std, Fisher
// skewness, excess kurtosis. Column order is channel-major, statistics in the
// fixed order above.
FeatureTable compute_patch_statistics(const PatchStack& stack,
                                      const std::vector<std::string>* ids = nullptr);

FeatureTable filter_columns(const FeatureTable& table, const std::set<std::string>& drop_stats,
                            const std::set<std::string>& drop_channels);

void write_feature_table(const FeatureTable& table, const std::string& path);
FeatureTable load_feature_table(const std::string& path);

// Shared helpers, also used as building blocks by the synthetic-data checks.
double percentile_linear(std::vector<double> sorted_needed, double q);

}  // namespace lsc

#endif
