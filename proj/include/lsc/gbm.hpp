#ifndef LSC_GBM_HPP
#define LSC_GBM_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "lsc/common.hpp"
#include "lsc/features.hpp"

namespace lsc {

struct GbmConfig {
    double learning_rate = 0.1;
    int n_rounds = 100;
    int num_leaves = 31;
    int max_depth = 6;
    double subsample = 1.0;
    double colsample = 1.0;
    double scale_pos_weight = 1.0;
    double l2_lambda = 0.0;
    int min_samples_leaf = 20;
    int n_bins = 256;
    std::uint64_t seed = 0;
    int n_threads = 1;

    void validate() const;

    // the two preset families used throughout: a fast/shallow one and a
    // slow/deep one
    static GbmConfig boost_a();
    static GbmConfig boost_b();
    static GbmConfig preset(const std::string& name);
};

struct BinnedMatrix {
    std::size_t n_rows = 0;
    std::size_t n_features = 0;
    std::vector<std::uint16_t> bins;              // n_rows x n_features
    std::vector<std::vector<double>> bin_edges;   // ascending cuts per feature

    std::uint16_t at(std::size_t r, std::size_t f) const { return bins[r * n_features + f]; }
};

struct TreeNode {
    int feature = -1;     // -1 marks a leaf
    int bin = -1;         // split goes left when row bin <= bin
    double cut = 0.0;     // raw-value threshold matching the bin boundary
    int left = -1;
    int right = -1;
    double value = 0.0;   // leaf weight in log-odds, learning rate applied

    bool is_leaf() const { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;  // node 0 is the root
    int n_leaves = 0;
    int depth = 0;
};

struct FeatureImportance {
    std::vector<double> gain;
    std::vector<std::int64_t> splits;

    std::vector<double> normalized_gain() const;
};

struct GbmModel {
    GbmConfig config;
    double base_score = 0.0;  // log-odds of the weighted class prior
    std::vector<std::vector<double>> bin_edges;
    std::vector<std::string> feature_names;
    std::vector<Tree> trees;
    FeatureImportance importance;
    std::vector<double> train_loss;  // weighted logistic loss after each round
};

// Per-feature cuts at evenly spaced quantiles of the distinct values; ties
// collapse cuts and the mapping is monotone in the raw value.
BinnedMatrix quantile_bin(const FeatureTable& table, int n_bins);

// Bin one raw row with previously fitted edges; values above the last cut
// fall in the top bin.
std::vector<std::uint16_t> bin_row(const std::vector<std::vector<double>>& edges,
                                   const double* row);

// Weighted logistic gradients/hessians at the given scores; positives carry
// weight scale_pos_weight.
void logistic_gradients(const std::vector<double>& scores, const std::vector<int>& labels,
                        double scale_pos_weight, std::vector<double>& grad,
                        std::vector<double>& hess);

double weighted_logistic_loss(const std::vector<double>& scores, const std::vector<int>& labels,
                              double scale_pos_weight);

GbmModel fit_gbm(const BinnedMatrix& binned, const std::vector<int>& labels,
                 const GbmConfig& config, const std::vector<std::string>& feature_names = {});

GbmModel fit_gbm(const FeatureTable& table, const std::vector<int>& labels,
                 const GbmConfig& config);

std::vector<double> predict_gbm(const GbmModel& model, const BinnedMatrix& binned);
std::vector<double> predict_gbm(const GbmModel& model, const FeatureTable& table);

const FeatureImportance& compute_feature_importance(const GbmModel& model);

// JSON document with config, bin edges, base score, explicit node records and
// importances; reload reproduces bit-identical predictions.
void save_gbm_model(const GbmModel& model, const std::string& path);
GbmModel load_gbm_model(const std::string& path);
std::string gbm_model_to_json(const GbmModel& model);
GbmModel gbm_model_from_json(const std::string& text);

}  // namespace lsc

#endif
