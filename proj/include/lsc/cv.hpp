#ifndef LSC_CV_HPP
#define LSC_CV_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "lsc/dataio.hpp"
#include "lsc/features.hpp"
#include "lsc/fusion.hpp"
#include "lsc/gbm.hpp"
#include "lsc/metrics.hpp"

namespace lsc {

struct FoldAssignment {
    int k = 5;
    std::uint64_t seed = 0;
    std::vector<int> fold_of;  // fold id per sample, in [0, k)

    std::size_t size() const { return fold_of.size(); }
    std::vector<std::size_t> fold_sizes() const;
    void validate(std::size_t n_samples) const;
};

// Per-class shuffle with a seeded RNG, then a round-robin deal; the second
// class starts dealing where the first class's remainder stopped so total
// fold sizes also stay within one of each other.
FoldAssignment stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed);

struct ModelSpec {
    std::string name;  // unique key within a bundle
    std::string kind;  // "gbm" or "nn"

    // gbm pipeline: statistics features from the (optionally enriched and
    // scaled) stack, then filtered columns
    GbmConfig gbm;
    bool use_indices = true;
    ScalerMode scaler = ScalerMode::kNone;
    std::vector<std::string> drop_stats;
    std::vector<std::string> drop_channels;

    // nn pipeline
    FusionConfig fusion;
    TrainConfig train;

    void validate() const;
};

struct FoldMetrics {
    double auc = 0.0;
    double f1 = 0.0;  // at threshold 0.5
};

struct CvEntry {
    ModelSpec spec;
    std::vector<double> oof;
    std::vector<FoldMetrics> per_fold;
    FoldMetrics pooled;
    std::vector<GbmModel> fold_models;  // gbm kind
    std::vector<FusionNet> fold_nets;   // nn kind
    ScalerParams scaler_params;         // fitted when spec.scaler != none
};

struct OofBundle {
    std::vector<std::string> ids;
    std::vector<int> labels;
    FoldAssignment folds;
    std::vector<CvEntry> entries;

    bool has_ensemble = false;
    std::vector<double> ensemble;
    CalibrationResult calibration;

    const CvEntry& entry(const std::string& name) const;
    std::vector<std::string> model_names() const;
};

// Trains one fold-model per fold and assembles the OOF vector; every sample
// is predicted exactly once, by the model that never saw it.
CvEntry run_cv(const ModelSpec& spec, const PatchStack& stack,
               const std::vector<std::string>& ids, const std::vector<int>& labels,
               const FoldAssignment& folds);

struct EnsembleResult {
    std::vector<std::string> members;
    std::vector<double> probabilities;
    CalibrationResult calibration;
    FoldMetrics pooled;  // auc + F1 at the calibrated threshold
};

EnsembleResult run_ensemble(OofBundle& bundle, const std::vector<std::string>& member_names,
                            const std::vector<double>& weights = {});

struct AblationPlan {
    std::string variant;  // "none", "drop-modality", "drop-stat" or "drop-index"
    std::vector<std::string> modalities;
    std::string stat;
    std::string index_name;
    ModelSpec base;

    void validate() const;
    std::string describe() const;
};

struct AblationRow {
    std::string description;
    double baseline_f1 = 0.0;  // calibrated pooled OOF F1
    double ablated_f1 = 0.0;
    double baseline_auc = 0.0;
    double ablated_auc = 0.0;
    CvEntry baseline;
    CvEntry ablated;
};

// Baseline and ablated runs share folds and seeds so the row isolates the
// ablation effect.
AblationRow run_ablation(const AblationPlan& plan, const PatchStack& stack,
                         const std::vector<std::string>& ids, const std::vector<int>& labels,
                         const FoldAssignment& folds);

// OOF CSV interchange, header exactly "ID,fold,probability,label".
void save_oof_csv(const std::vector<std::string>& ids, const std::vector<int>& fold_of,
                  const std::vector<double>& probabilities, const std::vector<int>& labels,
                  const std::string& path);

struct OofFile {
    std::vector<std::string> ids;
    std::vector<int> fold_of;
    std::vector<double> probabilities;
    std::vector<int> labels;
};

OofFile load_oof_csv(const std::string& path);

// Run record JSON ({spec, seed, folds, per-fold metrics, pooled metrics,
// timestamps}); the timestamp honours SOURCE_DATE_EPOCH so identical runs
// produce identical bytes.
void save_run_record(const CvEntry& entry, const FoldAssignment& folds,
                     const std::string& path);

std::string deterministic_timestamp();

}  // namespace lsc

#endif
