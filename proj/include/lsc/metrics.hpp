#ifndef LSC_METRICS_HPP
#define LSC_METRICS_HPP

#include <string>
#include <vector>

#include "lsc/common.hpp"

namespace lsc {

struct ConfusionMatrix {
    std::size_t tn = 0, fp = 0, fn = 0, tp = 0;
    std::size_t total() const { return tn + fp + fn + tp; }
};

struct RocPoint {
    double fpr;
    double tpr;
    double threshold;
};

struct RocCurve {
    std::vector<RocPoint> points;  // from (0,0) to (1,1), thresholds descending
    double auc = 0.0;
};

struct CalibrationResult {
    double threshold = 0.5;
    double f1 = 0.0;
    std::vector<std::pair<double, double>> sweep;  // threshold -> F1, ascending
};

struct OverallScore {
    double oof = 0.0;
    double public_lb = 0.0;
    double private_lb = 0.0;
    double overall = 0.0;
};

// Prediction rule is p >= threshold everywhere.
ConfusionMatrix confusion_counts(const std::vector<int>& labels,
                                 const std::vector<double>& probabilities, double threshold);

struct PrecisionRecallF1 {
    double precision;
    double recall;
    double f1;
};

// Degenerate denominators yield 0 rather than NaN.
PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& cm);

double f1_score(const std::vector<int>& labels, const std::vector<double>& probabilities,
                double threshold);

// AUC via rank statistics (Mann-Whitney, ties get half credit); the curve is
// built from sorted unique thresholds and its trapezoidal integral equals the
// rank AUC.
RocCurve roc_auc(const std::vector<int>& labels, const std::vector<double>& probabilities);

std::vector<double> ensemble_average(const std::vector<std::vector<double>>& prob_vectors,
                                     const std::vector<double>& weights = {});

// Candidates: midpoints of consecutive distinct probabilities, the 0.01 grid,
// and 0.5. Ties break toward 0.5, then toward the smaller threshold.
CalibrationResult calibrate_threshold(const std::vector<int>& labels,
                                      const std::vector<double>& oof_probabilities);

// overall = 0.5*oof + 0.5*(0.3*public + 0.7*private)
OverallScore overall_score(double oof, double public_lb, double private_lb);

}  // namespace lsc

#endif
