#include "lsc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lsc {

namespace {

void check_aligned(const std::vector<int>& labels, const std::vector<double>& probabilities) {
    if (labels.size() != probabilities.size()) {
        throw ShapeError("labels and probabilities differ in length: " +
                         std::to_string(labels.size()) + " vs " +
                         std::to_string(probabilities.size()));
    }
    if (labels.empty()) throw PreconditionError("empty prediction vector");
}

std::size_t count_positives(const std::vector<int>& labels) {
    std::size_t k = 0;
    for (int v : labels) k += static_cast<std::size_t>(v != 0);
    return k;
}

}  // namespace

ConfusionMatrix confusion_counts(const std::vector<int>& labels,
                                 const std::vector<double>& probabilities, double threshold) {
    check_aligned(labels, probabilities);
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw PreconditionError("threshold must lie in (0,1), got " + std::to_string(threshold));
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        bool pred = probabilities[i] >= threshold;
        if (labels[i] != 0) {
            (pred ? cm.tp : cm.fn)++;
        } else {
            (pred ? cm.fp : cm.tn)++;
        }
    }
    return cm;
}

PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& cm) {
    double p = (cm.tp + cm.fp) > 0 ? static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp)
                                   : 0.0;
    double r = (cm.tp + cm.fn) > 0 ? static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn)
                                   : 0.0;
    double f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    return {p, r, f1};
}

double f1_score(const std::vector<int>& labels, const std::vector<double>& probabilities,
                double threshold) {
    return precision_recall_f1(confusion_counts(labels, probabilities, threshold)).f1;
}

RocCurve roc_auc(const std::vector<int>& labels, const std::vector<double>& probabilities) {
    check_aligned(labels, probabilities);
    std::size_t n_pos = count_positives(labels);
    std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw MetricError("roc_auc needs both classes present");
    }

    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return probabilities[a] > probabilities[b];
    });

    RocCurve curve;
    curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        double score = probabilities[order[i]];
        // consume the whole tie group before emitting a point
        while (i < order.size() && probabilities[order[i]] == score) {
            if (labels[order[i]] != 0) {
                ++tp;
            } else {
                ++fp;
            }
            ++i;
        }
        curve.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                                static_cast<double>(tp) / static_cast<double>(n_pos), score});
    }

    // rank form: AUC = (sum of positive ranks - n_pos(n_pos+1)/2) / (n_pos*n_neg),
    // with average ranks across ties
    std::vector<std::size_t> asc(order.rbegin(), order.rend());
    double rank_sum = 0.0;
    std::size_t j = 0;
    while (j < asc.size()) {
        std::size_t k = j;
        double score = probabilities[asc[j]];
        std::size_t pos_in_group = 0;
        while (k < asc.size() && probabilities[asc[k]] == score) {
            pos_in_group += static_cast<std::size_t>(labels[asc[k]] != 0);
            ++k;
        }
        double avg_rank = 0.5 * static_cast<double>(j + 1 + k);  // ranks j+1..k
        rank_sum += avg_rank * static_cast<double>(pos_in_group);
        j = k;
    }
    curve.auc = (rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
                (static_cast<double>(n_pos) * static_cast<double>(n_neg));
    return curve;
}

std::vector<double> ensemble_average(const std::vector<std::vector<double>>& prob_vectors,
                                     const std::vector<double>& weights) {
    if (prob_vectors.empty()) throw PreconditionError("ensemble needs at least one model");
    std::size_t n = prob_vectors[0].size();
    for (const auto& v : prob_vectors) {
        if (v.size() != n) throw ShapeError("ensemble probability vectors differ in length");
    }
    std::vector<double> w = weights;
    if (w.empty()) {
        w.assign(prob_vectors.size(), 1.0 / static_cast<double>(prob_vectors.size()));
    }
    if (w.size() != prob_vectors.size()) {
        throw ShapeError("weights must match the number of models");
    }
    double sum = 0.0;
    for (double x : w) {
        if (x < 0.0) throw ValueError("ensemble weights must be non-negative");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValueError("ensemble weights must sum to 1");

    std::vector<double> out(n, 0.0);
    for (std::size_t m = 0; m < prob_vectors.size(); ++m) {
        for (std::size_t i = 0; i < n; ++i) out[i] += w[m] * prob_vectors[m][i];
    }
    for (double& v : out) v = std::clamp(v, 0.0, 1.0);
    return out;
}

CalibrationResult calibrate_threshold(const std::vector<int>& labels,
                                      const std::vector<double>& oof_probabilities) {
    check_aligned(labels, oof_probabilities);
    std::size_t n_pos = count_positives(labels);
    if (n_pos == 0 || n_pos == labels.size()) {
        throw CalibrationError("threshold calibration needs both classes present");
    }

    std::vector<double> distinct(oof_probabilities);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<double> candidates;
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
        candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));
    }
    for (int i = 1; i <= 99; ++i) candidates.push_back(static_cast<double>(i) / 100.0);
    candidates.push_back(0.5);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    // prefix sums over samples sorted by probability make each F1 O(log n)
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return oof_probabilities[a] < oof_probabilities[b];
    });
    std::vector<double> sorted_probs(order.size());
    std::vector<std::size_t> pos_suffix(order.size() + 1, 0);
    for (std::size_t i = 0; i < order.size(); ++i) sorted_probs[i] = oof_probabilities[order[i]];
    for (std::size_t i = order.size(); i-- > 0;) {
        pos_suffix[i] = pos_suffix[i + 1] + static_cast<std::size_t>(labels[order[i]] != 0);
    }

    CalibrationResult result;
    result.sweep.reserve(candidates.size());
    bool have_best = false;
    for (double t : candidates) {
        auto it = std::lower_bound(sorted_probs.begin(), sorted_probs.end(), t);
        std::size_t first_pred = static_cast<std::size_t>(it - sorted_probs.begin());
        std::size_t predicted = order.size() - first_pred;
        std::size_t tp = pos_suffix[first_pred];
        std::size_t fp = predicted - tp;
        std::size_t fn = n_pos - tp;
        ConfusionMatrix cm{labels.size() - predicted - fn, fp, fn, tp};
        double f1 = precision_recall_f1(cm).f1;
        result.sweep.emplace_back(t, f1);
        bool better = false;
        if (!have_best || f1 > result.f1) {
            better = true;
        } else if (f1 == result.f1) {
            double cur = std::abs(result.threshold - 0.5);
            double cand = std::abs(t - 0.5);
            if (cand < cur || (cand == cur && t < result.threshold)) better = true;
        }
        if (better) {
            result.f1 = f1;
            result.threshold = t;
            have_best = true;
        }
    }
    return result;
}

OverallScore overall_score(double oof, double public_lb, double private_lb) {
    for (double v : {oof, public_lb, private_lb}) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ValueError("overall_score inputs must lie in [0,1]");
        }
    }
    OverallScore s;
    s.oof = oof;
    s.public_lb = public_lb;
    s.private_lb = private_lb;
    s.overall = 0.5 * oof + 0.5 * (0.3 * public_lb + 0.7 * private_lb);
    return s;
}

}  // namespace lsc
