#include "lsc/reports.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace lsc {

using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    return out;
}

void write_roc_csv(const OofBundle& bundle, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "model,fpr,tpr,threshold\n";
    auto emit = [&](const std::string& name, const std::vector<double>& probs) {
        for (const RocPoint& p : roc_auc(bundle.labels, probs).points)
            out << name << ',' << fmt(p.fpr) << ',' << fmt(p.tpr) << ',' << fmt(p.threshold)
                << '\n';
    };
    for (const CvEntry& e : bundle.entries) emit(e.spec.name, e.oof);
    emit("ensemble", bundle.ensemble);
    if (!out) throw IoError("failed writing '" + path + "'");
}

void write_sweep_csv(const CalibrationResult& cal, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "threshold,f1\n";
    for (const auto& [threshold, f1] : cal.sweep)
        out << fmt(threshold) << ',' << fmt(f1) << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

void write_confusion_json(const OofBundle& bundle, const std::string& path) {
    const ConfusionMatrix cm =
        confusion_counts(bundle.labels, bundle.ensemble, bundle.calibration.threshold);
    const PrecisionRecallF1 prf = precision_recall_f1(cm);
    json doc{{"threshold", bundle.calibration.threshold},
             {"tn", cm.tn},
             {"fp", cm.fp},
             {"fn", cm.fn},
             {"tp", cm.tp},
             {"precision", prf.precision},
             {"recall", prf.recall},
             {"f1", prf.f1}};
    std::ofstream out = open_out(path);
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace

void write_importance_csv(const GbmModel& model, const std::string& path, int top_k) {
    if (top_k < 1) throw ValueError("top_k must be >= 1, got " + std::to_string(top_k));
    const FeatureImportance& imp = model.importance;
    std::vector<std::size_t> order(model.feature_names.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return imp.gain[a] > imp.gain[b];
    });
    if (order.size() > static_cast<std::size_t>(top_k))
        order.resize(static_cast<std::size_t>(top_k));

    std::ofstream out = open_out(path);
    out << "feature,gain,splits\n";
    for (std::size_t i : order)
        out << model.feature_names[i] << ',' << fmt(imp.gain[i]) << ',' << imp.splits[i]
            << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

void emit_report(const OofBundle& bundle, const GbmModel* importance_model,
                 const std::string& out_dir, const ReportOptions& opts) {
    if (!bundle.has_ensemble)
        throw PreconditionError("report needs an ensemble; run the ensemble step first");
    if (bundle.labels.empty()) throw PreconditionError("report needs a non-empty bundle");

    write_roc_csv(bundle, out_dir + "/roc.csv");
    write_sweep_csv(bundle.calibration, out_dir + "/sweep.csv");
    write_confusion_json(bundle, out_dir + "/confusion.json");
    if (importance_model)
        write_importance_csv(*importance_model, out_dir + "/importance.csv", opts.top_k);

    json models = json::array();
    for (const CvEntry& e : bundle.entries)
        models.push_back(json{{"name", e.spec.name},
                              {"kind", e.spec.kind},
                              {"auc", e.pooled.auc},
                              {"f1_at_0.5", e.pooled.f1}});
    const double ens_auc = roc_auc(bundle.labels, bundle.ensemble).auc;
    json doc{{"models", std::move(models)},
             {"ensemble", json{{"auc", ens_auc},
                               {"threshold", bundle.calibration.threshold},
                               {"f1", bundle.calibration.f1}}}};
    if (opts.has_leaderboard) {
        const OverallScore s =
            overall_score(bundle.calibration.f1, opts.public_lb, opts.private_lb);
        doc["overall"] = json{{"oof", s.oof},
                              {"public", s.public_lb},
                              {"private", s.private_lb},
                              {"score", s.overall}};
    }
    std::ofstream out = open_out(out_dir + "/summary.json");
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("failed writing '" + out_dir + "/summary.json'");
}

}  // namespace lsc
