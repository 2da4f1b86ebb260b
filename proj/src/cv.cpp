#include "lsc/cv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "lsc/json_io.hpp"

namespace lsc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// fold assignment

std::vector<std::size_t> FoldAssignment::fold_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
    for (int f : fold_of) sizes[static_cast<std::size_t>(f)]++;
    return sizes;
}

void FoldAssignment::validate(std::size_t n_samples) const {
    if (k < 2) throw PreconditionError("need k >= 2 folds, got " + std::to_string(k));
    if (fold_of.size() != n_samples)
        throw PreconditionError("fold assignment covers " + std::to_string(fold_of.size()) +
                                " samples, expected " + std::to_string(n_samples));
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] < 0 || fold_of[i] >= k)
            throw PreconditionError("fold id " + std::to_string(fold_of[i]) + " at sample " +
                                    std::to_string(i) + " outside [0, " + std::to_string(k) +
                                    ")");
}

FoldAssignment stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed) {
    if (k < 2) throw PreconditionError("need k >= 2 folds, got " + std::to_string(k));
    std::vector<std::size_t> neg, pos;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 0)
            neg.push_back(i);
        else if (labels[i] == 1)
            pos.push_back(i);
        else
            throw DataError("label at sample " + std::to_string(i) + " is " +
                            std::to_string(labels[i]) + ", expected 0 or 1");
    }
    for (const auto* cls : {&neg, &pos})
        if (cls->size() < static_cast<std::size_t>(k))
            throw PreconditionError("a class has " + std::to_string(cls->size()) +
                                    " samples, fewer than k=" + std::to_string(k));

    FoldAssignment fa;
    fa.k = k;
    fa.seed = seed;
    fa.fold_of.assign(labels.size(), -1);
    Rng rng(seed);
    rng.shuffle(neg);
    rng.shuffle(pos);
    for (std::size_t i = 0; i < neg.size(); ++i)
        fa.fold_of[neg[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    // start dealing the second class where the first class's remainder stopped
    // so total fold sizes stay within one of each other
    const std::size_t offset = neg.size() % static_cast<std::size_t>(k);
    for (std::size_t i = 0; i < pos.size(); ++i)
        fa.fold_of[pos[i]] = static_cast<int>((offset + i) % static_cast<std::size_t>(k));
    return fa;
}

// ---------------------------------------------------------------------------
// model specs

void ModelSpec::validate() const {
    if (name.empty()) throw ConfigError("model spec needs a name");
    if (kind == "gbm") {
        gbm.validate();
    } else if (kind == "nn") {
        fusion.validate();
        train.validate();
    } else {
        throw ConfigError("model kind must be 'gbm' or 'nn', got '" + kind + "'");
    }
}

const CvEntry& OofBundle::entry(const std::string& name) const {
    for (const CvEntry& e : entries)
        if (e.spec.name == name) return e;
    throw KeyError("no model named '" + name + "' in the bundle");
}

std::vector<std::string> OofBundle::model_names() const {
    std::vector<std::string> names;
    names.reserve(entries.size());
    for (const CvEntry& e : entries) names.push_back(e.spec.name);
    return names;
}

// ---------------------------------------------------------------------------
// cross-validated runs

namespace {

FeatureTable take_rows(const FeatureTable& t, const std::vector<std::size_t>& rows) {
    FeatureTable out;
    out.n_rows = rows.size();
    out.column_names = t.column_names;
    out.row_ids.reserve(rows.size());
    out.matrix.reserve(rows.size() * t.cols());
    for (std::size_t r : rows) {
        out.row_ids.push_back(t.row_ids[r]);
        for (std::size_t c = 0; c < t.cols(); ++c) out.matrix.push_back(t.at(r, c));
    }
    return out;
}

PatchStack prepare_stack(const PatchStack& stack, bool want_indices, ScalerMode scaler_mode,
                         ScalerParams* fitted) {
    PatchStack work;
    if (want_indices && stack.c == ChannelLayout::kRawChannels)
        work = compute_indices(stack);
    else
        work = stack;
    if (scaler_mode != ScalerMode::kNone) {
        ScalerParams params = fit_scaler({&work}, scaler_mode);
        work = apply_scaler(work, params);
        if (fitted) *fitted = params;
    } else if (fitted) {
        *fitted = ScalerParams{};
    }
    return work;
}

void fill_metrics(CvEntry& entry, const std::vector<int>& labels, const FoldAssignment& folds) {
    const auto nanv = std::numeric_limits<double>::quiet_NaN();
    entry.per_fold.assign(static_cast<std::size_t>(folds.k), FoldMetrics{nanv, nanv});
    for (int f = 0; f < folds.k; ++f) {
        std::vector<int> fl;
        std::vector<double> fp;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (folds.fold_of[i] != f) continue;
            fl.push_back(labels[i]);
            fp.push_back(entry.oof[i]);
        }
        if (fl.empty()) continue;
        FoldMetrics& m = entry.per_fold[static_cast<std::size_t>(f)];
        m.f1 = precision_recall_f1(confusion_counts(fl, fp, 0.5)).f1;
        const bool both = std::count(fl.begin(), fl.end(), 1) > 0 &&
                          std::count(fl.begin(), fl.end(), 0) > 0;
        m.auc = both ? roc_auc(fl, fp).auc : nanv;
    }
    entry.pooled.f1 = precision_recall_f1(confusion_counts(labels, entry.oof, 0.5)).f1;
    entry.pooled.auc = roc_auc(labels, entry.oof).auc;
}

CvEntry run_cv_gbm(const ModelSpec& spec, const PatchStack& stack,
                   const std::vector<std::string>& ids, const std::vector<int>& labels,
                   const FoldAssignment& folds) {
    CvEntry entry;
    entry.spec = spec;
    PatchStack prepared =
        prepare_stack(stack, spec.use_indices, spec.scaler, &entry.scaler_params);
    FeatureTable table = compute_patch_statistics(prepared, &ids);
    if (!spec.drop_stats.empty() || !spec.drop_channels.empty())
        table = filter_columns(
            table, std::set<std::string>(spec.drop_stats.begin(), spec.drop_stats.end()),
            std::set<std::string>(spec.drop_channels.begin(), spec.drop_channels.end()));

    entry.oof.assign(stack.n, std::numeric_limits<double>::quiet_NaN());

    for (int f = 0; f < folds.k; ++f) {
        std::vector<std::size_t> train_rows, val_rows;
        for (std::size_t i = 0; i < stack.n; ++i)
            (folds.fold_of[i] == f ? val_rows : train_rows).push_back(i);
        if (val_rows.empty()) continue;

        std::vector<int> train_labels;
        train_labels.reserve(train_rows.size());
        for (std::size_t i : train_rows) train_labels.push_back(labels[i]);
        if (std::count(train_labels.begin(), train_labels.end(), 1) == 0 ||
            std::count(train_labels.begin(), train_labels.end(), 0) == 0)
            throw TrainingError("fold " + std::to_string(f) +
                                ": training portion contains a single class");

        try {
            GbmConfig cfg = spec.gbm;
            cfg.seed = spec.gbm.seed + static_cast<std::uint64_t>(f);
            GbmModel model = fit_gbm(take_rows(table, train_rows), train_labels, cfg);
            std::vector<double> preds = predict_gbm(model, take_rows(table, val_rows));
            for (std::size_t i = 0; i < val_rows.size(); ++i) entry.oof[val_rows[i]] = preds[i];
            entry.fold_models.push_back(std::move(model));
        } catch (const Error& e) {
            throw TrainingError("fold " + std::to_string(f) + ": " + e.what());
        }
    }

    for (std::size_t i = 0; i < entry.oof.size(); ++i)
        if (std::isnan(entry.oof[i]))
            throw InternalError("OOF assembly left sample " + std::to_string(i) + " unfilled");
    fill_metrics(entry, labels, folds);
    return entry;
}

CvEntry run_cv_nn(const ModelSpec& spec, const PatchStack& stack,
                  const std::vector<std::string>& ids, const std::vector<int>& labels,
                  const FoldAssignment& folds) {
    (void)ids;
    CvEntry entry;
    entry.spec = spec;
    const bool want_indices = spec.fusion.min_channels() > ChannelLayout::kRawChannels;
    PatchStack prepared =
        prepare_stack(stack, want_indices, spec.scaler, &entry.scaler_params);

    NnCvResult run =
        train_nn(prepared, labels, folds.fold_of, folds.k, spec.fusion, spec.train);
    entry.oof = std::move(run.oof);
    entry.fold_nets = std::move(run.fold_nets);
    fill_metrics(entry, labels, folds);
    return entry;
}

}  // namespace

CvEntry run_cv(const ModelSpec& spec, const PatchStack& stack,
               const std::vector<std::string>& ids, const std::vector<int>& labels,
               const FoldAssignment& folds) {
    spec.validate();
    if (ids.size() != stack.n || labels.size() != stack.n)
        throw ShapeError("ids/labels must match the stack: " + std::to_string(ids.size()) +
                         "/" + std::to_string(labels.size()) + " vs " + std::to_string(stack.n));
    folds.validate(stack.n);
    return spec.kind == "gbm" ? run_cv_gbm(spec, stack, ids, labels, folds)
                              : run_cv_nn(spec, stack, ids, labels, folds);
}

EnsembleResult run_ensemble(OofBundle& bundle, const std::vector<std::string>& member_names,
                            const std::vector<double>& weights) {
    if (member_names.empty())
        throw PreconditionError("ensemble needs a non-empty model subset");
    std::vector<std::vector<double>> vectors;
    vectors.reserve(member_names.size());
    for (const std::string& name : member_names) vectors.push_back(bundle.entry(name).oof);

    EnsembleResult result;
    result.members = member_names;
    result.probabilities = ensemble_average(vectors, weights);
    result.calibration = calibrate_threshold(bundle.labels, result.probabilities);
    result.pooled.auc = roc_auc(bundle.labels, result.probabilities).auc;
    result.pooled.f1 =
        precision_recall_f1(
            confusion_counts(bundle.labels, result.probabilities, result.calibration.threshold))
            .f1;

    bundle.ensemble = result.probabilities;
    bundle.calibration = result.calibration;
    bundle.has_ensemble = true;
    return result;
}

// ---------------------------------------------------------------------------
// ablations

void AblationPlan::validate() const {
    base.validate();
    if (variant == "none") return;
    if (variant == "drop-modality") {
        if (modalities.empty())
            throw ConfigError("drop-modality needs at least one modality group");
        const auto& known = ChannelLayout::modality_names();
        for (const std::string& m : modalities) {
            if (std::find(known.begin(), known.end(), m) == known.end())
                throw KeyError("unknown modality group '" + m + "'");
            if (base.kind == "gbm" && m == "Indices" && !base.use_indices)
                throw KeyError("cannot drop Indices: the base spec does not compute them");
        }
        if (base.kind == "gbm") {
            if (modalities.size() >= known.size())
                throw PreconditionError("dropping every modality leaves no features");
        } else {
            std::size_t remaining = 0;
            bool matched_any = false;
            for (const EncoderConfig& e : base.fusion.encoders) {
                const bool dropped = std::find(modalities.begin(), modalities.end(), e.group) !=
                                     modalities.end();
                matched_any |= dropped;
                if (!dropped) ++remaining;
            }
            if (!matched_any)
                throw KeyError("no encoder uses the modalities named in the plan");
            if (remaining == 0)
                throw PreconditionError("dropping every encoder leaves no model");
        }
        return;
    }
    if (variant == "drop-stat") {
        if (base.kind != "gbm")
            throw ConfigError("drop-stat applies to the statistics features of a gbm spec");
        const auto& stats = statistic_names();
        if (std::find(stats.begin(), stats.end(), stat) == stats.end())
            throw KeyError("unknown statistic '" + stat + "'");
        return;
    }
    if (variant == "drop-index") {
        if (base.kind != "gbm")
            throw ConfigError("drop-index applies to the statistics features of a gbm spec");
        if (!base.use_indices)
            throw KeyError("cannot drop an index: the base spec does not compute them");
        bool known = false;
        for (const IndexSpec& ix : index_definitions())
            if (ix.name == index_name) known = true;
        if (!known) throw KeyError("unknown index '" + index_name + "'");
        return;
    }
    throw ConfigError("unknown ablation variant '" + variant + "'");
}

std::string AblationPlan::describe() const {
    if (variant == "none") return "none";
    if (variant == "drop-stat") return "drop-stat:" + stat;
    if (variant == "drop-index") return "drop-index:" + index_name;
    std::string out = "drop-modality:";
    for (std::size_t i = 0; i < modalities.size(); ++i)
        out += (i ? "," : "") + modalities[i];
    return out;
}

AblationRow run_ablation(const AblationPlan& plan, const PatchStack& stack,
                         const std::vector<std::string>& ids, const std::vector<int>& labels,
                         const FoldAssignment& folds) {
    plan.validate();

    ModelSpec ablated = plan.base;
    if (plan.variant == "drop-stat") {
        ablated.drop_stats.push_back(plan.stat);
    } else if (plan.variant == "drop-index") {
        ablated.drop_channels.push_back(plan.index_name);
    } else if (plan.variant == "drop-modality") {
        if (plan.base.kind == "gbm") {
            for (const std::string& m : plan.modalities)
                for (int ch : ChannelLayout::group(m))
                    ablated.drop_channels.push_back(channel_name(static_cast<std::size_t>(ch)));
        } else {
            std::vector<EncoderConfig> kept;
            for (const EncoderConfig& e : plan.base.fusion.encoders)
                if (std::find(plan.modalities.begin(), plan.modalities.end(), e.group) ==
                    plan.modalities.end())
                    kept.push_back(e);
            ablated.fusion.encoders = std::move(kept);
        }
    }
    ablated.name = plan.base.name + "@" + plan.describe();

    AblationRow row;
    row.description = plan.describe();
    row.baseline = run_cv(plan.base, stack, ids, labels, folds);
    row.ablated = plan.variant == "none"
                      ? row.baseline
                      : run_cv(ablated, stack, ids, labels, folds);

    const CalibrationResult base_cal = calibrate_threshold(labels, row.baseline.oof);
    const CalibrationResult abl_cal = calibrate_threshold(labels, row.ablated.oof);
    row.baseline_f1 = base_cal.f1;
    row.ablated_f1 = abl_cal.f1;
    row.baseline_auc = row.baseline.pooled.auc;
    row.ablated_auc = row.ablated.pooled.auc;
    return row;
}

// ---------------------------------------------------------------------------
// interchange files

void save_oof_csv(const std::vector<std::string>& ids, const std::vector<int>& fold_of,
                  const std::vector<double>& probabilities, const std::vector<int>& labels,
                  const std::string& path) {
    const std::size_t n = ids.size();
    if (fold_of.size() != n || probabilities.size() != n || labels.size() != n)
        throw ShapeError("oof columns differ in length");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "ID,fold,probability,label\n";
    char buf[64];
    for (std::size_t i = 0; i < n; ++i) {
        if (!(probabilities[i] >= 0.0 && probabilities[i] <= 1.0))
            throw ValueError("probability " + std::to_string(probabilities[i]) + " at row " +
                             std::to_string(i) + " outside [0, 1]");
        std::snprintf(buf, sizeof buf, "%.17g", probabilities[i]);
        out << ids[i] << ',' << fold_of[i] << ',' << buf << ',' << labels[i] << '\n';
    }
    if (!out) throw IoError("failed writing '" + path + "'");
}

OofFile load_oof_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw FormatError("'" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "ID,fold,probability,label")
        throw FormatError("'" + path + "': header must be exactly 'ID,fold,probability,label'");

    OofFile f;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, fold_s, prob_s, label_s;
        if (!std::getline(ss, id, ',') || !std::getline(ss, fold_s, ',') ||
            !std::getline(ss, prob_s, ',') || !std::getline(ss, label_s))
            throw FormatError("'" + path + "' row " + std::to_string(row) +
                              ": expected 4 comma-separated fields");
        try {
            std::size_t used = 0;
            const int fold = std::stoi(fold_s, &used);
            if (used != fold_s.size() || fold < 0)
                throw DataError("'" + path + "' row " + std::to_string(row) +
                                ": bad fold id '" + fold_s + "'");
            const double prob = std::stod(prob_s, &used);
            if (used != prob_s.size() || !std::isfinite(prob) || prob < 0.0 || prob > 1.0)
                throw DataError("'" + path + "' row " + std::to_string(row) +
                                ": probability '" + prob_s + "' outside [0, 1]");
            if (label_s != "0" && label_s != "1")
                throw DataError("'" + path + "' row " + std::to_string(row) + ": label '" +
                                label_s + "' must be 0 or 1");
            f.ids.push_back(id);
            f.fold_of.push_back(fold);
            f.probabilities.push_back(prob);
            f.labels.push_back(label_s == "1" ? 1 : 0);
        } catch (const std::invalid_argument&) {
            throw DataError("'" + path + "' row " + std::to_string(row) +
                            ": non-numeric field");
        } catch (const std::out_of_range&) {
            throw DataError("'" + path + "' row " + std::to_string(row) +
                            ": numeric field out of range");
        }
    }
    if (f.ids.empty()) throw DataError("'" + path + "' contains no data rows");
    return f;
}

std::string deterministic_timestamp() {
    long long epoch = 0;
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
        const std::string text(env);
        try {
            std::size_t used = 0;
            epoch = std::stoll(text, &used);
            if (used != text.size()) throw std::invalid_argument(text);
        } catch (const std::exception&) {
            throw ValueError("SOURCE_DATE_EPOCH is not an integer: " + text);
        }
    }
    const auto t = static_cast<std::time_t>(epoch);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void save_run_record(const CvEntry& entry, const FoldAssignment& folds,
                     const std::string& path) {
    json per_fold = json::array();
    for (std::size_t f = 0; f < entry.per_fold.size(); ++f)
        per_fold.push_back(json{{"fold", f},
                                {"auc", entry.per_fold[f].auc},
                                {"f1", entry.per_fold[f].f1}});
    const std::string ts = deterministic_timestamp();
    json doc{{"spec", model_spec_to_json(entry.spec)},
             {"seed", folds.seed},
             {"folds", json{{"k", folds.k}, {"seed", folds.seed},
                            {"sizes", folds.fold_sizes()}}},
             {"per_fold", std::move(per_fold)},
             {"pooled", json{{"auc", entry.pooled.auc}, {"f1", entry.pooled.f1}}},
             {"timestamps", json{{"started", ts}, {"finished", ts}}}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace lsc
