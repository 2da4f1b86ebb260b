#include "lsc/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "lsc/cv.hpp"
#include "lsc/json_io.hpp"
#include "lsc/reports.hpp"

namespace lsc {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json load_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("'" + path + "' is not valid JSON: " + e.what());
    }
}

void write_json_file(const json& doc, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

// --config JSON: every key must name a known setting; values fill in only
// where the matching flag was not given, so flags win.
class ConfigBinder {
  public:
    void bind(std::string key, CLI::Option* opt, std::function<void(const json&)> set) {
        bindings_.push_back({std::move(key), opt, std::move(set)});
    }

    void apply(const std::string& path) const {
        const json doc = load_json_file(path);
        if (!doc.is_object()) throw ConfigError("config '" + path + "' must be a JSON object");
        for (const auto& [key, value] : doc.items()) {
            const Binding* hit = nullptr;
            for (const Binding& b : bindings_)
                if (b.key == key) hit = &b;
            if (!hit) throw ConfigError("unknown config key '" + key + "'");
            if (hit->opt && hit->opt->count() > 0) continue;
            try {
                hit->set(value);
            } catch (const json::exception&) {
                throw ConfigError("config key '" + key + "' has the wrong type");
            }
        }
    }

  private:
    struct Binding {
        std::string key;
        CLI::Option* opt;  // null for config-only keys
        std::function<void(const json&)> set;
    };
    std::vector<Binding> bindings_;
};

template <typename T>
std::function<void(const json&)> assign_to(T& dst) {
    return [&dst](const json& v) { dst = v.get<T>(); };
}

// accepts "x" or ["x", "y"]
std::function<void(const json&)> assign_names(std::vector<std::string>& dst) {
    return [&dst](const json& v) {
        if (v.is_string())
            dst.push_back(v.get<std::string>());
        else
            for (const json& e : v) dst.push_back(e.get<std::string>());
    };
}

void overlay_fields(const json& doc, const std::string& what,
                    const std::map<std::string, std::function<void(const json&)>>& fields) {
    if (!doc.is_object()) throw ConfigError(what + " must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
        auto it = fields.find(key);
        if (it == fields.end()) throw ConfigError("unknown key '" + key + "' in " + what);
        try {
            it->second(value);
        } catch (const json::exception&) {
            throw ConfigError("key '" + key + "' in " + what + " has the wrong type");
        }
    }
}

void overlay_gbm(GbmConfig& c, const json& doc) {
    overlay_fields(doc, "the gbm config",
                   {{"learning_rate", assign_to(c.learning_rate)},
                    {"n_rounds", assign_to(c.n_rounds)},
                    {"num_leaves", assign_to(c.num_leaves)},
                    {"max_depth", assign_to(c.max_depth)},
                    {"subsample", assign_to(c.subsample)},
                    {"colsample", assign_to(c.colsample)},
                    {"scale_pos_weight", assign_to(c.scale_pos_weight)},
                    {"l2_lambda", assign_to(c.l2_lambda)},
                    {"min_samples_leaf", assign_to(c.min_samples_leaf)},
                    {"n_bins", assign_to(c.n_bins)},
                    {"seed", assign_to(c.seed)},
                    {"n_threads", assign_to(c.n_threads)}});
}

void overlay_encoder(EncoderConfig& e, const json& doc) {
    overlay_fields(doc, "an encoder config",
                   {{"group", assign_to(e.group)},
                    {"image_size", assign_to(e.image_size)},
                    {"token_patch", assign_to(e.token_patch)},
                    {"embed_dim", assign_to(e.embed_dim)},
                    {"depth", assign_to(e.depth)},
                    {"heads", assign_to(e.heads)},
                    {"mlp_ratio", assign_to(e.mlp_ratio)},
                    {"out_features", assign_to(e.out_features)}});
}

void overlay_fusion(FusionConfig& c, const json& doc) {
    overlay_fields(doc, "the fusion config",
                   {{"encoders",
                     [&c](const json& v) {
                         std::vector<EncoderConfig> encs;
                         for (const json& je : v) {
                             EncoderConfig e;
                             overlay_encoder(e, je);
                             encs.push_back(e);
                         }
                         c.encoders = std::move(encs);
                     }},
                    {"head_width", assign_to(c.head_width)},
                    {"dropout_rate", assign_to(c.dropout_rate)},
                    {"ln_eps", assign_to(c.ln_eps)},
                    {"bn_eps", assign_to(c.bn_eps)},
                    {"bn_momentum", assign_to(c.bn_momentum)},
                    {"resize_factor", assign_to(c.resize_factor)},
                    {"seed", assign_to(c.seed)}});
}

void overlay_train(TrainConfig& c, const json& doc) {
    overlay_fields(doc, "the train config",
                   {{"epochs", assign_to(c.epochs)},
                    {"batch_size", assign_to(c.batch_size)},
                    {"lr_max", assign_to(c.lr_max)},
                    {"lr_min", assign_to(c.lr_min)},
                    {"beta1", assign_to(c.beta1)},
                    {"beta2", assign_to(c.beta2)},
                    {"adam_eps", assign_to(c.adam_eps)},
                    {"weight_decay", assign_to(c.weight_decay)},
                    {"p_hflip", assign_to(c.p_hflip)},
                    {"p_vflip", assign_to(c.p_vflip)},
                    {"p_rot90", assign_to(c.p_rot90)},
                    {"tta", assign_to(c.tta)},
                    {"seed", assign_to(c.seed)}});
}

// ---------------------------------------------------------------------------
// shared pipeline pieces

struct Dataset {
    PatchStack stack;
    LabelTable labels;
};

Dataset load_dataset(const std::string& data_path, const std::string& labels_path) {
    Dataset d{load_patch_stack(data_path), load_labels(labels_path)};
    if (d.labels.size() != d.stack.n)
        throw ShapeError("'" + labels_path + "' has " + std::to_string(d.labels.size()) +
                         " rows, stack has " + std::to_string(d.stack.n) + " patches");
    return d;
}

void write_cv_outputs(const CvEntry& entry, const FoldAssignment& folds,
                      const std::vector<std::string>& ids, const std::vector<int>& labels,
                      const std::string& out_dir) {
    ensure_dir(out_dir);
    save_oof_csv(ids, folds.fold_of, entry.oof, labels, out_dir + "/oof.csv");
    save_run_record(entry, folds, out_dir + "/run.json");
    for (std::size_t f = 0; f < entry.fold_models.size(); ++f)
        save_gbm_model(entry.fold_models[f],
                       out_dir + "/model_fold" + std::to_string(f) + ".json");
    for (std::size_t f = 0; f < entry.fold_nets.size(); ++f)
        entry.fold_nets[f].save(
            out_dir + "/model_fold" + std::to_string(f),
            entry.spec.scaler != ScalerMode::kNone ? &entry.scaler_params : nullptr);
    std::cerr << entry.spec.name << ": pooled AUC " << entry.pooled.auc << ", F1@0.5 "
              << entry.pooled.f1 << "\n";
}

// bundle from OOF CSV files; model names are the file stems
OofBundle bundle_from_files(const std::vector<std::string>& paths) {
    OofBundle bundle;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        OofFile f = load_oof_csv(paths[i]);
        if (i == 0) {
            bundle.ids = f.ids;
            bundle.labels = f.labels;
            bundle.folds.fold_of = f.fold_of;
            bundle.folds.k = 1 + *std::max_element(f.fold_of.begin(), f.fold_of.end());
        } else if (f.ids != bundle.ids || f.labels != bundle.labels ||
                   f.fold_of != bundle.folds.fold_of) {
            throw DataError("'" + paths[i] + "' disagrees with '" + paths[0] +
                            "' on ids, folds or labels");
        }
        std::string name = fs::path(paths[i]).stem().string();
        if (!seen.insert(name).second)
            throw DataError("duplicate model name '" + name + "' among the OOF files");
        CvEntry entry;
        entry.spec.name = name;
        entry.spec.kind = "oof";
        entry.oof = std::move(f.probabilities);
        entry.pooled.auc = roc_auc(bundle.labels, entry.oof).auc;
        entry.pooled.f1 = f1_score(bundle.labels, entry.oof, 0.5);
        bundle.entries.push_back(std::move(entry));
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// subcommands

struct SynthOpts {
    std::size_t n = 100;
    double pos_ratio = 0.175;
    double difficulty = 0.3;
    std::uint64_t seed = 0;
    std::string out;
    std::string config;
};

int do_synth(const SynthOpts& o) {
    SyntheticSpec spec{o.n, o.pos_ratio, o.difficulty, o.seed};
    auto [stack, labels] = generate_synthetic_dataset(spec);
    ensure_dir(o.out);
    write_patch_stack(stack, o.out + "/data.npy");
    write_labels(labels, o.out + "/labels.csv");
    std::cerr << "wrote " << stack.n << " patches (" << labels.positives() << " positive) to "
              << o.out << "\n";
    return 0;
}

struct FeaturesOpts {
    std::string data;
    std::string labels;
    bool indices = false;
    std::string scaler = "none";
    std::string out;
    std::string config;
};

int do_features(const FeaturesOpts& o) {
    PatchStack stack = load_patch_stack(o.data);
    std::vector<std::string> ids;
    if (!o.labels.empty()) {
        LabelTable t = load_labels(o.labels);
        if (t.size() != stack.n)
            throw ShapeError("'" + o.labels + "' has " + std::to_string(t.size()) +
                             " rows, stack has " + std::to_string(stack.n));
        ids = std::move(t.ids);
    }
    if (o.indices && stack.c == ChannelLayout::kRawChannels) stack = compute_indices(stack);
    const ScalerMode mode = scaler_mode_from_string(o.scaler);
    if (mode != ScalerMode::kNone) stack = apply_scaler(stack, fit_scaler({&stack}, mode));
    FeatureTable table = compute_patch_statistics(stack, ids.empty() ? nullptr : &ids);
    write_feature_table(table, o.out);
    std::cerr << "wrote " << table.n_rows << " x " << table.cols() << " features to " << o.out
              << "\n";
    return 0;
}

struct TrainGbmOpts {
    std::string data, labels, out;
    std::string preset = "boost-a";
    int rounds = -1;  // negative keeps the preset value
    int folds = 5;
    std::uint64_t seed = 0;
    bool indices = true;
    std::string scaler = "none";
    std::vector<std::string> drop_stats, drop_indices;
    std::string config;
    json nested_gbm;  // config-only overlay
    CLI::Option* seed_opt = nullptr;
    CLI::Option* rounds_opt = nullptr;
};

int do_train_gbm(const TrainGbmOpts& o) {
    if (scaler_mode_from_string(o.scaler) != ScalerMode::kNone)
        throw ConfigError("train-gbm works on unscaled statistics (trees are invariant to "
                          "monotone rescaling); use --scaler none");
    Dataset d = load_dataset(o.data, o.labels);

    ModelSpec spec;
    spec.name = o.preset;
    spec.kind = "gbm";
    spec.gbm = GbmConfig::preset(o.preset);
    spec.gbm.seed = o.seed;
    if (!o.nested_gbm.is_null()) overlay_gbm(spec.gbm, o.nested_gbm);
    if (o.rounds >= 0) spec.gbm.n_rounds = o.rounds;
    if (o.seed_opt && o.seed_opt->count() > 0) spec.gbm.seed = o.seed;
    spec.use_indices = o.indices;
    spec.drop_stats = o.drop_stats;
    spec.drop_channels = o.drop_indices;

    FoldAssignment folds = stratified_kfold(d.labels.labels, o.folds, o.seed);
    CvEntry entry = run_cv(spec, d.stack, d.labels.ids, d.labels.labels, folds);
    write_cv_outputs(entry, folds, d.labels.ids, d.labels.labels, o.out);
    return 0;
}

struct TrainNnOpts {
    std::string data, labels, out;
    std::string arch = "single";
    int epochs = -1;  // negative keeps the default
    int folds = 5;
    std::uint64_t seed = 0;
    bool tta = true;
    std::string scaler = "none";
    std::string config;
    json nested_fusion, nested_train;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* epochs_opt = nullptr;
    CLI::Option* tta_opt = nullptr;
};

int do_train_nn(const TrainNnOpts& o) {
    Dataset d = load_dataset(o.data, o.labels);

    ModelSpec spec;
    spec.name = o.arch;
    spec.kind = "nn";
    spec.fusion = FusionConfig::arch(o.arch);
    spec.fusion.seed = o.seed;
    spec.train.seed = o.seed;
    spec.train.tta = o.tta;
    spec.scaler = scaler_mode_from_string(o.scaler);
    if (!o.nested_fusion.is_null()) overlay_fusion(spec.fusion, o.nested_fusion);
    if (!o.nested_train.is_null()) overlay_train(spec.train, o.nested_train);
    if (o.epochs >= 0) spec.train.epochs = o.epochs;
    if (o.seed_opt && o.seed_opt->count() > 0) {
        spec.fusion.seed = o.seed;
        spec.train.seed = o.seed;
    }
    if (o.tta_opt && o.tta_opt->count() > 0) spec.train.tta = o.tta;

    FoldAssignment folds = stratified_kfold(d.labels.labels, o.folds, o.seed);
    CvEntry entry = run_cv(spec, d.stack, d.labels.ids, d.labels.labels, folds);
    write_cv_outputs(entry, folds, d.labels.ids, d.labels.labels, o.out);
    return 0;
}

struct PredictOpts {
    std::string model, data, labels, out;
    bool tta = true;
    double threshold = 0.5;
    std::string config;
};

// feature columns are named ch{c}_{stat}; the largest channel index tells us
// whether the model was trained on an enriched stack
std::size_t max_channel_of(const std::vector<std::string>& names) {
    std::size_t max_ch = 0;
    for (const std::string& name : names) {
        auto us = name.find('_');
        if (name.rfind("ch", 0) != 0 || us == std::string::npos)
            throw FormatError("unrecognized feature column name: " + name);
        max_ch = std::max(max_ch, static_cast<std::size_t>(
                                      std::stoull(name.substr(2, us - 2))));
    }
    return max_ch;
}

FeatureTable select_columns(const FeatureTable& table, const std::vector<std::string>& names) {
    FeatureTable out;
    out.n_rows = table.n_rows;
    out.row_ids = table.row_ids;
    out.column_names = names;
    out.matrix.resize(table.n_rows * names.size());
    for (std::size_t k = 0; k < names.size(); ++k) {
        auto it = std::find(table.column_names.begin(), table.column_names.end(), names[k]);
        if (it == table.column_names.end())
            throw KeyError("model feature '" + names[k] + "' is missing from the table");
        const std::size_t j =
            static_cast<std::size_t>(it - table.column_names.begin());
        for (std::size_t r = 0; r < table.n_rows; ++r)
            out.matrix[r * names.size() + k] = table.at(r, j);
    }
    return out;
}

int do_predict(const PredictOpts& o) {
    PatchStack stack = load_patch_stack(o.data);
    std::vector<std::string> ids(stack.n);
    if (!o.labels.empty()) {
        LabelTable t = load_labels(o.labels);
        if (t.size() != stack.n)
            throw ShapeError("'" + o.labels + "' has " + std::to_string(t.size()) +
                             " rows, stack has " + std::to_string(stack.n));
        ids = std::move(t.ids);
    } else {
        for (std::size_t i = 0; i < stack.n; ++i) ids[i] = "r" + std::to_string(i);
    }

    const std::string manifest =
        o.model.size() > 5 && o.model.compare(o.model.size() - 5, 5, ".json") == 0
            ? o.model
            : o.model + ".json";
    const std::string format = load_json_file(manifest).value("format", "");

    std::vector<double> probs;
    if (format == "lsc-gbm/1") {
        GbmModel model = load_gbm_model(manifest);
        if (max_channel_of(model.feature_names) >= ChannelLayout::kRawChannels &&
            stack.c == ChannelLayout::kRawChannels)
            stack = compute_indices(stack);
        FeatureTable table = compute_patch_statistics(stack, &ids);
        probs = predict_gbm(model, select_columns(table, model.feature_names));
    } else if (format == "lsc-fusion/1") {
        const std::string prefix = manifest.substr(0, manifest.size() - 5);
        ScalerParams scaler;
        FusionNet net = FusionNet::load(prefix, &scaler);
        if (net.config().min_channels() > static_cast<int>(stack.c) &&
            stack.c == ChannelLayout::kRawChannels)
            stack = compute_indices(stack);
        if (scaler.mode != ScalerMode::kNone) stack = apply_scaler(stack, scaler);
        std::vector<std::size_t> all(stack.n);
        std::iota(all.begin(), all.end(), 0);
        probs = net.predict(stack, all, o.tta);
    } else {
        throw FormatError("'" + manifest + "' is neither a gbm model nor a fusion manifest");
    }

    save_predictions(ids, probs, o.threshold, o.out);
    std::cerr << "wrote " << probs.size() << " predictions to " << o.out << "\n";
    return 0;
}

struct CalibrateOpts {
    std::string oof, out;
    std::string config;
};

int do_calibrate(const CalibrateOpts& o) {
    OofFile f = load_oof_csv(o.oof);
    CalibrationResult cal = calibrate_threshold(f.labels, f.probabilities);
    ensure_dir(o.out);
    write_json_file(json{{"threshold", cal.threshold}, {"f1", cal.f1}},
                    o.out + "/calibration.json");
    std::ofstream sweep(o.out + "/sweep.csv", std::ios::binary);
    if (!sweep) throw IoError("cannot open '" + o.out + "/sweep.csv' for writing");
    sweep << "threshold,f1\n";
    char buf[64];
    for (const auto& [t, f1] : cal.sweep) {
        std::snprintf(buf, sizeof buf, "%.17g", t);
        sweep << buf << ',';
        std::snprintf(buf, sizeof buf, "%.17g", f1);
        sweep << buf << '\n';
    }
    if (!sweep) throw IoError("failed writing '" + o.out + "/sweep.csv'");
    std::cerr << "calibrated threshold " << cal.threshold << " (F1 " << cal.f1 << ")\n";
    return 0;
}

struct EnsembleOpts {
    std::vector<std::string> oof_paths;
    std::string out;
    std::string config;
};

int do_ensemble(const EnsembleOpts& o) {
    OofBundle bundle = bundle_from_files(o.oof_paths);
    EnsembleResult res = run_ensemble(bundle, bundle.model_names());
    ensure_dir(o.out);
    save_oof_csv(bundle.ids, bundle.folds.fold_of, res.probabilities, bundle.labels,
                 o.out + "/ensemble_oof.csv");
    save_predictions(bundle.ids, res.probabilities, res.calibration.threshold,
                     o.out + "/predictions.csv");
    write_json_file(json{{"members", res.members},
                         {"threshold", res.calibration.threshold},
                         {"f1", res.calibration.f1},
                         {"auc", res.pooled.auc}},
                    o.out + "/calibration.json");
    std::cerr << "ensemble of " << res.members.size() << ": AUC " << res.pooled.auc << ", F1 "
              << res.calibration.f1 << " at " << res.calibration.threshold << "\n";
    return 0;
}

struct AblateOpts {
    std::string data, labels, out;
    std::string preset = "boost-a";
    std::string arch;  // non-empty selects the nn pipeline
    int rounds = -1;
    int epochs = -1;
    int folds = 5;
    std::uint64_t seed = 0;
    bool indices = true;
    bool tta = true;
    std::string drop_stat, drop_index, drop_modality;
    std::string config;
    json nested_gbm, nested_fusion, nested_train;
};

int do_ablate(const AblateOpts& o) {
    Dataset d = load_dataset(o.data, o.labels);

    AblationPlan plan;
    plan.base.kind = o.arch.empty() ? "gbm" : "nn";
    if (plan.base.kind == "gbm") {
        plan.base.name = o.preset;
        plan.base.gbm = GbmConfig::preset(o.preset);
        plan.base.gbm.seed = o.seed;
        if (!o.nested_gbm.is_null()) overlay_gbm(plan.base.gbm, o.nested_gbm);
        if (o.rounds >= 0) plan.base.gbm.n_rounds = o.rounds;
        plan.base.use_indices = o.indices;
    } else {
        plan.base.name = o.arch;
        plan.base.fusion = FusionConfig::arch(o.arch);
        plan.base.fusion.seed = o.seed;
        plan.base.train.seed = o.seed;
        plan.base.train.tta = o.tta;
        if (!o.nested_fusion.is_null()) overlay_fusion(plan.base.fusion, o.nested_fusion);
        if (!o.nested_train.is_null()) overlay_train(plan.base.train, o.nested_train);
        if (o.epochs >= 0) plan.base.train.epochs = o.epochs;
    }

    int variants = 0;
    if (!o.drop_stat.empty()) {
        plan.variant = "drop-stat";
        plan.stat = o.drop_stat;
        ++variants;
    }
    if (!o.drop_index.empty()) {
        plan.variant = "drop-index";
        plan.index_name = o.drop_index;
        ++variants;
    }
    if (!o.drop_modality.empty()) {
        plan.variant = "drop-modality";
        std::stringstream ss(o.drop_modality);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) plan.modalities.push_back(part);
        ++variants;
    }
    if (variants == 0) plan.variant = "none";
    if (variants > 1)
        throw ConfigError("give at most one of --drop-stat, --drop-index, --drop-modality");

    FoldAssignment folds = stratified_kfold(d.labels.labels, o.folds, o.seed);
    AblationRow row = run_ablation(plan, d.stack, d.labels.ids, d.labels.labels, folds);

    ensure_dir(o.out);
    save_oof_csv(d.labels.ids, folds.fold_of, row.baseline.oof, d.labels.labels,
                 o.out + "/baseline_oof.csv");
    save_oof_csv(d.labels.ids, folds.fold_of, row.ablated.oof, d.labels.labels,
                 o.out + "/ablated_oof.csv");
    write_json_file(json{{"description", row.description},
                         {"baseline_f1", row.baseline_f1},
                         {"ablated_f1", row.ablated_f1},
                         {"baseline_auc", row.baseline_auc},
                         {"ablated_auc", row.ablated_auc}},
                    o.out + "/ablation.json");
    std::cerr << row.description << ": baseline F1 " << row.baseline_f1 << " -> ablated F1 "
              << row.ablated_f1 << "\n";
    return 0;
}

struct ReportOpts {
    std::vector<std::string> oof_paths;
    std::string out;
    std::string model;  // gbm model JSON for the importance table
    int top_k = 30;
    double public_lb = -1.0, private_lb = -1.0;
    std::string config;
    CLI::Option* public_opt = nullptr;
    CLI::Option* private_opt = nullptr;
};

int do_report(const ReportOpts& o) {
    OofBundle bundle = bundle_from_files(o.oof_paths);
    run_ensemble(bundle, bundle.model_names());

    GbmModel model;
    const bool with_importance = !o.model.empty();
    if (with_importance) model = load_gbm_model(o.model);

    ReportOptions opts;
    opts.top_k = o.top_k;
    const bool has_pub = o.public_lb >= 0.0, has_priv = o.private_lb >= 0.0;
    if (has_pub != has_priv)
        throw ConfigError("--public-lb and --private-lb must be given together");
    if (has_pub) {
        opts.has_leaderboard = true;
        opts.public_lb = o.public_lb;
        opts.private_lb = o.private_lb;
    }

    ensure_dir(o.out);
    emit_report(bundle, with_importance ? &model : nullptr, o.out, opts);
    std::cerr << "report written to " << o.out << "\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"landslide patch classification toolkit"};
    app.require_subcommand(1);

    SynthOpts synth;
    CLI::App* s_synth = app.add_subcommand("synth", "generate a synthetic labelled patch stack");
    {
        ConfigBinder bind;
        bind.bind("n", s_synth->add_option("--n", synth.n, "number of patches"),
                  assign_to(synth.n));
        bind.bind("pos_ratio",
                  s_synth->add_option("--pos-ratio", synth.pos_ratio, "positive fraction"),
                  assign_to(synth.pos_ratio));
        bind.bind("difficulty",
                  s_synth->add_option("--difficulty", synth.difficulty,
                                      "0 = separable, 1 = heavy overlap"),
                  assign_to(synth.difficulty));
        bind.bind("seed", s_synth->add_option("--seed", synth.seed, "generator seed"),
                  assign_to(synth.seed));
        bind.bind("out",
                  s_synth->add_option("--out", synth.out, "output directory")->required(),
                  assign_to(synth.out));
        s_synth->add_option("--config", synth.config, "JSON config (flags win)");
        s_synth->callback([&synth, bind] {
            if (!synth.config.empty()) bind.apply(synth.config);
        });
    }

    FeaturesOpts feat;
    CLI::App* s_feat =
        app.add_subcommand("features", "compute per-patch summary statistics");
    {
        ConfigBinder bind;
        bind.bind("data",
                  s_feat->add_option("--data", feat.data, "patch stack (.npy)")->required(),
                  assign_to(feat.data));
        bind.bind("labels", s_feat->add_option("--labels", feat.labels, "labels CSV for ids"),
                  assign_to(feat.labels));
        bind.bind("indices",
                  s_feat->add_flag("--indices,!--no-indices", feat.indices,
                                   "append the six spectral indices"),
                  assign_to(feat.indices));
        bind.bind("scaler",
                  s_feat->add_option("--scaler", feat.scaler, "standard, robust or none"),
                  assign_to(feat.scaler));
        bind.bind("out",
                  s_feat->add_option("--out", feat.out, "output CSV path")->required(),
                  assign_to(feat.out));
        s_feat->add_option("--config", feat.config, "JSON config (flags win)");
        s_feat->callback([&feat, bind] {
            if (!feat.config.empty()) bind.apply(feat.config);
        });
    }

    TrainGbmOpts tg;
    CLI::App* s_tg = app.add_subcommand("train-gbm", "cross-validate a boosted-tree model");
    {
        ConfigBinder bind;
        bind.bind("data", s_tg->add_option("--data", tg.data, "patch stack (.npy)")->required(),
                  assign_to(tg.data));
        bind.bind("labels",
                  s_tg->add_option("--labels", tg.labels, "labels CSV")->required(),
                  assign_to(tg.labels));
        bind.bind("preset", s_tg->add_option("--preset", tg.preset, "boost-a or boost-b"),
                  assign_to(tg.preset));
        tg.rounds_opt = s_tg->add_option("--rounds", tg.rounds, "override boosting rounds");
        bind.bind("rounds", tg.rounds_opt, assign_to(tg.rounds));
        bind.bind("folds", s_tg->add_option("--folds", tg.folds, "fold count"),
                  assign_to(tg.folds));
        tg.seed_opt = s_tg->add_option("--seed", tg.seed, "fold and model seed");
        bind.bind("seed", tg.seed_opt, assign_to(tg.seed));
        bind.bind("indices",
                  s_tg->add_flag("--indices,!--no-indices", tg.indices,
                                 "use the six spectral indices"),
                  assign_to(tg.indices));
        bind.bind("scaler", s_tg->add_option("--scaler", tg.scaler, "must stay none"),
                  assign_to(tg.scaler));
        bind.bind("drop_stat",
                  s_tg->add_option("--drop-stat", tg.drop_stats, "statistic to drop"),
                  assign_names(tg.drop_stats));
        bind.bind("drop_index",
                  s_tg->add_option("--drop-index", tg.drop_indices, "index channel to drop"),
                  assign_names(tg.drop_indices));
        bind.bind("out",
                  s_tg->add_option("--out", tg.out, "output directory")->required(),
                  assign_to(tg.out));
        bind.bind("gbm", nullptr, assign_to(tg.nested_gbm));
        s_tg->add_option("--config", tg.config, "JSON config (flags win)");
        s_tg->callback([&tg, bind] {
            if (!tg.config.empty()) bind.apply(tg.config);
        });
    }

    TrainNnOpts tn;
    CLI::App* s_tn = app.add_subcommand("train-nn", "cross-validate a fusion network");
    {
        ConfigBinder bind;
        bind.bind("data", s_tn->add_option("--data", tn.data, "patch stack (.npy)")->required(),
                  assign_to(tn.data));
        bind.bind("labels",
                  s_tn->add_option("--labels", tn.labels, "labels CSV")->required(),
                  assign_to(tn.labels));
        bind.bind("arch",
                  s_tn->add_option("--arch", tn.arch,
                                   "single, combinedV2, combinedV3 or combinedV4"),
                  assign_to(tn.arch));
        tn.epochs_opt = s_tn->add_option("--epochs", tn.epochs, "training epochs");
        bind.bind("epochs", tn.epochs_opt, assign_to(tn.epochs));
        bind.bind("folds", s_tn->add_option("--folds", tn.folds, "fold count"),
                  assign_to(tn.folds));
        tn.seed_opt = s_tn->add_option("--seed", tn.seed, "fold and model seed");
        bind.bind("seed", tn.seed_opt, assign_to(tn.seed));
        tn.tta_opt = s_tn->add_flag("--tta,!--no-tta", tn.tta, "flip-group averaging");
        bind.bind("tta", tn.tta_opt, assign_to(tn.tta));
        bind.bind("scaler",
                  s_tn->add_option("--scaler", tn.scaler, "standard, robust or none"),
                  assign_to(tn.scaler));
        bind.bind("out",
                  s_tn->add_option("--out", tn.out, "output directory")->required(),
                  assign_to(tn.out));
        bind.bind("fusion", nullptr, assign_to(tn.nested_fusion));
        bind.bind("train", nullptr, assign_to(tn.nested_train));
        s_tn->add_option("--config", tn.config, "JSON config (flags win)");
        s_tn->callback([&tn, bind] {
            if (!tn.config.empty()) bind.apply(tn.config);
        });
    }

    PredictOpts pr;
    CLI::App* s_pr = app.add_subcommand("predict", "apply a saved model to a patch stack");
    {
        ConfigBinder bind;
        bind.bind("model",
                  s_pr->add_option("model", pr.model, "model file (gbm JSON or fusion manifest)")
                      ->required(),
                  assign_to(pr.model));
        bind.bind("data", s_pr->add_option("--data", pr.data, "patch stack (.npy)")->required(),
                  assign_to(pr.data));
        bind.bind("labels", s_pr->add_option("--labels", pr.labels, "labels CSV for ids"),
                  assign_to(pr.labels));
        bind.bind("tta", s_pr->add_flag("--tta,!--no-tta", pr.tta, "flip-group averaging (nn)"),
                  assign_to(pr.tta));
        bind.bind("threshold",
                  s_pr->add_option("--threshold", pr.threshold, "decision threshold"),
                  assign_to(pr.threshold));
        bind.bind("out",
                  s_pr->add_option("--out", pr.out, "predictions CSV path")->required(),
                  assign_to(pr.out));
        s_pr->add_option("--config", pr.config, "JSON config (flags win)");
        s_pr->callback([&pr, bind] {
            if (!pr.config.empty()) bind.apply(pr.config);
        });
    }

    CalibrateOpts cal;
    CLI::App* s_cal =
        app.add_subcommand("calibrate", "pick the F1-maximizing threshold from an OOF file");
    {
        ConfigBinder bind;
        bind.bind("oof", s_cal->add_option("--oof", cal.oof, "OOF CSV")->required(),
                  assign_to(cal.oof));
        bind.bind("out",
                  s_cal->add_option("--out", cal.out, "output directory")->required(),
                  assign_to(cal.out));
        s_cal->add_option("--config", cal.config, "JSON config (flags win)");
        s_cal->callback([&cal, bind] {
            if (!cal.config.empty()) bind.apply(cal.config);
        });
    }

    EnsembleOpts ens;
    CLI::App* s_ens =
        app.add_subcommand("ensemble", "average OOF files and calibrate the blend");
    {
        ConfigBinder bind;
        bind.bind("oof",
                  s_ens->add_option("oof", ens.oof_paths, "OOF CSV files")->required(),
                  assign_names(ens.oof_paths));
        bind.bind("out",
                  s_ens->add_option("--out", ens.out, "output directory")->required(),
                  assign_to(ens.out));
        s_ens->add_option("--config", ens.config, "JSON config (flags win)");
        s_ens->callback([&ens, bind] {
            if (!ens.config.empty()) bind.apply(ens.config);
        });
    }

    AblateOpts ab;
    CLI::App* s_ab =
        app.add_subcommand("ablate", "rerun cross-validation with one feature group removed");
    {
        ConfigBinder bind;
        bind.bind("data", s_ab->add_option("--data", ab.data, "patch stack (.npy)")->required(),
                  assign_to(ab.data));
        bind.bind("labels",
                  s_ab->add_option("--labels", ab.labels, "labels CSV")->required(),
                  assign_to(ab.labels));
        bind.bind("preset", s_ab->add_option("--preset", ab.preset, "gbm base preset"),
                  assign_to(ab.preset));
        bind.bind("arch", s_ab->add_option("--arch", ab.arch, "nn base architecture"),
                  assign_to(ab.arch));
        bind.bind("rounds", s_ab->add_option("--rounds", ab.rounds, "override boosting rounds"),
                  assign_to(ab.rounds));
        bind.bind("epochs", s_ab->add_option("--epochs", ab.epochs, "override training epochs"),
                  assign_to(ab.epochs));
        bind.bind("folds", s_ab->add_option("--folds", ab.folds, "fold count"),
                  assign_to(ab.folds));
        bind.bind("seed", s_ab->add_option("--seed", ab.seed, "fold and model seed"),
                  assign_to(ab.seed));
        bind.bind("indices",
                  s_ab->add_flag("--indices,!--no-indices", ab.indices,
                                 "use the six spectral indices"),
                  assign_to(ab.indices));
        bind.bind("tta", s_ab->add_flag("--tta,!--no-tta", ab.tta, "flip-group averaging (nn)"),
                  assign_to(ab.tta));
        bind.bind("drop_stat", s_ab->add_option("--drop-stat", ab.drop_stat, "statistic"),
                  assign_to(ab.drop_stat));
        bind.bind("drop_index", s_ab->add_option("--drop-index", ab.drop_index, "index channel"),
                  assign_to(ab.drop_index));
        bind.bind("drop_modality",
                  s_ab->add_option("--drop-modality", ab.drop_modality,
                                   "modality group(s), comma-separated"),
                  assign_to(ab.drop_modality));
        bind.bind("out",
                  s_ab->add_option("--out", ab.out, "output directory")->required(),
                  assign_to(ab.out));
        bind.bind("gbm", nullptr, assign_to(ab.nested_gbm));
        bind.bind("fusion", nullptr, assign_to(ab.nested_fusion));
        bind.bind("train", nullptr, assign_to(ab.nested_train));
        s_ab->add_option("--config", ab.config, "JSON config (flags win)");
        s_ab->callback([&ab, bind] {
            if (!ab.config.empty()) bind.apply(ab.config);
        });
    }

    ReportOpts rep;
    CLI::App* s_rep = app.add_subcommand("report", "emit plot-ready files from OOF runs");
    {
        ConfigBinder bind;
        bind.bind("oof",
                  s_rep->add_option("oof", rep.oof_paths, "OOF CSV files")->required(),
                  assign_names(rep.oof_paths));
        bind.bind("model",
                  s_rep->add_option("--model", rep.model, "gbm model JSON for importance"),
                  assign_to(rep.model));
        bind.bind("top_k", s_rep->add_option("--top-k", rep.top_k, "importance rows kept"),
                  assign_to(rep.top_k));
        rep.public_opt =
            s_rep->add_option("--public-lb", rep.public_lb, "public leaderboard F1");
        bind.bind("public_lb", rep.public_opt, assign_to(rep.public_lb));
        rep.private_opt =
            s_rep->add_option("--private-lb", rep.private_lb, "private leaderboard F1");
        bind.bind("private_lb", rep.private_opt, assign_to(rep.private_lb));
        bind.bind("out",
                  s_rep->add_option("--out", rep.out, "output directory")->required(),
                  assign_to(rep.out));
        s_rep->add_option("--config", rep.config, "JSON config (flags win)");
        s_rep->callback([&rep, bind] {
            if (!rep.config.empty()) bind.apply(rep.config);
        });
    }

    try {
        app.parse(argc, argv);
        if (s_synth->parsed()) return do_synth(synth);
        if (s_feat->parsed()) return do_features(feat);
        if (s_tg->parsed()) return do_train_gbm(tg);
        if (s_tn->parsed()) return do_train_nn(tn);
        if (s_pr->parsed()) return do_predict(pr);
        if (s_cal->parsed()) return do_calibrate(cal);
        if (s_ens->parsed()) return do_ensemble(ens);
        if (s_ab->parsed()) return do_ablate(ab);
        if (s_rep->parsed()) return do_report(rep);
        return 1;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.is_validation() ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("lsc");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace lsc
