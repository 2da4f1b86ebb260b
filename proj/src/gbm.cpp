#include "lsc/gbm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "lsc/json_io.hpp"

namespace lsc {

using nlohmann::json;

void GbmConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning_rate must be positive, got " + std::to_string(learning_rate));
    if (n_rounds < 0) throw ConfigError("n_rounds must be >= 0, got " + std::to_string(n_rounds));
    if (num_leaves < 2) throw ConfigError("num_leaves must be >= 2, got " + std::to_string(num_leaves));
    if (max_depth < 1) throw ConfigError("max_depth must be >= 1, got " + std::to_string(max_depth));
    if (!(subsample > 0.0) || subsample > 1.0)
        throw ConfigError("subsample must be in (0, 1], got " + std::to_string(subsample));
    if (!(colsample > 0.0) || colsample > 1.0)
        throw ConfigError("colsample must be in (0, 1], got " + std::to_string(colsample));
    if (!(scale_pos_weight > 0.0))
        throw ConfigError("scale_pos_weight must be positive, got " + std::to_string(scale_pos_weight));
    if (l2_lambda < 0.0) throw ConfigError("l2_lambda must be >= 0, got " + std::to_string(l2_lambda));
    if (min_samples_leaf < 1)
        throw ConfigError("min_samples_leaf must be >= 1, got " + std::to_string(min_samples_leaf));
    if (n_bins < 2 || n_bins > 256)
        throw ConfigError("n_bins must be in [2, 256], got " + std::to_string(n_bins));
    if (n_threads < 1) throw ConfigError("n_threads must be >= 1, got " + std::to_string(n_threads));
}

GbmConfig GbmConfig::boost_a() {
    GbmConfig c;
    c.learning_rate = 0.02;
    c.n_rounds = 4000;
    c.num_leaves = 63;
    c.max_depth = 6;
    c.subsample = 0.8;
    c.colsample = 0.8;
    c.scale_pos_weight = 1.5;
    c.l2_lambda = 1.2;
    return c;
}

GbmConfig GbmConfig::boost_b() {
    GbmConfig c;
    c.learning_rate = 0.005;
    c.n_rounds = 12000;
    c.num_leaves = 24;
    c.max_depth = 12;
    c.subsample = 0.6;
    c.colsample = 0.5;
    c.scale_pos_weight = 1.5;
    c.l2_lambda = 0.3;
    return c;
}

GbmConfig GbmConfig::preset(const std::string& name) {
    if (name == "boost-a") return boost_a();
    if (name == "boost-b") return boost_b();
    throw ConfigError("unknown gbm preset '" + name + "' (expected boost-a or boost-b)");
}

std::vector<double> FeatureImportance::normalized_gain() const {
    double total = std::accumulate(gain.begin(), gain.end(), 0.0);
    std::vector<double> out(gain.size(), 0.0);
    if (total > 0.0)
        for (std::size_t i = 0; i < gain.size(); ++i) out[i] = gain[i] / total;
    return out;
}

// ---------------------------------------------------------------------------
// binning

static std::vector<double> feature_cuts(std::vector<double> values, int n_bins) {
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    const std::size_t d = values.size();
    std::vector<double> cuts;
    if (d <= 1) return cuts;
    if (d <= static_cast<std::size_t>(n_bins)) {
        cuts.reserve(d - 1);
        for (std::size_t i = 0; i + 1 < d; ++i) cuts.push_back(0.5 * (values[i] + values[i + 1]));
        return cuts;
    }
    cuts.reserve(static_cast<std::size_t>(n_bins) - 1);
    std::size_t prev_idx = 0;
    for (int k = 1; k < n_bins; ++k) {
        auto idx = static_cast<std::size_t>(
            std::llround(static_cast<double>(k) * static_cast<double>(d) / n_bins));
        idx = std::clamp<std::size_t>(idx, 1, d - 1);
        if (idx == prev_idx) continue;  // collapse duplicate quantile positions
        cuts.push_back(0.5 * (values[idx - 1] + values[idx]));
        prev_idx = idx;
    }
    return cuts;
}

static std::uint16_t bin_value(const std::vector<double>& cuts, double x) {
    // bin = number of cuts <= x, so anything above the last cut lands in the
    // top bin
    auto it = std::upper_bound(cuts.begin(), cuts.end(), x);
    return static_cast<std::uint16_t>(it - cuts.begin());
}

BinnedMatrix quantile_bin(const FeatureTable& table, int n_bins) {
    if (n_bins < 2 || n_bins > 256)
        throw PreconditionError("n_bins must be in [2, 256], got " + std::to_string(n_bins));
    if (table.n_rows == 0) throw PreconditionError("cannot bin an empty feature table");
    const std::size_t n = table.n_rows;
    const std::size_t f = table.column_names.size();

    BinnedMatrix out;
    out.n_rows = n;
    out.n_features = f;
    out.bins.assign(n * f, 0);
    out.bin_edges.resize(f);

    std::vector<double> column(n);
    for (std::size_t j = 0; j < f; ++j) {
        for (std::size_t i = 0; i < n; ++i) column[i] = table.at(i, j);
        out.bin_edges[j] = feature_cuts(column, n_bins);
        const auto& cuts = out.bin_edges[j];
        for (std::size_t i = 0; i < n; ++i)
            out.bins[i * f + j] = bin_value(cuts, table.at(i, j));
    }
    return out;
}

std::vector<std::uint16_t> bin_row(const std::vector<std::vector<double>>& edges,
                                   const double* row) {
    std::vector<std::uint16_t> out(edges.size());
    for (std::size_t j = 0; j < edges.size(); ++j) out[j] = bin_value(edges[j], row[j]);
    return out;
}

// ---------------------------------------------------------------------------
// objective

void logistic_gradients(const std::vector<double>& scores, const std::vector<int>& labels,
                        double scale_pos_weight, std::vector<double>& grad,
                        std::vector<double>& hess) {
    if (scores.size() != labels.size())
        throw ShapeError("scores and labels differ in length: " + std::to_string(scores.size()) +
                         " vs " + std::to_string(labels.size()));
    grad.resize(scores.size());
    hess.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double p = sigmoid(scores[i]);
        const double w = labels[i] == 1 ? scale_pos_weight : 1.0;
        grad[i] = w * (p - static_cast<double>(labels[i]));
        hess[i] = w * p * (1.0 - p);
        if (!std::isfinite(grad[i]) || !std::isfinite(hess[i]))
            throw InternalError("non-finite gradient at sample " + std::to_string(i));
    }
}

double weighted_logistic_loss(const std::vector<double>& scores, const std::vector<int>& labels,
                              double scale_pos_weight) {
    if (scores.size() != labels.size())
        throw ShapeError("scores and labels differ in length: " + std::to_string(scores.size()) +
                         " vs " + std::to_string(labels.size()));
    double loss = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double z = scores[i];
        const double y = static_cast<double>(labels[i]);
        const double w = labels[i] == 1 ? scale_pos_weight : 1.0;
        // log(1 + exp(z)) - y*z, evaluated stably for either sign of z
        const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        loss += w * (softplus - y * z);
        wsum += w;
    }
    return loss / wsum;
}

// ---------------------------------------------------------------------------
// training

namespace {

template <class Fn>
void parallel_for(std::size_t n, int n_threads, Fn&& fn) {
    if (n_threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(n_threads), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += workers) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

struct SplitChoice {
    double gain = 0.0;
    int feature = -1;
    int bin = -1;
    double left_g = 0.0, left_h = 0.0;
    std::size_t left_count = 0;
    bool valid() const { return feature >= 0; }
};

struct LeafState {
    int node_id = 0;
    int depth = 0;
    std::vector<std::uint32_t> rows;
    double sum_g = 0.0, sum_h = 0.0;
    SplitChoice best;
};

double leaf_objective(double g, double h, double lambda) {
    const double denom = h + lambda;
    return denom > 0.0 ? g * g / denom : 0.0;
}

// Best split of one leaf over the allowed features; scan order (ascending
// feature, ascending bin) with a strict improvement test makes ties resolve
// to the smallest feature index, then the smallest threshold.
SplitChoice find_best_split(const LeafState& leaf, const BinnedMatrix& binned,
                            const std::vector<double>& grad, const std::vector<double>& hess,
                            const std::vector<int>& features, const GbmConfig& cfg) {
    const double lambda = cfg.l2_lambda;
    const double parent_obj = leaf_objective(leaf.sum_g, leaf.sum_h, lambda);
    std::vector<SplitChoice> per_feature(features.size());

    parallel_for(features.size(), cfg.n_threads, [&](std::size_t fi) {
        const int f = features[fi];
        const auto& cuts = binned.bin_edges[static_cast<std::size_t>(f)];
        if (cuts.empty()) return;  // constant feature
        const std::size_t n_bins = cuts.size() + 1;
        std::vector<double> hg(n_bins, 0.0), hh(n_bins, 0.0);
        std::vector<std::size_t> hc(n_bins, 0);
        for (std::uint32_t r : leaf.rows) {
            const std::uint16_t b = binned.at(r, static_cast<std::size_t>(f));
            hg[b] += grad[r];
            hh[b] += hess[r];
            ++hc[b];
        }
        SplitChoice best;
        double lg = 0.0, lh = 0.0;
        std::size_t lc = 0;
        for (std::size_t b = 0; b + 1 < n_bins; ++b) {
            lg += hg[b];
            lh += hh[b];
            lc += hc[b];
            const std::size_t rc = leaf.rows.size() - lc;
            if (lc < static_cast<std::size_t>(cfg.min_samples_leaf)) continue;
            if (rc < static_cast<std::size_t>(cfg.min_samples_leaf)) break;
            const double rg = leaf.sum_g - lg;
            const double rh = leaf.sum_h - lh;
            if (lh + lambda <= 0.0 || rh + lambda <= 0.0) continue;
            const double gain =
                leaf_objective(lg, lh, lambda) + leaf_objective(rg, rh, lambda) - parent_obj;
            if (gain > best.gain) {
                best.gain = gain;
                best.feature = f;
                best.bin = static_cast<int>(b);
                best.left_g = lg;
                best.left_h = lh;
                best.left_count = lc;
            }
        }
        per_feature[fi] = best;
    });

    SplitChoice best;
    for (const auto& cand : per_feature)
        if (cand.valid() && cand.gain > best.gain) best = cand;
    return best;
}

double tree_score(const Tree& tree, const std::uint16_t* row_bins, std::size_t stride) {
    int id = 0;
    while (!tree.nodes[static_cast<std::size_t>(id)].is_leaf()) {
        const TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
        const std::uint16_t b = row_bins[static_cast<std::size_t>(node.feature) * stride];
        id = b <= node.bin ? node.left : node.right;
    }
    return tree.nodes[static_cast<std::size_t>(id)].value;
}

}  // namespace

GbmModel fit_gbm(const BinnedMatrix& binned, const std::vector<int>& labels,
                 const GbmConfig& config, const std::vector<std::string>& feature_names) {
    config.validate();
    const std::size_t n = binned.n_rows;
    const std::size_t f = binned.n_features;
    if (labels.size() != n)
        throw ShapeError("labels length " + std::to_string(labels.size()) +
                         " does not match row count " + std::to_string(n));
    if (n < 2) throw PreconditionError("need at least 2 rows to train, got " + std::to_string(n));
    if (!feature_names.empty() && feature_names.size() != f)
        throw ShapeError("feature_names length " + std::to_string(feature_names.size()) +
                         " does not match feature count " + std::to_string(f));

    double wpos = 0.0, wneg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == 1)
            wpos += config.scale_pos_weight;
        else if (labels[i] == 0)
            wneg += 1.0;
        else
            throw DataError("label at row " + std::to_string(i) + " is " +
                            std::to_string(labels[i]) + ", expected 0 or 1");
    }
    if (wpos == 0.0 || wneg == 0.0)
        throw TrainingError("training labels must contain both classes");

    GbmModel model;
    model.config = config;
    model.bin_edges = binned.bin_edges;
    model.feature_names = feature_names;
    model.base_score = std::log(wpos / wneg);
    model.importance.gain.assign(f, 0.0);
    model.importance.splits.assign(f, 0);
    model.trees.reserve(static_cast<std::size_t>(config.n_rounds));

    std::vector<double> scores(n, model.base_score);
    std::vector<double> grad, hess;
    Rng rng(config.seed);

    std::vector<std::uint32_t> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), 0u);
    std::vector<int> all_features(f);
    std::iota(all_features.begin(), all_features.end(), 0);

    const auto m_rows = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.subsample * static_cast<double>(n))));
    const auto m_cols = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.colsample * static_cast<double>(f))));

    for (int round = 0; round < config.n_rounds; ++round) {
        logistic_gradients(scores, labels, config.scale_pos_weight, grad, hess);

        std::vector<std::uint32_t> rows;
        if (m_rows < n) {
            auto pool = all_rows;
            rng.shuffle(pool);
            rows.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m_rows));
            std::sort(rows.begin(), rows.end());
        } else {
            rows = all_rows;
        }
        std::vector<int> features;
        if (m_cols < f) {
            auto pool = all_features;
            rng.shuffle(pool);
            features.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m_cols));
            std::sort(features.begin(), features.end());
        } else {
            features = all_features;
        }

        Tree tree;
        tree.nodes.emplace_back();

        std::vector<LeafState> open;
        {
            LeafState root;
            root.node_id = 0;
            root.depth = 0;
            root.rows = std::move(rows);
            for (std::uint32_t r : root.rows) {
                root.sum_g += grad[r];
                root.sum_h += hess[r];
            }
            if (root.depth < config.max_depth &&
                root.rows.size() >= 2 * static_cast<std::size_t>(config.min_samples_leaf))
                root.best = find_best_split(root, binned, grad, hess, features, config);
            open.push_back(std::move(root));
        }

        int n_leaves = 1;
        while (n_leaves < config.num_leaves) {
            std::size_t pick = open.size();
            double best_gain = 0.0;
            for (std::size_t i = 0; i < open.size(); ++i) {
                if (open[i].best.valid() && open[i].best.gain > best_gain) {
                    best_gain = open[i].best.gain;
                    pick = i;
                }
            }
            if (pick == open.size()) break;  // no remaining positive-gain split

            LeafState leaf = std::move(open[pick]);
            open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));
            const SplitChoice& sp = leaf.best;

            TreeNode& node = tree.nodes[static_cast<std::size_t>(leaf.node_id)];
            node.feature = sp.feature;
            node.bin = sp.bin;
            node.cut = binned.bin_edges[static_cast<std::size_t>(sp.feature)]
                                       [static_cast<std::size_t>(sp.bin)];
            node.left = static_cast<int>(tree.nodes.size());
            node.right = node.left + 1;
            tree.nodes.emplace_back();
            tree.nodes.emplace_back();

            LeafState lchild, rchild;
            lchild.node_id = node.left;
            rchild.node_id = node.right;
            lchild.depth = rchild.depth = leaf.depth + 1;
            lchild.rows.reserve(sp.left_count);
            rchild.rows.reserve(leaf.rows.size() - sp.left_count);
            for (std::uint32_t r : leaf.rows) {
                if (binned.at(r, static_cast<std::size_t>(sp.feature)) <= sp.bin)
                    lchild.rows.push_back(r);
                else
                    rchild.rows.push_back(r);
            }
            lchild.sum_g = sp.left_g;
            lchild.sum_h = sp.left_h;
            rchild.sum_g = leaf.sum_g - sp.left_g;
            rchild.sum_h = leaf.sum_h - sp.left_h;

            for (LeafState* child : {&lchild, &rchild}) {
                if (child->depth < config.max_depth &&
                    child->rows.size() >= 2 * static_cast<std::size_t>(config.min_samples_leaf))
                    child->best = find_best_split(*child, binned, grad, hess, features, config);
            }

            model.importance.gain[static_cast<std::size_t>(sp.feature)] += sp.gain;
            model.importance.splits[static_cast<std::size_t>(sp.feature)] += 1;
            tree.depth = std::max(tree.depth, leaf.depth + 1);
            open.push_back(std::move(lchild));
            open.push_back(std::move(rchild));
            ++n_leaves;
        }

        for (const LeafState& leaf : open) {
            const double denom = leaf.sum_h + config.l2_lambda;
            const double value =
                denom > 0.0 ? -config.learning_rate * leaf.sum_g / denom : 0.0;
            tree.nodes[static_cast<std::size_t>(leaf.node_id)].value = value;
        }
        tree.n_leaves = n_leaves;

        for (std::size_t i = 0; i < n; ++i)
            scores[i] += tree_score(tree, &binned.bins[i * f], 1);
        model.trees.push_back(std::move(tree));
        model.train_loss.push_back(weighted_logistic_loss(scores, labels, config.scale_pos_weight));
    }
    return model;
}

GbmModel fit_gbm(const FeatureTable& table, const std::vector<int>& labels,
                 const GbmConfig& config) {
    BinnedMatrix binned = quantile_bin(table, config.n_bins);
    return fit_gbm(binned, labels, config, table.column_names);
}

std::vector<double> predict_gbm(const GbmModel& model, const BinnedMatrix& binned) {
    if (binned.n_features != model.bin_edges.size())
        throw ShapeError("model expects " + std::to_string(model.bin_edges.size()) +
                         " features, matrix has " + std::to_string(binned.n_features));
    std::vector<double> probs(binned.n_rows);
    for (std::size_t i = 0; i < binned.n_rows; ++i) {
        double score = model.base_score;
        const std::uint16_t* row = &binned.bins[i * binned.n_features];
        for (const Tree& tree : model.trees) score += tree_score(tree, row, 1);
        probs[i] = sigmoid(score);
    }
    return probs;
}

std::vector<double> predict_gbm(const GbmModel& model, const FeatureTable& table) {
    const std::size_t f = table.column_names.size();
    if (f != model.bin_edges.size())
        throw ShapeError("model expects " + std::to_string(model.bin_edges.size()) +
                         " features, table has " + std::to_string(f));
    std::vector<double> probs(table.n_rows);
    std::vector<double> row(f);
    for (std::size_t i = 0; i < table.n_rows; ++i) {
        for (std::size_t j = 0; j < f; ++j) row[j] = table.at(i, j);
        const auto bins = bin_row(model.bin_edges, row.data());
        double score = model.base_score;
        for (const Tree& tree : model.trees) score += tree_score(tree, bins.data(), 1);
        probs[i] = sigmoid(score);
    }
    return probs;
}

const FeatureImportance& compute_feature_importance(const GbmModel& model) {
    return model.importance;
}

// ---------------------------------------------------------------------------
// persistence

std::string gbm_model_to_json(const GbmModel& model) {
    json trees = json::array();
    for (const Tree& tree : model.trees) {
        json nodes = json::array();
        for (const TreeNode& node : tree.nodes) {
            if (node.is_leaf())
                nodes.push_back(json{{"value", node.value}});
            else
                nodes.push_back(json{{"feature", node.feature},
                                     {"bin", node.bin},
                                     {"cut", node.cut},
                                     {"left", node.left},
                                     {"right", node.right}});
        }
        trees.push_back(json{
            {"nodes", std::move(nodes)}, {"n_leaves", tree.n_leaves}, {"depth", tree.depth}});
    }
    json doc{{"format", "lsc-gbm/1"},
             {"config", gbm_config_to_json(model.config)},
             {"base_score", model.base_score},
             {"feature_names", model.feature_names},
             {"bin_edges", model.bin_edges},
             {"trees", std::move(trees)},
             {"importance",
              json{{"gain", model.importance.gain}, {"splits", model.importance.splits}}},
             {"train_loss", model.train_loss}};
    return doc.dump(2);
}

GbmModel gbm_model_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("model file is not valid JSON: ") + e.what());
    }
    try {
        if (doc.at("format").get<std::string>() != "lsc-gbm/1")
            throw FormatError("unsupported model format tag '" +
                              doc.at("format").get<std::string>() + "'");
        GbmModel model;
        model.config = gbm_config_from_json(doc.at("config"));
        model.base_score = doc.at("base_score").get<double>();
        model.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
        model.bin_edges = doc.at("bin_edges").get<std::vector<std::vector<double>>>();
        for (const json& jt : doc.at("trees")) {
            Tree tree;
            for (const json& jn : jt.at("nodes")) {
                TreeNode node;
                if (jn.contains("feature")) {
                    node.feature = jn.at("feature").get<int>();
                    node.bin = jn.at("bin").get<int>();
                    node.cut = jn.at("cut").get<double>();
                    node.left = jn.at("left").get<int>();
                    node.right = jn.at("right").get<int>();
                } else {
                    node.value = jn.at("value").get<double>();
                }
                tree.nodes.push_back(node);
            }
            tree.n_leaves = jt.at("n_leaves").get<int>();
            tree.depth = jt.at("depth").get<int>();
            model.trees.push_back(std::move(tree));
        }
        model.importance.gain = doc.at("importance").at("gain").get<std::vector<double>>();
        model.importance.splits =
            doc.at("importance").at("splits").get<std::vector<std::int64_t>>();
        model.train_loss = doc.at("train_loss").get<std::vector<double>>();
        return model;
    } catch (const json::exception& e) {
        throw FormatError(std::string("model file is missing required fields: ") + e.what());
    }
}

void save_gbm_model(const GbmModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << gbm_model_to_json(model) << '\n';
    if (!out) throw IoError("failed writing model to '" + path + "'");
}

GbmModel load_gbm_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return gbm_model_from_json(ss.str());
}

}  // namespace lsc
