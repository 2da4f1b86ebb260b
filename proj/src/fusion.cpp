#include "lsc/fusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "lsc/json_io.hpp"
#include "lsc/metrics.hpp"

namespace lsc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// configs

void EncoderConfig::validate() const {
    bool known = false;
    for (const std::string& m : ChannelLayout::modality_names())
        if (m == group) known = true;
    if (!known) throw ConfigError("unknown modality group '" + group + "'");
    if (image_size < 8) throw ConfigError("image_size must be >= 8");
    if (token_patch < 1 || image_size % token_patch != 0)
        throw ConfigError("token_patch must divide image_size, got " +
                          std::to_string(token_patch) + " over " + std::to_string(image_size));
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
        throw ConfigError("embed_dim must be a positive multiple of heads, got " +
                          std::to_string(embed_dim) + " / " + std::to_string(heads));
    if (depth < 1) throw ConfigError("depth must be >= 1, got " + std::to_string(depth));
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
    if (out_features < 1) throw ConfigError("out_features must be >= 1");
}

int EncoderConfig::tokens_per_side(int resize_factor) const {
    return image_size * resize_factor / token_patch;
}

void FusionConfig::validate() const {
    if (encoders.empty()) throw ConfigError("fusion config needs at least one encoder");
    for (std::size_t i = 0; i < encoders.size(); ++i) {
        encoders[i].validate();
        for (std::size_t j = i + 1; j < encoders.size(); ++j)
            if (encoders[i].group == encoders[j].group)
                throw ConfigError("modality group '" + encoders[i].group +
                                  "' assigned to more than one encoder");
    }
    if (head_width < 1) throw ConfigError("head_width must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("dropout_rate must be in [0, 1), got " + std::to_string(dropout_rate));
    if (resize_factor < 1) throw ConfigError("resize_factor must be >= 1");
    if (ln_eps <= 0.0 || bn_eps <= 0.0) throw ConfigError("eps values must be positive");
    if (bn_momentum <= 0.0 || bn_momentum > 1.0)
        throw ConfigError("bn_momentum must be in (0, 1]");
}

FusionConfig FusionConfig::arch(const std::string& name) {
    auto enc = [](const std::string& group) {
        EncoderConfig e;
        e.group = group;
        return e;
    };
    FusionConfig fc;
    if (name == "single") {
        fc.encoders = {enc("RGBN")};
    } else if (name == "combinedV2") {
        fc.encoders = {enc("RGBN"), enc("SARdiff")};
    } else if (name == "combinedV3") {
        fc.encoders = {enc("RGBN"), enc("SARdiff"), enc("Indices")};
    } else if (name == "combinedV4") {
        fc.encoders = {enc("RGBN"), enc("SAR"), enc("SARdiff"), enc("Indices")};
    } else {
        throw ConfigError("unknown architecture '" + name +
                          "' (expected single, combinedV2, combinedV3 or combinedV4)");
    }
    return fc;
}

int FusionConfig::min_channels() const {
    int mx = 0;
    for (const EncoderConfig& e : encoders)
        for (int ch : ChannelLayout::group(e.group)) mx = std::max(mx, ch + 1);
    return mx;
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0, got " + std::to_string(epochs));
    if (batch_size < 2)
        throw ConfigError("batch_size must be >= 2 (batch norm is undefined on one sample)");
    if (!(lr_max > 0.0)) throw ConfigError("lr_max must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("betas must lie in [0, 1)");
    if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    for (double p : {p_hflip, p_vflip, p_rot90})
        if (p < 0.0 || p > 1.0)
            throw ConfigError("augmentation probabilities must be in [0, 1]");
}

double cosine_lr(int epoch, int total_epochs, double lr_max, double lr_min) {
    if (total_epochs < 1)
        throw PreconditionError("total_epochs must be >= 1, got " + std::to_string(total_epochs));
    if (epoch < 0 || epoch > total_epochs)
        throw PreconditionError("epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(total_epochs) + "]");
    if (!(lr_max > 0.0)) throw PreconditionError("lr_max must be positive");
    if (lr_min < 0.0) lr_min = lr_max / 100.0;
    const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * t));
}

FlipSpec draw_augment(const TrainConfig& cfg, Rng& rng) {
    FlipSpec f;
    f.hflip = rng.bernoulli(cfg.p_hflip);
    f.vflip = rng.bernoulli(cfg.p_vflip);
    f.rot90 = rng.bernoulli(cfg.p_rot90);
    return f;
}

// ---------------------------------------------------------------------------
// token extraction

namespace {

// Gather-side coordinate map on an n x n tile for tile' = vflip(hflip(rot90(tile))).
inline void apply_flip(double& y, double& x, const FlipSpec& f, double n_minus_1) {
    if (f.vflip) y = n_minus_1 - y;
    if (f.hflip) x = n_minus_1 - x;
    if (f.rot90) {
        const double ny = x;
        const double nx = n_minus_1 - y;
        y = ny;
        x = nx;
    }
}

Eigen::MatrixXd extract_tokens(const PatchStack& stack, std::size_t sample,
                               const std::vector<int>& channels, const EncoderConfig& ec,
                               int resize_factor, const FlipSpec& flip) {
    const int src = ec.image_size;
    const int full = src * resize_factor;
    const int patch = ec.token_patch;
    const int side = full / patch;
    const int in_dim = patch * patch * static_cast<int>(channels.size());
    Eigen::MatrixXd tokens(side * side, in_dim);

    for (int ty = 0; ty < side; ++ty) {
        for (int tx = 0; tx < side; ++tx) {
            const int row = ty * side + tx;
            for (std::size_t ci = 0; ci < channels.size(); ++ci) {
                const auto ch = static_cast<std::size_t>(channels[ci]);
                for (int dy = 0; dy < patch; ++dy) {
                    for (int dx = 0; dx < patch; ++dx) {
                        const int gy = ty * patch + dy;
                        const int gx = tx * patch + dx;
                        double v;
                        if (resize_factor == 1) {
                            double y = gy, x = gx;
                            apply_flip(y, x, flip, src - 1);
                            v = stack.at(sample, static_cast<std::size_t>(y),
                                         static_cast<std::size_t>(x), ch);
                        } else {
                            // bilinear upsample of the source tile
                            double y = (gy + 0.5) / resize_factor - 0.5;
                            double x = (gx + 0.5) / resize_factor - 0.5;
                            apply_flip(y, x, flip, src - 1);
                            y = std::clamp(y, 0.0, static_cast<double>(src - 1));
                            x = std::clamp(x, 0.0, static_cast<double>(src - 1));
                            const int y0 = static_cast<int>(y);
                            const int x0 = static_cast<int>(x);
                            const int y1 = std::min(y0 + 1, src - 1);
                            const int x1 = std::min(x0 + 1, src - 1);
                            const double fy = y - y0, fx = x - x0;
                            const double a = stack.at(sample, y0, x0, ch);
                            const double b = stack.at(sample, y0, x1, ch);
                            const double c = stack.at(sample, y1, x0, ch);
                            const double d = stack.at(sample, y1, x1, ch);
                            v = a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx +
                                c * fy * (1 - fx) + d * fy * fx;
                        }
                        tokens(row, (static_cast<int>(ci) * patch + dy) * patch + dx) = v;
                    }
                }
            }
        }
    }
    return tokens;
}

}  // namespace

// ---------------------------------------------------------------------------
// net

FusionNet::FusionNet(FusionConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(config_.seed);
    auto gauss = [&rng](Eigen::Index r, Eigen::Index c) {
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = 0.02 * rng.normal();
        return m;
    };
    auto zeros = [](Eigen::Index r, Eigen::Index c) { return Eigen::MatrixXd::Zero(r, c); };
    auto ones = [](Eigen::Index r, Eigen::Index c) { return Eigen::MatrixXd::Ones(r, c); };
    auto param = [this](const std::string& name, Eigen::MatrixXd value) {
        params_.push_back({name, make_variable(std::move(value), name)});
    };

    int fused_width = 0;
    for (std::size_t e = 0; e < config_.encoders.size(); ++e) {
        const EncoderConfig& ec = config_.encoders[e];
        const auto& channels = ChannelLayout::group(ec.group);
        const int in_dim = ec.token_patch * ec.token_patch * static_cast<int>(channels.size());
        const int side = ec.tokens_per_side(config_.resize_factor);
        const int tokens = side * side;
        const int d = ec.embed_dim;
        const std::string p = "enc" + std::to_string(e) + ".";

        param(p + "embed_w", gauss(in_dim, d));
        param(p + "embed_b", zeros(1, d));
        param(p + "pos", gauss(tokens, d));
        for (int l = 0; l < ec.depth; ++l) {
            const std::string b = p + "blk" + std::to_string(l) + ".";
            param(b + "ln1_g", ones(1, d));
            param(b + "ln1_b", zeros(1, d));
            param(b + "wq", gauss(d, d));
            param(b + "bq", zeros(1, d));
            param(b + "wk", gauss(d, d));
            param(b + "bk", zeros(1, d));
            param(b + "wv", gauss(d, d));
            param(b + "bv", zeros(1, d));
            param(b + "wo", gauss(d, d));
            param(b + "bo", zeros(1, d));
            param(b + "ln2_g", ones(1, d));
            param(b + "ln2_b", zeros(1, d));
            param(b + "mlp_w1", gauss(d, d * ec.mlp_ratio));
            param(b + "mlp_b1", zeros(1, d * ec.mlp_ratio));
            param(b + "mlp_w2", gauss(d * ec.mlp_ratio, d));
            param(b + "mlp_b2", zeros(1, d));
        }
        param(p + "proj_w", gauss(d, ec.out_features));
        param(p + "proj_b", zeros(1, ec.out_features));
        fused_width += ec.out_features;
    }

    const int w = config_.head_width;
    param("head.fc1_w", gauss(fused_width, w));
    param("head.fc1_b", zeros(1, w));
    param("head.bn_g", ones(1, w));
    param("head.bn_b", zeros(1, w));
    param("head.res_w1", gauss(w, w));
    param("head.res_b1", zeros(1, w));
    param("head.res_w2", zeros(w, w));  // zero-init: the block starts as identity
    param("head.res_b2", zeros(1, w));
    param("head.out_w", gauss(w, 1));
    param("head.out_b", zeros(1, 1));

    bn_rmean_ = Eigen::RowVectorXd::Zero(w);
    bn_rvar_ = Eigen::RowVectorXd::Ones(w);
}

Param& FusionNet::parameter(const std::string& name) {
    for (Param& p : params_)
        if (p.name == name) return p;
    throw KeyError("no parameter named '" + name + "'");
}

Tensor FusionNet::forward(const PatchStack& stack, const std::vector<std::size_t>& indices,
                          bool training, Rng* rng, const std::vector<FlipSpec>* flips,
                          std::vector<Eigen::MatrixXd>* attention_trace) {
    if (indices.empty()) throw PreconditionError("forward needs a non-empty batch");
    if (stack.h != static_cast<std::size_t>(config_.encoders[0].image_size) ||
        stack.w != stack.h)
        throw ShapeError("stack tiles are " + std::to_string(stack.h) + "x" +
                         std::to_string(stack.w) + ", expected " +
                         std::to_string(config_.encoders[0].image_size) + " square");
    if (static_cast<int>(stack.c) < config_.min_channels())
        throw ShapeError("stack has " + std::to_string(stack.c) +
                         " channels but the assigned modality groups need " +
                         std::to_string(config_.min_channels()));
    if (training && indices.size() < 2)
        throw PreconditionError("training batches need >= 2 samples for batch norm");
    if (training && config_.dropout_rate > 0.0 && rng == nullptr)
        throw PreconditionError("training forward with dropout needs an rng");
    if (flips && flips->size() != indices.size())
        throw ShapeError("flip specs must match the batch size");
    for (std::size_t i : indices)
        if (i >= stack.n)
            throw PreconditionError("sample index " + std::to_string(i) + " out of range");

    auto P = [this](const std::string& name) -> Tensor { return parameter(name).tensor; };

    std::vector<Tensor> batch_rows;
    batch_rows.reserve(indices.size());
    for (std::size_t bi = 0; bi < indices.size(); ++bi) {
        const std::size_t s = indices[bi];
        const FlipSpec flip = flips ? (*flips)[bi] : FlipSpec{};
        std::vector<Tensor> feats;
        feats.reserve(config_.encoders.size());
        for (std::size_t e = 0; e < config_.encoders.size(); ++e) {
            const EncoderConfig& ec = config_.encoders[e];
            const auto& channels = ChannelLayout::group(ec.group);
            const std::string p = "enc" + std::to_string(e) + ".";
            Tensor x = make_constant(
                extract_tokens(stack, s, channels, ec, config_.resize_factor, flip));
            Tensor h = add(add_rowvec(matmul(x, P(p + "embed_w")), P(p + "embed_b")),
                           P(p + "pos"));
            const int dh = ec.embed_dim / ec.heads;
            for (int l = 0; l < ec.depth; ++l) {
                const std::string b = p + "blk" + std::to_string(l) + ".";
                Tensor a_in = layernorm_rows(h, P(b + "ln1_g"), P(b + "ln1_b"), config_.ln_eps);
                Tensor q = add_rowvec(matmul(a_in, P(b + "wq")), P(b + "bq"));
                Tensor k = add_rowvec(matmul(a_in, P(b + "wk")), P(b + "bk"));
                Tensor v = add_rowvec(matmul(a_in, P(b + "wv")), P(b + "bv"));
                std::vector<Tensor> head_outs;
                head_outs.reserve(static_cast<std::size_t>(ec.heads));
                for (int hd = 0; hd < ec.heads; ++hd) {
                    const auto off = static_cast<std::size_t>(hd * dh);
                    Tensor qh = slice_cols(q, off, static_cast<std::size_t>(dh));
                    Tensor kh = slice_cols(k, off, static_cast<std::size_t>(dh));
                    Tensor vh = slice_cols(v, off, static_cast<std::size_t>(dh));
                    Tensor att = softmax_rows(
                        scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))));
                    if (attention_trace) attention_trace->push_back(att->value);
                    head_outs.push_back(matmul(att, vh));
                }
                Tensor att_out = add_rowvec(
                    matmul(concat_cols(head_outs), P(b + "wo")), P(b + "bo"));
                h = add(h, att_out);
                Tensor m_in = layernorm_rows(h, P(b + "ln2_g"), P(b + "ln2_b"), config_.ln_eps);
                Tensor m = gelu(add_rowvec(matmul(m_in, P(b + "mlp_w1")), P(b + "mlp_b1")));
                m = add_rowvec(matmul(m, P(b + "mlp_w2")), P(b + "mlp_b2"));
                h = add(h, m);
            }
            Tensor pooled = mean_rows(h);
            feats.push_back(add_rowvec(matmul(pooled, P(p + "proj_w")), P(p + "proj_b")));
        }
        batch_rows.push_back(feats.size() == 1 ? feats[0] : concat_cols(feats));
    }
    Tensor batch = batch_rows.size() == 1 ? batch_rows[0] : concat_rows(batch_rows);

    Tensor z = relu(add_rowvec(matmul(batch, P("head.fc1_w")), P("head.fc1_b")));
    if (training) {
        Eigen::RowVectorXd bm, bv;
        z = batchnorm_train(z, P("head.bn_g"), P("head.bn_b"), config_.bn_eps, &bm, &bv);
        bn_rmean_ = (1.0 - config_.bn_momentum) * bn_rmean_ + config_.bn_momentum * bm;
        bn_rvar_ = (1.0 - config_.bn_momentum) * bn_rvar_ + config_.bn_momentum * bv;
    } else {
        z = batchnorm_eval(z, P("head.bn_g"), P("head.bn_b"), bn_rmean_, bn_rvar_,
                           config_.bn_eps);
    }
    if (training && config_.dropout_rate > 0.0)
        z = dropout(z, config_.dropout_rate, *rng, true);
    Tensor r = relu(add_rowvec(matmul(z, P("head.res_w1")), P("head.res_b1")));
    r = add_rowvec(matmul(r, P("head.res_w2")), P("head.res_b2"));
    z = add(z, r);
    return add_rowvec(matmul(z, P("head.out_w")), P("head.out_b"));
}

Tensor combined_loss(const Tensor& logits, const Tensor& targets) {
    if (!logits || logits->value.size() == 0)
        throw PreconditionError("combined_loss needs a non-empty batch");
    for (Eigen::Index i = 0; i < targets->value.size(); ++i) {
        const double y = targets->value.data()[i];
        if (y != 0.0 && y != 1.0)
            throw DataError("labels must be 0 or 1, got " + std::to_string(y));
    }
    Tensor bce = bce_with_logits_mean(logits, targets);
    Tensor sf1 = soft_f1_loss(logits, targets);
    return add(scale(bce, 0.5), scale(sf1, 0.5));
}

double combined_loss_value(const std::vector<double>& logits, const std::vector<int>& labels) {
    if (logits.size() != labels.size())
        throw ShapeError("logits and labels differ in length");
    Eigen::MatrixXd lz(static_cast<Eigen::Index>(logits.size()), 1);
    Eigen::MatrixXd tg(static_cast<Eigen::Index>(labels.size()), 1);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        lz(static_cast<Eigen::Index>(i), 0) = logits[i];
        tg(static_cast<Eigen::Index>(i), 0) = labels[i];
    }
    return combined_loss(make_constant(std::move(lz)), make_constant(std::move(tg)))->value(0, 0);
}

Tensor FusionNet::forward_loss(const PatchStack& stack, const std::vector<std::size_t>& indices,
                               const std::vector<int>& labels, Rng& rng,
                               const std::vector<FlipSpec>* flips) {
    if (labels.size() != indices.size())
        throw ShapeError("labels must match the batch size");
    Tensor logits = forward(stack, indices, true, &rng, flips);
    Eigen::MatrixXd tg(static_cast<Eigen::Index>(indices.size()), 1);
    for (std::size_t i = 0; i < labels.size(); ++i)
        tg(static_cast<Eigen::Index>(i), 0) = labels[i];
    pending_loss_ = combined_loss(logits, make_constant(std::move(tg)));
    return pending_loss_;
}

double FusionNet::loss_value(const PatchStack& stack, const std::vector<std::size_t>& indices,
                             const std::vector<int>& labels) {
    if (config_.dropout_rate > 0.0)
        throw PreconditionError("loss_value is deterministic; set dropout_rate to 0");
    if (labels.size() != indices.size())
        throw ShapeError("labels must match the batch size");
    Tensor logits = forward(stack, indices, true, nullptr, nullptr);
    Eigen::MatrixXd tg(static_cast<Eigen::Index>(indices.size()), 1);
    for (std::size_t i = 0; i < labels.size(); ++i)
        tg(static_cast<Eigen::Index>(i), 0) = labels[i];
    return combined_loss(logits, make_constant(std::move(tg)))->value(0, 0);
}

void FusionNet::backward() {
    if (!pending_loss_)
        throw StateError("backward called before forward recorded a loss");
    lsc::backward(pending_loss_);
    pending_loss_.reset();
}

void FusionNet::zero_grad() {
    for (Param& p : params_) p.tensor->zero_grad();
}

void adamw_step(std::vector<Param>& params, AdamState& state, double lr,
                const TrainConfig& cfg) {
    if (state.m.empty()) {
        state.m.reserve(params.size());
        state.v.reserve(params.size());
        for (const Param& p : params) {
            state.m.push_back(Eigen::MatrixXd::Zero(p.tensor->value.rows(),
                                                    p.tensor->value.cols()));
            state.v.push_back(Eigen::MatrixXd::Zero(p.tensor->value.rows(),
                                                    p.tensor->value.cols()));
        }
        state.t = 0;
    }
    if (state.m.size() != params.size())
        throw ShapeError("optimizer state does not match the parameter list");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Eigen::MatrixXd& w = params[i].tensor->value;
        const Eigen::MatrixXd& g = params[i].tensor->grad;
        if (!g.allFinite())
            throw OptimizerError("non-finite gradient in parameter '" + params[i].name + "'");
        w *= (1.0 - lr * cfg.weight_decay);
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        const Eigen::MatrixXd mhat = state.m[i] / bc1;
        const Eigen::MatrixXd vhat = state.v[i] / bc2;
        w -= lr * (mhat.array() / (vhat.array().sqrt() + cfg.adam_eps)).matrix();
    }
}

std::vector<double> FusionNet::predict(const PatchStack& stack,
                                       const std::vector<std::size_t>& indices,
                                       bool use_tta) const {
    if (use_tta) return tta_predict(*this, stack, indices);
    auto* self = const_cast<FusionNet*>(this);  // eval forward does not mutate state
    Tensor logits = self->forward(stack, indices, false);
    std::vector<double> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i)
        out[i] = sigmoid(logits->value(static_cast<Eigen::Index>(i), 0));
    return out;
}

Eigen::RowVectorXd FusionNet::encoder_features(const PatchStack& stack, std::size_t sample,
                                               std::size_t encoder) const {
    if (encoder >= config_.encoders.size())
        throw PreconditionError("encoder index out of range");
    auto* self = const_cast<FusionNet*>(this);
    // run the full eval forward on a single-sample batch and read the fused
    // features through a fresh sub-graph: rebuild only the requested encoder
    const EncoderConfig& ec = config_.encoders[encoder];
    const auto& channels = ChannelLayout::group(ec.group);
    const std::string p = "enc" + std::to_string(encoder) + ".";
    Tensor x = make_constant(
        extract_tokens(stack, sample, channels, ec, config_.resize_factor, FlipSpec{}));
    auto P = [self](const std::string& name) -> Tensor { return self->parameter(name).tensor; };
    Tensor h = add(add_rowvec(matmul(x, P(p + "embed_w")), P(p + "embed_b")), P(p + "pos"));
    const int dh = ec.embed_dim / ec.heads;
    for (int l = 0; l < ec.depth; ++l) {
        const std::string b = p + "blk" + std::to_string(l) + ".";
        Tensor a_in = layernorm_rows(h, P(b + "ln1_g"), P(b + "ln1_b"), config_.ln_eps);
        Tensor q = add_rowvec(matmul(a_in, P(b + "wq")), P(b + "bq"));
        Tensor k = add_rowvec(matmul(a_in, P(b + "wk")), P(b + "bk"));
        Tensor v = add_rowvec(matmul(a_in, P(b + "wv")), P(b + "bv"));
        std::vector<Tensor> head_outs;
        for (int hd = 0; hd < ec.heads; ++hd) {
            const auto off = static_cast<std::size_t>(hd * dh);
            Tensor qh = slice_cols(q, off, static_cast<std::size_t>(dh));
            Tensor kh = slice_cols(k, off, static_cast<std::size_t>(dh));
            Tensor vh = slice_cols(v, off, static_cast<std::size_t>(dh));
            Tensor att = softmax_rows(
                scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))));
            head_outs.push_back(matmul(att, vh));
        }
        h = add(h, add_rowvec(matmul(concat_cols(head_outs), P(b + "wo")), P(b + "bo")));
        Tensor m_in = layernorm_rows(h, P(b + "ln2_g"), P(b + "ln2_b"), config_.ln_eps);
        Tensor m = gelu(add_rowvec(matmul(m_in, P(b + "mlp_w1")), P(b + "mlp_b1")));
        h = add(h, add_rowvec(matmul(m, P(b + "mlp_w2")), P(b + "mlp_b2")));
    }
    Tensor feat = add_rowvec(matmul(mean_rows(h), P(p + "proj_w")), P(p + "proj_b"));
    return feat->value.row(0);
}

std::vector<double> tta_predict(const FusionNet& net, const PatchStack& stack,
                                const std::vector<std::size_t>& indices) {
    auto* self = const_cast<FusionNet*>(&net);
    const std::array<FlipSpec, 4> group = {FlipSpec{false, false, false},
                                           FlipSpec{true, false, false},
                                           FlipSpec{false, true, false},
                                           FlipSpec{true, true, false}};
    std::vector<double> out(indices.size(), 0.0);
    for (const FlipSpec& f : group) {
        std::vector<FlipSpec> flips(indices.size(), f);
        Tensor logits = self->forward(stack, indices, false, nullptr, &flips);
        for (std::size_t i = 0; i < indices.size(); ++i)
            out[i] += sigmoid(logits->value(static_cast<Eigen::Index>(i), 0));
    }
    for (double& v : out) v /= 4.0;
    return out;
}

void FusionNet::round_params_f4() {
    for (Param& p : params_)
        p.tensor->value = p.tensor->value.unaryExpr(
            [](double v) { return static_cast<double>(static_cast<float>(v)); });
    bn_rmean_ = bn_rmean_.unaryExpr(
        [](double v) { return static_cast<double>(static_cast<float>(v)); });
    bn_rvar_ = bn_rvar_.unaryExpr(
        [](double v) { return static_cast<double>(static_cast<float>(v)); });
}

// ---------------------------------------------------------------------------
// persistence: flat little-endian float32 blob + JSON manifest

namespace {

void append_f4(std::vector<float>& blob, const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            blob.push_back(static_cast<float>(m(r, c)));
}

Eigen::MatrixXd read_f4(const std::vector<float>& blob, std::size_t offset, Eigen::Index rows,
                        Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    std::size_t at = offset;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = static_cast<double>(blob[at++]);
    return m;
}

}  // namespace

void FusionNet::save(const std::string& path_prefix, const ScalerParams* scaler) const {
    std::vector<float> blob;
    json tensors = json::array();
    auto record = [&blob, &tensors](const std::string& name, const Eigen::MatrixXd& m) {
        tensors.push_back(json{{"name", name},
                               {"rows", m.rows()},
                               {"cols", m.cols()},
                               {"offset", blob.size() * sizeof(float)}});
        append_f4(blob, m);
    };
    for (const Param& p : params_) record(p.name, p.tensor->value);
    record("head.bn_running_mean", bn_rmean_);
    record("head.bn_running_var", bn_rvar_);

    json manifest{{"format", "lsc-fusion/1"},
                  {"config", fusion_config_to_json(config_)},
                  {"blob", path_prefix.substr(path_prefix.find_last_of('/') + 1) + ".bin"},
                  {"tensors", std::move(tensors)}};
    if (scaler) {
        manifest["scaler"] = json{{"mode", to_string(scaler->mode)},
                                  {"center", scaler->center},
                                  {"scale_hi", scaler->scale_hi},
                                  {"fitted_on", scaler->fitted_on}};
    }

    const std::string bin_path = path_prefix + ".bin";
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw IoError("cannot open '" + bin_path + "' for writing");
    bin.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!bin) throw IoError("failed writing weight blob to '" + bin_path + "'");
    bin.close();

    const std::string json_path = path_prefix + ".json";
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + json_path + "' for writing");
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("failed writing manifest to '" + json_path + "'");
}

FusionNet FusionNet::load(const std::string& path_prefix, ScalerParams* scaler) {
    const std::string json_path = path_prefix + ".json";
    std::ifstream in(json_path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest '" + json_path + "'");
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
    }
    try {
        if (manifest.at("format").get<std::string>() != "lsc-fusion/1")
            throw FormatError("unsupported fusion model format tag");
        FusionNet net(fusion_config_from_json(manifest.at("config")));

        const std::string bin_path = path_prefix + ".bin";
        std::ifstream bin(bin_path, std::ios::binary);
        if (!bin) throw IoError("cannot open weight blob '" + bin_path + "'");
        bin.seekg(0, std::ios::end);
        const auto bytes = static_cast<std::size_t>(bin.tellg());
        bin.seekg(0);
        if (bytes % sizeof(float) != 0)
            throw FormatError("weight blob size is not a multiple of 4 bytes");
        std::vector<float> blob(bytes / sizeof(float));
        bin.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(bytes));
        if (!bin) throw IoError("failed reading weight blob '" + bin_path + "'");

        for (const json& jt : manifest.at("tensors")) {
            const auto name = jt.at("name").get<std::string>();
            const auto rows = jt.at("rows").get<Eigen::Index>();
            const auto cols = jt.at("cols").get<Eigen::Index>();
            const auto offset = jt.at("offset").get<std::size_t>();
            if (offset % sizeof(float) != 0 ||
                offset / sizeof(float) + static_cast<std::size_t>(rows * cols) > blob.size())
                throw FormatError("tensor '" + name + "' exceeds the weight blob");
            Eigen::MatrixXd m = read_f4(blob, offset / sizeof(float), rows, cols);
            if (name == "head.bn_running_mean") {
                net.bn_rmean_ = m.row(0);
            } else if (name == "head.bn_running_var") {
                net.bn_rvar_ = m.row(0);
            } else {
                Param& p = net.parameter(name);
                if (p.tensor->value.rows() != rows || p.tensor->value.cols() != cols)
                    throw FormatError("tensor '" + name + "' has shape " + std::to_string(rows) +
                                      "x" + std::to_string(cols) + ", expected " +
                                      std::to_string(p.tensor->value.rows()) + "x" +
                                      std::to_string(p.tensor->value.cols()));
                p.tensor->value = std::move(m);
            }
        }
        if (scaler && manifest.contains("scaler")) {
            const json& js = manifest.at("scaler");
            scaler->mode = scaler_mode_from_string(js.at("mode").get<std::string>());
            scaler->center = js.at("center").get<std::vector<double>>();
            scaler->scale_hi = js.at("scale_hi").get<std::vector<double>>();
            scaler->fitted_on = js.at("fitted_on").get<std::string>();
        }
        return net;
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest is missing required fields: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// cross-validated training

NnCvResult train_nn(const PatchStack& stack, const std::vector<int>& labels,
                    const std::vector<int>& fold_of, int k, const FusionConfig& fusion_config,
                    const TrainConfig& train_config) {
    fusion_config.validate();
    train_config.validate();
    const std::size_t n = stack.n;
    if (labels.size() != n || fold_of.size() != n)
        throw ShapeError("labels and fold assignment must match the stack size");
    if (k < 2) throw PreconditionError("need k >= 2 folds, got " + std::to_string(k));
    for (std::size_t i = 0; i < n; ++i)
        if (fold_of[i] < 0 || fold_of[i] >= k)
            throw PreconditionError("fold id " + std::to_string(fold_of[i]) + " at sample " +
                                    std::to_string(i) + " outside [0, " + std::to_string(k) + ")");

    NnCvResult result;
    result.oof.assign(n, std::numeric_limits<double>::quiet_NaN());
    result.per_fold_auc.assign(static_cast<std::size_t>(k),
                               std::numeric_limits<double>::quiet_NaN());
    Rng base_rng(train_config.seed);

    for (int f = 0; f < k; ++f) {
        std::vector<std::size_t> train_idx, val_idx;
        for (std::size_t i = 0; i < n; ++i)
            (fold_of[i] == f ? val_idx : train_idx).push_back(i);
        if (val_idx.empty()) continue;

        int pos = 0, neg = 0;
        for (std::size_t i : train_idx) (labels[i] == 1 ? pos : neg)++;
        if (pos == 0 || neg == 0)
            throw TrainingError("fold " + std::to_string(f) +
                                ": training portion contains a single class");

        FusionConfig fc = fusion_config;
        fc.seed = fusion_config.seed + static_cast<std::uint64_t>(f) + 1;
        FusionNet net(fc);
        AdamState state;
        Rng rng = base_rng.fork(static_cast<std::uint64_t>(f) + 1);

        for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
            const double lr = cosine_lr(epoch, train_config.epochs, train_config.lr_max,
                                        train_config.lr_min);
            std::vector<std::size_t> order = train_idx;
            rng.shuffle(order);

            const std::size_t bs = static_cast<std::size_t>(train_config.batch_size);
            std::size_t at = 0;
            while (at < order.size()) {
                std::size_t take = std::min(bs, order.size() - at);
                // avoid a trailing single-sample batch (batch norm needs >= 2)
                if (order.size() - at - take == 1) take += 1;
                std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(at),
                                               order.begin() +
                                                   static_cast<std::ptrdiff_t>(at + take));
                at += take;

                std::vector<int> batch_labels(batch.size());
                std::vector<FlipSpec> flips(batch.size());
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    batch_labels[i] = labels[batch[i]];
                    flips[i] = draw_augment(train_config, rng);
                }
                net.zero_grad();
                net.forward_loss(stack, batch, batch_labels, rng, &flips);
                net.backward();
                adamw_step(net.parameters(), state, lr, train_config);
            }
        }

        net.round_params_f4();
        std::vector<double> preds = net.predict(stack, val_idx, train_config.tta);
        std::vector<int> val_labels(val_idx.size());
        for (std::size_t i = 0; i < val_idx.size(); ++i) {
            result.oof[val_idx[i]] = preds[i];
            val_labels[i] = labels[val_idx[i]];
        }
        const bool has_both = std::count(val_labels.begin(), val_labels.end(), 1) > 0 &&
                              std::count(val_labels.begin(), val_labels.end(), 0) > 0;
        if (has_both)
            result.per_fold_auc[static_cast<std::size_t>(f)] =
                roc_auc(val_labels, preds).auc;
        result.fold_nets.push_back(std::move(net));
    }

    for (std::size_t i = 0; i < n; ++i)
        if (std::isnan(result.oof[i]))
            throw InternalError("OOF assembly left sample " + std::to_string(i) + " unfilled");
    return result;
}

}  // namespace lsc
