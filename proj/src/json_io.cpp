#include "lsc/json_io.hpp"

#include "lsc/cv.hpp"

namespace lsc {

using nlohmann::json;

json gbm_config_to_json(const GbmConfig& c) {
    return json{{"learning_rate", c.learning_rate},
                {"n_rounds", c.n_rounds},
                {"num_leaves", c.num_leaves},
                {"max_depth", c.max_depth},
                {"subsample", c.subsample},
                {"colsample", c.colsample},
                {"scale_pos_weight", c.scale_pos_weight},
                {"l2_lambda", c.l2_lambda},
                {"min_samples_leaf", c.min_samples_leaf},
                {"n_bins", c.n_bins},
                {"seed", c.seed}};
}

GbmConfig gbm_config_from_json(const json& j) {
    GbmConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.n_rounds = j.at("n_rounds").get<int>();
    c.num_leaves = j.at("num_leaves").get<int>();
    c.max_depth = j.at("max_depth").get<int>();
    c.subsample = j.at("subsample").get<double>();
    c.colsample = j.at("colsample").get<double>();
    c.scale_pos_weight = j.at("scale_pos_weight").get<double>();
    c.l2_lambda = j.at("l2_lambda").get<double>();
    c.min_samples_leaf = j.at("min_samples_leaf").get<int>();
    c.n_bins = j.at("n_bins").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    // execution knob, not a model property; absent from persisted configs
    c.n_threads = j.value("n_threads", 1);
    return c;
}

json encoder_config_to_json(const EncoderConfig& e) {
    return json{{"group", e.group},
                {"image_size", e.image_size},
                {"token_patch", e.token_patch},
                {"embed_dim", e.embed_dim},
                {"depth", e.depth},
                {"heads", e.heads},
                {"mlp_ratio", e.mlp_ratio},
                {"out_features", e.out_features}};
}

EncoderConfig encoder_config_from_json(const json& j) {
    EncoderConfig e;
    e.group = j.at("group").get<std::string>();
    e.image_size = j.at("image_size").get<int>();
    e.token_patch = j.at("token_patch").get<int>();
    e.embed_dim = j.at("embed_dim").get<int>();
    e.depth = j.at("depth").get<int>();
    e.heads = j.at("heads").get<int>();
    e.mlp_ratio = j.at("mlp_ratio").get<int>();
    e.out_features = j.at("out_features").get<int>();
    return e;
}

json fusion_config_to_json(const FusionConfig& c) {
    json encs = json::array();
    for (const EncoderConfig& e : c.encoders) encs.push_back(encoder_config_to_json(e));
    return json{{"encoders", std::move(encs)},
                {"head_width", c.head_width},
                {"dropout_rate", c.dropout_rate},
                {"ln_eps", c.ln_eps},
                {"bn_eps", c.bn_eps},
                {"bn_momentum", c.bn_momentum},
                {"resize_factor", c.resize_factor},
                {"seed", c.seed}};
}

FusionConfig fusion_config_from_json(const json& j) {
    FusionConfig c;
    for (const json& je : j.at("encoders")) c.encoders.push_back(encoder_config_from_json(je));
    c.head_width = j.at("head_width").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.ln_eps = j.at("ln_eps").get<double>();
    c.bn_eps = j.at("bn_eps").get<double>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    c.resize_factor = j.at("resize_factor").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

json train_config_to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lr_max", c.lr_max},
                {"lr_min", c.lr_min},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"adam_eps", c.adam_eps},
                {"weight_decay", c.weight_decay},
                {"p_hflip", c.p_hflip},
                {"p_vflip", c.p_vflip},
                {"p_rot90", c.p_rot90},
                {"tta", c.tta},
                {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr_max = j.at("lr_max").get<double>();
    c.lr_min = j.at("lr_min").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.p_hflip = j.at("p_hflip").get<double>();
    c.p_vflip = j.at("p_vflip").get<double>();
    c.p_rot90 = j.at("p_rot90").get<double>();
    c.tta = j.at("tta").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

json model_spec_to_json(const ModelSpec& s) {
    json j{{"name", s.name}, {"kind", s.kind}};
    if (s.kind == "gbm") {
        j["gbm"] = gbm_config_to_json(s.gbm);
        j["use_indices"] = s.use_indices;
        j["scaler"] = to_string(s.scaler);
        j["drop_stats"] = s.drop_stats;
        j["drop_channels"] = s.drop_channels;
    } else {
        j["fusion"] = fusion_config_to_json(s.fusion);
        j["train"] = train_config_to_json(s.train);
        j["scaler"] = to_string(s.scaler);
    }
    return j;
}

ModelSpec model_spec_from_json(const json& j) {
    ModelSpec s;
    s.name = j.at("name").get<std::string>();
    s.kind = j.at("kind").get<std::string>();
    if (s.kind == "gbm") {
        s.gbm = gbm_config_from_json(j.at("gbm"));
        s.use_indices = j.at("use_indices").get<bool>();
        s.scaler = scaler_mode_from_string(j.at("scaler").get<std::string>());
        s.drop_stats = j.at("drop_stats").get<std::vector<std::string>>();
        s.drop_channels = j.at("drop_channels").get<std::vector<std::string>>();
    } else {
        s.fusion = fusion_config_from_json(j.at("fusion"));
        s.train = train_config_from_json(j.at("train"));
        s.scaler = scaler_mode_from_string(j.at("scaler").get<std::string>());
    }
    return s;
}

}  // namespace lsc
