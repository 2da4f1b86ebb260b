#ifndef LSC_JSON_IO_HPP
#define LSC_JSON_IO_HPP

#include "json.hpp"
#include "lsc/fusion.hpp"
#include "lsc/gbm.hpp"

namespace lsc {

struct ModelSpec;  // cv.hpp

nlohmann::json gbm_config_to_json(const GbmConfig& c);
GbmConfig gbm_config_from_json(const nlohmann::json& j);

nlohmann::json encoder_config_to_json(const EncoderConfig& e);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

nlohmann::json fusion_config_to_json(const FusionConfig& c);
FusionConfig fusion_config_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json model_spec_to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const nlohmann::json& j);

}  // namespace lsc

#endif
