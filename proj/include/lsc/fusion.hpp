#ifndef LSC_FUSION_HPP
#define LSC_FUSION_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lsc/dataio.hpp"
#include "lsc/features.hpp"
#include "lsc/tensor.hpp"

namespace lsc {

struct EncoderConfig {
    std::string group;  // modality group: RGBN, SAR, SARdiff or Indices
    int image_size = 64;
    int token_patch = 8;
    int embed_dim = 64;
    int depth = 2;
    int heads = 4;
    int mlp_ratio = 2;
    int out_features = 256;

    void validate() const;
    int tokens_per_side(int resize_factor) const;
};

struct FusionConfig {
    std::vector<EncoderConfig> encoders;  // ordered modality assignment
    int head_width = 256;
    double dropout_rate = 0.3;
    double ln_eps = 1e-5;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
    int resize_factor = 1;  // optional integer-factor bilinear upscale of the tile
    std::uint64_t seed = 0;

    void validate() const;
    // named architectures: single (RGBN), combinedV2 (RGBN+SARdiff),
    // combinedV3 (RGBN+SARdiff+Indices), combinedV4 (all four groups)
    static FusionConfig arch(const std::string& name);
    int min_channels() const;  // smallest stack channel count that covers all groups
};

struct TrainConfig {
    int epochs = 20;
    int batch_size = 32;
    double lr_max = 1e-3;
    double lr_min = -1.0;  // negative means lr_max/100
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double p_hflip = 0.5;
    double p_vflip = 0.5;
    double p_rot90 = 0.5;
    bool tta = true;
    std::uint64_t seed = 0;

    void validate() const;
};

// Dihedral-subgroup sample transform; rot90 is applied first, then the flips.
struct FlipSpec {
    bool hflip = false;
    bool vflip = false;
    bool rot90 = false;
};

FlipSpec draw_augment(const TrainConfig& cfg, Rng& rng);

double cosine_lr(int epoch, int total_epochs, double lr_max, double lr_min = -1.0);

struct Param {
    std::string name;
    Tensor tensor;
};

struct AdamState {
    std::vector<Eigen::MatrixXd> m, v;
    long t = 0;
};

// Decoupled decay (w <- w - lr*wd*w) applied before the bias-corrected moment
// update, so a zero-gradient parameter shrinks by exactly (1 - lr*wd).
void adamw_step(std::vector<Param>& params, AdamState& state, double lr, const TrainConfig& cfg);

Tensor combined_loss(const Tensor& logits, const Tensor& targets);
double combined_loss_value(const std::vector<double>& logits, const std::vector<int>& labels);

class FusionNet {
  public:
    explicit FusionNet(FusionConfig config);

    // logits (B x 1); in training mode batch norm uses batch statistics
    // (batch >= 2) and dropout draws from rng
    Tensor forward(const PatchStack& stack, const std::vector<std::size_t>& indices,
                   bool training, Rng* rng = nullptr,
                   const std::vector<FlipSpec>* flips = nullptr,
                   std::vector<Eigen::MatrixXd>* attention_trace = nullptr);

    // builds the graph and keeps the loss for backward(); labels in {0,1}
    Tensor forward_loss(const PatchStack& stack, const std::vector<std::size_t>& indices,
                        const std::vector<int>& labels, Rng& rng,
                        const std::vector<FlipSpec>* flips = nullptr);
    double loss_value(const PatchStack& stack, const std::vector<std::size_t>& indices,
                      const std::vector<int>& labels);
    void backward();  // state error unless a forward_loss is pending
    void zero_grad();

    std::vector<double> predict(const PatchStack& stack, const std::vector<std::size_t>& indices,
                                bool use_tta) const;
    // eval-mode fused features of one encoder for one sample (routing checks)
    Eigen::RowVectorXd encoder_features(const PatchStack& stack, std::size_t sample,
                                        std::size_t encoder) const;

    const FusionConfig& config() const { return config_; }
    std::vector<Param>& parameters() { return params_; }
    const std::vector<Param>& parameters() const { return params_; }
    Param& parameter(const std::string& name);

    void round_params_f4();  // snap weights to their float32 representation

    const Eigen::RowVectorXd& bn_running_mean() const { return bn_rmean_; }
    const Eigen::RowVectorXd& bn_running_var() const { return bn_rvar_; }

    void save(const std::string& path_prefix, const ScalerParams* scaler = nullptr) const;
    static FusionNet load(const std::string& path_prefix, ScalerParams* scaler = nullptr);

  private:
    FusionConfig config_;
    std::vector<Param> params_;
    Eigen::RowVectorXd bn_rmean_, bn_rvar_;
    Tensor pending_loss_;
};

std::vector<double> tta_predict(const FusionNet& net, const PatchStack& stack,
                                const std::vector<std::size_t>& indices);

struct NnCvResult {
    std::vector<double> oof;            // aligned with the stack
    std::vector<double> per_fold_auc;   // indexed by fold id
    std::vector<FusionNet> fold_nets;
};

// fold_of[i] in [0,k): model for fold f trains on all samples with
// fold_of != f (with augmentation, AdamW + cosine schedule on the combined
// loss) and predicts the held-in fold, with TTA when configured
NnCvResult train_nn(const PatchStack& stack, const std::vector<int>& labels,
                    const std::vector<int>& fold_of, int k, const FusionConfig& fusion_config,
                    const TrainConfig& train_config);

}  // namespace lsc

#endif
