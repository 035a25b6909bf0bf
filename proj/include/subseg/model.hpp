#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "subseg/patch.hpp"

namespace subseg::model {

enum class SkipFusion { Concat, Sum };

/// Hyperparameters of the hybrid encoder / transformer / decoder network.
struct ModelConfig {
    int in_channels = 1;
    int num_classes = kNumClasses;
    int encoder_stages = 4;
    int base_width = 16;
    int width_multiplier = 2;
    int norm_groups = 8;
    int token_embed_dim = 512;
    int transformer_layers = 8;
    int transformer_heads = 16;
    int mlp_dim = 2048;
    int patch_size = kPatchSide;
    int head_kernel = 1;
    SkipFusion skip_fusion = SkipFusion::Concat;

    /// Desk-scale variant: base width 4, embed 64, 2 layers, 4 heads.
    static ModelConfig reduced();

    int width(int stage) const;
    int bottleneck_side() const { return patch_size >> encoder_stages; }
    /// Tokens tile the bottleneck grid: bottleneck_side^3 (216 for the defaults).
    int token_count() const { return bottleneck_side() * bottleneck_side() * bottleneck_side(); }

    /// Throws InvalidConfig when a structural invariant fails.
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
    bool operator==(const ModelConfig&) const = default;
};

/// Two conv(3^3) -> GroupNorm -> ReLU units; the skip (identity or 1^3 projection) joins before the last ReLU.
class ResidualBlockImpl : public torch::nn::Module {
public:
    ResidualBlockImpl(int in_channels, int width, int groups);
    torch::Tensor forward(const torch::Tensor& x);

    int in_channels() const { return in_channels_; }
    int width() const { return width_; }
    bool has_projection() const { return !projection.is_empty(); }

    torch::nn::Conv3d conv1{nullptr}, conv2{nullptr};
    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv3d projection{nullptr};

private:
    int in_channels_;
    int width_;
};
TORCH_MODULE(ResidualBlock);

struct Encoded {
    torch::Tensor bottleneck;
    /// Pre-pool features, finest first (sides 96, 48, 24, 12 for the defaults).
    std::vector<torch::Tensor> skips;
};

class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(const ModelConfig& cfg);
    Encoded forward(const torch::Tensor& patch);

    torch::nn::ModuleList stages{nullptr};
};
TORCH_MODULE(Encoder);

/// Linear projection of each bottleneck position plus a learned, zero-initialised position embedding.
class TokenizerImpl : public torch::nn::Module {
public:
    explicit TokenizerImpl(const ModelConfig& cfg);
    /// [B, C, s, s, s] -> [B, s^3, embed], positions in row-major order of the bottleneck grid.
    torch::Tensor forward(const torch::Tensor& bottleneck);

    torch::nn::Linear projection{nullptr};
    torch::Tensor position_embedding;
};
TORCH_MODULE(Tokenizer);

/// Pre-norm encoder layer: x + MHSA(LN(x)), then x + MLP(LN(x)).
class TransformerLayerImpl : public torch::nn::Module {
public:
    TransformerLayerImpl(int embed_dim, int heads, int mlp_dim);
    torch::Tensor forward(const torch::Tensor& x);
    /// Softmax attention weights of this layer for input x: [B, heads, T, T].
    torch::Tensor attention_weights(const torch::Tensor& x);

    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Linear qkv{nullptr}, out{nullptr}, fc1{nullptr}, fc2{nullptr};

private:
    torch::Tensor attend(const torch::Tensor& normed, torch::Tensor* weights);
    int heads_;
    int head_dim_;
};
TORCH_MODULE(TransformerLayer);

class TransformerImpl : public torch::nn::Module {
public:
    explicit TransformerImpl(const ModelConfig& cfg);
    torch::Tensor forward(const torch::Tensor& tokens);

    torch::nn::ModuleList layers{nullptr};
    torch::nn::LayerNorm final_norm{nullptr};
};
TORCH_MODULE(Transformer);

class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const ModelConfig& cfg);
    /// Tokens [B, T, embed] back to [B, base_width, 96, 96, 96]. Throws SkipShapeMismatch.
    torch::Tensor forward(const torch::Tensor& tokens, const std::vector<torch::Tensor>& skips);

    torch::nn::Conv3d from_tokens{nullptr};
    torch::nn::GroupNorm from_tokens_norm{nullptr};
    torch::nn::ModuleList upsamplers{nullptr};
    torch::nn::ModuleList blocks{nullptr};

private:
    ModelConfig cfg_;
};
TORCH_MODULE(Decoder);

class NetworkImpl : public torch::nn::Module {
public:
    explicit NetworkImpl(const ModelConfig& cfg);

    Encoded encode(const torch::Tensor& patch);
    torch::Tensor tokenize(const torch::Tensor& bottleneck);
    torch::Tensor transform(const torch::Tensor& tokens);
    torch::Tensor decode(const torch::Tensor& tokens, const std::vector<torch::Tensor>& skips);
    /// Pre-softmax class scores [B, classes, 96, 96, 96].
    torch::Tensor logits(const torch::Tensor& patch);
    /// Per-voxel class probabilities [B, classes, 96, 96, 96].
    torch::Tensor forward(const torch::Tensor& patch);

    const ModelConfig& config() const { return cfg_; }

    Encoder encoder{nullptr};
    Tokenizer tokenizer{nullptr};
    Transformer transformer{nullptr};
    Decoder decoder{nullptr};
    torch::nn::Conv3d head{nullptr};

private:
    ModelConfig cfg_;
};
TORCH_MODULE(Network);

/// Builds a network with weights drawn from torch's generator seeded with `seed`.
Network make_network(const ModelConfig& cfg, std::uint64_t seed);

struct ParameterCounts {
    std::int64_t encoder = 0;
    std::int64_t tokenizer = 0;
    std::int64_t transformer = 0;
    std::int64_t decoder = 0;
    std::int64_t head = 0;
    std::int64_t total() const { return encoder + tokenizer + transformer + decoder + head; }
};

/// Closed-form trainable parameter counts for a configuration.
ParameterCounts count_parameters(const ModelConfig& cfg);
/// Counts read off an instantiated network.
ParameterCounts count_parameters(NetworkImpl& net);

/// Ordered (name, tensor) list of every trainable parameter.
std::vector<std::pair<std::string, torch::Tensor>> named_parameters(NetworkImpl& net);

/// Converts a 96^3 patch grid to a [1, 1, 96, 96, 96] tensor (axis order k, j, i).
torch::Tensor patch_to_tensor(const FloatGrid& patch);

/// Runs the network in evaluation mode, one patch at a time, on `device`.
class NetworkPredictor : public PatchPredictor {
public:
    explicit NetworkPredictor(Network net, torch::Device device = torch::kCPU);
    PatchProbabilities predict(const FloatGrid& patch, const PatchLocation& where) override;

private:
    Network net_;
    torch::Device device_;
};

}  // namespace subseg::model
