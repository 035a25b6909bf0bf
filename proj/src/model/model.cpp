#include "subseg/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace subseg::model {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv3d conv3(int in, int out) {
    return torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 3).padding(1).bias(false));
}

std::int64_t residual_block_params(int in, int width) {
    std::int64_t n = 27LL * in * width + 27LL * width * width + 4LL * width;
    if (in != width) n += std::int64_t{in} * width;
    return n;
}

std::int64_t numel_sum(torch::nn::Module& m) {
    std::int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

}  // namespace

ModelConfig ModelConfig::reduced() {
    ModelConfig cfg;
    cfg.base_width = 4;
    cfg.norm_groups = 4;
    cfg.token_embed_dim = 64;
    cfg.transformer_layers = 2;
    cfg.transformer_heads = 4;
    cfg.mlp_dim = 256;
    return cfg;
}

int ModelConfig::width(int stage) const {
    int w = base_width;
    for (int s = 0; s < stage; ++s) w *= width_multiplier;
    return w;
}

void ModelConfig::validate() const {
    const auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
    if (in_channels < 1) fail("in_channels must be >= 1");
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (encoder_stages < 1) fail("encoder_stages must be >= 1");
    if (base_width < 1 || width_multiplier < 1) fail("widths must be positive");
    if (norm_groups < 1 || base_width % norm_groups != 0) fail("base_width must be divisible by norm_groups");
    if (patch_size < 1 || patch_size % (1 << encoder_stages) != 0) fail("patch side must be divisible by 2^encoder_stages");
    if (token_embed_dim < 1 || transformer_heads < 1 || token_embed_dim % transformer_heads != 0) {
        fail("token_embed_dim must be divisible by transformer_heads");
    }
    if (transformer_layers < 0) fail("transformer_layers must be >= 0");
    if (mlp_dim < 1) fail("mlp_dim must be >= 1");
    if (head_kernel < 1 || head_kernel % 2 == 0) fail("head_kernel must be odd");
}

std::string ModelConfig::to_json() const {
    nlohmann::ordered_json j;
    j["in_channels"] = in_channels;
    j["num_classes"] = num_classes;
    j["encoder_stages"] = encoder_stages;
    j["base_width"] = base_width;
    j["width_multiplier"] = width_multiplier;
    j["norm_groups"] = norm_groups;
    j["token_embed_dim"] = token_embed_dim;
    j["transformer_layers"] = transformer_layers;
    j["transformer_heads"] = transformer_heads;
    j["mlp_dim"] = mlp_dim;
    j["patch_size"] = patch_size;
    j["head_kernel"] = head_kernel;
    j["skip_fusion"] = skip_fusion == SkipFusion::Concat ? "concat" : "sum";
    j["token_count"] = token_count();
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    ModelConfig cfg;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
        cfg.in_channels = j.value("in_channels", cfg.in_channels);
        cfg.num_classes = j.value("num_classes", cfg.num_classes);
        cfg.encoder_stages = j.value("encoder_stages", cfg.encoder_stages);
        cfg.base_width = j.value("base_width", cfg.base_width);
        cfg.width_multiplier = j.value("width_multiplier", cfg.width_multiplier);
        cfg.norm_groups = j.value("norm_groups", cfg.norm_groups);
        cfg.token_embed_dim = j.value("token_embed_dim", cfg.token_embed_dim);
        cfg.transformer_layers = j.value("transformer_layers", cfg.transformer_layers);
        cfg.transformer_heads = j.value("transformer_heads", cfg.transformer_heads);
        cfg.mlp_dim = j.value("mlp_dim", 4 * cfg.token_embed_dim);
        cfg.patch_size = j.value("patch_size", cfg.patch_size);
        cfg.head_kernel = j.value("head_kernel", cfg.head_kernel);
        const std::string fusion = j.value("skip_fusion", std::string("concat"));
        if (fusion != "concat" && fusion != "sum") throw Error(ErrorCode::InvalidConfig, "skip_fusion must be concat or sum");
        cfg.skip_fusion = fusion == "sum" ? SkipFusion::Sum : SkipFusion::Concat;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("model config: ") + e.what());
    }
    cfg.validate();
    if (j.contains("token_count") && j["token_count"].get<int>() != cfg.token_count()) {
        throw Error(ErrorCode::InvalidConfig, "token_count must equal the bottleneck position count " +
                                                  std::to_string(cfg.token_count()));
    }
    return cfg;
}

ResidualBlockImpl::ResidualBlockImpl(int in_channels, int width, int groups) : in_channels_(in_channels), width_(width) {
    if (in_channels < 1 || width < groups || width % groups != 0) {
        throw Error(ErrorCode::ChannelMismatch, "residual block " + std::to_string(in_channels) + " -> " +
                                                    std::to_string(width) + " with " + std::to_string(groups) + " groups");
    }
    conv1 = register_module("conv1", conv3(in_channels, width));
    norm1 = register_module("norm1", torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, width)));
    conv2 = register_module("conv2", conv3(width, width));
    norm2 = register_module("norm2", torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, width)));
    if (in_channels != width) {
        projection = register_module(
            "projection", torch::nn::Conv3d(torch::nn::Conv3dOptions(in_channels, width, 1).bias(false)));
    }
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    if (x.dim() != 5 || x.size(1) != in_channels_) {
        throw Error(ErrorCode::ChannelMismatch, "residual block expects " + std::to_string(in_channels_) + " channels");
    }
    auto h = torch::relu(norm1(conv1(x)));
    h = norm2(conv2(h));
    return torch::relu(h + (projection.is_empty() ? x : projection(x)));
}

EncoderImpl::EncoderImpl(const ModelConfig& cfg) {
    stages = register_module("stages", torch::nn::ModuleList());
    for (int s = 0; s < cfg.encoder_stages; ++s) {
        stages->push_back(ResidualBlock(s == 0 ? cfg.in_channels : cfg.width(s - 1), cfg.width(s), cfg.norm_groups));
    }
}

Encoded EncoderImpl::forward(const torch::Tensor& patch) {
    Encoded out;
    auto x = patch;
    for (const auto& stage : *stages) {
        x = stage->as<ResidualBlock>()->forward(x);
        out.skips.push_back(x);
        x = F::max_pool3d(x, F::MaxPool3dFuncOptions(2));
    }
    out.bottleneck = x;
    return out;
}

TokenizerImpl::TokenizerImpl(const ModelConfig& cfg) {
    projection = register_module("projection", torch::nn::Linear(cfg.width(cfg.encoder_stages - 1), cfg.token_embed_dim));
    position_embedding =
        register_parameter("position_embedding", torch::zeros({1, cfg.token_count(), cfg.token_embed_dim}));
}

torch::Tensor TokenizerImpl::forward(const torch::Tensor& bottleneck) {
    auto flat = bottleneck.flatten(2).transpose(1, 2);
    if (flat.size(1) != position_embedding.size(1)) {
        throw Error(ErrorCode::ShapeMismatch, "bottleneck has " + std::to_string(flat.size(1)) + " positions, expected " +
                                                  std::to_string(position_embedding.size(1)));
    }
    return projection(flat) + position_embedding;
}

TransformerLayerImpl::TransformerLayerImpl(int embed_dim, int heads, int mlp_dim)
    : heads_(heads), head_dim_(embed_dim / heads) {
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({embed_dim})));
    qkv = register_module("qkv", torch::nn::Linear(embed_dim, 3 * embed_dim));
    out = register_module("out", torch::nn::Linear(embed_dim, embed_dim));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({embed_dim})));
    fc1 = register_module("fc1", torch::nn::Linear(embed_dim, mlp_dim));
    fc2 = register_module("fc2", torch::nn::Linear(mlp_dim, embed_dim));
}

torch::Tensor TransformerLayerImpl::attend(const torch::Tensor& normed, torch::Tensor* weights) {
    const auto b = normed.size(0), t = normed.size(1);
    auto parts = qkv(normed).reshape({b, t, 3, heads_, head_dim_}).permute({2, 0, 3, 1, 4});
    auto q = parts[0], k = parts[1], v = parts[2];
    auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim_));
    auto attn = torch::softmax(scores, -1);
    if (weights) *weights = attn;
    auto mixed = torch::matmul(attn, v).transpose(1, 2).reshape({b, t, heads_ * head_dim_});
    return out(mixed);
}

torch::Tensor TransformerLayerImpl::forward(const torch::Tensor& x) {
    auto h = x + attend(norm1(x), nullptr);
    return h + fc2(F::gelu(fc1(norm2(h))));
}

torch::Tensor TransformerLayerImpl::attention_weights(const torch::Tensor& x) {
    torch::Tensor w;
    attend(norm1(x), &w);
    return w;
}

TransformerImpl::TransformerImpl(const ModelConfig& cfg) {
    layers = register_module("layers", torch::nn::ModuleList());
    for (int l = 0; l < cfg.transformer_layers; ++l) {
        layers->push_back(TransformerLayer(cfg.token_embed_dim, cfg.transformer_heads, cfg.mlp_dim));
    }
    final_norm = register_module("final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.token_embed_dim})));
}

torch::Tensor TransformerImpl::forward(const torch::Tensor& tokens) {
    auto x = tokens;
    for (const auto& layer : *layers) x = layer->as<TransformerLayer>()->forward(x);
    return final_norm(x);
}

DecoderImpl::DecoderImpl(const ModelConfig& cfg) : cfg_(cfg) {
    const int stages = cfg.encoder_stages;
    const int deepest = cfg.width(stages - 1);
    from_tokens = register_module(
        "from_tokens", torch::nn::Conv3d(torch::nn::Conv3dOptions(cfg.token_embed_dim, deepest, 1).bias(false)));
    from_tokens_norm = register_module("from_tokens_norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(cfg.norm_groups, deepest)));
    upsamplers = register_module("upsamplers", torch::nn::ModuleList());
    blocks = register_module("blocks", torch::nn::ModuleList());
    int channels = deepest;
    for (int level = stages - 1; level >= 0; --level) {
        const int w = cfg.width(level);
        upsamplers->push_back(torch::nn::ConvTranspose3d(torch::nn::ConvTranspose3dOptions(channels, w, 2).stride(2)));
        const int fused = cfg.skip_fusion == SkipFusion::Concat ? 2 * w : w;
        blocks->push_back(ResidualBlock(fused, w, cfg.norm_groups));
        channels = w;
    }
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& tokens, const std::vector<torch::Tensor>& skips) {
    const int stages = cfg_.encoder_stages;
    if (static_cast<int>(skips.size()) != stages) {
        throw Error(ErrorCode::SkipShapeMismatch, "expected " + std::to_string(stages) + " skips, got " + std::to_string(skips.size()));
    }
    const auto b = tokens.size(0);
    for (int level = 0; level < stages; ++level) {
        const auto& s = skips[static_cast<std::size_t>(level)];
        const int side = cfg_.patch_size >> level;
        if (s.dim() != 5 || s.size(0) != b || s.size(1) != cfg_.width(level) || s.size(2) != side || s.size(3) != side ||
            s.size(4) != side) {
            throw Error(ErrorCode::SkipShapeMismatch, "skip " + std::to_string(level) + " must be [" + std::to_string(b) + ", " +
                                                          std::to_string(cfg_.width(level)) + ", " + std::to_string(side) +
                                                          "^3]");
        }
    }
    const int side = cfg_.bottleneck_side();
    auto x = tokens.transpose(1, 2).reshape({b, cfg_.token_embed_dim, side, side, side});
    x = torch::relu(from_tokens_norm(from_tokens(x)));
    for (int step = 0; step < stages; ++step) {
        const int level = stages - 1 - step;
        x = upsamplers[static_cast<std::size_t>(step)]->as<torch::nn::ConvTranspose3d>()->forward(x);
        const auto& skip = skips[static_cast<std::size_t>(level)];
        x = cfg_.skip_fusion == SkipFusion::Concat ? torch::cat({x, skip}, 1) : x + skip;
        x = blocks[static_cast<std::size_t>(step)]->as<ResidualBlock>()->forward(x);
    }
    return x;
}

NetworkImpl::NetworkImpl(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    encoder = register_module("encoder", Encoder(cfg));
    tokenizer = register_module("tokenizer", Tokenizer(cfg));
    transformer = register_module("transformer", Transformer(cfg));
    decoder = register_module("decoder", Decoder(cfg));
    head = register_module("head", torch::nn::Conv3d(torch::nn::Conv3dOptions(cfg.base_width, cfg.num_classes, cfg.head_kernel)
                                                         .padding(cfg.head_kernel / 2)));
    for (auto& p : parameters()) {
        if (p.dim() == 5) p.set_data(p.contiguous(torch::MemoryFormat::ChannelsLast3d));
    }
}

Encoded NetworkImpl::encode(const torch::Tensor& patch) { return encoder(patch); }
torch::Tensor NetworkImpl::tokenize(const torch::Tensor& bottleneck) { return tokenizer(bottleneck); }
torch::Tensor NetworkImpl::transform(const torch::Tensor& tokens) { return transformer(tokens); }
torch::Tensor NetworkImpl::decode(const torch::Tensor& tokens, const std::vector<torch::Tensor>& skips) {
    return decoder(tokens, skips);
}

torch::Tensor NetworkImpl::logits(const torch::Tensor& patch) {
    const int p = cfg_.patch_size;
    if (patch.dim() != 5 || patch.size(1) != cfg_.in_channels || patch.size(2) != p || patch.size(3) != p || patch.size(4) != p) {
        throw Error(ErrorCode::ShapeMismatch, "network input must be [B, " + std::to_string(cfg_.in_channels) + ", " +
                                                  std::to_string(p) + "^3]");
    }
    auto enc = encode(patch.contiguous(torch::MemoryFormat::ChannelsLast3d));
    auto tokens = transform(tokenize(enc.bottleneck));
    return head(decode(tokens, enc.skips));
}

torch::Tensor NetworkImpl::forward(const torch::Tensor& patch) { return torch::softmax(logits(patch), 1); }

Network make_network(const ModelConfig& cfg, std::uint64_t seed) {
    torch::manual_seed(seed);
    return Network(cfg);
}

ParameterCounts count_parameters(const ModelConfig& cfg) {
    cfg.validate();
    ParameterCounts n;
    const int stages = cfg.encoder_stages;
    for (int s = 0; s < stages; ++s) n.encoder += residual_block_params(s == 0 ? cfg.in_channels : cfg.width(s - 1), cfg.width(s));
    const std::int64_t d = cfg.token_embed_dim, m = cfg.mlp_dim, deepest = cfg.width(stages - 1);
    n.tokenizer = deepest * d + d + std::int64_t{cfg.token_count()} * d;
    const std::int64_t layer = 2 * (2 * d) + (3 * d * d + 3 * d) + (d * d + d) + (d * m + m) + (m * d + d);
    n.transformer = cfg.transformer_layers * layer + 2 * d;
    n.decoder = d * deepest + 2 * deepest;
    std::int64_t channels = deepest;
    for (int level = stages - 1; level >= 0; --level) {
        const std::int64_t w = cfg.width(level);
        n.decoder += channels * w * 8 + w;
        n.decoder += residual_block_params(cfg.skip_fusion == SkipFusion::Concat ? static_cast<int>(2 * w) : static_cast<int>(w),
                                           static_cast<int>(w));
        channels = w;
    }
    const std::int64_t k = cfg.head_kernel;
    n.head = std::int64_t{cfg.base_width} * cfg.num_classes * k * k * k + cfg.num_classes;
    return n;
}

ParameterCounts count_parameters(NetworkImpl& net) {
    ParameterCounts n;
    n.encoder = numel_sum(*net.encoder);
    n.tokenizer = numel_sum(*net.tokenizer);
    n.transformer = numel_sum(*net.transformer);
    n.decoder = numel_sum(*net.decoder);
    n.head = numel_sum(*net.head);
    return n;
}

std::vector<std::pair<std::string, torch::Tensor>> named_parameters(NetworkImpl& net) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : net.named_parameters(true)) out.emplace_back(item.key(), item.value());
    return out;
}

torch::Tensor patch_to_tensor(const FloatGrid& patch) {
    const auto& d = patch.dims();
    return torch::from_blob(const_cast<float*>(patch.storage().data()), {1, 1, d[2], d[1], d[0]}, torch::kFloat32).clone();
}

NetworkPredictor::NetworkPredictor(Network net, torch::Device device) : net_(std::move(net)), device_(device) {
    net_->to(device_);
    net_->eval();
}

PatchProbabilities NetworkPredictor::predict(const FloatGrid& patch, const PatchLocation&) {
    const int side = net_->config().patch_size;
    if (patch.dims() != Index3{side, side, side}) {
        throw Error(ErrorCode::ShapeMismatch, "patch must be " + std::to_string(side) + "^3");
    }
    torch::NoGradGuard no_grad;
    auto probs = net_->forward(patch_to_tensor(patch).to(device_)).to(torch::kCPU).contiguous();
    PatchProbabilities out;
    out.classes = net_->config().num_classes;
    out.side = side;
    out.values.assign(probs.data_ptr<float>(), probs.data_ptr<float>() + probs.numel());
    return out;
}

}  // namespace subseg::model
