#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "texstat/stet.hpp"
#include "texstat/stft.hpp"
#include "texstat/tensor.hpp"

// U-shaped encoder-decoder for single-lesion segmentation: double-conv
// blocks with 2x2 max-pool downsampling, bilinear-upsample decoder with
// skip concatenation, the fusion transformer at the bottleneck, the enhance
// transformer joined into the decoder one scale above it, and a final 1x1
// head producing one logit channel.

namespace texstat {

struct ModelConfig {
    std::int64_t input_h = 64;
    std::int64_t input_w = 64;
    std::int64_t base_channels = 8;
    std::int64_t depth = 3;  // number of 2x downsamplings
    std::int64_t n_levels_stft = 16;
    std::int64_t n_levels_stet = 8;
    std::int64_t heads = 2;
    std::int64_t window = 4;
    bool enable_stft = true;
    bool enable_stet = true;
    bool enable_ca = true;
    bool enable_gating = true;
    bool excess_kurtosis = false;
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError

    // Consumes recognized keys from the map; unknown keys are left behind
    // for the caller to reject or pass on.
    void apply_kv(std::map<std::string, std::string>& kv);
};

std::string model_config_to_text(const ModelConfig& c);
// Parses a complete config dump; unknown keys are an error here.
ModelConfig model_config_from_text(const std::string& text);

template <typename T>
struct ConvBlock {
    Tensor<T> w1, b1, w2, b2;  // two 3x3 conv + relu stages
};

template <typename T>
class Model {
  public:
    ModelConfig config;

    std::vector<ConvBlock<T>> enc;  // enc[i] at scale i (0 = full resolution)
    ConvBlock<T> bottleneck;
    std::optional<StftParams<T>> stft;
    std::optional<StetParams<T>> stet;
    Tensor<T> stet_fuse_w, stet_fuse_b;  // 3x3 conv joining decoder and enhance paths
    std::vector<ConvBlock<T>> dec;       // dec[i] at scale i
    Tensor<T> head_w, head_b;            // 1x1 conv to one logit channel

    // Every learnable tensor in deterministic registration order; the
    // checkpoint format and the optimizer iterate this.
    std::vector<std::pair<std::string, Tensor<T>>> params;

    // [3 x H x W] image in [0,1] -> [1 x H x W] logits.
    Tensor<T> forward(const Tensor<T>& image) const;
};

template <typename T>
Model<T> build_model(const ModelConfig& config);

template <typename T>
std::int64_t parameter_count(const Model<T>& model);

template <typename T>
std::vector<std::string> parameter_names(const Model<T>& model);

// Checkpoint: version byte, embedded config text, plain-text manifest
// (name dtype offset count rank dims...), then raw little-endian IEEE-754
// parameter data in manifest order.
template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model);

template <typename T>
Model<T> load_checkpoint(const std::string& path);

}  // namespace texstat
