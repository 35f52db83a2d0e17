#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "protoshot/tensor.hpp"

namespace protoshot {

/// The two embedding families: a small fully trainable conv net, and a frozen
/// backbone represented by precomputed features followed by one trainable
/// linear layer.
enum class Archetype { ConvNet, FrozenEmbed };

std::string to_string(Archetype archetype);
/// Accepts "conv-net" or "frozen-embed". Throws ConfigError otherwise.
Archetype parse_archetype(std::string_view name);

struct EncoderConfig {
  Archetype archetype = Archetype::ConvNet;
  int input_channels = 1;
  int input_size = 64;
  int embed_dim = 64;
  int conv_blocks = 4;
  int channels_per_block = 32;
  /// Leading conv blocks whose parameters are excluded from training.
  int frozen_blocks = 0;
  /// Feature length of the frozen-embed archetype.
  int frozen_dim = 512;

  /// Throws ConfigError naming the violated field.
  void validate() const;

  /// Per-sample input shape: [C,S,S] for conv-net, [D_f] for frozen-embed.
  Shape input_shape() const;

  /// Frozen-embed config whose output dimension defaults to the class count.
  static EncoderConfig frozen_embed(int feature_dim, int classes);

  bool operator==(const EncoderConfig&) const = default;
};

struct Param {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

/// Ordered, named parameter tensors. Trainable entries require gradients;
/// frozen ones do not and are skipped by the optimizer.
class ParamSet {
 public:
  void add(std::string name, Tensor tensor, bool trainable);

  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::span<const Param> entries() const { return params_; }
  std::span<Param> entries() { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t value_count() const;

  void zero_grad();
  /// Deep copy with fresh leaves and the same trainable flags.
  ParamSet clone() const;
  /// Deep copy in which no entry requires gradients.
  ParamSet frozen_copy() const;

 private:
  std::vector<Param> params_;
};

/// Deterministic in seed. Weights ~ U(-a, a) with a = sqrt(6 / (fan_in + fan_out));
/// biases are zero.
ParamSet init_params(const EncoderConfig& config, std::uint64_t seed);

/// Config plus parameters: the embedding function.
struct Encoder {
  EncoderConfig config;
  ParamSet params;

  static Encoder create(const EncoderConfig& config, std::uint64_t seed);

  /// batch [B, ...input_shape] -> [B, H]. For conv-net, last_conv (when given)
  /// receives the post-ReLU activations of the final convolution.
  Tensor embed(const Tensor& batch, Tensor* last_conv = nullptr) const;
};

/// image [C,S,S] -> [H]. Repeats conv3x3(pad 1) -> relu -> maxpool2 per block,
/// flattens, then applies the final linear layer.
Tensor encode_convnet(const Tensor& image, const ParamSet& params, const EncoderConfig& config);

/// feature [D_f] -> [H] through the trainable linear layer. The feature itself
/// never receives a gradient.
Tensor encode_frozen(const Tensor& feature, const ParamSet& params, const EncoderConfig& config);

/// Batched forms of the two encoders; input [B, ...input_shape] -> [B, H].
Tensor encode_convnet_batch(const Tensor& batch, const ParamSet& params,
                            const EncoderConfig& config, Tensor* last_conv = nullptr);
Tensor encode_frozen_batch(const Tensor& batch, const ParamSet& params,
                           const EncoderConfig& config);

}  // namespace protoshot
