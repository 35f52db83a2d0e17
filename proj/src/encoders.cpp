#include "protoshot/encoders.hpp"

#include <cmath>
#include <stdexcept>

#include "protoshot/errors.hpp"
#include "protoshot/random.hpp"

namespace protoshot {

std::string to_string(Archetype archetype) {
  return archetype == Archetype::ConvNet ? "conv-net" : "frozen-embed";
}

Archetype parse_archetype(std::string_view name) {
  if (name == "conv-net") return Archetype::ConvNet;
  if (name == "frozen-embed") return Archetype::FrozenEmbed;
  throw ConfigError("encoder: unknown archetype '" + std::string(name) +
                    "' (expected conv-net or frozen-embed)");
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("encoder." + what); };
  if (embed_dim < 1) fail("embed_dim must be >= 1");
  if (archetype == Archetype::FrozenEmbed) {
    if (frozen_dim < 1) fail("frozen_dim must be >= 1");
    return;
  }
  if (input_channels < 1) fail("input_channels must be >= 1");
  if (input_size < 1) fail("input_size must be >= 1");
  if (conv_blocks < 1) fail("conv_blocks must be >= 1");
  if (conv_blocks > 20) fail("conv_blocks is unreasonably large");
  if (channels_per_block < 1) fail("channels_per_block must be >= 1");
  if (frozen_blocks < 0 || frozen_blocks > conv_blocks) {
    fail("frozen_blocks must lie in [0, conv_blocks]");
  }
  if (input_size % (1 << conv_blocks) != 0) {
    fail("input_size " + std::to_string(input_size) + " is not divisible by 2^conv_blocks = " +
         std::to_string(1 << conv_blocks));
  }
}

Shape EncoderConfig::input_shape() const {
  if (archetype == Archetype::FrozenEmbed) return {static_cast<std::size_t>(frozen_dim)};
  const auto s = static_cast<std::size_t>(input_size);
  return {static_cast<std::size_t>(input_channels), s, s};
}

EncoderConfig EncoderConfig::frozen_embed(int feature_dim, int classes) {
  EncoderConfig config;
  config.archetype = Archetype::FrozenEmbed;
  config.frozen_dim = feature_dim;
  config.embed_dim = classes;
  return config;
}

// ---------------------------------------------------------------------------

void ParamSet::add(std::string name, Tensor tensor, bool trainable) {
  if (contains(name)) throw std::invalid_argument("ParamSet: duplicate entry '" + name + "'");
  if (!tensor.is_leaf()) throw std::invalid_argument("ParamSet: '" + name + "' is not a leaf");
  tensor.set_requires_grad(trainable);
  params_.push_back({std::move(name), std::move(tensor), trainable});
}

const Tensor& ParamSet::at(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw std::out_of_range("ParamSet: no entry named '" + std::string(name) + "'");
}

bool ParamSet::contains(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return true;
  }
  return false;
}

std::size_t ParamSet::value_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

ParamSet ParamSet::clone() const {
  ParamSet copy;
  for (const auto& p : params_) copy.add(p.name, p.tensor.detach(), p.trainable);
  return copy;
}

ParamSet ParamSet::frozen_copy() const {
  ParamSet copy;
  for (const auto& p : params_) {
    copy.params_.push_back({p.name, p.tensor.detach(), p.trainable});
  }
  return copy;
}

// ---------------------------------------------------------------------------

namespace {

Tensor uniform_tensor(Shape shape, std::size_t fan_in, std::size_t fan_out, RandomStream& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<float> values(shape_size(shape));
  for (float& v : values) v = static_cast<float>(rng.uniform(-a, a));
  return Tensor(std::move(shape), std::move(values));
}

std::size_t flattened_features(const EncoderConfig& config) {
  const auto side = static_cast<std::size_t>(config.input_size >> config.conv_blocks);
  return static_cast<std::size_t>(config.channels_per_block) * side * side;
}

std::string conv_name(int block, const char* what) {
  return "conv" + std::to_string(block) + "." + what;
}

}  // namespace

ParamSet init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  RandomStream rng(seed);
  ParamSet params;
  const auto h = static_cast<std::size_t>(config.embed_dim);
  if (config.archetype == Archetype::FrozenEmbed) {
    const auto d = static_cast<std::size_t>(config.frozen_dim);
    params.add("fc.weight", uniform_tensor({h, d}, d, h, rng), true);
    params.add("fc.bias", Tensor::zeros({h}), true);
    return params;
  }
  auto in_ch = static_cast<std::size_t>(config.input_channels);
  const auto out_ch = static_cast<std::size_t>(config.channels_per_block);
  for (int b = 0; b < config.conv_blocks; ++b) {
    const bool trainable = b >= config.frozen_blocks;
    params.add(conv_name(b, "weight"),
               uniform_tensor({out_ch, in_ch, 3, 3}, in_ch * 9, out_ch * 9, rng), trainable);
    params.add(conv_name(b, "bias"), Tensor::zeros({out_ch}), trainable);
    in_ch = out_ch;
  }
  const std::size_t flat = flattened_features(config);
  params.add("fc.weight", uniform_tensor({h, flat}, flat, h, rng), true);
  params.add("fc.bias", Tensor::zeros({h}), true);
  return params;
}

Encoder Encoder::create(const EncoderConfig& config, std::uint64_t seed) {
  return Encoder{config, init_params(config, seed)};
}

Tensor Encoder::embed(const Tensor& batch, Tensor* last_conv) const {
  if (config.archetype == Archetype::FrozenEmbed) return encode_frozen_batch(batch, params, config);
  return encode_convnet_batch(batch, params, config, last_conv);
}

Tensor encode_convnet_batch(const Tensor& batch, const ParamSet& params,
                            const EncoderConfig& config, Tensor* last_conv) {
  if (config.archetype != Archetype::ConvNet) {
    throw std::invalid_argument("encode_convnet: config describes a frozen-embed encoder");
  }
  const Shape expected = config.input_shape();
  if (batch.rank() != 4) {
    throw std::invalid_argument("encode_convnet: batch must be [B,C,H,W], got " +
                                shape_string(batch.shape()));
  }
  static const char* axis_names[] = {"channels", "height", "width"};
  for (std::size_t i = 0; i < 3; ++i) {
    if (batch.dim(i + 1) != expected[i]) {
      throw std::invalid_argument("encode_convnet: input " + std::string(axis_names[i]) + " is " +
                                  std::to_string(batch.dim(i + 1)) + ", config expects " +
                                  std::to_string(expected[i]));
    }
  }
  Tensor x = batch;
  for (int b = 0; b < config.conv_blocks; ++b) {
    x = relu(conv2d(x, params.at(conv_name(b, "weight")), params.at(conv_name(b, "bias")), 1, 1));
    if (last_conv && b + 1 == config.conv_blocks) *last_conv = x;
    x = max_pool2d(x, 2);
  }
  const std::size_t rows = batch.dim(0);
  x = reshape(x, {rows, x.size() / rows});
  return linear(x, params.at("fc.weight"), params.at("fc.bias"));
}

Tensor encode_frozen_batch(const Tensor& batch, const ParamSet& params,
                           const EncoderConfig& config) {
  if (config.archetype != Archetype::FrozenEmbed) {
    throw std::invalid_argument("encode_frozen: config describes a conv-net encoder");
  }
  if (batch.rank() != 2 || batch.dim(1) != static_cast<std::size_t>(config.frozen_dim)) {
    throw std::invalid_argument("encode_frozen: feature batch must be [B," +
                                std::to_string(config.frozen_dim) + "], got " +
                                shape_string(batch.shape()));
  }
  // Features come from outside the graph; only the linear layer is differentiated.
  const Tensor features = batch.requires_grad() ? batch.detach() : batch;
  return linear(features, params.at("fc.weight"), params.at("fc.bias"));
}

Tensor encode_convnet(const Tensor& image, const ParamSet& params, const EncoderConfig& config) {
  if (image.rank() != 3) {
    throw std::invalid_argument("encode_convnet: image must be [C,H,W], got " +
                                shape_string(image.shape()));
  }
  Shape batched = image.shape();
  batched.insert(batched.begin(), 1);
  const Tensor out = encode_convnet_batch(reshape(image, batched), params, config);
  return reshape(out, {out.dim(1)});
}

Tensor encode_frozen(const Tensor& feature, const ParamSet& params, const EncoderConfig& config) {
  if (feature.rank() != 1 || feature.dim(0) != static_cast<std::size_t>(config.frozen_dim)) {
    throw std::invalid_argument("encode_frozen: feature length must be " +
                                std::to_string(config.frozen_dim) + ", got shape " +
                                shape_string(feature.shape()));
  }
  const Tensor out =
      encode_frozen_batch(reshape(feature.detach(), {1, feature.size()}), params, config);
  return reshape(out, {out.dim(1)});
}

}  // namespace protoshot
