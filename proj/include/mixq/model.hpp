// Copyright 2026 The mixq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixq/autodiff.hpp"
#include "mixq/quant.hpp"
#include "mixq/tensor.hpp"

namespace mixq::model {

struct ModelConfig {
  int num_blocks = 4;
  int embed_dim = 64;
  int heads = 4;
  int mlp_dim = 128;
  int tokens = 64;
  int classes = 10;
  int patch_size = 2;
  int image_size = 16;  // square images
  int channels = 3;
  std::uint64_t seed = 0;
  double ln_eps = 1e-6;

  int head_dim() const { return embed_dim / heads; }
  int patch_dim() const { return patch_size * patch_size * channels; }
  /// Throws ConfigError on non-positive sizes or embed_dim % heads != 0.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class LayerKind {
  PatchEmbed,
  QKV,
  MatMul1,
  PostSoftmax,
  MatMul2,
  Projection,
  FC1,
  PostGELU,
  FC2,
  Head,
  LN1,
  LN2,
};

/// Quantizable kinds inside a transformer block, in execution order.
inline constexpr std::array<LayerKind, 8> kBlockKinds = {
    LayerKind::QKV,        LayerKind::MatMul1, LayerKind::PostSoftmax, LayerKind::MatMul2,
    LayerKind::Projection, LayerKind::FC1,     LayerKind::PostGELU,    LayerKind::FC2,
};
/// Every quantizable kind, registry order (PatchEmbed, block kinds, Head).
inline constexpr std::array<LayerKind, 10> kQuantKinds = {
    LayerKind::PatchEmbed, LayerKind::QKV, LayerKind::MatMul1,  LayerKind::PostSoftmax, LayerKind::MatMul2,
    LayerKind::Projection, LayerKind::FC1, LayerKind::PostGELU, LayerKind::FC2,         LayerKind::Head,
};

const char* kind_name(LayerKind k) noexcept;
LayerKind kind_from_name(const std::string& s);
bool has_weights(LayerKind k) noexcept;
bool is_block_kind(LayerKind k) noexcept;
bool is_quantizable(LayerKind k) noexcept;
/// Attention sites whose activations carry a head axis.
bool has_head_axis(LayerKind k) noexcept;

struct LayerId {
  int block = 0;  // 0 for PatchEmbed / Head, which sit outside the blocks
  LayerKind kind = LayerKind::QKV;

  std::string name() const;
  static LayerId parse(const std::string& s);
  friend auto operator<=>(const LayerId&, const LayerId&) = default;
  friend bool operator==(const LayerId&, const LayerId&) = default;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]
  bool operator==(const Linear&) const = default;
};

template <typename T>
struct Norm {
  Tensor<T> gamma;
  Tensor<T> beta;
  bool operator==(const Norm&) const = default;
};

template <typename T>
struct Block {
  Norm<T> ln1;
  Linear<T> qkv;
  Linear<T> proj;
  Norm<T> ln2;
  Linear<T> fc1;
  Linear<T> fc2;
  bool operator==(const Block&) const = default;
};

template <typename T>
struct ToyViT {
  ModelConfig config;
  Linear<T> patch_embed;
  Tensor<T> pos_embed;  // [tokens x embed_dim]
  std::vector<Block<T>> blocks;
  Linear<T> head;

  /// Visits every tensor with a stable dotted name, in a fixed order.
  template <typename F>
  void for_each_tensor(F&& fn) {
    visit(*this, fn);
  }
  template <typename F>
  void for_each_tensor(F&& fn) const {
    visit(*this, fn);
  }

  Linear<T>& linear(LayerId id);
  const Linear<T>& linear(LayerId id) const;

  template <typename U>
  ToyViT<U> cast() const;

  bool operator==(const ToyViT&) const = default;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& fn) {
    fn("patch_embed.weight", self.patch_embed.weight);
    fn("patch_embed.bias", self.patch_embed.bias);
    fn("pos_embed", self.pos_embed);
    for (std::size_t l = 0; l < self.blocks.size(); ++l) {
      auto& b = self.blocks[l];
      const std::string p = "blocks." + std::to_string(l) + ".";
      fn(p + "norm1.weight", b.ln1.gamma);
      fn(p + "norm1.bias", b.ln1.beta);
      fn(p + "attn.qkv.weight", b.qkv.weight);
      fn(p + "attn.qkv.bias", b.qkv.bias);
      fn(p + "attn.proj.weight", b.proj.weight);
      fn(p + "attn.proj.bias", b.proj.bias);
      fn(p + "norm2.weight", b.ln2.gamma);
      fn(p + "norm2.bias", b.ln2.beta);
      fn(p + "mlp.fc1.weight", b.fc1.weight);
      fn(p + "mlp.fc1.bias", b.fc1.bias);
      fn(p + "mlp.fc2.weight", b.fc2.weight);
      fn(p + "mlp.fc2.bias", b.fc2.bias);
    }
    fn("head.weight", self.head.weight);
    fn("head.bias", self.head.bias);
  }
};

/// Seeded N(0, 1/D) weights, zero biases, unit LayerNorm gains. Values are
/// drawn in double precision, so float and double models agree up to casting.
template <typename T>
ToyViT<T> init_weights(const ModelConfig& config);

struct LayerInfo {
  LayerId id;
  std::uint64_t params = 0;  // |w|, weights plus bias
  std::uint64_t macs = 0;    // per image
};

/// Quantizable layers in registry order with parameter and MAC counts.
std::vector<LayerInfo> layer_registry(const ModelConfig& config);

struct SiteQuant {
  std::optional<quant::QuantParams> weight;
  std::optional<quant::QuantParams> input;    // first (or only) activation operand
  std::optional<quant::QuantParams> input_b;  // second matmul operand (K for MatMul1)

  bool operator==(const SiteQuant&) const = default;
};

struct QuantPlan {
  std::map<LayerId, SiteQuant> sites;
  std::vector<bool> crl_blocks;  // informational: CRL folded into block l

  bool empty() const noexcept { return sites.empty(); }
  const SiteQuant* find(LayerId id) const;
  /// Same plan with every weight entry removed.
  QuantPlan activations_only() const;
  bool operator==(const QuantPlan&) const = default;
};

/// Throws ConfigError when a plan names a layer the model does not have.
void validate_plan(const QuantPlan& plan, const ModelConfig& config);

/// Copy of `model` whose weights are replaced by their fake-quantized values.
template <typename T>
ToyViT<T> bake_weight_quant(const ToyViT<T>& model, const QuantPlan& plan);

enum class TapPoint { Input, InputB, Output };

template <typename T>
using SiteHook = std::function<void(LayerId, TapPoint, std::size_t head, Tensor<T>&)>;

template <typename T>
struct ForwardOptions {
  bool capture = false;
  bool params_require_grad = false;
  bool input_requires_grad = false;
  SiteHook<T> hook;  // may edit tapped values; implies tap creation
};

struct SiteTaps {
  std::vector<ad::Var> input;    // pre-quantization operand(s), one per head where applicable
  std::vector<ad::Var> input_b;
  std::vector<ad::Var> output;   // layer output, one per head for attention sites
};

template <typename T>
struct Trace {
  ad::Graph<T> graph;
  ad::Var image;
  ad::Var logits;
  std::map<LayerId, SiteTaps> taps;
  std::map<std::string, ad::Var> params;  // only populated when params_require_grad
};

/// [H x W x ch] -> [tokens x patch_dim]; patches row-major, (py, px, ch) inside.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, const ModelConfig& config);

/// Runs one image through the model on a fresh tape.
template <typename T>
Trace<T> trace_sample(const ToyViT<T>& model, const Tensor<T>& image, const QuantPlan& plan,
                      const ForwardOptions<T>& options = {});

template <typename T>
struct ForwardResult {
  Tensor<T> logits;              // [B x C]
  std::vector<Trace<T>> traces;  // filled when capture was requested
};

/// Batched forward over images [B x H x W x ch]. Weight entries of the plan are
/// baked once per call; each image then runs on its own tape.
template <typename T>
ForwardResult<T> forward(const ToyViT<T>& model, const Tensor<T>& images, const QuantPlan& plan,
                         bool capture = false);

/// Single image [H x W x ch] out of a batch tensor.
template <typename T>
Tensor<T> image_at(const Tensor<T>& images, std::size_t index);

}  // namespace mixq::model
