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

#include "mixq/model.hpp"

#include <cmath>
#include <random>

namespace mixq::model {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ConfigError(std::string("model config: ") + what + " must be positive");
  };
  positive(num_blocks, "num_blocks");
  positive(embed_dim, "embed_dim");
  positive(heads, "heads");
  positive(mlp_dim, "mlp_dim");
  positive(patch_size, "patch_size");
  positive(image_size, "image_size");
  positive(channels, "channels");
  if (tokens < 2) throw ConfigError("model config: tokens must be at least 2");
  if (classes < 2) throw ConfigError("model config: classes must be at least 2");
  if (embed_dim % heads != 0) throw ConfigError("model config: embed_dim must be divisible by heads");
  if (embed_dim < 2) throw ConfigError("model config: embed_dim must be at least 2 for LayerNorm");
  if (!(ln_eps > 0.0)) throw ConfigError("model config: ln_eps must be positive");
}

const char* kind_name(LayerKind k) noexcept {
  switch (k) {
    case LayerKind::PatchEmbed: return "patch_embed";
    case LayerKind::QKV: return "qkv";
    case LayerKind::MatMul1: return "matmul1";
    case LayerKind::PostSoftmax: return "post_softmax";
    case LayerKind::MatMul2: return "matmul2";
    case LayerKind::Projection: return "proj";
    case LayerKind::FC1: return "fc1";
    case LayerKind::PostGELU: return "post_gelu";
    case LayerKind::FC2: return "fc2";
    case LayerKind::Head: return "head";
    case LayerKind::LN1: return "ln1";
    case LayerKind::LN2: return "ln2";
  }
  return "?";
}

LayerKind kind_from_name(const std::string& s) {
  static constexpr LayerKind all[] = {
      LayerKind::PatchEmbed, LayerKind::QKV,      LayerKind::MatMul1, LayerKind::PostSoftmax,
      LayerKind::MatMul2,    LayerKind::Projection, LayerKind::FC1,   LayerKind::PostGELU,
      LayerKind::FC2,        LayerKind::Head,     LayerKind::LN1,     LayerKind::LN2,
  };
  for (auto k : all)
    if (s == kind_name(k)) return k;
  throw ConfigError("unknown layer kind '" + s + "'");
}

bool has_weights(LayerKind k) noexcept {
  switch (k) {
    case LayerKind::PatchEmbed:
    case LayerKind::QKV:
    case LayerKind::Projection:
    case LayerKind::FC1:
    case LayerKind::FC2:
    case LayerKind::Head:
      return true;
    default:
      return false;
  }
}

bool is_block_kind(LayerKind k) noexcept { return k != LayerKind::PatchEmbed && k != LayerKind::Head; }

bool is_quantizable(LayerKind k) noexcept { return k != LayerKind::LN1 && k != LayerKind::LN2; }

bool has_head_axis(LayerKind k) noexcept {
  return k == LayerKind::MatMul1 || k == LayerKind::PostSoftmax || k == LayerKind::MatMul2;
}

std::string LayerId::name() const {
  if (!is_block_kind(kind)) return kind_name(kind);
  return "blocks." + std::to_string(block) + "." + kind_name(kind);
}

LayerId LayerId::parse(const std::string& s) {
  constexpr std::string_view prefix = "blocks.";
  if (s.rfind(prefix, 0) == 0) {
    const auto dot = s.find('.', prefix.size());
    if (dot == std::string::npos) throw ConfigError("malformed layer id '" + s + "'");
    LayerId id;
    try {
      id.block = std::stoi(s.substr(prefix.size(), dot - prefix.size()));
    } catch (const std::exception&) {
      throw ConfigError("malformed layer id '" + s + "'");
    }
    id.kind = kind_from_name(s.substr(dot + 1));
    if (!is_block_kind(id.kind)) throw ConfigError("layer kind outside blocks used with block index: '" + s + "'");
    return id;
  }
  LayerId id{0, kind_from_name(s)};
  if (is_block_kind(id.kind)) throw ConfigError("block layer id without block index: '" + s + "'");
  return id;
}

template <typename T>
Linear<T>& ToyViT<T>::linear(LayerId id) {
  return const_cast<Linear<T>&>(std::as_const(*this).linear(id));
}

template <typename T>
const Linear<T>& ToyViT<T>::linear(LayerId id) const {
  if (is_block_kind(id.kind) && (id.block < 0 || id.block >= static_cast<int>(blocks.size()))) {
    throw ConfigError("layer " + id.name() + " refers to a block the model does not have");
  }
  switch (id.kind) {
    case LayerKind::PatchEmbed: return patch_embed;
    case LayerKind::Head: return head;
    case LayerKind::QKV: return blocks[id.block].qkv;
    case LayerKind::Projection: return blocks[id.block].proj;
    case LayerKind::FC1: return blocks[id.block].fc1;
    case LayerKind::FC2: return blocks[id.block].fc2;
    default: throw ConfigError("layer " + id.name() + " has no weights");
  }
}

template <typename T>
template <typename U>
ToyViT<U> ToyViT<T>::cast() const {
  ToyViT<U> out;
  out.config = config;
  auto lin = [](const Linear<T>& l) { return Linear<U>{l.weight.template cast<U>(), l.bias.template cast<U>()}; };
  auto norm = [](const Norm<T>& n) { return Norm<U>{n.gamma.template cast<U>(), n.beta.template cast<U>()}; };
  out.patch_embed = lin(patch_embed);
  out.pos_embed = pos_embed.template cast<U>();
  for (const auto& b : blocks) out.blocks.push_back({norm(b.ln1), lin(b.qkv), lin(b.proj), norm(b.ln2), lin(b.fc1), lin(b.fc2)});
  out.head = lin(head);
  return out;
}

template <typename T>
ToyViT<T> init_weights(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(config.embed_dim));
  std::normal_distribution<double> normal(0.0, std_dev);
  auto draw = [&](std::size_t rows, std::size_t cols) {
    std::vector<T> v(rows * cols);
    for (auto& x : v) x = static_cast<T>(normal(rng));
    return Tensor<T>(Shape{rows, cols}, std::move(v));
  };
  auto linear = [&](std::size_t in, std::size_t out) { return Linear<T>{draw(in, out), Tensor<T>(Shape{out})}; };
  auto norm = [&](std::size_t d) { return Norm<T>{Tensor<T>(Shape{d}, T{1}), Tensor<T>(Shape{d})}; };

  const std::size_t d = config.embed_dim, f = config.mlp_dim;
  ToyViT<T> m;
  m.config = config;
  m.patch_embed = linear(config.patch_dim(), d);
  m.pos_embed = draw(config.tokens, d);
  for (int l = 0; l < config.num_blocks; ++l) {
    Block<T> b;
    b.ln1 = norm(d);
    b.qkv = linear(d, 3 * d);
    b.proj = linear(d, d);
    b.ln2 = norm(d);
    b.fc1 = linear(d, f);
    b.fc2 = linear(f, d);
    m.blocks.push_back(std::move(b));
  }
  m.head = linear(d, config.classes);
  return m;
}

std::vector<LayerInfo> layer_registry(const ModelConfig& c) {
  const std::uint64_t n = c.tokens, d = c.embed_dim, f = c.mlp_dim, p = c.patch_dim(), cls = c.classes;
  std::vector<LayerInfo> out;
  out.push_back({{0, LayerKind::PatchEmbed}, p * d + d, n * p * d});
  for (int l = 0; l < c.num_blocks; ++l) {
    out.push_back({{l, LayerKind::QKV}, d * 3 * d + 3 * d, n * d * 3 * d});
    out.push_back({{l, LayerKind::MatMul1}, 0, n * n * d});
    out.push_back({{l, LayerKind::PostSoftmax}, 0, 0});
    out.push_back({{l, LayerKind::MatMul2}, 0, n * n * d});
    out.push_back({{l, LayerKind::Projection}, d * d + d, n * d * d});
    out.push_back({{l, LayerKind::FC1}, d * f + f, n * d * f});
    out.push_back({{l, LayerKind::PostGELU}, 0, 0});
    out.push_back({{l, LayerKind::FC2}, f * d + d, n * f * d});
  }
  out.push_back({{0, LayerKind::Head}, d * cls + cls, d * cls});
  return out;
}

const SiteQuant* QuantPlan::find(LayerId id) const {
  auto it = sites.find(id);
  return it == sites.end() ? nullptr : &it->second;
}

QuantPlan QuantPlan::activations_only() const {
  QuantPlan out = *this;
  for (auto& [id, s] : out.sites) s.weight.reset();
  return out;
}

void validate_plan(const QuantPlan& plan, const ModelConfig& config) {
  for (const auto& [id, site] : plan.sites) {
    if (!is_quantizable(id.kind)) throw ConfigError("plan entry " + id.name() + " is not a quantization site");
    if (is_block_kind(id.kind) && (id.block < 0 || id.block >= config.num_blocks)) {
      throw ConfigError("plan references unknown layer " + id.name());
    }
    if (!is_block_kind(id.kind) && id.block != 0) throw ConfigError("plan references unknown layer " + id.name());
    if (site.weight && !has_weights(id.kind)) throw ConfigError("plan quantizes weights of weightless layer " + id.name());
    if (site.input_b && id.kind != LayerKind::MatMul1) {
      throw ConfigError("second operand quantizer only exists for matmul1, got " + id.name());
    }
    for (const auto* q : {&site.weight, &site.input, &site.input_b})
      if (*q) quant::validate(**q);
  }
}

template <typename T>
ToyViT<T> bake_weight_quant(const ToyViT<T>& model, const QuantPlan& plan) {
  validate_plan(plan, model.config);
  ToyViT<T> out = model;
  for (const auto& [id, site] : plan.sites) {
    if (site.weight) quant::fake_quant_inplace(out.linear(id).weight, *site.weight);
  }
  return out;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, const ModelConfig& c) {
  if (image.rank() != 3 || image.dim(2) != static_cast<std::size_t>(c.channels)) {
    throw DimensionError("image must be [H x W x " + std::to_string(c.channels) + "], got " +
                         shape_to_string(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2), p = c.patch_size;
  if (h % p != 0 || w % p != 0) {
    throw DimensionError("image " + shape_to_string(image.shape()) + " is not divisible by patch size " +
                         std::to_string(p));
  }
  const std::size_t gh = h / p, gw = w / p;
  if (gh * gw != static_cast<std::size_t>(c.tokens)) {
    throw DimensionError("image " + shape_to_string(image.shape()) + " yields " + std::to_string(gh * gw) +
                         " patches, model expects " + std::to_string(c.tokens));
  }
  const std::size_t pd = p * p * ch;
  Tensor<T> out(Shape{gh * gw, pd});
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      T* dst = out.ptr() + (gy * gw + gx) * pd;
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px)
          for (std::size_t k = 0; k < ch; ++k) *dst++ = image[((gy * p + py) * w + gx * p + px) * ch + k];
    }
  return out;
}

namespace {

template <typename T>
class TraceBuilder {
 public:
  TraceBuilder(const ToyViT<T>& model, const QuantPlan& plan, const ForwardOptions<T>& opt, Trace<T>& trace)
      : model_(model), plan_(plan), opt_(opt), t_(trace), g_(trace.graph) {}

  ad::Var param(const std::string& name, const Tensor<T>& value) {
    const ad::Var v = g_.parameter(value, opt_.params_require_grad);
    if (opt_.params_require_grad) t_.params[name] = v;
    return v;
  }

  ad::Var weight(LayerId id, const std::string& name) {
    const Tensor<T>& w = model_.linear(id).weight;
    const SiteQuant* s = plan_.find(id);
    if (s && s->weight) {
      const ad::Var raw = param(name, w);
      return g_.straight_through(raw, quant::fake_quant(w, *s->weight));
    }
    return param(name, w);
  }

  bool tapping() const { return opt_.capture || static_cast<bool>(opt_.hook); }

  ad::Var tap(LayerId id, TapPoint point, std::size_t head, ad::Var x) {
    if (!tapping()) return x;
    ad::Var v = opt_.hook ? g_.tap(x, [&](Tensor<T>& val) { opt_.hook(id, point, head, val); }) : g_.tap(x);
    auto& taps = t_.taps[id];
    auto& list = point == TapPoint::Input ? taps.input : point == TapPoint::InputB ? taps.input_b : taps.output;
    list.push_back(v);
    return v;
  }

  // One code path for every activation site, identity quantizers included.
  ad::Var activation(LayerId id, TapPoint point, std::size_t head, ad::Var x) {
    x = tap(id, point, head, x);
    const SiteQuant* s = plan_.find(id);
    if (!s) return x;
    const auto& q = point == TapPoint::InputB ? s->input_b : s->input;
    if (!q) return x;
    return g_.straight_through(x, quant::fake_quant(g_.value(x), *q));
  }

  ad::Var linear(LayerId id, const std::string& prefix, ad::Var x) {
    const ad::Var w = weight(id, prefix + ".weight");
    const ad::Var b = param(prefix + ".bias", model_.linear(id).bias);
    return g_.add_row(g_.matmul(x, w), b);
  }

  ad::Var build(const Tensor<T>& image) {
    const ModelConfig& c = model_.config;
    const std::size_t d = c.embed_dim, dh = c.head_dim();
    const T eps = static_cast<T>(c.ln_eps);
    const T inv_sqrt_dh = T{1} / std::sqrt(static_cast<T>(dh));

    t_.image = g_.leaf(patchify(image, c), opt_.input_requires_grad);
    const LayerId pe{0, LayerKind::PatchEmbed};
    ad::Var x = activation(pe, TapPoint::Input, 0, t_.image);
    x = tap(pe, TapPoint::Output, 0, linear(pe, "patch_embed", x));
    x = g_.add(x, param("pos_embed", model_.pos_embed));

    for (int l = 0; l < c.num_blocks; ++l) {
      const auto& blk = model_.blocks[l];
      const std::string p = "blocks." + std::to_string(l) + ".";
      auto id = [l](LayerKind k) { return LayerId{l, k}; };

      ad::Var ln1 = g_.layernorm(x, param(p + "norm1.weight", blk.ln1.gamma), param(p + "norm1.bias", blk.ln1.beta), eps);
      ln1 = tap(id(LayerKind::LN1), TapPoint::Output, 0, ln1);
      ad::Var qkv = linear(id(LayerKind::QKV), p + "attn.qkv", activation(id(LayerKind::QKV), TapPoint::Input, 0, ln1));
      qkv = tap(id(LayerKind::QKV), TapPoint::Output, 0, qkv);

      std::vector<ad::Var> heads;
      for (int h = 0; h < c.heads; ++h) {
        const std::size_t off = static_cast<std::size_t>(h) * dh;
        ad::Var q = activation(id(LayerKind::MatMul1), TapPoint::Input, h, g_.slice_cols(qkv, off, dh));
        ad::Var k = activation(id(LayerKind::MatMul1), TapPoint::InputB, h, g_.slice_cols(qkv, d + off, dh));
        ad::Var v = g_.slice_cols(qkv, 2 * d + off, dh);
        ad::Var scores = tap(id(LayerKind::MatMul1), TapPoint::Output, h, g_.matmul(q, g_.transpose(k)));
        ad::Var probs = g_.softmax_rows(g_.scale(scores, inv_sqrt_dh));
        probs = activation(id(LayerKind::PostSoftmax), TapPoint::Input, h, probs);
        probs = tap(id(LayerKind::PostSoftmax), TapPoint::Output, h, probs);
        v = activation(id(LayerKind::MatMul2), TapPoint::Input, h, v);
        heads.push_back(tap(id(LayerKind::MatMul2), TapPoint::Output, h, g_.matmul(probs, v)));
      }
      ad::Var attn = g_.concat_cols(heads);
      ad::Var proj = linear(id(LayerKind::Projection), p + "attn.proj",
                            activation(id(LayerKind::Projection), TapPoint::Input, 0, attn));
      proj = tap(id(LayerKind::Projection), TapPoint::Output, 0, proj);
      const ad::Var y = g_.add(x, proj);

      ad::Var ln2 = g_.layernorm(y, param(p + "norm2.weight", blk.ln2.gamma), param(p + "norm2.bias", blk.ln2.beta), eps);
      ln2 = tap(id(LayerKind::LN2), TapPoint::Output, 0, ln2);
      ad::Var fc1 = linear(id(LayerKind::FC1), p + "mlp.fc1", activation(id(LayerKind::FC1), TapPoint::Input, 0, ln2));
      fc1 = tap(id(LayerKind::FC1), TapPoint::Output, 0, fc1);
      ad::Var act = activation(id(LayerKind::PostGELU), TapPoint::Input, 0, g_.gelu(fc1));
      act = tap(id(LayerKind::PostGELU), TapPoint::Output, 0, act);
      ad::Var fc2 = tap(id(LayerKind::FC2), TapPoint::Output, 0, linear(id(LayerKind::FC2), p + "mlp.fc2", act));
      x = g_.add(y, fc2);
    }

    const LayerId hd{0, LayerKind::Head};
    ad::Var pooled = activation(hd, TapPoint::Input, 0, g_.mean_rows(x));
    return tap(hd, TapPoint::Output, 0, linear(hd, "head", pooled));
  }

 private:
  const ToyViT<T>& model_;
  const QuantPlan& plan_;
  const ForwardOptions<T>& opt_;
  Trace<T>& t_;
  ad::Graph<T>& g_;
};

}  // namespace

template <typename T>
Trace<T> trace_sample(const ToyViT<T>& model, const Tensor<T>& image, const QuantPlan& plan,
                      const ForwardOptions<T>& options) {
  validate_plan(plan, model.config);
  Trace<T> trace;
  TraceBuilder<T> builder(model, plan, options, trace);
  trace.logits = builder.build(image);
  return trace;
}

template <typename T>
Tensor<T> image_at(const Tensor<T>& images, std::size_t index) {
  if (images.rank() != 4) throw DimensionError("images must be [B x H x W x ch], got " + shape_to_string(images.shape()));
  if (index >= images.dim(0)) throw DimensionError("image index out of range");
  const std::size_t per = images.dim(1) * images.dim(2) * images.dim(3);
  std::vector<T> v(images.ptr() + index * per, images.ptr() + (index + 1) * per);
  return Tensor<T>(Shape{images.dim(1), images.dim(2), images.dim(3)}, std::move(v));
}

template <typename T>
ForwardResult<T> forward(const ToyViT<T>& model, const Tensor<T>& images, const QuantPlan& plan, bool capture) {
  validate_plan(plan, model.config);
  if (images.rank() != 4) throw DimensionError("images must be [B x H x W x ch], got " + shape_to_string(images.shape()));
  bool has_weight_entries = false;
  for (const auto& [id, s] : plan.sites) has_weight_entries |= s.weight.has_value();
  const ToyViT<T> baked = has_weight_entries ? bake_weight_quant(model, plan) : ToyViT<T>{};
  const ToyViT<T>& run_model = has_weight_entries ? baked : model;
  const QuantPlan act_plan = has_weight_entries ? plan.activations_only() : QuantPlan{};
  const QuantPlan& run_plan = has_weight_entries ? act_plan : plan;

  const std::size_t batch = images.dim(0), classes = model.config.classes;
  ForwardResult<T> out;
  out.logits = Tensor<T>(Shape{batch, classes});
  ForwardOptions<T> opt;
  opt.capture = capture;
  for (std::size_t b = 0; b < batch; ++b) {
    Trace<T> tr = trace_sample(run_model, image_at(images, b), run_plan, opt);
    const auto& lv = tr.graph.value(tr.logits);
    std::copy(lv.data().begin(), lv.data().end(), out.logits.ptr() + b * classes);
    if (capture) out.traces.push_back(std::move(tr));
  }
  return out;
}

#define MIXQ_INSTANTIATE(T)                                                                                   \
  template struct ToyViT<T>;                                                                                  \
  template ToyViT<T> init_weights<T>(const ModelConfig&);                                                     \
  template ToyViT<T> bake_weight_quant(const ToyViT<T>&, const QuantPlan&);                                   \
  template Tensor<T> patchify(const Tensor<T>&, const ModelConfig&);                                          \
  template Trace<T> trace_sample(const ToyViT<T>&, const Tensor<T>&, const QuantPlan&, const ForwardOptions<T>&); \
  template ForwardResult<T> forward(const ToyViT<T>&, const Tensor<T>&, const QuantPlan&, bool);              \
  template Tensor<T> image_at(const Tensor<T>&, std::size_t);

MIXQ_INSTANTIATE(float)
MIXQ_INSTANTIATE(double)
#undef MIXQ_INSTANTIATE

template ToyViT<double> ToyViT<float>::cast<double>() const;
template ToyViT<float> ToyViT<double>::cast<float>() const;
template ToyViT<float> ToyViT<float>::cast<float>() const;
template ToyViT<double> ToyViT<double>::cast<double>() const;

}  // namespace mixq::model
