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

#include "mixq/ptq.hpp"

#include "mixq/io.hpp"

namespace mixq::ptq {

using model::LayerId;
using model::LayerKind;
using model::TapPoint;

namespace {

const char* point_name(TapPoint p) {
  switch (p) {
    case TapPoint::Input: return "input";
    case TapPoint::InputB: return "input_b";
    case TapPoint::Output: return "output";
  }
  return "?";
}

}  // namespace

std::string site_key_name(const SiteKey& key) { return key.first.name() + ":" + point_name(key.second); }

SiteKey site_key_from_name(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw ConfigError("malformed calibration site '" + s + "'");
  const std::string p = s.substr(colon + 1);
  TapPoint point;
  if (p == "input") point = TapPoint::Input;
  else if (p == "input_b") point = TapPoint::InputB;
  else if (p == "output") point = TapPoint::Output;
  else throw ConfigError("malformed calibration site '" + s + "'");
  return {LayerId::parse(s.substr(0, colon)), point};
}

void PtqOptions::validate() const {
  clip.validate();
  if (!(ln_percentile > 0.5 && ln_percentile <= 1.0)) throw ConfigError("ln_percentile must lie in (0.5, 1]");
  if (!adaptive_base && !(fixed_base > 1.0)) throw ConfigError("fixed log base must exceed 1");
  if (adaptive_base && base_grid.empty()) throw ConfigError("adaptive base grid is empty");
  for (double a : base_grid)
    if (!(a > 1.0)) throw ConfigError("adaptive base grid entries must exceed 1");
}

const quant::CalibrationStats& CalibrationSet::at(const SiteKey& key) const {
  auto it = stats.find(key);
  if (it == stats.end()) throw ConfigError("no calibration statistics for site " + site_key_name(key));
  return it->second;
}

void CalibrationSet::save(const std::filesystem::path& dir, const std::string& stem) const {
  io::TensorArchive a;
  a.meta()["kind"] = "calibration";
  a.meta()["images"] = images;
  io::json sites = io::json::array();
  for (const auto& [key, st] : stats) {
    const std::string name = site_key_name(key);
    sites.push_back({{"site", name},
                     {"channels", st.channels()},
                     {"keep_samples", st.keeps_samples()},
                     {"sample_cap", st.sample_cap()},
                     {"count", st.count()}});
    a.add(name + ".min", Tensor<double>(Shape{st.channels()}, st.mins()));
    a.add(name + ".max", Tensor<double>(Shape{st.channels()}, st.maxs()));
    if (st.keeps_samples()) {
      std::vector<double> flat;
      std::vector<std::int32_t> lengths;
      for (std::size_t c = 0; c < st.channels(); ++c) {
        const auto s = st.samples(c);
        flat.insert(flat.end(), s.begin(), s.end());
        lengths.push_back(static_cast<std::int32_t>(s.size()));
      }
      const std::size_t total = flat.size(), nch = lengths.size();
      a.add(name + ".samples", Tensor<double>(Shape{total}, std::move(flat)));
      a.add(name + ".lengths", Tensor<std::int32_t>(Shape{nch}, std::move(lengths)));
    }
  }
  a.meta()["sites"] = sites;
  a.save(dir, stem);
}

CalibrationSet CalibrationSet::load(const std::filesystem::path& dir, const std::string& stem) {
  const auto a = io::TensorArchive::load(dir, stem);
  if (a.meta().value("kind", "") != "calibration") throw ConfigError("archive " + stem + " does not hold calibration data");
  CalibrationSet out;
  out.images = a.meta().value("images", std::size_t{0});
  for (const auto& s : a.meta().at("sites")) {
    const std::string name = s.at("site").get<std::string>();
    const bool keep = s.at("keep_samples").get<bool>();
    auto mins = a.get<double>(name + ".min").values();
    auto maxs = a.get<double>(name + ".max").values();
    std::vector<std::vector<double>> samples;
    if (keep) {
      const auto flat = a.get<double>(name + ".samples");
      const auto lengths = a.get<std::int32_t>(name + ".lengths");
      std::size_t pos = 0;
      for (std::int32_t len : lengths.data()) {
        samples.emplace_back(flat.ptr() + pos, flat.ptr() + pos + len);
        pos += static_cast<std::size_t>(len);
      }
    }
    out.stats.emplace(site_key_from_name(name),
                      quant::CalibrationStats::restore(std::move(mins), std::move(maxs), std::move(samples), keep,
                                                       s.at("sample_cap").get<std::size_t>(),
                                                       s.at("count").get<std::uint64_t>()));
  }
  return out;
}

template <typename T>
CalibrationSet collect_calibration(const model::ToyViT<T>& model, const Tensor<T>& images, const PtqOptions& options) {
  options.validate();
  if (images.rank() != 4 || images.dim(0) == 0) throw DimensionError("calibration needs a non-empty image batch");
  const auto& c = model.config;
  const std::size_t d = c.embed_dim, cap = options.sample_cap;
  const bool ln_samples = options.ln_percentile < 1.0;

  CalibrationSet set;
  auto add = [&](LayerId id, TapPoint p, std::size_t channels, bool samples) {
    set.stats.emplace(SiteKey{id, p}, quant::CalibrationStats(channels, samples, cap));
  };
  add({0, LayerKind::PatchEmbed}, TapPoint::Input, 1, false);
  for (int l = 0; l < c.num_blocks; ++l) {
    add({l, LayerKind::LN1}, TapPoint::Output, d, ln_samples);
    add({l, LayerKind::MatMul1}, TapPoint::Input, 1, false);
    add({l, LayerKind::MatMul1}, TapPoint::InputB, 1, false);
    add({l, LayerKind::PostSoftmax}, TapPoint::Input, 1, true);
    add({l, LayerKind::MatMul2}, TapPoint::Input, 1, false);
    add({l, LayerKind::Projection}, TapPoint::Input, 1, false);
    add({l, LayerKind::LN2}, TapPoint::Output, d, ln_samples);
    add({l, LayerKind::PostGELU}, TapPoint::Input, 1, true);
  }
  add({0, LayerKind::Head}, TapPoint::Input, 1, false);

  model::ForwardOptions<T> opt;
  opt.capture = true;
  for (std::size_t b = 0; b < images.dim(0); ++b) {
    const auto trace = model::trace_sample(model, model::image_at(images, b), model::QuantPlan{}, opt);
    for (auto& [key, st] : set.stats) {
      const auto& taps = trace.taps.at(key.first);
      const auto& list = key.second == TapPoint::Input ? taps.input
                         : key.second == TapPoint::InputB ? taps.input_b
                                                          : taps.output;
      for (ad::Var v : list) st.observe(trace.graph.value(v));
    }
  }
  set.images = images.dim(0);
  return set;
}

BitMap uniform_bits(const model::ModelConfig& config, int bits) {
  BitMap out;
  for (const auto& info : model::layer_registry(config)) out[info.id] = bits;
  return out;
}

namespace {

quant::QuantParams log_or_uniform(const quant::CalibrationStats& st, int bits, bool log, const PtqOptions& opt) {
  if (!log) return quant::calibrate_uniform(st, bits, quant::Granularity::PerTensor);
  double base = opt.fixed_base;
  if (opt.adaptive_base) {
    const auto samples = st.pooled_samples();
    base = quant::search_adaptive_base(st, samples, bits, opt.base_grid);
  }
  return quant::calibrate_log(st, bits, base);
}

}  // namespace

template <typename T>
QuantizedModel<T> build_quantized(const model::ToyViT<T>& fp, const CalibrationSet& calib, const BitMap& bits,
                                  const PtqOptions& options) {
  options.validate();
  const auto& c = fp.config;
  for (const auto& [id, b] : bits) {
    if (b < 1 || b > 8) throw ConfigError("bit-width for " + id.name() + " must lie in [1, 8]");
  }
  QuantizedModel<T> out{fp, {}, {}};
  out.plan.crl_blocks.assign(c.num_blocks, options.crl);

  std::map<LayerId, quant::QuantParams> ln_inputs;
  if (options.crl) {
    std::map<LayerId, quant::CalibrationStats> ln_stats;
    std::map<LayerId, int> crl_bits;
    for (int l = 0; l < c.num_blocks; ++l) {
      for (auto [ln, next] : {std::pair{LayerKind::LN1, LayerKind::QKV}, std::pair{LayerKind::LN2, LayerKind::FC1}}) {
        auto b = bits.find({l, next});
        if (b == bits.end()) continue;
        ln_stats.emplace(LayerId{l, ln}, calib.at({{l, ln}, TapPoint::Output}));
        crl_bits[{l, next}] = b->second;
      }
    }
    // Sites left at full precision keep their original LayerNorm; fold only where quantized.
    if (crl_bits.size() == static_cast<std::size_t>(2 * c.num_blocks)) {
      auto r = crl::apply_crl(fp, ln_stats, options.clip, crl_bits, options.ln_percentile);
      out.model = std::move(r.model);
      out.records = std::move(r.records);
      ln_inputs = std::move(r.inputs);
    } else {
      for (const auto& [id, b] : crl_bits) {
        const LayerId ln{id.block, id.kind == LayerKind::QKV ? LayerKind::LN1 : LayerKind::LN2};
        ln_inputs[id] = quant::calibrate_uniform(calib.at({ln, TapPoint::Output}), b, quant::Granularity::PerChannel,
                                                 options.ln_percentile);
      }
    }
  } else {
    for (int l = 0; l < c.num_blocks; ++l) {
      for (auto [ln, next] : {std::pair{LayerKind::LN1, LayerKind::QKV}, std::pair{LayerKind::LN2, LayerKind::FC1}}) {
        auto b = bits.find({l, next});
        if (b == bits.end()) continue;
        ln_inputs[{l, next}] = quant::calibrate_uniform(calib.at({{l, ln}, TapPoint::Output}), b->second,
                                                        options.ln_granularity, options.ln_percentile);
      }
    }
  }

  for (const auto& info : model::layer_registry(c)) {
    auto bit = bits.find(info.id);
    if (bit == bits.end()) continue;
    const int b = bit->second;
    const LayerId id = info.id;
    model::SiteQuant site;
    if (model::has_weights(id.kind)) {
      site.weight = quant::calibrate_uniform_tensor(out.model.linear(id).weight, b, quant::Granularity::PerChannel);
    }
    auto uniform = [&](TapPoint p) {
      return quant::calibrate_uniform(calib.at({id, p}), b, quant::Granularity::PerTensor);
    };
    switch (id.kind) {
      case LayerKind::QKV:
      case LayerKind::FC1:
        site.input = ln_inputs.at(id);
        break;
      case LayerKind::MatMul1:
        site.input = uniform(TapPoint::Input);
        site.input_b = uniform(TapPoint::InputB);
        break;
      case LayerKind::PostSoftmax:
        site.input = log_or_uniform(calib.at({id, TapPoint::Input}), b, options.log_post_softmax, options);
        break;
      case LayerKind::PostGELU:
        site.input = log_or_uniform(calib.at({id, TapPoint::Input}), b, options.log_post_gelu, options);
        break;
      case LayerKind::FC2:
        break;  // its input is the PostGELU site
      default:
        site.input = uniform(TapPoint::Input);
        break;
    }
    out.plan.sites.emplace(id, std::move(site));
  }
  model::validate_plan(out.plan, c);
  return out;
}

template CalibrationSet collect_calibration(const model::ToyViT<float>&, const Tensor<float>&, const PtqOptions&);
template CalibrationSet collect_calibration(const model::ToyViT<double>&, const Tensor<double>&, const PtqOptions&);
template QuantizedModel<float> build_quantized(const model::ToyViT<float>&, const CalibrationSet&, const BitMap&,
                                               const PtqOptions&);
template QuantizedModel<double> build_quantized(const model::ToyViT<double>&, const CalibrationSet&, const BitMap&,
                                                const PtqOptions&);

}  // namespace mixq::ptq
