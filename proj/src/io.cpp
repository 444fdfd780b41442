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

#include "mixq/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mixq::io {

static_assert(std::endian::native == std::endian::little, "tensor archives assume a little-endian host");

const char* dtype_name(DType t) noexcept {
  switch (t) {
    case DType::F32: return "f32";
    case DType::F64: return "f64";
    case DType::I32: return "i32";
  }
  return "?";
}

DType dtype_from_name(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  if (s == "i32") return DType::I32;
  throw ConfigError("unknown tensor element type '" + s + "'");
}

std::size_t dtype_size(DType t) noexcept { return t == DType::F64 ? 8 : 4; }

namespace {

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::F32;
  if constexpr (std::is_same_v<T, double>) return DType::F64;
  return DType::I32;
}

template <typename T>
TensorArchive::Entry make_entry(const std::string& name, const Tensor<T>& t) {
  TensorArchive::Entry e;
  e.name = name;
  e.shape = t.shape();
  e.dtype = dtype_of<T>();
  e.bytes.resize(t.size() * sizeof(T));
  if (!e.bytes.empty()) std::memcpy(e.bytes.data(), t.ptr(), e.bytes.size());
  return e;
}

template <typename Src, typename Dst>
std::vector<Dst> convert(const std::vector<std::uint8_t>& bytes) {
  std::vector<Src> src(bytes.size() / sizeof(Src));
  if (!src.empty()) std::memcpy(src.data(), bytes.data(), bytes.size());
  return std::vector<Dst>(src.begin(), src.end());
}

}  // namespace

void TensorArchive::add(const std::string& name, const Tensor<float>& t) {
  if (contains(name)) throw ConfigError("duplicate tensor name '" + name + "'");
  entries_.push_back(make_entry(name, t));
}
void TensorArchive::add(const std::string& name, const Tensor<double>& t) {
  if (contains(name)) throw ConfigError("duplicate tensor name '" + name + "'");
  entries_.push_back(make_entry(name, t));
}
void TensorArchive::add(const std::string& name, const Tensor<std::int32_t>& t) {
  if (contains(name)) throw ConfigError("duplicate tensor name '" + name + "'");
  entries_.push_back(make_entry(name, t));
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const TensorArchive::Entry& TensorArchive::entry(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw ConfigError("tensor '" + name + "' not found in archive");
}

template <typename T>
Tensor<T> TensorArchive::get(const std::string& name) const {
  const Entry& e = entry(name);
  std::vector<T> values;
  switch (e.dtype) {
    case DType::F32: values = convert<float, T>(e.bytes); break;
    case DType::F64: values = convert<double, T>(e.bytes); break;
    case DType::I32: values = convert<std::int32_t, T>(e.bytes); break;
  }
  return Tensor<T>(e.shape, std::move(values));
}

template Tensor<float> TensorArchive::get(const std::string&) const;
template Tensor<double> TensorArchive::get(const std::string&) const;
template Tensor<std::int32_t> TensorArchive::get(const std::string&) const;

void TensorArchive::save(const std::filesystem::path& dir, const std::string& stem) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  json manifest;
  manifest["format"] = "mixq-tensors";
  manifest["version"] = 1;
  manifest["blob"] = stem + ".bin";
  manifest["meta"] = meta_;
  json list = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries_) {
    list.push_back({{"name", e.name},
                    {"shape", e.shape},
                    {"dtype", dtype_name(e.dtype)},
                    {"offset", offset},
                    {"nbytes", e.bytes.size()}});
    offset += e.bytes.size();
  }
  manifest["tensors"] = list;

  const auto bin_path = dir / (stem + ".bin");
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw ConfigError("cannot write " + bin_path.string());
  for (const auto& e : entries_) bin.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
  if (!bin) throw ConfigError("failed writing " + bin_path.string());
  write_text(dir / (stem + ".json"), manifest.dump(2) + "\n");
}

bool TensorArchive::exists(const std::filesystem::path& dir, const std::string& stem) {
  return std::filesystem::exists(dir / (stem + ".json")) && std::filesystem::exists(dir / (stem + ".bin"));
}

TensorArchive TensorArchive::load(const std::filesystem::path& dir, const std::string& stem) {
  const json manifest = json::parse(read_text(dir / (stem + ".json")));
  if (manifest.value("format", "") != "mixq-tensors") throw ConfigError("not a tensor archive: " + stem);
  const auto bin_path = dir / manifest.at("blob").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw ConfigError("cannot read " + bin_path.string());
  TensorArchive a;
  a.meta_ = manifest.value("meta", json::object());
  for (const auto& t : manifest.at("tensors")) {
    Entry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<Shape>();
    e.dtype = dtype_from_name(t.at("dtype").get<std::string>());
    const auto nbytes = t.at("nbytes").get<std::uint64_t>();
    if (nbytes != shape_numel(e.shape) * dtype_size(e.dtype)) throw ConfigError("corrupt manifest entry " + e.name);
    e.bytes.resize(nbytes);
    bin.seekg(static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    bin.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(nbytes));
    if (!bin) throw ConfigError("truncated blob for " + e.name);
    a.entries_.push_back(std::move(e));
  }
  return a;
}

json to_json(const model::ModelConfig& c) {
  return {{"num_blocks", c.num_blocks}, {"embed_dim", c.embed_dim}, {"heads", c.heads},
          {"mlp_dim", c.mlp_dim},       {"tokens", c.tokens},       {"classes", c.classes},
          {"patch_size", c.patch_size}, {"image_size", c.image_size}, {"channels", c.channels},
          {"seed", c.seed},             {"ln_eps", c.ln_eps}};
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  c.num_blocks = j.value("num_blocks", c.num_blocks);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.heads = j.value("heads", c.heads);
  c.mlp_dim = j.value("mlp_dim", c.mlp_dim);
  c.tokens = j.value("tokens", c.tokens);
  c.classes = j.value("classes", c.classes);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.image_size = j.value("image_size", c.image_size);
  c.channels = j.value("channels", c.channels);
  c.seed = j.value("seed", c.seed);
  c.ln_eps = j.value("ln_eps", c.ln_eps);
  c.validate();
  return c;
}

template <typename T>
void save_model(const model::ToyViT<T>& m, const std::filesystem::path& dir, const std::string& stem) {
  TensorArchive a;
  a.meta()["kind"] = "toy-vit";
  a.meta()["config"] = to_json(m.config);
  m.for_each_tensor([&](const std::string& name, const Tensor<T>& t) { a.add(name, t); });
  a.save(dir, stem);
}

template <typename T>
model::ToyViT<T> load_model(const std::filesystem::path& dir, const std::string& stem) {
  const TensorArchive a = TensorArchive::load(dir, stem);
  if (a.meta().value("kind", "") != "toy-vit") throw ConfigError("archive " + stem + " does not hold a model");
  auto m = model::init_weights<T>(model_config_from_json(a.meta().at("config")));
  m.for_each_tensor([&](const std::string& name, Tensor<T>& t) {
    Tensor<T> loaded = a.get<T>(name);
    if (loaded.shape() != t.shape()) {
      throw DimensionError("tensor " + name + " has shape " + shape_to_string(loaded.shape()) + ", config implies " +
                           shape_to_string(t.shape()));
    }
    t = std::move(loaded);
  });
  return m;
}

template void save_model(const model::ToyViT<float>&, const std::filesystem::path&, const std::string&);
template void save_model(const model::ToyViT<double>&, const std::filesystem::path&, const std::string&);
template model::ToyViT<float> load_model(const std::filesystem::path&, const std::string&);
template model::ToyViT<double> load_model(const std::filesystem::path&, const std::string&);

json to_json(const quant::QuantParams& p) {
  json j = {{"kind", quant::kind_name(p.scheme.kind)},
            {"granularity", quant::granularity_name(p.scheme.granularity)},
            {"bits", p.bits}};
  if (p.is_identity()) return j;
  j["base"] = p.scheme.base;
  j["scale"] = p.scale;
  j["zero_point"] = p.zero_point;
  j["offset"] = p.offset;
  j["degenerate"] = p.degenerate;
  return j;
}

quant::QuantParams quant_params_from_json(const json& j) {
  const auto kind = quant::kind_from_name(j.at("kind").get<std::string>());
  if (kind == quant::Kind::Identity) return quant::QuantParams::identity();
  quant::QuantParams p;
  p.scheme.kind = kind;
  p.scheme.granularity = quant::granularity_from_name(j.at("granularity").get<std::string>());
  p.scheme.base = j.value("base", 2.0);
  p.bits = j.at("bits").get<int>();
  p.scale = j.at("scale").get<std::vector<double>>();
  p.zero_point = j.at("zero_point").get<std::vector<double>>();
  p.offset = j.value("offset", 0.0);
  p.degenerate = j.value("degenerate", std::vector<std::uint8_t>{});
  quant::validate(p);
  return p;
}

json to_json(const model::QuantPlan& plan) {
  json sites = json::array();
  for (const auto& [id, s] : plan.sites) {
    json e = {{"layer", id.name()}};
    if (s.weight) e["weight"] = to_json(*s.weight);
    if (s.input) e["input"] = to_json(*s.input);
    if (s.input_b) e["input_b"] = to_json(*s.input_b);
    sites.push_back(e);
  }
  json crl = json::array();
  for (bool b : plan.crl_blocks) crl.push_back(b);
  return {{"sites", sites}, {"crl_blocks", crl}};
}

model::QuantPlan quant_plan_from_json(const json& j) {
  model::QuantPlan plan;
  for (const auto& e : j.at("sites")) {
    const auto id = model::LayerId::parse(e.at("layer").get<std::string>());
    model::SiteQuant s;
    if (e.contains("weight")) s.weight = quant_params_from_json(e["weight"]);
    if (e.contains("input")) s.input = quant_params_from_json(e["input"]);
    if (e.contains("input_b")) s.input_b = quant_params_from_json(e["input_b"]);
    if (!plan.sites.emplace(id, std::move(s)).second) throw ConfigError("layer listed twice in plan: " + id.name());
  }
  for (const auto& b : j.value("crl_blocks", json::array())) plan.crl_blocks.push_back(b.get<bool>());
  return plan;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace mixq::io
