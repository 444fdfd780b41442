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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixq/model.hpp"
#include "mixq/tensor.hpp"

namespace mixq::io {

using json = nlohmann::json;

enum class DType { F32, F64, I32 };

const char* dtype_name(DType t) noexcept;
DType dtype_from_name(const std::string& s);
std::size_t dtype_size(DType t) noexcept;

/// Named tensors stored as a UTF-8 JSON manifest (`<stem>.json`: name, shape,
/// dtype, byte offset per entry, plus free-form metadata) and one raw
/// little-endian blob (`<stem>.bin`) holding the tensors back to back in
/// manifest order. Round trips are bit-exact.
class TensorArchive {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    DType dtype = DType::F64;
    std::vector<std::uint8_t> bytes;
  };

  void add(const std::string& name, const Tensor<float>& t);
  void add(const std::string& name, const Tensor<double>& t);
  void add(const std::string& name, const Tensor<std::int32_t>& t);

  bool contains(const std::string& name) const;
  const Entry& entry(const std::string& name) const;
  /// Converts from the stored element type when it differs.
  template <typename T>
  Tensor<T> get(const std::string& name) const;

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  json& meta() noexcept { return meta_; }
  const json& meta() const noexcept { return meta_; }

  void save(const std::filesystem::path& dir, const std::string& stem) const;
  static TensorArchive load(const std::filesystem::path& dir, const std::string& stem);
  static bool exists(const std::filesystem::path& dir, const std::string& stem);

 private:
  std::vector<Entry> entries_;
  json meta_ = json::object();
};

json to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const json& j);

/// Model weights in double precision with the config in the manifest metadata.
template <typename T>
void save_model(const model::ToyViT<T>& m, const std::filesystem::path& dir, const std::string& stem);
template <typename T>
model::ToyViT<T> load_model(const std::filesystem::path& dir, const std::string& stem);

json to_json(const quant::QuantParams& p);
quant::QuantParams quant_params_from_json(const json& j);

json to_json(const model::QuantPlan& p);
model::QuantPlan quant_plan_from_json(const json& j);

/// FNV-1a 64-bit over the bytes of `text`, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& text);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace mixq::io
