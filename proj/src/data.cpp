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

#include "mixq/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "mixq/io.hpp"

namespace mixq::data {

template <typename T>
Dataset<T> Dataset<T>::subset(const std::vector<std::size_t>& indices) const {
  const std::size_t per = images.size() / std::max<std::size_t>(size(), 1);
  Shape shape = images.shape();
  shape[0] = indices.size();
  std::vector<T> v;
  v.reserve(indices.size() * per);
  Dataset<T> out;
  for (std::size_t i : indices) {
    if (i >= size()) throw DimensionError("subset index out of range");
    v.insert(v.end(), images.ptr() + i * per, images.ptr() + (i + 1) * per);
    out.labels.push_back(labels[i]);
  }
  out.images = Tensor<T>(shape, std::move(v));
  return out;
}

template <typename T>
template <typename U>
Dataset<U> Dataset<T>::cast() const {
  return Dataset<U>{images.template cast<U>(), labels};
}

void SynthConfig::validate() const {
  if (train == 0 || eval == 0) throw ConfigError("dataset splits must be non-empty");
  if (blobs < 1) throw ConfigError("synthetic classes need at least one blob");
  if (!(jitter >= 0) || !(noise >= 0)) throw ConfigError("jitter and noise must be non-negative");
}

namespace {

struct Blob {
  double cy, cx, sigma;
  std::vector<double> amp;  // per channel
};

}  // namespace

Splits synthesize(const model::ModelConfig& mc, const SynthConfig& cfg, std::uint64_t seed) {
  mc.validate();
  cfg.validate();
  const std::size_t hw = mc.image_size, ch = mc.channels;
  std::mt19937_64 rng(seed ^ 0x5eedda7aULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<Blob>> protos(mc.classes);
  for (auto& p : protos) {
    for (int k = 0; k < cfg.blobs; ++k) {
      Blob b;
      b.cy = 1.0 + unit(rng) * (hw - 2.0);
      b.cx = 1.0 + unit(rng) * (hw - 2.0);
      b.sigma = 1.0 + 2.0 * unit(rng);
      for (std::size_t c = 0; c < ch; ++c) b.amp.push_back(2.0 * unit(rng) - 1.0);
      p.push_back(std::move(b));
    }
  }

  auto make = [&](std::size_t n) {
    Dataset<double> d;
    d.images = Tensor<double>(Shape{n, hw, hw, ch});
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % mc.classes);
      d.labels[i] = label;
      double* img = d.images.ptr() + i * hw * hw * ch;
      for (const Blob& b : protos[label]) {
        const double cy = b.cy + cfg.jitter * normal(rng), cx = b.cx + cfg.jitter * normal(rng);
        const double gain = 1.0 + 0.2 * normal(rng);
        const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
        for (std::size_t y = 0; y < hw; ++y)
          for (std::size_t x = 0; x < hw; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            const double g = gain * std::exp(-(dy * dy + dx * dx) * inv);
            for (std::size_t c = 0; c < ch; ++c) img[(y * hw + x) * ch + c] += g * b.amp[c];
          }
      }
      for (std::size_t e = 0; e < hw * hw * ch; ++e) img[e] += cfg.noise * normal(rng);
    }
    return d;
  };
  Splits s;
  s.train = make(cfg.train);
  s.eval = make(cfg.eval);
  return s;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, std::uint64_t seed) {
  if (count > n) throw ConfigError("cannot draw " + std::to_string(count) + " distinct samples out of " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates with an explicit draw so the result does not depend on the library's shuffle.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

void save_splits(const Splits& s, const std::filesystem::path& dir, const std::string& stem) {
  io::TensorArchive a;
  a.meta()["kind"] = "dataset";
  a.add("train.images", s.train.images);
  a.add("train.labels", Tensor<std::int32_t>(Shape{s.train.size()}, s.train.labels));
  a.add("eval.images", s.eval.images);
  a.add("eval.labels", Tensor<std::int32_t>(Shape{s.eval.size()}, s.eval.labels));
  a.save(dir, stem);
}

Splits load_splits(const std::filesystem::path& dir, const std::string& stem) {
  const auto a = io::TensorArchive::load(dir, stem);
  if (a.meta().value("kind", "") != "dataset") throw ConfigError("archive " + stem + " does not hold a dataset");
  Splits s;
  s.train.images = a.get<double>("train.images");
  s.train.labels = a.get<std::int32_t>("train.labels").values();
  s.eval.images = a.get<double>("eval.images");
  s.eval.labels = a.get<std::int32_t>("eval.labels").values();
  for (const auto* d : {&s.train, &s.eval}) {
    if (d->images.rank() != 4 || d->images.dim(0) != d->labels.size()) {
      throw DimensionError("dataset images and labels disagree: " + shape_to_string(d->images.shape()));
    }
  }
  return s;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch == 0) throw ConfigError("batch size must be positive");
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
}

template <typename T>
TrainLog train(model::ToyViT<T>& m, const Dataset<T>& data, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = data.size(), classes = m.config.classes;
  if (n == 0) throw ConfigError("training set is empty");

  std::map<std::string, Tensor<double>> mom1, mom2, grad;
  m.for_each_tensor([&](const std::string& name, const Tensor<T>& t) {
    mom1.emplace(name, Tensor<double>(t.shape()));
    mom2.emplace(name, Tensor<double>(t.shape()));
    grad.emplace(name, Tensor<double>(t.shape()));
  });

  model::ForwardOptions<T> opt;
  opt.params_require_grad = true;
  TrainLog log;
  std::uint64_t step = 0;
  std::mt19937_64 rng(seed ^ 0x7a1a7a1aULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t stop = std::min(n, start + cfg.batch);
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      for (auto& [name, g] : grad) std::fill(g.data().begin(), g.data().end(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t idx = order[k];
        const auto tr = model::trace_sample(m, model::image_at(data.images, idx), model::QuantPlan{}, opt);
        const auto& z = tr.graph.value(tr.logits);
        double mx = static_cast<double>(z[0]);
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, static_cast<double>(z[j]));
        double se = 0;
        for (std::size_t j = 0; j < classes; ++j) se += std::exp(static_cast<double>(z[j]) - mx);
        const auto label = static_cast<std::size_t>(data.labels[idx]);
        loss_sum += -(static_cast<double>(z[label]) - mx - std::log(se));
        std::size_t pred = 0;
        for (std::size_t j = 1; j < classes; ++j)
          if (z[j] > z[pred]) pred = j;
        correct += pred == label;
        Tensor<T> seed_grad(z.shape());
        for (std::size_t j = 0; j < classes; ++j) {
          const double p = std::exp(static_cast<double>(z[j]) - mx) / se;
          seed_grad[j] = static_cast<T>((p - (j == label ? 1.0 : 0.0)) * inv_b);
        }
        const auto grads = tr.graph.backward(tr.logits, seed_grad);
        for (const auto& [name, v] : tr.params) {
          if (!grads.has(v)) continue;
          auto& acc = grad.at(name);
          const auto& g = grads[v];
          for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += static_cast<double>(g[e]);
        }
      }
      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      m.for_each_tensor([&](const std::string& name, Tensor<T>& w) {
        auto& g = grad.at(name);
        auto& a = mom1.at(name);
        auto& b = mom2.at(name);
        for (std::size_t e = 0; e < w.size(); ++e) {
          a[e] = cfg.beta1 * a[e] + (1.0 - cfg.beta1) * g[e];
          b[e] = cfg.beta2 * b[e] + (1.0 - cfg.beta2) * g[e] * g[e];
          const double upd = cfg.lr * (a[e] / c1) / (std::sqrt(b[e] / c2) + cfg.eps);
          w[e] = static_cast<T>(static_cast<double>(w[e]) - upd);
        }
      });
    }
    log.epoch_loss.push_back(loss_sum / static_cast<double>(n));
    log.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(n));
  }
  return log;
}

template <typename T>
double accuracy(const model::ToyViT<T>& m, const Dataset<T>& data) {
  const auto res = model::forward(m, data.images, model::QuantPlan{});
  const std::size_t c = m.config.classes;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::size_t pred = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (res.logits[i * c + j] > res.logits[i * c + pred]) pred = j;
    correct += pred == static_cast<std::size_t>(data.labels[i]);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

template struct Dataset<float>;
template struct Dataset<double>;
template Dataset<float> Dataset<double>::cast<float>() const;
template Dataset<double> Dataset<double>::cast<double>() const;
template Dataset<double> Dataset<float>::cast<double>() const;
template TrainLog train(model::ToyViT<float>&, const Dataset<float>&, const TrainConfig&, std::uint64_t);
template TrainLog train(model::ToyViT<double>&, const Dataset<double>&, const TrainConfig&, std::uint64_t);
template double accuracy(const model::ToyViT<float>&, const Dataset<float>&);
template double accuracy(const model::ToyViT<double>&, const Dataset<double>&);

}  // namespace mixq::data
