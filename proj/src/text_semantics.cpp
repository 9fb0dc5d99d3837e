// SPDX-License-Identifier: Apache-2.0

#include "avp/text_semantics.hpp"

#include <cmath>
#include <stdexcept>

#include "avp/rng.hpp"

namespace avp::text {
namespace {

std::vector<double> unit_gaussian(std::size_t dim, std::mt19937_64 eng) {
  std::vector<double> v(dim);
  double norm2 = 0.0;
  for (double& x : v) {
    x = normal(eng);
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

// Orthonormalizes `v` against the accepted prototypes; class identities stay
// linearly separable in sums of prototypes.
bool orthonormalize(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
  for (const auto& b : basis) {
    double dot = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * b[i];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * b[i];
  }
  double norm2 = 0.0;
  for (double x : v) norm2 += x * x;
  if (norm2 <= 1e-8) return false;
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return true;
}

}  // namespace

TextDescription render_text(const std::vector<std::uint8_t>& label,
                            const std::vector<std::string>& class_names, Modality modality) {
  if (label.size() != class_names.size()) {
    throw std::invalid_argument("render_text: label length does not match class-name list");
  }
  TextDescription out;
  out.modality = modality;
  for (std::size_t c = 0; c < label.size(); ++c) {
    if (label[c]) out.classes.push_back(c);
  }
  const bool audio = modality == Modality::Audio;
  if (out.classes.empty()) {
    out.sentence = audio ? "There is no sound in the segment" : "There is no event in the image";
    return out;
  }
  std::string head = audio ? "This is the sound of " : "This is the image of ";
  if (out.classes.size() == 1) {
    out.sentence =
        head + class_names[out.classes[0]] + (audio ? " audio event" : " visual event");
    return out;
  }
  out.sentence = head;
  for (std::size_t i = 0; i < out.classes.size(); ++i) {
    if (i) out.sentence += " and ";
    out.sentence += class_names[out.classes[i]];
  }
  return out;
}

TextEmbedder::TextEmbedder(std::size_t classes, std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  if (classes > dim) {
    throw std::invalid_argument("TextEmbedder: needs dim >= classes for distinct prototypes");
  }
  prototypes_.reserve(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    std::uint64_t attempt = 0;
    std::vector<double> p;
    do {
      p = unit_gaussian(dim, make_engine(seed, "text-proto", c, attempt++));
    } while (!orthonormalize(p, prototypes_));
    prototypes_.push_back(std::move(p));
  }
  none_audio_ = unit_gaussian(dim, make_engine(seed, "text-none-audio"));
  none_visual_ = unit_gaussian(dim, make_engine(seed, "text-none-visual"));
}

std::vector<double> TextEmbedder::embed(const TextDescription& t) const {
  std::vector<double> acc(dim_, 0.0);
  if (t.classes.empty()) {
    acc = t.modality == Modality::Audio ? none_audio_ : none_visual_;
  } else {
    for (std::size_t c : t.classes) {
      if (c >= prototypes_.size()) {
        throw std::invalid_argument("TextEmbedder: class index out of range");
      }
      for (std::size_t i = 0; i < dim_; ++i) acc[i] += prototypes_[c][i];
    }
  }
  double norm2 = 0.0;
  for (double x : acc) norm2 += x * x;
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : acc) x *= inv;
  return acc;
}

FusionParams init_fusion_params(std::size_t dim, std::size_t hidden, std::mt19937_64& eng) {
  auto xavier = [&eng](std::size_t in, std::size_t out) {
    const double lim = std::sqrt(6.0 / static_cast<double>(in + out));
    return Tensor::uniform({in, out}, eng, -lim, lim, true);
  };
  FusionParams p;
  p.w1 = xavier(2 * dim, hidden);
  p.b1 = Tensor::zeros({hidden}, true);
  p.w2 = xavier(hidden, dim);
  p.b2 = Tensor::zeros({dim}, true);
  p.ln_gain = Tensor::ones({dim}, true);
  p.ln_bias = Tensor::zeros({dim}, true);
  p.proj_w = xavier(dim, dim);
  p.proj_b = Tensor::zeros({dim}, true);
  return p;
}

Tensor fuse(const Tensor& features, const Tensor& text_embed, const FusionParams& params) {
  if (features.shape() != text_embed.shape()) {
    throw std::invalid_argument("fuse: feature shape " + shape_str(features.shape()) +
                                " does not match text embedding shape " +
                                shape_str(text_embed.shape()));
  }
  if (features.shape().back() * 2 != params.w1.extent(0)) {
    throw std::invalid_argument("fuse: params expect feature dim " +
                                std::to_string(params.w1.extent(0) / 2) + ", got " +
                                std::to_string(features.shape().back()));
  }
  Tensor z = concat_lastdim(features, text_embed);
  Tensor h = relu(linear(z, params.w1, params.b1));
  Tensor y = linear(h, params.w2, params.b2);
  Tensor n = layer_norm(y, params.ln_gain, params.ln_bias);
  return linear(n, params.proj_w, params.proj_b);
}

}  // namespace avp::text
