// SPDX-License-Identifier: Apache-2.0

#include "avp/model.hpp"

#include <set>
#include <stdexcept>

#include "avp/rng.hpp"

namespace avp::model {
namespace {

void check_known_keys(const nlohmann::json& j, const std::set<std::string>& known,
                      const char* what) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw std::invalid_argument(std::string(what) + ": unknown key '" + it.key() + "'");
    }
  }
}

}  // namespace

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["dim"] = dim;
  j["hidden"] = hidden;
  j["heads"] = heads;
  j["gat_layers"] = gat_layers;
  j["k_audio"] = k_audio;
  j["k_visual"] = k_visual;
  j["dropout"] = dropout;
  j["threshold"] = threshold;
  j["text_seed"] = text_seed;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  check_known_keys(j,
                   {"dim", "hidden", "heads", "gat_layers", "k_audio", "k_visual", "dropout",
                    "threshold", "text_seed"},
                   "model config");
  ModelConfig c;
  if (j.contains("dim")) c.dim = j.at("dim").get<std::size_t>();
  if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::size_t>();
  if (j.contains("heads")) c.heads = j.at("heads").get<std::size_t>();
  if (j.contains("gat_layers")) c.gat_layers = j.at("gat_layers").get<std::size_t>();
  if (j.contains("k_audio")) c.k_audio = j.at("k_audio").get<std::size_t>();
  if (j.contains("k_visual")) c.k_visual = j.at("k_visual").get<std::size_t>();
  if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
  if (j.contains("threshold")) c.threshold = j.at("threshold").get<double>();
  if (j.contains("text_seed")) c.text_seed = j.at("text_seed").get<std::uint64_t>();
  return c;
}

nlohmann::ordered_json AblationFlags::to_json() const {
  nlohmann::ordered_json j;
  j["no_te"] = no_te;
  j["no_mtg"] = no_mtg;
  return j;
}

AblationFlags AblationFlags::from_json(const nlohmann::json& j) {
  check_known_keys(j, {"no_te", "no_mtg"}, "ablation flags");
  AblationFlags f;
  if (j.contains("no_te")) f.no_te = j.at("no_te").get<bool>();
  if (j.contains("no_mtg")) f.no_mtg = j.at("no_mtg").get<bool>();
  return f;
}

ModelParams::ModelParams(const ModelConfig& config, const data::DatasetManifest& manifest,
                         std::uint64_t seed)
    : cfg(config),
      class_names(manifest.class_names),
      embedder(manifest.num_classes(), config.dim, config.text_seed) {
  if (cfg.dim != manifest.dim) {
    throw std::invalid_argument("model: config dim " + std::to_string(cfg.dim) +
                                " does not match dataset dim " + std::to_string(manifest.dim));
  }
  if (cfg.heads == 0 || cfg.gat_layers == 0) {
    throw std::invalid_argument("model: heads and gat_layers must be positive");
  }
  auto eng = make_engine(seed, "init");
  const std::size_t d = cfg.dim;
  fuse_audio = text::init_fusion_params(d, cfg.fusion_hidden(), eng);
  fuse_visual = text::init_fusion_params(d, cfg.fusion_hidden(), eng);
  agg = attn::init_hybrid_attn(d, eng);
  mtg_audio = graph::init_stream(d, cfg.k_audio, cfg.heads, cfg.gat_layers, cfg.dropout, eng);
  mtg_visual = graph::init_stream(d, cfg.k_visual, cfg.heads, cfg.gat_layers, cfg.dropout, eng);
  head = mmil::init_mmil(d, manifest.num_classes(), eng);

  // The mixing payloads start at zero, so the stack opens as an exact
  // pass-through (up to batch norm): segment-local evidence stays readable
  // and cross-segment context grows only where the loss asks for it.
  auto zero = [](Tensor& t) { t.set_data(std::vector<double>(t.size(), 0.0)); };
  for (attn::ModalityAttnParams* m : {&agg.audio, &agg.visual}) {
    zero(m->self_v);
    zero(m->cross_v);
  }
  for (graph::StreamParams* s : {&mtg_audio, &mtg_visual}) {
    for (graph::GatLayerParams& layer : s->layers) {
      for (Tensor& w : layer.head_w) zero(w);
    }
    zero(s->global.w2);
  }

  for (auto& [name, tensor] : named_parameters()) tensor.round_to_f32();
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  auto fusion = [&out](const std::string& prefix, text::FusionParams& p) {
    out.emplace_back(prefix + ".w1", p.w1);
    out.emplace_back(prefix + ".b1", p.b1);
    out.emplace_back(prefix + ".w2", p.w2);
    out.emplace_back(prefix + ".b2", p.b2);
    out.emplace_back(prefix + ".ln_gain", p.ln_gain);
    out.emplace_back(prefix + ".ln_bias", p.ln_bias);
    out.emplace_back(prefix + ".proj_w", p.proj_w);
    out.emplace_back(prefix + ".proj_b", p.proj_b);
  };
  fusion("fusion.audio", fuse_audio);
  fusion("fusion.visual", fuse_visual);

  auto attention = [&out](const std::string& prefix, attn::ModalityAttnParams& p) {
    out.emplace_back(prefix + ".self_q", p.self_q);
    out.emplace_back(prefix + ".self_k", p.self_k);
    out.emplace_back(prefix + ".self_v", p.self_v);
    out.emplace_back(prefix + ".cross_q", p.cross_q);
    out.emplace_back(prefix + ".cross_k", p.cross_k);
    out.emplace_back(prefix + ".cross_v", p.cross_v);
  };
  attention("agg.audio", agg.audio);
  attention("agg.visual", agg.visual);

  auto stream = [&out](const std::string& prefix, graph::StreamParams& p) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const std::string lp = prefix + ".layer" + std::to_string(l);
      for (std::size_t h = 0; h < p.layers[l].head_w.size(); ++h) {
        out.emplace_back(lp + ".head" + std::to_string(h) + ".w", p.layers[l].head_w[h]);
        out.emplace_back(lp + ".head" + std::to_string(h) + ".a", p.layers[l].head_a[h]);
      }
      out.emplace_back(lp + ".bn_gain", p.layers[l].bn_gain);
      out.emplace_back(lp + ".bn_bias", p.layers[l].bn_bias);
    }
    out.emplace_back(prefix + ".global.w1", p.global.w1);
    out.emplace_back(prefix + ".global.b1", p.global.b1);
    out.emplace_back(prefix + ".global.w2", p.global.w2);
    out.emplace_back(prefix + ".global.b2", p.global.b2);
  };
  stream("mtg.audio", mtg_audio);
  stream("mtg.visual", mtg_visual);

  out.emplace_back("head.cls_w_a", head.cls_w_a);
  out.emplace_back("head.cls_b_a", head.cls_b_a);
  out.emplace_back("head.cls_w_v", head.cls_w_v);
  out.emplace_back("head.cls_b_v", head.cls_b_v);
  out.emplace_back("head.tattn_w", head.tattn_w);
  out.emplace_back("head.tattn_b", head.tattn_b);
  out.emplace_back("head.mattn_w", head.mattn_w);
  out.emplace_back("head.mattn_b", head.mattn_b);
  return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> ModelParams::named_state() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  auto stream = [&out](const std::string& prefix, graph::StreamParams& p) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const std::string lp = prefix + ".layer" + std::to_string(l);
      out.emplace_back(lp + ".bn_mean", &p.layers[l].bn_state.running_mean);
      out.emplace_back(lp + ".bn_var", &p.layers[l].bn_state.running_var);
    }
  };
  stream("mtg.audio", mtg_audio);
  stream("mtg.visual", mtg_visual);
  return out;
}

void ModelParams::round_state_to_f32() {
  for (auto& [name, vec] : named_state()) {
    for (double& v : *vec) v = static_cast<double>(static_cast<float>(v));
  }
}

Batch make_batch(const data::Dataset& ds, const std::vector<std::size_t>& indices,
                 const ModelParams& params, bool with_text) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
  const std::size_t t_len = ds.manifest.segments;
  const std::size_t c_len = ds.manifest.num_classes();

  Batch batch;
  batch.indices = indices;
  std::vector<Tensor> audio, visual;
  std::vector<double> weak;
  audio.reserve(indices.size());
  visual.reserve(indices.size());
  weak.reserve(indices.size() * c_len);
  for (std::size_t idx : indices) {
    const data::VideoSample& s = ds.samples.at(idx);
    audio.push_back(s.audio);
    visual.push_back(s.visual);
    for (std::size_t c = 0; c < c_len; ++c) weak.push_back(s.weak[c]);
  }
  batch.audio = stack(audio, 0);
  batch.visual = stack(visual, 0);
  batch.weak = Tensor::from_data({indices.size(), c_len}, std::move(weak));

  if (with_text) {
    const std::size_t d = params.cfg.dim;
    auto embed_matrix = [&](const BinaryMatrix& pseudo, text::Modality modality,
                            std::vector<double>& dst) {
      std::vector<std::uint8_t> row(c_len);
      for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t c = 0; c < c_len; ++c) row[c] = pseudo.at(t, c);
        const auto desc = text::render_text(row, params.class_names, modality);
        const auto e = params.embedder.embed(desc);
        dst.insert(dst.end(), e.begin(), e.end());
      }
    };
    std::vector<double> ta, tv;
    ta.reserve(indices.size() * t_len * d);
    tv.reserve(indices.size() * t_len * d);
    for (std::size_t idx : indices) {
      const data::VideoSample& s = ds.samples.at(idx);
      embed_matrix(s.pseudo_audio, text::Modality::Audio, ta);
      embed_matrix(s.pseudo_visual, text::Modality::Visual, tv);
    }
    batch.text_audio = Tensor::from_data({indices.size(), t_len, d}, std::move(ta));
    batch.text_visual = Tensor::from_data({indices.size(), t_len, d}, std::move(tv));
  }
  return batch;
}

ForwardOut forward(ModelParams& params, const Batch& batch, const AblationFlags& flags, Mode mode,
                   std::mt19937_64& eng) {
  Tensor fa = batch.audio;
  Tensor fv = batch.visual;
  if (!flags.no_te) {
    if (!batch.text_audio.defined() || !batch.text_visual.defined()) {
      throw std::invalid_argument("forward: batch lacks text embeddings");
    }
    fa = text::fuse(fa, batch.text_audio, params.fuse_audio);
    fv = text::fuse(fv, batch.text_visual, params.fuse_visual);
  }
  auto [ha, hv] = attn::hybrid_attend(fa, fv, params.agg);
  if (!flags.no_mtg) {
    auto [ga, gv] = graph::mtg_block(ha, hv, params.mtg_audio, params.mtg_visual, mode, eng);
    ha = ga;
    hv = gv;
  }
  ForwardOut out{mmil::classify_segments(ha, hv, params.head), {}};
  out.preds = mmil::mmil_pool(out.probs, ha, hv, params.head);
  return out;
}

Tensor weak_bce_loss(const mmil::VideoPreds& preds, const Tensor& weak) {
  constexpr double kEps = 1e-7;
  auto bce = [&weak](const Tensor& p) {
    Tensor pc = clamp(p, kEps, 1.0 - kEps);
    Tensor pos = mul(weak, log(pc));
    Tensor neg =
        mul(sub_from_scalar(1.0, weak), log(clamp(sub_from_scalar(1.0, p), kEps, 1.0 - kEps)));
    return scale(mean_all(add(pos, neg)), -1.0);
  };
  return add(bce(preds.audio), add(bce(preds.visual), bce(preds.joint)));
}

std::vector<std::pair<Tensor, Tensor>> predict_probs(ModelParams& params, const data::Dataset& ds,
                                                     const AblationFlags& flags,
                                                     std::size_t batch_size) {
  std::vector<std::pair<Tensor, Tensor>> out;
  out.reserve(ds.samples.size());
  auto eng = make_engine(0, "eval");  // unused: eval mode draws nothing
  for (std::size_t begin = 0; begin < ds.samples.size(); begin += batch_size) {
    const std::size_t end = std::min(ds.samples.size(), begin + batch_size);
    std::vector<std::size_t> indices(end - begin);
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = begin + i;
    Batch batch = make_batch(ds, indices, params, !flags.no_te);
    ForwardOut f = forward(params, batch, flags, Mode::Eval, eng);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out.emplace_back(index_axis(f.probs.audio, 0, i), index_axis(f.probs.visual, 0, i));
    }
  }
  return out;
}

std::vector<VideoLabels> predict_labels(ModelParams& params, const data::Dataset& ds,
                                        const AblationFlags& flags, std::size_t batch_size) {
  const double threshold = params.cfg.threshold;
  const auto probs = predict_probs(params, ds, flags, batch_size);
  std::vector<VideoLabels> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    auto to_matrix = [threshold](const Tensor& p) {
      BinaryMatrix m(p.extent(0), p.extent(1));
      for (std::size_t j = 0; j < p.size(); ++j) m.v[j] = p.data()[j] >= threshold ? 1 : 0;
      return m;
    };
    out[i] = {to_matrix(probs[i].first), to_matrix(probs[i].second)};
  }
  return out;
}

std::vector<VideoLabels> gt_labels(const data::Dataset& ds) {
  std::vector<VideoLabels> out;
  out.reserve(ds.samples.size());
  for (const data::VideoSample& s : ds.samples) out.push_back({s.gt_audio, s.gt_visual});
  return out;
}

}  // namespace avp::model
