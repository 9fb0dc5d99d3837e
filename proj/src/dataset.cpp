// SPDX-License-Identifier: Apache-2.0

#include "avp/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "avp/rng.hpp"
#include "avp/tensor_io.hpp"

namespace avp::data {
namespace {

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::string video_key(std::size_t index, const char* field) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "video%05zu/%s", index, field);
  return buf;
}

io::NamedTensor matrix_tensor(std::string name, const BinaryMatrix& m) {
  io::NamedTensor t;
  t.name = std::move(name);
  t.shape = {m.rows, m.cols};
  t.values.assign(m.v.begin(), m.v.end());
  return t;
}

BinaryMatrix tensor_matrix(const io::NamedTensor& t) {
  if (t.shape.size() != 2) throw std::runtime_error("dataset: '" + t.name + "' is not a matrix");
  BinaryMatrix m(t.shape[0], t.shape[1]);
  for (std::size_t i = 0; i < t.values.size(); ++i) m.v[i] = t.values[i] != 0.0 ? 1 : 0;
  return m;
}

}  // namespace

void DatasetManifest::validate() const {
  const std::size_t c = class_names.size();
  if (c == 0) throw std::invalid_argument("manifest: needs at least one class");
  if (c > 64) throw std::invalid_argument("manifest: at most 64 classes supported");
  std::set<std::string> uniq(class_names.begin(), class_names.end());
  if (uniq.size() != c) throw std::invalid_argument("manifest: duplicate class names");
  for (const std::string& n : class_names) {
    if (n.empty()) throw std::invalid_argument("manifest: empty class name");
  }
  if (segments == 0) throw std::invalid_argument("manifest: segments must be positive");
  if (dim == 0) throw std::invalid_argument("manifest: dim must be positive");
  if (c > dim) throw std::invalid_argument("manifest: needs dim >= classes for prototypes");
  if (videos == 0) throw std::invalid_argument("manifest: videos must be positive");
  if (feature_noise < 0.0) throw std::invalid_argument("manifest: feature_noise must be >= 0");
  if (flip_rate < 0.0 || flip_rate > 1.0) {
    throw std::invalid_argument("manifest: flip_rate must be in [0, 1]");
  }
}

nlohmann::ordered_json DatasetManifest::to_json() const {
  nlohmann::ordered_json j;
  j["class_names"] = class_names;
  j["segments"] = segments;
  j["dim"] = dim;
  j["videos"] = videos;
  j["feature_noise"] = feature_noise;
  j["flip_rate"] = flip_rate;
  j["seed"] = seed;
  return j;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"class_names", "segments", "dim",      "videos",
                                              "feature_noise", "flip_rate", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw std::invalid_argument("manifest: unknown key '" + it.key() + "'");
    }
  }
  DatasetManifest m;
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  m.segments = j.at("segments").get<std::size_t>();
  m.dim = j.at("dim").get<std::size_t>();
  m.videos = j.at("videos").get<std::size_t>();
  m.feature_noise = j.at("feature_noise").get<double>();
  m.flip_rate = j.at("flip_rate").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.validate();
  return m;
}

std::uint64_t DatasetManifest::hash() const { return hash_bytes(to_json().dump()); }

std::vector<std::string> default_class_names(std::size_t count) {
  std::vector<std::string> names;
  names.reserve(count);
  for (std::size_t i = 0; i < count; ++i) names.push_back("Class" + std::to_string(i));
  return names;
}

std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>> feature_prototypes(
    const DatasetManifest& m) {
  m.validate();
  auto build = [&m](const char* tag) {
    auto eng = make_engine(m.seed, tag);
    const std::size_t c = m.num_classes(), d = m.dim;
    std::vector<std::vector<double>> protos(c, std::vector<double>(d));
    // Gram-Schmidt over seeded Gaussian draws.
    for (std::size_t i = 0; i < c; ++i) {
      auto& p = protos[i];
      while (true) {
        for (double& x : p) x = normal(eng);
        for (std::size_t j = 0; j < i; ++j) {
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) dot += p[k] * protos[j][k];
          for (std::size_t k = 0; k < d; ++k) p[k] -= dot * protos[j][k];
        }
        double norm2 = 0.0;
        for (double x : p) norm2 += x * x;
        if (norm2 > 1e-8) {
          const double inv = 1.0 / std::sqrt(norm2);
          for (double& x : p) x = to_f32(x * inv);
          break;
        }
      }
    }
    return protos;
  };
  return {build("proto-audio"), build("proto-visual")};
}

std::vector<VideoSample> generate_dataset(const DatasetManifest& m) {
  m.validate();
  const std::size_t t_len = m.segments, d = m.dim, c_len = m.num_classes();
  const auto [proto_a, proto_v] = feature_prototypes(m);

  std::vector<VideoSample> out;
  out.reserve(m.videos);
  for (std::size_t vid = 0; vid < m.videos; ++vid) {
    auto eng = make_engine(m.seed, "video", vid);
    VideoSample s;
    s.gt_audio = BinaryMatrix(t_len, c_len);
    s.gt_visual = BinaryMatrix(t_len, c_len);
    s.pseudo_audio = BinaryMatrix(t_len, c_len);
    s.pseudo_visual = BinaryMatrix(t_len, c_len);
    s.weak.assign(c_len, 0);

    const std::size_t n_events = 1 + bounded(eng, 3);
    for (std::size_t e = 0; e < n_events; ++e) {
      const std::size_t cls = bounded(eng, c_len);
      // 0 audio-only, 1 visual-only, 2 both; events usually live in both
      // modalities, with independently drawn (possibly asynchronous) spans.
      const double pattern_draw = uniform_unit(eng);
      const std::size_t pattern = pattern_draw <= 0.05 ? 0 : (pattern_draw <= 0.1 ? 1 : 2);
      auto span = [&eng, t_len] {
        const std::size_t min_len = (3 * t_len + 2) / 5;
        const std::size_t start = bounded(eng, t_len - min_len + 1);
        const std::size_t len = min_len + bounded(eng, t_len - start - min_len + 1);
        return std::pair<std::size_t, std::size_t>{start, start + len - 1};
      };
      if (pattern == 0 || pattern == 2) {
        auto [a0, a1] = span();
        for (std::size_t t = a0; t <= a1; ++t) s.gt_audio.set(t, cls, 1);
      }
      if (pattern == 1 || pattern == 2) {
        auto [v0, v1] = span();  // drawn separately: modalities may be asynchronous
        for (std::size_t t = v0; t <= v1; ++t) s.gt_visual.set(t, cls, 1);
      }
      s.weak[cls] = 1;
    }

    auto fill_features = [&](const BinaryMatrix& gt, const std::vector<std::vector<double>>& protos) {
      std::vector<double> feat(t_len * d, 0.0);
      for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t c = 0; c < c_len; ++c) {
          if (!gt.at(t, c)) continue;
          for (std::size_t k = 0; k < d; ++k) feat[t * d + k] += protos[c][k];
        }
        for (std::size_t k = 0; k < d; ++k) {
          feat[t * d + k] = to_f32(feat[t * d + k] + m.feature_noise * normal(eng));
        }
      }
      return Tensor::from_data({t_len, d}, std::move(feat));
    };
    s.audio = fill_features(s.gt_audio, proto_a);
    s.visual = fill_features(s.gt_visual, proto_v);

    auto flip = [&](const BinaryMatrix& gt, BinaryMatrix& pseudo) {
      for (std::size_t i = 0; i < gt.v.size(); ++i) {
        const bool flipped = uniform_unit(eng) <= m.flip_rate;
        pseudo.v[i] = flipped ? (gt.v[i] ? 0 : 1) : gt.v[i];
      }
    };
    flip(s.gt_audio, s.pseudo_audio);
    flip(s.gt_visual, s.pseudo_visual);

    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const DatasetManifest& m, const std::vector<VideoSample>& samples,
                  const std::string& prefix) {
  if (samples.size() != m.videos) {
    throw std::invalid_argument("save_dataset: sample count does not match manifest");
  }
  {
    std::ofstream f(prefix + ".json", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + prefix + ".json' for writing");
    f << m.to_json().dump(2) << '\n';
  }
  std::vector<io::NamedTensor> tensors;
  tensors.reserve(samples.size() * 7);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const VideoSample& s = samples[i];
    tensors.push_back({video_key(i, "audio"), s.audio.shape(), s.audio.data()});
    tensors.push_back({video_key(i, "visual"), s.visual.shape(), s.visual.data()});
    tensors.push_back(matrix_tensor(video_key(i, "gt_a"), s.gt_audio));
    tensors.push_back(matrix_tensor(video_key(i, "gt_v"), s.gt_visual));
    tensors.push_back(matrix_tensor(video_key(i, "pseudo_a"), s.pseudo_audio));
    tensors.push_back(matrix_tensor(video_key(i, "pseudo_v"), s.pseudo_visual));
    io::NamedTensor weak;
    weak.name = video_key(i, "weak");
    weak.shape = {s.weak.size()};
    weak.values.assign(s.weak.begin(), s.weak.end());
    tensors.push_back(std::move(weak));
  }
  io::write_container_file(prefix + ".bin", tensors);
}

Dataset load_dataset(const std::string& prefix) {
  Dataset ds;
  {
    std::ifstream f(prefix + ".json");
    if (!f) throw std::runtime_error("cannot open '" + prefix + ".json'");
    nlohmann::json j;
    f >> j;
    ds.manifest = DatasetManifest::from_json(j);
  }
  const auto tensors = io::read_container_file(prefix + ".bin");
  const std::size_t per_video = 7;
  if (tensors.size() != ds.manifest.videos * per_video) {
    throw std::runtime_error("dataset: expected " + std::to_string(ds.manifest.videos * per_video) +
                             " tensors, found " + std::to_string(tensors.size()));
  }
  ds.samples.resize(ds.manifest.videos);
  for (std::size_t i = 0; i < ds.manifest.videos; ++i) {
    const io::NamedTensor* fields[per_video];
    for (std::size_t k = 0; k < per_video; ++k) {
      const io::NamedTensor& t = tensors[i * per_video + k];
      if (t.name.rfind(video_key(i, ""), 0) != 0) {
        throw std::runtime_error("dataset: unexpected tensor '" + t.name + "'");
      }
      fields[k] = &t;
    }
    VideoSample& s = ds.samples[i];
    s.audio = Tensor::from_data(fields[0]->shape, fields[0]->values);
    s.visual = Tensor::from_data(fields[1]->shape, fields[1]->values);
    s.gt_audio = tensor_matrix(*fields[2]);
    s.gt_visual = tensor_matrix(*fields[3]);
    s.pseudo_audio = tensor_matrix(*fields[4]);
    s.pseudo_visual = tensor_matrix(*fields[5]);
    s.weak.assign(fields[6]->values.size(), 0);
    for (std::size_t c = 0; c < s.weak.size(); ++c) s.weak[c] = fields[6]->values[c] != 0.0;
    if (s.audio.shape() != std::vector<std::size_t>{ds.manifest.segments, ds.manifest.dim} ||
        s.gt_audio.cols != ds.manifest.num_classes()) {
      throw std::runtime_error("dataset: tensor shapes disagree with manifest");
    }
  }
  return ds;
}

}  // namespace avp::data
