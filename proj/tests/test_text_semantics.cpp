// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "avp/gradcheck.hpp"
#include "avp/rng.hpp"
#include "avp/text_semantics.hpp"

using namespace avp;
using namespace avp::text;

namespace {

const std::vector<std::string> kNames = {"Dog", "Cat", "Speech", "Guitar"};

std::vector<std::uint8_t> label_of(std::initializer_list<std::size_t> classes) {
  std::vector<std::uint8_t> v(kNames.size(), 0);
  for (std::size_t c : classes) v[c] = 1;
  return v;
}

}  // namespace

TEST_SUITE_BEGIN("text_semantics");

TEST_CASE("canonical templates") {
  CHECK(render_text(label_of({0}), kNames, Modality::Audio).sentence ==
        "This is the sound of Dog audio event");
  CHECK(render_text(label_of({0}), kNames, Modality::Visual).sentence ==
        "This is the image of Dog visual event");
  CHECK(render_text(label_of({}), kNames, Modality::Audio).sentence ==
        "There is no sound in the segment");
  CHECK(render_text(label_of({}), kNames, Modality::Visual).sentence ==
        "There is no event in the image");
  CHECK(render_text(label_of({1, 2}), kNames, Modality::Audio).sentence ==
        "This is the sound of Cat and Speech");
  // ascending class order regardless of construction order
  CHECK(render_text(label_of({2, 1}), kNames, Modality::Audio).sentence ==
        "This is the sound of Cat and Speech");
  CHECK(render_text(label_of({0, 1, 3}), kNames, Modality::Visual).sentence ==
        "This is the image of Dog and Cat and Guitar");
}

TEST_CASE("render_text is injective over non-empty label sets") {
  std::set<std::string> seen;
  std::size_t total = 0;
  for (std::size_t bits = 1; bits < 16; ++bits) {
    std::vector<std::uint8_t> label(4, 0);
    for (std::size_t c = 0; c < 4; ++c) label[c] = (bits >> c) & 1;
    seen.insert(render_text(label, kNames, Modality::Audio).sentence);
    ++total;
  }
  CHECK(seen.size() == total);
}

TEST_CASE("embeddings are deterministic, unit norm, distinct for empty templates") {
  TextEmbedder emb(4, 32, 2024);
  const auto d1 = render_text(label_of({0, 2}), kNames, Modality::Audio);
  const auto e1 = emb.embed(d1);
  const auto e2 = emb.embed(d1);
  CHECK(e1 == e2);

  double norm2 = 0.0;
  for (double v : e1) norm2 += v * v;
  CHECK(norm2 == doctest::Approx(1.0).epsilon(1e-9));

  const auto ea = emb.embed(render_text(label_of({}), kNames, Modality::Audio));
  const auto ev = emb.embed(render_text(label_of({}), kNames, Modality::Visual));
  CHECK(ea != ev);
}

TEST_CASE("multi-class embedding equals the normalized prototype sum") {
  TextEmbedder emb(4, 24, 7);
  const auto got = emb.embed(render_text(label_of({1, 3}), kNames, Modality::Visual));
  std::vector<double> want(24, 0.0);
  for (std::size_t i = 0; i < 24; ++i) want[i] = emb.prototype(1)[i] + emb.prototype(3)[i];
  double norm2 = 0.0;
  for (double v : want) norm2 += v * v;
  for (double& v : want) v /= std::sqrt(norm2);
  for (std::size_t i = 0; i < 24; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("fuse with zero MLP weights collapses to the projection of the bias") {
  const std::size_t d = 3, m = 2;
  FusionParams p;
  p.w1 = Tensor::zeros({2 * d, m}, true);
  p.b1 = Tensor::zeros({m}, true);
  p.w2 = Tensor::zeros({m, d}, true);
  p.b2 = Tensor::zeros({d}, true);
  p.ln_gain = Tensor::ones({d}, true);
  p.ln_bias = Tensor::from_data({d}, {0.5, -1.0, 2.0}, true);
  p.proj_w = Tensor::from_data({d, d}, {1, 0, 0, 0, 1, 0, 0, 0, 1}, true);
  p.proj_b = Tensor::zeros({d}, true);

  auto eng = make_engine(40, "fuse-zero");
  Tensor f = Tensor::randn({2, 2, d}, eng);
  Tensor e = Tensor::randn({2, 2, d}, eng);
  Tensor out = fuse(f, e, p);
  // MLP output is all zeros, LayerNorm of a constant row is the bias,
  // identity projection keeps it
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(out.data()[r * d + 0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(out.data()[r * d + 1] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(out.data()[r * d + 2] == doctest::Approx(2.0).epsilon(1e-9));
  }
}

TEST_CASE("fuse matches a hand-evaluated 1x1x2 instance") {
  // d = 2, m = 2; values chosen so every intermediate is easy to follow
  FusionParams p;
  p.w1 = Tensor::from_data({4, 2}, {1, 0, 0, 1, 1, 0, 0, 1}, true);
  p.b1 = Tensor::from_data({2}, {0.5, -0.25}, true);
  p.w2 = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  p.b2 = Tensor::from_data({2}, {0.1, -0.1}, true);
  p.ln_gain = Tensor::from_data({2}, {2, 1}, true);
  p.ln_bias = Tensor::from_data({2}, {0.25, 0.75}, true);
  p.proj_w = Tensor::from_data({2, 2}, {0, 1, 1, 0}, true);
  p.proj_b = Tensor::from_data({2}, {1, -1}, true);

  Tensor f = Tensor::from_data({1, 1, 2}, {0.2, -0.4});
  Tensor e = Tensor::from_data({1, 1, 2}, {0.6, 0.3});
  Tensor out = fuse(f, e, p);

  // pre-MLP: z = [0.2, -0.4, 0.6, 0.3]
  const double h0 = std::max(0.0, 0.2 + 0.6 + 0.5);    // 1.3
  const double h1 = std::max(0.0, -0.4 + 0.3 - 0.25);  // 0
  const double y0 = h0 * 1 + h1 * 3 + 0.1;             // 1.4
  const double y1 = h0 * 2 + h1 * 4 - 0.1;             // 2.5
  const double mean = (y0 + y1) / 2.0;
  const double var = ((y0 - mean) * (y0 - mean) + (y1 - mean) * (y1 - mean)) / 2.0;
  const double is = 1.0 / std::sqrt(var + 1e-5);
  const double n0 = 2 * ((y0 - mean) * is) + 0.25;
  const double n1 = 1 * ((y1 - mean) * is) + 0.75;
  const double o0 = n1 * 1 + 1;  // proj swaps coordinates
  const double o1 = n0 * 1 - 1;
  CHECK(out.data()[0] == doctest::Approx(o0).epsilon(1e-12));
  CHECK(out.data()[1] == doctest::Approx(o1).epsilon(1e-12));
}

TEST_CASE("fuse preserves shape for any hidden width") {
  auto eng = make_engine(41, "fuse-shape");
  for (std::size_t m : {1, 3, 8}) {
    FusionParams p = init_fusion_params(4, m, eng);
    Tensor f = Tensor::randn({2, 5, 4}, eng);
    Tensor e = Tensor::randn({2, 5, 4}, eng);
    CHECK(fuse(f, e, p).shape() == f.shape());
  }
  FusionParams p = init_fusion_params(4, 4, eng);
  CHECK_THROWS_AS(fuse(Tensor::randn({1, 2, 3}, eng), Tensor::randn({1, 2, 3}, eng), p),
                  std::invalid_argument);
}

TEST_CASE("fuse gradient check over all parameters") {
  const std::size_t d = 6, m = 6;
  // resample until every hidden pre-activation is clear of the ReLU kink,
  // where central differences are invalid
  FusionParams p;
  Tensor f, e;
  for (std::uint64_t attempt = 0;; ++attempt) {
    auto eng = make_engine(42, "fuse-grad", attempt);
    p = init_fusion_params(d, m, eng);
    f = Tensor::randn({2, 2, d}, eng, 0.7);
    e = Tensor::randn({2, 2, d}, eng, 0.7);
    Tensor pre = add_bias(matmul(reshape(concat_lastdim(f, e), {4, 2 * d}), p.w1), p.b1);
    double closest = 1e9;
    for (double v : pre.data()) closest = std::min(closest, std::abs(v));
    if (closest > 2e-2) break;
  }

  auto fn = [&f, &e, d, m](const std::vector<Tensor>& xs) {
    FusionParams q;
    q.w1 = xs[0];
    q.b1 = xs[1];
    q.w2 = xs[2];
    q.b2 = xs[3];
    q.ln_gain = xs[4];
    q.ln_bias = xs[5];
    q.proj_w = xs[6];
    q.proj_b = xs[7];
    Tensor out = fuse(f, e, q);
    return sum_all(mul(out, out));
  };
  auto rep = check_gradients(
      fn, {p.w1, p.b1, p.w2, p.b2, p.ln_gain, p.ln_bias, p.proj_w, p.proj_b});
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("fuse can represent the identity on mean-centered features") {
  // LayerNorm subtracts the row mean, so the identity is representable only
  // on inputs whose rows are already centered; the construction below feeds
  // the feature through ReLU(x) - ReLU(-x) at a small scale, undoes the
  // normalization with the gain, and refines the output projection by least
  // squares on sample data.
  const std::size_t d = 6, m = 2 * d, rows = 40;
  const double scale = 1e-6;
  FusionParams p;
  std::vector<double> w1(2 * d * m, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    w1[i * m + i] = scale;           // feature half -> ReLU(x)
    w1[i * m + (d + i)] = -scale;    // feature half -> ReLU(-x)
  }
  p.w1 = Tensor::from_data({2 * d, m}, w1);
  p.b1 = Tensor::zeros({m});
  std::vector<double> w2(m * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    w2[i * d + i] = 1.0;
    w2[(d + i) * d + i] = -1.0;  // ReLU(x) - ReLU(-x) = x
  }
  p.w2 = Tensor::from_data({m, d}, w2);
  p.b2 = Tensor::zeros({d});
  p.ln_gain = Tensor::full({d}, std::sqrt(1e-5) / scale);
  p.ln_bias = Tensor::zeros({d});
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  p.proj_w = Tensor::from_data({d, d}, eye);
  p.proj_b = Tensor::zeros({d});

  auto eng = make_engine(43, "fuse-id");
  std::vector<double> fdata(rows * d);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      fdata[r * d + i] = normal(eng);
      mean += fdata[r * d + i];
    }
    mean /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) fdata[r * d + i] -= mean;
  }
  Tensor f = Tensor::from_data({1, rows, d}, fdata);
  Tensor e = Tensor::zeros({1, rows, d});

  // least-squares refinement of the output projection: solve N P ~= F for P
  Tensor pre = fuse(f, e, p);  // with identity projection this is LN output
  const auto& n = pre.data();
  std::vector<double> ata(d * d, 0.0), atb(d * d, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        ata[i * d + j] += n[r * d + i] * n[r * d + j];
        atb[i * d + j] += n[r * d + i] * fdata[r * d + j];
      }
    }
  }
  // normalized rows sum to zero, so the Gram is singular along the all-ones
  // direction; a ridge term picks one of the equivalent solutions
  for (std::size_t i = 0; i < d; ++i) ata[i * d + i] += 1e-9;
  // Gaussian elimination with partial pivoting on [ata | atb]
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < d; ++r) {
      if (std::abs(ata[r * d + col]) > std::abs(ata[pivot * d + col])) pivot = r;
    }
    for (std::size_t j = 0; j < d; ++j) {
      std::swap(ata[col * d + j], ata[pivot * d + j]);
      std::swap(atb[col * d + j], atb[pivot * d + j]);
    }
    const double diag = ata[col * d + col];
    REQUIRE(std::abs(diag) > 1e-12);
    for (std::size_t j = 0; j < d; ++j) {
      ata[col * d + j] /= diag;
      atb[col * d + j] /= diag;
    }
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col) continue;
      const double factor = ata[r * d + col];
      for (std::size_t j = 0; j < d; ++j) {
        ata[r * d + j] -= factor * ata[col * d + j];
        atb[r * d + j] -= factor * atb[col * d + j];
      }
    }
  }
  p.proj_w = Tensor::from_data({d, d}, atb);

  Tensor out = fuse(f, e, p);
  double mse = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double diff = out.data()[i] - fdata[i];
    mse += diff * diff;
  }
  mse /= static_cast<double>(out.size());
  CHECK(mse < 1e-6);
}

TEST_SUITE_END();
