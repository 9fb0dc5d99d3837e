// SPDX-License-Identifier: Apache-2.0

#include "avp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "avp/rng.hpp"

namespace avp {
namespace {

// Relative above unit magnitude, absolute below it.
double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1.0});
  return std::abs(a - b) / scale;
}

std::vector<Tensor> leaves(const std::vector<Tensor>& point) {
  std::vector<Tensor> xs;
  xs.reserve(point.size());
  for (const Tensor& t : point) {
    xs.push_back(Tensor::from_data(t.shape(), t.data(), true));
  }
  return xs;
}

std::vector<std::vector<double>> analytic_grads(const ScalarFn& f, std::vector<Tensor>& xs) {
  GradTape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = f(xs);
  }
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("check_gradients: function must return a scalar");
  }
  tape.backward(loss);
  std::vector<std::vector<double>> grads;
  grads.reserve(xs.size());
  for (Tensor& x : xs) {
    if (x.node()->grad.size() == x.size()) {
      grads.push_back(x.node()->grad);
    } else {
      grads.emplace_back(x.size(), 0.0);  // input never reached the loss
    }
  }
  return grads;
}

double eval_at(const ScalarFn& f, const std::vector<Tensor>& xs) {
  Tensor v = f(xs);  // no tape scope: plain forward
  if (!v.defined() || v.size() != 1) {
    throw std::invalid_argument("check_gradients: function must return a scalar");
  }
  return v.value();
}

}  // namespace

GradCheckReport check_gradients(const ScalarFn& f, const std::vector<Tensor>& point, double h) {
  std::vector<Tensor> xs = leaves(point);
  const auto grads = analytic_grads(f, xs);

  GradCheckReport report;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    std::vector<double> values = xs[t].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::vector<Tensor> probe = xs;
      std::vector<double> bumped = values;
      bumped[i] = values[i] + h;
      probe[t] = Tensor::from_data(xs[t].shape(), bumped, false);
      const double fp = eval_at(f, probe);
      bumped[i] = values[i] - h;
      probe[t] = Tensor::from_data(xs[t].shape(), bumped, false);
      const double fm = eval_at(f, probe);
      const double numeric = (fp - fm) / (2.0 * h);
      report.max_rel_err = std::max(report.max_rel_err, rel_err(grads[t][i], numeric));
      ++report.compared;
    }
  }
  return report;
}

GradCheckReport check_gradients_directional(const ScalarFn& f, const std::vector<Tensor>& point,
                                            std::size_t probes, std::uint64_t seed, double h) {
  std::vector<Tensor> xs = leaves(point);
  const auto grads = analytic_grads(f, xs);

  GradCheckReport report;
  for (std::size_t p = 0; p < probes; ++p) {
    auto eng = make_engine(seed, "gradcheck-dir", p);
    std::vector<std::vector<double>> dir(xs.size());
    double norm2 = 0.0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
      dir[t].resize(xs[t].size());
      for (double& v : dir[t]) {
        v = normal(eng);
        norm2 += v * v;
      }
    }
    const double inv_norm = 1.0 / std::sqrt(norm2);

    double analytic = 0.0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
      for (std::size_t i = 0; i < dir[t].size(); ++i) {
        dir[t][i] *= inv_norm;
        analytic += grads[t][i] * dir[t][i];
      }
    }

    auto shifted = [&](double sign) {
      std::vector<Tensor> probe;
      probe.reserve(xs.size());
      for (std::size_t t = 0; t < xs.size(); ++t) {
        std::vector<double> v = xs[t].data();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += sign * h * dir[t][i];
        probe.push_back(Tensor::from_data(xs[t].shape(), std::move(v), false));
      }
      return eval_at(f, probe);
    };
    const double numeric = (shifted(+1.0) - shifted(-1.0)) / (2.0 * h);
    report.max_rel_err = std::max(report.max_rel_err, rel_err(analytic, numeric));
    ++report.compared;
  }
  return report;
}

}  // namespace avp
