// SPDX-License-Identifier: Apache-2.0

#include "avp/train.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "avp/rng.hpp"

namespace avp::train {
namespace {

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

class Sgd {
 public:
  Sgd(std::vector<std::pair<std::string, Tensor>> params, double lr, double momentum)
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    velocity_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      velocity_[i].assign(params_[i].second.size(), 0.0);
    }
  }

  // v = momentum v + g; p -= lr v. Parameters without a gradient this step
  // are left untouched. Everything is re-gridded to f32 afterwards.
  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i].second;
      const auto& node = *p.node();
      if (node.grad.size() != node.data.size()) continue;
      std::vector<double> values = node.data;
      auto& vel = velocity_[i];
      for (std::size_t j = 0; j < values.size(); ++j) {
        vel[j] = to_f32(momentum_ * vel[j] + node.grad[j]);
        values[j] = to_f32(values[j] - lr_ * vel[j]);
      }
      p.set_data(values);
    }
  }

  std::vector<std::vector<double>>& velocity() { return velocity_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_, momentum_;
};

}  // namespace

Checkpoint make_checkpoint(model::ModelParams& params, const model::AblationFlags& ablation,
                           const std::vector<std::vector<double>>& velocity,
                           std::uint64_t manifest_hash, std::uint64_t seed,
                           std::uint32_t next_epoch, std::uint64_t global_step) {
  Checkpoint ck;
  ck.manifest_hash = manifest_hash;
  ck.seed = seed;
  ck.next_epoch = next_epoch;
  ck.global_step = global_step;
  ck.meta["model"] = params.cfg.to_json();
  ck.meta["ablation"] = ablation.to_json();
  ck.meta["classes"] = params.class_names.size();

  auto named = params.named_parameters();
  if (velocity.size() != named.size()) {
    throw std::invalid_argument("make_checkpoint: velocity count mismatch");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    ck.tensors.push_back({"param/" + named[i].first, named[i].second.shape(),
                          named[i].second.data()});
    ck.tensors.push_back({"velocity/" + named[i].first, named[i].second.shape(), velocity[i]});
  }
  for (auto& [name, vec] : params.named_state()) {
    ck.tensors.push_back({"state/" + name, {vec->size()}, *vec});
  }
  return ck;
}

void apply_checkpoint(const Checkpoint& ck, model::ModelParams& params,
                      std::vector<std::vector<double>>& velocity, std::uint64_t manifest_hash) {
  if (ck.manifest_hash != manifest_hash) {
    throw std::runtime_error("checkpoint: manifest hash mismatch (checkpoint was trained on a "
                             "different dataset)");
  }
  std::map<std::string, const io::NamedTensor*> by_name;
  for (const io::NamedTensor& t : ck.tensors) by_name[t.name] = &t;
  auto take = [&by_name](const std::string& name) -> const io::NamedTensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    }
    const io::NamedTensor* t = it->second;
    by_name.erase(it);
    return *t;
  };

  auto named = params.named_parameters();
  velocity.assign(named.size(), {});
  for (std::size_t i = 0; i < named.size(); ++i) {
    const io::NamedTensor& p = take("param/" + named[i].first);
    if (p.shape != named[i].second.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for '" + named[i].first + "'");
    }
    named[i].second.set_data(p.values);
    const io::NamedTensor& v = take("velocity/" + named[i].first);
    if (v.values.size() != named[i].second.size()) {
      throw std::runtime_error("checkpoint: velocity size mismatch for '" + named[i].first + "'");
    }
    velocity[i] = v.values;
  }
  for (auto& [name, vec] : params.named_state()) {
    const io::NamedTensor& s = take("state/" + name);
    if (s.values.size() != vec->size()) {
      throw std::runtime_error("checkpoint: state size mismatch for '" + name + "'");
    }
    *vec = s.values;
  }
  if (!by_name.empty()) {
    throw std::runtime_error("checkpoint: unexpected tensor '" + by_name.begin()->first + "'");
  }
}

TrainResult train(const data::Dataset& ds, const TrainConfig& cfg, std::ostream* log,
                  const Checkpoint* resume) {
  ds.manifest.validate();
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (cfg.epochs == 0) throw std::invalid_argument("train: epochs must be positive");
  const std::uint64_t manifest_hash = ds.manifest.hash();

  model::ModelParams params(cfg.model, ds.manifest, cfg.seed);
  Sgd sgd(params.named_parameters(), cfg.lr, cfg.momentum);

  std::size_t start_epoch = 0;
  std::uint64_t global_step = 0;
  if (resume) {
    const std::string want = cfg.model.to_json().dump();
    const std::string have = resume->meta.at("model").dump();
    if (want != have) {
      throw std::runtime_error("train: resume model config differs from checkpoint");
    }
    if (resume->seed != cfg.seed) {
      throw std::runtime_error("train: resume seed differs from checkpoint");
    }
    apply_checkpoint(*resume, params, sgd.velocity(), manifest_hash);
    start_epoch = resume->next_epoch;
    global_step = resume->global_step;
    if (start_epoch > cfg.epochs) {
      throw std::runtime_error("train: checkpoint is already past the requested epochs");
    }
  }

  TrainResult result{std::move(params), {}, {}, {}, {}};
  model::ModelParams& m = result.params;

  const std::size_t n = ds.samples.size();
  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto shuffle_eng = make_engine(cfg.seed, "shuffle", epoch);
    shuffle_inplace(order, shuffle_eng);

    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++steps) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      std::vector<std::size_t> indices(order.begin() + begin, order.begin() + end);
      model::Batch batch = model::make_batch(ds, indices, m, !cfg.ablation.no_te);

      auto eng = make_engine(cfg.seed, "dropout", epoch, steps);
      GradTape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        model::ForwardOut out = model::forward(m, batch, cfg.ablation, Mode::Train, eng);
        loss = model::weak_bce_loss(out.preds, batch.weak);
      }
      const double loss_value = loss.value();
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(steps));
      }
      tape.backward(loss);
      sgd.step();
      m.round_state_to_f32();
      result.step_losses.push_back(loss_value);
      epoch_loss += loss_value;
      ++global_step;
    }
    epoch_loss /= static_cast<double>(steps);
    result.epoch_losses.push_back(epoch_loss);

    const bool last = epoch + 1 == cfg.epochs;
    const bool eval_now = last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0);
    nlohmann::ordered_json line;
    line["epoch"] = epoch;
    line["loss"] = epoch_loss;
    if (eval_now) {
      const auto preds = model::predict_labels(m, ds, cfg.ablation);
      const auto report = metrics::evaluate(preds, model::gt_labels(ds));
      result.reports.emplace_back(epoch, report);
      const auto rj = report.to_json();
      line["segment"] = rj["segment"];
      line["event"] = rj["event"];
    }
    if (log) *log << line.dump() << '\n';
  }

  result.checkpoint =
      make_checkpoint(m, cfg.ablation, sgd.velocity(), manifest_hash, cfg.seed,
                      static_cast<std::uint32_t>(cfg.epochs), global_step);
  return result;
}

}  // namespace avp::train
