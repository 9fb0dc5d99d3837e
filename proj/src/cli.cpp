// SPDX-License-Identifier: Apache-2.0

#include "avp/cli.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "avp/dataset.hpp"
#include "avp/metrics.hpp"
#include "avp/model.hpp"
#include "avp/temporal_graph.hpp"
#include "avp/train.hpp"

namespace avp::cli {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string video_key(std::size_t index, const char* field) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "video%05zu/%s", index, field);
  return buf;
}

// Injects config-file values as synthetic arguments ahead of the user's
// flags; with TakeLast options the command line wins.
std::vector<std::string> apply_config_file(const std::vector<std::string>& args, CLI::App& app) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  if (path.empty()) return args;
  if (args.empty() || args[0].empty() || args[0][0] == '-') {
    throw CLI::ValidationError("--config requires a subcommand");
  }
  CLI::App* sub = app.get_subcommand(args[0]);  // throws OptionNotFound
  std::ifstream f(path);
  if (!f) throw CLI::ValidationError("cannot open config file '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw CLI::ValidationError("config file: " + std::string(e.what()));
  }
  if (!j.is_object()) throw CLI::ValidationError("config file must hold a JSON object");

  std::vector<std::string> injected;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string flag = "--" + it.key();
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    if (!opt) {
      throw CLI::ValidationError("config file: unknown key '" + it.key() + "' for subcommand '" +
                                 args[0] + "'");
    }
    const json& v = it.value();
    if (v.is_boolean()) {
      if (v.get<bool>()) injected.push_back(flag);
    } else if (v.is_string()) {
      injected.push_back(flag + "=" + v.get<std::string>());
    } else {
      injected.push_back(flag + "=" + v.dump());
    }
  }
  std::vector<std::string> out;
  out.push_back(args[0]);
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

struct ModelOptions {
  std::size_t hidden = 0;
  std::size_t heads = 4;
  std::size_t gat_layers = 1;
  std::size_t k_audio = 4;
  std::size_t k_visual = 4;
  double dropout = 0.1;
  double threshold = 0.5;
  std::uint64_t text_seed = 17;

  void attach(CLI::App* sub) {
    sub->add_option("--hidden", hidden, "Fusion MLP width (0 = feature dim)")
        ->capture_default_str();
    sub->add_option("--heads", heads, "GAT attention heads")->capture_default_str();
    sub->add_option("--gat-layers", gat_layers, "Stacked GAT layers per stream")
        ->capture_default_str();
    sub->add_option("--k-audio", k_audio, "Temporal hop range, audio graph")
        ->capture_default_str();
    sub->add_option("--k-visual", k_visual, "Temporal hop range, visual graph")
        ->capture_default_str();
    sub->add_option("--dropout", dropout, "Dropout on attention messages")
        ->capture_default_str();
    sub->add_option("--threshold", threshold, "Segment probability threshold")
        ->capture_default_str();
    sub->add_option("--text-seed", text_seed, "Seed of the frozen text prototype table")
        ->capture_default_str();
  }

  model::ModelConfig to_config(std::size_t dim) const {
    model::ModelConfig c;
    c.dim = dim;
    c.hidden = hidden;
    c.heads = heads;
    c.gat_layers = gat_layers;
    c.k_audio = k_audio;
    c.k_visual = k_visual;
    c.dropout = dropout;
    c.threshold = threshold;
    c.text_seed = text_seed;
    return c;
  }
};

struct TrainOptions {
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  bool no_te = false;
  bool no_mtg = false;

  void attach(CLI::App* sub, bool with_ablation_flags) {
    sub->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    sub->add_option("--batch", batch_size, "Videos per batch")->capture_default_str();
    sub->add_option("--lr", lr, "SGD learning rate")->capture_default_str();
    sub->add_option("--momentum", momentum, "SGD momentum")->capture_default_str();
    sub->add_option("--seed", seed, "Run seed")->capture_default_str();
    sub->add_option("--eval-every", eval_every,
                    "Evaluate every N epochs (0 = final epoch only)")
        ->capture_default_str();
    if (with_ablation_flags) {
      sub->add_flag("--no-te", no_te, "Disable text enhancement");
      sub->add_flag("--no-mtg", no_mtg, "Disable temporal graph propagation");
    }
  }

  train::TrainConfig to_config(const ModelOptions& m, std::size_t dim) const {
    train::TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.lr = lr;
    c.momentum = momentum;
    c.seed = seed;
    c.eval_every = eval_every;
    c.model = m.to_config(dim);
    c.ablation = {no_te, no_mtg};
    return c;
  }
};

void add_config_option(CLI::App* sub, std::string& path) {
  sub->add_option("--config", path,
                  "JSON config file; keys are option names, command-line flags win");
}

// ---- gen-data ----

int run_gen_data(const std::string& out_prefix, std::size_t classes,
                 const std::string& class_names_csv, std::size_t videos, std::size_t segments,
                 std::size_t dim, double feature_noise, double flip_rate, std::uint64_t seed,
                 std::ostream& out) {
  data::DatasetManifest m;
  if (!class_names_csv.empty()) {
    std::stringstream ss(class_names_csv);
    std::string name;
    while (std::getline(ss, name, ',')) m.class_names.push_back(name);
  } else {
    m.class_names = data::default_class_names(classes);
  }
  m.videos = videos;
  m.segments = segments;
  m.dim = dim;
  m.feature_noise = feature_noise;
  m.flip_rate = flip_rate;
  m.seed = seed;
  m.validate();
  const auto samples = data::generate_dataset(m);
  data::save_dataset(m, samples, out_prefix);
  out << m.to_json().dump() << '\n';
  return 0;
}

// ---- inspect-graph ----

int run_inspect_graph(std::size_t t, std::size_t k, std::ostream& out) {
  const graph::TemporalGraph g = graph::build_graph(t, k);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      if (j) out << ' ';
      out << (g.connected(i, j) ? '1' : '0');
    }
    out << '\n';
  }
  return 0;
}

// ---- train ----

int run_train(const std::string& data_prefix, const std::string& out_path,
              const std::string& log_path, const std::string& resume_path,
              const TrainOptions& topt, const ModelOptions& mopt, std::ostream& out) {
  const data::Dataset ds = data::load_dataset(data_prefix);
  train::TrainConfig cfg = topt.to_config(mopt, ds.manifest.dim);

  std::ofstream log_file;
  std::ostream* log = nullptr;
  if (!log_path.empty()) {
    log_file.open(log_path, std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot open log file '" + log_path + "'");
    log = &log_file;
  }

  train::Checkpoint resume;
  const train::Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = train::load_checkpoint(resume_path);
    cfg.model = model::ModelConfig::from_json(resume.meta.at("model"));
    cfg.ablation = model::AblationFlags::from_json(resume.meta.at("ablation"));
    cfg.seed = resume.seed;
    resume_ptr = &resume;
  }

  train::TrainResult result = train::train(ds, cfg, log, resume_ptr);
  if (!out_path.empty()) train::save_checkpoint(out_path, result.checkpoint);

  ordered_json j;
  j["epochs"] = cfg.epochs;
  j["final_loss"] = result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back();
  if (!result.reports.empty()) j["report"] = result.reports.back().second.to_json();
  if (!out_path.empty()) j["checkpoint"] = out_path;
  out << j.dump() << '\n';
  return 0;
}

// ---- eval ----

std::vector<VideoLabels> read_label_file(const std::string& path, const char* field_a,
                                         const char* field_v, double threshold) {
  const auto tensors = io::read_container_file(path);
  std::map<std::string, const io::NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  std::vector<VideoLabels> out;
  for (std::size_t i = 0;; ++i) {
    const auto a = by_name.find(video_key(i, field_a));
    const auto v = by_name.find(video_key(i, field_v));
    if (a == by_name.end() || v == by_name.end()) break;
    auto to_matrix = [threshold](const io::NamedTensor& t) {
      if (t.shape.size() != 2) {
        throw std::runtime_error("label file: '" + t.name + "' is not segments x classes");
      }
      BinaryMatrix m(t.shape[0], t.shape[1]);
      for (std::size_t j = 0; j < t.values.size(); ++j) {
        m.v[j] = t.values[j] >= threshold ? 1 : 0;
      }
      return m;
    };
    out.push_back({to_matrix(*a->second), to_matrix(*v->second)});
  }
  if (out.empty()) {
    throw std::runtime_error("label file '" + path + "': no '" + std::string(field_a) +
                             "' entries found");
  }
  return out;
}

void write_pred_file(const std::string& path, const std::vector<std::pair<Tensor, Tensor>>& probs) {
  std::vector<io::NamedTensor> tensors;
  tensors.reserve(probs.size() * 2);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    auto rounded = [](const Tensor& t) {
      std::vector<double> v = t.data();
      for (double& x : v) x = static_cast<double>(static_cast<float>(x));
      return v;
    };
    tensors.push_back({video_key(i, "pred_a"), probs[i].first.shape(), rounded(probs[i].first)});
    tensors.push_back({video_key(i, "pred_v"), probs[i].second.shape(), rounded(probs[i].second)});
  }
  io::write_container_file(path, tensors);
}

int run_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& data_prefix, const std::string& checkpoint_path,
             const std::string& write_pred, double threshold, std::size_t jobs,
             std::ostream& out) {
  std::vector<VideoLabels> preds, gts;
  if (!pred_path.empty()) {
    preds = read_label_file(pred_path, "pred_a", "pred_v", threshold);
    gts = read_label_file(gt_path, "gt_a", "gt_v", 0.5);
  } else {
    const data::Dataset ds = data::load_dataset(data_prefix);
    const train::Checkpoint ck = train::load_checkpoint(checkpoint_path);
    model::ModelConfig mc = model::ModelConfig::from_json(ck.meta.at("model"));
    const auto flags = model::AblationFlags::from_json(ck.meta.at("ablation"));
    model::ModelParams params(mc, ds.manifest, 0);
    std::vector<std::vector<double>> velocity;
    train::apply_checkpoint(ck, params, velocity, ds.manifest.hash());
    if (!write_pred.empty()) {
      write_pred_file(write_pred, model::predict_probs(params, ds, flags));
    }
    preds = model::predict_labels(params, ds, flags);
    gts = model::gt_labels(ds);
  }
  const auto report = metrics::evaluate(preds, gts, jobs);
  out << report.to_json().dump() << '\n';
  return 0;
}

// ---- ablate ----

int run_ablate(const std::string& data_prefix, const TrainOptions& topt, const ModelOptions& mopt,
               std::ostream& out, std::ostream& err) {
  const data::Dataset ds = data::load_dataset(data_prefix);
  const struct {
    const char* label;
    bool no_te, no_mtg;
  } rows[] = {{"full", false, false},
              {"no_te", true, false},
              {"no_mtg", false, true},
              {"neither", true, true}};

  ordered_json table = ordered_json::array();
  for (const auto& row : rows) {
    train::TrainConfig cfg = topt.to_config(mopt, ds.manifest.dim);
    cfg.ablation = {row.no_te, row.no_mtg};
    cfg.eval_every = 0;  // final evaluation only
    err << "ablate: training '" << row.label << "'\n";
    train::TrainResult result = train::train(ds, cfg);
    ordered_json entry;
    entry["config"] = row.label;
    const auto rj = result.reports.back().second.to_json();
    entry["segment"] = rj["segment"];
    entry["event"] = rj["event"];
    table.push_back(std::move(entry));
  }
  out << table.dump() << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale audio-visual video parsing lab"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(40);

  for (CLI::Option* opt : app.get_options()) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string config_path;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_out;
  std::size_t gen_classes = 8, gen_videos = 500, gen_segments = 10, gen_dim = 64;
  std::string gen_class_names;
  double gen_noise = 0.1, gen_flip = 0.1;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "Output prefix; writes <out>.json and <out>.bin")
      ->required();
  gen->add_option("--classes", gen_classes, "Number of event classes")->capture_default_str();
  gen->add_option("--class-names", gen_class_names,
                  "Comma-separated class names (overrides --classes)")
      ->capture_default_str();
  gen->add_option("--videos", gen_videos, "Number of videos")->capture_default_str();
  gen->add_option("--segments", gen_segments, "Segments per video")->capture_default_str();
  gen->add_option("--dim", gen_dim, "Feature dimension")->capture_default_str();
  gen->add_option("--feature-noise", gen_noise, "Gaussian feature noise sigma")
      ->capture_default_str();
  gen->add_option("--flip-rate", gen_flip, "Pseudo-label flip probability")
      ->capture_default_str();
  gen->add_option("--seed", gen_seed, "Dataset seed")->capture_default_str();
  add_config_option(gen, config_path);

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  std::string tr_data, tr_out = "model.ckpt", tr_log, tr_resume;
  TrainOptions tr_topt;
  ModelOptions tr_mopt;
  tr->add_option("--data", tr_data, "Dataset prefix from gen-data")->required();
  tr->add_option("--out", tr_out, "Checkpoint output path")->capture_default_str();
  tr->add_option("--log", tr_log, "Per-epoch JSON-lines metric log")->capture_default_str();
  tr->add_option("--resume", tr_resume, "Resume from this checkpoint")->capture_default_str();
  tr_topt.attach(tr, true);
  tr_mopt.attach(tr);
  add_config_option(tr, config_path);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate predictions against ground truth");
  std::string ev_pred, ev_gt, ev_data, ev_ckpt, ev_write_pred;
  double ev_threshold = 0.5;
  std::size_t ev_jobs = 1;
  ev->add_option("--pred", ev_pred, "Prediction container (videoNNNNN/pred_a|pred_v)")
      ->capture_default_str();
  ev->add_option("--gt", ev_gt, "Ground-truth container (videoNNNNN/gt_a|gt_v)")
      ->capture_default_str();
  ev->add_option("--data", ev_data, "Dataset prefix (checkpoint mode)")->capture_default_str();
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint to run (checkpoint mode)")
      ->capture_default_str();
  ev->add_option("--write-pred", ev_write_pred,
                 "Write model probabilities to this container (checkpoint mode)")
      ->capture_default_str();
  ev->add_option("--threshold", ev_threshold, "Probability threshold for --pred files")
      ->capture_default_str();
  ev->add_option("--jobs", ev_jobs, "Parallel per-video evaluation workers")
      ->capture_default_str();
  add_config_option(ev, config_path);

  // inspect-graph
  auto* ig = app.add_subcommand("inspect-graph", "Print a K-hop adjacency matrix");
  std::size_t ig_t = 0, ig_k = 0;
  ig->add_option("--t", ig_t, "Number of segments")->required();
  ig->add_option("--k", ig_k, "Hop range")->required();
  add_config_option(ig, config_path);

  // ablate
  auto* ab = app.add_subcommand("ablate", "Run the full/no-te/no-mtg/neither grid");
  std::string ab_data;
  TrainOptions ab_topt;
  ModelOptions ab_mopt;
  ab->add_option("--data", ab_data, "Dataset prefix from gen-data")->required();
  ab_topt.attach(ab, false);
  ab_mopt.attach(ab);
  add_config_option(ab, config_path);

  for (CLI::App* sub : app.get_subcommands({})) {
    for (CLI::Option* opt : sub->get_options()) {
      if (opt->get_expected() != 0) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }

  try {
    std::vector<std::string> args = apply_config_file(raw_args, app);
    std::vector<const char*> argv;
    argv.push_back("avparse");
    for (const std::string& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (gen->parsed()) {
      return run_gen_data(gen_out, gen_classes, gen_class_names, gen_videos, gen_segments,
                          gen_dim, gen_noise, gen_flip, gen_seed, out);
    }
    if (ig->parsed()) {
      return run_inspect_graph(ig_t, ig_k, out);
    }
    if (tr->parsed()) {
      return run_train(tr_data, tr_out, tr_log, tr_resume, tr_topt, tr_mopt, out);
    }
    if (ev->parsed()) {
      const bool file_mode = !ev_pred.empty() || !ev_gt.empty();
      const bool ckpt_mode = !ev_data.empty() || !ev_ckpt.empty();
      if (file_mode == ckpt_mode || (file_mode && (ev_pred.empty() || ev_gt.empty())) ||
          (ckpt_mode && (ev_data.empty() || ev_ckpt.empty()))) {
        err << "eval: give either --pred and --gt, or --data and --checkpoint\n";
        return 2;
      }
      if (ev_jobs == 0) {
        err << "eval: --jobs must be positive\n";
        return 2;
      }
      return run_eval(ev_pred, ev_gt, ev_data, ev_ckpt, ev_write_pred, ev_threshold, ev_jobs,
                      out);
    }
    if (ab->parsed()) {
      return run_ablate(ab_data, ab_topt, ab_mopt, out, err);
    }
    err << "no subcommand given\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace avp::cli
