// softquant: command-line front end for the soft-quantization pipeline.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration/input error,
// 3 numeric failure, 4 refinement impossible, 5 I/O or parse error.

#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "softquant/checkpoint.hpp"
#include "softquant/config.hpp"
#include "softquant/errors.hpp"
#include "softquant/format.hpp"
#include "softquant/pipeline.hpp"
#include "softquant/reports.hpp"
#include "softquant/scaling.hpp"
#include "softquant/train.hpp"

namespace sq = softquant;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kConfig = 2, kNumeric = 3, kRefine = 4, kIo = 5 };

struct Common {
  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::string pretrained;

  sq::RunConfig config() const {
    sq::RunConfig c = config_path.empty() ? sq::RunConfig{} : sq::RunConfig::load(config_path);
    for (const auto& [k, v] : overrides) c.set(k, v);
    c.validate();
    return c;
  }
};

void add_common(CLI::App* cmd, Common& common, bool pretrained_option = true) {
  cmd->add_option("-c,--config", common.config_path, "Run configuration file (key = value)");
  for (const auto& key : sq::RunConfig::keys()) {
    cmd->add_option_function<std::string>(
        "--" + key, [&common, key](const std::string& v) { common.overrides[key] = v; },
        "Override config key '" + key + "'");
  }
  if (pretrained_option)
    cmd->add_option("--pretrained", common.pretrained,
                    "Pretrained checkpoint (trained from scratch when omitted)");
}

struct Pretrained {
  sq::nn::ModelState model;
  double accuracy = 0.0;
};

Pretrained obtain_pretrained(const Common& common, const sq::RunConfig& cfg,
                             const sq::data::Splits& splits, const fs::path& out) {
  if (!common.pretrained.empty()) {
    auto model = sq::io::load_checkpoint(common.pretrained);
    const double acc = sq::data::evaluate(model, splits.test).accuracy;
    return {std::move(model), acc};
  }
  auto res = sq::train::pretrain(cfg, splits);
  sq::io::save_checkpoint(res.model, out / "pretrained.ckpt");
  std::string log = "epoch,train_loss,train_accuracy,test_accuracy\n";
  for (const auto& e : res.log)
    log += std::to_string(e.epoch) + "," + sq::format_double(e.train_loss) + "," +
           sq::format_double(e.train_accuracy) + "," + sq::format_double(e.test_accuracy) + "\n";
  sq::io::write_text(out / "pretrain_log.csv", log);
  std::cout << "pretrained: test accuracy " << res.test_accuracy << "%\n";
  return {std::move(res.model), res.test_accuracy};
}

std::vector<double> parse_values(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw sq::ConfigError("invalid number '" + item + "' in list '" + s + "'");
    }
  }
  if (out.empty()) throw sq::ConfigError("empty value list");
  return out;
}

void print_summary(const sq::pipeline::Summary& s) {
  std::cout << "A_pre " << s.acc_pretrained << "%  fine-tuned " << s.acc_finetuned << "%\n"
            << "pre-refinement:  b_bar " << s.b_bar_pre << "  dA " << s.delta_pre_refine << " pp\n";
  if (s.refined())
    std::cout << "post-refinement: b_bar " << *s.b_bar_post << "  dA " << *s.delta_post_refine
              << " pp\n";
  else
    std::cout << "refinement failed: " << s.refinement_error << "\n";
}

int cmd_pretrain(const Common& common) {
  const auto cfg = common.config();
  const auto out = cfg.resolved_output_dir();
  fs::create_directories(out);
  const auto splits = sq::data::load_dataset(cfg.dataset);
  Common fresh = common;
  fresh.pretrained.clear();
  obtain_pretrained(fresh, cfg, splits, out);
  sq::io::write_text(out / "config.txt", cfg.to_text());
  return kOk;
}

int cmd_softquant(const Common& common) {
  const auto cfg = common.config();
  const auto out = cfg.resolved_output_dir();
  fs::create_directories(out);
  const auto splits = sq::data::load_dataset(cfg.dataset);
  const auto pre = obtain_pretrained(common, cfg, splits, out);
  const auto result = sq::pipeline::run_pipeline(cfg, splits, pre.model, pre.accuracy);
  sq::reports::emit_pipeline(result, cfg, out);
  for (const auto& w : result.softquant.warnings) std::cerr << "warning: " << w << "\n";
  print_summary(result.summary);
  return result.summary.refined() ? kOk : kRefine;
}

int cmd_heq(const Common& common, int bits) {
  auto cfg = common.config();
  if (bits > 0) cfg.heq_bits = bits;
  const auto out = cfg.resolved_output_dir();
  fs::create_directories(out);
  const auto splits = sq::data::load_dataset(cfg.dataset);
  const auto pre = obtain_pretrained(common, cfg, splits, out);
  const auto heq = sq::pipeline::heq_baseline(pre.model, splits, cfg.heq_bits, pre.accuracy);
  sq::io::save_checkpoint(heq.model, out / "heq.ckpt");
  sq::io::save_codebook(sq::io::make_codebook(heq.maps), out / "heq_codebook.sqcb");
  std::vector<sq::pipeline::LayerQuant> layers;
  for (const auto& lb : heq.report.per_layer)
    layers.push_back({lb.layer, lb.n, lb.clusters, lb.clusters, lb.bits, lb.bits});
  sq::io::write_text(out / "heq_report.csv", sq::reports::quant_report_csv(layers));
  std::cout << "HEQ " << cfg.heq_bits << "-bit: b_bar " << heq.report.b_bar << "  accuracy "
            << heq.acc << "%  dA " << heq.delta << " pp\n";
  return kOk;
}

int cmd_refine(const Common& common, const std::string& checkpoint) {
  const auto cfg = common.config();
  const auto out = cfg.resolved_output_dir();
  fs::create_directories(out);
  const auto model = sq::io::load_checkpoint(checkpoint);
  const auto pre = sq::pipeline::identify_model_clusters(model, cfg.precision_bits);
  const auto post = sq::pipeline::refine_model_clusters(pre, {cfg.n_min});
  sq::io::save_checkpoint(sq::pipeline::quantize_model(model, post), out / "quantized.ckpt");
  sq::io::save_codebook(sq::io::make_codebook(post), out / "codebook.sqcb");
  const auto rpre = sq::quant::bit_widths(pre, false);
  const auto rpost = sq::quant::bit_widths(post, true);
  std::vector<sq::pipeline::LayerQuant> layers;
  for (std::size_t i = 0; i < pre.size(); ++i)
    layers.push_back({rpre.per_layer[i].layer, rpre.per_layer[i].n, rpre.per_layer[i].clusters,
                      rpost.per_layer[i].clusters, rpre.per_layer[i].bits,
                      rpost.per_layer[i].bits});
  sq::io::write_text(out / "quant_report.csv", sq::reports::quant_report_csv(layers));
  std::cout << "b_bar " << rpre.b_bar << " -> " << rpost.b_bar << " after refinement\n";
  return kOk;
}

int cmd_report(const Common& common, const std::string& checkpoint) {
  const auto cfg = common.config();
  const auto out = cfg.resolved_output_dir();
  fs::create_directories(out);
  const auto splits = sq::data::load_dataset(cfg.dataset);
  const auto model = sq::io::load_checkpoint(checkpoint);
  const auto eval = sq::data::evaluate(model, splits.test);
  nlohmann::ordered_json j;
  j["checkpoint"] = checkpoint;
  j["test_accuracy"] = eval.accuracy;
  j["test_loss"] = eval.loss;
  if (!common.pretrained.empty()) {
    const auto pre = sq::io::load_checkpoint(common.pretrained);
    const double acc_pre = sq::data::evaluate(pre, splits.test).accuracy;
    j["acc_pretrained"] = acc_pre;
    j["delta_accuracy"] = sq::quant::accuracy_degradation(acc_pre, eval.accuracy);
  }
  double num = 0.0, den = 0.0;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : model.layers) {
    if (!l.spec.couple) continue;
    const auto k = sq::quant::distinct_values(l.weights.values());
    const double b = std::log2(static_cast<double>(k));
    j["layers"].push_back({{"layer", l.spec.name}, {"N_l", l.weights.size()}, {"K_l", k}, {"b_l", b}});
    num += static_cast<double>(l.weights.size()) * b;
    den += static_cast<double>(l.weights.size());
  }
  j["b_bar"] = den > 0 ? num / den : 0.0;
  sq::io::write_text(out / "model_report.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return kOk;
}

int cmd_perturb(const Common& common, const std::string& compressed_path) {
  const auto cfg = common.config();
  if (common.pretrained.empty()) throw sq::ConfigError("perturb needs --pretrained");
  const auto out = cfg.resolved_output_dir();
  fs::create_directories(out);
  const auto splits = sq::data::load_dataset(cfg.dataset);
  const auto pre = sq::io::load_checkpoint(common.pretrained);
  const auto comp = sq::io::load_checkpoint(compressed_path);
  const auto rep = sq::pipeline::perturbation(cfg, splits, pre, comp);
  sq::io::write_text(out / "perturbation.csv", sq::reports::perturbation_csv(rep));
  std::cout << "distance " << rep.delta_theta_total << "  dL " << rep.delta_task_loss << "  slope "
            << rep.slope << "  percentile among " << rep.random.size() << " random: "
            << rep.percentile_rank << "%\n";
  return kOk;
}

int cmd_sweep(const Common& common, const std::string& hs, const std::string& ws,
              std::size_t repeats, std::size_t threads) {
  const auto cfg = common.config();
  const auto out = cfg.resolved_output_dir();
  fs::create_directories(out);
  const auto splits = sq::data::load_dataset(cfg.dataset);
  const auto pre = obtain_pretrained(common, cfg, splits, out);
  const auto heq = sq::pipeline::heq_baseline(pre.model, splits, cfg.heq_bits, pre.accuracy);
  sq::pipeline::SweepSpec spec{parse_values(hs), parse_values(ws), repeats, threads};
  const auto res = sq::pipeline::sweep(spec, cfg, splits, pre.model, pre.accuracy, heq);
  sq::io::write_text(out / "sweep_grid.csv", sq::reports::sweep_csv(res));
  sq::io::write_text(out / "sweep.json", sq::reports::to_json(res).dump(2) + "\n");
  std::cout << "HEQ " << cfg.heq_bits << "-bit: b_bar " << res.heq_bits << " dA " << res.heq_delta
            << " pp\n";
  for (const auto& c : res.cells)
    std::cout << "h=" << c.h << " w=" << c.w << ": b_bar " << c.bits.mean << " dA "
              << c.delta.mean << " failures " << c.failures
              << (c.dominates_heq ? "  [dominates HEQ]" : "") << "\n";
  return kOk;
}

int cmd_scaling(const Common& common) {
  const auto cfg = common.config();
  const auto out = cfg.resolved_output_dir();
  fs::create_directories(out);
  const auto splits = sq::data::load_dataset(cfg.dataset);
  const auto pre = obtain_pretrained(common, cfg, splits, out);
  const auto params = sq::train::coupling_params(pre.model, cfg);
  const auto points = sq::scaling::extensive_potential(pre.model, params);
  std::vector<std::pair<double, double>> xy;
  for (const auto& p : points) xy.emplace_back(static_cast<double>(p.n), p.energy);
  const auto fit = sq::scaling::fit_power_law(xy);
  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";
  sq::io::write_text(out / "scaling.csv", sq::reports::scaling_csv(points, fit));
  std::cout << "exponent " << fit.exponent << "  mse " << fit.mse << "  (alpha = exponent - 1 = "
            << fit.exponent - 1.0 << ")\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft quantization: weight-coupled fine-tuning and compression analysis"};
  app.require_subcommand(1);
  // Config keys include "h" and "w"; keep -h free for them.
  app.set_help_flag("--help", "Print this help message and exit");

  Common common;
  auto* pretrain = app.add_subcommand("pretrain", "Train the full-precision model");
  add_common(pretrain, common, false);

  auto* softquant = app.add_subcommand("softquant", "Run the full soft-quantization pipeline");
  add_common(softquant, common);

  int heq_bits = 0;
  auto* heq = app.add_subcommand("heq", "Histogram-equalized quantization baseline");
  add_common(heq, common);
  heq->add_option("--bits", heq_bits, "HEQ bit-width (defaults to heq_bits)");

  std::string checkpoint;
  auto* refine = app.add_subcommand("refine", "Identify clusters, merge small ones, snap weights");
  add_common(refine, common, false);
  refine->add_option("checkpoint", checkpoint, "Fine-tuned checkpoint")->required();

  auto* report = app.add_subcommand("report", "Accuracy and bit-width report for a checkpoint");
  add_common(report, common);
  report->add_option("checkpoint", checkpoint, "Checkpoint to evaluate")->required();

  auto* perturb = app.add_subcommand("perturb", "Loss-slope study against random perturbations");
  add_common(perturb, common);
  perturb->add_option("compressed", checkpoint, "Compressed checkpoint")->required();

  std::string hs = "0.1,1", ws = "0.25,0.5";
  std::size_t repeats = 15, threads = 0;
  auto* sweep = app.add_subcommand("sweep", "Grid sweep over (h, w) with repeats");
  add_common(sweep, common);
  sweep->add_option("--h-values", hs, "Comma-separated h values");
  sweep->add_option("--w-values", ws, "Comma-separated w values");
  sweep->add_option("--repeats", repeats, "Runs per grid cell");
  sweep->add_option("--threads", threads, "Worker threads (0: all cores)");

  auto* scaling = app.add_subcommand("scaling", "Power-law fit of the extensive coupling energy");
  add_common(scaling, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    if (*pretrain) return cmd_pretrain(common);
    if (*softquant) return cmd_softquant(common);
    if (*heq) return cmd_heq(common, heq_bits);
    if (*refine) return cmd_refine(common, checkpoint);
    if (*report) return cmd_report(common, checkpoint);
    if (*perturb) return cmd_perturb(common, checkpoint);
    if (*sweep) return cmd_sweep(common, hs, ws, repeats, threads);
    if (*scaling) return cmd_scaling(common);
  } catch (const sq::RefinementImpossible& e) {
    std::cerr << "refinement impossible: " << e.what() << "\n";
    return kRefine;
  } catch (const sq::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const sq::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const sq::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfig;
  } catch (const sq::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kIo;
  } catch (const sq::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUnexpected;
}
