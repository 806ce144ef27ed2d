#include "softquant/reports.hpp"

#include "softquant/checkpoint.hpp"
#include "softquant/format.hpp"

namespace softquant::reports {

namespace {

using softquant::format_double;

std::string row(std::initializer_list<std::string> cells) {
  std::string out;
  bool first = true;
  for (const auto& c : cells) {
    if (!first) out += ',';
    out += c;
    first = false;
  }
  return out + '\n';
}

std::string num(double v) { return format_double(v); }
std::string num(std::size_t v) { return std::to_string(v); }

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::string quant_report_csv(const std::vector<pipeline::LayerQuant>& layers) {
  std::string out = row({"layer", "N_l", "K_l_pre", "K_l_post", "b_l_pre", "b_l_post"});
  for (const auto& l : layers)
    out += row({l.layer, num(l.n), num(l.k_pre), num(l.k_post), num(l.b_pre), num(l.b_post)});
  return out;
}

std::string loss_curve_csv(const std::vector<train::EpochRecord>& epochs,
                           const std::vector<std::string>& layer_names) {
  std::string out = "epoch,train_task_loss,coupling,total,test_accuracy";
  for (const auto& n : layer_names) out += ",K_" + n;
  out += '\n';
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + ',' + num(e.train_task_loss) + ',' + num(e.coupling) + ',' +
           num(e.train_task_loss + e.coupling) + ',' + num(e.test_accuracy);
    for (auto k : e.clusters) out += ',' + std::to_string(k);
    out += '\n';
  }
  return out;
}

std::string steps_csv(const std::vector<train::StepRecord>& steps) {
  std::string out = row({"epoch", "step", "sample_fraction", "task", "coupling", "total"});
  for (const auto& s : steps)
    out += row({std::to_string(s.epoch), num(s.step), num(s.sample_fraction), num(s.loss.task),
                num(s.loss.coupling), num(s.loss.total)});
  return out;
}

std::string sweep_csv(const pipeline::SweepResult& sweep) {
  std::string out = row({"h", "w", "repeats", "failures", "delta_mean", "delta_std", "delta_cv",
                         "bits_mean", "bits_std", "bits_cv", "delta_pre_mean", "bits_pre_mean",
                         "heq_delta", "heq_bits", "dominates_heq"});
  for (const auto& c : sweep.cells) {
    auto cv = [](const pipeline::Stat& s) { return s.cv_defined ? num(s.cv) : std::string("nan"); };
    out += row({num(c.h), num(c.w), num(c.runs.size()), num(c.failures), num(c.delta.mean),
                num(c.delta.std), cv(c.delta), num(c.bits.mean), num(c.bits.std), cv(c.bits),
                num(c.delta_pre.mean), num(c.bits_pre.mean), num(sweep.heq_delta),
                num(sweep.heq_bits), c.dominates_heq ? "1" : "0"});
  }
  return out;
}

std::string perturbation_csv(const landscape::PerturbationReport& report) {
  std::string out = row({"sample", "delta_theta", "delta_loss", "slope"});
  for (std::size_t i = 0; i < report.random.size(); ++i) {
    const auto& r = report.random[i];
    out += row({std::to_string(i), num(r.delta_theta), num(r.delta_loss), num(r.slope)});
  }
  out += row({"compressed", num(report.delta_theta_total), num(report.delta_task_loss),
              num(report.slope)});
  return out;
}

std::string scaling_csv(const std::vector<scaling::ExtensivePoint>& points,
                        const scaling::ScalingFit& fit) {
  std::string out = row({"layer", "N_l", "sigma", "energy", "exponent", "mse"});
  for (const auto& p : points)
    out += row({p.name, num(p.n), num(p.sigma), num(p.energy), num(fit.exponent), num(fit.mse)});
  return out;
}

nlohmann::ordered_json to_json(const pipeline::Summary& s) {
  nlohmann::ordered_json j;
  j["h"] = s.h;
  j["w"] = s.w;
  j["seed"] = s.seed;
  j["acc_pretrained"] = s.acc_pretrained;
  j["acc_finetuned"] = s.acc_finetuned;
  j["acc_pre_refine"] = s.acc_pre_refine;
  j["acc_post_refine"] = opt(s.acc_post_refine);
  j["delta_pre_refine"] = s.delta_pre_refine;
  j["delta_post_refine"] = opt(s.delta_post_refine);
  j["b_bar_pre"] = s.b_bar_pre;
  j["b_bar_post"] = opt(s.b_bar_post);
  j["refinement_error"] = s.refinement_error;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : s.layers)
    j["layers"].push_back({{"layer", l.layer},
                           {"N_l", l.n},
                           {"K_l_pre", l.k_pre},
                           {"K_l_post", l.k_post},
                           {"b_l_pre", l.b_pre},
                           {"b_l_post", l.b_post}});
  return j;
}

pipeline::Summary summary_from_json(const nlohmann::json& j) {
  pipeline::Summary s;
  s.h = j.at("h").get<double>();
  s.w = j.at("w").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.acc_pretrained = j.at("acc_pretrained").get<double>();
  s.acc_finetuned = j.at("acc_finetuned").get<double>();
  s.acc_pre_refine = j.at("acc_pre_refine").get<double>();
  s.acc_post_refine = opt_from(j, "acc_post_refine");
  s.delta_pre_refine = j.at("delta_pre_refine").get<double>();
  s.delta_post_refine = opt_from(j, "delta_post_refine");
  s.b_bar_pre = j.at("b_bar_pre").get<double>();
  s.b_bar_post = opt_from(j, "b_bar_post");
  s.refinement_error = j.at("refinement_error").get<std::string>();
  for (const auto& l : j.at("layers"))
    s.layers.push_back({l.at("layer").get<std::string>(), l.at("N_l").get<std::size_t>(),
                        l.at("K_l_pre").get<std::size_t>(), l.at("K_l_post").get<std::size_t>(),
                        l.at("b_l_pre").get<double>(), l.at("b_l_post").get<double>()});
  return s;
}

nlohmann::ordered_json to_json(const pipeline::SweepResult& s) {
  nlohmann::ordered_json j;
  j["acc_pretrained"] = s.acc_pretrained;
  j["heq_delta"] = s.heq_delta;
  j["heq_bits"] = s.heq_bits;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : s.cells) {
    nlohmann::ordered_json cj;
    cj["h"] = c.h;
    cj["w"] = c.w;
    cj["failures"] = c.failures;
    cj["dominates_heq"] = c.dominates_heq;
    cj["runs"] = nlohmann::ordered_json::array();
    for (const auto& r : c.runs) {
      auto rj = to_json(r.summary);
      rj["error"] = r.error;
      cj["runs"].push_back(std::move(rj));
    }
    j["cells"].push_back(std::move(cj));
  }
  return j;
}

void emit_pipeline(const pipeline::PipelineResult& result, const RunConfig& config,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_text(dir / "config.txt", config.to_text());
  io::save_checkpoint(result.pretrained, dir / "pretrained.ckpt");
  io::save_checkpoint(result.finetuned, dir / "softquant.ckpt");
  io::save_checkpoint(result.quantized_pre, dir / "quantized_pre.ckpt");
  io::save_codebook(io::make_codebook(result.maps_pre), dir / "codebook_pre.sqcb");
  if (result.quantized_post) {
    io::save_checkpoint(*result.quantized_post, dir / "quantized.ckpt");
    io::save_codebook(io::make_codebook(result.maps_post), dir / "codebook.sqcb");
  }
  std::vector<std::string> names;
  for (const auto& m : result.maps_pre) names.push_back(m.layer);
  io::write_text(dir / "quant_report.csv", quant_report_csv(result.summary.layers));
  io::write_text(dir / "report.json", to_json(result.summary).dump(2) + "\n");
  io::write_text(dir / "loss_curve.csv", loss_curve_csv(result.softquant.epochs, names));
  io::write_text(dir / "steps.csv", steps_csv(result.softquant.steps));
}

}  // namespace softquant::reports
