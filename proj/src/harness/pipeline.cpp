#include "softquant/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "softquant/errors.hpp"

namespace softquant::pipeline {

std::vector<quant::ClusterMap> identify_model_clusters(const nn::ModelState& model,
                                                       int precision_bits) {
  std::vector<quant::ClusterMap> maps;
  for (const auto& l : model.layers)
    if (l.spec.couple)
      maps.push_back(quant::identify_clusters(l.weights.values(), precision_bits, l.spec.name));
  return maps;
}

std::vector<quant::ClusterMap> refine_model_clusters(const std::vector<quant::ClusterMap>& maps,
                                                     const quant::RefineConfig& cfg) {
  std::vector<quant::ClusterMap> out;
  out.reserve(maps.size());
  for (const auto& m : maps) out.push_back(quant::refine_clusters(m, cfg));
  return out;
}

nn::ModelState quantize_model(const nn::ModelState& model,
                              const std::vector<quant::ClusterMap>& maps) {
  nn::ModelState out = model;
  for (const auto& m : maps) {
    auto it = std::find_if(out.layers.begin(), out.layers.end(),
                           [&](const nn::Layer& l) { return l.spec.name == m.layer; });
    if (it == out.layers.end()) throw InputError("cluster map for unknown layer '" + m.layer + "'");
    if (it->weights.size() != m.num_weights())
      throw InputError("cluster map size mismatch for layer '" + m.layer + "'");
    for (std::size_t i = 0; i < m.num_weights(); ++i)
      it->weights[i] = m.centroids[m.assignments[i]];
  }
  return out;
}

std::uint64_t run_seed(std::uint64_t master, std::size_t h_index, std::size_t w_index,
                       std::size_t repeat) {
  return Rng::derive(master, {h_index, w_index, repeat});
}

PipelineResult run_pipeline(const RunConfig& config, const data::Splits& splits,
                            const nn::ModelState& pretrained, double acc_pretrained,
                            std::uint64_t sq_seed) {
  PipelineResult r;
  r.pretrained = pretrained;
  r.softquant = train::soft_quantize(pretrained, splits, config, sq_seed);
  r.finetuned = r.softquant.model;

  auto& s = r.summary;
  s.h = config.h;
  s.w = config.w;
  s.seed = sq_seed;
  s.acc_pretrained = acc_pretrained;
  s.acc_finetuned = data::evaluate(r.finetuned, splits.test).accuracy;

  r.maps_pre = identify_model_clusters(r.finetuned, config.precision_bits);
  r.quantized_pre = quantize_model(r.finetuned, r.maps_pre);
  s.acc_pre_refine = data::evaluate(r.quantized_pre, splits.test).accuracy;
  s.delta_pre_refine = quant::accuracy_degradation(acc_pretrained, s.acc_pre_refine);
  const auto pre = quant::bit_widths(r.maps_pre, false);
  s.b_bar_pre = pre.b_bar;
  for (const auto& lb : pre.per_layer) s.layers.push_back({lb.layer, lb.n, lb.clusters, 0, lb.bits, 0.0});

  try {
    r.maps_post = refine_model_clusters(r.maps_pre, {config.n_min});
    r.quantized_post = quantize_model(r.finetuned, r.maps_post);
    s.acc_post_refine = data::evaluate(*r.quantized_post, splits.test).accuracy;
    s.delta_post_refine = quant::accuracy_degradation(acc_pretrained, *s.acc_post_refine);
    const auto post = quant::bit_widths(r.maps_post, true);
    s.b_bar_post = post.b_bar;
    for (std::size_t i = 0; i < post.per_layer.size(); ++i) {
      s.layers[i].k_post = post.per_layer[i].clusters;
      s.layers[i].b_post = post.per_layer[i].bits;
    }
  } catch (const RefinementImpossible& e) {
    s.refinement_error = e.what();
    r.maps_post.clear();
  }
  return r;
}

PipelineResult run_pipeline(const RunConfig& config, const data::Splits& splits,
                            const nn::ModelState& pretrained, double acc_pretrained) {
  return run_pipeline(config, splits, pretrained, acc_pretrained, run_seed(config.seed, 0, 0, 0));
}

HeqBaseline heq_baseline(const nn::ModelState& pretrained, const data::Splits& splits, int bits,
                         double acc_pretrained) {
  HeqBaseline b;
  b.bits = bits;
  for (const auto& l : pretrained.layers)
    if (l.spec.couple) b.maps.push_back(quant::heq_quantize(l.weights.values(), bits, l.spec.name).map);
  b.model = quantize_model(pretrained, b.maps);
  b.report = quant::bit_widths(b.maps, false);
  b.acc = data::evaluate(b.model, splits.test).accuracy;
  b.delta = quant::accuracy_degradation(acc_pretrained, b.acc);
  b.report.delta_accuracy = b.delta;
  return b;
}

Stat describe(const std::vector<double>& values) {
  Stat s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  s.cv_defined = s.mean != 0.0;
  s.cv = s.cv_defined ? s.std / std::abs(s.mean) : 0.0;
  return s;
}

SweepResult sweep(const SweepSpec& spec, const RunConfig& config, const data::Splits& splits,
                  const nn::ModelState& pretrained, double acc_pretrained,
                  const HeqBaseline& heq) {
  if (spec.repeats < 1) throw ConfigError("sweep repeats must be >= 1");
  SweepResult res;
  res.acc_pretrained = acc_pretrained;
  res.heq_delta = heq.delta;
  res.heq_bits = heq.report.b_bar;

  const std::size_t nh = spec.h_values.size(), nw = spec.w_values.size();
  res.cells.resize(nh * nw);
  for (std::size_t hi = 0; hi < nh; ++hi)
    for (std::size_t wi = 0; wi < nw; ++wi) {
      auto& c = res.cells[hi * nw + wi];
      c.h = spec.h_values[hi];
      c.w = spec.w_values[wi];
      c.runs.resize(spec.repeats);
    }

  const std::size_t jobs = res.cells.size() * spec.repeats;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs;) {
      const std::size_t cell = j / spec.repeats, rep = j % spec.repeats;
      auto& c = res.cells[cell];
      RunConfig cfg = config;
      cfg.h = c.h;
      cfg.w = c.w;
      auto& out = c.runs[rep];
      try {
        auto run = run_pipeline(cfg, splits, pretrained, acc_pretrained,
                                run_seed(config.seed, cell / nw, cell % nw, rep));
        out.summary = std::move(run.summary);
        out.ok = out.summary.refined();
        if (!out.ok) out.error = out.summary.refinement_error;
      } catch (const Error& e) {
        out.error = e.what();
      }
    }
  };
  std::size_t threads = spec.threads ? spec.threads : std::thread::hardware_concurrency();
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, jobs));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (auto& c : res.cells) {
    std::vector<double> d, b, dp, bp;
    for (const auto& r : c.runs) {
      if (!r.error.empty() && r.summary.layers.empty()) {
        ++c.failures;
        continue;
      }
      dp.push_back(r.summary.delta_pre_refine);
      bp.push_back(r.summary.b_bar_pre);
      if (r.ok) {
        d.push_back(*r.summary.delta_post_refine);
        b.push_back(*r.summary.b_bar_post);
      } else {
        ++c.failures;
      }
    }
    c.delta = describe(d);
    c.bits = describe(b);
    c.delta_pre = describe(dp);
    c.bits_pre = describe(bp);
    c.dominates_heq = c.failures == 0 && c.bits.count > 0 && c.bits.mean <= res.heq_bits &&
                      c.delta.mean <= res.heq_delta;
  }
  return res;
}

landscape::PerturbationReport perturbation(const RunConfig& config, const data::Splits& splits,
                                           const nn::ModelState& pretrained,
                                           const nn::ModelState& compressed) {
  const auto& eval = config.perturb_split == "train" ? splits.train : splits.test;
  return landscape::perturbation_study(pretrained, compressed, eval, config.perturb_samples,
                                       Rng::derive(config.seed, {0x9e27}));
}

}  // namespace softquant::pipeline
