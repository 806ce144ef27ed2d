#pragma once

#include <optional>
#include <string>
#include <vector>

#include "softquant/config.hpp"
#include "softquant/data.hpp"
#include "softquant/landscape.hpp"
#include "softquant/nn.hpp"
#include "softquant/quantizer.hpp"
#include "softquant/train.hpp"

namespace softquant::pipeline {

/// Clusters of every coupled layer, in layer order.
std::vector<quant::ClusterMap> identify_model_clusters(const nn::ModelState& model,
                                                       int precision_bits);

/// Refines each map; the first layer whose refinement is impossible aborts
/// the whole model with RefinementImpossible.
std::vector<quant::ClusterMap> refine_model_clusters(const std::vector<quant::ClusterMap>& maps,
                                                     const quant::RefineConfig& cfg);

/// Replaces each mapped layer's weights by centroids[assignment].
nn::ModelState quantize_model(const nn::ModelState& model,
                              const std::vector<quant::ClusterMap>& maps);

struct LayerQuant {
  std::string layer;
  std::size_t n = 0;
  std::size_t k_pre = 0;
  std::size_t k_post = 0;  // 0 when refinement failed
  double b_pre = 0.0;
  double b_post = 0.0;

  bool operator==(const LayerQuant&) const = default;
};

/// The serializable outcome of one pipeline run (report.json).
struct Summary {
  double h = 0.0;
  double w = 0.0;
  std::uint64_t seed = 0;
  double acc_pretrained = 0.0;
  double acc_finetuned = 0.0;
  double acc_pre_refine = 0.0;
  std::optional<double> acc_post_refine;
  double delta_pre_refine = 0.0;
  std::optional<double> delta_post_refine;
  double b_bar_pre = 0.0;
  std::optional<double> b_bar_post;
  std::string refinement_error;
  std::vector<LayerQuant> layers;

  bool refined() const { return b_bar_post.has_value(); }
  bool operator==(const Summary&) const = default;
};

struct PipelineResult {
  Summary summary;
  nn::ModelState pretrained;
  nn::ModelState finetuned;
  nn::ModelState quantized_pre;
  std::optional<nn::ModelState> quantized_post;
  std::vector<quant::ClusterMap> maps_pre;
  std::vector<quant::ClusterMap> maps_post;
  train::SoftQuantResult softquant;
};

/// Seed of the fine-tuning stream for grid cell (h_index, w_index), repeat r.
std::uint64_t run_seed(std::uint64_t master, std::size_t h_index, std::size_t w_index,
                       std::size_t repeat);

/// Soft quantization, cluster identification, refinement and evaluation on a
/// given pretrained model. A refinement failure is recorded in the summary.
PipelineResult run_pipeline(const RunConfig& config, const data::Splits& splits,
                            const nn::ModelState& pretrained, double acc_pretrained,
                            std::uint64_t sq_seed);

/// Same as above with the (0, 0, 0) grid seed.
PipelineResult run_pipeline(const RunConfig& config, const data::Splits& splits,
                            const nn::ModelState& pretrained, double acc_pretrained);

struct HeqBaseline {
  int bits = 4;
  nn::ModelState model;
  std::vector<quant::ClusterMap> maps;
  quant::QuantizationReport report;
  double acc = 0.0;
  double delta = 0.0;
};

/// HEQ applied to every coupled layer of the pretrained model.
HeqBaseline heq_baseline(const nn::ModelState& pretrained, const data::Splits& splits, int bits,
                         double acc_pretrained);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (0 for a single value)
  double cv = 0.0;
  bool cv_defined = false;  // false when mean == 0
  std::size_t count = 0;
};

Stat describe(const std::vector<double>& values);

struct SweepSpec {
  std::vector<double> h_values;
  std::vector<double> w_values;
  std::size_t repeats = 15;
  std::size_t threads = 0;  // 0: hardware concurrency
};

struct RunOutcome {
  bool ok = false;
  Summary summary;
  std::string error;
};

struct SweepCell {
  double h = 0.0;
  double w = 0.0;
  std::size_t failures = 0;
  Stat delta;       // post-refinement
  Stat bits;        // post-refinement
  Stat delta_pre;   // pre-refinement
  Stat bits_pre;    // pre-refinement
  bool dominates_heq = false;
  std::vector<RunOutcome> runs;
};

struct SweepResult {
  double acc_pretrained = 0.0;
  double heq_delta = 0.0;
  double heq_bits = 0.0;
  std::vector<SweepCell> cells;  // h-major
};

/// Repeats the pipeline for every (h, w) cell from a shared pretrained model.
/// A cell dominates the HEQ baseline when every repeat refined successfully,
/// mean b_bar <= the HEQ b_bar and mean delta-A <= the HEQ delta-A.
SweepResult sweep(const SweepSpec& spec, const RunConfig& config, const data::Splits& splits,
                  const nn::ModelState& pretrained, double acc_pretrained,
                  const HeqBaseline& heq);

/// The perturbation study on the configured evaluation split.
landscape::PerturbationReport perturbation(const RunConfig& config, const data::Splits& splits,
                                           const nn::ModelState& pretrained,
                                           const nn::ModelState& compressed);

}  // namespace softquant::pipeline
