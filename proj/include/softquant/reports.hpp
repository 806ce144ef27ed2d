#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "softquant/landscape.hpp"
#include "softquant/pipeline.hpp"
#include "softquant/scaling.hpp"
#include "softquant/train.hpp"

namespace softquant::reports {

// Text report builders. Column layouts are documented in docs/formats.md;
// every number is written with format_double so output is byte-stable.

/// layer,N_l,K_l_pre,K_l_post,b_l_pre,b_l_post
std::string quant_report_csv(const std::vector<pipeline::LayerQuant>& layers);

/// epoch,train_task_loss,coupling,total,test_accuracy,K_<layer>...
std::string loss_curve_csv(const std::vector<train::EpochRecord>& epochs,
                           const std::vector<std::string>& layer_names);

/// epoch,step,sample_fraction,task,coupling,total
std::string steps_csv(const std::vector<train::StepRecord>& steps);

/// One row per (h, w) cell.
std::string sweep_csv(const pipeline::SweepResult& sweep);

/// sample,delta_theta,delta_loss,slope rows plus a final "compressed" row.
std::string perturbation_csv(const landscape::PerturbationReport& report);

/// layer,N_l,sigma,energy,exponent,mse
std::string scaling_csv(const std::vector<scaling::ExtensivePoint>& points,
                        const scaling::ScalingFit& fit);

nlohmann::ordered_json to_json(const pipeline::Summary& s);
pipeline::Summary summary_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const pipeline::SweepResult& s);

/// Writes checkpoints, codebooks and every report of a pipeline run into `dir`.
void emit_pipeline(const pipeline::PipelineResult& result, const RunConfig& config,
                   const std::filesystem::path& dir);

}  // namespace softquant::reports
