#pragma once

#include <optional>
#include <string>
#include <vector>

#include "softquant/config.hpp"
#include "softquant/coupling.hpp"
#include "softquant/data.hpp"
#include "softquant/nn.hpp"
#include "softquant/scaling.hpp"

namespace softquant::train {

struct PretrainEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct PretrainResult {
  nn::ModelState model;
  double test_accuracy = 0.0;  // A_pre, percent
  std::vector<PretrainEpoch> log;
};

/// Trains a fresh model on `splits.train` with Nesterov SGD. Throws
/// NumericError if the loss becomes non-finite.
PretrainResult pretrain(const RunConfig& config, const data::Splits& splits);

struct StepRecord {
  int epoch = 0;
  std::size_t step = 0;
  double sample_fraction = 1.0;
  nn::LossBreakdown loss;  // batch task loss + subsampled coupling estimate
};

/// Epoch-boundary snapshot. Epoch 0 is the pretrained state; epoch e > 0 is
/// the state after e fine-tuning epochs. The coupling term is evaluated on
/// full-layer histograms with the i == j self-interaction removed.
struct EpochRecord {
  int epoch = 0;
  double train_task_loss = 0.0;
  double test_accuracy = 0.0;
  double coupling = 0.0;
  std::vector<std::size_t> clusters;  // K_l at identification precision, per coupled layer
};

struct SoftQuantResult {
  nn::ModelState model;
  scaling::CouplingParams params;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::vector<std::string> warnings;
};

/// Coupled-layer stats measured on `pretrained`, turned into (h_l, w_l).
scaling::CouplingParams coupling_params(const nn::ModelState& pretrained, const RunConfig& config);

/// Fine-tunes with the compression force added to the task gradient at every
/// step. The histogram of each coupled layer is rebuilt every
/// `histogram_stride` steps from a subsample sized by the schedule.
SoftQuantResult soft_quantize(const nn::ModelState& pretrained, const data::Splits& splits,
                              const RunConfig& config, std::uint64_t seed);

/// Full-histogram coupling value sum_l h_l * sum_{i != j} U(theta_i - theta_j)
/// for the current model, using the same per-layer parameters.
double coupling_value(const nn::ModelState& model, const scaling::CouplingParams& params,
                      std::size_t n_bins);

}  // namespace softquant::train
