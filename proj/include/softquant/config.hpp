#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "softquant/coupling.hpp"
#include "softquant/data.hpp"
#include "softquant/nn.hpp"

namespace softquant {

/// Every knob of a pipeline run. Defaults follow the reference protocol:
/// 30 fine-tuning epochs of Nesterov SGD (lr 1e-3, momentum 0.9), 2^14
/// histogram bins, 7-bit cluster identification and n_min = 10.
struct RunConfig {
  data::DatasetSpec dataset;

  // Architecture: "mlp" (dense stack) or "cnn" (conv stack, then one dense layer).
  std::string arch = "mlp";
  std::vector<std::size_t> hidden{64, 64};
  std::vector<std::size_t> conv_channels{4, 8};
  std::size_t conv_kernel = 3;
  std::size_t image_channels = 1;
  std::size_t image_height = 8;
  std::size_t image_width = 8;
  bool couple_biases = false;

  int pretrain_epochs = 20;
  double pretrain_lr = 0.05;
  double pretrain_momentum = 0.9;
  std::size_t batch_size = 64;

  int sq_epochs = 30;
  double sq_lr = 0.001;
  double sq_momentum = 0.9;

  double h = 1.0;
  double w = 0.5;
  double alpha = 0.66;
  std::size_t n_bins = coupling::kDefaultBins;
  double schedule_f0 = 0.1;
  int schedule_epoch_full = -1;  // -1: ceil(5/6 * sq_epochs)
  std::size_t histogram_stride = 1;

  int precision_bits = 7;
  std::size_t n_min = 10;
  int heq_bits = 4;

  std::size_t perturb_samples = 100;
  std::string perturb_split = "test";  // "test" or "train"

  std::uint64_t seed = 1;
  std::string output_dir = "out";

  /// Ordered key names of the text form.
  static const std::vector<std::string>& keys();
  std::string get(const std::string& key) const;
  /// Throws ConfigError on unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);

  /// `key = value` lines; '#' starts a comment; blank lines ignored.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_text() const;

  coupling::CouplingSchedule schedule() const;
  std::vector<nn::LayerSpec> layer_specs(std::size_t input_dims, std::size_t classes) const;
  void validate() const;

  /// Output directory, prefixed by $SOFTQUANT_OUTPUT_ROOT when that is set and
  /// output_dir is relative.
  std::filesystem::path resolved_output_dir() const;

  bool operator==(const RunConfig&) const;
};

}  // namespace softquant
