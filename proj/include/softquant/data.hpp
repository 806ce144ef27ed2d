#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "softquant/nn.hpp"

namespace softquant::data {

struct Dataset {
  Tensor features;  // [n, dims]
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dims() const { return features.dim(1); }
  /// Gathers the given rows into a contiguous batch.
  Tensor rows(std::span<const std::size_t> idx) const;
  std::vector<int> labels_of(std::span<const std::size_t> idx) const;
};

struct Splits {
  Dataset train;
  Dataset test;
};

enum class DatasetKind { blobs, images };

/// Gaussian blobs: each class owns `centers_per_class` centers drawn so that
/// two centers sit about `separation` apart; samples add unit-variance noise.
/// Images: a pixel file plus a label file (see docs/formats.md), split by
/// `test_fraction` after a seeded shuffle.
struct DatasetSpec {
  DatasetKind kind = DatasetKind::blobs;
  std::size_t classes = 8;
  std::size_t dims = 32;
  std::size_t centers_per_class = 1;
  double separation = 6.0;
  std::size_t n_train = 2048;
  std::size_t n_test = 2048;
  std::uint64_t seed = 1;
  std::string image_path;
  std::string label_path;
  double test_fraction = 0.2;
};

Splits load_dataset(const DatasetSpec& spec);

Splits make_blobs(const DatasetSpec& spec);

/// Reads the raw image/label container pair. Throws ParseError with the byte
/// offset of the first malformed field.
Dataset read_image_files(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Writes the same container pair (pixels are clamped to [0, 255] after scaling by 255).
void write_image_files(const Dataset& data, std::size_t channels, std::size_t height,
                       std::size_t width, const std::filesystem::path& images,
                       const std::filesystem::path& labels);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;  // percent
};

/// Full-set cross-entropy and accuracy, evaluated in fixed-size chunks.
Evaluation evaluate(const nn::ModelState& model, const Dataset& data);

}  // namespace softquant::data
