#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "softquant/nn.hpp"
#include "softquant/quantizer.hpp"

namespace softquant::io {

// Byte layouts are documented in docs/formats.md.

std::vector<std::uint8_t> encode_checkpoint(const nn::ModelState& model);
nn::ModelState decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const nn::ModelState& model, const std::filesystem::path& path);
nn::ModelState load_checkpoint(const std::filesystem::path& path);

/// Per-layer centroid table plus one index per weight.
struct CodebookLayer {
  std::string layer;
  std::vector<double> centroids;
  std::vector<std::uint32_t> indices;
};

struct Codebook {
  std::vector<CodebookLayer> layers;
};

Codebook make_codebook(std::span<const quant::ClusterMap> maps);

std::vector<std::uint8_t> encode_codebook(const Codebook& cb);
Codebook decode_codebook(std::span<const std::uint8_t> bytes);
void save_codebook(const Codebook& cb, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

/// Copy of `base` with each codebook layer's weights replaced by centroids[index].
nn::ModelState apply_codebook(const nn::ModelState& base, const Codebook& cb);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace softquant::io
