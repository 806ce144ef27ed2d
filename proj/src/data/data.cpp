#include "softquant/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "softquant/errors.hpp"
#include "softquant/rng.hpp"

namespace softquant::data {

Tensor Dataset::rows(std::span<const std::size_t> idx) const {
  const std::size_t d = dims();
  Tensor out({idx.size(), d});
  const auto src = features.values();
  auto dst = out.values();
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                dst.begin() + static_cast<std::ptrdiff_t>(r * d));
  return out;
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> idx) const {
  std::vector<int> out(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) out[r] = labels[idx[r]];
  return out;
}

namespace {

Dataset sample_blobs(const std::vector<std::vector<double>>& centers, std::size_t classes,
                     std::size_t per_class, std::size_t n, std::size_t dims, Rng& rng) {
  Dataset d;
  d.num_classes = classes;
  d.features = Tensor({n, dims});
  d.labels.resize(n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = order[i];
    const auto label = static_cast<int>(i % classes);
    const auto& c = centers[static_cast<std::size_t>(label) * per_class + rng.below(per_class)];
    d.labels[row] = label;
    for (std::size_t k = 0; k < dims; ++k) d.features[row * dims + k] = c[k] + rng.normal();
  }
  return d;
}

}  // namespace

Splits make_blobs(const DatasetSpec& spec) {
  if (spec.classes < 2 || spec.dims == 0 || spec.centers_per_class == 0)
    throw ConfigError("blobs need >= 2 classes, >= 1 dim and >= 1 center per class");
  if (spec.n_train == 0 || spec.n_test == 0) throw ConfigError("blobs need nonempty splits");
  Rng center_rng(Rng::derive(spec.seed, {1}));
  const double scale = spec.separation / std::sqrt(2.0 * static_cast<double>(spec.dims));
  std::vector<std::vector<double>> centers(spec.classes * spec.centers_per_class,
                                           std::vector<double>(spec.dims));
  for (auto& c : centers)
    for (auto& v : c) v = scale * center_rng.normal();
  Rng train_rng(Rng::derive(spec.seed, {2}));
  Rng test_rng(Rng::derive(spec.seed, {3}));
  return {sample_blobs(centers, spec.classes, spec.centers_per_class, spec.n_train, spec.dims,
                       train_rng),
          sample_blobs(centers, spec.classes, spec.centers_per_class, spec.n_test, spec.dims,
                       test_rng)};
}

namespace {

constexpr char kImageMagic[4] = {'S', 'Q', 'I', 'M'};
constexpr char kLabelMagic[4] = {'S', 'Q', 'L', 'B'};

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Reader {
  const std::vector<unsigned char>& buf;
  std::size_t pos = 0;
  std::string file;

  void need(std::size_t n, const char* what) {
    if (buf.size() - pos < n)
      throw ParseError(file + ": truncated " + what, pos);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(buf[pos + k]) << (8 * k);
    pos += 4;
    return v;
  }
  void magic(const char (&m)[4]) {
    need(4, "magic");
    if (std::memcmp(buf.data() + pos, m, 4) != 0) throw ParseError(file + ": bad magic", pos);
    pos += 4;
  }
};

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int k = 0; k < 4; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset read_image_files(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ibuf = slurp(images);
  Reader ir{ibuf, 0, images.string()};
  ir.magic(kImageMagic);
  const std::size_t version_at = ir.pos;
  if (ir.u32("version") != 1) throw ParseError(ir.file + ": unsupported version", version_at);
  const std::size_t count = ir.u32("count");
  const std::size_t c = ir.u32("channels"), h = ir.u32("height"), w = ir.u32("width");
  if (c == 0 || h == 0 || w == 0) throw ParseError(ir.file + ": zero image dimension", ir.pos - 12);
  const std::size_t dims = c * h * w;
  ir.need(count * dims, "pixel block");
  if (ibuf.size() != ir.pos + count * dims)
    throw ParseError(ir.file + ": trailing bytes after pixel block", ir.pos + count * dims);

  const auto lbuf = slurp(labels);
  Reader lr{lbuf, 0, labels.string()};
  lr.magic(kLabelMagic);
  const std::size_t lversion_at = lr.pos;
  if (lr.u32("version") != 1) throw ParseError(lr.file + ": unsupported version", lversion_at);
  const std::size_t count_at = lr.pos;
  if (lr.u32("count") != count)
    throw ParseError(lr.file + ": label count differs from image count", count_at);
  const std::size_t classes_at = lr.pos;
  const std::size_t classes = lr.u32("num_classes");
  if (classes < 2) throw ParseError(lr.file + ": need at least two classes", classes_at);
  lr.need(count, "label block");
  if (lbuf.size() != lr.pos + count)
    throw ParseError(lr.file + ": trailing bytes after label block", lr.pos + count);

  Dataset d;
  d.num_classes = classes;
  d.features = Tensor({count, dims});
  d.labels.resize(count);
  for (std::size_t i = 0; i < count * dims; ++i)
    d.features[i] = static_cast<double>(ibuf[ir.pos + i]) / 255.0;
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned y = lbuf[lr.pos + i];
    if (y >= classes) throw ParseError(lr.file + ": label out of range", lr.pos + i);
    d.labels[i] = static_cast<int>(y);
  }
  return d;
}

void write_image_files(const Dataset& data, std::size_t channels, std::size_t height,
                       std::size_t width, const std::filesystem::path& images,
                       const std::filesystem::path& labels) {
  if (channels * height * width != data.dims()) throw ConfigError("image dims mismatch");
  std::ofstream io(images, std::ios::binary);
  if (!io) throw IoError("cannot write '" + images.string() + "'");
  io.write(kImageMagic, 4);
  put_u32(io, 1);
  put_u32(io, static_cast<std::uint32_t>(data.size()));
  put_u32(io, static_cast<std::uint32_t>(channels));
  put_u32(io, static_cast<std::uint32_t>(height));
  put_u32(io, static_cast<std::uint32_t>(width));
  for (double v : data.features.values()) {
    const double px = std::clamp(std::round(v * 255.0), 0.0, 255.0);
    io.put(static_cast<char>(static_cast<unsigned char>(px)));
  }
  std::ofstream lo(labels, std::ios::binary);
  if (!lo) throw IoError("cannot write '" + labels.string() + "'");
  lo.write(kLabelMagic, 4);
  put_u32(lo, 1);
  put_u32(lo, static_cast<std::uint32_t>(data.size()));
  put_u32(lo, static_cast<std::uint32_t>(data.num_classes));
  for (int y : data.labels) lo.put(static_cast<char>(static_cast<unsigned char>(y)));
  if (!io || !lo) throw IoError("write failed for image/label pair");
}

Splits load_dataset(const DatasetSpec& spec) {
  if (spec.kind == DatasetKind::blobs) return make_blobs(spec);
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
    throw ConfigError("test_fraction must be in (0, 1)");
  Dataset all = read_image_files(spec.image_path, spec.label_path);
  const std::size_t n = all.size();
  const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(n)));
  if (n_test == 0 || n_test >= n) throw ConfigError("image dataset too small to split");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(Rng::derive(spec.seed, {4}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::span<const std::size_t> test_idx(order.data(), n_test);
  std::span<const std::size_t> train_idx(order.data() + n_test, n - n_test);
  Splits s;
  s.train = {all.rows(train_idx), all.labels_of(train_idx), all.num_classes};
  s.test = {all.rows(test_idx), all.labels_of(test_idx), all.num_classes};
  return s;
}

Evaluation evaluate(const nn::ModelState& model, const Dataset& data) {
  constexpr std::size_t kChunk = 1024;
  if (data.size() == 0) return {};
  double loss = 0.0;
  std::size_t hits = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, data.size() - start);
    idx.resize(len);
    std::iota(idx.begin(), idx.end(), start);
    const auto logits = nn::forward(model, data.rows(idx));
    const auto y = data.labels_of(idx);
    loss += nn::cross_entropy(logits, y) * static_cast<double>(len);
    hits += static_cast<std::size_t>(std::llround(nn::accuracy(logits, y) * static_cast<double>(len)));
  }
  const double n = static_cast<double>(data.size());
  return {loss / n, 100.0 * static_cast<double>(hits) / n};
}

}  // namespace softquant::data
