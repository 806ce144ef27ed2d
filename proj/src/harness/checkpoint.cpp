#include "softquant/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "softquant/errors.hpp"

namespace softquant::io {

namespace {

constexpr std::uint8_t kCheckpointMagic[8] = {'S', 'Q', 'C', 'K', 'P', 'T', 0, 1};
constexpr std::uint8_t kCodebookMagic[8] = {'S', 'Q', 'C', 'O', 'D', 'E', 0, 1};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf_(b) {}
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) { pos_ += n; }
  bool done() const { return pos_ == buf_.size(); }
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) throw ParseError(std::string("truncated ") + what, pos_);
  }
  void magic(const std::uint8_t (&m)[8], const char* what) {
    need(8, what);
    if (std::memcmp(buf_.data() + pos_, m, 8) != 0)
      throw ParseError(std::string("bad magic for ") + what, pos_);
    pos_ += 8;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(buf_[pos_ + k]) << (8 * k);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(buf_[pos_ + k]) << (8 * k);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) {
    const std::size_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

void put_tensor(Writer& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u64(d);
  for (double v : t.values()) w.f64(v);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const nn::ModelState& model) {
  nn::validate(model);
  nlohmann::ordered_json manifest;
  manifest["format"] = "softquant-checkpoint";
  manifest["version"] = 1;
  manifest["seed"] = model.rng_seed;
  manifest["layers"] = nlohmann::ordered_json::array();
  std::size_t tensors = 0;
  for (const auto& l : model.layers) {
    const auto& s = l.spec;
    nlohmann::ordered_json j;
    j["name"] = s.name;
    j["kind"] = nn::to_string(s.kind);
    if (s.kind == nn::LayerKind::dense) {
      j["in_features"] = s.in_features;
      j["out_features"] = s.out_features;
    } else {
      j["in_channels"] = s.in_channels;
      j["out_channels"] = s.out_channels;
      j["kernel"] = s.kernel;
      j["height"] = s.height;
      j["width"] = s.width;
    }
    j["has_bias"] = s.has_bias;
    j["couple"] = s.couple;
    j["weight_shape"] = s.weight_shape();
    j["bias_shape"] = s.bias_shape();
    manifest["layers"].push_back(j);
    tensors += s.has_bias ? 4 : 2;
  }
  const std::string text = manifest.dump();

  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.u64(text.size());
  w.bytes(text.data(), text.size());
  w.u32(static_cast<std::uint32_t>(tensors));
  for (const auto& l : model.layers) {
    put_tensor(w, l.spec.name + ".weight", l.weights);
    if (l.spec.has_bias) put_tensor(w, l.spec.name + ".bias", l.bias);
    put_tensor(w, l.spec.name + ".weight_velocity", l.velocity);
    if (l.spec.has_bias) put_tensor(w, l.spec.name + ".bias_velocity", l.bias_velocity);
  }
  return w.take();
}

nn::ModelState decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kCheckpointMagic, "checkpoint");
  const std::size_t len = r.u64("manifest length");
  const std::size_t manifest_at = r.pos();
  r.need(len, "manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(manifest_at),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(manifest_at + len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed manifest: ") + e.what(), manifest_at);
  }
  r.skip(len);

  nn::ModelState model;
  try {
    if (manifest.at("version").get<int>() != 1)
      throw ParseError("unsupported checkpoint version", manifest_at);
    model.rng_seed = manifest.at("seed").get<std::uint64_t>();
    for (const auto& j : manifest.at("layers")) {
      nn::LayerSpec s;
      s.name = j.at("name").get<std::string>();
      s.kind = nn::layer_kind_from_string(j.at("kind").get<std::string>());
      if (s.kind == nn::LayerKind::dense) {
        s.in_features = j.at("in_features").get<std::size_t>();
        s.out_features = j.at("out_features").get<std::size_t>();
      } else {
        s.in_channels = j.at("in_channels").get<std::size_t>();
        s.out_channels = j.at("out_channels").get<std::size_t>();
        s.kernel = j.at("kernel").get<std::size_t>();
        s.height = j.at("height").get<std::size_t>();
        s.width = j.at("width").get<std::size_t>();
      }
      s.has_bias = j.at("has_bias").get<bool>();
      s.couple = j.at("couple").get<bool>();
      nn::Layer l;
      l.spec = s;
      model.layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest missing fields: ") + e.what(), manifest_at);
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), manifest_at);
  }

  const std::size_t count = r.u32("tensor count");
  std::map<std::string, Tensor> tensors;
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t record_at = r.pos();
    std::string name = r.str("tensor name");
    const std::size_t rank = r.u32("tensor rank");
    if (rank > 8) throw ParseError("implausible tensor rank", record_at);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u64("tensor dim");
    const std::size_t n = Tensor::count(shape);
    r.need(n * 8, "tensor data");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64("tensor data");
    if (!tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(values))).second)
      throw ParseError("duplicate tensor record", record_at);
  }
  if (!r.done()) throw ParseError("trailing bytes after tensor records", r.pos());

  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ParseError("missing tensor '" + name + "'", r.pos());
    Tensor t = std::move(it->second);
    tensors.erase(it);
    return t;
  };
  for (auto& l : model.layers) {
    l.weights = take(l.spec.name + ".weight");
    l.velocity = take(l.spec.name + ".weight_velocity");
    if (l.spec.has_bias) {
      l.bias = take(l.spec.name + ".bias");
      l.bias_velocity = take(l.spec.name + ".bias_velocity");
    }
  }
  if (!tensors.empty()) throw ParseError("unreferenced tensor '" + tensors.begin()->first + "'", r.pos());
  try {
    nn::validate(model);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("inconsistent checkpoint: ") + e.what(), manifest_at);
  }
  return model;
}

void save_checkpoint(const nn::ModelState& model, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(model));
}

nn::ModelState load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

Codebook make_codebook(std::span<const quant::ClusterMap> maps) {
  Codebook cb;
  for (const auto& m : maps) cb.layers.push_back({m.layer, m.centroids, m.assignments});
  return cb;
}

std::vector<std::uint8_t> encode_codebook(const Codebook& cb) {
  Writer w;
  w.bytes(kCodebookMagic, 8);
  w.u32(static_cast<std::uint32_t>(cb.layers.size()));
  for (const auto& l : cb.layers) {
    w.str(l.layer);
    w.u32(static_cast<std::uint32_t>(l.centroids.size()));
    for (double c : l.centroids) w.f64(c);
    w.u64(l.indices.size());
    for (auto i : l.indices) w.u32(i);
  }
  return w.take();
}

Codebook decode_codebook(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kCodebookMagic, "codebook");
  const std::size_t layers = r.u32("layer count");
  Codebook cb;
  for (std::size_t i = 0; i < layers; ++i) {
    CodebookLayer l;
    l.layer = r.str("layer name");
    const std::size_t k = r.u32("centroid count");
    r.need(k * 8, "centroids");
    l.centroids.resize(k);
    for (auto& c : l.centroids) c = r.f64("centroid");
    const std::size_t n = r.u64("index count");
    r.need(n * 4, "indices");
    l.indices.resize(n);
    for (auto& x : l.indices) {
      const std::size_t at = r.pos();
      x = r.u32("index");
      if (x >= k) throw ParseError("codebook index out of range", at);
    }
    cb.layers.push_back(std::move(l));
  }
  if (!r.done()) throw ParseError("trailing bytes after codebook", r.pos());
  return cb;
}

void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
  write_file(path, encode_codebook(cb));
}

Codebook load_codebook(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_codebook(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

nn::ModelState apply_codebook(const nn::ModelState& base, const Codebook& cb) {
  nn::ModelState out = base;
  for (const auto& entry : cb.layers) {
    nn::Layer* target = nullptr;
    for (auto& l : out.layers)
      if (l.spec.name == entry.layer) target = &l;
    if (!target) throw InputError("codebook names unknown layer '" + entry.layer + "'");
    if (entry.indices.size() != target->weights.size())
      throw InputError("codebook size mismatch for layer '" + entry.layer + "'");
    for (std::size_t i = 0; i < entry.indices.size(); ++i)
      target->weights[i] = entry.centroids.at(entry.indices[i]);
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace softquant::io
