#include "softquant/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "softquant/errors.hpp"
#include "softquant/format.hpp"

namespace softquant {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean '" + v + "' for key '" + key + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field num(T RunConfig::*m) {
  return {[m](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return format_double(c.*m);
            else
              return std::to_string(c.*m);
          },
          [m](RunConfig& c, const std::string& k, const std::string& v) {
            c.*m = parse_number<T>(k, v);
          }};
}

template <typename T>
Field dnum(T data::DatasetSpec::*m) {
  return {[m](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return format_double(c.dataset.*m);
            else
              return std::to_string(c.dataset.*m);
          },
          [m](RunConfig& c, const std::string& k, const std::string& v) {
            c.dataset.*m = parse_number<T>(k, v);
          }};
}

Field str(std::string RunConfig::*m) {
  return {[m](const RunConfig& c) { return c.*m; },
          [m](RunConfig& c, const std::string&, const std::string& v) { c.*m = v; }};
}

Field list(std::vector<std::size_t> RunConfig::*m) {
  return {[m](const RunConfig& c) { return join(c.*m); },
          [m](RunConfig& c, const std::string& k, const std::string& v) {
            c.*m = parse_list(k, v);
          }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"dataset",
       {[](const RunConfig& c) {
          return std::string(c.dataset.kind == data::DatasetKind::blobs ? "blobs" : "images");
        },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "blobs")
            c.dataset.kind = data::DatasetKind::blobs;
          else if (v == "images")
            c.dataset.kind = data::DatasetKind::images;
          else
            throw ConfigError("invalid value '" + v + "' for key '" + k + "'");
        }}},
      {"classes", dnum(&data::DatasetSpec::classes)},
      {"dims", dnum(&data::DatasetSpec::dims)},
      {"centers_per_class", dnum(&data::DatasetSpec::centers_per_class)},
      {"separation", dnum(&data::DatasetSpec::separation)},
      {"n_train", dnum(&data::DatasetSpec::n_train)},
      {"n_test", dnum(&data::DatasetSpec::n_test)},
      {"data_seed", dnum(&data::DatasetSpec::seed)},
      {"image_path",
       {[](const RunConfig& c) { return c.dataset.image_path; },
        [](RunConfig& c, const std::string&, const std::string& v) { c.dataset.image_path = v; }}},
      {"label_path",
       {[](const RunConfig& c) { return c.dataset.label_path; },
        [](RunConfig& c, const std::string&, const std::string& v) { c.dataset.label_path = v; }}},
      {"test_fraction", dnum(&data::DatasetSpec::test_fraction)},
      {"arch", str(&RunConfig::arch)},
      {"hidden", list(&RunConfig::hidden)},
      {"conv_channels", list(&RunConfig::conv_channels)},
      {"conv_kernel", num(&RunConfig::conv_kernel)},
      {"image_channels", num(&RunConfig::image_channels)},
      {"image_height", num(&RunConfig::image_height)},
      {"image_width", num(&RunConfig::image_width)},
      {"couple_biases",
       {[](const RunConfig& c) { return std::string(c.couple_biases ? "true" : "false"); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.couple_biases = parse_bool(k, v);
        }}},
      {"pretrain_epochs", num(&RunConfig::pretrain_epochs)},
      {"pretrain_lr", num(&RunConfig::pretrain_lr)},
      {"pretrain_momentum", num(&RunConfig::pretrain_momentum)},
      {"batch_size", num(&RunConfig::batch_size)},
      {"sq_epochs", num(&RunConfig::sq_epochs)},
      {"sq_lr", num(&RunConfig::sq_lr)},
      {"sq_momentum", num(&RunConfig::sq_momentum)},
      {"h", num(&RunConfig::h)},
      {"w", num(&RunConfig::w)},
      {"alpha", num(&RunConfig::alpha)},
      {"n_bins", num(&RunConfig::n_bins)},
      {"schedule_f0", num(&RunConfig::schedule_f0)},
      {"schedule_epoch_full", num(&RunConfig::schedule_epoch_full)},
      {"histogram_stride", num(&RunConfig::histogram_stride)},
      {"precision_bits", num(&RunConfig::precision_bits)},
      {"n_min", num(&RunConfig::n_min)},
      {"heq_bits", num(&RunConfig::heq_bits)},
      {"perturb_samples", num(&RunConfig::perturb_samples)},
      {"perturb_split", str(&RunConfig::perturb_split)},
      {"seed", num(&RunConfig::seed)},
      {"output_dir", str(&RunConfig::output_dir)},
  };
  return f;
}

const Field& field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

void RunConfig::set(const std::string& key, const std::string& value) {
  if (value.find_first_of("#\n") != std::string::npos)
    throw ConfigError("value for key '" + key + "' may not contain '#' or a newline");
  field(key).set(*this, key, trim(value));
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

bool RunConfig::operator==(const RunConfig& o) const { return to_text() == o.to_text(); }

coupling::CouplingSchedule RunConfig::schedule() const {
  auto s = coupling::CouplingSchedule::for_epochs(sq_epochs, schedule_f0);
  if (schedule_epoch_full >= 0) s.epoch_full = schedule_epoch_full;
  return s;
}

std::vector<nn::LayerSpec> RunConfig::layer_specs(std::size_t input_dims,
                                                  std::size_t classes) const {
  std::vector<nn::LayerSpec> specs;
  if (arch == "mlp") {
    std::size_t in = input_dims;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      specs.push_back(nn::dense("fc" + std::to_string(i + 1), in, hidden[i]));
      in = hidden[i];
    }
    specs.push_back(nn::dense("fc" + std::to_string(hidden.size() + 1), in, classes));
  } else if (arch == "cnn") {
    if (image_channels * image_height * image_width != input_dims)
      throw ConfigError("image_channels*image_height*image_width must equal the input size " +
                        std::to_string(input_dims));
    std::size_t ch = image_channels;
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
      specs.push_back(nn::conv2d("conv" + std::to_string(i + 1), ch, conv_channels[i],
                                 conv_kernel, image_height, image_width));
      ch = conv_channels[i];
    }
    specs.push_back(nn::dense("fc1", ch * image_height * image_width, classes));
  } else {
    throw ConfigError("unknown arch '" + arch + "' (expected mlp or cnn)");
  }
  for (auto& s : specs) s.couple = true;
  return specs;
}

void RunConfig::validate() const {
  if (arch != "mlp" && arch != "cnn") throw ConfigError("unknown arch '" + arch + "' (expected mlp or cnn)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (pretrain_epochs < 0 || sq_epochs < 1) throw ConfigError("epoch counts out of range");
  if (!(pretrain_lr > 0.0) || !(sq_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(pretrain_momentum >= 0.0 && pretrain_momentum < 1.0) ||
      !(sq_momentum >= 0.0 && sq_momentum < 1.0))
    throw ConfigError("momentum must lie in [0, 1)");
  if (!(h >= 0.0)) throw ConfigError("h must be >= 0");
  if (!(w > 0.0)) throw ConfigError("w must be > 0");
  if (n_bins < 3) throw ConfigError("n_bins must be >= 3");
  if (histogram_stride == 0) throw ConfigError("histogram_stride must be >= 1");
  if (precision_bits < 0 || precision_bits > 24) throw ConfigError("precision_bits out of range");
  if (heq_bits < 1 || heq_bits > 24) throw ConfigError("heq_bits out of range");
  if (perturb_split != "test" && perturb_split != "train")
    throw ConfigError("perturb_split must be 'test' or 'train'");
  schedule().validate();
}

std::filesystem::path RunConfig::resolved_output_dir() const {
  std::filesystem::path p(output_dir);
  if (p.is_relative())
    if (const char* root = std::getenv("SOFTQUANT_OUTPUT_ROOT"); root && *root)
      return std::filesystem::path(root) / p;
  return p;
}

}  // namespace softquant
