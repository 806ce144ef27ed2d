#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <filesystem>
#include <fstream>
#include <set>

#include "softquant/checkpoint.hpp"
#include "softquant/config.hpp"
#include "softquant/data.hpp"
#include "softquant/errors.hpp"
#include "softquant/pipeline.hpp"
#include "softquant/reports.hpp"
#include "softquant/train.hpp"
#include "support.hpp"

using namespace softquant;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.dataset.classes = 3;
  c.dataset.dims = 4;
  c.dataset.n_train = 96;
  c.dataset.n_test = 60;
  c.dataset.separation = 5.0;
  c.hidden = {6};
  c.pretrain_epochs = 4;
  c.sq_epochs = 2;
  c.batch_size = 16;
  c.n_bins = 256;
  c.h = 3.0;
  c.w = 1.0;
  c.n_min = 2;
  c.perturb_samples = 10;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("softquant_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> bytes_of(std::initializer_list<int> v) {
  std::vector<std::uint8_t> out;
  for (int x : v) out.push_back(static_cast<std::uint8_t>(x));
  return out;
}

void append_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) b.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::size_t parse_offset(const std::function<void()>& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.offset();
  }
  FAIL("expected a parse error");
  return 0;
}

const fs::path kGolden = SOFTQUANT_GOLDEN_DIR;

}  // namespace

TEST_CASE("config defaults follow the published training setup") {
  const RunConfig c;
  CHECK(c.sq_epochs == 30);
  CHECK(c.sq_lr == 0.001);
  CHECK(c.sq_momentum == 0.9);
  CHECK(c.alpha == 0.66);
  CHECK(c.n_bins == 16384);
  CHECK(c.precision_bits == 7);
  CHECK(c.n_min == 10);
  CHECK(c.batch_size == 64);
  CHECK(c.schedule().epoch_full == 25);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config round-trips through its text form") {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    RunConfig c;
    c.h = rng.uniform(0.0, 10.0);
    c.w = rng.uniform(1e-6, 3.0);
    c.alpha = rng.normal();
    c.sq_lr = std::ldexp(rng.uniform(), -static_cast<int>(rng.below(40)));
    c.dataset.separation = rng.normal(0.0, 1e6);
    c.dataset.seed = rng.next_u64();
    c.seed = rng.next_u64();
    c.hidden.assign(rng.below(4), 0);
    for (auto& h : c.hidden) h = 1 + rng.below(500);
    c.couple_biases = rng.below(2) == 1;
    c.schedule_epoch_full = static_cast<int>(rng.below(30)) - 1;
    c.output_dir = "runs/r" + std::to_string(t);
    const auto back = RunConfig::parse(c.to_text());
    CHECK(back == c);
    CHECK(back.h == c.h);
    CHECK(back.sq_lr == c.sq_lr);
    CHECK(back.dataset.seed == c.dataset.seed);
    CHECK(back.hidden == c.hidden);
  }
}

TEST_CASE("config grammar: comments, blanks, errors") {
  const auto c = RunConfig::parse("# run\n\n h = 0.25  # strength\nhidden = 8, 4\narch=mlp\n");
  CHECK(c.h == 0.25);
  CHECK(c.hidden == std::vector<std::size_t>{8, 4});
  CHECK_THROWS_AS(RunConfig::parse("h 0.25\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("nope = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("h = abc\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("seed = -1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("couple_biases = maybe\n"), ConfigError);
  RunConfig d;
  CHECK_THROWS_AS(d.set("output_dir", "a#b"), ConfigError);
  d.w = 0.0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  RunConfig e;
  e.arch = "resnet";
  CHECK_THROWS_AS(e.validate(), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/config.txt"), IoError);
}

TEST_CASE("output root comes from the environment") {
  RunConfig c;
  c.output_dir = "x";
  ::setenv("SOFTQUANT_OUTPUT_ROOT", "/tmp/root", 1);
  CHECK(c.resolved_output_dir() == fs::path("/tmp/root/x"));
  c.output_dir = "/abs";
  CHECK(c.resolved_output_dir() == fs::path("/abs"));
  ::unsetenv("SOFTQUANT_OUTPUT_ROOT");
  c.output_dir = "x";
  CHECK(c.resolved_output_dir() == fs::path("x"));
}

TEST_CASE("layer specs for both architectures") {
  RunConfig c;
  const auto mlp = c.layer_specs(16, 8);
  REQUIRE(mlp.size() == 3);
  CHECK(mlp[0].name == "fc1");
  CHECK(mlp[2].out_features == 8);
  c.arch = "cnn";
  const auto cnn = c.layer_specs(64, 10);
  REQUIRE(cnn.size() == 3);
  CHECK(cnn[0].kind == nn::LayerKind::conv2d);
  CHECK(cnn[2].in_features == 8 * 64);
  for (const auto& s : mlp) CHECK(s.couple);
}

TEST_CASE("blobs are deterministic and split cleanly") {
  data::DatasetSpec s;
  s.n_train = 100;
  s.n_test = 40;
  const auto a = data::make_blobs(s), b = data::make_blobs(s);
  CHECK(a.train.features == b.train.features);
  CHECK(a.test.labels == b.test.labels);
  CHECK(a.train.size() == 100);
  CHECK(a.test.dims() == 32);
  s.seed = 2;
  CHECK_FALSE(data::make_blobs(s).train.features == a.train.features);
  std::vector<int> counts(8, 0);
  for (int y : a.train.labels) ++counts[static_cast<std::size_t>(y)];
  for (int k : counts) CHECK(std::abs(k - 12) <= 1);
}

TEST_CASE("zero separation trains to chance, large separation past 95%") {
  RunConfig c = tiny_config();
  c.dataset.n_train = 1200;
  c.dataset.n_test = 1200;
  c.dataset.classes = 4;
  c.dataset.dims = 8;
  c.hidden = {16};
  c.pretrain_epochs = 10;
  c.dataset.separation = 0.0;
  auto r = train::pretrain(c, data::load_dataset(c.dataset));
  CHECK(r.test_accuracy < 35.0);
  c.dataset.separation = 12.0;
  r = train::pretrain(c, data::load_dataset(c.dataset));
  CHECK(r.test_accuracy > 95.0);
  CHECK(r.log.size() == 10);
}

TEST_CASE("zero pretraining epochs returns the initialization") {
  RunConfig c = tiny_config();
  c.pretrain_epochs = 0;
  const auto splits = data::load_dataset(c.dataset);
  const auto r = train::pretrain(c, splits);
  const auto init = nn::make_model(c.layer_specs(4, 3), c.seed);
  CHECK(r.model == init);
  CHECK(r.log.empty());
}

TEST_CASE("pretraining divergence is reported") {
  RunConfig c = tiny_config();
  c.pretrain_lr = 1e6;
  c.dataset.separation = 50.0;
  CHECK_THROWS_AS(train::pretrain(c, data::load_dataset(c.dataset)), NumericError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  auto m = testing::small_mlp(3);
  m.layers[1].velocity[2] = -0.0;
  m.layers[0].weights[0] = 1e-310;
  auto cnn = nn::make_model({nn::conv2d("c", 1, 2, 3, 4, 4), nn::dense("d", 32, 2, false)}, 9);
  for (const auto& model : {m, cnn}) {
    const auto bytes = io::encode_checkpoint(model);
    const auto back = io::decode_checkpoint(bytes);
    CHECK(back == model);
    CHECK(io::encode_checkpoint(back) == bytes);
  }
  const auto dir = scratch("ckpt");
  io::save_checkpoint(m, dir / "sub" / "m.ckpt");
  CHECK(io::load_checkpoint(dir / "sub" / "m.ckpt") == m);
  CHECK_THROWS_AS(io::load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("corrupt checkpoints fail with offsets") {
  const auto good = io::encode_checkpoint(testing::small_mlp(1));
  auto bad = good;
  bad[0] = 'X';
  CHECK(parse_offset([&] { io::decode_checkpoint(bad); }) == 0);
  auto trunc = good;
  trunc.resize(good.size() - 3);
  CHECK(parse_offset([&] { io::decode_checkpoint(trunc); }) > 16);
  auto extra = good;
  extra.push_back(0);
  CHECK(parse_offset([&] { io::decode_checkpoint(extra); }) == good.size());
  auto garbled = good;
  garbled[16] = '!';
  CHECK(parse_offset([&] { io::decode_checkpoint(garbled); }) == 16);
  CHECK_THROWS_AS(io::decode_checkpoint(std::span<const std::uint8_t>{}), ParseError);
}

TEST_CASE("codebook reconstructs the quantized checkpoint") {
  auto m = testing::small_mlp(5, 20, 30, 4);
  const auto maps = pipeline::refine_model_clusters(pipeline::identify_model_clusters(m, 4), {2});
  const auto q = pipeline::quantize_model(m, maps);
  const auto cb = io::make_codebook(maps);
  const auto back = io::decode_codebook(io::encode_codebook(cb));
  REQUIRE(back.layers.size() == cb.layers.size());
  for (std::size_t i = 0; i < cb.layers.size(); ++i) {
    CHECK(back.layers[i].layer == cb.layers[i].layer);
    CHECK(back.layers[i].centroids == cb.layers[i].centroids);
    CHECK(back.layers[i].indices == cb.layers[i].indices);
  }
  CHECK(io::apply_codebook(m, back) == q);
  for (std::size_t l = 0; l < q.layers.size(); ++l)
    CHECK(quant::distinct_values(q.layers[l].weights.values()) == maps[l].num_clusters());

  auto bytes = io::encode_codebook(cb);
  bytes.back() = 0xff;
  CHECK_THROWS_AS(io::decode_codebook(bytes), ParseError);
  io::Codebook wrong = cb;
  wrong.layers[0].layer = "zz";
  CHECK_THROWS_AS(io::apply_codebook(m, wrong), InputError);
}

TEST_CASE("image files round-trip and report malformed bytes by offset") {
  const auto dir = scratch("img");
  data::Dataset d;
  d.num_classes = 3;
  d.features = Tensor({4, 2 * 2 * 1});
  for (std::size_t i = 0; i < d.features.size(); ++i) d.features[i] = static_cast<double>(i * 15) / 255.0;
  d.labels = {0, 2, 1, 2};
  data::write_image_files(d, 1, 2, 2, dir / "x.sqim", dir / "y.sqlb");
  const auto back = data::read_image_files(dir / "x.sqim", dir / "y.sqlb");
  CHECK(back.labels == d.labels);
  CHECK(back.features == d.features);
  CHECK(back.num_classes == 3);

  auto write = [&](const fs::path& p, const std::vector<std::uint8_t>& b) { io::write_file(p, b); };
  std::vector<std::uint8_t> img = bytes_of({'S', 'Q', 'I', 'M'});
  append_u32(img, 1);
  append_u32(img, 2);  // count
  append_u32(img, 1);
  append_u32(img, 1);
  append_u32(img, 2);
  img.insert(img.end(), {10, 20, 30, 40});
  std::vector<std::uint8_t> lab = bytes_of({'S', 'Q', 'L', 'B'});
  append_u32(lab, 1);
  append_u32(lab, 2);
  append_u32(lab, 2);
  lab.insert(lab.end(), {0, 1});
  write(dir / "i", img);
  write(dir / "l", lab);
  CHECK(data::read_image_files(dir / "i", dir / "l").size() == 2);

  auto expect = [&](std::vector<std::uint8_t> i, std::vector<std::uint8_t> l, std::size_t off) {
    write(dir / "i2", i);
    write(dir / "l2", l);
    CHECK(parse_offset([&] { data::read_image_files(dir / "i2", dir / "l2"); }) == off);
  };
  auto i_magic = img;
  i_magic[2] = 'X';
  expect(i_magic, lab, 0);
  auto i_ver = img;
  i_ver[4] = 2;
  expect(i_ver, lab, 4);
  auto i_short = img;
  i_short.pop_back();
  expect(i_short, lab, 24);
  auto i_long = img;
  i_long.push_back(0);
  expect(i_long, lab, 28);
  auto l_count = lab;
  l_count[8] = 3;
  expect(img, l_count, 8);
  auto l_range = lab;
  l_range[17] = 7;
  expect(img, l_range, 17);
  CHECK_THROWS_AS(data::read_image_files(dir / "none", dir / "l"), IoError);
}

TEST_CASE("image datasets split deterministically") {
  const auto dir = scratch("imgsplit");
  RunConfig c = tiny_config();
  const auto blobs = data::make_blobs(c.dataset);
  data::Dataset d = blobs.train;
  for (auto& v : d.features.values()) v = std::clamp((v + 8.0) / 16.0, 0.0, 1.0);
  data::write_image_files(d, 1, 2, 2, dir / "x", dir / "y");
  c.dataset.kind = data::DatasetKind::images;
  c.dataset.image_path = (dir / "x").string();
  c.dataset.label_path = (dir / "y").string();
  const auto a = data::load_dataset(c.dataset), b = data::load_dataset(c.dataset);
  CHECK(a.test.size() == 19);
  CHECK(a.train.size() == 77);
  CHECK(a.test.features == b.test.features);
}

TEST_CASE("pipeline is deterministic and conserves cluster counts") {
  const auto c = tiny_config();
  const auto splits = data::load_dataset(c.dataset);
  const auto pre = train::pretrain(c, splits);
  const auto pre2 = train::pretrain(c, splits);
  CHECK(io::encode_checkpoint(pre.model) == io::encode_checkpoint(pre2.model));

  const auto a = pipeline::run_pipeline(c, splits, pre.model, pre.test_accuracy);
  const auto b = pipeline::run_pipeline(c, splits, pre.model, pre.test_accuracy);
  CHECK(a.summary == b.summary);
  CHECK(io::encode_checkpoint(a.finetuned) == io::encode_checkpoint(b.finetuned));
  CHECK(a.softquant.epochs.size() == 3);
  CHECK(a.softquant.steps.size() == 2 * 6);
  REQUIRE(a.summary.refined());
  for (std::size_t l = 0; l < a.summary.layers.size(); ++l) {
    const auto& lq = a.summary.layers[l];
    CHECK(quant::distinct_values(a.quantized_post->layers[l].weights.values()) == lq.k_post);
    CHECK(quant::distinct_values(a.quantized_pre.layers[l].weights.values()) == lq.k_pre);
    CHECK(lq.k_post <= lq.k_pre);
  }
  CHECK(*a.summary.b_bar_post <= a.summary.b_bar_pre);

  // Loading the pretrained checkpoint gives the same report.
  const auto dir = scratch("pipe");
  io::save_checkpoint(pre.model, dir / "p.ckpt");
  const auto c2 = pipeline::run_pipeline(c, splits, io::load_checkpoint(dir / "p.ckpt"),
                                         pre.test_accuracy);
  CHECK(c2.summary == a.summary);

  reports::emit_pipeline(a, c, dir / "a");
  reports::emit_pipeline(b, c, dir / "b");
  for (const auto* f : {"report.json", "quant_report.csv", "loss_curve.csv", "steps.csv",
                        "quantized.ckpt", "codebook.sqcb", "config.txt"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  CHECK(io::apply_codebook(a.finetuned, io::load_codebook(dir / "a" / "codebook.sqcb")) ==
        *a.quantized_post);
  CHECK(RunConfig::load(dir / "a" / "config.txt") == c);
}

TEST_CASE("null coupling leaves the distribution continuous") {
  RunConfig c = tiny_config();
  c.hidden = {64};
  c.dataset.dims = 16;
  c.h = 0.0;
  const auto splits = data::load_dataset(c.dataset);
  const auto pre = train::pretrain(c, splits);
  const auto r = pipeline::run_pipeline(c, splits, pre.model, pre.test_accuracy);
  // 1024 weights over 128 bins: only the sparse tails leave bins empty.
  CHECK(r.summary.layers[0].k_pre >= 80);
  CHECK(r.summary.layers[0].k_pre == r.softquant.epochs.back().clusters[0]);
}

TEST_CASE("refinement failure is recorded and pre-refinement results kept") {
  RunConfig c = tiny_config();
  c.n_min = 1000;
  const auto splits = data::load_dataset(c.dataset);
  const auto pre = train::pretrain(c, splits);
  const auto r = pipeline::run_pipeline(c, splits, pre.model, pre.test_accuracy);
  CHECK_FALSE(r.summary.refined());
  CHECK(r.summary.refinement_error.find("fc1") != std::string::npos);
  CHECK_FALSE(r.quantized_post.has_value());
  CHECK(r.summary.b_bar_pre > 0.0);
  const auto j = reports::to_json(r.summary);
  CHECK(j["b_bar_post"].is_null());
  CHECK(reports::summary_from_json(nlohmann::json::parse(j.dump())) == r.summary);
}

TEST_CASE("summary JSON round-trips") {
  pipeline::Summary s;
  s.h = 0.1;
  s.w = 1.0 / 3.0;
  s.seed = 0xfedcba9876543210ULL;
  s.acc_pretrained = 95.8;
  s.acc_finetuned = 95.1;
  s.acc_pre_refine = 95.0;
  s.acc_post_refine = 94.75;
  s.delta_pre_refine = 0.8;
  s.delta_post_refine = 1.05;
  s.b_bar_pre = 4.2;
  s.b_bar_post = 3.3;
  s.layers = {{"fc1", 1024, 20, 12, std::log2(20.0), std::log2(12.0)}};
  const auto text = reports::to_json(s).dump(2);
  CHECK(reports::summary_from_json(nlohmann::json::parse(text)) == s);
}

TEST_CASE("report writers match hand-written golden files") {
  std::vector<pipeline::LayerQuant> layers{{"fc1", 1024, 40, 16, std::log2(40.0), 4.0},
                                           {"fc2", 4096, 8, 8, 3.0, 3.0},
                                           {"fc3", 512, 2, 1, 1.0, 0.0}};
  CHECK(reports::quant_report_csv(layers) == slurp(kGolden / "quant_report.csv"));

  pipeline::Summary s;
  s.h = 0.5;
  s.w = 0.25;
  s.seed = 42;
  s.acc_pretrained = 96.5;
  s.acc_finetuned = 96.25;
  s.acc_pre_refine = 96.0;
  s.acc_post_refine = 95.5;
  s.delta_pre_refine = 0.5;
  s.delta_post_refine = 1.0;
  s.b_bar_pre = 3.5;
  s.b_bar_post = 3.0;
  s.layers = {{"fc1", 100, 16, 8, 4.0, 3.0}};
  CHECK(reports::to_json(s).dump(2) + "\n" == slurp(kGolden / "report.json"));

  pipeline::SweepResult sw;
  sw.acc_pretrained = 96.5;
  sw.heq_delta = 0.75;
  sw.heq_bits = 4.0;
  pipeline::SweepCell cell;
  cell.h = 0.5;
  cell.w = 0.25;
  cell.runs.resize(2);
  cell.delta = pipeline::describe({0.5, 1.5});
  cell.bits = pipeline::describe({3.0, 3.0});
  cell.delta_pre = pipeline::describe({0.25, 0.25});
  cell.bits_pre = pipeline::describe({4.0, 4.5});
  pipeline::SweepCell zero;
  zero.h = 0.0;
  zero.w = 0.25;
  zero.runs.resize(2);
  zero.failures = 2;
  zero.delta = zero.bits = pipeline::describe({});
  zero.delta_pre = pipeline::describe({0.0, 0.0});
  zero.bits_pre = pipeline::describe({7.0, 7.0});
  sw.cells = {cell, zero};
  CHECK(reports::sweep_csv(sw) == slurp(kGolden / "sweep_grid.csv"));
}

TEST_CASE("empty sweep gives a header-only grid") {
  pipeline::SweepResult sw;
  const auto csv = reports::sweep_csv(sw);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1);
}

TEST_CASE("describe reports sample statistics and flags zero means") {
  const auto s = pipeline::describe({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
  CHECK(s.cv == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.5).epsilon(1e-15));
  CHECK(s.cv_defined);
  const auto z = pipeline::describe({-1.0, 1.0});
  CHECK_FALSE(z.cv_defined);
  CHECK(pipeline::describe({7.0}).std == 0.0);
}

TEST_CASE("sweep seeds, single-cell equivalence and null coupling") {
  CHECK(pipeline::run_seed(1, 0, 0, 0) != pipeline::run_seed(1, 0, 0, 1));
  CHECK(pipeline::run_seed(1, 0, 1, 0) != pipeline::run_seed(1, 1, 0, 0));
  CHECK(pipeline::run_seed(5, 2, 3, 4) == pipeline::run_seed(5, 2, 3, 4));

  const auto c = tiny_config();
  const auto splits = data::load_dataset(c.dataset);
  const auto pre = train::pretrain(c, splits);
  const auto heq = pipeline::heq_baseline(pre.model, splits, 2, pre.test_accuracy);
  CHECK(heq.report.b_bar <= 2.0);

  const auto one = pipeline::sweep({{c.h}, {c.w}, 1, 1}, c, splits, pre.model,
                                   pre.test_accuracy, heq);
  const auto direct = pipeline::run_pipeline(c, splits, pre.model, pre.test_accuracy);
  REQUIRE(one.cells.size() == 1);
  CHECK(one.cells[0].runs[0].summary == direct.summary);

  const auto grid = pipeline::sweep({{0.0, c.h}, {0.3, 0.6}, 2, 2}, c, splits, pre.model,
                                    pre.test_accuracy, heq);
  REQUIRE(grid.cells.size() == 4);
  CHECK(grid.cells[1].h == 0.0);
  CHECK(grid.cells[1].w == 0.6);
  CHECK(grid.cells[2].runs[1].summary.seed == pipeline::run_seed(c.seed, 1, 0, 1));
  CHECK_FALSE(grid.cells[0].dominates_heq);
  CHECK_FALSE(grid.cells[1].dominates_heq);
  const auto again = pipeline::sweep({{0.0, c.h}, {0.3, 0.6}, 2, 1}, c, splits, pre.model,
                                     pre.test_accuracy, heq);
  CHECK(reports::sweep_csv(again) == reports::sweep_csv(grid));
  CHECK_THROWS_AS(pipeline::sweep({{1.0}, {1.0}, 0, 1}, c, splits, pre.model, 90.0, heq),
                  ConfigError);
}

TEST_CASE("perturbation study on a fine-tuned model") {
  const auto c = tiny_config();
  const auto splits = data::load_dataset(c.dataset);
  const auto pre = train::pretrain(c, splits);
  const auto r = pipeline::run_pipeline(c, splits, pre.model, pre.test_accuracy);
  const auto rep = pipeline::perturbation(c, splits, pre.model, r.quantized_pre);
  CHECK(rep.random.size() == 10);
  CHECK(rep.percentile_rank >= 0.0);
  CHECK(rep.percentile_rank <= 100.0);
  const auto csv = reports::perturbation_csv(rep);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 12);
}
