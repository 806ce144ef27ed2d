#include "softquant/train.hpp"

#include <cmath>
#include <numeric>

#include "softquant/errors.hpp"
#include "softquant/quantizer.hpp"

namespace softquant::train {

namespace {

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
}

// Calls fn(batch_indices) for consecutive minibatches of a shuffled order.
template <typename Fn>
void for_each_batch(const std::vector<std::size_t>& order, std::size_t batch_size, Fn&& fn) {
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    fn(std::span<const std::size_t>(order.data() + start, len));
  }
}

}  // namespace

PretrainResult pretrain(const RunConfig& config, const data::Splits& splits) {
  config.validate();
  PretrainResult res;
  res.model = nn::make_model(config.layer_specs(splits.train.dims(), splits.train.num_classes),
                             config.seed);
  std::vector<std::size_t> order(splits.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
    Rng rng(Rng::derive(config.seed, {0x9e7, static_cast<std::uint64_t>(epoch)}));
    shuffle(order, rng);
    for_each_batch(order, config.batch_size, [&](std::span<const std::size_t> idx) {
      double loss = 0.0;
      const auto grads = nn::task_gradient(res.model, splits.train.rows(idx),
                                           splits.train.labels_of(idx), &loss);
      if (!std::isfinite(loss))
        throw NumericError("pretraining diverged in epoch " + std::to_string(epoch + 1));
      nn::sgd_nesterov_step(res.model, grads, config.pretrain_lr, config.pretrain_momentum);
    });
    const auto tr = data::evaluate(res.model, splits.train);
    if (!std::isfinite(tr.loss))
      throw NumericError("pretraining diverged in epoch " + std::to_string(epoch + 1));
    res.log.push_back({epoch + 1, tr.loss, tr.accuracy, data::evaluate(res.model, splits.test).accuracy});
  }
  // The fine-tuning phase starts from rest.
  for (auto& l : res.model.layers) {
    l.velocity.fill(0.0);
    l.bias_velocity.fill(0.0);
  }
  res.test_accuracy = data::evaluate(res.model, splits.test).accuracy;
  return res;
}

scaling::CouplingParams coupling_params(const nn::ModelState& pretrained, const RunConfig& config) {
  return scaling::derive_params(scaling::model_stats(pretrained), config.h, config.w, config.alpha);
}

double coupling_value(const nn::ModelState& model, const scaling::CouplingParams& params,
                      std::size_t n_bins) {
  double total = 0.0;
  Rng unused(0);
  for (const auto& l : model.layers) {
    const auto* lp = params.find(l.spec.name);
    if (!l.spec.couple || !lp || !lp->coupled || lp->h == 0.0) continue;
    const coupling::TriangularWell well(lp->w);
    const auto hist = coupling::build_histogram(l.weights.values(), n_bins, 1.0, unused);
    const auto pot = coupling::effective_potential(hist, well);
    total += coupling::coupling_loss_estimate(pot, hist, lp->h) -
             lp->h * coupling::self_interaction(pot);
  }
  return total;
}

namespace {

EpochRecord snapshot(const nn::ModelState& model, const data::Splits& splits,
                     const scaling::CouplingParams& params, const RunConfig& config, int epoch) {
  EpochRecord rec;
  rec.epoch = epoch;
  rec.train_task_loss = data::evaluate(model, splits.train).loss;
  rec.test_accuracy = data::evaluate(model, splits.test).accuracy;
  rec.coupling = coupling_value(model, params, config.n_bins);
  for (const auto& l : model.layers)
    if (l.spec.couple)
      rec.clusters.push_back(
          quant::identify_clusters(l.weights.values(), config.precision_bits).num_clusters());
  return rec;
}

}  // namespace

SoftQuantResult soft_quantize(const nn::ModelState& pretrained, const data::Splits& splits,
                              const RunConfig& config, std::uint64_t seed) {
  config.validate();
  SoftQuantResult res;
  res.model = pretrained;
  res.params = coupling_params(pretrained, config);
  res.warnings = res.params.warnings;
  const auto schedule = config.schedule();

  struct Cache {
    std::size_t layer = 0;
    double h = 0.0;
    coupling::TriangularWell well{1.0};
    coupling::WeightHistogram hist;
    coupling::EffectivePotential pot;
  };
  std::vector<Cache> coupled;
  for (std::size_t i = 0; i < res.model.layers.size(); ++i) {
    const auto& l = res.model.layers[i];
    const auto* lp = res.params.find(l.spec.name);
    if (!l.spec.couple || !lp || !lp->coupled || lp->h == 0.0) continue;
    Cache c{i, lp->h, coupling::TriangularWell(lp->w), {}, {}};
    coupled.push_back(std::move(c));
  }
  bool warned = false;

  res.epochs.push_back(snapshot(res.model, splits, res.params, config, 0));
  std::vector<std::size_t> order(splits.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.sq_epochs; ++epoch) {
    const double fraction = coupling::sample_fraction_at(schedule, epoch);
    Rng shuffle_rng(Rng::derive(seed, {0x5a, static_cast<std::uint64_t>(epoch)}));
    shuffle(order, shuffle_rng);
    for_each_batch(order, config.batch_size, [&](std::span<const std::size_t> idx) {
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.sample_fraction = fraction;
      double task = 0.0;
      auto grads = nn::task_gradient(res.model, splits.train.rows(idx),
                                     splits.train.labels_of(idx), &task);
      double coupling_est = 0.0;
      for (auto& c : coupled) {
        const auto weights = res.model.layers[c.layer].weights.values();
        if (step % config.histogram_stride == 0) {
          Rng rng(Rng::derive(seed, {0xc0, step, c.layer}));
          c.hist = coupling::build_histogram(weights, config.n_bins, fraction, rng);
          c.pot = coupling::effective_potential(c.hist, c.well);
          if (!c.pot.resolvable && !warned) {
            res.warnings.push_back("layer '" + res.model.layers[c.layer].spec.name +
                                   "': well range below histogram resolution");
            warned = true;
          }
        }
        coupling_est += coupling::coupling_loss_estimate(c.pot, c.hist, c.h);
        try {
          coupling::accumulate_compression_force(c.pot, c.hist, weights, c.h,
                                                 grads[c.layer].weights.values());
        } catch (const NumericError& e) {
          throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
        }
      }
      rec.loss = nn::LossBreakdown::of(task, coupling_est);
      if (!std::isfinite(task)) throw NumericError("non-finite task loss at step " + std::to_string(step));
      try {
        nn::sgd_nesterov_step(res.model, grads, config.sq_lr, config.sq_momentum);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
      }
      res.steps.push_back(rec);
      ++step;
    });
    res.epochs.push_back(snapshot(res.model, splits, res.params, config, epoch + 1));
  }
  return res;
}

}  // namespace softquant::train
