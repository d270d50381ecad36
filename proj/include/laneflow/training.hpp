#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "laneflow/checkpoint.hpp"
#include "laneflow/dataset.hpp"
#include "laneflow/temporal_model.hpp"

namespace laneflow::train {

using ad::AdamState;
using ad::BoundParams;
using ad::GradBuffer;
using ad::ParamStore;
using ad::Tape;
using ad::Value;
using data::Sample;
using model::ModelConfig;

struct TrainConfig {
  double huber_delta = 1.0;
  std::size_t batch_size = 4;  // simulations per optimizer step
  std::size_t max_epochs = 500;
  double anneal_factor = 0.1;
  std::size_t anneal_patience = 10;    // epochs without validation improvement
  std::size_t early_stop_patience = 20;
  double improvement_tolerance = 1e-6;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  unsigned jobs = 1;

  void validate() const {
    require(anneal_patience > 0 && early_stop_patience > 0, "train config: patiences must be > 0");
    require(anneal_factor > 0.0 && anneal_factor < 1.0,
            "train config: anneal factor must lie in (0,1)");
    require(batch_size >= 1 && max_epochs >= 1, "train config: batch/epochs must be >= 1");
  }
};

struct EpochRecord {
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  ParamStore best_params;
  std::size_t best_epoch = 0;
  double best_validation = std::numeric_limits<double>::infinity();
  std::vector<EpochRecord> history;
};

namespace detail {

inline std::pair<Tensor, Tensor> flat_targets(const Sample& sample) {
  std::size_t n = sample.y.dim(0), T = sample.y.dim(1), k = sample.y.dim(2);
  Tensor target({n * T, k}, sample.y.values());
  Tensor mask({n * T, k}, sample.mask.values());
  return {std::move(target), std::move(mask)};
}

struct SampleLoss {
  double sum = 0.0;    // loss mean * unmasked count
  double count = 0.0;  // unmasked elements
};

/// Forward + backward for one sample; per-parameter gradients scaled by the
/// sample's unmasked count are accumulated by the caller.
inline SampleLoss sample_gradient(const Sample& sample, const gnn::EncoderInputs& inputs,
                                  const ParamStore& params, const ModelConfig& config,
                                  double delta, GradBuffer& grads) {
  Tape tape;
  BoundParams bound(tape, params);
  auto out = model::model_forward(tape, sample.x, inputs, bound, config);
  auto [target, mask] = flat_targets(sample);
  Value loss = tape.huber(out.flat, std::make_shared<Tensor>(std::move(target)),
                          std::make_shared<Tensor>(std::move(mask)), delta);
  SampleLoss r;
  r.count = tape.huber_count(loss);
  r.sum = tape.value(loss)[0] * r.count;
  if (r.count > 0.0) {
    tape.backward(loss);
    grads.accumulate(tape, bound.all(), r.count);
  }
  return r;
}

inline SampleLoss sample_loss(const Sample& sample, const gnn::EncoderInputs& inputs,
                              const ParamStore& params, const ModelConfig& config, double delta) {
  Tape tape;
  BoundParams bound(tape, params);
  auto out = model::model_forward(tape, sample.x, inputs, bound, config);
  auto [target, mask] = flat_targets(sample);
  Value loss = tape.huber(out.flat, std::make_shared<Tensor>(std::move(target)),
                          std::make_shared<Tensor>(std::move(mask)), delta);
  SampleLoss r;
  r.count = tape.huber_count(loss);
  r.sum = tape.value(loss)[0] * r.count;
  return r;
}

}  // namespace detail

/// Pooled masked Huber loss over a set of samples.
inline double dataset_loss(const std::vector<Sample>& samples,
                           const std::vector<std::size_t>& indices,
                           const gnn::EncoderInputs& inputs, const ParamStore& params,
                           const ModelConfig& config, double delta, unsigned jobs = 1) {
  std::vector<detail::SampleLoss> losses(indices.size());
  parallel_for(indices.size(), jobs, [&](std::size_t k) {
    losses[k] = detail::sample_loss(samples[indices[k]], inputs, params, config, delta);
  });
  double sum = 0.0, count = 0.0;
  for (const auto& l : losses) {
    sum += l.sum;
    count += l.count;
  }
  return count > 0.0 ? sum / count : 0.0;
}

/// Adam training with plateau annealing and early stopping. Deterministic for
/// a fixed seed regardless of the parallelism degree: batch gradients are
/// reduced in sample order.
inline TrainResult train(const std::vector<Sample>& samples, const data::DatasetSplit& split,
                         const gnn::EncoderInputs& inputs, const ModelConfig& config,
                         const TrainConfig& tcfg) {
  tcfg.validate();
  config.validate();
  require(!split.train.empty() && !split.validation.empty(),
          "train: empty train or validation split");

  ParamStore params = model::build_model_params(config, tcfg.seed);
  AdamState adam(params, tcfg.learning_rate);
  Rng shuffle_rng(tcfg.seed ^ 0xd1f4c5a390e7b2ULL);

  TrainResult result;
  result.best_params = params;
  std::size_t stale_anneal = 0, stale_stop = 0;

  for (std::size_t epoch = 0; epoch < tcfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order = split.train;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

    double epoch_sum = 0.0, epoch_count = 0.0;
    for (std::size_t b = 0; b < order.size(); b += tcfg.batch_size) {
      std::size_t batch_end = std::min(order.size(), b + tcfg.batch_size);
      std::size_t batch_n = batch_end - b;
      std::vector<std::unique_ptr<GradBuffer>> grads(batch_n);
      std::vector<detail::SampleLoss> losses(batch_n);
      parallel_for(batch_n, tcfg.jobs, [&](std::size_t k) {
        grads[k] = std::make_unique<GradBuffer>(params);
        losses[k] = detail::sample_gradient(samples[order[b + k]], inputs, params, config,
                                            tcfg.huber_delta, *grads[k]);
      });
      double batch_count = 0.0, batch_sum = 0.0;
      for (std::size_t k = 0; k < batch_n; ++k) {
        batch_count += losses[k].count;
        batch_sum += losses[k].sum;
      }
      if (!std::isfinite(batch_sum))
        fail("train: non-finite loss in epoch ", epoch, ", batch ", b / tcfg.batch_size,
             " (first sample ", samples[order[b]].sim_id, ")");
      if (batch_count <= 0.0) continue;
      // pooled-mean gradient: per-sample grads carry weight count_s, so the
      // batch gradient is their ordered sum divided by the pooled count
      GradBuffer total(params);
      for (std::size_t k = 0; k < batch_n; ++k)
        for (std::size_t p = 0; p < total.size(); ++p) {
          Tensor& dst = total.tensor(p);
          const Tensor& src = grads[k]->tensor(p);
          for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
        }
      for (std::size_t p = 0; p < total.size(); ++p)
        for (double& v : total.tensor(p).values()) v /= batch_count;
      ad::adam_step(params, total, adam);
      epoch_sum += batch_sum;
      epoch_count += batch_count;
    }

    double val = dataset_loss(samples, split.validation, inputs, params, config,
                              tcfg.huber_delta, tcfg.jobs);
    EpochRecord rec;
    rec.train_loss = epoch_count > 0.0 ? epoch_sum / epoch_count : 0.0;
    rec.validation_loss = val;
    rec.learning_rate = adam.learning_rate;
    result.history.push_back(rec);

    if (val < result.best_validation - tcfg.improvement_tolerance) {
      result.best_validation = val;
      result.best_epoch = epoch;
      result.best_params = params;
      stale_anneal = 0;
      stale_stop = 0;
    } else {
      stale_anneal += 1;
      stale_stop += 1;
      if (stale_anneal >= tcfg.anneal_patience) {
        adam.learning_rate *= tcfg.anneal_factor;
        stale_anneal = 0;
      }
      if (stale_stop >= tcfg.early_stop_patience) break;
    }
  }
  return result;
}

// ---- evaluation -----------------------------------------------------------

struct EvalRow {
  double queue_mae = 0.0;      // vehicles, over unmasked queue targets
  double occupancy_mae = 0.0;  // vehicles, over vehicle-count targets
};

/// Mean absolute error per target channel over unmasked entries, pooled over
/// lanes, bins, and simulations.
inline EvalRow evaluate(const ParamStore& params, const ModelConfig& config,
                        const gnn::EncoderInputs& inputs, const std::vector<Sample>& samples,
                        const std::vector<std::size_t>& indices, unsigned jobs = 1) {
  require(!indices.empty(), "evaluate: empty test set");
  std::vector<std::array<double, 4>> partial(indices.size());  // sum_q, n_q, sum_o, n_o
  parallel_for(indices.size(), jobs, [&](std::size_t k) {
    const Sample& sample = samples[indices[k]];
    Tensor pred = model::model_predict(params, config, inputs, sample.x);
    double sq = 0, nq = 0, so = 0, no = 0;
    std::size_t cells = sample.y.dim(0) * sample.y.dim(1);
    for (std::size_t i = 0; i < cells; ++i) {
      if (sample.mask[i * 2] != 0.0) {
        sq += std::abs(pred[i * 2] - sample.y[i * 2]);
        nq += 1;
      }
      if (sample.mask[i * 2 + 1] != 0.0) {
        so += std::abs(pred[i * 2 + 1] - sample.y[i * 2 + 1]);
        no += 1;
      }
    }
    partial[k] = {sq, nq, so, no};
  });
  double sq = 0, nq = 0, so = 0, no = 0;
  for (const auto& p : partial) {
    sq += p[0];
    nq += p[1];
    so += p[2];
    no += p[3];
  }
  EvalRow row;
  row.queue_mae = nq > 0 ? sq / nq : 0.0;
  row.occupancy_mae = no > 0 ? so / no : 0.0;
  return row;
}

/// Queue MAE of the model-based estimator, aligned per cycle to the binned
/// queue targets. Needs no trained parameters.
inline double liu_baseline_queue_mae(const std::vector<Sample>& samples,
                                     const std::vector<std::size_t>& indices) {
  double sum = 0.0, count = 0.0;
  for (std::size_t idx : indices) {
    const Sample& sample = samples[idx];
    std::size_t n = sample.y.dim(0), T = sample.y.dim(1);
    for (std::size_t i = 0; i < n * T; ++i) {
      if (sample.mask[i * 2] == 0.0) continue;
      double est = sample.liu_eval[i];
      if (est < 0.0) continue;  // no estimate aligned to this target
      sum += std::abs(est - sample.y[i * 2]);
      count += 1;
    }
  }
  require(count > 0, "liu baseline: no aligned estimates in the test set");
  return sum / count;
}

}  // namespace laneflow::train
