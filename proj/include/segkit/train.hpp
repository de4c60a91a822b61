#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "segkit/adam.hpp"
#include "segkit/autodiff.hpp"
#include "segkit/errors.hpp"
#include "segkit/metrics.hpp"
#include "segkit/model.hpp"
#include "segkit/volume.hpp"

namespace segkit {

struct TrainRound {
  int epochs = 50;
  int batch_size = 2;
};

struct TrainPlan {
  std::vector<TrainRound> rounds{{50, 2}, {50, 1}};
  float lr = 1e-4f;
  std::uint64_t seed = 0;

  int total_epochs() const {
    int n = 0;
    for (const auto& r : rounds) n += r.epochs;
    return n;
  }
};

struct TrainSample {
  ChannelStack input;    // (in_channels, D, H, W)
  LabelVolume target;
};

namespace detail {

inline ad::Tensor<float> stack_batch(const std::vector<const ChannelStack*>& items) {
  const auto& first = *items[0];
  ad::Tensor<float> out({static_cast<int>(items.size()), first.channels, first.dims.z,
                         first.dims.y, first.dims.x});
  std::size_t off = 0;
  for (const auto* s : items) {
    if (s->channels != first.channels || !(s->dims == first.dims)) {
      throw shape_error("batch items have inconsistent shapes");
    }
    std::copy(s->data.begin(), s->data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += s->data.size();
  }
  return out;
}

// foreground-vs-background confusion of argmax predictions, pooled
inline void accumulate_confusion(const ad::Tensor<float>& probs,
                                 const ad::Tensor<float>& target_onehot, ConfusionCounts& c) {
  const int N = probs.shape[0], C = probs.shape[1];
  const std::int64_t sp = static_cast<std::int64_t>(probs.shape[2]) * probs.shape[3] * probs.shape[4];
  for (int n = 0; n < N; ++n) {
    for (std::int64_t v = 0; v < sp; ++v) {
      int pred = 0, truth = 0;
      float best = -1.0f;
      for (int ch = 0; ch < C; ++ch) {
        const std::size_t i = static_cast<std::size_t>((static_cast<std::int64_t>(n) * C + ch) * sp + v);
        if (probs.data[i] > best) {
          best = probs.data[i];
          pred = ch;
        }
        if (target_onehot.data[i] > 0.5f) truth = ch;
      }
      const bool p = pred > 0, t = truth > 0;
      if (p && t) ++c.tp;
      else if (p) ++c.fp;
      else if (t) ++c.fn;
      else ++c.tn;
    }
  }
}

}  // namespace detail

// One optimizer step on a stacked batch; returns the loss. Grads are
// computed on a fresh tape and copied back into the checkpoint parameters.
inline double train_step(Checkpoint& ckpt, const ad::Tensor<float>& batch,
                         const ad::Tensor<float>& target, float lr,
                         ad::Tensor<float>* probs_out = nullptr) {
  ad::Graph<float> g;
  const ad::NodeId in = g.input(batch);
  const ad::NodeId tgt = g.input(target);
  const auto pids = add_params_to_graph(ckpt, g);
  const ad::NodeId probs = forward_graph(ckpt, g, in, pids);
  const ad::NodeId loss = ad::dice_loss(g, probs, tgt, /*foreground_only=*/true);
  g.backward(loss);
  std::vector<std::vector<float>*> param_ptrs;
  std::vector<const std::vector<float>*> grad_ptrs;
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    ckpt.params[i].grad = g.grad(pids[i]);
    param_ptrs.push_back(&ckpt.params[i].data);
    grad_ptrs.push_back(&ckpt.params[i].grad);
  }
  adam_step(param_ptrs, grad_ptrs, ckpt.opt, lr);
  if (probs_out) *probs_out = g.value(probs);
  return static_cast<double>(g.value(loss).data[0]);
}

// Two-round training procedure: per epoch, seeded shuffle into mini-batches
// (last remainder batch kept), forward -> dice loss -> backward -> Adam.
// History records loss plus the dice/IoU/accuracy/sensitivity/specificity
// metric set per epoch.
inline void train(Checkpoint& ckpt, const std::vector<TrainSample>& samples,
                  const TrainPlan& plan,
                  const std::function<void(const Checkpoint&, std::size_t)>& on_round_end = {}) {
  if (samples.empty()) throw config_error("empty training set");
  std::vector<ChannelStack> onehots;
  onehots.reserve(samples.size());
  for (const auto& s : samples) {
    onehots.push_back(one_hot(s.target, ckpt.config.num_classes));
  }

  int planned = 0;
  for (const auto& round : plan.rounds) {
    if (round.epochs < 1 || round.batch_size < 1) throw config_error("bad train round");
    for (int e = 0; e < round.epochs; ++e) {
      // epochs already recorded in the checkpoint are skipped, so a run
      // resumed from a round checkpoint replays the same plan tail
      if (planned++ < ckpt.epoch) continue;
      const int epoch = ckpt.epoch;
      // per-epoch order derived from (run seed, epoch)
      std::vector<std::size_t> order(samples.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::mt19937_64 rng(plan.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch) + 1);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

      double loss_sum = 0.0;
      std::int64_t seen = 0;
      ConfusionCounts conf;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(round.batch_size)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(round.batch_size));
        std::vector<const ChannelStack*> batch_in, batch_tgt;
        for (std::size_t i = start; i < stop; ++i) {
          batch_in.push_back(&samples[order[i]].input);
          batch_tgt.push_back(&onehots[order[i]]);
        }
        const auto bin = detail::stack_batch(batch_in);
        const auto btgt = detail::stack_batch(batch_tgt);
        ad::Tensor<float> probs;
        const double loss = train_step(ckpt, bin, btgt, plan.lr, &probs);
        loss_sum += loss * static_cast<double>(stop - start);
        seen += static_cast<std::int64_t>(stop - start);
        detail::accumulate_confusion(probs, btgt, conf);
      }
      EpochStats stats;
      stats.epoch = epoch;
      stats.loss = loss_sum / static_cast<double>(seen);
      stats.dice = 1.0 - stats.loss;
      stats.iou = iou(conf).value;
      stats.accuracy = accuracy(conf).value;
      stats.sensitivity = sensitivity(conf).value;
      stats.specificity = specificity(conf).value;
      ckpt.history.push_back(stats);
      ++ckpt.epoch;
    }
    if (on_round_end) on_round_end(ckpt, static_cast<std::size_t>(&round - plan.rounds.data()));
  }
}

inline std::string history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,loss,dice,iou,accuracy,sensitivity,specificity\n";
  char line[256];
  for (const auto& h : history) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", h.epoch, h.loss,
                  h.dice, h.iou, h.accuracy, h.sensitivity, h.specificity);
    out += line;
  }
  return out;
}

}  // namespace segkit
