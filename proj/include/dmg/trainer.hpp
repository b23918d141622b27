#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmg/data.hpp"
#include "dmg/evaluator.hpp"
#include "dmg/mask.hpp"
#include "dmg/network.hpp"
#include "dmg/ops.hpp"
#include "dmg/optim.hpp"
#include "dmg/rng.hpp"

namespace dmg {

enum class Method { dmg, aggregate, multiheaded };
enum class MaskInit { uniform, saturated_on };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::dmg: return "dmg";
    case Method::aggregate: return "aggregate";
    case Method::multiheaded: return "multiheaded";
  }
  throw std::logic_error("method_name: unknown method");
}

inline Method method_from_name(const std::string& s) {
  if (s == "dmg") return Method::dmg;
  if (s == "aggregate") return Method::aggregate;
  if (s == "multiheaded") return Method::multiheaded;
  throw std::invalid_argument("unknown method '" + s + "'");
}

struct TrainConfig {
  Method method = Method::dmg;
  double lambda_o = 0.1;  // sIoU overlap penalty coefficient
  double lambda_s = 0.0;  // L1 sparsity penalty coefficient
  int epochs = 50;
  int batch_size = 64;
  LrSchedule schedule{LrSchedule::Kind::inverse, 1e-4, 0.99, 1e-4, 0.75};
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
  MaskSampling sampling = MaskSampling::per_instance;
  MaskInit mask_init = MaskInit::uniform;
  double final_init_sigma = 0.001;
  bool balance_domains = false;
  std::vector<std::size_t> feature_widths{256};
  std::vector<std::size_t> task_widths{128, 64};
  AdamConfig adam;
};

inline void validate_config(const TrainConfig& cfg) {
  if (cfg.lambda_o < 0 || cfg.lambda_s < 0)
    throw std::invalid_argument("TrainConfig: penalty coefficients must be nonnegative");
  if (cfg.lambda_o > 0 && cfg.lambda_s > 0)
    throw std::invalid_argument(
        "TrainConfig: at most one of lambda_o / lambda_s may be nonzero");
  if (cfg.epochs < 1 || cfg.batch_size < 1)
    throw std::invalid_argument("TrainConfig: epochs and batch_size must be positive");
}

inline std::string schedule_name(LrSchedule::Kind k) {
  switch (k) {
    case LrSchedule::Kind::constant: return "constant";
    case LrSchedule::Kind::exponential: return "exponential";
    case LrSchedule::Kind::inverse: return "inverse";
  }
  throw std::logic_error("schedule_name: unknown kind");
}

inline LrSchedule::Kind schedule_from_name(const std::string& s) {
  if (s == "constant") return LrSchedule::Kind::constant;
  if (s == "exponential") return LrSchedule::Kind::exponential;
  if (s == "inverse") return LrSchedule::Kind::inverse;
  throw std::invalid_argument("unknown lr schedule '" + s + "'");
}

// Canonical one-line form; its hash pairs checkpoints with configs.
inline std::string canonical_config_string(const TrainConfig& c) {
  std::string s;
  s += "method=" + method_name(c.method);
  s += ";lambda_o=" + format_double(c.lambda_o);
  s += ";lambda_s=" + format_double(c.lambda_s);
  s += ";epochs=" + std::to_string(c.epochs);
  s += ";batch_size=" + std::to_string(c.batch_size);
  s += ";lr=" + schedule_name(c.schedule.kind) + ":" + format_double(c.schedule.lr0) + ":" +
       format_double(c.schedule.rate) + ":" + format_double(c.schedule.gamma) + ":" +
       format_double(c.schedule.p_sched);
  s += ";weight_decay=" + format_double(c.weight_decay);
  s += ";seed=" + std::to_string(c.seed);
  s += ";sampling=";
  s += c.sampling == MaskSampling::per_instance ? "per-instance" : "per-domain-batch";
  s += ";mask_init=";
  s += c.mask_init == MaskInit::uniform ? "uniform" : "saturated-on";
  s += ";final_init_sigma=" + format_double(c.final_init_sigma);
  s += ";balance_domains=" + std::to_string(c.balance_domains ? 1 : 0);
  s += ";feature=";
  for (std::size_t i = 0; i < c.feature_widths.size(); ++i)
    s += (i ? "," : "") + std::to_string(c.feature_widths[i]);
  s += ";task=";
  for (std::size_t i = 0; i < c.task_widths.size(); ++i)
    s += (i ? "," : "") + std::to_string(c.task_widths[i]);
  s += ";adam=" + format_double(c.adam.beta1) + "," + format_double(c.adam.beta2) + "," +
       format_double(c.adam.eps);
  return s;
}

inline std::uint64_t config_hash(const TrainConfig& c) {
  return fnv1a(canonical_config_string(c));
}

// ---------------------------------------------------------------------------
// Single-step loss with all gradients
// ---------------------------------------------------------------------------

enum class ForwardMode { sampled, soft };

struct LossParts {
  double classification = 0.0;
  double siou = 0.0;  // raw sIoU total (unweighted)
  double l1 = 0.0;    // raw L1 total (unweighted)

  double total(double lambda_o, double lambda_s) const {
    return classification + lambda_o * siou + lambda_s * l1;
  }
};

struct StepGrads {
  NetworkGrads net;
  std::vector<std::vector<Tensor>> bank;  // empty when the model has no masks
};

// Batch-mean cross entropy of the masked forward, plus the mask penalty added
// once per step. `sampled` draws hard per-instance masks with straight-through
// gradients; `soft` substitutes the probabilities (the relaxation used for
// gradient checking).
inline LossParts loss_total(const Network& net, const MaskBank* bank, const Tensor& x,
                            const std::vector<int>& labels, const std::vector<int>& row_domains,
                            double lambda_o, double lambda_s, ForwardMode mode,
                            MaskSampling sampling, Rng* rng, StepGrads* grads) {
  if (x.rows() == 0) throw std::invalid_argument("loss_total: empty batch");
  if (labels.size() != x.rows() || row_domains.size() != x.rows())
    throw std::invalid_argument("loss_total: batch annotation sizes differ");

  LossParts parts;
  ForwardCache cache;
  Tensor logits;
  if (bank && !bank->empty()) {
    for (int d : row_domains)
      if (d < 0 || static_cast<std::size_t>(d) >= bank->n_domains())
        throw std::invalid_argument("loss_total: instance tagged with unknown domain index " +
                                    std::to_string(d));
    LayerMasks masks;
    if (mode == ForwardMode::sampled) {
      if (!rng) throw std::invalid_argument("loss_total: sampled mode requires an rng");
      masks = sample_layer_masks(*bank, row_domains, *rng, sampling);
    } else {
      masks = soft_masks_rows(*bank, row_domains);
    }
    logits = forward_network(net, x, &masks, nullptr, &cache);
  } else if (net.multi_headed()) {
    for (int d : row_domains)
      if (d < 0 || static_cast<std::size_t>(d) >= net.classifiers.size())
        throw std::invalid_argument("loss_total: instance tagged with unknown domain index " +
                                    std::to_string(d));
    logits = forward_network(net, x, nullptr, &row_domains, &cache);
  } else {
    logits = forward_network(net, x, nullptr, nullptr, &cache);
  }

  XentResult xent = softmax_xent(logits, labels);
  parts.classification = xent.loss;

  if (grads) {
    grads->net = backward_network(net, cache, xent.grad_logits);
    if (bank && !bank->empty())
      grads->bank = accumulate_mask_grads(*bank, cache, grads->net, row_domains);
  }

  if (bank && !bank->empty()) {
    if (lambda_o > 0.0) {
      if (grads) {
        PenaltyResult pen = siou_total_grad(*bank);
        parts.siou = pen.value;
        for (std::size_t d = 0; d < grads->bank.size(); ++d)
          for (std::size_t l = 0; l < grads->bank[d].size(); ++l)
            for (std::size_t t = 0; t < grads->bank[d][l].size(); ++t)
              grads->bank[d][l][t] += lambda_o * pen.grad[d][l][t];
      } else {
        parts.siou = siou_total(*bank);
      }
    }
    if (lambda_s > 0.0) {
      if (grads) {
        PenaltyResult pen = l1_penalty_grad(*bank);
        parts.l1 = pen.value;
        for (std::size_t d = 0; d < grads->bank.size(); ++d)
          for (std::size_t l = 0; l < grads->bank[d].size(); ++l)
            for (std::size_t t = 0; t < grads->bank[d][l].size(); ++t)
              grads->bank[d][l][t] += lambda_s * pen.grad[d][l][t];
      } else {
        parts.l1 = l1_penalty(*bank);
      }
    }
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Checkpoints and reports
// ---------------------------------------------------------------------------

struct Checkpoint {
  Method method = Method::aggregate;
  Network net;
  MaskBank bank;  // empty for the baselines
  int epoch = 0;
  double val_acc = 0.0;
  std::uint64_t config_hash = 0;
  std::uint64_t data_fingerprint = 0;
  std::uint64_t seed = 0;
};

struct EpochStats {
  double loss_class = 0.0;
  double loss_siou = 0.0;
  double loss_l1 = 0.0;
  std::vector<double> val_acc;  // per source domain
  double mean_val_acc = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int selected_epoch = 0;
  double wall_time_s = 0.0;
};

// Best epoch by mean in-domain validation accuracy; ties go to the earliest.
inline int select_checkpoint(const std::vector<double>& mean_val_acc) {
  if (mean_val_acc.empty()) throw std::invalid_argument("select_checkpoint: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < mean_val_acc.size(); ++i)
    if (mean_val_acc[i] > mean_val_acc[best]) best = i;
  return static_cast<int>(best) + 1;  // epochs are 1-indexed
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace detail {

struct RowRef {
  std::size_t source;
  std::size_t row;
};

// Adam bookkeeping for one named tensor.
struct ParamSlot {
  std::string name;
  Tensor* value = nullptr;
  AdamState state;
  bool decay = false;  // weight matrices only

  ParamSlot(std::string n, Tensor* v, bool d)
      : name(std::move(n)), value(v), state(v->shape), decay(d) {}
};

inline std::vector<ParamSlot> collect_params(Network& net, MaskBank& bank) {
  std::vector<ParamSlot> slots;
  for (std::size_t i = 0; i < net.feature.size(); ++i) {
    slots.emplace_back("feature." + std::to_string(i) + ".w", &net.feature[i].w, true);
    slots.emplace_back("feature." + std::to_string(i) + ".b", &net.feature[i].b, false);
  }
  for (std::size_t i = 0; i < net.task_hidden.size(); ++i) {
    slots.emplace_back("task." + std::to_string(i) + ".w", &net.task_hidden[i].w, true);
    slots.emplace_back("task." + std::to_string(i) + ".b", &net.task_hidden[i].b, false);
  }
  for (std::size_t i = 0; i < net.classifiers.size(); ++i) {
    slots.emplace_back("classifier." + std::to_string(i) + ".w", &net.classifiers[i].w, true);
    slots.emplace_back("classifier." + std::to_string(i) + ".b", &net.classifiers[i].b, false);
  }
  for (std::size_t d = 0; d < bank.n_domains(); ++d)
    for (std::size_t l = 0; l < bank.n_layers(); ++l)
      slots.emplace_back("mask." + bank.domains[d] + "." + std::to_string(l),
                         &bank.params[d][l], false);
  return slots;
}

}  // namespace detail

// Trains on the pooled source training splits and returns the checkpoint of
// the best-validating epoch together with the per-epoch history.
inline std::pair<Checkpoint, TrainReport> train(const TrainConfig& cfg,
                                                const DomainSuite& suite) {
  validate_config(cfg);
  const std::size_t p = suite.n_sources();
  if (p == 0) throw std::invalid_argument("train: suite has no source domains");
  if (cfg.method != Method::aggregate && p < 2)
    throw std::invalid_argument("train: " + method_name(cfg.method) +
                                " needs at least two source domains");

  const auto t_start = std::chrono::steady_clock::now();

  NetSpec spec;
  spec.input_dim = suite.feature_dim;
  spec.feature_widths = cfg.feature_widths;
  spec.task_widths = cfg.task_widths;
  spec.n_classes = suite.n_classes;

  Rng init_rng(derive_seed(cfg.seed, "net_init"));
  Rng mask_rng(derive_seed(cfg.seed, "mask_init"));
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng sample_rng(derive_seed(cfg.seed, "mask_sample"));

  Network net = init_network(spec, cfg.method == Method::multiheaded ? p : 1,
                             cfg.final_init_sigma, init_rng);
  MaskBank bank;
  if (cfg.method == Method::dmg)
    bank = init_mask_bank(suite.source_ids(), net.mask_points(), mask_rng,
                          cfg.mask_init == MaskInit::saturated_on);

  std::vector<detail::ParamSlot> params = detail::collect_params(net, bank);

  // pooled source training rows with per-instance domain tags
  std::vector<detail::RowRef> pool;
  for (std::size_t s = 0; s < p; ++s)
    for (std::size_t r : suite.sources[s].rows_of(Split::train)) pool.push_back({s, r});
  if (pool.empty()) throw std::invalid_argument("train: empty training split");

  const std::size_t dim = suite.feature_dim;
  TrainReport report;
  Checkpoint best;
  best.method = cfg.method;
  best.config_hash = config_hash(cfg);
  best.data_fingerprint = suite_fingerprint(suite);
  best.seed = cfg.seed;
  double best_acc = -1.0;
  std::vector<double> val_history;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg.schedule, epoch);

    if (cfg.balance_domains) {
      // round-robin interleave of per-domain shuffles
      std::vector<std::vector<detail::RowRef>> by_domain(p);
      for (std::size_t s = 0; s < p; ++s)
        for (std::size_t r : suite.sources[s].rows_of(Split::train)) by_domain[s].push_back({s, r});
      for (auto& rows : by_domain) shuffle_rng.shuffle(rows);
      pool.clear();
      std::size_t longest = 0;
      for (const auto& rows : by_domain) longest = std::max(longest, rows.size());
      for (std::size_t i = 0; i < longest; ++i)
        for (std::size_t s = 0; s < p; ++s)
          if (i < by_domain[s].size()) pool.push_back(by_domain[s][i]);
    } else {
      shuffle_rng.shuffle(pool);
    }

    EpochStats stats;
    std::size_t n_steps = 0;
    for (std::size_t at = 0; at < pool.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t bsz =
          std::min(pool.size() - at, static_cast<std::size_t>(cfg.batch_size));
      Tensor x({bsz, dim});
      std::vector<int> labels(bsz);
      std::vector<int> domains(bsz);
      for (std::size_t i = 0; i < bsz; ++i) {
        const auto& ref = pool[at + i];
        const DomainDataset& ds = suite.sources[ref.source];
        for (std::size_t t = 0; t < dim; ++t) x(i, t) = ds.x(ref.row, t);
        labels[i] = ds.y[ref.row];
        domains[i] = static_cast<int>(ref.source);
      }

      StepGrads grads;
      LossParts parts = loss_total(net, bank.empty() ? nullptr : &bank, x, labels, domains,
                                   cfg.lambda_o, cfg.lambda_s, ForwardMode::sampled,
                                   cfg.sampling, &sample_rng, &grads);
      if (!std::isfinite(parts.classification))
        throw std::runtime_error("train: non-finite classification loss at epoch " +
                                 std::to_string(epoch));
      if (!std::isfinite(parts.siou))
        throw std::runtime_error("train: non-finite sIoU penalty at epoch " +
                                 std::to_string(epoch));
      if (!std::isfinite(parts.l1))
        throw std::runtime_error("train: non-finite L1 penalty at epoch " +
                                 std::to_string(epoch));

      // gather grads in the same order as the parameter slots
      std::vector<Tensor*> grad_of;
      for (auto& g : grads.net.feature) {
        grad_of.push_back(&g.w);
        grad_of.push_back(&g.b);
      }
      for (auto& g : grads.net.task_hidden) {
        grad_of.push_back(&g.w);
        grad_of.push_back(&g.b);
      }
      for (auto& g : grads.net.classifiers) {
        grad_of.push_back(&g.w);
        grad_of.push_back(&g.b);
      }
      for (auto& dgrads : grads.bank)
        for (auto& g : dgrads) grad_of.push_back(&g);

      for (std::size_t s = 0; s < params.size(); ++s) {
        if (cfg.weight_decay > 0.0 && params[s].decay) {
          Tensor& w = *params[s].value;
          Tensor& g = *grad_of[s];
          for (std::size_t t = 0; t < g.size(); ++t) g[t] += cfg.weight_decay * w[t];
        }
        adam_step(*params[s].value, *grad_of[s], params[s].state, lr, cfg.adam,
                  params[s].name);
      }

      stats.loss_class += parts.classification;
      stats.loss_siou += parts.siou;
      stats.loss_l1 += parts.l1;
      ++n_steps;
    }
    stats.loss_class /= static_cast<double>(n_steps);
    stats.loss_siou /= static_cast<double>(n_steps);
    stats.loss_l1 /= static_cast<double>(n_steps);
    // keep the penalty columns informative even when they carry no gradient
    if (cfg.method == Method::dmg && cfg.lambda_o == 0.0 && p >= 2)
      stats.loss_siou = siou_total(bank);
    if (cfg.method == Method::dmg && cfg.lambda_s == 0.0)
      stats.loss_l1 = l1_penalty(bank);

    double acc_sum = 0.0;
    for (const auto& ds : suite.sources) {
      double acc = accuracy_on_split(ds, Split::val, [&](const Tensor& xv) {
        return default_predict(net, bank, xv);
      });
      stats.val_acc.push_back(acc);
      acc_sum += acc;
    }
    stats.mean_val_acc = acc_sum / static_cast<double>(p);
    val_history.push_back(stats.mean_val_acc);
    report.epochs.push_back(stats);

    if (stats.mean_val_acc > best_acc) {
      best_acc = stats.mean_val_acc;
      best.net = net;
      best.bank = bank;
      best.epoch = epoch;
      best.val_acc = stats.mean_val_acc;
    }
  }

  report.selected_epoch = select_checkpoint(val_history);
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(best), std::move(report)};
}

}  // namespace dmg
