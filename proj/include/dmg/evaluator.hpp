#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmg/data.hpp"
#include "dmg/mask.hpp"
#include "dmg/network.hpp"
#include "dmg/ops.hpp"

namespace dmg {

// ---------------------------------------------------------------------------
// Inference modes
// ---------------------------------------------------------------------------

// Forward once per source domain under its soft mask and average the
// predictions. Probability averaging is the default; logit averaging is kept
// behind a flag for comparison.
inline Tensor predict_pred_ens(const Network& net, const MaskBank& bank, const Tensor& x,
                               bool logit_averaging = false) {
  if (bank.empty()) throw std::invalid_argument("predict_pred_ens: empty mask bank");
  Tensor acc({x.rows(), net.spec.n_classes});
  for (std::size_t d = 0; d < bank.n_domains(); ++d) {
    Tensor logits = forward_soft(net, bank, d, x);
    Tensor term = logit_averaging ? logits : softmax_rows(logits);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += term[i];
  }
  for (auto& v : acc.data) v /= static_cast<double>(bank.n_domains());
  return logit_averaging ? softmax_rows(acc) : acc;
}

// Average the soft masks, then make a single prediction.
inline Tensor predict_mask_ens(const Network& net, const MaskBank& bank, const Tensor& x) {
  if (bank.empty()) throw std::invalid_argument("predict_mask_ens: empty mask bank");
  LayerMasks mean = mean_soft_masks(bank);
  return softmax_rows(forward_network(net, x, &mean, nullptr, nullptr));
}

// Known-domain prediction: only the matching domain's soft mask.
inline Tensor predict_kd(const Network& net, const MaskBank& bank, const Tensor& x,
                         const std::string& domain) {
  return softmax_rows(forward_soft(net, bank, bank.domain_index(domain), x));
}

inline Tensor predict_plain(const Network& net, const Tensor& x) {
  return softmax_rows(forward_unmasked(net, x));
}

// Multi-headed baseline: average softmax predictions from every head.
inline Tensor predict_head_avg(const Network& net, const Tensor& x) {
  Tensor acc({x.rows(), net.spec.n_classes});
  for (std::size_t h = 0; h < net.classifiers.size(); ++h) {
    Tensor probs = softmax_rows(forward_one_head(net, h, x));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += probs[i];
  }
  for (auto& v : acc.data) v /= static_cast<double>(net.classifiers.size());
  return acc;
}

// The deployment-time prediction rule implied by the model kind.
inline Tensor default_predict(const Network& net, const MaskBank& bank, const Tensor& x,
                              bool logit_averaging = false) {
  if (!bank.empty()) return predict_pred_ens(net, bank, x, logit_averaging);
  if (net.multi_headed()) return predict_head_avg(net, x);
  return predict_plain(net, x);
}

// ---------------------------------------------------------------------------
// Accuracy
// ---------------------------------------------------------------------------

inline double accuracy_probs(const Tensor& probs, const std::vector<int>& labels) {
  const std::size_t n = probs.rows(), c = probs.cols();
  if (labels.size() != n) throw std::invalid_argument("accuracy_probs: label count mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (probs(i, j) > probs(i, best)) best = j;
    correct += static_cast<int>(best) == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  Tensor out({rows.size(), x.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(rows[i], j);
  return out;
}

inline std::vector<int> gather_labels(const std::vector<int>& y,
                                      const std::vector<std::size_t>& rows) {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = y[rows[i]];
  return out;
}

template <typename Predict>
inline double accuracy_on_split(const DomainDataset& ds, Split split, Predict&& predict) {
  std::vector<std::size_t> rows = ds.rows_of(split);
  if (rows.empty())
    throw std::invalid_argument("accuracy_on_split: domain '" + ds.domain_id +
                                "' has no rows in requested split");
  Tensor x = gather_rows(ds.x, rows);
  std::vector<int> y = gather_labels(ds.y, rows);
  return accuracy_probs(predict(x), y);
}

// ---------------------------------------------------------------------------
// Mask-overlap analysis
// ---------------------------------------------------------------------------

struct IouReport {
  std::vector<Tensor> per_layer;              // p x p Jaccard matrices
  std::vector<double> per_layer_mean;         // mean over unordered pairs
  double overall_mean = 0.0;                  // mean over layers and pairs
  std::vector<double> on_fraction;            // per domain, pooled over layers
  std::vector<NeuronCategories> categories;   // per layer
};

// Discretize every soft mask at tau, then report pairwise Jaccard matrices,
// neuron categories and on-fractions.
inline IouReport iou_report(const MaskBank& bank, double tau) {
  if (bank.empty()) throw std::invalid_argument("iou_report: empty mask bank");
  const std::size_t p = bank.n_domains();
  IouReport rep;
  rep.on_fraction.assign(p, 0.0);
  std::size_t total_width = 0;
  double pair_sum = 0.0;
  std::size_t pair_count = 0;
  for (std::size_t l = 0; l < bank.n_layers(); ++l) {
    std::vector<Tensor> discrete(p);
    for (std::size_t d = 0; d < p; ++d)
      discrete[d] = discretize(mask_probs(bank.params[d][l]), tau);
    const std::size_t k = bank.layers[l].width;
    total_width += k;
    for (std::size_t d = 0; d < p; ++d)
      for (std::size_t t = 0; t < k; ++t) rep.on_fraction[d] += discrete[d][t];
    Tensor matrix({p, p});
    double layer_sum = 0.0;
    std::size_t layer_pairs = 0;
    for (std::size_t i = 0; i < p; ++i) {
      matrix(i, i) = 1.0;
      for (std::size_t j = i + 1; j < p; ++j) {
        double v = jaccard(discrete[i], discrete[j]);
        matrix(i, j) = v;
        matrix(j, i) = v;
        layer_sum += v;
        ++layer_pairs;
      }
    }
    rep.per_layer.push_back(std::move(matrix));
    rep.per_layer_mean.push_back(layer_pairs ? layer_sum / layer_pairs : 0.0);
    pair_sum += layer_sum;
    pair_count += layer_pairs;
    rep.categories.push_back(neuron_categories(discrete));
  }
  rep.overall_mean = pair_count ? pair_sum / static_cast<double>(pair_count) : 0.0;
  for (std::size_t d = 0; d < p; ++d)
    rep.on_fraction[d] /= static_cast<double>(total_width);
  return rep;
}

// ---------------------------------------------------------------------------
// Specialization table (mask x domain accuracy matrix)
// ---------------------------------------------------------------------------

struct SpecializationTable {
  std::vector<std::string> mask_ids;    // p masks, then "combined"
  std::vector<std::string> domain_ids;  // p sources then q targets
  Tensor acc;                           // (p+1) x (p+q), test-split accuracies
};

inline SpecializationTable specialization_table(const Network& net, const MaskBank& bank,
                                                const DomainSuite& suite) {
  if (bank.empty()) throw std::invalid_argument("specialization_table: empty mask bank");
  const std::size_t p = bank.n_domains();
  const std::size_t cols = suite.sources.size() + suite.targets.size();
  SpecializationTable table;
  table.acc = Tensor({p + 1, cols});
  for (std::size_t d = 0; d < p; ++d) table.mask_ids.push_back(bank.domains[d]);
  table.mask_ids.push_back("combined");
  std::vector<const DomainDataset*> all;
  for (const auto& ds : suite.sources) {
    table.domain_ids.push_back(ds.domain_id);
    all.push_back(&ds);
  }
  for (const auto& ds : suite.targets) {
    table.domain_ids.push_back(ds.domain_id);
    all.push_back(&ds);
  }
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t i = 0; i < p; ++i) {
      table.acc(i, j) = accuracy_on_split(*all[j], Split::test, [&](const Tensor& x) {
        return softmax_rows(forward_soft(net, bank, i, x));
      });
    }
    table.acc(p, j) = accuracy_on_split(*all[j], Split::test, [&](const Tensor& x) {
      return predict_pred_ens(net, bank, x);
    });
  }
  return table;
}

// ---------------------------------------------------------------------------
// Full evaluation over a suite
// ---------------------------------------------------------------------------

enum class InferMode { pred_ens, mask_ens, kd, single_mask };

inline std::string infer_mode_name(InferMode m) {
  switch (m) {
    case InferMode::pred_ens: return "pred-ens";
    case InferMode::mask_ens: return "mask-ens";
    case InferMode::kd: return "kd";
    case InferMode::single_mask: return "single-mask";
  }
  throw std::logic_error("infer_mode_name: unknown mode");
}

inline InferMode infer_mode_from_name(const std::string& s) {
  if (s == "pred-ens") return InferMode::pred_ens;
  if (s == "mask-ens") return InferMode::mask_ens;
  if (s == "kd") return InferMode::kd;
  if (s == "single-mask") return InferMode::single_mask;
  throw std::invalid_argument("unknown inference mode '" + s + "'");
}

struct EvalConfig {
  std::vector<InferMode> modes{InferMode::pred_ens};
  double tau = 0.5;
  bool logit_averaging = false;
  bool specialization = false;
  std::string single_mask_domain;  // required for single_mask
};

struct EvalReport {
  // per domain id -> per mode name -> test accuracy
  std::map<std::string, std::map<std::string, double>> per_domain;
  double mean_in_domain = 0.0;                 // default rule over source test splits
  std::map<std::string, double> out_domain;    // default rule per target test split
  std::optional<IouReport> iou;
  std::optional<SpecializationTable> spec_table;
};

inline EvalReport evaluate(const Network& net, const MaskBank& bank, const DomainSuite& suite,
                           const EvalConfig& cfg) {
  EvalReport rep;
  const bool has_masks = !bank.empty();

  auto mode_predict = [&](InferMode mode, const Tensor& x) -> Tensor {
    switch (mode) {
      case InferMode::pred_ens: return predict_pred_ens(net, bank, x, cfg.logit_averaging);
      case InferMode::mask_ens: return predict_mask_ens(net, bank, x);
      case InferMode::single_mask:
        return softmax_rows(forward_soft(net, bank, bank.domain_index(cfg.single_mask_domain), x));
      case InferMode::kd: throw std::logic_error("kd handled per-domain");
    }
    throw std::logic_error("unknown mode");
  };

  if (has_masks) {
    for (InferMode mode : cfg.modes) {
      if (mode == InferMode::kd) {
        // defined only where the domain label exists: the source domains
        for (const auto& ds : suite.sources)
          rep.per_domain[ds.domain_id]["kd"] =
              accuracy_on_split(ds, Split::test, [&](const Tensor& x) {
                return predict_kd(net, bank, x, ds.domain_id);
              });
        continue;
      }
      if (mode == InferMode::single_mask && cfg.single_mask_domain.empty())
        throw std::invalid_argument("evaluate: single-mask mode requires a domain id");
      const std::string name = infer_mode_name(mode);
      for (const auto& ds : suite.sources)
        rep.per_domain[ds.domain_id][name] = accuracy_on_split(
            ds, Split::test, [&](const Tensor& x) { return mode_predict(mode, x); });
      for (const auto& ds : suite.targets)
        rep.per_domain[ds.domain_id][name] = accuracy_on_split(
            ds, Split::test, [&](const Tensor& x) { return mode_predict(mode, x); });
    }
  }

  // default-rule accuracies: in-domain mean over sources, per-target out-of-domain
  const std::string default_name =
      has_masks ? "pred-ens" : (net.multi_headed() ? "head-avg" : "plain");
  double in_sum = 0.0;
  for (const auto& ds : suite.sources) {
    double acc = accuracy_on_split(ds, Split::test, [&](const Tensor& x) {
      return default_predict(net, bank, x, cfg.logit_averaging);
    });
    rep.per_domain[ds.domain_id][default_name] = acc;
    in_sum += acc;
  }
  rep.mean_in_domain = in_sum / static_cast<double>(suite.sources.size());
  for (const auto& ds : suite.targets) {
    double acc = accuracy_on_split(ds, Split::test, [&](const Tensor& x) {
      return default_predict(net, bank, x, cfg.logit_averaging);
    });
    rep.per_domain[ds.domain_id][default_name] = acc;
    rep.out_domain[ds.domain_id] = acc;
  }

  if (has_masks) {
    rep.iou = iou_report(bank, cfg.tau);
    if (cfg.specialization) rep.spec_table = specialization_table(net, bank, suite);
  }
  return rep;
}

}  // namespace dmg
