#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmg/mask.hpp"
#include "dmg/ops.hpp"
#include "dmg/rng.hpp"
#include "dmg/tensor.hpp"

namespace dmg {

// Feature extractor (dense+ReLU stack) followed by the task network: hidden
// dense+ReLU layers plus a final classifier, with a mask attachment point at
// the input of every task layer.
struct NetSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> feature_widths;  // ReLU after each
  std::vector<std::size_t> task_widths;     // hidden task layers, ReLU after each
  std::size_t n_classes = 0;
};

struct DenseLayer {
  Tensor w;  // in x out
  Tensor b;  // out
};

struct Network {
  NetSpec spec;
  std::vector<DenseLayer> feature;
  std::vector<DenseLayer> task_hidden;
  std::vector<DenseLayer> classifiers;  // one shared head, or one per source domain

  bool multi_headed() const { return classifiers.size() > 1; }
  std::size_t n_task_layers() const { return task_hidden.size() + 1; }

  // Width of the activation vector entering each task layer.
  std::vector<LayerMaskSpec> mask_points() const {
    std::vector<LayerMaskSpec> points;
    std::size_t width = spec.feature_widths.empty() ? spec.input_dim : spec.feature_widths.back();
    points.push_back({0, width});
    for (std::size_t j = 0; j < spec.task_widths.size(); ++j)
      points.push_back({j + 1, spec.task_widths[j]});
    return points;
  }
};

// Hidden layers start from fan-in-scaled uniform weights; classifier heads
// from N(0, final_sigma) with zero bias. The draw order is fixed so equal
// seeds give equal networks regardless of training method.
inline Network init_network(const NetSpec& spec, std::size_t n_heads, double final_sigma,
                            Rng& rng) {
  if (spec.input_dim == 0 || spec.n_classes < 2)
    throw std::invalid_argument("init_network: input_dim and n_classes required");
  if (n_heads == 0) throw std::invalid_argument("init_network: at least one head");
  Network net;
  net.spec = spec;
  auto uniform_layer = [&](std::size_t in, std::size_t out) {
    DenseLayer l{Tensor({in, out}), Tensor({out})};
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : l.w.data) v = rng.uniform(-s, s);
    for (auto& v : l.b.data) v = rng.uniform(-s, s);
    return l;
  };
  std::size_t width = spec.input_dim;
  for (std::size_t out : spec.feature_widths) {
    net.feature.push_back(uniform_layer(width, out));
    width = out;
  }
  for (std::size_t out : spec.task_widths) {
    net.task_hidden.push_back(uniform_layer(width, out));
    width = out;
  }
  for (std::size_t h = 0; h < n_heads; ++h) {
    DenseLayer l{Tensor({width, spec.n_classes}), Tensor({spec.n_classes})};
    for (auto& v : l.w.data) v = final_sigma * rng.normal();
    net.classifiers.push_back(std::move(l));
  }
  return net;
}

// ---------------------------------------------------------------------------
// Masked forward / backward
// ---------------------------------------------------------------------------

// One mask tensor per task layer: either [k] (broadcast over the batch) or
// [batch x k] (per-instance samples).
using LayerMasks = std::vector<Tensor>;

namespace detail {

inline Tensor apply_layer_mask(const Tensor& a, const Tensor& mask) {
  const std::size_t n = a.rows(), k = a.cols();
  if (mask.rank() == 1) {
    if (mask.size() != k) throw std::invalid_argument("mask width mismatch");
    Tensor out({n, k});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < k; ++t) out(i, t) = a(i, t) * mask[t];
    return out;
  }
  require_same_shape(a, mask, "apply_layer_mask");
  Tensor out({n, k});
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * mask[i];
  return out;
}

}  // namespace detail

struct ForwardCache {
  std::vector<Tensor> feature_in;   // input of each feature layer
  std::vector<Tensor> feature_pre;  // its pre-activation
  std::vector<Tensor> task_in;      // pre-mask input of each task layer
  std::vector<Tensor> task_masked;  // post-mask input
  std::vector<Tensor> task_pre;     // pre-activation (logits for the last layer)
  LayerMasks masks;                 // empty when unmasked
  std::vector<int> head_rows;       // per-row head; empty when shared
};

// Runs the full network. `masks` may be null (unmasked); `head_rows` selects a
// classifier per row and is required iff the network is multi-headed.
inline Tensor forward_network(const Network& net, const Tensor& x, const LayerMasks* masks,
                              const std::vector<int>* head_rows, ForwardCache* cache) {
  if (x.rank() != 2 || x.cols() != net.spec.input_dim)
    throw std::invalid_argument("forward_network: input " + shape_str(x) + " vs input_dim " +
                                std::to_string(net.spec.input_dim));
  if (net.multi_headed() != (head_rows != nullptr))
    throw std::invalid_argument("forward_network: head selection must match network kind");
  if (masks && masks->size() != net.n_task_layers())
    throw std::invalid_argument("forward_network: expected one mask per task layer");

  Tensor a = x;
  for (const auto& layer : net.feature) {
    if (cache) cache->feature_in.push_back(a);
    Tensor z = dense_forward(a, layer.w, layer.b);
    if (cache) cache->feature_pre.push_back(z);
    a = relu(z);
  }

  const std::size_t n_layers = net.n_task_layers();
  if (cache && masks) cache->masks = *masks;
  for (std::size_t j = 0; j < n_layers; ++j) {
    if (cache) cache->task_in.push_back(a);
    Tensor masked = masks ? detail::apply_layer_mask(a, (*masks)[j]) : a;
    if (cache) cache->task_masked.push_back(masked);
    const bool is_classifier = j + 1 == n_layers;
    if (!is_classifier) {
      Tensor z = dense_forward(masked, net.task_hidden[j].w, net.task_hidden[j].b);
      if (cache) cache->task_pre.push_back(z);
      a = relu(z);
    } else if (!net.multi_headed()) {
      Tensor z = dense_forward(masked, net.classifiers[0].w, net.classifiers[0].b);
      if (cache) cache->task_pre.push_back(z);
      a = std::move(z);
    } else {
      const std::size_t n = masked.rows(), in = masked.cols(), out = net.spec.n_classes;
      if (head_rows->size() != n)
        throw std::invalid_argument("forward_network: one head index per row required");
      Tensor z({n, out});
      for (std::size_t i = 0; i < n; ++i) {
        const int h = (*head_rows)[i];
        if (h < 0 || static_cast<std::size_t>(h) >= net.classifiers.size())
          throw std::invalid_argument("forward_network: head index out of range");
        const DenseLayer& head = net.classifiers[h];
        for (std::size_t t = 0; t < out; ++t) z(i, t) = head.b[t];
        for (std::size_t k = 0; k < in; ++k) {
          const double xv = masked(i, k);
          const double* wk = &head.w.data[k * out];
          for (std::size_t t = 0; t < out; ++t) z(i, t) += xv * wk[t];
        }
      }
      require_finite(z, "forward_network(heads)");
      if (cache) {
        cache->task_pre.push_back(z);
        cache->head_rows = *head_rows;
      }
      a = std::move(z);
    }
  }
  return a;
}

struct LayerGrads {
  Tensor w;
  Tensor b;
};

struct NetworkGrads {
  std::vector<LayerGrads> feature;
  std::vector<LayerGrads> task_hidden;
  std::vector<LayerGrads> classifiers;
  // Gradient w.r.t. the masked input of each task layer; the mask path and
  // the downstream activation path both start from it.
  std::vector<Tensor> task_masked_grad;
};

inline NetworkGrads backward_network(const Network& net, const ForwardCache& cache,
                                     const Tensor& grad_logits) {
  NetworkGrads grads;
  grads.task_masked_grad.resize(net.n_task_layers());
  for (const auto& l : net.feature) grads.feature.push_back({Tensor(l.w.shape), Tensor(l.b.shape)});
  for (const auto& l : net.task_hidden)
    grads.task_hidden.push_back({Tensor(l.w.shape), Tensor(l.b.shape)});
  for (const auto& l : net.classifiers)
    grads.classifiers.push_back({Tensor(l.w.shape), Tensor(l.b.shape)});

  const std::size_t n_layers = net.n_task_layers();
  const bool masked = !cache.masks.empty();
  Tensor grad_in;  // gradient w.r.t. the pre-mask input of the current task layer

  // classifier layer
  {
    const std::size_t j = n_layers - 1;
    const Tensor& input = cache.task_masked[j];
    Tensor grad_masked;
    if (!net.multi_headed()) {
      DenseGrads g = dense_backward(grad_logits, input, net.classifiers[0].w);
      grads.classifiers[0].w = std::move(g.grad_w);
      grads.classifiers[0].b = std::move(g.grad_b);
      grad_masked = std::move(g.grad_x);
    } else {
      const std::size_t n = input.rows(), in = input.cols(), out = net.spec.n_classes;
      grad_masked = Tensor({n, in});
      for (std::size_t i = 0; i < n; ++i) {
        const int h = cache.head_rows[i];
        LayerGrads& hg = grads.classifiers[h];
        const DenseLayer& head = net.classifiers[h];
        const double* gz = &grad_logits.data[i * out];
        for (std::size_t t = 0; t < out; ++t) hg.b[t] += gz[t];
        for (std::size_t k = 0; k < in; ++k) {
          double acc = 0.0;
          const double xv = input(i, k);
          double* gw = &hg.w.data[k * out];
          const double* wk = &head.w.data[k * out];
          for (std::size_t t = 0; t < out; ++t) {
            gw[t] += xv * gz[t];
            acc += gz[t] * wk[t];
          }
        grad_masked(i, k) = acc;
        }
      }
    }
    grads.task_masked_grad[j] = grad_masked;
    grad_in = masked ? detail::apply_layer_mask(grad_masked, cache.masks[j]) : grad_masked;
  }

  // hidden task layers
  for (std::size_t j = n_layers - 1; j-- > 0;) {
    Tensor grad_z = relu_backward(grad_in, cache.task_pre[j]);
    DenseGrads g = dense_backward(grad_z, cache.task_masked[j], net.task_hidden[j].w);
    grads.task_hidden[j].w = std::move(g.grad_w);
    grads.task_hidden[j].b = std::move(g.grad_b);
    grads.task_masked_grad[j] = g.grad_x;
    grad_in = masked ? detail::apply_layer_mask(g.grad_x, cache.masks[j]) : std::move(g.grad_x);
  }

  // feature stack
  for (std::size_t f = net.feature.size(); f-- > 0;) {
    Tensor grad_z = relu_backward(grad_in, cache.feature_pre[f]);
    DenseGrads g = dense_backward(grad_z, cache.feature_in[f], net.feature[f].w);
    grads.feature[f].w = std::move(g.grad_w);
    grads.feature[f].b = std::move(g.grad_b);
    grad_in = std::move(g.grad_x);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Mask construction for batches
// ---------------------------------------------------------------------------

// Soft masks of one domain, broadcast over the batch.
inline LayerMasks soft_masks(const MaskBank& bank, std::size_t domain_index) {
  LayerMasks masks;
  for (std::size_t l = 0; l < bank.n_layers(); ++l)
    masks.push_back(mask_probs(bank.params[domain_index][l]));
  return masks;
}

inline LayerMasks mean_soft_masks(const MaskBank& bank) {
  std::vector<Tensor> mean = mean_soft_mask(bank);
  return LayerMasks(mean.begin(), mean.end());
}

// Per-row soft masks chosen by each row's domain; the fully-soft relaxation
// used for gradient checking.
inline LayerMasks soft_masks_rows(const MaskBank& bank, const std::vector<int>& row_domains) {
  LayerMasks masks;
  const std::size_t n = row_domains.size();
  std::vector<Tensor> probs_by_domain(bank.n_domains());
  for (std::size_t l = 0; l < bank.n_layers(); ++l) {
    for (std::size_t d = 0; d < bank.n_domains(); ++d)
      probs_by_domain[d] = mask_probs(bank.params[d][l]);
    const std::size_t k = bank.layers[l].width;
    Tensor m({n, k});
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor& p = probs_by_domain[static_cast<std::size_t>(row_domains[i])];
      for (std::size_t t = 0; t < k; ++t) m(i, t) = p[t];
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

enum class MaskSampling { per_instance, per_domain_batch };

// Hard Bernoulli samples for a batch. per_instance draws one mask per row;
// per_domain_batch draws one mask per domain per layer and shares it across
// that domain's rows. The draw order is fixed (layer, then domain/row, then
// entry) so fixed seeds reproduce training bit-for-bit.
inline LayerMasks sample_layer_masks(const MaskBank& bank, const std::vector<int>& row_domains,
                                     Rng& rng, MaskSampling sampling) {
  LayerMasks masks;
  const std::size_t n = row_domains.size();
  for (std::size_t l = 0; l < bank.n_layers(); ++l) {
    const std::size_t k = bank.layers[l].width;
    std::vector<Tensor> probs_by_domain(bank.n_domains());
    for (std::size_t d = 0; d < bank.n_domains(); ++d)
      probs_by_domain[d] = mask_probs(bank.params[d][l]);
    Tensor m({n, k});
    if (sampling == MaskSampling::per_instance) {
      for (std::size_t i = 0; i < n; ++i) {
        Tensor draw = bernoulli_draw(rng, probs_by_domain[static_cast<std::size_t>(row_domains[i])]);
        for (std::size_t t = 0; t < k; ++t) m(i, t) = draw[t];
      }
    } else {
      std::vector<Tensor> draw_by_domain;
      for (std::size_t d = 0; d < bank.n_domains(); ++d)
        draw_by_domain.push_back(bernoulli_draw(rng, probs_by_domain[d]));
      for (std::size_t i = 0; i < n; ++i) {
        const Tensor& draw = draw_by_domain[static_cast<std::size_t>(row_domains[i])];
        for (std::size_t t = 0; t < k; ++t) m(i, t) = draw[t];
      }
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

// Straight-through accumulation: rows of domain d contribute
// grad_ahat (.) a (.) sigmoid'(m~^d) to that domain's mask-parameter grads.
inline std::vector<std::vector<Tensor>> accumulate_mask_grads(
    const MaskBank& bank, const ForwardCache& cache, const NetworkGrads& grads,
    const std::vector<int>& row_domains) {
  std::vector<std::vector<Tensor>> out = zeros_like_bank(bank);
  for (std::size_t l = 0; l < bank.n_layers(); ++l) {
    const Tensor& a = cache.task_in[l];
    const Tensor& ga = grads.task_masked_grad[l];
    const std::size_t n = a.rows(), k = a.cols();
    std::vector<Tensor> sigp(bank.n_domains());
    for (std::size_t d = 0; d < bank.n_domains(); ++d) {
      const Tensor& params = bank.params[d][l];
      Tensor sp({k});
      for (std::size_t t = 0; t < k; ++t) {
        double s = sigmoid(params[t]);
        sp[t] = s * (1.0 - s);
      }
      sigp[d] = std::move(sp);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t d = static_cast<std::size_t>(row_domains[i]);
      Tensor& g = out[d][l];
      const Tensor& sp = sigp[d];
      for (std::size_t t = 0; t < k; ++t) g[t] += ga(i, t) * a(i, t) * sp[t];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inference-time forwards
// ---------------------------------------------------------------------------

inline Tensor forward_unmasked(const Network& net, const Tensor& x) {
  return forward_network(net, x, nullptr, nullptr, nullptr);
}

inline Tensor forward_soft(const Network& net, const MaskBank& bank, std::size_t domain_index,
                           const Tensor& x) {
  LayerMasks masks = soft_masks(bank, domain_index);
  return forward_network(net, x, &masks, nullptr, nullptr);
}

inline Tensor forward_given_masks(const Network& net, const LayerMasks& masks, const Tensor& x) {
  return forward_network(net, x, &masks, nullptr, nullptr);
}

inline Tensor forward_one_head(const Network& net, std::size_t head, const Tensor& x) {
  std::vector<int> rows(x.rows(), static_cast<int>(head));
  return forward_network(net, x, nullptr, &rows, nullptr);
}

}  // namespace dmg
