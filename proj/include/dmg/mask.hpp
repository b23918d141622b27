#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmg/ops.hpp"
#include "dmg/rng.hpp"
#include "dmg/tensor.hpp"

namespace dmg {

// Mask parameters this large give sigmoid(m) == 1.0 bit-exactly, which makes
// a masked forward identical to an unmasked one.
inline constexpr double kSaturatedMaskParam = 100.0;

// Floor on the sIoU denominator. Only guards the all-zero 0/0 case; any
// denominator above it is left untouched.
inline constexpr double kSiouEps = 1e-8;

struct LayerMaskSpec {
  std::size_t layer_index = 0;  // index into the task-layer stack
  std::size_t width = 0;        // neuron count at the layer input
};

// Per-domain, per-masked-layer real-valued mask parameters.
struct MaskBank {
  std::vector<std::string> domains;         // ordered source-domain ids
  std::vector<LayerMaskSpec> layers;        // identical structure for every domain
  std::vector<std::vector<Tensor>> params;  // [domain][layer], each of length width

  bool empty() const { return domains.empty(); }
  std::size_t n_domains() const { return domains.size(); }
  std::size_t n_layers() const { return layers.size(); }

  std::size_t domain_index(const std::string& d) const {
    for (std::size_t i = 0; i < domains.size(); ++i)
      if (domains[i] == d) return i;
    throw std::invalid_argument("MaskBank: unknown domain '" + d + "'");
  }
};

// Mask parameters start from U(0,1); saturated_on instead pins every mask
// hard-open, which reduces a masked network to its unmasked counterpart.
inline MaskBank init_mask_bank(std::vector<std::string> domains,
                               std::vector<LayerMaskSpec> layers, Rng& rng,
                               bool saturated_on = false) {
  MaskBank bank;
  bank.domains = std::move(domains);
  bank.layers = std::move(layers);
  bank.params.resize(bank.domains.size());
  for (std::size_t d = 0; d < bank.domains.size(); ++d) {
    for (const auto& spec : bank.layers) {
      Tensor t({spec.width});
      for (std::size_t i = 0; i < spec.width; ++i)
        t[i] = saturated_on ? kSaturatedMaskParam : rng.uniform();
      bank.params[d].push_back(std::move(t));
    }
  }
  return bank;
}

// Zero tensors shaped like bank.params, for gradient accumulation.
inline std::vector<std::vector<Tensor>> zeros_like_bank(const MaskBank& bank) {
  std::vector<std::vector<Tensor>> z(bank.n_domains());
  for (std::size_t d = 0; d < bank.n_domains(); ++d)
    for (const auto& p : bank.params[d]) z[d].push_back(Tensor(p.shape));
  return z;
}

// ---------------------------------------------------------------------------
// Core mask operations
// ---------------------------------------------------------------------------

// m = sigmoid(m~), elementwise; values land in (0,1).
inline Tensor mask_probs(const Tensor& params) {
  require_finite(params, "mask_probs");
  return sigmoid(params);
}

// a_hat = a (.) m. Works for hard samples and for soft test-time scaling alike.
inline Tensor apply_mask(const Tensor& activations, const Tensor& mask) {
  if (activations.size() != mask.size())
    throw std::invalid_argument("apply_mask: length mismatch " + shape_str(activations) +
                                " vs " + shape_str(mask));
  Tensor out(activations.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = activations[i] * mask[i];
  return out;
}

// Straight-through gradient to the raw mask parameters: the forward used the
// hard sample, the backward flows through the soft path,
//   grad_m~ = grad_a_hat (.) a (.) sigmoid'(m~).
inline Tensor straight_through_grad(const Tensor& grad_ahat, const Tensor& activations,
                                    const Tensor& params) {
  if (grad_ahat.size() != activations.size() || grad_ahat.size() != params.size())
    throw std::invalid_argument("straight_through_grad: shape mismatch");
  Tensor g(params.shape);
  for (std::size_t i = 0; i < g.size(); ++i) {
    double s = sigmoid(params[i]);
    g[i] = grad_ahat[i] * activations[i] * s * (1.0 - s);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Soft IoU (overlap) loss
// ---------------------------------------------------------------------------

inline void require_prob_vector(const Tensor& m, const char* op) {
  for (std::size_t i = 0; i < m.size(); ++i)
    if (!(m[i] >= 0.0 && m[i] <= 1.0))
      throw std::invalid_argument(std::string(op) + ": entry outside [0,1]: " +
                                  std::to_string(m[i]));
}

// sIoU(mi, mj) = sum(mi*mj) / sum(mi + mj - mi*mj). The denominator is floored
// at kSiouEps so the all-zero case yields 0 instead of 0/0.
inline double siou_pair(const Tensor& mi, const Tensor& mj) {
  if (mi.size() != mj.size() || mi.size() == 0)
    throw std::invalid_argument("siou_pair: vectors must have equal nonzero length");
  require_prob_vector(mi, "siou_pair");
  require_prob_vector(mj, "siou_pair");
  double inter = 0.0, denom = 0.0;
  for (std::size_t k = 0; k < mi.size(); ++k) {
    double prod = mi[k] * mj[k];
    inter += prod;
    denom += mi[k] + mj[k] - prod;
  }
  return inter / std::max(denom, kSiouEps);
}

struct PenaltyResult {
  double value = 0.0;
  std::vector<std::vector<Tensor>> grad;  // aligned with bank.params
};

// Sum of sIoU over masked layers and unordered domain pairs (i<j), with the
// analytic gradient w.r.t. every raw mask parameter (quotient rule chained
// through the sigmoid).
inline PenaltyResult siou_total_grad(const MaskBank& bank) {
  if (bank.n_domains() < 2)
    throw std::invalid_argument("siou_total: at least two source domains required");
  PenaltyResult r;
  r.grad = zeros_like_bank(bank);
  for (std::size_t l = 0; l < bank.n_layers(); ++l) {
    std::vector<Tensor> probs(bank.n_domains());
    for (std::size_t d = 0; d < bank.n_domains(); ++d)
      probs[d] = mask_probs(bank.params[d][l]);
    const std::size_t k = probs[0].size();
    for (std::size_t i = 0; i + 1 < bank.n_domains(); ++i) {
      for (std::size_t j = i + 1; j < bank.n_domains(); ++j) {
        const Tensor& a = probs[i];
        const Tensor& b = probs[j];
        double inter = 0.0, denom = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
          inter += a[t] * b[t];
          denom += a[t] + b[t] - a[t] * b[t];
        }
        const bool floored = denom <= kSiouEps;
        const double dm = std::max(denom, kSiouEps);
        r.value += inter / dm;
        for (std::size_t t = 0; t < k; ++t) {
          // d sIoU / d a_t and d sIoU / d b_t, denominator held fixed when floored
          double ds_da, ds_db;
          if (floored) {
            ds_da = b[t] / dm;
            ds_db = a[t] / dm;
          } else {
            ds_da = (b[t] * denom - inter * (1.0 - b[t])) / (denom * denom);
            ds_db = (a[t] * denom - inter * (1.0 - a[t])) / (denom * denom);
          }
          r.grad[i][l][t] += ds_da * a[t] * (1.0 - a[t]);
          r.grad[j][l][t] += ds_db * b[t] * (1.0 - b[t]);
        }
      }
    }
  }
  return r;
}

inline double siou_total(const MaskBank& bank) {
  if (bank.n_domains() < 2)
    throw std::invalid_argument("siou_total: at least two source domains required");
  double total = 0.0;
  for (std::size_t l = 0; l < bank.n_layers(); ++l) {
    std::vector<Tensor> probs(bank.n_domains());
    for (std::size_t d = 0; d < bank.n_domains(); ++d)
      probs[d] = mask_probs(bank.params[d][l]);
    for (std::size_t i = 0; i + 1 < bank.n_domains(); ++i)
      for (std::size_t j = i + 1; j < bank.n_domains(); ++j)
        total += siou_pair(probs[i], probs[j]);
  }
  return total;
}

// Sparsity alternative: sum over domains and layers of ||sigmoid(m~)||_1.
inline PenaltyResult l1_penalty_grad(const MaskBank& bank) {
  PenaltyResult r;
  r.grad = zeros_like_bank(bank);
  for (std::size_t d = 0; d < bank.n_domains(); ++d) {
    for (std::size_t l = 0; l < bank.n_layers(); ++l) {
      const Tensor& p = bank.params[d][l];
      for (std::size_t t = 0; t < p.size(); ++t) {
        double s = sigmoid(p[t]);
        r.value += s;
        r.grad[d][l][t] = s * (1.0 - s);
      }
    }
  }
  return r;
}

inline double l1_penalty(const MaskBank& bank) {
  double total = 0.0;
  for (std::size_t d = 0; d < bank.n_domains(); ++d)
    for (std::size_t l = 0; l < bank.n_layers(); ++l)
      for (std::size_t t = 0; t < bank.params[d][l].size(); ++t)
        total += sigmoid(bank.params[d][l][t]);
  return total;
}

// ---------------------------------------------------------------------------
// Discrete-mask analysis
// ---------------------------------------------------------------------------

// m = 1_{probs > tau}, strict inequality.
inline Tensor discretize(const Tensor& probs, double tau) {
  if (!(tau > 0.0 && tau < 1.0))
    throw std::invalid_argument("discretize: threshold must lie in (0,1)");
  Tensor out(probs.shape);
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] > tau ? 1.0 : 0.0;
  return out;
}

inline void require_binary(const Tensor& m, const char* op) {
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i] != 0.0 && m[i] != 1.0)
      throw std::invalid_argument(std::string(op) + ": non-binary entry " +
                                  std::to_string(m[i]));
}

// Jaccard similarity |A∩B| / |A∪B| of binary masks; 0 when the union is empty.
inline double jaccard(const Tensor& ma, const Tensor& mb) {
  if (ma.size() != mb.size())
    throw std::invalid_argument("jaccard: length mismatch");
  require_binary(ma, "jaccard");
  require_binary(mb, "jaccard");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    bool a = ma[i] != 0.0, b = mb[i] != 0.0;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct NeuronCategories {
  std::size_t useless = 0;   // off in every domain mask
  std::size_t shared = 0;    // on in every domain mask
  std::size_t specific = 0;  // everything else
};

inline NeuronCategories neuron_categories(const std::vector<Tensor>& discrete_masks) {
  if (discrete_masks.empty())
    throw std::invalid_argument("neuron_categories: no masks");
  const std::size_t k = discrete_masks[0].size();
  for (const auto& m : discrete_masks) {
    if (m.size() != k)
      throw std::invalid_argument("neuron_categories: inconsistent mask lengths");
    require_binary(m, "neuron_categories");
  }
  NeuronCategories c;
  for (std::size_t t = 0; t < k; ++t) {
    std::size_t on = 0;
    for (const auto& m : discrete_masks) on += m[t] != 0.0 ? 1 : 0;
    if (on == 0)
      ++c.useless;
    else if (on == discrete_masks.size())
      ++c.shared;
    else
      ++c.specific;
  }
  return c;
}

// Per-layer arithmetic mean of the soft masks across domains.
inline std::vector<Tensor> mean_soft_mask(const MaskBank& bank) {
  if (bank.empty()) throw std::invalid_argument("mean_soft_mask: empty bank");
  std::vector<Tensor> mean;
  for (std::size_t l = 0; l < bank.n_layers(); ++l) {
    Tensor acc(bank.params[0][l].shape);
    for (std::size_t d = 0; d < bank.n_domains(); ++d) {
      Tensor p = mask_probs(bank.params[d][l]);
      for (std::size_t t = 0; t < acc.size(); ++t) acc[t] += p[t];
    }
    for (std::size_t t = 0; t < acc.size(); ++t)
      acc[t] /= static_cast<double>(bank.n_domains());
    mean.push_back(std::move(acc));
  }
  return mean;
}

// Single-instance sample: a hard {0,1} mask per masked layer plus the
// probabilities it was drawn from.
struct MaskSample {
  std::vector<Tensor> masks;
  std::vector<Tensor> probs;
};

inline MaskSample sample_masks(const MaskBank& bank, const std::string& domain, Rng& rng) {
  const std::size_t d = bank.domain_index(domain);
  MaskSample s;
  for (std::size_t l = 0; l < bank.n_layers(); ++l) {
    Tensor p = mask_probs(bank.params[d][l]);
    s.masks.push_back(bernoulli_draw(rng, p));
    s.probs.push_back(std::move(p));
  }
  return s;
}

}  // namespace dmg
