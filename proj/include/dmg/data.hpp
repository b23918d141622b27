#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmg/rng.hpp"
#include "dmg/tensor.hpp"

namespace dmg {

enum class Split { train, val, test };

struct DomainDataset {
  std::string domain_id;
  Tensor x;  // n x dim
  std::vector<int> y;
  std::vector<Split> split;

  std::size_t n_rows() const { return y.size(); }

  std::vector<std::size_t> rows_of(Split s) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == s) idx.push_back(i);
    return idx;
  }
};

struct SplitFractions {
  double train = 0.72;
  double val = 0.08;
  double test = 0.20;
};

struct SyntheticSpec {
  enum class Family { specific_blobs, rotated_moons };
  Family family = Family::specific_blobs;
  int p = 3;  // source domains
  int q = 1;  // held-out target domains
  int n_classes = 4;
  int n_per_domain = 600;
  int shared_dims = 8;
  int specific_dims = 4;
  double noise_sigma = 1.0;
  std::vector<double> angles_deg;  // rotated-moons: one angle per domain, p+q of them
  std::uint64_t seed = 7;
  SplitFractions splits;
};

// Generating parameters, kept around so the exact Bayes classifier can be
// evaluated without touching any trained model.
struct BlobParams {
  Tensor shared_means;                 // C x shared_dims
  std::vector<Tensor> specific_means;  // per domain: C x specific_dims
  int shared_dims = 0;
  int specific_dims = 0;
  double sigma = 0.0;
};

struct MoonsParams {
  std::vector<double> angles_rad;
  double sigma = 0.0;
};

struct DomainSuite {
  std::vector<DomainDataset> sources;
  std::vector<DomainDataset> targets;
  std::size_t n_classes = 0;
  std::size_t feature_dim = 0;
  std::optional<SyntheticSpec> spec;  // present iff generated synthetically
  std::optional<BlobParams> blob_params;
  std::optional<MoonsParams> moons_params;

  std::size_t n_sources() const { return sources.size(); }

  std::vector<std::string> source_ids() const {
    std::vector<std::string> ids;
    for (const auto& d : sources) ids.push_back(d.domain_id);
    return ids;
  }

  const DomainDataset& domain(const std::string& id) const {
    for (const auto& d : sources)
      if (d.domain_id == id) return d;
    for (const auto& d : targets)
      if (d.domain_id == id) return d;
    throw std::invalid_argument("DomainSuite: unknown domain '" + id + "'");
  }
};

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

// Tags rows with a disjoint, exhaustive train/val/test cover. Counts use
// largest-remainder rounding so exact fractions come out exact.
inline void split_dataset(DomainDataset& ds, const SplitFractions& f, Rng& rng) {
  const double sum = f.train + f.val + f.test;
  if (std::abs(sum - 1.0) > 1e-9 || f.train < 0 || f.val < 0 || f.test < 0)
    throw std::invalid_argument("split_dataset: fractions must be nonnegative and sum to 1");
  const std::size_t n = ds.n_rows();
  const double fr[3] = {f.train, f.val, f.test};
  std::size_t count[3];
  double rem[3];
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    double exact = fr[s] * static_cast<double>(n);
    count[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[s] = exact - static_cast<double>(count[s]);
    assigned += count[s];
  }
  while (assigned < n) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (rem[s] > rem[best]) best = s;
    ++count[best];
    rem[best] = -1.0;
    ++assigned;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  ds.split.assign(n, Split::train);
  std::size_t at = count[0];
  for (std::size_t i = 0; i < count[1]; ++i) ds.split[order[at + i]] = Split::val;
  at += count[1];
  for (std::size_t i = 0; i < count[2]; ++i) ds.split[order[at + i]] = Split::test;
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

namespace detail {

inline std::string domain_name(const SyntheticSpec& spec, int index) {
  return index < spec.p ? "s" + std::to_string(index)
                        : "t" + std::to_string(index - spec.p);
}

inline void validate_common(const SyntheticSpec& spec) {
  if (spec.p < 1 || spec.q < 0) throw std::invalid_argument("SyntheticSpec: p >= 1, q >= 0 required");
  if (spec.n_classes < 2) throw std::invalid_argument("SyntheticSpec: at least 2 classes");
  if (spec.n_per_domain < spec.n_classes)
    throw std::invalid_argument("SyntheticSpec: n_per_domain below class count");
  if (spec.noise_sigma < 0) throw std::invalid_argument("SyntheticSpec: negative noise_sigma");
}

}  // namespace detail

inline BlobParams gen_blob_params(const SyntheticSpec& spec) {
  const int n_domains = spec.p + spec.q;
  BlobParams params;
  params.shared_dims = spec.shared_dims;
  params.specific_dims = spec.specific_dims;
  params.sigma = spec.noise_sigma;
  Rng shared_rng(derive_seed(spec.seed, "blob_shared_means"));
  params.shared_means = Tensor({static_cast<std::size_t>(spec.n_classes),
                                static_cast<std::size_t>(spec.shared_dims)});
  for (auto& v : params.shared_means.data) v = shared_rng.normal();
  for (int j = 0; j < n_domains; ++j) {
    Rng rng(derive_seed(spec.seed, "blob_specific_means:" + std::to_string(j)));
    Tensor m({static_cast<std::size_t>(spec.n_classes),
              static_cast<std::size_t>(spec.specific_dims)});
    for (auto& v : m.data) v = rng.normal();
    params.specific_means.push_back(std::move(m));
  }
  return params;
}

// Clusters share class means in the leading block while every domain owns a
// private block that is class-informative only for its own samples; all other
// private blocks are pure noise for that domain.
inline DomainSuite gen_specific_blobs(const SyntheticSpec& spec) {
  detail::validate_common(spec);
  if (spec.family != SyntheticSpec::Family::specific_blobs)
    throw std::invalid_argument("gen_specific_blobs: wrong family");
  if (spec.shared_dims < 1 || spec.specific_dims < 0)
    throw std::invalid_argument("gen_specific_blobs: invalid dimension counts");

  const int n_domains = spec.p + spec.q;
  const std::size_t dim = static_cast<std::size_t>(spec.shared_dims) +
                          static_cast<std::size_t>(n_domains) *
                              static_cast<std::size_t>(spec.specific_dims);
  DomainSuite suite;
  suite.spec = spec;
  suite.n_classes = static_cast<std::size_t>(spec.n_classes);
  suite.feature_dim = dim;
  suite.blob_params = gen_blob_params(spec);
  const BlobParams& params = *suite.blob_params;

  for (int j = 0; j < n_domains; ++j) {
    DomainDataset ds;
    ds.domain_id = detail::domain_name(spec, j);
    const std::size_t n = static_cast<std::size_t>(spec.n_per_domain);
    ds.x = Tensor({n, dim});
    ds.y.resize(n);
    Rng noise(derive_seed(spec.seed, "blob_noise:" + std::to_string(j)));
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % static_cast<std::size_t>(spec.n_classes));
      ds.y[i] = label;
      double* row = &ds.x.data[i * dim];
      for (int t = 0; t < spec.shared_dims; ++t)
        row[t] = params.shared_means(label, t);
      const std::size_t own_block = static_cast<std::size_t>(spec.shared_dims) +
                                    static_cast<std::size_t>(j) *
                                        static_cast<std::size_t>(spec.specific_dims);
      for (int t = 0; t < spec.specific_dims; ++t)
        row[own_block + t] = params.specific_means[j](label, t);
      for (std::size_t t = 0; t < dim; ++t) row[t] += spec.noise_sigma * noise.normal();
    }
    Rng split_rng(derive_seed(spec.seed, "split:" + std::to_string(j)));
    split_dataset(ds, spec.splits, split_rng);
    if (j < spec.p)
      suite.sources.push_back(std::move(ds));
    else
      suite.targets.push_back(std::move(ds));
  }
  return suite;
}

namespace detail {

// The two classic interleaved half-circles, before rotation.
inline void moon_point(int label, double t, double* px, double* py) {
  if (label == 0) {
    *px = std::cos(t);
    *py = std::sin(t);
  } else {
    *px = 1.0 - std::cos(t);
    *py = 0.5 - std::sin(t);
  }
}

}  // namespace detail

inline DomainSuite gen_rotated_moons(const SyntheticSpec& spec) {
  detail::validate_common(spec);
  if (spec.family != SyntheticSpec::Family::rotated_moons)
    throw std::invalid_argument("gen_rotated_moons: wrong family");
  if (spec.n_classes != 2)
    throw std::invalid_argument("gen_rotated_moons: two-moons requires exactly 2 classes");
  const int n_domains = spec.p + spec.q;
  if (static_cast<int>(spec.angles_deg.size()) != n_domains)
    throw std::invalid_argument("gen_rotated_moons: need one angle per domain (p+q)");
  for (int i = 0; i < n_domains; ++i)
    for (int j = i + 1; j < n_domains; ++j)
      if (spec.angles_deg[i] == spec.angles_deg[j])
        throw std::invalid_argument("gen_rotated_moons: domain angles must be distinct");

  DomainSuite suite;
  suite.spec = spec;
  suite.n_classes = 2;
  suite.feature_dim = 2;
  MoonsParams params;
  params.sigma = spec.noise_sigma;
  constexpr double pi = 3.14159265358979323846;
  for (double deg : spec.angles_deg) params.angles_rad.push_back(deg * pi / 180.0);
  suite.moons_params = params;

  for (int j = 0; j < n_domains; ++j) {
    DomainDataset ds;
    ds.domain_id = detail::domain_name(spec, j);
    const std::size_t n = static_cast<std::size_t>(spec.n_per_domain);
    ds.x = Tensor({n, 2});
    ds.y.resize(n);
    // Pre-rotation draws are keyed by domain index only, so equal angles in
    // otherwise-equal specs give identical clouds.
    Rng trng(derive_seed(spec.seed, "moons_t:" + std::to_string(j)));
    Rng noise(derive_seed(spec.seed, "moons_noise:" + std::to_string(j)));
    const double theta = params.angles_rad[j];
    const double c = std::cos(theta), s = std::sin(theta);
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 2);
      ds.y[i] = label;
      double px, py;
      detail::moon_point(label, trng.uniform(0.0, pi), &px, &py);
      px += spec.noise_sigma * noise.normal();
      py += spec.noise_sigma * noise.normal();
      ds.x(i, 0) = c * px - s * py;
      ds.x(i, 1) = s * px + c * py;
    }
    Rng split_rng(derive_seed(spec.seed, "split:" + std::to_string(j)));
    split_dataset(ds, spec.splits, split_rng);
    if (j < spec.p)
      suite.sources.push_back(std::move(ds));
    else
      suite.targets.push_back(std::move(ds));
  }
  return suite;
}

inline DomainSuite generate_suite(const SyntheticSpec& spec) {
  return spec.family == SyntheticSpec::Family::specific_blobs ? gen_specific_blobs(spec)
                                                              : gen_rotated_moons(spec);
}

// ---------------------------------------------------------------------------
// Bayes oracle
// ---------------------------------------------------------------------------

namespace detail {

inline int blob_domain_index(const SyntheticSpec& spec, const std::string& id) {
  const int n_domains = spec.p + spec.q;
  for (int j = 0; j < n_domains; ++j)
    if (domain_name(spec, j) == id) return j;
  throw std::invalid_argument("bayes_oracle_accuracy: unknown domain '" + id + "'");
}

}  // namespace detail

// Accuracy of the exact Bayes classifier on a domain's test split, computed
// from the generating densities alone. Balanced labels make the priors
// uniform, so only likelihoods matter.
inline double bayes_oracle_accuracy(const DomainSuite& suite, const std::string& domain_id) {
  if (!suite.spec)
    throw std::invalid_argument("bayes_oracle_accuracy: suite was loaded, not generated; "
                                "true densities unavailable");
  const SyntheticSpec& spec = *suite.spec;
  const DomainDataset& ds = suite.domain(domain_id);
  const std::vector<std::size_t> rows = ds.rows_of(Split::test);
  if (rows.empty()) throw std::invalid_argument("bayes_oracle_accuracy: empty test split");
  std::size_t correct = 0;

  if (spec.family == SyntheticSpec::Family::specific_blobs) {
    const BlobParams& bp = *suite.blob_params;
    const int j = detail::blob_domain_index(spec, domain_id);
    const std::size_t own_block = static_cast<std::size_t>(bp.shared_dims) +
                                  static_cast<std::size_t>(j) *
                                      static_cast<std::size_t>(bp.specific_dims);
    for (std::size_t r : rows) {
      const double* row = &ds.x.data[r * suite.feature_dim];
      int best = 0;
      double best_d2 = 0.0;
      for (int c = 0; c < spec.n_classes; ++c) {
        // Only the shared block and this domain's own block carry class
        // information; every other coordinate has a class-independent density.
        double d2 = 0.0;
        for (int t = 0; t < bp.shared_dims; ++t) {
          double diff = row[t] - bp.shared_means(c, t);
          d2 += diff * diff;
        }
        for (int t = 0; t < bp.specific_dims; ++t) {
          double diff = row[own_block + t] - bp.specific_means[j](c, t);
          d2 += diff * diff;
        }
        if (c == 0 || d2 < best_d2) {
          best = c;
          best_d2 = d2;
        }
      }
      correct += best == ds.y[r] ? 1 : 0;
    }
  } else {
    const MoonsParams& mp = *suite.moons_params;
    const int j = detail::blob_domain_index(spec, domain_id);
    const double theta = mp.angles_rad[j];
    const double c = std::cos(theta), s = std::sin(theta);
    constexpr double pi = 3.14159265358979323846;
    const int quad = 2048;
    // Likelihood of each arc-uniform class density by midpoint quadrature;
    // at sigma = 0 the limit is nearest-curve classification, which the
    // same code path realizes through the min-distance term.
    std::vector<std::array<double, 2>> curve0(quad), curve1(quad);
    for (int m = 0; m < quad; ++m) {
      double t = (m + 0.5) * pi / quad;
      double px, py;
      detail::moon_point(0, t, &px, &py);
      curve0[m] = {c * px - s * py, s * px + c * py};
      detail::moon_point(1, t, &px, &py);
      curve1[m] = {c * px - s * py, s * px + c * py};
    }
    const double sigma2 = mp.sigma * mp.sigma;
    for (std::size_t r : rows) {
      const double x0 = ds.x(r, 0), x1 = ds.x(r, 1);
      double score[2];
      for (int cls = 0; cls < 2; ++cls) {
        const auto& curve = cls == 0 ? curve0 : curve1;
        double min_d2 = std::numeric_limits<double>::infinity();
        for (const auto& pt : curve) {
          double dx = x0 - pt[0], dy = x1 - pt[1];
          min_d2 = std::min(min_d2, dx * dx + dy * dy);
        }
        if (sigma2 == 0.0) {
          score[cls] = -min_d2;  // sigma -> 0 limit: nearest curve wins
        } else {
          double acc = 0.0;
          for (const auto& pt : curve) {
            double dx = x0 - pt[0], dy = x1 - pt[1];
            acc += std::exp(-((dx * dx + dy * dy) - min_d2) / (2.0 * sigma2));
          }
          score[cls] = -min_d2 / (2.0 * sigma2) + std::log(acc);
        }
      }
      int best = score[1] > score[0] ? 1 : 0;
      correct += best == ds.y[r] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------
// Delimited-file ingestion
// ---------------------------------------------------------------------------

namespace detail {

inline double parse_double(const std::string& cell, std::size_t line_no) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last)
    throw std::runtime_error("line " + std::to_string(line_no) + ": invalid number '" +
                             cell + "'");
  return v;
}

inline int parse_label(const std::string& cell, std::size_t line_no) {
  int v = 0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || v < 0)
    throw std::runtime_error("line " + std::to_string(line_no) +
                             ": invalid integer label '" + cell + "'");
  return v;
}

}  // namespace detail

// CSV rows of 64-bit floats with a final integer label column, no header.
inline DomainDataset load_delimited(const std::string& path, const std::string& domain_id) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_delimited: cannot open '" + path + "'");
  DomainDataset ds;
  ds.domain_id = domain_id;
  std::vector<double> values;
  std::size_t dim = 0, line_no = 0, n_rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() < 2)
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": expected at least one feature and a label");
    if (dim == 0) {
      dim = cells.size() - 1;
    } else if (cells.size() - 1 != dim) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": expected " +
                               std::to_string(dim) + " features, got " +
                               std::to_string(cells.size() - 1));
    }
    for (std::size_t i = 0; i < dim; ++i)
      values.push_back(detail::parse_double(cells[i], line_no));
    ds.y.push_back(detail::parse_label(cells.back(), line_no));
    ++n_rows;
  }
  if (n_rows == 0) throw std::runtime_error("load_delimited: no rows in '" + path + "'");
  ds.x = Tensor({n_rows, dim}, std::move(values));
  require_finite(ds.x, "load_delimited");
  ds.split.assign(n_rows, Split::train);
  return ds;
}

// ---------------------------------------------------------------------------
// Suite serialization: one CSV per domain + a JSON manifest
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double: to_chars failed");
  return std::string(buf, ptr);
}

inline void save_domain_csv(const DomainDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_domain_csv: cannot write '" + path + "'");
  const std::size_t dim = ds.x.cols();
  for (std::size_t i = 0; i < ds.n_rows(); ++i) {
    for (std::size_t t = 0; t < dim; ++t) {
      out << format_double(ds.x(i, t)) << ',';
    }
    out << ds.y[i] << '\n';
  }
}

inline std::string family_name(SyntheticSpec::Family f) {
  return f == SyntheticSpec::Family::specific_blobs ? "specific-blobs" : "rotated-moons";
}

inline SyntheticSpec::Family family_from_name(const std::string& s) {
  if (s == "specific-blobs") return SyntheticSpec::Family::specific_blobs;
  if (s == "rotated-moons") return SyntheticSpec::Family::rotated_moons;
  throw std::invalid_argument("unknown dataset family '" + s + "'");
}

inline void save_suite(const DomainSuite& suite, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["schema_version"] = 1;
  if (suite.spec) {
    const SyntheticSpec& spec = *suite.spec;
    manifest["kind"] = "synthetic";
    manifest["family"] = family_name(spec.family);
    manifest["p"] = spec.p;
    manifest["q"] = spec.q;
    manifest["n_classes"] = spec.n_classes;
    manifest["n_per_domain"] = spec.n_per_domain;
    manifest["shared_dims"] = spec.shared_dims;
    manifest["specific_dims"] = spec.specific_dims;
    manifest["noise_sigma"] = spec.noise_sigma;
    if (!spec.angles_deg.empty()) manifest["angles_deg"] = spec.angles_deg;
    manifest["seed"] = spec.seed;
    manifest["split_train"] = spec.splits.train;
    manifest["split_val"] = spec.splits.val;
    manifest["split_test"] = spec.splits.test;
  } else {
    manifest["kind"] = "csv";
    manifest["n_classes"] = suite.n_classes;
  }
  manifest["feature_dim"] = suite.feature_dim;
  nlohmann::json domains = nlohmann::json::array();
  auto add = [&](const DomainDataset& ds, const char* role) {
    save_domain_csv(ds, (fs::path(dir) / (ds.domain_id + ".csv")).string());
    domains.push_back({{"id", ds.domain_id}, {"role", role}, {"file", ds.domain_id + ".csv"}});
  };
  for (const auto& d : suite.sources) add(d, "source");
  for (const auto& d : suite.targets) add(d, "target");
  manifest["domains"] = domains;
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("save_suite: cannot write manifest in '" + dir + "'");
  out << manifest.dump(2) << '\n';
}

// Rebuilds a suite from manifest + CSVs. Synthetic manifests regenerate the
// generating parameters and split tags from the recorded spec and seed;
// plain csv manifests get splits from the manifest's fractions and seed.
inline DomainSuite load_suite(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw std::runtime_error("load_suite: cannot open '" + mpath.string() + "'");
  nlohmann::json manifest = nlohmann::json::parse(in);

  DomainSuite suite;
  const std::string kind = manifest.at("kind").get<std::string>();
  std::optional<SyntheticSpec> spec;
  if (kind == "synthetic") {
    SyntheticSpec s;
    s.family = family_from_name(manifest.at("family").get<std::string>());
    s.p = manifest.at("p").get<int>();
    s.q = manifest.at("q").get<int>();
    s.n_classes = manifest.at("n_classes").get<int>();
    s.n_per_domain = manifest.at("n_per_domain").get<int>();
    s.shared_dims = manifest.at("shared_dims").get<int>();
    s.specific_dims = manifest.at("specific_dims").get<int>();
    s.noise_sigma = manifest.at("noise_sigma").get<double>();
    if (manifest.contains("angles_deg"))
      s.angles_deg = manifest.at("angles_deg").get<std::vector<double>>();
    s.seed = manifest.at("seed").get<std::uint64_t>();
    s.splits.train = manifest.at("split_train").get<double>();
    s.splits.val = manifest.at("split_val").get<double>();
    s.splits.test = manifest.at("split_test").get<double>();
    spec = s;
    suite.spec = s;
    if (s.family == SyntheticSpec::Family::specific_blobs)
      suite.blob_params = gen_blob_params(s);
    else {
      MoonsParams mp;
      mp.sigma = s.noise_sigma;
      constexpr double pi = 3.14159265358979323846;
      for (double deg : s.angles_deg) mp.angles_rad.push_back(deg * pi / 180.0);
      suite.moons_params = mp;
    }
  }
  suite.n_classes = manifest.at("n_classes").get<std::size_t>();
  suite.feature_dim = manifest.at("feature_dim").get<std::size_t>();

  SplitFractions fractions;
  std::uint64_t split_seed = 0;
  if (spec) {
    fractions = spec->splits;
    split_seed = spec->seed;
  } else {
    if (manifest.contains("split_train")) {
      fractions.train = manifest.at("split_train").get<double>();
      fractions.val = manifest.at("split_val").get<double>();
      fractions.test = manifest.at("split_test").get<double>();
    }
    if (manifest.contains("seed")) split_seed = manifest.at("seed").get<std::uint64_t>();
  }

  int index = 0;
  for (const auto& entry : manifest.at("domains")) {
    const std::string id = entry.at("id").get<std::string>();
    const std::string file = entry.at("file").get<std::string>();
    const std::string role = entry.at("role").get<std::string>();
    DomainDataset ds = load_delimited((fs::path(dir) / file).string(), id);
    if (ds.x.cols() != suite.feature_dim)
      throw std::runtime_error("load_suite: domain '" + id + "' has " +
                               std::to_string(ds.x.cols()) + " features, manifest says " +
                               std::to_string(suite.feature_dim));
    for (int label : ds.y)
      if (static_cast<std::size_t>(label) >= suite.n_classes)
        throw std::runtime_error("load_suite: domain '" + id + "' label " +
                                 std::to_string(label) + " outside [0," +
                                 std::to_string(suite.n_classes) + ")");
    Rng split_rng(derive_seed(split_seed, "split:" + std::to_string(index)));
    split_dataset(ds, fractions, split_rng);
    if (role == "source")
      suite.sources.push_back(std::move(ds));
    else if (role == "target")
      suite.targets.push_back(std::move(ds));
    else
      throw std::runtime_error("load_suite: unknown role '" + role + "'");
    ++index;
  }
  if (suite.sources.empty()) throw std::runtime_error("load_suite: no source domains");
  return suite;
}

// Content fingerprint used to pair checkpoints with the suite they were
// trained on.
inline std::uint64_t suite_fingerprint(const DomainSuite& suite) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  auto mix_domain = [&](const DomainDataset& ds, char role) {
    h = fnv1a(ds.domain_id, h);
    mix_bytes(&role, 1);
    mix_bytes(ds.x.data.data(), ds.x.data.size() * sizeof(double));
    mix_bytes(ds.y.data(), ds.y.size() * sizeof(int));
  };
  std::uint64_t nc = suite.n_classes, fd = suite.feature_dim;
  mix_bytes(&nc, sizeof nc);
  mix_bytes(&fd, sizeof fd);
  for (const auto& d : suite.sources) mix_domain(d, 'S');
  for (const auto& d : suite.targets) mix_domain(d, 'T');
  return h;
}

}  // namespace dmg
