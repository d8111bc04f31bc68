#include "clusterattn/harness/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace clusterattn::harness {
namespace {

constexpr double kMixedDispersedShare = 0.25;
constexpr double kStudentDof = 2.0;
constexpr double kQueryNoise = 0.5;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double normal() { return normal_(rng_); }
  double uniform() { return uniform_(rng_); }
  Index index(Index n) { return std::min(static_cast<Index>(uniform() * static_cast<double>(n)), n - 1); }
  double chi_squared(double dof) { return std::chi_squared_distribution<double>(dof)(rng_); }

  void fill_normal(Eigen::Ref<RowVector<float>> row, double scale) {
    for (Index d = 0; d < row.size(); ++d) row[d] = static_cast<float>(scale * normal());
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

void student_t_row(Sampler& s, Eigen::Ref<RowVector<float>> row) {
  const double w = std::sqrt(kStudentDof / std::max(s.chi_squared(kStudentDof), 1e-12));
  for (Index d = 0; d < row.size(); ++d) row[d] = static_cast<float>(s.normal() * w);
}

HeadInput gen_head(const LayerSpec& spec, Index seq_len, Index head_dim, Sampler& s) {
  const Index g = spec.components;
  Tensor means(g, head_dim);
  for (Index j = 0; j < g; ++j) s.fill_normal(means.row(j), 1.0);

  HeadInput h{Tensor(seq_len, head_dim), Tensor(seq_len, head_dim), Tensor(seq_len, head_dim)};
  for (Index i = 0; i < seq_len; ++i) {
    bool dispersed = spec.kind == LayerKind::Dispersed;
    if (spec.kind == LayerKind::Mixed) dispersed = s.uniform() < kMixedDispersedShare;
    if (dispersed) {
      student_t_row(s, h.k.row(i));
    } else {
      const Index z = s.index(g);
      for (Index d = 0; d < head_dim; ++d) {
        h.k(i, d) = means(z, d) + static_cast<float>(spec.component_sigma * s.normal());
      }
    }
  }

  std::vector<Index> active(static_cast<std::size_t>(g));
  std::iota(active.begin(), active.end(), Index{0});
  std::shuffle(active.begin(), active.end(), s.engine());
  const Index used = spec.query_components > 0 ? std::min(spec.query_components, g) : g;
  active.resize(static_cast<std::size_t>(used));

  const double gain = std::sqrt(static_cast<double>(head_dim));
  for (Index i = 0; i < seq_len; ++i) {
    const Index a = active[static_cast<std::size_t>(s.index(used))];
    const double scale = std::exp(spec.query_scale_spread * s.normal());
    const RowVector<double> dir = means.row(a).cast<double>().normalized();
    for (Index d = 0; d < head_dim; ++d) {
      h.q(i, d) = static_cast<float>(scale * (gain * dir[d] + kQueryNoise * s.normal()));
    }
  }
  for (Index i = 0; i < seq_len; ++i) s.fill_normal(h.v.row(i), 1.0);
  return h;
}

Tensor drifted(const Tensor& x, double sigma, Sampler& s) {
  const double rms = std::sqrt(x.cast<double>().squaredNorm() / static_cast<double>(std::max<Index>(x.size(), 1)));
  Tensor out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index d = 0; d < x.cols(); ++d) out(i, d) = x(i, d) + static_cast<float>(sigma * rms * s.normal());
  }
  return out;
}

}  // namespace

std::vector<std::vector<HeadInput>> gen_synthetic(const LayerSpec& spec, Index seq_len, Index head_dim,
                                                  Index heads, Index steps, std::uint64_t seed) {
  if (seq_len < 1 || head_dim < 1 || heads < 1 || steps < 1) {
    throw ParameterError("gen_synthetic: sizes must be positive");
  }
  if (spec.components < 1) throw ParameterError("gen_synthetic: components must be >= 1");

  std::vector<std::vector<HeadInput>> out(static_cast<std::size_t>(steps));
  for (Index h = 0; h < heads; ++h) {
    Sampler s(head_seed(seed, h));
    out[0].push_back(gen_head(spec, seq_len, head_dim, s));
    for (Index t = 1; t < steps; ++t) {
      const HeadInput& prev = out[t - 1][h];
      if (spec.drift_sigma == 0.0) {
        out[t].push_back(prev);
      } else {
        out[t].push_back({drifted(prev.q, spec.drift_sigma, s), drifted(prev.k, spec.drift_sigma, s),
                          drifted(prev.v, spec.drift_sigma, s)});
      }
    }
  }
  return out;
}

Workload gen_workload(const ExperimentConfig& cfg) {
  validate(cfg);
  const Index num_layers = static_cast<Index>(cfg.layers.size());
  Workload w(static_cast<std::size_t>(cfg.steps), std::vector<std::vector<HeadInput>>(num_layers));
  for (Index l = 0; l < num_layers; ++l) {
    auto layer = gen_synthetic(cfg.layers[l], cfg.seq_len, cfg.head_dim, cfg.heads, cfg.steps,
                               layer_seed(cfg.seed ^ 0x5eedULL, l));
    for (Index t = 0; t < cfg.steps; ++t) w[t][l] = std::move(layer[t]);
  }
  return w;
}

}  // namespace clusterattn::harness
