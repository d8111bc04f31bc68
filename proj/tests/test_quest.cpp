#include <gtest/gtest.h>

#include <random>
#include <set>

#include "clusterattn/quest.hpp"
#include "oracles.hpp"

using namespace clusterattn;

namespace {

std::vector<Index> random_assignments(Index n, Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Index> a(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) a[i] = i < c ? i : static_cast<Index>(rng() % static_cast<std::uint64_t>(c));
  return a;
}

ClusterEnvelope<float> hand_envelope() {
  ClusterEnvelope<float> env;
  env.max_vec.resize(1, 2);
  env.min_vec.resize(1, 2);
  env.max_vec << 2, 5;
  env.min_vec << -1, -3;
  return env;
}

}  // namespace

TEST(Envelope, SingletonClusters) {
  const Tensor k = oracle::random_matrix(6, 4, 1);
  const std::vector<Index> a = {0, 1, 2, 3, 4, 5};
  const auto env = build_envelopes(k, a, 6);
  EXPECT_EQ(env.max_vec, k);
  EXPECT_EQ(env.min_vec, k);
}

TEST(Envelope, HandCase) {
  Tensor k(2, 2);
  k << 1, -2, 3, 0;
  const std::vector<Index> a = {0, 0};
  const auto env = build_envelopes(k, a, 1);
  EXPECT_EQ(env.max_vec(0, 0), 3);
  EXPECT_EQ(env.max_vec(0, 1), 0);
  EXPECT_EQ(env.min_vec(0, 0), 1);
  EXPECT_EQ(env.min_vec(0, 1), -2);
}

TEST(Envelope, MatchesMemberLoopAndBoundsMembers) {
  const Tensor k = oracle::random_matrix(300, 12, 2);
  const auto a = random_assignments(300, 17, 3);
  const auto env = build_envelopes(k, a, 17);
  const auto members = oracle::members_of(a, 17);
  for (Index c = 0; c < 17; ++c) {
    for (Index d = 0; d < 12; ++d) {
      float hi = -INFINITY, lo = INFINITY;
      for (Index m : members[c]) {
        hi = std::max(hi, k(m, d));
        lo = std::min(lo, k(m, d));
        EXPECT_LE(k(m, d), env.max_vec(c, d));
        EXPECT_GE(k(m, d), env.min_vec(c, d));
      }
      EXPECT_EQ(env.max_vec(c, d), hi);
      EXPECT_EQ(env.min_vec(c, d), lo);
      EXPECT_GE(env.max_vec(c, d), env.min_vec(c, d));
    }
  }
}

TEST(Envelope, RejectsBadAssignment) {
  const Tensor k = oracle::random_matrix(3, 2, 1);
  const std::vector<Index> a = {0, 2, 1};
  EXPECT_THROW(build_envelopes(k, a, 2), ParameterError);
  const std::vector<Index> short_a = {0, 1};
  EXPECT_THROW(build_envelopes(k, short_a, 2), DimensionError);
}

TEST(QuestScalar, PositiveQueryPicksMax) {
  RowVector<float> q(2);
  q << 1, 0;
  EXPECT_EQ(quest_scalar(q, hand_envelope(), 0), 2.0f);
}

TEST(QuestScalar, NegativeQueryPicksMin) {
  RowVector<float> q(2);
  q << -1, 0;
  EXPECT_EQ(quest_scalar(q, hand_envelope(), 0), 1.0f);
}

TEST(QuestScalar, UpperBoundsEveryMember) {
  const Tensor k = oracle::random_matrix(500, 16, 4);
  const auto a = random_assignments(500, 20, 5);
  const auto env = build_envelopes(k, a, 20);
  const Tensor q = oracle::random_matrix(50, 16, 6, 2.0);
  for (Index i = 0; i < q.rows(); ++i) {
    for (Index m = 0; m < k.rows(); ++m) {
      EXPECT_LE(oracle::dot(q, i, k, m), quest_scalar(q.row(i), env, a[m]) + 1e-4);
    }
  }
}

TEST(QuestScalar, MatchesMemberOracle) {
  const Tensor k = oracle::random_matrix(200, 8, 7);
  const auto a = random_assignments(200, 9, 8);
  const auto env = build_envelopes(k, a, 9);
  const auto members = oracle::members_of(a, 9);
  const Tensor q = oracle::random_matrix(10, 8, 9);
  for (Index i = 0; i < 10; ++i) {
    for (Index c = 0; c < 9; ++c) {
      EXPECT_NEAR(quest_scalar(q.row(i), env, c), oracle::quest_from_members(q, i, k, members[c]), 1e-4);
    }
  }
}

TEST(QuestScalar, SingletonEqualsDotProduct) {
  const Tensor k = oracle::random_matrix(5, 32, 1);
  const std::vector<Index> a = {0, 1, 2, 3, 4};
  const auto env = build_envelopes(k, a, 5);
  const Tensor q = oracle::random_matrix(3, 32, 2);
  for (Index i = 0; i < 3; ++i) {
    for (Index c = 0; c < 5; ++c) {
      float dot = 0.0f;
      for (Index d = 0; d < 32; ++d) dot += q(i, d) * k(c, d);
      EXPECT_EQ(quest_scalar(q.row(i), env, c), dot);
    }
  }
}

TEST(QuestScalar, PositivelyHomogeneous) {
  const Tensor k = oracle::random_matrix(300, 16, 1);
  const auto a = random_assignments(300, 30, 2);
  const auto env = build_envelopes(k, a, 30);
  const Tensor q = oracle::random_matrix(20, 16, 3);
  for (float alpha : {0.01f, 0.5f, 3.0f, 40.0f}) {
    const Tensor qa = q * alpha;
    const Tensor s = quest_scores_scalar(q, env), sa = quest_scores_scalar(qa, env);
    for (Index i = 0; i < 20; ++i) {
      for (Index c = 0; c < 30; ++c) EXPECT_NEAR(sa(i, c), alpha * s(i, c), 1e-5 * std::abs(alpha * s(i, c)) + 1e-6);
      std::vector<double> r(s.row(i).data(), s.row(i).data() + 30), ra(sa.row(i).data(), sa.row(i).data() + 30);
      // Ranking agreement on the well-separated part of the row.
      const auto top = oracle::argsort_desc(r), top_a = oracle::argsort_desc(ra);
      EXPECT_EQ(top.front(), top_a.front());
    }
  }
}

TEST(TensorQuest, ZeroQueriesGiveZeroScores) {
  const Tensor k = oracle::random_matrix(40, 8, 1);
  const auto env = build_envelopes(k, random_assignments(40, 5, 2), 5);
  EXPECT_TRUE(tensor_quest(Tensor::Zero(3, 8), env).isZero(0));
}

TEST(TensorQuest, EqualsScalarLoop) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const Index g = 1 + static_cast<Index>(rng() % 8), c = 1 + static_cast<Index>(rng() % 16);
    const Index d = 1 + static_cast<Index>(rng() % 32);
    const Index n = c + static_cast<Index>(rng() % 100);
    const Tensor k = oracle::random_matrix(n, d, rng());
    const auto a = random_assignments(n, c, rng());
    const auto env = build_envelopes(k, a, c);
    const Tensor q = oracle::random_matrix(g, d, rng(), 2.0);
    const Tensor fast = tensor_quest(q, env);
    const auto members = oracle::members_of(a, c);
    for (Index i = 0; i < g; ++i) {
      for (Index j = 0; j < c; ++j) {
        EXPECT_NEAR(fast(i, j), quest_scalar(q.row(i), env, j), 1e-4);
        EXPECT_NEAR(fast(i, j), oracle::quest_from_members(q, i, k, members[j]), 1e-4);
      }
    }
  }
}

TEST(TensorQuest, NonNegativeInputsReduceToOneGemm) {
  const Tensor k = oracle::random_matrix(100, 16, 1).cwiseAbs();
  const auto env = build_envelopes(k, random_assignments(100, 10, 2), 10);
  const Tensor q = oracle::random_matrix(7, 16, 3).cwiseAbs();
  EXPECT_EQ(tensor_quest(q, env), matmul(q, env.max_vec.transpose()));
}

TEST(TensorQuest, ShapeMismatch) {
  const Tensor k = oracle::random_matrix(10, 4, 1);
  const auto env = build_envelopes(k, random_assignments(10, 2, 2), 2);
  EXPECT_THROW(tensor_quest(Tensor::Zero(2, 5), env), DimensionError);
}

TEST(TensorQuest, ClampedCenterVariantIsNotABound) {
  // One cluster whose members straddle zero: the clamped-center score misses
  // the mass on the other side, the envelope score does not.
  Tensor k(2, 1);
  k << -4, 2;
  const std::vector<Index> a = {0, 0};
  const auto env = build_envelopes(k, a, 1);
  Tensor center(1, 1), q(1, 1);
  center << -1;
  q << 1;
  EXPECT_LT(tensor_quest_clamped_centers(q, center)(0, 0), 2.0f);
  EXPECT_EQ(tensor_quest(q, env)(0, 0), 2.0f);
}

TEST(MeanCenterScores, IsPlainProduct) {
  const Tensor q = oracle::random_matrix(4, 6, 1), c = oracle::random_matrix(9, 6, 2);
  const Tensor s = mean_center_scores(q, c);
  const auto ref = oracle::matmul(q, c.transpose());
  EXPECT_LE((s.cast<double>() - ref).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(SelectTopK, AllClustersGiveFullDensity) {
  const Tensor s = oracle::random_matrix(5, 8, 1);
  const std::vector<Index> counts = {3, 1, 4, 1, 5, 9, 2, 6};
  const auto sel = select_topk_clusters(s, 8, counts);
  EXPECT_DOUBLE_EQ(sel.density, 1.0);
  for (const auto& row : sel.selected) {
    EXPECT_EQ(std::set<Index>(row.begin(), row.end()).size(), 8u);
  }
}

TEST(SelectTopK, HandCase) {
  Tensor s(1, 3);
  s << 3, 1, 2;
  const std::vector<Index> counts = {1, 1, 1};
  EXPECT_EQ(select_topk_clusters(s, 2, counts).selected[0], (std::vector<Index>{0, 2}));
}

TEST(SelectTopK, TiesGoToLowerIndex) {
  Tensor s(1, 4);
  s << 1, 2, 2, 1;
  const std::vector<Index> counts = {1, 1, 1, 1};
  EXPECT_EQ(select_topk_clusters(s, 3, counts).selected[0], (std::vector<Index>{1, 2, 0}));
}

TEST(SelectTopK, MatchesSortAndDensityOracle) {
  const Tensor s = oracle::random_matrix(12, 40, 3);
  std::vector<Index> counts(40);
  for (Index c = 0; c < 40; ++c) counts[c] = 1 + (c * 7) % 11;
  const Index total = std::accumulate(counts.begin(), counts.end(), Index{0});
  const auto sel = select_topk_clusters(s, 9, counts);
  double density = 0.0;
  for (Index g = 0; g < 12; ++g) {
    const auto want = oracle::argsort_desc(std::vector<double>(s.row(g).data(), s.row(g).data() + 40));
    EXPECT_EQ(sel.selected[g], std::vector<Index>(want.begin(), want.begin() + 9));
    Index covered = 0;
    for (Index c : sel.selected[g]) covered += counts[c];
    density += static_cast<double>(covered) / total;
  }
  EXPECT_NEAR(sel.density, density / 12, 1e-12);
  EXPECT_GT(sel.density, 0.0);
  EXPECT_LE(sel.density, 1.0);
}

TEST(SelectTopK, SelectionGrowsMonotonically) {
  const Tensor s = oracle::random_matrix(6, 25, 4);
  const std::vector<Index> counts(25, 2);
  for (Index k = 1; k < 25; ++k) {
    const auto small = select_topk_clusters(s, k, counts), big = select_topk_clusters(s, k + 1, counts);
    for (Index g = 0; g < 6; ++g) {
      std::set<Index> b(big.selected[g].begin(), big.selected[g].end());
      for (Index c : small.selected[g]) EXPECT_TRUE(b.count(c));
    }
  }
}

TEST(SelectTopK, RejectsOutOfRange) {
  const Tensor s = oracle::random_matrix(2, 3, 1);
  const std::vector<Index> counts = {1, 1, 1};
  EXPECT_THROW(select_topk_clusters(s, 0, counts), ParameterError);
  EXPECT_THROW(select_topk_clusters(s, 4, counts), ParameterError);
}
