#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance runner. None of these call the code they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "dan/gradcheck.hpp"
#include "dan/graph.hpp"
#include "dan/loss.hpp"
#include "dan/metrics.hpp"
#include "test_util.hpp"

namespace oracle {

using namespace dan;
using testutil::Random;

inline TensorD RandomLabels(std::int64_t b, std::int64_t n, Rng& rng) {
  static constexpr double kValues[] = {0.0, 0.5, 1.0};
  TensorD y({b, n});
  for (auto& v : y.data()) v = kValues[rng.uniform_int(std::uint64_t{3})];
  return y;
}

// Written straight from the formula, with the sigmoid and logs composed
// separately rather than fused.
inline double ScalarLoss(const TensorD& logits, const TensorD& labels, const std::vector<double>& w) {
  const auto b = logits.dim(0), n = logits.dim(1);
  double sum = 0.0;
  for (std::int64_t j = 0; j < b; ++j) {
    for (std::int64_t k = 0; k < n; ++k) {
      const double s = 1.0 / (1.0 + std::exp(-logits[j * n + k]));
      const double y = labels[j * n + k];
      sum += w[k] * (-y * std::log(s) - (1.0 - y) * std::log(1.0 - s));
    }
  }
  return sum / static_cast<double>(b);
}

// Mean of a column, computed the obvious way over a copy of the label matrix.
inline std::vector<double> BruteWeights(const TensorD& labels) {
  const auto b = labels.dim(0), n = labels.dim(1);
  std::vector<std::vector<double>> matrix(b, std::vector<double>(n));
  for (std::int64_t j = 0; j < b; ++j)
    for (std::int64_t k = 0; k < n; ++k) matrix[j][k] = labels[j * n + k];
  std::vector<double> w(n);
  for (std::int64_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (std::int64_t j = 0; j < b; ++j) s += matrix[j][k];
    w[k] = 1.0 - s / static_cast<double>(b);
  }
  return w;
}

// Enumerates every distinct threshold t and counts pairs with score >= t
// directly, with no sorting of the pairs themselves.
inline double OracleAp(const std::vector<EvalPair>& pairs) {
  std::set<double, std::greater<>> thresholds;
  double positives = 0;
  for (const auto& p : pairs) {
    thresholds.insert(p.score);
    positives += p.truth;
  }
  double ap = 0, prev_recall = 0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (const auto& p : pairs) {
      if (p.score >= t) (p.truth ? tp : fp) += 1;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

// P(score_pos > score_neg) + 0.5 P(tie) over every positive/negative pair.
inline double OracleAuc(const std::vector<EvalPair>& pairs) {
  double wins = 0, total = 0;
  for (const auto& a : pairs) {
    if (!a.truth) continue;
    for (const auto& b : pairs) {
      if (b.truth) continue;
      wins += a.score > b.score ? 1.0 : (a.score == b.score ? 0.5 : 0.0);
      total += 1;
    }
  }
  return wins / total;
}

// Scores on a coarse grid so ties are common.
inline std::vector<EvalPair> RandomPairs(Rng& rng, std::size_t n, bool coarse) {
  std::vector<EvalPair> out(n);
  for (auto& p : out) {
    p.score = coarse ? static_cast<double>(rng.uniform_int(std::uint64_t{8})) / 8.0 : rng.uniform();
    p.truth = rng.bernoulli(0.4);
  }
  return out;
}

// Values spaced 0.05 apart in random order so no two pool candidates tie
// within a finite-difference step.
inline TensorD DistinctValues(const Shape& shape, Rng& rng) {
  TensorD t(shape);
  std::vector<double> values(t.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = 0.05 * static_cast<double>(i) - 1.0;
  for (std::size_t i = values.size(); i > 1; --i) std::swap(values[i - 1], values[rng.uniform_int(i)]);
  std::copy(values.begin(), values.end(), t.data().begin());
  return t;
}

// Values at least 0.05 away from zero.
inline TensorD AwayFromZero(const Shape& shape, Rng& rng) {
  TensorD t = Random<double>(shape, rng, 0.05, 1.0);
  for (auto& v : t.data()) {
    if (rng.bernoulli(0.5)) v = -v;
  }
  return t;
}

using Builder = std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)>;

// loss = sum(op(inputs) * r) for a fixed random r; checks every input's
// autodiff gradient against central differences.
inline double CheckOp(const std::vector<TensorD>& inputs, const Builder& build, std::uint64_t seed) {
  Rng rng(seed);
  TensorD r;
  auto loss_of = [&](const std::vector<TensorD>& values, Graph<double>& g, std::vector<NodeId>* leaves) {
    leaves->clear();
    for (const auto& v : values) leaves->push_back(g.Leaf(v, true));
    const NodeId out = build(g, *leaves);
    if (r.empty()) r = Random<double>(g.value(out).shape(), rng);
    return g.Sum(g.Mul(out, g.Leaf(r, false)));
  };
  Graph<double> graph;
  std::vector<NodeId> leaves;
  const NodeId loss = loss_of(inputs, graph, &leaves);
  graph.Backward(loss);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const TensorD& probe) {
      std::vector<TensorD> values = inputs;
      values[i] = probe;
      Graph<double> g;
      std::vector<NodeId> l;
      return g.value(loss_of(values, g, &l))[0];
    };
    const TensorD numeric = FiniteDifferenceGradient<double>(f, inputs[i], 1e-3);
    const TensorD* analytic = graph.grad(leaves[i]);
    Require(analytic != nullptr, ErrorKind::kContract, "leaf without gradient");
    worst = std::max(worst, MaxRelativeError(*analytic, numeric));
  }
  return worst;
}

// Worst relative error over every primitive op at one random geometry.
inline double PrimitiveSweep(std::uint64_t seed) {
  double worst = 0.0;
  Rng rng(seed);
  const int b = static_cast<int>(rng.uniform_int(1, 2));
  const int c = static_cast<int>(rng.uniform_int(1, 3));
  const int h = 2 * static_cast<int>(rng.uniform_int(1, 3));
  const int w = 2 * static_cast<int>(rng.uniform_int(1, 3));
  const int o = static_cast<int>(rng.uniform_int(1, 3));
  const int stride = static_cast<int>(rng.uniform_int(1, 2));
  const int pad = static_cast<int>(rng.uniform_int(0, 1));
  const int d_in = static_cast<int>(rng.uniform_int(1, 6));
  const int d_out = static_cast<int>(rng.uniform_int(1, 5));

  worst = std::max(worst, CheckOp({Random<double>({b, c, h, w}, rng), Random<double>({o, c, 2, 2}, rng),
                                   Random<double>({o}, rng)},
                                  [&](Graph<double>& g, const std::vector<NodeId>& in) {
                                    return g.Conv2d(in[0], in[1], in[2], stride, pad);
                                  },
                                  seed));
  worst = std::max(worst, CheckOp({DistinctValues({b, c, h, w}, rng)},
                                  [](Graph<double>& g, const std::vector<NodeId>& in) { return g.MaxPool2(in[0]); },
                                  seed));
  worst = std::max(worst, CheckOp({AwayFromZero({b, d_in}, rng)},
                                  [](Graph<double>& g, const std::vector<NodeId>& in) { return g.Relu(in[0]); },
                                  seed));
  worst = std::max(worst, CheckOp({Random<double>({b, d_in}, rng, -4, 4)},
                                  [](Graph<double>& g, const std::vector<NodeId>& in) { return g.Sigmoid(in[0]); },
                                  seed));
  worst = std::max(worst, CheckOp({Random<double>({b, d_in}, rng), Random<double>({d_out, d_in}, rng),
                                   Random<double>({d_out}, rng)},
                                  [](Graph<double>& g, const std::vector<NodeId>& in) {
                                    return g.Affine(in[0], in[1], in[2]);
                                  },
                                  seed));
  worst = std::max(worst, CheckOp({Random<double>({b, d_in}, rng)},
                                  [&](Graph<double>& g, const std::vector<NodeId>& in) {
                                    Rng mask(seed);
                                    return g.Dropout(in[0], 0.5, true, mask);
                                  },
                                  seed));
  worst = std::max(worst, CheckOp({Random<double>({b, c, h, w}, rng)},
                                  [](Graph<double>& g, const std::vector<NodeId>& in) { return g.Flatten(in[0]); },
                                  seed));
  worst = std::max(worst, CheckOp({Random<double>({b, d_in}, rng), Random<double>({b, d_in}, rng)},
                                  [](Graph<double>& g, const std::vector<NodeId>& in) {
                                    return g.Add(g.Mul(in[0], in[1]), g.Scale(in[0], -0.5));
                                  },
                                  seed));
  return worst;
}

// Worst relative error of the fused weighted loss at one random size.
inline double LossSweep(std::uint64_t seed) {
  Rng rng(seed);
  const auto b = rng.uniform_int(1, 4), n = rng.uniform_int(1, 6);
  const TensorD y = RandomLabels(b, n, rng);
  const auto w = BatchClassWeights(y);
  const TensorD o = Random<double>({b, n}, rng, -4, 4);
  const auto analytic = WeightedCeLoss<double>(o, y, w).grad;
  const std::function<double(const TensorD&)> f = [&](const TensorD& x) { return WeightedCeLoss<double>(x, y, w).value; };
  return MaxRelativeError(analytic, FiniteDifferenceGradient(f, o, 1e-3), 1e-8);
}

}  // namespace oracle
