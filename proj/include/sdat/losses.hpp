#pragma once

#include <span>
#include <string>
#include <vector>

#include "sdat/tape.hpp"

namespace sdat {

// Which loss components get the sharpness-aware wrapper.
enum class SmoothingMode { kNone, kTask, kAdv, kAll };

SmoothingMode parse_smoothing_mode(const std::string& s);
std::string to_string(SmoothingMode m);

// Mean label-smoothed cross entropy over the batch. Targets put 1 - alpha on
// the true class and alpha / (k - 1) on each other class; alpha = 0 is plain
// cross entropy.
template <class S>
ValueId cross_entropy_graph(Tape<S>& tape, ValueId logits, std::span<const int> labels,
                            double alpha = 0.0) {
  const auto& node = tape.node(logits);
  const int n = node.rows;
  const int k = node.cols;
  if (n == 0 || labels.empty()) throw TapeError("cross_entropy: empty batch");
  if (static_cast<int>(labels.size()) != n)
    throw TapeError("cross_entropy: label count does not match batch");
  if (alpha < 0.0 || alpha >= 1.0) throw TapeError("cross_entropy: alpha must be in [0, 1)");
  Tensor q = Tensor::zeros({n, k});
  const double off = alpha / (k - 1);
  for (int r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || y >= k) throw TapeError("cross_entropy: label out of range");
    for (int c = 0; c < k; ++c) q.at(r, c) = (c == y) ? 1.0 - alpha : off;
  }
  const ValueId weighted = tape.mul(tape.constant(q), tape.log_softmax(logits));
  return tape.scale(tape.sum_all(weighted), -1.0 / n);
}

// Tractable adversarial discrepancy: mean log d_src + mean log(1 - d_tgt).
// Always <= 0; equals 2 log(1/2) when every output is 0.5. The discriminator
// ascends this and the feature extractor descends it through the GRL.
double domain_discrepancy(std::span<const double> d_src, std::span<const double> d_tgt);

// Fraction of discriminator outputs on the correct side of 0.5 with domain
// labels source = 1, target = 0. Exactly 0.5 counts as a target prediction.
double domain_accuracy(std::span<const double> d_src, std::span<const double> d_tgt);

}  // namespace sdat
