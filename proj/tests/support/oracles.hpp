#pragma once

// Independent reference implementations used to cross-check the library.
// Deliberately naive: plain loops, no shared code with src/.

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <vector>

#include "octseg/tensor.hpp"

namespace oracle {

struct Counts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts confusion(const std::vector<int>& pred, const std::vector<int>& gt) {
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && gt[i] == 1) ++c.tp;
    else if (pred[i] == 1 && gt[i] == 0) ++c.fp;
    else if (pred[i] == 0 && gt[i] == 1) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct Scores {
  double dsc, precision, recall;
};

inline Scores scores(const Counts& c) {
  if (c.tp == 0 && c.fp == 0 && c.fn == 0) return {1.0, 1.0, 1.0};
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  return {2 * tp / (2 * tp + fp + fn), tp + fp > 0 ? tp / (tp + fp) : 0.0, tp + fn > 0 ? tp / (tp + fn) : 0.0};
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Textbook cross-entropy through the probability, valid for moderate logits.
inline double bce_pixel(double z, double y) {
  const double p = logistic(z);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

/// Number of 6-connected foreground components of an S x H x W label stack.
inline int count_components(const octseg::Tensor<std::uint8_t>& labels) {
  const auto S = labels.dim(0), H = labels.dim(1), W = labels.dim(2);
  std::vector<char> seen(labels.size(), 0);
  int components = 0;
  for (std::int64_t start = 0; start < static_cast<std::int64_t>(labels.size()); ++start) {
    if (!labels[static_cast<std::size_t>(start)] || seen[static_cast<std::size_t>(start)]) continue;
    ++components;
    std::deque<std::int64_t> queue{start};
    seen[static_cast<std::size_t>(start)] = 1;
    while (!queue.empty()) {
      const auto i = queue.front();
      queue.pop_front();
      const auto s = i / (H * W), y = (i / W) % H, x = i % W;
      const std::array<std::array<std::int64_t, 3>, 6> nb{{{s - 1, y, x}, {s + 1, y, x}, {s, y - 1, x},
                                                           {s, y + 1, x}, {s, y, x - 1}, {s, y, x + 1}}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[0] >= S || n[1] < 0 || n[1] >= H || n[2] < 0 || n[2] >= W) continue;
        const auto j = static_cast<std::size_t>((n[0] * H + n[1]) * W + n[2]);
        if (labels[j] && !seen[j]) {
          seen[j] = 1;
          queue.push_back(static_cast<std::int64_t>(j));
        }
      }
    }
  }
  return components;
}

/// Scalar Adam with bias correction.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double theta, double g, double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return theta - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

/// Direct 2-D "same" convolution, NCHW, weight [cout][cin][k][k].
inline std::vector<double> conv2d(const std::vector<double>& x, int n, int cin, int h, int w,
                                  const std::vector<double>& weight, int cout, int k) {
  std::vector<double> y(static_cast<std::size_t>(n * cout * h * w), 0.0);
  const int pad = k / 2;
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < cout; ++o)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          double acc = 0;
          for (int c = 0; c < cin; ++c)
            for (int u = 0; u < k; ++u)
              for (int v = 0; v < k; ++v) {
                const int ii = i + u - pad, jj = j + v - pad;
                if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                acc += weight[static_cast<std::size_t>(((o * cin + c) * k + u) * k + v)] *
                       x[static_cast<std::size_t>(((b * cin + c) * h + ii) * w + jj)];
              }
          y[static_cast<std::size_t>(((b * cout + o) * h + i) * w + j)] = acc;
        }
  return y;
}

}  // namespace oracle
