#pragma once

// Building blocks of the U-Net: forward and backward passes over NCHW
// tensors. Internal to the library.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "octseg/tensor.hpp"

namespace octseg::layers {

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatrixRM<T>>;

// Upper bound on im2col buffer entries; batches are processed in chunks of
// whole samples that fit.
inline constexpr std::int64_t kColumnBudget = std::int64_t{1} << 23;

inline std::int64_t chunk_samples(std::int64_t rows, std::int64_t pixels, std::int64_t batch) {
  return std::clamp<std::int64_t>(kColumnBudget / std::max<std::int64_t>(1, rows * pixels), 1, batch);
}

/// Unfolds samples [n0, n0 + nb) of `x` into a (C*k*k) x (nb*H*W) matrix for
/// a stride-1 "same" convolution.
template <typename T>
void im2col(const Tensor<T>& x, std::int64_t n0, std::int64_t nb, int k, std::vector<T>& col) {
  const auto C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto HW = H * W;
  const auto cols = nb * HW;
  const int pad = k / 2;
  col.assign(static_cast<std::size_t>(C * k * k * cols), T{0});
  for (std::int64_t c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col.data() + ((c * k + ky) * k + kx) * cols;
        const std::int64_t dx = kx - pad;
        const std::int64_t x_lo = std::max<std::int64_t>(0, -dx);
        const std::int64_t x_hi = std::min<std::int64_t>(W, W - dx);
        for (std::int64_t n = 0; n < nb; ++n) {
          const T* src = x.data() + ((n0 + n) * C + c) * HW;
          for (std::int64_t y = 0; y < H; ++y) {
            const std::int64_t sy = y + ky - pad;
            if (sy < 0 || sy >= H || x_lo >= x_hi) continue;
            std::copy(src + sy * W + x_lo + dx, src + sy * W + x_hi + dx, row + n * HW + y * W + x_lo);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: accumulates columns back into samples [n0, n0 + nb) of `dx`.
template <typename T>
void col2im_add(const T* col, std::int64_t n0, std::int64_t nb, int k, Tensor<T>& dx) {
  const auto C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  const auto HW = H * W;
  const auto cols = nb * HW;
  const int pad = k / 2;
  for (std::int64_t c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * cols;
        const std::int64_t ddx = kx - pad;
        const std::int64_t x_lo = std::max<std::int64_t>(0, -ddx);
        const std::int64_t x_hi = std::min<std::int64_t>(W, W - ddx);
        for (std::int64_t n = 0; n < nb; ++n) {
          T* dst = dx.data() + ((n0 + n) * C + c) * HW;
          for (std::int64_t y = 0; y < H; ++y) {
            const std::int64_t sy = y + ky - pad;
            if (sy < 0 || sy >= H) continue;
            const T* s = row + n * HW + y * W;
            T* d = dst + sy * W + ddx;
            for (std::int64_t xx = x_lo; xx < x_hi; ++xx) d[xx] += s[xx];
          }
        }
      }
    }
  }
}

/// Stride-1 same-padded convolution. `weight` is [cout, cin, k, k];
/// `bias` may be null.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const T* weight, const T* bias, std::int64_t cout, int k) {
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto HW = H * W;
  const auto K = C * k * k;
  Tensor<T> y({N, cout, H, W});
  ConstMapRM<T> w(weight, cout, K);
  // Reused across calls: the buffers are large and reallocation dominates small layers.
  thread_local std::vector<T> col;
  thread_local MatrixRM<T> out;
  const auto step = chunk_samples(K, HW, N);
  for (std::int64_t n0 = 0; n0 < N; n0 += step) {
    const auto nb = std::min(step, N - n0);
    im2col(x, n0, nb, k, col);
    ConstMapRM<T> cm(col.data(), K, nb * HW);
    out.noalias() = w * cm;
    for (std::int64_t n = 0; n < nb; ++n) {
      for (std::int64_t o = 0; o < cout; ++o) {
        const T b = bias ? bias[o] : T{0};
        const T* src = out.data() + o * nb * HW + n * HW;
        T* dst = y.data() + ((n0 + n) * cout + o) * HW;
        for (std::int64_t p = 0; p < HW; ++p) dst[p] = src[p] + b;
      }
    }
  }
  return y;
}

/// Accumulates weight/bias gradients into `dweight`/`dbias` (bias may be
/// null) and returns the input gradient when `want_dx`.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const T* weight, std::int64_t cout, int k, const Tensor<T>& dy,
                          T* dweight, T* dbias, bool want_dx) {
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto HW = H * W;
  const auto K = C * k * k;
  ConstMapRM<T> w(weight, cout, K);
  MapRM<T> dw(dweight, cout, K);
  Tensor<T> dx;
  if (want_dx) dx = Tensor<T>(x.shape(), T{0});
  thread_local std::vector<T> col;
  thread_local MatrixRM<T> g;
  thread_local MatrixRM<T> dcol_m;
  const auto step = chunk_samples(K, HW, N);
  for (std::int64_t n0 = 0; n0 < N; n0 += step) {
    const auto nb = std::min(step, N - n0);
    g.resize(cout, nb * HW);
    for (std::int64_t n = 0; n < nb; ++n) {
      for (std::int64_t o = 0; o < cout; ++o) {
        const T* src = dy.data() + ((n0 + n) * cout + o) * HW;
        std::copy(src, src + HW, g.data() + o * nb * HW + n * HW);
      }
    }
    if (dbias) {
      for (std::int64_t o = 0; o < cout; ++o) dbias[o] += g.row(o).sum();
    }
    im2col(x, n0, nb, k, col);
    ConstMapRM<T> cm(col.data(), K, nb * HW);
    dw.noalias() += g * cm.transpose();
    if (want_dx) {
      dcol_m.noalias() = w.transpose() * g;
      col2im_add(dcol_m.data(), n0, nb, k, dx);
    }
  }
  return dx;
}

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

template <typename T>
struct BatchNormTape {
  Tensor<T> xhat;
  std::vector<T> invstd;
  std::vector<double> batch_mean;
  std::vector<double> batch_var;  // biased
};

/// Batch normalization. In training mode statistics come from the batch and
/// are recorded in `tape`; otherwise running statistics are used.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const T* gamma, const T* beta, const T* running_mean,
                            const T* running_var, bool training, BatchNormTape<T>* tape) {
  const auto N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  if (tape) {
    tape->xhat = Tensor<T>(x.shape());
    tape->invstd.assign(static_cast<std::size_t>(C), T{0});
    tape->batch_mean.assign(static_cast<std::size_t>(C), 0.0);
    tape->batch_var.assign(static_cast<std::size_t>(C), 0.0);
  }
  const double count = static_cast<double>(N * HW);
  for (std::int64_t c = 0; c < C; ++c) {
    double mean;
    double var;
    if (training) {
      double sum = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) sum += static_cast<double>(p[i]);
      }
      mean = sum / count;
      double sq = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) {
          const double d = static_cast<double>(p[i]) - mean;
          sq += d * d;
        }
      }
      var = sq / count;
    } else {
      mean = static_cast<double>(running_mean[c]);
      var = static_cast<double>(running_var[c]);
    }
    const T m = static_cast<T>(mean);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + kBnEps));
    const T g = gamma[c];
    const T b = beta[c];
    for (std::int64_t n = 0; n < N; ++n) {
      const T* p = x.data() + (n * C + c) * HW;
      T* q = y.data() + (n * C + c) * HW;
      T* h = tape ? tape->xhat.data() + (n * C + c) * HW : nullptr;
      for (std::int64_t i = 0; i < HW; ++i) {
        const T xh = (p[i] - m) * inv;
        if (h) h[i] = xh;
        q[i] = g * xh + b;
      }
    }
    if (tape) {
      tape->invstd[static_cast<std::size_t>(c)] = inv;
      tape->batch_mean[static_cast<std::size_t>(c)] = mean;
      tape->batch_var[static_cast<std::size_t>(c)] = var;
    }
  }
  return y;
}

/// Training-mode batch-norm backward. Accumulates dgamma/dbeta and returns dx.
template <typename T>
Tensor<T> batchnorm_backward(const BatchNormTape<T>& tape, const T* gamma, const Tensor<T>& dy, T* dgamma,
                             T* dbeta) {
  const auto N = dy.dim(0), C = dy.dim(1), HW = dy.dim(2) * dy.dim(3);
  const double count = static_cast<double>(N * HW);
  Tensor<T> dx(dy.shape());
  for (std::int64_t c = 0; c < C; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const T* g = dy.data() + (n * C + c) * HW;
      const T* h = tape.xhat.data() + (n * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) {
        sum_dy += static_cast<double>(g[i]);
        sum_dy_xhat += static_cast<double>(g[i]) * static_cast<double>(h[i]);
      }
    }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
    const T scale = gamma[c] * tape.invstd[static_cast<std::size_t>(c)] / static_cast<T>(count);
    const T mean_dy = static_cast<T>(sum_dy);
    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat);
    for (std::int64_t n = 0; n < N; ++n) {
      const T* g = dy.data() + (n * C + c) * HW;
      const T* h = tape.xhat.data() + (n * C + c) * HW;
      T* d = dx.data() + (n * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) {
        d[i] = scale * (static_cast<T>(count) * g[i] - mean_dy - h[i] * mean_dy_xhat);
      }
    }
  }
  return dx;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.values()) v = v > T{0} ? v : T{0};
}

/// Zeroes gradient entries where the rectified output was not positive.
template <typename T>
void relu_backward_inplace(const Tensor<T>& out, Tensor<T>& grad) {
  const auto o = out.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(o[i] > T{0})) g[i] = T{0};
  }
}

/// 2x2 max-pool, stride 2. `argmax` records the winning offset (0..3,
/// first maximum wins) when non-null.
template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<std::uint8_t>* argmax) {
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto h = H / 2, w = W / 2;
  Tensor<T> y({N, C, h, w});
  if (argmax) argmax->assign(y.size(), 0);
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = x.data() + nc * H * W;
    T* dst = y.data() + nc * h * w;
    for (std::int64_t i = 0; i < h; ++i) {
      for (std::int64_t j = 0; j < w; ++j) {
        const T* p = src + 2 * i * W + 2 * j;
        const T cand[4] = {p[0], p[1], p[W], p[W + 1]};
        std::uint8_t best = 0;
        for (std::uint8_t q = 1; q < 4; ++q) {
          if (cand[q] > cand[best]) best = q;
        }
        dst[i * w + j] = cand[best];
        if (argmax) (*argmax)[static_cast<std::size_t>(nc * h * w + i * w + j)] = best;
      }
    }
  }
  return y;
}

template <typename T>
void maxpool2_backward_add(const Tensor<T>& dy, const std::vector<std::uint8_t>& argmax, Tensor<T>& dx) {
  const auto N = dy.dim(0), C = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
  const auto W = dx.dim(3);
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* g = dy.data() + nc * h * w;
    T* d = dx.data() + nc * dx.dim(2) * W;
    for (std::int64_t i = 0; i < h; ++i) {
      for (std::int64_t j = 0; j < w; ++j) {
        const auto q = argmax[static_cast<std::size_t>(nc * h * w + i * w + j)];
        d[(2 * i + q / 2) * W + 2 * j + q % 2] += g[i * w + j];
      }
    }
  }
}

/// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& x) {
  const auto N = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({N, C, 2 * h, 2 * w});
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = x.data() + nc * h * w;
    T* dst = y.data() + nc * 4 * h * w;
    for (std::int64_t i = 0; i < 2 * h; ++i) {
      for (std::int64_t j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  const auto N = dy.dim(0), C = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
  Tensor<T> dx({N, C, H / 2, W / 2}, T{0});
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* g = dy.data() + nc * H * W;
    T* d = dx.data() + nc * (H / 2) * (W / 2);
    for (std::int64_t i = 0; i < H; ++i) {
      for (std::int64_t j = 0; j < W; ++j) d[(i / 2) * (W / 2) + j / 2] += g[i * W + j];
    }
  }
  return dx;
}

/// Channel concatenation [a, b].
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const auto N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  Tensor<T> y({N, Ca + Cb, a.dim(2), a.dim(3)});
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy_n(a.data() + n * Ca * HW, Ca * HW, y.data() + n * (Ca + Cb) * HW);
    std::copy_n(b.data() + n * Cb * HW, Cb * HW, y.data() + (n * (Ca + Cb) + Ca) * HW);
  }
  return y;
}

/// Splits a concatenated gradient back into its first `ca` channels and the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, std::int64_t ca) {
  const auto N = dy.dim(0), C = dy.dim(1), H = dy.dim(2), W = dy.dim(3), HW = H * W;
  const auto cb = C - ca;
  Tensor<T> da({N, ca, H, W});
  Tensor<T> db({N, cb, H, W});
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy_n(dy.data() + n * C * HW, ca * HW, da.data() + n * ca * HW);
    std::copy_n(dy.data() + (n * C + ca) * HW, cb * HW, db.data() + n * cb * HW);
  }
  return {std::move(da), std::move(db)};
}

}  // namespace octseg::layers
