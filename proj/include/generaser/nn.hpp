#pragma once

#include <cmath>
#include <cstddef>

namespace generaser::nn {

// Dense kernels for the denoiser. Everything is row-major and written as
// plain loops with contiguous inner dimensions so the compiler can
// vectorize them; no BLAS dependency.

// out[M,N] = a[M,K] * b[K,N]   (+= when acc)
template <typename S>
void matmul(S* __restrict__ out, const S* __restrict__ a, const S* __restrict__ b,
            int M, int K, int N, bool acc = false) {
    for (int i = 0; i < M; ++i) {
        S* __restrict__ orow = out + static_cast<std::size_t>(i) * N;
        if (!acc) {
            for (int j = 0; j < N; ++j) orow[j] = S(0);
        }
        const S* __restrict__ arow = a + static_cast<std::size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const S av = arow[k];
            const S* __restrict__ brow = b + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) orow[j] += av * brow[j];
        }
    }
}

// out[K,N] = a[M,K]^T * b[M,N]   (+= when acc); used for weight gradients.
template <typename S>
void matmul_at(S* __restrict__ out, const S* __restrict__ a, const S* __restrict__ b,
               int M, int K, int N, bool acc = false) {
    if (!acc) {
        for (std::size_t i = 0; i < static_cast<std::size_t>(K) * N; ++i) out[i] = S(0);
    }
    for (int m = 0; m < M; ++m) {
        const S* __restrict__ arow = a + static_cast<std::size_t>(m) * K;
        const S* __restrict__ brow = b + static_cast<std::size_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            const S av = arow[k];
            S* __restrict__ orow = out + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) orow[j] += av * brow[j];
        }
    }
}

// out[N,M] = a[M,N]^T
template <typename S>
void transpose(S* __restrict__ out, const S* __restrict__ a, int M, int N) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) out[static_cast<std::size_t>(j) * M + i] = a[static_cast<std::size_t>(i) * N + j];
    }
}

template <typename S>
void add_bias(S* __restrict__ out, const S* __restrict__ bias, int M, int N) {
    for (int i = 0; i < M; ++i) {
        S* __restrict__ row = out + static_cast<std::size_t>(i) * N;
        for (int j = 0; j < N; ++j) row[j] += bias[j];
    }
}

// db[N] += column sums of d[M,N]
template <typename S>
void bias_grad(S* __restrict__ db, const S* __restrict__ d, int M, int N, bool acc = false) {
    if (!acc) {
        for (int j = 0; j < N; ++j) db[j] = S(0);
    }
    for (int i = 0; i < M; ++i) {
        const S* __restrict__ row = d + static_cast<std::size_t>(i) * N;
        for (int j = 0; j < N; ++j) db[j] += row[j];
    }
}

// y = gamma * (x - mean)/sqrt(var + eps) + beta, row-wise over D.
// Saves 1/sigma per row for the backward pass (population variance).
template <typename S>
void layernorm_fwd(S* __restrict__ y, S* __restrict__ rstd, S* __restrict__ mean,
                   const S* __restrict__ x, const S* __restrict__ gamma, const S* __restrict__ beta,
                   int M, int D, S eps) {
    for (int i = 0; i < M; ++i) {
        const S* __restrict__ xr = x + static_cast<std::size_t>(i) * D;
        S* __restrict__ yr = y + static_cast<std::size_t>(i) * D;
        S mu = S(0);
        for (int j = 0; j < D; ++j) mu += xr[j];
        mu /= S(D);
        S var = S(0);
        for (int j = 0; j < D; ++j) {
            const S d = xr[j] - mu;
            var += d * d;
        }
        var /= S(D);
        const S rs = S(1) / std::sqrt(var + eps);
        mean[i] = mu;
        rstd[i] = rs;
        for (int j = 0; j < D; ++j) yr[j] = gamma[j] * ((xr[j] - mu) * rs) + beta[j];
    }
}

template <typename S>
void layernorm_bwd(S* __restrict__ dx, S* __restrict__ dgamma, S* __restrict__ dbeta,
                   const S* __restrict__ dy, const S* __restrict__ x,
                   const S* __restrict__ gamma, const S* __restrict__ rstd, const S* __restrict__ mean,
                   int M, int D, bool acc_param_grads = false) {
    if (!acc_param_grads) {
        for (int j = 0; j < D; ++j) {
            dgamma[j] = S(0);
            dbeta[j] = S(0);
        }
    }
    for (int i = 0; i < M; ++i) {
        const S* __restrict__ dyr = dy + static_cast<std::size_t>(i) * D;
        const S* __restrict__ xr = x + static_cast<std::size_t>(i) * D;
        S* __restrict__ dxr = dx + static_cast<std::size_t>(i) * D;
        const S mu = mean[i];
        const S rs = rstd[i];
        S sum_dxhat = S(0);
        S sum_dxhat_xhat = S(0);
        for (int j = 0; j < D; ++j) {
            const S xhat = (xr[j] - mu) * rs;
            const S dxhat = dyr[j] * gamma[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgamma[j] += dyr[j] * xhat;
            dbeta[j] += dyr[j];
        }
        const S inv_d = S(1) / S(D);
        for (int j = 0; j < D; ++j) {
            const S xhat = (xr[j] - mu) * rs;
            const S dxhat = dyr[j] * gamma[j];
            dxr[j] = rs * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
        }
    }
}

// Row-wise softmax with max subtraction; in-place allowed (y may alias x).
template <typename S>
void softmax_rows(S* __restrict__ y, const S* __restrict__ x, int M, int N) {
    for (int i = 0; i < M; ++i) {
        const S* __restrict__ xr = x + static_cast<std::size_t>(i) * N;
        S* __restrict__ yr = y + static_cast<std::size_t>(i) * N;
        S mx = xr[0];
        for (int j = 1; j < N; ++j) mx = std::max(mx, xr[j]);
        S sum = S(0);
        for (int j = 0; j < N; ++j) {
            const S e = std::exp(xr[j] - mx);
            yr[j] = e;
            sum += e;
        }
        const S inv = S(1) / sum;
        for (int j = 0; j < N; ++j) yr[j] *= inv;
    }
}

// dx = a .* (dy - rowsum(dy .* a)) where a = softmax(x); dx may alias dy.
template <typename S>
void softmax_rows_bwd(S* dx, const S* dy, const S* __restrict__ a, int M, int N) {
    for (int i = 0; i < M; ++i) {
        const S* dyr = dy + static_cast<std::size_t>(i) * N;
        const S* __restrict__ ar = a + static_cast<std::size_t>(i) * N;
        S* dxr = dx + static_cast<std::size_t>(i) * N;
        S dot = S(0);
        for (int j = 0; j < N; ++j) dot += dyr[j] * ar[j];
        for (int j = 0; j < N; ++j) dxr[j] = ar[j] * (dyr[j] - dot);
    }
}

// tanh-form GELU; stores tanh(u) so the backward pass needs no libm calls.
template <typename S>
void gelu_fwd(S* __restrict__ y, S* __restrict__ tanh_u, const S* __restrict__ x, std::size_t n) {
    constexpr S k0 = S(0.7978845608028654);  // sqrt(2/pi)
    constexpr S k1 = S(0.044715);
    for (std::size_t i = 0; i < n; ++i) {
        const S xi = x[i];
        const S u = k0 * (xi + k1 * xi * xi * xi);
        const S t = std::tanh(u);
        tanh_u[i] = t;
        y[i] = S(0.5) * xi * (S(1) + t);
    }
}

template <typename S>
void gelu_bwd(S* __restrict__ dx, const S* __restrict__ dy, const S* __restrict__ x,
              const S* __restrict__ tanh_u, std::size_t n) {
    constexpr S k0 = S(0.7978845608028654);
    constexpr S k1 = S(0.044715);
    for (std::size_t i = 0; i < n; ++i) {
        const S xi = x[i];
        const S t = tanh_u[i];
        const S sech2 = S(1) - t * t;
        const S du = k0 * (S(1) + S(3) * k1 * xi * xi);
        dx[i] = dy[i] * (S(0.5) * (S(1) + t) + S(0.5) * xi * sech2 * du);
    }
}

// SiLU x*sigmoid(x); stores sigmoid(x) for the backward pass.
template <typename S>
void silu_fwd(S* __restrict__ y, S* __restrict__ sig, const S* __restrict__ x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const S s = S(1) / (S(1) + std::exp(-x[i]));
        sig[i] = s;
        y[i] = x[i] * s;
    }
}

// dx may alias dy.
template <typename S>
void silu_bwd(S* dx, const S* dy, const S* __restrict__ x, const S* __restrict__ sig, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const S s = sig[i];
        dx[i] = dy[i] * (s + x[i] * s * (S(1) - s));
    }
}

template <typename S>
void axpy(S* __restrict__ y, S alpha, const S* __restrict__ x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename S>
void scale(S* __restrict__ y, S alpha, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] *= alpha;
}

}  // namespace generaser::nn
