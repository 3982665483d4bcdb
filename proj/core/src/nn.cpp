#include "fb/nn.hpp"

#include <algorithm>
#include <cmath>

namespace fb {

void softmax_row(const float *x, float *y, int n, float inv_tau) {
    float m = x[0];
    for (int j = 1; j < n; ++j) m = std::max(m, x[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
        float e = std::exp((x[j] - m) * inv_tau);
        y[j] = e;
        z += e;
    }
    float inv_z = static_cast<float>(1.0 / z);
    for (int j = 0; j < n; ++j) y[j] *= inv_z;
}

double log_sum_exp_row(const float *x, int n) {
    float m = x[0];
    for (int j = 1; j < n; ++j) m = std::max(m, x[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(static_cast<double>(x[j]) - m);
    return static_cast<double>(m) + std::log(z);
}

void matmul_acc(const float *a, const float *b, float *out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        float *orow = &out[static_cast<size_t>(i) * n];
        for (int p = 0; p < k; ++p) {
            float av = a[static_cast<size_t>(i) * k + p];
            if (av == 0.0f) continue;
            const float *brow = &b[static_cast<size_t>(p) * n];
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const float *a, const float *b, float *out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float *arow = &a[static_cast<size_t>(i) * k];
        float *orow = &out[static_cast<size_t>(i) * n];
        for (int j = 0; j < n; ++j) {
            const float *brow = &b[static_cast<size_t>(j) * k];
            float acc = 0.0f;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            orow[j] = acc;
        }
    }
}

void conv2d_fwd(const Tensor &x, const Tensor &w, const Tensor &bias, int stride, int pad,
                Tensor &out) {
    int h = x.shape[0], wd = x.shape[1], cin = x.shape[2];
    int kh = w.shape[0], kw = w.shape[1], cout = w.shape[3];
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    require(w.shape[2] == cin, "conv2d_fwd: channel mismatch");
    out = Tensor({ho, wo, cout});
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            float *orow = &out.at(oy, ox, 0);
            for (int c = 0; c < cout; ++c) orow[c] = bias.data[c];
            for (int ky = 0; ky < kh; ++ky) {
                int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= wd) continue;
                    for (int ci = 0; ci < cin; ++ci) {
                        float xv = x.at(iy, ix, ci);
                        if (xv == 0.0f) continue;
                        const float *wrow = &w.data[((static_cast<size_t>(ky) * kw + kx) * cin + ci) * cout];
                        for (int c = 0; c < cout; ++c) orow[c] += xv * wrow[c];
                    }
                }
            }
        }
    }
}

void layer_norm_row(float *x, const float *gamma, const float *beta, int n, float eps) {
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += x[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
        double d = x[j] - mu;
        var += d * d;
    }
    var /= n;
    float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
    for (int j = 0; j < n; ++j) {
        x[j] = gamma[j] * ((x[j] - static_cast<float>(mu)) * inv) + beta[j];
    }
}

}  // namespace fb
