#pragma once

#include <cmath>
#include <vector>

#include "angiodiff/nn/gemm.hpp"
#include "angiodiff/nn/graph.hpp"

namespace angiodiff::nn {

// ---------------------------------------------------------------- elementwise

inline NodeP add(Graph& g, NodeP a, NodeP b) {
    if (!(a->val.shape() == b->val.shape())) throw InvalidArgument("add: shape mismatch");
    Tensor out(a->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a->val.data()[i] + b->val.data()[i];
    return g.make(std::move(out), {a, b}, [a, b, n](Node& self) {
        const float* dy = self.grad.data();
        if (a->requires_grad)
            for (int64_t i = 0; i < n; ++i) a->grad.data()[i] += dy[i];
        if (b->requires_grad)
            for (int64_t i = 0; i < n; ++i) b->grad.data()[i] += dy[i];
    });
}

inline NodeP sub(Graph& g, NodeP a, NodeP b) {
    if (!(a->val.shape() == b->val.shape())) throw InvalidArgument("sub: shape mismatch");
    Tensor out(a->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a->val.data()[i] - b->val.data()[i];
    return g.make(std::move(out), {a, b}, [a, b, n](Node& self) {
        const float* dy = self.grad.data();
        if (a->requires_grad)
            for (int64_t i = 0; i < n; ++i) a->grad.data()[i] += dy[i];
        if (b->requires_grad)
            for (int64_t i = 0; i < n; ++i) b->grad.data()[i] -= dy[i];
    });
}

inline NodeP mul(Graph& g, NodeP a, NodeP b) {
    if (!(a->val.shape() == b->val.shape())) throw InvalidArgument("mul: shape mismatch");
    Tensor out(a->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a->val.data()[i] * b->val.data()[i];
    return g.make(std::move(out), {a, b}, [a, b, n](Node& self) {
        const float* dy = self.grad.data();
        if (a->requires_grad)
            for (int64_t i = 0; i < n; ++i) a->grad.data()[i] += dy[i] * b->val.data()[i];
        if (b->requires_grad)
            for (int64_t i = 0; i < n; ++i) b->grad.data()[i] += dy[i] * a->val.data()[i];
    });
}

inline NodeP scale(Graph& g, NodeP a, float s) {
    Tensor out(a->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = s * a->val.data()[i];
    return g.make(std::move(out), {a}, [a, s, n](Node& self) {
        if (!a->requires_grad) return;
        const float* dy = self.grad.data();
        for (int64_t i = 0; i < n; ++i) a->grad.data()[i] += s * dy[i];
    });
}

inline NodeP silu(Graph& g, NodeP x) {
    Tensor out(x->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        const float v = x->val.data()[i];
        out.data()[i] = v / (1.0f + std::exp(-v));
    }
    return g.make(std::move(out), {x}, [x, n](Node& self) {
        if (!x->requires_grad) return;
        const float* dy = self.grad.data();
        for (int64_t i = 0; i < n; ++i) {
            const float v = x->val.data()[i];
            const float s = 1.0f / (1.0f + std::exp(-v));
            x->grad.data()[i] += dy[i] * s * (1.0f + v * (1.0f - s));
        }
    });
}

inline NodeP sigmoid(Graph& g, NodeP x) {
    Tensor out(x->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = 1.0f / (1.0f + std::exp(-x->val.data()[i]));
    return g.make(std::move(out), {x}, [x, n](Node& self) {
        if (!x->requires_grad) return;
        const float* dy = self.grad.data();
        const float* y = self.val.data();
        for (int64_t i = 0; i < n; ++i) x->grad.data()[i] += dy[i] * y[i] * (1.0f - y[i]);
    });
}

inline NodeP leaky_relu(Graph& g, NodeP x, float slope = 0.2f) {
    Tensor out(x->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        const float v = x->val.data()[i];
        out.data()[i] = v > 0 ? v : slope * v;
    }
    return g.make(std::move(out), {x}, [x, slope, n](Node& self) {
        if (!x->requires_grad) return;
        const float* dy = self.grad.data();
        for (int64_t i = 0; i < n; ++i)
            x->grad.data()[i] += dy[i] * (x->val.data()[i] > 0 ? 1.0f : slope);
    });
}

// log(1 + e^x), numerically stable; derivative sigmoid(x)
inline NodeP softplus(Graph& g, NodeP x) {
    Tensor out(x->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        const float v = x->val.data()[i];
        out.data()[i] = std::log1p(std::exp(-std::abs(v))) + std::max(v, 0.0f);
    }
    return g.make(std::move(out), {x}, [x, n](Node& self) {
        if (!x->requires_grad) return;
        const float* dy = self.grad.data();
        for (int64_t i = 0; i < n; ++i)
            x->grad.data()[i] += dy[i] / (1.0f + std::exp(-x->val.data()[i]));
    });
}

// y = sum_i w_i * x_i over same-shape nodes (used for loss totals)
inline NodeP weighted_sum(Graph& g, const std::vector<NodeP>& xs,
                          const std::vector<float>& ws) {
    if (xs.empty() || xs.size() != ws.size())
        throw InvalidArgument("weighted_sum: bad operands");
    Tensor out(xs[0]->val.shape());
    const int64_t n = out.numel();
    for (size_t t = 0; t < xs.size(); ++t) {
        if (!(xs[t]->val.shape() == out.shape()))
            throw InvalidArgument("weighted_sum: shape mismatch");
        for (int64_t i = 0; i < n; ++i) out.data()[i] += ws[t] * xs[t]->val.data()[i];
    }
    std::vector<NodeP> parents(xs.begin(), xs.end());
    return g.make(std::move(out), parents, [xs, ws, n](Node& self) {
        const float* dy = self.grad.data();
        for (size_t t = 0; t < xs.size(); ++t) {
            if (!xs[t]->requires_grad) continue;
            for (int64_t i = 0; i < n; ++i) xs[t]->grad.data()[i] += ws[t] * dy[i];
        }
    });
}

// ------------------------------------------------------------------- shapes

inline NodeP concat_channels(Graph& g, NodeP a, NodeP b) {
    const Shape4 sa = a->val.shape(), sb = b->val.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
        throw InvalidArgument("concat_channels: spatial/batch mismatch");
    Tensor out({sa.n, sa.c + sb.c, sa.h, sa.w});
    const int64_t plane = static_cast<int64_t>(sa.h) * sa.w;
    for (int n = 0; n < sa.n; ++n) {
        std::copy_n(a->val.sample(n), sa.c * plane, out.sample(n));
        std::copy_n(b->val.sample(n), sb.c * plane, out.sample(n) + sa.c * plane);
    }
    return g.make(std::move(out), {a, b}, [a, b, sa, sb, plane](Node& self) {
        for (int n = 0; n < sa.n; ++n) {
            const float* dy = self.grad.sample(n);
            if (a->requires_grad) {
                float* da = a->grad.sample(n);
                for (int64_t i = 0; i < sa.c * plane; ++i) da[i] += dy[i];
            }
            if (b->requires_grad) {
                float* db = b->grad.sample(n);
                for (int64_t i = 0; i < sb.c * plane; ++i) db[i] += dy[sa.c * plane + i];
            }
        }
    });
}

inline NodeP slice_channels(Graph& g, NodeP x, int c0, int c1) {
    const Shape4 s = x->val.shape();
    if (c0 < 0 || c1 <= c0 || c1 > s.c) throw InvalidArgument("slice_channels: bad range");
    Tensor out({s.n, c1 - c0, s.h, s.w});
    const int64_t plane = static_cast<int64_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        std::copy_n(x->val.sample(n) + c0 * plane, (c1 - c0) * plane, out.sample(n));
    return g.make(std::move(out), {x}, [x, s, c0, c1, plane](Node& self) {
        if (!x->requires_grad) return;
        for (int n = 0; n < s.n; ++n) {
            const float* dy = self.grad.sample(n);
            float* dx = x->grad.sample(n) + c0 * plane;
            for (int64_t i = 0; i < (c1 - c0) * plane; ++i) dx[i] += dy[i];
        }
    });
}

inline NodeP upsample_nearest2x(Graph& g, NodeP x) {
    const Shape4 s = x->val.shape();
    Tensor out({s.n, s.c, s.h * 2, s.w * 2});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h * 2; ++y)
                for (int xx = 0; xx < s.w * 2; ++xx)
                    out.at(n, c, y, xx) = x->val.at(n, c, y / 2, xx / 2);
    return g.make(std::move(out), {x}, [x, s](Node& self) {
        if (!x->requires_grad) return;
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int y = 0; y < s.h * 2; ++y)
                    for (int xx = 0; xx < s.w * 2; ++xx)
                        x->grad.at(n, c, y / 2, xx / 2) += self.grad.at(n, c, y, xx);
    });
}

// ------------------------------------------------------------------- conv2d

namespace detail {

// x sample (C, H, W) -> cols (C*kh*kw, OH*OW), zero padding
inline void im2col(const float* x, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int OH, int OW, float* cols) {
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                float* row = cols + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) *
                                        (static_cast<int64_t>(OH) * OW);
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < OW; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        row[oy * OW + ox] =
                            (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                ? x[(static_cast<int64_t>(c) * H + iy) * W + ix]
                                : 0.0f;
                    }
                }
            }
}

inline void col2im_add(const float* cols, int C, int H, int W, int kh, int kw, int stride,
                       int pad, int OH, int OW, float* dx) {
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const float* row = cols + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) *
                                              (static_cast<int64_t>(OH) * OW);
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < OW; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= W) continue;
                        dx[(static_cast<int64_t>(c) * H + iy) * W + ix] += row[oy * OW + ox];
                    }
                }
            }
}

}  // namespace detail

// w: (C_out, C_in, kh, kw), b: (1, C_out, 1, 1). im2col + GEMM; the column
// matrix is recomputed in backward rather than cached, trading a little
// compute for a flat memory profile.
inline NodeP conv2d(Graph& g, NodeP x, NodeP w, NodeP b, int stride = 1, int pad = 1) {
    const Shape4 xs = x->val.shape(), ws = w->val.shape();
    if (xs.c != ws.c) throw InvalidArgument("conv2d: channel mismatch");
    const int OH = (xs.h + 2 * pad - ws.h) / stride + 1;
    const int OW = (xs.w + 2 * pad - ws.w) / stride + 1;
    if (OH <= 0 || OW <= 0) throw InvalidArgument("conv2d: empty output");
    const int CKK = ws.c * ws.h * ws.w;
    const int64_t OHW = static_cast<int64_t>(OH) * OW;

    Tensor out({xs.n, ws.n, OH, OW});
    std::vector<float> cols(static_cast<size_t>(CKK) * OHW);
    for (int n = 0; n < xs.n; ++n) {
        detail::im2col(x->val.sample(n), xs.c, xs.h, xs.w, ws.h, ws.w, stride, pad, OH, OW,
                       cols.data());
        sgemm(false, false, ws.n, static_cast<int>(OHW), CKK, 1.0f, w->val.data(), CKK,
              cols.data(), static_cast<int>(OHW), 0.0f, out.sample(n), static_cast<int>(OHW));
        float* o = out.sample(n);
        for (int c = 0; c < ws.n; ++c) {
            const float bias = b->val.data()[c];
            for (int64_t i = 0; i < OHW; ++i) o[c * OHW + i] += bias;
        }
    }

    return g.make(std::move(out), {x, w, b},
                  [x, w, b, xs, ws, stride, pad, OH, OW, CKK, OHW](Node& self) {
        std::vector<float> cols(static_cast<size_t>(CKK) * OHW);
        std::vector<float> dcols(static_cast<size_t>(CKK) * OHW);
        for (int n = 0; n < xs.n; ++n) {
            const float* dy = self.grad.sample(n);
            if (w->requires_grad) {
                detail::im2col(x->val.sample(n), xs.c, xs.h, xs.w, ws.h, ws.w, stride, pad, OH,
                               OW, cols.data());
                sgemm(false, true, ws.n, CKK, static_cast<int>(OHW), 1.0f, dy,
                      static_cast<int>(OHW), cols.data(), static_cast<int>(OHW), 1.0f,
                      w->grad.data(), CKK);
            }
            if (x->requires_grad) {
                sgemm(true, false, CKK, static_cast<int>(OHW), ws.n, 1.0f, w->val.data(), CKK,
                      dy, static_cast<int>(OHW), 0.0f, dcols.data(), static_cast<int>(OHW));
                detail::col2im_add(dcols.data(), xs.c, xs.h, xs.w, ws.h, ws.w, stride, pad, OH,
                                   OW, x->grad.sample(n));
            }
            if (b->requires_grad) {
                for (int c = 0; c < ws.n; ++c) {
                    double acc = 0;
                    for (int64_t i = 0; i < OHW; ++i) acc += dy[c * OHW + i];
                    b->grad.data()[c] += static_cast<float>(acc);
                }
            }
        }
    });
}

// ---------------------------------------------------------------- group norm

inline NodeP group_norm(Graph& g, NodeP x, NodeP gamma, NodeP beta, int groups,
                        float eps = 1e-5f) {
    const Shape4 s = x->val.shape();
    if (s.c % groups != 0) throw InvalidArgument("group_norm: channels not divisible by groups");
    const int cpg = s.c / groups;
    const int64_t m = static_cast<int64_t>(cpg) * s.h * s.w;  // elements per group

    Tensor out(s);
    auto xhat = std::make_shared<Tensor>(s);
    auto istd = std::make_shared<std::vector<float>>(static_cast<size_t>(s.n) * groups);

    for (int n = 0; n < s.n; ++n)
        for (int gi = 0; gi < groups; ++gi) {
            const float* xp = x->val.sample(n) + static_cast<int64_t>(gi) * m;
            double mean = 0;
            for (int64_t i = 0; i < m; ++i) mean += xp[i];
            mean /= m;
            double var = 0;
            for (int64_t i = 0; i < m; ++i) var += (xp[i] - mean) * (xp[i] - mean);
            var /= m;
            const float is = 1.0f / std::sqrt(static_cast<float>(var) + eps);
            (*istd)[n * groups + gi] = is;
            float* xh = xhat->sample(n) + static_cast<int64_t>(gi) * m;
            float* o = out.sample(n) + static_cast<int64_t>(gi) * m;
            const int64_t plane = static_cast<int64_t>(s.h) * s.w;
            for (int64_t i = 0; i < m; ++i) {
                xh[i] = static_cast<float>((xp[i] - mean) * is);
                const int c = gi * cpg + static_cast<int>(i / plane);
                o[i] = gamma->val.data()[c] * xh[i] + beta->val.data()[c];
            }
        }

    return g.make(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, s, groups, cpg, m, xhat, istd](Node& self) {
        const int64_t plane = static_cast<int64_t>(s.h) * s.w;
        for (int n = 0; n < s.n; ++n)
            for (int gi = 0; gi < groups; ++gi) {
                const float* dy = self.grad.sample(n) + static_cast<int64_t>(gi) * m;
                const float* xh = xhat->sample(n) + static_cast<int64_t>(gi) * m;
                const float is = (*istd)[n * groups + gi];

                if (gamma->requires_grad || beta->requires_grad) {
                    for (int cc = 0; cc < cpg; ++cc) {
                        const int c = gi * cpg + cc;
                        double dg = 0, db = 0;
                        for (int64_t i = cc * plane; i < (cc + 1) * plane; ++i) {
                            dg += dy[i] * xh[i];
                            db += dy[i];
                        }
                        if (gamma->requires_grad)
                            gamma->grad.data()[c] += static_cast<float>(dg);
                        if (beta->requires_grad) beta->grad.data()[c] += static_cast<float>(db);
                    }
                }
                if (!x->requires_grad) continue;

                // dxhat = dy * gamma; dx = istd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                double sum_dxh = 0, sum_dxh_xh = 0;
                for (int64_t i = 0; i < m; ++i) {
                    const int c = gi * cpg + static_cast<int>(i / plane);
                    const double dxh = static_cast<double>(dy[i]) * gamma->val.data()[c];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh[i];
                }
                const double mean_dxh = sum_dxh / m;
                const double mean_dxh_xh = sum_dxh_xh / m;
                float* dx = x->grad.sample(n) + static_cast<int64_t>(gi) * m;
                for (int64_t i = 0; i < m; ++i) {
                    const int c = gi * cpg + static_cast<int>(i / plane);
                    const double dxh = static_cast<double>(dy[i]) * gamma->val.data()[c];
                    dx[i] += static_cast<float>(is * (dxh - mean_dxh - xh[i] * mean_dxh_xh));
                }
            }
    });
}

// ------------------------------------------------------------------- linear

// x: (N, F_in, 1, 1), w: (F_out, F_in, 1, 1), b: (1, F_out, 1, 1)
inline NodeP linear(Graph& g, NodeP x, NodeP w, NodeP b) {
    const Shape4 xs = x->val.shape(), ws = w->val.shape();
    if (xs.c != ws.c || xs.h != 1 || xs.w != 1) throw InvalidArgument("linear: bad shapes");
    Tensor out({xs.n, ws.n, 1, 1});
    sgemm(false, true, xs.n, ws.n, xs.c, 1.0f, x->val.data(), xs.c, w->val.data(), ws.c, 0.0f,
          out.data(), ws.n);
    for (int n = 0; n < xs.n; ++n)
        for (int f = 0; f < ws.n; ++f) out.data()[n * ws.n + f] += b->val.data()[f];

    return g.make(std::move(out), {x, w, b}, [x, w, b, xs, ws](Node& self) {
        const float* dy = self.grad.data();  // (N, F_out)
        if (x->requires_grad)
            sgemm(false, false, xs.n, xs.c, ws.n, 1.0f, dy, ws.n, w->val.data(), ws.c, 1.0f,
                  x->grad.data(), xs.c);
        if (w->requires_grad)
            sgemm(true, false, ws.n, ws.c, xs.n, 1.0f, dy, ws.n, x->val.data(), xs.c, 1.0f,
                  w->grad.data(), ws.c);
        if (b->requires_grad)
            for (int n = 0; n < xs.n; ++n)
                for (int f = 0; f < ws.n; ++f) b->grad.data()[f] += dy[n * ws.n + f];
    });
}

// broadcast a per-sample feature vector (N, C, 1, 1) across HxW
inline NodeP broadcast_bias(Graph& g, NodeP x, NodeP emb) {
    const Shape4 s = x->val.shape(), es = emb->val.shape();
    if (es.n != s.n || es.c != s.c || es.h != 1 || es.w != 1)
        throw InvalidArgument("broadcast_bias: bad shapes");
    Tensor out(s);
    const int64_t plane = static_cast<int64_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const float e = emb->val.data()[n * s.c + c];
            const float* xp = x->val.sample(n) + c * plane;
            float* o = out.sample(n) + c * plane;
            for (int64_t i = 0; i < plane; ++i) o[i] = xp[i] + e;
        }
    return g.make(std::move(out), {x, emb}, [x, emb, s, plane](Node& self) {
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const float* dy = self.grad.sample(n) + c * plane;
                if (x->requires_grad) {
                    float* dx = x->grad.sample(n) + c * plane;
                    for (int64_t i = 0; i < plane; ++i) dx[i] += dy[i];
                }
                if (emb->requires_grad) {
                    double acc = 0;
                    for (int64_t i = 0; i < plane; ++i) acc += dy[i];
                    emb->grad.data()[n * s.c + c] += static_cast<float>(acc);
                }
            }
    });
}

// ---------------------------------------------------------------- attention

// Single-head softmax attention over the H*W tokens of each sample;
// q, k, v: (N, C, H, W). The row-softmax matrix is kept for backward.
inline NodeP self_attention(Graph& g, NodeP q, NodeP k, NodeP v) {
    const Shape4 s = q->val.shape();
    if (!(k->val.shape() == s) || !(v->val.shape() == s))
        throw InvalidArgument("self_attention: shape mismatch");
    const int C = s.c;
    const int64_t M = static_cast<int64_t>(s.h) * s.w;
    const float inv_sqrt_c = 1.0f / std::sqrt(static_cast<float>(C));

    Tensor out(s);
    auto attn = std::make_shared<std::vector<std::vector<float>>>(s.n);

    std::vector<float> scores(M * M);
    for (int n = 0; n < s.n; ++n) {
        // S = Q^T K / sqrt(C); Q stored channel-major (C x M)
        sgemm(true, false, static_cast<int>(M), static_cast<int>(M), C, inv_sqrt_c,
              q->val.sample(n), static_cast<int>(M), k->val.sample(n), static_cast<int>(M),
              0.0f, scores.data(), static_cast<int>(M));
        for (int64_t i = 0; i < M; ++i) {
            float* row = scores.data() + i * M;
            float mx = row[0];
            for (int64_t j = 1; j < M; ++j) mx = std::max(mx, row[j]);
            double sum = 0;
            for (int64_t j = 0; j < M; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            const float inv = static_cast<float>(1.0 / sum);
            for (int64_t j = 0; j < M; ++j) row[j] *= inv;
        }
        (*attn)[n] = scores;
        // O = V A^T  (channel-major)
        sgemm(false, true, C, static_cast<int>(M), static_cast<int>(M), 1.0f, v->val.sample(n),
              static_cast<int>(M), scores.data(), static_cast<int>(M), 0.0f, out.sample(n),
              static_cast<int>(M));
    }

    return g.make(std::move(out), {q, k, v}, [q, k, v, s, C, M, inv_sqrt_c, attn](Node& self) {
        std::vector<float> da(M * M), ds(M * M);
        for (int n = 0; n < s.n; ++n) {
            const float* dy = self.grad.sample(n);  // (C x M)
            const std::vector<float>& a = (*attn)[n];
            if (v->requires_grad)
                sgemm(false, false, C, static_cast<int>(M), static_cast<int>(M), 1.0f, dy,
                      static_cast<int>(M), a.data(), static_cast<int>(M), 1.0f,
                      v->grad.sample(n), static_cast<int>(M));
            if (!q->requires_grad && !k->requires_grad) continue;
            // dA = dY^T V
            sgemm(true, false, static_cast<int>(M), static_cast<int>(M), C, 1.0f, dy,
                  static_cast<int>(M), v->val.sample(n), static_cast<int>(M), 0.0f, da.data(),
                  static_cast<int>(M));
            // dS = A o (dA - rowsum(dA o A))
            for (int64_t i = 0; i < M; ++i) {
                const float* arow = a.data() + i * M;
                const float* darow = da.data() + i * M;
                double dot = 0;
                for (int64_t j = 0; j < M; ++j) dot += darow[j] * arow[j];
                float* dsrow = ds.data() + i * M;
                for (int64_t j = 0; j < M; ++j)
                    dsrow[j] = arow[j] * (darow[j] - static_cast<float>(dot));
            }
            if (q->requires_grad)
                sgemm(false, true, C, static_cast<int>(M), static_cast<int>(M), inv_sqrt_c,
                      k->val.sample(n), static_cast<int>(M), ds.data(), static_cast<int>(M),
                      1.0f, q->grad.sample(n), static_cast<int>(M));
            if (k->requires_grad)
                sgemm(false, false, C, static_cast<int>(M), static_cast<int>(M), inv_sqrt_c,
                      q->val.sample(n), static_cast<int>(M), ds.data(), static_cast<int>(M),
                      1.0f, k->grad.sample(n), static_cast<int>(M));
        }
    });
}

// ------------------------------------------------------------------- losses

inline NodeP mean_all(Graph& g, NodeP x) {
    const int64_t n = x->val.numel();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += x->val.data()[i];
    Tensor out({1, 1, 1, 1});
    out.data()[0] = static_cast<float>(acc / n);
    return g.make(std::move(out), {x}, [x, n](Node& self) {
        if (!x->requires_grad) return;
        const float dy = self.grad.data()[0] / static_cast<float>(n);
        for (int64_t i = 0; i < n; ++i) x->grad.data()[i] += dy;
    });
}

inline NodeP mse_loss(Graph& g, NodeP a, NodeP b) {
    if (!(a->val.shape() == b->val.shape())) throw InvalidArgument("mse_loss: shape mismatch");
    const int64_t n = a->val.numel();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a->val.data()[i]) - b->val.data()[i];
        acc += d * d;
    }
    Tensor out({1, 1, 1, 1});
    out.data()[0] = static_cast<float>(acc / n);
    return g.make(std::move(out), {a, b}, [a, b, n](Node& self) {
        const float dy = self.grad.data()[0] * 2.0f / static_cast<float>(n);
        for (int64_t i = 0; i < n; ++i) {
            const float d = a->val.data()[i] - b->val.data()[i];
            if (a->requires_grad) a->grad.data()[i] += dy * d;
            if (b->requires_grad) b->grad.data()[i] -= dy * d;
        }
    });
}

// mean of (alpha * w + 1) * (pred - target)^2; w: (N, 1, h, w) broadcast
// across channels
inline NodeP weighted_mse_loss(Graph& g, NodeP pred, NodeP target, NodeP w, float alpha) {
    const Shape4 s = pred->val.shape(), ws = w->val.shape();
    if (!(target->val.shape() == s)) throw InvalidArgument("weighted_mse: shape mismatch");
    if (ws.n != s.n || ws.c != 1 || ws.h != s.h || ws.w != s.w)
        throw InvalidArgument("weighted_mse: weight must be (N,1,h,w)");
    const int64_t n = s.numel();
    const int64_t plane = static_cast<int64_t>(s.h) * s.w;
    double acc = 0;
    for (int nn = 0; nn < s.n; ++nn)
        for (int c = 0; c < s.c; ++c) {
            const float* p = pred->val.sample(nn) + c * plane;
            const float* t = target->val.sample(nn) + c * plane;
            const float* ww = w->val.sample(nn);
            for (int64_t i = 0; i < plane; ++i) {
                const double d = static_cast<double>(p[i]) - t[i];
                acc += (alpha * ww[i] + 1.0) * d * d;
            }
        }
    Tensor out({1, 1, 1, 1});
    out.data()[0] = static_cast<float>(acc / n);
    return g.make(std::move(out), {pred, target, w},
                  [pred, target, w, s, alpha, n, plane](Node& self) {
        const float dy = self.grad.data()[0] * 2.0f / static_cast<float>(n);
        for (int nn = 0; nn < s.n; ++nn)
            for (int c = 0; c < s.c; ++c) {
                const float* p = pred->val.sample(nn) + c * plane;
                const float* t = target->val.sample(nn) + c * plane;
                const float* ww = w->val.sample(nn);
                for (int64_t i = 0; i < plane; ++i) {
                    const float d = p[i] - t[i];
                    const float gl = dy * (alpha * ww[i] + 1.0f) * d;
                    if (pred->requires_grad) pred->grad.sample(nn)[c * plane + i] += gl;
                    if (target->requires_grad) target->grad.sample(nn)[c * plane + i] -= gl;
                }
            }
    });
}

// -0.5 * mean(1 + logvar - mean^2 - exp(logvar))
inline NodeP kl_loss(Graph& g, NodeP mu, NodeP logvar) {
    if (!(mu->val.shape() == logvar->val.shape()))
        throw InvalidArgument("kl_loss: shape mismatch");
    const int64_t n = mu->val.numel();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double m = mu->val.data()[i], lv = logvar->val.data()[i];
        acc += 1.0 + lv - m * m - std::exp(lv);
    }
    Tensor out({1, 1, 1, 1});
    out.data()[0] = static_cast<float>(-0.5 * acc / n);
    return g.make(std::move(out), {mu, logvar}, [mu, logvar, n](Node& self) {
        const float dy = self.grad.data()[0] / static_cast<float>(n);
        for (int64_t i = 0; i < n; ++i) {
            if (mu->requires_grad) mu->grad.data()[i] += dy * mu->val.data()[i];
            if (logvar->requires_grad)
                logvar->grad.data()[i] +=
                    dy * 0.5f * (std::exp(logvar->val.data()[i]) - 1.0f);
        }
    });
}

// mu + exp(logvar / 2) * eps, eps a fixed draw (reparameterization)
inline NodeP reparameterize(Graph& g, NodeP mu, NodeP logvar, const Tensor& eps) {
    if (!(mu->val.shape() == logvar->val.shape()) || !(eps.shape() == mu->val.shape()))
        throw InvalidArgument("reparameterize: shape mismatch");
    const int64_t n = mu->val.numel();
    Tensor out(mu->val.shape());
    for (int64_t i = 0; i < n; ++i)
        out.data()[i] =
            mu->val.data()[i] + std::exp(0.5f * logvar->val.data()[i]) * eps.data()[i];
    return g.make(std::move(out), {mu, logvar}, [mu, logvar, eps, n](Node& self) {
        const float* dy = self.grad.data();
        for (int64_t i = 0; i < n; ++i) {
            if (mu->requires_grad) mu->grad.data()[i] += dy[i];
            if (logvar->requires_grad)
                logvar->grad.data()[i] += dy[i] * 0.5f *
                                          std::exp(0.5f * logvar->val.data()[i]) *
                                          eps.data()[i];
        }
    });
}

}  // namespace angiodiff::nn
