// SPDX-License-Identifier: Apache-2.0
#include "mcdm/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "mcdm/errors.hpp"

namespace mcdm::nn {

using ag::any_grad;
using ag::make_node;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

// ===================== conv2d =====================

namespace {

void im2col(const double* x, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, double* col) {
    // col: [Cin*kh*kw, Ho*Wo]
    for (int64_t ci = 0; ci < Cin; ++ci)
        for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
                double* dst = col + ((ci * kh + ky) * kw + kx) * (Ho * Wo);
                const double* src = x + ci * H * W;
                for (int64_t ho = 0; ho < Ho; ++ho) {
                    int64_t iy = ho * stride + ky - pad;
                    for (int64_t wo = 0; wo < Wo; ++wo) {
                        int64_t ix = wo * stride + kx - pad;
                        dst[ho * Wo + wo] =
                            (iy >= 0 && iy < H && ix >= 0 && ix < W) ? src[iy * W + ix] : 0.0;
                    }
                }
            }
}

void col2im_add(const double* col, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, double* x) {
    for (int64_t ci = 0; ci < Cin; ++ci)
        for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
                const double* src = col + ((ci * kh + ky) * kw + kx) * (Ho * Wo);
                double* dst = x + ci * H * W;
                for (int64_t ho = 0; ho < Ho; ++ho) {
                    int64_t iy = ho * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int64_t wo = 0; wo < Wo; ++wo) {
                        int64_t ix = wo * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        dst[iy * W + ix] += src[ho * Wo + wo];
                    }
                }
            }
}

} // namespace

VarPtr conv2d(const VarPtr& x, const VarPtr& w, const VarPtr& b, int stride, int pad) {
    if (x->val.ndim() != 4 || w->val.ndim() != 4)
        throw PreconditionError("conv2d expects x [N,C,H,W] and w [Co,Ci,kh,kw]");
    int64_t N = x->val.shape[0], Cin = x->val.shape[1], H = x->val.shape[2], W = x->val.shape[3];
    int64_t Cout = w->val.shape[0], kh = w->val.shape[2], kw = w->val.shape[3];
    if (w->val.shape[1] != Cin)
        throw PreconditionError("conv2d channel mismatch: x has " + std::to_string(Cin) +
                                ", w expects " + std::to_string(w->val.shape[1]));
    if (b && (b->val.ndim() != 1 || b->val.shape[0] != Cout))
        throw PreconditionError("conv2d bias must be [Cout]");
    int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) throw PreconditionError("conv2d output would be empty");

    Tensor out({N, Cout, Ho, Wo});
    int64_t K = Cin * kh * kw;
    std::vector<double> col(K * Ho * Wo);
    CMap Wm(w->val.ptr(), Cout, K);
    for (int64_t n = 0; n < N; ++n) {
        im2col(x->val.ptr() + n * Cin * H * W, Cin, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
        CMap C(col.data(), K, Ho * Wo);
        MMap Y(out.ptr() + n * Cout * Ho * Wo, Cout, Ho * Wo);
        Y.noalias() = Wm * C;
        if (b)
            for (int64_t co = 0; co < Cout; ++co)
                Y.row(co).array() += b->val.data[co];
    }

    std::vector<VarPtr> parents = {x, w};
    if (b) parents.push_back(b);
    VarPtr xs = x, ws = w, bs = b;
    int64_t s = stride, p = pad;
    return make_node(std::move(out), std::move(parents), [=](Var& self) {
        int64_t K2 = Cin * kh * kw;
        std::vector<double> colb(K2 * Ho * Wo);
        for (int64_t n = 0; n < N; ++n) {
            CMap G(self.grad.ptr() + n * Cout * Ho * Wo, Cout, Ho * Wo);
            if (ws->requires_grad || xs->requires_grad)
                im2col(xs->val.ptr() + n * Cin * H * W, Cin, H, W, kh, kw, s, p, Ho, Wo,
                       colb.data());
            if (ws->requires_grad) {
                ws->ensure_grad();
                CMap C(colb.data(), K2, Ho * Wo);
                MMap dW(ws->grad.ptr(), Cout, K2);
                dW.noalias() += G * C.transpose();
            }
            if (xs->requires_grad) {
                xs->ensure_grad();
                CMap Wm2(ws->val.ptr(), Cout, K2);
                std::vector<double> dcol(K2 * Ho * Wo);
                MMap DC(dcol.data(), K2, Ho * Wo);
                DC.noalias() = Wm2.transpose() * G;
                col2im_add(dcol.data(), Cin, H, W, kh, kw, s, p, Ho, Wo,
                           xs->grad.ptr() + n * Cin * H * W);
            }
            if (bs && bs->requires_grad) {
                bs->ensure_grad();
                // plain loop: vectorized reductions regroup by buffer alignment,
                // which breaks run-to-run bitwise reproducibility
                const double* gp = self.grad.ptr() + n * Cout * Ho * Wo;
                for (int64_t co = 0; co < Cout; ++co) {
                    double acc = 0;
                    for (int64_t i = 0; i < Ho * Wo; ++i) acc += gp[co * Ho * Wo + i];
                    bs->grad.data[co] += acc;
                }
            }
        }
    });
}

// ===================== linear =====================

VarPtr linear(const VarPtr& x, const VarPtr& w, const VarPtr& b) {
    if (x->val.ndim() != 2 || w->val.ndim() != 2 || x->val.shape[1] != w->val.shape[0])
        throw PreconditionError("linear expects x [N,K] and w [K,M]");
    int64_t N = x->val.shape[0], K = x->val.shape[1], M = w->val.shape[1];
    if (b && (b->val.ndim() != 1 || b->val.shape[0] != M))
        throw PreconditionError("linear bias must be [M]");
    Tensor out({N, M});
    CMap X(x->val.ptr(), N, K), Wm(w->val.ptr(), K, M);
    MMap Y(out.ptr(), N, M);
    Y.noalias() = X * Wm;
    if (b)
        for (int64_t i = 0; i < N; ++i)
            for (int64_t j = 0; j < M; ++j)
                out.data[i * M + j] += b->val.data[j];

    std::vector<VarPtr> parents = {x, w};
    if (b) parents.push_back(b);
    VarPtr xs = x, ws = w, bs = b;
    return make_node(std::move(out), std::move(parents), [=](Var& self) {
        CMap G(self.grad.ptr(), N, M);
        if (xs->requires_grad) {
            xs->ensure_grad();
            CMap Wm2(ws->val.ptr(), K, M);
            MMap dX(xs->grad.ptr(), N, K);
            dX.noalias() += G * Wm2.transpose();
        }
        if (ws->requires_grad) {
            ws->ensure_grad();
            CMap X2(xs->val.ptr(), N, K);
            MMap dW(ws->grad.ptr(), K, M);
            dW.noalias() += X2.transpose() * G;
        }
        if (bs && bs->requires_grad) {
            bs->ensure_grad();
            for (int64_t j = 0; j < M; ++j) {
                double acc = 0;
                for (int64_t i = 0; i < N; ++i) acc += self.grad.data[i * M + j];
                bs->grad.data[j] += acc;
            }
        }
    });
}

// ===================== pooling / norms =====================

VarPtr avg_pool_global(const VarPtr& x) {
    if (x->val.ndim() != 4) throw PreconditionError("avg_pool_global expects [N,C,H,W]");
    int64_t N = x->val.shape[0], C = x->val.shape[1], HW = x->val.shape[2] * x->val.shape[3];
    Tensor out({N, C});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const double* p = x->val.ptr() + (n * C + c) * HW;
            double acc = 0;
            for (int64_t i = 0; i < HW; ++i) acc += p[i];
            out.data[n * C + c] = acc / double(HW);
        }
    VarPtr xs = x;
    return make_node(std::move(out), {x}, [=](Var& self) {
        if (!xs->requires_grad) return;
        xs->ensure_grad();
        double inv = 1.0 / double(HW);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) {
                double g = self.grad.data[n * C + c] * inv;
                double* p = xs->grad.ptr() + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) p[i] += g;
            }
    });
}

VarPtr l2_normalize_rows(const VarPtr& x, double eps) {
    if (x->val.ndim() != 2) throw PreconditionError("l2_normalize_rows expects [N,K]");
    int64_t N = x->val.shape[0], K = x->val.shape[1];
    Tensor out({N, K});
    std::vector<double> norms(N);
    for (int64_t i = 0; i < N; ++i) {
        double acc = 0;
        for (int64_t j = 0; j < K; ++j) {
            double v = x->val.data[i * K + j];
            acc += v * v;
        }
        double n = std::sqrt(acc);
        norms[i] = n > eps ? n : eps;
        for (int64_t j = 0; j < K; ++j)
            out.data[i * K + j] = x->val.data[i * K + j] / norms[i];
    }
    VarPtr xs = x;
    return make_node(std::move(out), {x}, [=](Var& self) {
        if (!xs->requires_grad) return;
        xs->ensure_grad();
        for (int64_t i = 0; i < N; ++i) {
            double n = norms[i];
            double acc = 0, raw = 0;
            for (int64_t j = 0; j < K; ++j) {
                double xv = xs->val.data[i * K + j];
                acc += self.grad.data[i * K + j] * xv;
                raw += xv * xv;
            }
            raw = std::sqrt(raw);
            for (int64_t j = 0; j < K; ++j) {
                double g = self.grad.data[i * K + j];
                if (raw > eps)
                    xs->grad.data[i * K + j] +=
                        g / n - xs->val.data[i * K + j] * acc / (n * n * n);
                else
                    xs->grad.data[i * K + j] += g / n;
            }
        }
    });
}

VarPtr norm_lastdim(const VarPtr& x, double eps) {
    if (x->val.ndim() != 2) throw PreconditionError("norm_lastdim expects [R,K]");
    int64_t R = x->val.shape[0], K = x->val.shape[1];
    Tensor out({R, K});
    std::vector<double> inv_std(R), means(R);
    for (int64_t i = 0; i < R; ++i) {
        double mu = 0;
        for (int64_t j = 0; j < K; ++j) mu += x->val.data[i * K + j];
        mu /= double(K);
        double var = 0;
        for (int64_t j = 0; j < K; ++j) {
            double d = x->val.data[i * K + j] - mu;
            var += d * d;
        }
        var /= double(K);
        double s = 1.0 / std::sqrt(var + eps);
        means[i] = mu;
        inv_std[i] = s;
        for (int64_t j = 0; j < K; ++j)
            out.data[i * K + j] = (x->val.data[i * K + j] - mu) * s;
    }
    VarPtr xs = x;
    Tensor saved = out;
    return make_node(std::move(out), {x}, [=](Var& self) {
        if (!xs->requires_grad) return;
        xs->ensure_grad();
        for (int64_t i = 0; i < R; ++i) {
            double gmean = 0, gdot = 0;
            for (int64_t j = 0; j < K; ++j) {
                double g = self.grad.data[i * K + j];
                gmean += g;
                gdot += g * saved.data[i * K + j];
            }
            gmean /= double(K);
            gdot /= double(K);
            for (int64_t j = 0; j < K; ++j) {
                double g = self.grad.data[i * K + j];
                xs->grad.data[i * K + j] +=
                    inv_std[i] * (g - gmean - saved.data[i * K + j] * gdot);
            }
        }
    });
}

VarPtr channel_scale_bias(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta) {
    if (x->val.ndim() != 4) throw PreconditionError("channel_scale_bias expects [N,C,H,W]");
    int64_t N = x->val.shape[0], C = x->val.shape[1], HW = x->val.shape[2] * x->val.shape[3];
    if (gamma->val.numel() != C || beta->val.numel() != C)
        throw PreconditionError("channel_scale_bias affine params must be [C]");
    Tensor out(x->val.shape);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            double g = gamma->val.data[c], b = beta->val.data[c];
            const double* src = x->val.ptr() + (n * C + c) * HW;
            double* dst = out.ptr() + (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] * g + b;
        }
    VarPtr xs = x, gs = gamma, bs = beta;
    return make_node(std::move(out), {x, gamma, beta}, [=](Var& self) {
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) {
                const double* gr = self.grad.ptr() + (n * C + c) * HW;
                const double* xv = xs->val.ptr() + (n * C + c) * HW;
                if (xs->requires_grad) {
                    xs->ensure_grad();
                    double g = gs->val.data[c];
                    double* dst = xs->grad.ptr() + (n * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) dst[i] += gr[i] * g;
                }
                if (gs->requires_grad) {
                    gs->ensure_grad();
                    double acc = 0;
                    for (int64_t i = 0; i < HW; ++i) acc += gr[i] * xv[i];
                    gs->grad.data[c] += acc;
                }
                if (bs->requires_grad) {
                    bs->ensure_grad();
                    double acc = 0;
                    for (int64_t i = 0; i < HW; ++i) acc += gr[i];
                    bs->grad.data[c] += acc;
                }
            }
    });
}

VarPtr film(const VarPtr& x, const VarPtr& s, const VarPtr& t, int64_t frames_per_sample) {
    if (x->val.ndim() != 4) throw PreconditionError("film expects x [R,C,H,W]");
    int64_t R = x->val.shape[0], C = x->val.shape[1], HW = x->val.shape[2] * x->val.shape[3];
    if (frames_per_sample < 1 || R % frames_per_sample != 0)
        throw PreconditionError("film: row count not divisible by frames_per_sample");
    int64_t N = R / frames_per_sample;
    if (s->val.ndim() != 2 || s->val.shape[0] != N || s->val.shape[1] != C ||
        !s->val.same_shape(t->val))
        throw PreconditionError("film: modulation tensors must be [N,C]");
    Tensor out(x->val.shape);
    for (int64_t r = 0; r < R; ++r) {
        int64_t n = r / frames_per_sample;
        for (int64_t c = 0; c < C; ++c) {
            double sc = 1.0 + s->val.data[n * C + c];
            double tc = t->val.data[n * C + c];
            const double* src = x->val.ptr() + (r * C + c) * HW;
            double* dst = out.ptr() + (r * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] * sc + tc;
        }
    }
    VarPtr xs = x, ss = s, ts = t;
    int64_t T = frames_per_sample;
    return make_node(std::move(out), {x, s, t}, [=](Var& self) {
        for (int64_t r = 0; r < R; ++r) {
            int64_t n = r / T;
            for (int64_t c = 0; c < C; ++c) {
                const double* gr = self.grad.ptr() + (r * C + c) * HW;
                const double* xv = xs->val.ptr() + (r * C + c) * HW;
                if (xs->requires_grad) {
                    xs->ensure_grad();
                    double sc = 1.0 + ss->val.data[n * C + c];
                    double* dst = xs->grad.ptr() + (r * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) dst[i] += gr[i] * sc;
                }
                if (ss->requires_grad) {
                    ss->ensure_grad();
                    double acc = 0;
                    for (int64_t i = 0; i < HW; ++i) acc += gr[i] * xv[i];
                    ss->grad.data[n * C + c] += acc;
                }
                if (ts->requires_grad) {
                    ts->ensure_grad();
                    double acc = 0;
                    for (int64_t i = 0; i < HW; ++i) acc += gr[i];
                    ts->grad.data[n * C + c] += acc;
                }
            }
        }
    });
}

// ===================== resampling =====================

VarPtr upsample_nearest2x(const VarPtr& x) {
    if (x->val.ndim() != 4) throw PreconditionError("upsample_nearest2x expects [N,C,H,W]");
    int64_t N = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2], W = x->val.shape[3];
    Tensor out({N, C, 2 * H, 2 * W});
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* src = x->val.ptr() + nc * H * W;
        double* dst = out.ptr() + nc * 4 * H * W;
        for (int64_t i = 0; i < 2 * H; ++i)
            for (int64_t j = 0; j < 2 * W; ++j)
                dst[i * 2 * W + j] = src[(i / 2) * W + (j / 2)];
    }
    VarPtr xs = x;
    return make_node(std::move(out), {x}, [=](Var& self) {
        if (!xs->requires_grad) return;
        xs->ensure_grad();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            const double* gr = self.grad.ptr() + nc * 4 * H * W;
            double* dst = xs->grad.ptr() + nc * H * W;
            for (int64_t i = 0; i < 2 * H; ++i)
                for (int64_t j = 0; j < 2 * W; ++j)
                    dst[(i / 2) * W + (j / 2)] += gr[i * 2 * W + j];
        }
    });
}

VarPtr bilinear_resize(const VarPtr& x, int64_t H2, int64_t W2) {
    if (x->val.ndim() != 4) throw PreconditionError("bilinear_resize expects [N,C,H,W]");
    if (H2 < 1 || W2 < 1) throw PreconditionError("bilinear_resize target must be positive");
    int64_t N = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2], W = x->val.shape[3];
    double sy = H2 > 1 ? double(H - 1) / double(H2 - 1) : 0.0;
    double sx = W2 > 1 ? double(W - 1) / double(W2 - 1) : 0.0;
    Tensor out({N, C, H2, W2});
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* src = x->val.ptr() + nc * H * W;
        double* dst = out.ptr() + nc * H2 * W2;
        for (int64_t i = 0; i < H2; ++i) {
            double fy = i * sy;
            int64_t y0 = std::min<int64_t>(int64_t(fy), H >= 2 ? H - 2 : 0);
            double wy = fy - double(y0);
            int64_t y1 = H >= 2 ? y0 + 1 : 0;
            for (int64_t j = 0; j < W2; ++j) {
                double fx = j * sx;
                int64_t x0 = std::min<int64_t>(int64_t(fx), W >= 2 ? W - 2 : 0);
                double wx = fx - double(x0);
                int64_t x1 = W >= 2 ? x0 + 1 : 0;
                dst[i * W2 + j] = (1 - wy) * ((1 - wx) * src[y0 * W + x0] + wx * src[y0 * W + x1]) +
                                  wy * ((1 - wx) * src[y1 * W + x0] + wx * src[y1 * W + x1]);
            }
        }
    }
    VarPtr xs = x;
    return make_node(std::move(out), {x}, [=](Var& self) {
        if (!xs->requires_grad) return;
        xs->ensure_grad();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            const double* gr = self.grad.ptr() + nc * H2 * W2;
            double* dst = xs->grad.ptr() + nc * H * W;
            for (int64_t i = 0; i < H2; ++i) {
                double fy = i * sy;
                int64_t y0 = std::min<int64_t>(int64_t(fy), H >= 2 ? H - 2 : 0);
                double wy = fy - double(y0);
                int64_t y1 = H >= 2 ? y0 + 1 : 0;
                for (int64_t j = 0; j < W2; ++j) {
                    double fx = j * sx;
                    int64_t x0 = std::min<int64_t>(int64_t(fx), W >= 2 ? W - 2 : 0);
                    double wx = fx - double(x0);
                    int64_t x1 = W >= 2 ? x0 + 1 : 0;
                    double g = gr[i * W2 + j];
                    dst[y0 * W + x0] += g * (1 - wy) * (1 - wx);
                    dst[y0 * W + x1] += g * (1 - wy) * wx;
                    dst[y1 * W + x0] += g * wy * (1 - wx);
                    dst[y1 * W + x1] += g * wy * wx;
                }
            }
        }
    });
}

VarPtr bilinear_warp(const VarPtr& img, const VarPtr& flow) {
    if (img->val.ndim() != 4 || flow->val.ndim() != 4)
        throw PreconditionError("bilinear_warp expects img [N,C,H,W] and flow [N,2,H,W]");
    int64_t N = img->val.shape[0], C = img->val.shape[1], H = img->val.shape[2],
            W = img->val.shape[3];
    if (flow->val.shape[0] != N || flow->val.shape[1] != 2 || flow->val.shape[2] != H ||
        flow->val.shape[3] != W)
        throw PreconditionError("bilinear_warp flow shape mismatch");
    Tensor out({N, C, H, W});
    for (int64_t n = 0; n < N; ++n) {
        const double* fu = flow->val.ptr() + (n * 2 + 0) * H * W;
        const double* fv = flow->val.ptr() + (n * 2 + 1) * H * W;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double sxr = double(x) + fu[y * W + x];
                double syr = double(y) + fv[y * W + x];
                double sx = std::min(std::max(sxr, 0.0), double(W - 1));
                double sy = std::min(std::max(syr, 0.0), double(H - 1));
                int64_t x0 = std::min<int64_t>(int64_t(sx), W >= 2 ? W - 2 : 0);
                int64_t y0 = std::min<int64_t>(int64_t(sy), H >= 2 ? H - 2 : 0);
                int64_t x1 = W >= 2 ? x0 + 1 : 0;
                int64_t y1 = H >= 2 ? y0 + 1 : 0;
                double wx = sx - double(x0), wy = sy - double(y0);
                for (int64_t c = 0; c < C; ++c) {
                    const double* src = img->val.ptr() + (n * C + c) * H * W;
                    out.data[((n * C + c) * H + y) * W + x] =
                        (1 - wy) * ((1 - wx) * src[y0 * W + x0] + wx * src[y0 * W + x1]) +
                        wy * ((1 - wx) * src[y1 * W + x0] + wx * src[y1 * W + x1]);
                }
            }
    }
    VarPtr is = img, fs = flow;
    return make_node(std::move(out), {img, flow}, [=](Var& self) {
        for (int64_t n = 0; n < N; ++n) {
            const double* fu = fs->val.ptr() + (n * 2 + 0) * H * W;
            const double* fv = fs->val.ptr() + (n * 2 + 1) * H * W;
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    double sxr = double(x) + fu[y * W + x];
                    double syr = double(y) + fv[y * W + x];
                    double sx = std::min(std::max(sxr, 0.0), double(W - 1));
                    double sy = std::min(std::max(syr, 0.0), double(H - 1));
                    bool in_x = sxr > 0.0 && sxr < double(W - 1);
                    bool in_y = syr > 0.0 && syr < double(H - 1);
                    int64_t x0 = std::min<int64_t>(int64_t(sx), W >= 2 ? W - 2 : 0);
                    int64_t y0 = std::min<int64_t>(int64_t(sy), H >= 2 ? H - 2 : 0);
                    int64_t x1 = W >= 2 ? x0 + 1 : 0;
                    int64_t y1 = H >= 2 ? y0 + 1 : 0;
                    double wx = sx - double(x0), wy = sy - double(y0);
                    double du = 0, dv = 0;
                    for (int64_t c = 0; c < C; ++c) {
                        double g = self.grad.data[((n * C + c) * H + y) * W + x];
                        const double* src = is->val.ptr() + (n * C + c) * H * W;
                        if (is->requires_grad) {
                            is->ensure_grad();
                            double* dst = is->grad.ptr() + (n * C + c) * H * W;
                            dst[y0 * W + x0] += g * (1 - wy) * (1 - wx);
                            dst[y0 * W + x1] += g * (1 - wy) * wx;
                            dst[y1 * W + x0] += g * wy * (1 - wx);
                            dst[y1 * W + x1] += g * wy * wx;
                        }
                        if (fs->requires_grad) {
                            du += g * ((1 - wy) * (src[y0 * W + x1] - src[y0 * W + x0]) +
                                       wy * (src[y1 * W + x1] - src[y1 * W + x0]));
                            dv += g * ((1 - wx) * (src[y1 * W + x0] - src[y0 * W + x0]) +
                                       wx * (src[y1 * W + x1] - src[y0 * W + x1]));
                        }
                    }
                    if (fs->requires_grad) {
                        fs->ensure_grad();
                        if (in_x) fs->grad.data[((n * 2 + 0) * H + y) * W + x] += du;
                        if (in_y) fs->grad.data[((n * 2 + 1) * H + y) * W + x] += dv;
                    }
                }
        }
    });
}

// ===================== window attention =====================

VarPtr window_attention(const VarPtr& fa, const VarPtr& fb, const Tensor& coords, int window) {
    if (fa->val.ndim() != 4 || !fa->val.same_shape(fb->val))
        throw PreconditionError("window_attention expects two [N,C,H,W] maps of equal shape");
    int64_t N = fa->val.shape[0], C = fa->val.shape[1], H = fa->val.shape[2], W = fa->val.shape[3];
    if (coords.ndim() != 3 || coords.shape[0] != 2 || coords.shape[1] != H || coords.shape[2] != W)
        throw PreconditionError("window_attention coords must be [2,H,W]");
    if (window < 1 || window % 2 == 0)
        throw PreconditionError("window_attention window must be odd and positive");
    int64_t r = window / 2;
    double scale = 1.0 / std::sqrt(double(C));
    int64_t HW = H * W;
    Tensor out({N, 2 + C, H, W});
    for (int64_t n = 0; n < N; ++n) {
        const double* A = fa->val.ptr() + n * C * HW;
        const double* B = fb->val.ptr() + n * C * HW;
        std::vector<double> logits(size_t(window) * window);
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                int64_t y_lo = std::max<int64_t>(0, y - r), y_hi = std::min<int64_t>(H - 1, y + r);
                int64_t x_lo = std::max<int64_t>(0, x - r), x_hi = std::min<int64_t>(W - 1, x + r);
                double mx = -1e300;
                int64_t cnt = 0;
                for (int64_t qy = y_lo; qy <= y_hi; ++qy)
                    for (int64_t qx = x_lo; qx <= x_hi; ++qx) {
                        double dot = 0;
                        for (int64_t c = 0; c < C; ++c)
                            dot += A[c * HW + y * W + x] * B[c * HW + qy * W + qx];
                        double l = dot * scale;
                        logits[cnt++] = l;
                        if (l > mx) mx = l;
                    }
                double Z = 0;
                for (int64_t k = 0; k < cnt; ++k) {
                    logits[k] = std::exp(logits[k] - mx);
                    Z += logits[k];
                }
                double offx = 0, offy = 0;
                double cx = coords.data[0 * HW + y * W + x];
                double cy = coords.data[1 * HW + y * W + x];
                int64_t k = 0;
                for (int64_t qy = y_lo; qy <= y_hi; ++qy)
                    for (int64_t qx = x_lo; qx <= x_hi; ++qx, ++k) {
                        double wq = logits[k] / Z;
                        offx += wq * (coords.data[0 * HW + qy * W + qx] - cx);
                        offy += wq * (coords.data[1 * HW + qy * W + qx] - cy);
                        for (int64_t c = 0; c < C; ++c)
                            out.data[((n * (2 + C) + 2 + c) * H + y) * W + x] +=
                                wq * B[c * HW + qy * W + qx];
                    }
                out.data[((n * (2 + C) + 0) * H + y) * W + x] = offx;
                out.data[((n * (2 + C) + 1) * H + y) * W + x] = offy;
            }
    }
    VarPtr as = fa, bs = fb;
    Tensor crd = coords;
    int64_t win = window;
    return make_node(std::move(out), {fa, fb}, [=](Var& self) {
        if (!as->requires_grad && !bs->requires_grad) return;
        as->ensure_grad();
        bs->ensure_grad();
        int64_t rr = win / 2;
        for (int64_t n = 0; n < N; ++n) {
            const double* A = as->val.ptr() + n * C * HW;
            const double* B = bs->val.ptr() + n * C * HW;
            std::vector<double> logits(size_t(win) * win), sv(size_t(win) * win);
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    int64_t y_lo = std::max<int64_t>(0, y - rr),
                            y_hi = std::min<int64_t>(H - 1, y + rr);
                    int64_t x_lo = std::max<int64_t>(0, x - rr),
                            x_hi = std::min<int64_t>(W - 1, x + rr);
                    double mx = -1e300;
                    int64_t cnt = 0;
                    for (int64_t qy = y_lo; qy <= y_hi; ++qy)
                        for (int64_t qx = x_lo; qx <= x_hi; ++qx) {
                            double dot = 0;
                            for (int64_t c = 0; c < C; ++c)
                                dot += A[c * HW + y * W + x] * B[c * HW + qy * W + qx];
                            double l = dot * scale;
                            logits[cnt++] = l;
                            if (l > mx) mx = l;
                        }
                    double Z = 0;
                    for (int64_t k = 0; k < cnt; ++k) {
                        logits[k] = std::exp(logits[k] - mx);
                        Z += logits[k];
                    }
                    double cx = crd.data[0 * HW + y * W + x];
                    double cy = crd.data[1 * HW + y * W + x];
                    double gx = self.grad.data[((n * (2 + C) + 0) * H + y) * W + x];
                    double gy = self.grad.data[((n * (2 + C) + 1) * H + y) * W + x];
                    // s_q = d(out)/d(w_q); S = sum_q w_q s_q
                    double S = 0;
                    int64_t k = 0;
                    for (int64_t qy = y_lo; qy <= y_hi; ++qy)
                        for (int64_t qx = x_lo; qx <= x_hi; ++qx, ++k) {
                            double s = gx * (crd.data[0 * HW + qy * W + qx] - cx) +
                                       gy * (crd.data[1 * HW + qy * W + qx] - cy);
                            for (int64_t c = 0; c < C; ++c)
                                s += self.grad.data[((n * (2 + C) + 2 + c) * H + y) * W + x] *
                                     B[c * HW + qy * W + qx];
                            sv[k] = s;
                            S += (logits[k] / Z) * s;
                        }
                    k = 0;
                    for (int64_t qy = y_lo; qy <= y_hi; ++qy)
                        for (int64_t qx = x_lo; qx <= x_hi; ++qx, ++k) {
                            double wq = logits[k] / Z;
                            double dlogit = wq * (sv[k] - S);
                            for (int64_t c = 0; c < C; ++c) {
                                if (as->requires_grad)
                                    as->grad.data[n * C * HW + c * HW + y * W + x] +=
                                        dlogit * B[c * HW + qy * W + qx] * scale;
                                if (bs->requires_grad) {
                                    bs->grad.data[n * C * HW + c * HW + qy * W + qx] +=
                                        dlogit * A[c * HW + y * W + x] * scale +
                                        wq * self.grad
                                                 .data[((n * (2 + C) + 2 + c) * H + y) * W + x];
                                }
                            }
                        }
                }
        }
    });
}

// ===================== pyramid primitives =====================

namespace {

inline int64_t mirror_idx(int64_t i, int64_t n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

constexpr double kBinomial[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

// horizontal then vertical 5-tap pass over one [H,W] plane
void blur_plane(const double* src, int64_t H, int64_t W, double* tmp, double* dst) {
    for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
            double acc = 0;
            for (int k = 0; k < 5; ++k)
                acc += kBinomial[k] * src[i * W + mirror_idx(j + k - 2, W)];
            tmp[i * W + j] = acc;
        }
    for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
            double acc = 0;
            for (int k = 0; k < 5; ++k)
                acc += kBinomial[k] * tmp[mirror_idx(i + k - 2, H) * W + j];
            dst[i * W + j] = acc;
        }
}

// adjoint of blur_plane: scatter with identical mirrored indices, passes reversed
void blur_plane_adjoint(const double* g, int64_t H, int64_t W, double* tmp, double* dst_add) {
    std::fill(tmp, tmp + H * W, 0.0);
    for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
            double gv = g[i * W + j];
            for (int k = 0; k < 5; ++k)
                tmp[mirror_idx(i + k - 2, H) * W + j] += kBinomial[k] * gv;
        }
    for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
            double gv = tmp[i * W + j];
            for (int k = 0; k < 5; ++k)
                dst_add[i * W + mirror_idx(j + k - 2, W)] += kBinomial[k] * gv;
        }
}

} // namespace

VarPtr binomial_blur(const VarPtr& x) {
    if (x->val.ndim() != 4) throw PreconditionError("binomial_blur expects [N,C,H,W]");
    int64_t NC = x->val.shape[0] * x->val.shape[1], H = x->val.shape[2], W = x->val.shape[3];
    Tensor out(x->val.shape);
    std::vector<double> tmp(H * W);
    for (int64_t p = 0; p < NC; ++p)
        blur_plane(x->val.ptr() + p * H * W, H, W, tmp.data(), out.ptr() + p * H * W);
    VarPtr xs = x;
    return make_node(std::move(out), {x}, [=](Var& self) {
        if (!xs->requires_grad) return;
        xs->ensure_grad();
        std::vector<double> t(H * W);
        for (int64_t p = 0; p < NC; ++p)
            blur_plane_adjoint(self.grad.ptr() + p * H * W, H, W, t.data(),
                               xs->grad.ptr() + p * H * W);
    });
}

VarPtr decimate2(const VarPtr& x) {
    if (x->val.ndim() != 4) throw PreconditionError("decimate2 expects [N,C,H,W]");
    int64_t NC = x->val.shape[0] * x->val.shape[1], H = x->val.shape[2], W = x->val.shape[3];
    int64_t H2 = (H + 1) / 2, W2 = (W + 1) / 2;
    Tensor out({x->val.shape[0], x->val.shape[1], H2, W2});
    for (int64_t p = 0; p < NC; ++p) {
        const double* src = x->val.ptr() + p * H * W;
        double* dst = out.ptr() + p * H2 * W2;
        for (int64_t i = 0; i < H2; ++i)
            for (int64_t j = 0; j < W2; ++j)
                dst[i * W2 + j] = src[(2 * i) * W + 2 * j];
    }
    VarPtr xs = x;
    return make_node(std::move(out), {x}, [=](Var& self) {
        if (!xs->requires_grad) return;
        xs->ensure_grad();
        for (int64_t p = 0; p < NC; ++p) {
            const double* gr = self.grad.ptr() + p * H2 * W2;
            double* dst = xs->grad.ptr() + p * H * W;
            for (int64_t i = 0; i < H2; ++i)
                for (int64_t j = 0; j < W2; ++j)
                    dst[(2 * i) * W + 2 * j] += gr[i * W2 + j];
        }
    });
}

namespace {

VarPtr zero_insert(const VarPtr& x, int64_t Ht, int64_t Wt) {
    int64_t NC = x->val.shape[0] * x->val.shape[1], H = x->val.shape[2], W = x->val.shape[3];
    Tensor out({x->val.shape[0], x->val.shape[1], Ht, Wt});
    for (int64_t p = 0; p < NC; ++p) {
        const double* src = x->val.ptr() + p * H * W;
        double* dst = out.ptr() + p * Ht * Wt;
        for (int64_t i = 0; i < H && 2 * i < Ht; ++i)
            for (int64_t j = 0; j < W && 2 * j < Wt; ++j)
                dst[(2 * i) * Wt + 2 * j] = src[i * W + j];
    }
    VarPtr xs = x;
    return make_node(std::move(out), {x}, [=](Var& self) {
        if (!xs->requires_grad) return;
        xs->ensure_grad();
        for (int64_t p = 0; p < NC; ++p) {
            const double* gr = self.grad.ptr() + p * Ht * Wt;
            double* dst = xs->grad.ptr() + p * H * W;
            for (int64_t i = 0; i < H && 2 * i < Ht; ++i)
                for (int64_t j = 0; j < W && 2 * j < Wt; ++j)
                    dst[i * W + j] += gr[(2 * i) * Wt + 2 * j];
        }
    });
}

} // namespace

VarPtr upsample_zero_blur(const VarPtr& x, int64_t Ht, int64_t Wt) {
    if (x->val.ndim() != 4) throw PreconditionError("upsample_zero_blur expects [N,C,H,W]");
    int64_t H = x->val.shape[2], W = x->val.shape[3];
    if (Ht < 2 * H - 1 || Ht > 2 * H || Wt < 2 * W - 1 || Wt > 2 * W)
        throw PreconditionError("upsample_zero_blur target must be 2*H-1..2*H per axis");
    return ag::scale(binomial_blur(zero_insert(x, Ht, Wt)), 4.0);
}

// ===================== init / optimizer =====================

Tensor fanin_normal(Rng& rng, std::vector<int64_t> shape, int64_t fan_in) {
    if (fan_in < 1) throw PreconditionError("fanin_normal needs positive fan_in");
    Tensor t(shape);
    double stddev = std::sqrt(2.0 / double(fan_in));
    for (auto& v : t.data) v = rng.normal() * stddev;
    return t;
}

Adam::Adam(std::vector<VarPtr> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->val.shape);
        v_.emplace_back(p->val.shape);
    }
}

void Adam::step(double lr_scale) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Var& p = *params_[i];
        if (!p.has_grad) continue;
        for (size_t j = 0; j < p.val.data.size(); ++j) {
            double g = p.grad.data[j];
            double& m = m_[i].data[j];
            double& v = v_[i].data[j];
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
            double mh = m / bc1, vh = v / bc2;
            p.val.data[j] -= cfg_.lr * lr_scale * mh / (std::sqrt(vh) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        p->has_grad = false;
        if (!p->grad.data.empty()) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
    }
}

double lr_schedule(const std::string& kind, int64_t t, int64_t warmup, int64_t total_steps) {
    double ramp = 1.0;
    if (warmup > 0 && t < warmup) ramp = double(t + 1) / double(warmup);
    if (kind == "constant") return ramp;
    if (kind == "cosine") {
        if (warmup > 0 && t < warmup) return ramp;
        int64_t span = total_steps - warmup;
        if (span < 1) span = 1;
        double prog = double(t - warmup) / double(span);
        if (prog > 1.0) prog = 1.0;
        return 0.5 * (1.0 + std::cos(prog * 3.14159265358979323846));
    }
    throw ConfigError("unknown lr schedule '" + kind + "' (expected cosine or constant)");
}

} // namespace mcdm::nn
