// SPDX-License-Identifier: Apache-2.0
#include "mcdm/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "mcdm/autograd.hpp"
#include "mcdm/errors.hpp"
#include "mcdm/nn.hpp"
#include "mcdm/rng.hpp"

namespace mcdm::metrics {

double psnr(const Tensor& a, const Tensor& b, double max_val) {
    check_same_shape(a, b, "psnr");
    if (max_val <= 0) throw PreconditionError("psnr needs max_val > 0");
    double mse = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= double(a.data.size());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt) {
    check_same_shape(a, b, "ssim");
    if (a.ndim() != 2) throw PreconditionError("ssim expects [H,W] planes");
    if (opt.window < 3 || opt.window % 2 == 0)
        throw PreconditionError("ssim window must be odd and >= 3");
    int64_t H = a.shape[0], W = a.shape[1], win = opt.window;
    if (H < win || W < win)
        throw PreconditionError("ssim frame " + a.shape_str() + " is smaller than the " +
                                std::to_string(win) + "x" + std::to_string(win) + " window");
    if (opt.sigma <= 0) throw PreconditionError("ssim needs sigma > 0");

    std::vector<double> g(size_t(win * win));
    double gsum = 0;
    int64_t r = win / 2;
    for (int64_t i = 0; i < win; ++i)
        for (int64_t j = 0; j < win; ++j) {
            double dy = double(i - r), dx = double(j - r);
            double v = std::exp(-(dx * dx + dy * dy) / (2 * opt.sigma * opt.sigma));
            g[size_t(i * win + j)] = v;
            gsum += v;
        }
    for (auto& v : g) v /= gsum;

    double c1 = (0.01 * opt.max_val) * (0.01 * opt.max_val);
    double c2 = (0.03 * opt.max_val) * (0.03 * opt.max_val);
    double acc = 0;
    int64_t count = 0;
    for (int64_t y = 0; y + win <= H; ++y)
        for (int64_t x = 0; x + win <= W; ++x) {
            double mx = 0, my = 0;
            for (int64_t i = 0; i < win; ++i)
                for (int64_t j = 0; j < win; ++j) {
                    double wgt = g[size_t(i * win + j)];
                    mx += wgt * a.data[size_t((y + i) * W + x + j)];
                    my += wgt * b.data[size_t((y + i) * W + x + j)];
                }
            double vx = 0, vy = 0, cxy = 0;
            for (int64_t i = 0; i < win; ++i)
                for (int64_t j = 0; j < win; ++j) {
                    double wgt = g[size_t(i * win + j)];
                    double da = a.data[size_t((y + i) * W + x + j)] - mx;
                    double db = b.data[size_t((y + i) * W + x + j)] - my;
                    // explicit rounding points keep ssim(a,b) == ssim(b,a)
                    // bitwise even when the compiler fuses multiply-adds
                    double dd = da * db;
                    vx += wgt * (da * da);
                    vy += wgt * (db * db);
                    cxy += wgt * dd;
                }
            double mxy = mx * my, mxx = mx * mx, myy = my * my;
            acc += ((2 * mxy + c1) * (2 * cxy + c2)) /
                   (((mxx + myy) + c1) * ((vx + vy) + c2));
            ++count;
        }
    return acc / double(count);
}

// ---- Gaussian statistics ----

GaussianStats GaussianStats::fit(const Tensor& samples) {
    if (samples.ndim() != 2) throw PreconditionError("gaussian fit expects [N,d] samples");
    int64_t N = samples.shape[0], d = samples.shape[1];
    if (N < 2) throw PreconditionError("gaussian fit needs at least 2 samples, got " +
                                       std::to_string(N));
    GaussianStats out;
    out.n = N;
    out.mean = Tensor({d});
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < d; ++j) out.mean.data[size_t(j)] += samples.at2(i, j);
    for (int64_t j = 0; j < d; ++j) out.mean.data[size_t(j)] /= double(N);

    out.cov = Tensor({d, d});
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < d; ++j) {
            double cj = samples.at2(i, j) - out.mean.data[size_t(j)];
            for (int64_t k = j; k < d; ++k) {
                double ck = samples.at2(i, k) - out.mean.data[size_t(k)];
                out.cov.data[size_t(j * d + k)] += cj * ck;
            }
        }
    for (int64_t j = 0; j < d; ++j)
        for (int64_t k = j; k < d; ++k) {
            double v = out.cov.data[size_t(j * d + k)] / double(N - 1);
            out.cov.data[size_t(j * d + k)] = v;
            out.cov.data[size_t(k * d + j)] = v;
        }
    return out;
}

namespace {

void check_stats(const GaussianStats& s, const char* which) {
    if (s.mean.ndim() != 1 || s.cov.ndim() != 2)
        throw PreconditionError(std::string(which) + " stats need mean [d] and cov [d,d]");
    int64_t d = s.mean.shape[0];
    if (s.cov.shape[0] != d || s.cov.shape[1] != d)
        throw PreconditionError(std::string(which) + " covariance shape " + s.cov.shape_str() +
                                " does not match mean dim " + std::to_string(d));
    if (s.n < 2) throw PreconditionError(std::string(which) + " stats need n >= 2");
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = i + 1; j < d; ++j)
            if (std::abs(s.cov.at2(i, j) - s.cov.at2(j, i)) > 1e-8)
                throw PreconditionError(std::string(which) + " covariance is not symmetric");
}

double clamp_eig(double v, const char* stage) {
    if (v < -1e-6)
        throw NumericError(std::string("covariance eigenvalue ") + std::to_string(v) +
                           " in " + stage + " is far below zero");
    return v > 0 ? v : 0.0;
}

// V diag(sqrt(clamped eig)) V^T of a symmetric matrix
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m, const char* stage) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success)
        throw NumericError(std::string("eigendecomposition failed in ") + stage);
    Eigen::VectorXd l = es.eigenvalues();
    for (int i = 0; i < l.size(); ++i) l[i] = std::sqrt(clamp_eig(l[i], stage));
    return es.eigenvectors() * l.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

double frechet_distance(const GaussianStats& p, const GaussianStats& q) {
    check_stats(p, "first");
    check_stats(q, "second");
    int64_t d = p.mean.shape[0];
    if (q.mean.shape[0] != d)
        throw PreconditionError("stats dims differ: " + std::to_string(d) + " vs " +
                                std::to_string(q.mean.shape[0]));

    double dist = 0;
    for (int64_t i = 0; i < d; ++i) {
        double dm = p.mean.data[size_t(i)] - q.mean.data[size_t(i)];
        dist += dm * dm;
    }

    Eigen::MatrixXd sp(d, d), sq(d, d);
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = 0; j < d; ++j) {
            sp(i, j) = p.cov.at2(i, j);
            sq(i, j) = q.cov.at2(i, j);
        }

    Eigen::MatrixXd a = sqrt_psd(sp, "the first covariance");
    Eigen::MatrixXd prod = a * sq * a;
    prod = 0.5 * (prod + prod.transpose().eval()); // kill asymmetry from rounding

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(prod);
    if (es.info() != Eigen::Success)
        throw NumericError("eigendecomposition failed in the cross term");
    double tr_sqrt = 0;
    for (int i = 0; i < es.eigenvalues().size(); ++i)
        tr_sqrt += std::sqrt(clamp_eig(es.eigenvalues()[i], "the cross term"));

    for (int64_t i = 0; i < d; ++i) dist += p.cov.at2(i, i) + q.cov.at2(i, i);
    dist -= 2.0 * tr_sqrt;
    return dist;
}

// ---- video embedding ----

RandomProjectionEmbedder::RandomProjectionEmbedder(uint64_t seed, int64_t out_dim) {
    if (out_dim < 1) throw ConfigError("embedder output dim must be positive");
    name_ = "rpvid-s" + std::to_string(seed);
    auto rng = make_rng(seed, "fvd_embedder");
    const int64_t C = 6;
    w_spat_ = Tensor({C, 1, 3, 3});
    rng.fill_normal(w_spat_, 0.0, 0.5);
    b_spat_ = Tensor({C});
    rng.fill_normal(b_spat_, 0.0, 0.1);
    w_time_ = Tensor({C, 3});
    rng.fill_normal(w_time_, 0.0, 0.5);
    proj_ = Tensor({4 * C, out_dim});
    rng.fill_normal(proj_, 0.0, 1.0 / std::sqrt(double(4 * C)));
}

namespace {

// [L,16,16] frames -> per-frame pooled responses [L,C] under the frozen filters
Tensor pooled_responses(const Tensor& stack, const Tensor& w, const Tensor& b) {
    using namespace mcdm::ag;
    int64_t L = stack.shape[0];
    Tensor x4({L, 1, stack.shape[1], stack.shape[2]}, stack.data);
    auto y = nn::avg_pool_global(
        relu(nn::conv2d(constant(std::move(x4)), constant(w), constant(b), 2, 1)));
    return y->val; // [L,C]
}

// valid temporal convolution + relu + mean over time, one kernel per channel
void temporal_summary(const Tensor& seq, const Tensor& w_time, std::vector<double>& out) {
    int64_t L = seq.shape[0], C = seq.shape[1];
    for (int64_t c = 0; c < C; ++c) {
        double acc = 0;
        for (int64_t t = 0; t + 3 <= L; ++t) {
            double v = 0;
            for (int64_t k = 0; k < 3; ++k)
                v += w_time.at2(c, k) * seq.at2(t + k, c);
            acc += v > 0 ? v : 0.0;
        }
        out.push_back(acc / double(L - 2));
    }
    for (int64_t c = 0; c < C; ++c) {
        double acc = 0;
        for (int64_t t = 0; t < L; ++t) acc += seq.at2(t, c);
        out.push_back(acc / double(L));
    }
}

} // namespace

std::vector<double> RandomProjectionEmbedder::embed(const Tensor& window) const {
    if (window.ndim() != 3) throw PreconditionError("embedder expects [T,H,W] windows");
    int64_t L = window.shape[0], H = window.shape[1], W = window.shape[2];
    if (L < 4) throw PreconditionError("embedder needs at least 4 frames, got " +
                                       std::to_string(L));
    if (H < 2 || W < 2) throw PreconditionError("embedder frames must be at least 2x2");

    ag::NoGrad ng;
    const int64_t canvas = 16;
    Tensor frames({L, 1, H, W}, window.data);
    Tensor small = nn::bilinear_resize(ag::constant(std::move(frames)), canvas, canvas)->val;

    Tensor app({L, canvas, canvas}, small.data);
    Tensor mot({L - 1, canvas, canvas});
    for (size_t i = 0; i < mot.data.size(); ++i)
        mot.data[i] = small.data[i + size_t(canvas * canvas)] - small.data[i];

    auto ra = pooled_responses(app, w_spat_, b_spat_);
    auto rm = pooled_responses(mot, w_spat_, b_spat_);
    std::vector<double> feat;
    temporal_summary(ra, w_time_, feat);
    temporal_summary(rm, w_time_, feat);

    int64_t fdim = proj_.shape[0], odim = proj_.shape[1];
    std::vector<double> out(size_t(odim), 0.0);
    for (int64_t j = 0; j < odim; ++j)
        for (int64_t i = 0; i < fdim; ++i)
            out[size_t(j)] += feat[size_t(i)] * proj_.at2(i, j);
    return out;
}

// ---- FVD ----

namespace {

Tensor embed_side(const std::vector<data::VideoClip>& clips, const VideoEmbedder& emb,
                  int64_t clip_len, const char* side) {
    std::vector<std::vector<double>> rows;
    for (const auto& clip : clips) {
        if (clip.T < clip_len) continue;
        int64_t offsets = clip.T - clip_len + 1;
        int64_t k = std::min<int64_t>(4, offsets);
        for (int64_t i = 0; i < k; ++i) {
            int64_t start =
                k == 1 ? 0 : int64_t(std::llround(double(i) * double(offsets - 1) / double(k - 1)));
            Tensor win({clip_len, clip.H, clip.W});
            std::copy(clip.frames.begin() + start * clip.H * clip.W,
                      clip.frames.begin() + (start + clip_len) * clip.H * clip.W,
                      win.data.begin());
            rows.push_back(emb.embed(win));
        }
    }
    if (rows.empty())
        throw PreconditionError(std::string("every ") + side + " clip is shorter than " +
                                std::to_string(clip_len) + " frames");
    if (rows.size() < 2)
        throw PreconditionError(std::string(side) + " side yields only one window; need >= 2");
    Tensor out({int64_t(rows.size()), int64_t(rows[0].size())});
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(), out.data.begin() + i * rows[0].size());
    return out;
}

} // namespace

double fvd(const std::vector<data::VideoClip>& real, const std::vector<data::VideoClip>& fake,
           const VideoEmbedder& embedder, int64_t clip_len) {
    if (clip_len < 4) throw PreconditionError("fvd clip length must be at least 4");
    auto er = embed_side(real, embedder, clip_len, "real");
    auto ef = embed_side(fake, embedder, clip_len, "fake");
    return frechet_distance(GaussianStats::fit(er), GaussianStats::fit(ef));
}

// ---- inception score ----

namespace {

double kl_to_marginal(const Tensor& probs, int64_t row, const std::vector<double>& marginal) {
    int64_t K = probs.shape[1];
    double kl = 0;
    for (int64_t j = 0; j < K; ++j) {
        double p = probs.at2(row, j);
        if (p > 0) kl += p * std::log(p / marginal[size_t(j)]);
    }
    return kl;
}

} // namespace

std::pair<double, double> inception_score(const Tensor& probs, int64_t folds) {
    if (probs.ndim() != 2 || probs.shape[0] < 1 || probs.shape[1] < 1)
        throw PreconditionError("inception score expects a [N,K] probability matrix");
    if (folds < 1) throw PreconditionError("fold count must be positive");
    int64_t N = probs.shape[0], K = probs.shape[1];
    for (int64_t i = 0; i < N; ++i) {
        double s = 0;
        for (int64_t j = 0; j < K; ++j) {
            double p = probs.at2(i, j);
            if (p < 0) throw PreconditionError("row " + std::to_string(i) +
                                               " has a negative probability");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-6)
            throw PreconditionError("row " + std::to_string(i) + " sums to " +
                                    std::to_string(s) + ", not 1");
    }

    std::vector<double> marginal(size_t(K), 0.0);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < K; ++j) marginal[size_t(j)] += probs.at2(i, j) / double(N);
    double mean_kl = 0;
    for (int64_t i = 0; i < N; ++i) mean_kl += kl_to_marginal(probs, i, marginal);
    double value = std::exp(mean_kl / double(N));

    int64_t F = std::min(folds, N);
    std::vector<double> fold_vals;
    for (int64_t f = 0; f < F; ++f) {
        int64_t lo = f * N / F, hi = (f + 1) * N / F;
        std::vector<double> fm(size_t(K), 0.0);
        for (int64_t i = lo; i < hi; ++i)
            for (int64_t j = 0; j < K; ++j) fm[size_t(j)] += probs.at2(i, j) / double(hi - lo);
        double fkl = 0;
        for (int64_t i = lo; i < hi; ++i) fkl += kl_to_marginal(probs, i, fm);
        fold_vals.push_back(std::exp(fkl / double(hi - lo)));
    }
    double fstd = 0;
    if (F >= 2) {
        double fmean = 0;
        for (double v : fold_vals) fmean += v;
        fmean /= double(F);
        for (double v : fold_vals) fstd += (v - fmean) * (v - fmean);
        fstd = std::sqrt(fstd / double(F - 1));
    }
    return {value, fstd};
}

// ---- endpoint error ----

double endpoint_error(const data::FlowField& f, const data::FlowField& g) {
    check_same_shape(f.u, g.u, "endpoint_error u");
    check_same_shape(f.v, g.v, "endpoint_error v");
    check_same_shape(f.u, f.v, "endpoint_error components");
    double acc = 0;
    int64_t count = 0;
    for (size_t i = 0; i < f.u.data.size(); ++i) {
        if (!f.mask.data.empty() && f.mask.data[i] == 0.0) continue;
        if (!g.mask.data.empty() && g.mask.data[i] == 0.0) continue;
        double du = f.u.data[i] - g.u.data[i];
        double dv = f.v.data[i] - g.v.data[i];
        acc += std::sqrt(du * du + dv * dv);
        ++count;
    }
    if (count == 0) {
        std::cerr << "warning: endpoint error over an empty mask, reporting 0\n";
        return 0.0;
    }
    return acc / double(count);
}

// ---- reports ----

void MetricReport::add(const std::string& name, double value, const std::string& qualifier) {
    entries.push_back({name, value, 0.0, false, qualifier});
}

void MetricReport::add_with_std(const std::string& name, double value, double stddev,
                                const std::string& qualifier) {
    entries.push_back({name, value, stddev, true, qualifier});
}

} // namespace mcdm::metrics
