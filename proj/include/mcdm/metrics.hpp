// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mcdm/data.hpp"
#include "mcdm/tensor.hpp"

namespace mcdm::metrics {

// 10*log10(max_val^2 / MSE) over two equal-shape tensors. A zero MSE is
// reported as +infinity.
double psnr(const Tensor& a, const Tensor& b, double max_val);

struct SsimOptions {
    int64_t window = 11;
    double sigma = 1.5;
    double max_val = 1.0;
};

// Mean SSIM over all fully contained windows of a [H,W] plane pair.
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt = {});

struct GaussianStats {
    Tensor mean; // [d]
    Tensor cov;  // [d,d], symmetric
    int64_t n = 0;

    static GaussianStats fit(const Tensor& samples); // [N,d] with N >= 2
};

// Squared Frechet distance between two Gaussians. The cross-covariance square
// root comes from an eigendecomposition of the symmetrised product; eigenvalues
// below -1e-6 abort, smaller negatives are rounded up to zero.
double frechet_distance(const GaussianStats& p, const GaussianStats& q);

class VideoEmbedder {
public:
    virtual ~VideoEmbedder() = default;
    virtual std::string name() const = 0;
    virtual int64_t dim() const = 0;
    virtual std::vector<double> embed(const Tensor& window) const = 0; // [clip_len,H,W]
};

// Frozen random-projection embedder: seeded spatial filters over each frame and
// over temporal differences, a temporal convolution per channel, then a random
// projection. No training anywhere; reports name it "rpvid-s<seed>".
class RandomProjectionEmbedder final : public VideoEmbedder {
public:
    explicit RandomProjectionEmbedder(uint64_t seed, int64_t out_dim = 16);
    std::string name() const override { return name_; }
    int64_t dim() const override { return proj_.shape[1]; }
    std::vector<double> embed(const Tensor& window) const override;

private:
    std::string name_;
    Tensor w_spat_, b_spat_; // shared spatial filters
    Tensor w_time_;          // per-channel temporal kernel [C,3]
    Tensor proj_;            // [features, out_dim]
};

// Windows of clip_len frames are cut at uniformly spaced offsets (at most 4 per
// clip), embedded, and compared as Gaussians. Clips shorter than clip_len are
// skipped; a side with nothing left raises an error.
double fvd(const std::vector<data::VideoClip>& real, const std::vector<data::VideoClip>& fake,
           const VideoEmbedder& embedder, int64_t clip_len);

// exp(mean KL(row || marginal)) over all rows plus a fold std (up to `folds`
// contiguous folds, fewer when N is small).
std::pair<double, double> inception_score(const Tensor& probs, int64_t folds = 10);

// Mean flow endpoint error over pixels marked valid in both masks. An empty
// intersection warns and counts as zero.
double endpoint_error(const data::FlowField& f, const data::FlowField& g);

struct MetricReport {
    uint64_t config_hash = 0;
    std::vector<int64_t> clip_lengths;
    struct Entry {
        std::string name;
        double value = 0;
        double stddev = 0;
        bool has_std = false;
        std::string qualifier; // embedder / clip length / data annotations
    };
    std::vector<Entry> entries;

    void add(const std::string& name, double value, const std::string& qualifier);
    void add_with_std(const std::string& name, double value, double stddev,
                      const std::string& qualifier);
};

} // namespace mcdm::metrics
