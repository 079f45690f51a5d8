// SPDX-License-Identifier: Apache-2.0
#include "mcdm/pyramid.hpp"

#include <cmath>

#include "mcdm/errors.hpp"
#include "mcdm/nn.hpp"

namespace mcdm::pyr {

std::vector<VarPtr> laplacian_pyramid(const VarPtr& x, int levels) {
    if (x->val.ndim() != 4) throw PreconditionError("laplacian_pyramid expects [N,C,H,W]");
    if (levels < 1) throw PreconditionError("laplacian_pyramid needs levels >= 1");
    int64_t H = x->val.shape[2], W = x->val.shape[3];
    if (std::min(H, W) / (int64_t(1) << levels) < 2)
        throw PreconditionError("image " + std::to_string(H) + "x" + std::to_string(W) +
                                " too small for " + std::to_string(levels) + " pyramid levels");
    std::vector<VarPtr> out;
    VarPtr g = x;
    for (int l = 0; l < levels; ++l) {
        VarPtr next = nn::decimate2(nn::binomial_blur(g));
        VarPtr up = nn::upsample_zero_blur(next, g->val.shape[2], g->val.shape[3]);
        out.push_back(ag::sub(g, up));
        g = next;
    }
    out.push_back(g);
    return out;
}

VarPtr laplacian_loss(const VarPtr& a, const VarPtr& b, int levels) {
    check_same_shape(a->val, b->val, "laplacian_loss");
    auto pa = laplacian_pyramid(a, levels);
    auto pb = laplacian_pyramid(b, levels);
    VarPtr loss;
    for (size_t l = 0; l < pa.size(); ++l) {
        VarPtr term = ag::l1_mean(pa[l], pb[l]);
        loss = loss ? ag::add(loss, term) : term;
    }
    return loss;
}

VarPtr total_loss(const VarPtr& l_lap, const VarPtr& l_reid, const VarPtr& l_flow,
                  double lambda1, double lambda2) {
    auto check = [](const VarPtr& v, const char* name) {
        if (v->val.numel() != 1) throw PreconditionError("total_loss components must be scalars");
        if (std::isnan(v->val.data[0]))
            throw NumericError(std::string("total loss component ") + name + " is NaN");
    };
    check(l_lap, "l_lap");
    check(l_reid, "l_reid");
    check(l_flow, "l_flow");
    return ag::add(l_lap, ag::add(ag::scale(l_reid, lambda1), ag::scale(l_flow, lambda2)));
}

} // namespace mcdm::pyr
