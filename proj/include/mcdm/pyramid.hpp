// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mcdm/autograd.hpp"

namespace mcdm::pyr {

using ag::VarPtr;

// Band-pass decomposition of [N,C,H,W]: `levels` detail maps followed by the
// final coarse image. Detail l = G_l - up(G_{l+1}), G_{l+1} = decimate2(blur(G_l)).
// Upsampling preserves constants, so detail levels of a flat image vanish.
std::vector<VarPtr> laplacian_pyramid(const VarPtr& x, int levels);

// Sum over all pyramid levels (details and coarse) of the per-level mean
// absolute difference between the two decompositions.
VarPtr laplacian_loss(const VarPtr& a, const VarPtr& b, int levels);

// l_lap + lambda1*l_reid + lambda2*l_flow; rejects NaN inputs by name.
VarPtr total_loss(const VarPtr& l_lap, const VarPtr& l_reid, const VarPtr& l_flow,
                  double lambda1, double lambda2);

} // namespace mcdm::pyr
