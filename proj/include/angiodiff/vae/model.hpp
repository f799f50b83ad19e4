#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "angiodiff/core/rng.hpp"
#include "angiodiff/nn/graph.hpp"
#include "angiodiff/nn/ops.hpp"

namespace angiodiff::vae {

using nn::Graph;
using nn::Init;
using nn::NodeP;
using nn::Param;
using nn::ParamStore;
using nn::Shape4;
using nn::Tensor;

// ------------------------------------------------------------ layer helpers

struct Conv {
    std::shared_ptr<Param> w, b;
    int stride = 1, pad = 1;

    Conv() = default;
    Conv(ParamStore& store, const std::string& name, int cin, int cout, int k, int stride_,
         int pad_, Init init = Init::he_normal)
        : stride(stride_), pad(pad_) {
        w = store.create(name + ".w", {cout, cin, k, k}, init);
        b = store.create(name + ".b", {1, cout, 1, 1}, Init::zeros);
    }

    NodeP operator()(Graph& g, NodeP x) const {
        return nn::conv2d(g, x, g.param(w), g.param(b), stride, pad);
    }
};

struct GroupNormLayer {
    std::shared_ptr<Param> gamma, beta;
    int groups = 8;

    GroupNormLayer() = default;
    GroupNormLayer(ParamStore& store, const std::string& name, int channels, int groups_)
        : groups(std::min(groups_, channels)) {
        gamma = store.create(name + ".g", {1, channels, 1, 1}, Init::ones);
        beta = store.create(name + ".b", {1, channels, 1, 1}, Init::zeros);
    }

    NodeP operator()(Graph& g, NodeP x) const {
        return nn::group_norm(g, x, g.param(gamma), g.param(beta), groups);
    }
};

// GroupNorm-SiLU-Conv twice with a (1x1-projected) skip connection.
struct ResBlock {
    GroupNormLayer gn1, gn2;
    Conv c1, c2;
    std::optional<Conv> skip;

    ResBlock() = default;
    ResBlock(ParamStore& store, const std::string& name, int cin, int cout, int groups) {
        gn1 = GroupNormLayer(store, name + ".gn1", cin, groups);
        c1 = Conv(store, name + ".c1", cin, cout, 3, 1, 1);
        gn2 = GroupNormLayer(store, name + ".gn2", cout, groups);
        c2 = Conv(store, name + ".c2", cout, cout, 3, 1, 1);
        if (cin != cout) skip = Conv(store, name + ".skip", cin, cout, 1, 1, 0);
    }

    NodeP forward(Graph& g, NodeP x) const {
        NodeP h = c1(g, nn::silu(g, gn1(g, x)));
        h = c2(g, nn::silu(g, gn2(g, h)));
        const NodeP s = skip ? (*skip)(g, x) : x;
        return nn::add(g, h, s);
    }
};

struct AttnBlock {
    GroupNormLayer gn;
    Conv q, k, v, proj;

    AttnBlock() = default;
    AttnBlock(ParamStore& store, const std::string& name, int channels, int groups) {
        gn = GroupNormLayer(store, name + ".gn", channels, groups);
        q = Conv(store, name + ".q", channels, channels, 1, 1, 0);
        k = Conv(store, name + ".k", channels, channels, 1, 1, 0);
        v = Conv(store, name + ".v", channels, channels, 1, 1, 0);
        proj = Conv(store, name + ".proj", channels, channels, 1, 1, 0);
    }

    NodeP forward(Graph& g, NodeP x) const {
        NodeP h = gn(g, x);
        NodeP o = nn::self_attention(g, q(g, h), k(g, h), v(g, h));
        return nn::add(g, x, proj(g, o));
    }
};

// -------------------------------------------------------------------- model

struct VaeArch {
    int in_channels = 1;
    int cond_channels = 3;
    int base = 16;  // channels at the finest level; multipliers {1, 2, 4}
    int latent_channels = 4;
    int groups = 8;
    bool use_gate_module = true;
    bool double_activation = false;  // wrap the gated product in an extra sigmoid
};

// AutoencoderKL-style backbone plus the gated conditional encoder. The
// encoder downsamples 8x through three Down blocks (two residual blocks and
// a strided conv each); the decoder mirrors it with per-block feature fusion,
// two residual blocks, self-attention, and upsampling.
class VaeModel {
public:
    VaeModel(ParamStore& store, const VaeArch& arch) : arch_(arch) {
        const int c1 = arch.base, c2 = arch.base * 2, c3 = arch.base * 4;
        const int gr = arch.groups;

        stem_ = Conv(store, "enc.stem", arch.in_channels, c1, 3, 1, 1);
        enc_res_[0][0] = ResBlock(store, "enc.d0.res0", c1, c1, gr);
        enc_res_[0][1] = ResBlock(store, "enc.d0.res1", c1, c1, gr);
        enc_down_[0] = Conv(store, "enc.d0.down", c1, c2, 3, 2, 1);
        enc_res_[1][0] = ResBlock(store, "enc.d1.res0", c2, c2, gr);
        enc_res_[1][1] = ResBlock(store, "enc.d1.res1", c2, c2, gr);
        enc_down_[1] = Conv(store, "enc.d1.down", c2, c3, 3, 2, 1);
        enc_res_[2][0] = ResBlock(store, "enc.d2.res0", c3, c3, gr);
        enc_res_[2][1] = ResBlock(store, "enc.d2.res1", c3, c3, gr);
        enc_down_[2] = Conv(store, "enc.d2.down", c3, c3, 3, 2, 1);
        enc_out_gn_ = GroupNormLayer(store, "enc.out.gn", c3, gr);
        enc_out_ = Conv(store, "enc.out.conv", c3, 2 * arch.latent_channels, 3, 1, 1);

        dec_in_ = Conv(store, "dec.in", arch.latent_channels, c3, 3, 1, 1);
        dec_res_[0][0] = ResBlock(store, "dec.u0.res0", c3, c3, gr);
        dec_res_[0][1] = ResBlock(store, "dec.u0.res1", c3, c3, gr);
        dec_attn_[0] = AttnBlock(store, "dec.u0.attn", c3, gr);
        dec_up_[0] = Conv(store, "dec.u0.up", c3, c2, 3, 1, 1);
        dec_res_[1][0] = ResBlock(store, "dec.u1.res0", c2, c2, gr);
        dec_res_[1][1] = ResBlock(store, "dec.u1.res1", c2, c2, gr);
        dec_attn_[1] = AttnBlock(store, "dec.u1.attn", c2, gr);
        dec_up_[1] = Conv(store, "dec.u1.up", c2, c1, 3, 1, 1);
        dec_res_[2][0] = ResBlock(store, "dec.u2.res0", c1, c1, gr);
        dec_res_[2][1] = ResBlock(store, "dec.u2.res1", c1, c1, gr);
        dec_attn_[2] = AttnBlock(store, "dec.u2.attn", c1, gr);
        dec_up_[2] = Conv(store, "dec.u2.up", c1, c1, 3, 1, 1);
        dec_out_gn_ = GroupNormLayer(store, "dec.out.gn", c1, gr);
        dec_out_ = Conv(store, "dec.out.conv", c1, arch.in_channels, 3, 1, 1);

        gce_down_[0] = Conv(store, "gce.b0.down", arch.cond_channels, c1, 3, 2, 1);
        gce_gate_[0] = Conv(store, "gce.b0.gate", c1, c1, 3, 1, 1);
        gce_down_[1] = Conv(store, "gce.b1.down", c1, c2, 3, 2, 1);
        gce_gate_[1] = Conv(store, "gce.b1.gate", c2, c2, 3, 1, 1);
        gce_down_[2] = Conv(store, "gce.b2.down", c2, c3, 3, 2, 1);
        gce_gate_[2] = Conv(store, "gce.b2.gate", c3, c3, 3, 1, 1);

        // zero-initialized so an injected pyramid is a no-op until trained
        fusion_[0] = Conv(store, "fusion.l0", c1, c1, 1, 1, 0, Init::zeros);
        fusion_[1] = Conv(store, "fusion.l1", c2, c2, 1, 1, 0, Init::zeros);
        fusion_[2] = Conv(store, "fusion.l2", c3, c3, 1, 1, 0, Init::zeros);
    }

    const VaeArch& arch() const { return arch_; }

    // y: (N, 1, H, W), H and W divisible by 8 -> (mean, logvar) at (N, Cz, H/8, W/8)
    std::pair<NodeP, NodeP> encode(Graph& g, NodeP y) const {
        check_divisible(y->val.shape());
        NodeP h = stem_(g, y);
        for (int level = 0; level < 3; ++level) {
            h = enc_res_[level][0].forward(g, h);
            h = enc_res_[level][1].forward(g, h);
            h = enc_down_[level](g, h);
        }
        h = enc_out_(g, nn::silu(g, enc_out_gn_(g, h)));
        const int cz = arch_.latent_channels;
        return {nn::slice_channels(g, h, 0, cz), nn::slice_channels(g, h, cz, 2 * cz)};
    }

    // condition x: (N, 3, H, W) -> gated features at H/2, H/4, H/8
    std::vector<NodeP> gce_forward(Graph& g, NodeP x) const {
        check_divisible(x->val.shape());
        std::vector<NodeP> levels;
        NodeP h = x;
        for (int i = 0; i < 3; ++i) {
            NodeP d = gce_down_[i](g, h);
            if (arch_.use_gate_module) {
                NodeP gate = nn::sigmoid(g, gce_gate_[i](g, d));
                h = nn::mul(g, gate, d);
                if (arch_.double_activation) h = nn::sigmoid(g, h);
            } else {
                h = d;
            }
            levels.push_back(h);
        }
        return levels;  // H/2, H/4, H/8
    }

    // z: (N, Cz, h, w); pyramid, when given, holds the three gated levels in
    // H/2, H/4, H/8 order and is fused at the matching Up-block inputs
    NodeP decode(Graph& g, NodeP z, const std::vector<NodeP>* pyramid) const {
        if (pyramid && pyramid->size() != 3)
            throw InvalidArgument("decode: pyramid must hold three levels");
        NodeP h = dec_in_(g, z);
        for (int block = 0; block < 3; ++block) {
            if (pyramid) {
                const NodeP& feat = (*pyramid)[2 - block];  // H/8 first
                if (!(feat->val.shape() == h->val.shape()))
                    throw InvalidArgument("decode: pyramid level shape mismatch");
                h = nn::add(g, h, fusion_[2 - block](g, feat));
            }
            h = dec_res_[block][0].forward(g, h);
            h = dec_res_[block][1].forward(g, h);
            h = dec_attn_[block].forward(g, h);
            h = dec_up_[block](g, nn::upsample_nearest2x(g, h));
        }
        return dec_out_(g, nn::silu(g, dec_out_gn_(g, h)));
    }

private:
    static void check_divisible(const Shape4& s) {
        if (s.h % 8 != 0 || s.w % 8 != 0)
            throw InvalidArgument("vae: spatial dims must be divisible by 8");
    }

    VaeArch arch_;
    Conv stem_;
    ResBlock enc_res_[3][2];
    Conv enc_down_[3];
    GroupNormLayer enc_out_gn_;
    Conv enc_out_;

    Conv dec_in_;
    ResBlock dec_res_[3][2];
    AttnBlock dec_attn_[3];
    Conv dec_up_[3];
    GroupNormLayer dec_out_gn_;
    Conv dec_out_;

    Conv gce_down_[3], gce_gate_[3];
    Conv fusion_[3];
};

// Patch discriminator: four stride-2 convolutions, LeakyReLU, 1-channel
// patch logit map.
class PatchDiscriminator {
public:
    PatchDiscriminator(ParamStore& store, int in_channels, int base, int groups) {
        c_[0] = Conv(store, "disc.c0", in_channels, base, 4, 2, 1);
        c_[1] = Conv(store, "disc.c1", base, base * 2, 4, 2, 1);
        gn_[0] = GroupNormLayer(store, "disc.gn1", base * 2, groups);
        c_[2] = Conv(store, "disc.c2", base * 2, base * 4, 4, 2, 1);
        gn_[1] = GroupNormLayer(store, "disc.gn2", base * 4, groups);
        c_[3] = Conv(store, "disc.c3", base * 4, base * 4, 4, 2, 1);
        gn_[2] = GroupNormLayer(store, "disc.gn3", base * 4, groups);
        out_ = Conv(store, "disc.out", base * 4, 1, 3, 1, 1);
    }

    NodeP forward(Graph& g, NodeP img) const {
        NodeP h = nn::leaky_relu(g, c_[0](g, img));
        h = nn::leaky_relu(g, gn_[0](g, c_[1](g, h)));
        h = nn::leaky_relu(g, gn_[1](g, c_[2](g, h)));
        h = nn::leaky_relu(g, gn_[2](g, c_[3](g, h)));
        return out_(g, h);  // (N, 1, H/16, W/16) patch logits
    }

    // scalar mean logit, the value the loss formulas consume
    NodeP mean_logit(Graph& g, NodeP img) const { return nn::mean_all(g, forward(g, img)); }

private:
    Conv c_[4];
    GroupNormLayer gn_[3];
    Conv out_;
};

// Fixed, seeded random convolutional feature stack; the perceptual distance
// is the mean per-level feature MSE. Frozen: a pretrained extractor can be
// dropped in through the same interface.
class PerceptualNet {
public:
    PerceptualNet(ParamStore& store, int in_channels, int base) {
        c_[0] = Conv(store, "perc.c0", in_channels, base, 3, 2, 1);
        c_[1] = Conv(store, "perc.c1", base, base * 2, 3, 2, 1);
        c_[2] = Conv(store, "perc.c2", base * 2, base * 4, 3, 2, 1);
        c_[3] = Conv(store, "perc.c3", base * 4, base * 4, 3, 2, 1);
        store.set_trainable_prefix("perc.", false);
    }

    NodeP distance(Graph& g, NodeP a, NodeP b) const {
        std::vector<NodeP> terms;
        NodeP fa = a, fb = b;
        for (int i = 0; i < 4; ++i) {
            fa = nn::silu(g, c_[i](g, fa));
            fb = nn::silu(g, c_[i](g, fb));
            terms.push_back(nn::mse_loss(g, fa, fb));
        }
        return nn::weighted_sum(g, terms, {0.25f, 0.25f, 0.25f, 0.25f});
    }

private:
    Conv c_[4];
};

}  // namespace angiodiff::vae
