#pragma once

#include "angiodiff/vae/model.hpp"

namespace angiodiff::vae {

// Plain-tensor views of the model surface, used by tests, the diffusion
// stage, and sampling. All are deterministic given parameters and seeds.

struct LatentDistribution {
    Tensor mean, logvar;  // (N, Cz, h, w)
};

struct LatentGrid {
    Tensor values;
};

struct FeaturePyramid {
    std::vector<Tensor> levels;  // H/2, H/4, H/8
};

struct VaeLossBreakdown {
    double recon_l2 = 0, adversarial = 0, perceptual = 0, kl = 0, total = 0;
};

struct VaeLossWeights {
    double recon = 1.0, adv = 0.05, perc = 0.1, kl = 1e-6;
    bool adv_nonsaturating = true;
};

inline LatentDistribution vae_encode(const VaeModel& model, const Tensor& y) {
    Graph g;
    auto [mean, logvar] = model.encode(g, g.constant(y));
    return {mean->val, logvar->val};
}

// values = mean + exp(logvar / 2) * eps, eps standard normal per seed
inline LatentGrid sample_latent(const LatentDistribution& d, uint64_t seed) {
    if (!(d.mean.shape() == d.logvar.shape()))
        throw InvalidArgument("sample_latent: mean/logvar shape mismatch");
    Rng rng(Rng::mix(seed, 0x1A7E47));
    Tensor out(d.mean.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data()[i] = d.mean.data()[i] +
                        std::exp(0.5f * d.logvar.data()[i]) * rng.normalf();
    return {out};
}

inline FeaturePyramid vae_gce_forward(const VaeModel& model, const Tensor& x) {
    Graph g;
    const auto levels = model.gce_forward(g, g.constant(x));
    FeaturePyramid pyr;
    for (const auto& l : levels) pyr.levels.push_back(l->val);
    return pyr;
}

inline Tensor vae_decode(const VaeModel& model, const LatentGrid& z,
                         const FeaturePyramid* pyramid = nullptr) {
    Graph g;
    std::vector<NodeP> levels;
    if (pyramid)
        for (const auto& l : pyramid->levels) levels.push_back(g.constant(l));
    return model.decode(g, g.constant(z.values), pyramid ? &levels : nullptr)->val;
}

// log(sigmoid(x)) and log(1 - sigmoid(x)) through the stable softplus
inline double log_sigmoid(double x) {
    return -(std::log1p(std::exp(-std::abs(x))) + std::max(-x, 0.0));
}

// Eq.-style discriminator objective evaluated on logits:
//     log(1 - sigmoid(d_real)) + log(sigmoid(d_fake)).
// Gradients of this expression w.r.t. the logits already push d_real up and
// d_fake down; the trainer minimizes the equivalent standard binary
// cross-entropy -[log sigmoid(d_real) + log(1 - sigmoid(d_fake))].
inline double discriminator_loss(double d_logit_real, double d_logit_fake) {
    return log_sigmoid(-d_logit_real) + log_sigmoid(d_logit_fake);
}

// Pure loss evaluator mirroring the training objective: mean-squared
// reconstruction, adversarial term on the discriminator logit of the fake
// (non-saturating -log sigmoid(d) by default, literal log(1 - sigmoid(d))
// otherwise), pluggable perceptual distance, and the diagonal-Gaussian KL.
inline VaeLossBreakdown vae_loss(const Tensor& y, const Tensor& y_hat, double d_logit_fake,
                                 const LatentDistribution& dist, const VaeLossWeights& w,
                                 const PerceptualNet* perc_net = nullptr) {
    if (!(y.shape() == y_hat.shape())) throw InvalidArgument("vae_loss: shape mismatch");
    VaeLossBreakdown out;

    double acc = 0;
    for (int64_t i = 0; i < y.numel(); ++i) {
        const double d = static_cast<double>(y.data()[i]) - y_hat.data()[i];
        acc += d * d;
    }
    out.recon_l2 = acc / y.numel();

    out.adversarial = w.adv_nonsaturating ? -log_sigmoid(d_logit_fake)
                                          : log_sigmoid(-d_logit_fake);

    if (perc_net) {
        Graph g;
        out.perceptual =
            perc_net->distance(g, g.constant(y), g.constant(y_hat))->val.data()[0];
    }

    acc = 0;
    for (int64_t i = 0; i < dist.mean.numel(); ++i) {
        const double m = dist.mean.data()[i], lv = dist.logvar.data()[i];
        acc += 1.0 + lv - m * m - std::exp(lv);
    }
    out.kl = -0.5 * acc / dist.mean.numel();

    out.total = w.recon * out.recon_l2 + w.adv * out.adversarial + w.perc * out.perceptual +
                w.kl * out.kl;
    return out;
}

}  // namespace angiodiff::vae
