#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <vector>

#include "angiodiff/core/config.hpp"
#include "angiodiff/nn/checkpoint.hpp"
#include "angiodiff/pipeline/data.hpp"
#include "angiodiff/vae/api.hpp"
#include "angiodiff/vae/model.hpp"

namespace angiodiff::vae {

namespace fs = std::filesystem;
using nn::Adam;
using nn::save_checkpoint;

struct TrainStats {
    int steps = 0;
    double first_loss = 0, last_loss = 0;        // recon_l2 at the first/last step
    double heldout_first = 0, heldout_last = 0;  // recon_l2 on a fixed held-out batch
    double heldout_uncond = 0;                   // unconditioned recon after GCE training
    fs::path checkpoint_path, loss_log_path;
};

namespace detail {

// append-only CSV: step,recon_l2,adversarial,perceptual,kl,total,disc_loss
class LossCsv {
public:
    LossCsv(const fs::path& path) : out_(path) {
        if (!out_) throw IoError("loss log: cannot write " + path.string());
        out_ << "step,recon_l2,adversarial,perceptual,kl,total,disc_loss\n";
        out_ << std::setprecision(10);
    }
    void log(int step, double recon, double adv, double perc, double kl, double total,
             double disc) {
        out_ << step << ',' << recon << ',' << adv << ',' << perc << ',' << kl << ',' << total
             << ',' << disc << '\n';
    }

private:
    std::ofstream out_;
};

inline VaeArch arch_from_config(const Config& cfg) {
    VaeArch arch;
    arch.base = static_cast<int>(cfg.get_int("vae", "base_channels"));
    arch.latent_channels = static_cast<int>(cfg.get_int("vae", "latent_channels"));
    arch.groups = static_cast<int>(cfg.get_int("vae", "groups"));
    arch.use_gate_module = cfg.get_bool("vae", "use_gate_module");
    arch.double_activation = cfg.get_bool("vae", "double_activation");
    return arch;
}

// the perceptual stack is seeded independently of the run seed so runs stay
// comparable under a fixed config
inline void reseed_prefix(ParamStore& store, const std::string& prefix, uint64_t seed) {
    Rng rng(seed);
    for (const auto& p : store.all()) {
        if (p->name.rfind(prefix, 0) != 0) continue;
        if (p->name.ends_with(".b")) continue;  // biases stay zero
        const Shape4 s = p->value.shape();
        const int64_t fan_in = static_cast<int64_t>(s.c) * s.h * s.w;
        const float stddev = std::sqrt(2.0f / static_cast<float>(std::max<int64_t>(1, fan_in)));
        for (int64_t i = 0; i < p->value.numel(); ++i)
            p->value.data()[i] = rng.normalf() * stddev;
    }
}

// pool of (condition, target) rows per the configured training phases
inline std::vector<std::pair<const nn::Tensor*, const nn::Tensor*>> phase_pool(
    const std::vector<pipeline::TrainSample>& samples, const std::string& phases) {
    std::vector<std::pair<const nn::Tensor*, const nn::Tensor*>> pool;
    for (const auto& s : samples) {
        if (phases == "early" || phases == "both") pool.push_back({&s.condition, &s.early});
        if (phases == "late" || phases == "both") pool.push_back({&s.condition, &s.late});
    }
    if (pool.empty()) throw InvalidArgument("vae training: empty sample pool");
    return pool;
}

inline std::vector<std::shared_ptr<nn::Param>> params_with_prefixes(
    const ParamStore& store, const std::vector<std::string>& prefixes) {
    std::vector<std::shared_ptr<nn::Param>> out;
    for (const auto& p : store.all())
        for (const auto& pre : prefixes)
            if (p->name.rfind(pre, 0) == 0) {
                out.push_back(p);
                break;
            }
    return out;
}

inline double heldout_recon(const VaeModel& model, const std::vector<const Tensor*>& targets,
                            const std::vector<const Tensor*>& conditions, bool conditioned,
                            uint64_t seed) {
    const Tensor y = pipeline::stack_rows(targets);
    Graph g;
    auto yn = g.constant(y);
    auto [mean, logvar] = model.encode(g, yn);
    Rng eps_rng(Rng::mix(seed, 0x4E1D));
    const Tensor eps = Tensor::randn(mean->val.shape(), eps_rng);
    auto z = nn::reparameterize(g, mean, logvar, eps);
    NodeP y_hat;
    if (conditioned) {
        auto pyr = model.gce_forward(g, g.constant(pipeline::stack_rows(conditions)));
        y_hat = model.decode(g, z, &pyr);
    } else {
        y_hat = model.decode(g, z, nullptr);
    }
    return nn::mse_loss(g, y_hat, yn)->val.data()[0];
}

}  // namespace detail

// Backbone phase: encoder, decoder, and discriminator trained adversarially
// with the reconstruction + adversarial + perceptual + KL objective.
inline TrainStats train_vae_backbone(const pipeline::LoadedDataset& data, const Config& cfg,
                                     const fs::path& out_dir, uint64_t run_seed) {
    nn::set_compute_threads(static_cast<int>(cfg.get_int("run", "threads")));
    const int steps = static_cast<int>(cfg.get_int("vae", "steps"));
    const int batch = static_cast<int>(cfg.get_int("vae", "batch"));
    const double lr = cfg.get_real("vae", "lr");
    const double b1 = cfg.get_real("vae", "adam_beta1");
    const double b2 = cfg.get_real("vae", "adam_beta2");
    const VaeLossWeights weights{cfg.get_real("vae", "w_recon"), cfg.get_real("vae", "w_adv"),
                                 cfg.get_real("vae", "w_perc"), cfg.get_real("vae", "w_kl"),
                                 cfg.get_bool("vae", "adv_nonsaturating")};

    ParamStore store(Rng::mix(run_seed, 0x7AE0A11));
    VaeModel model(store, detail::arch_from_config(cfg));
    PatchDiscriminator disc(store, 1, 16, 8);
    PerceptualNet perc(store, 1, 8);
    detail::reseed_prefix(store, "perc.",
                          static_cast<uint64_t>(cfg.get_int("vae", "perceptual_seed")));

    const auto pool = detail::phase_pool(data.train, cfg.get_str("vae", "train_phases"));
    std::vector<const Tensor*> heldout;
    const auto& heldout_src = data.test.empty() ? data.train : data.test;
    for (size_t i = 0; i < std::min<size_t>(8, heldout_src.size()); ++i)
        heldout.push_back(&heldout_src[i].late);

    Adam opt_g(lr, b1, b2), opt_d(lr, b1, b2);
    const auto g_params = detail::params_with_prefixes(store, {"enc.", "dec."});
    const auto d_params = detail::params_with_prefixes(store, {"disc."});

    fs::create_directories(out_dir / "logs");
    fs::create_directories(out_dir / "checkpoints");
    TrainStats stats;
    stats.steps = steps;
    stats.loss_log_path = out_dir / "logs" / "vae_loss.csv";
    stats.checkpoint_path = out_dir / "checkpoints" / "vae.ckpt";
    detail::LossCsv csv(stats.loss_log_path);

    stats.heldout_first = heldout.empty()
                              ? 0.0
                              : detail::heldout_recon(model, heldout, {}, false, run_seed);

    Rng batch_rng(Rng::mix(run_seed, 0xBA7C4));
    Rng eps_rng(Rng::mix(run_seed, 0xE9511));

    for (int step = 1; step <= steps; ++step) {
        std::vector<const Tensor*> rows;
        for (int i = 0; i < batch; ++i)
            rows.push_back(pool[batch_rng.uniform_int(0, static_cast<int>(pool.size()) - 1)]
                               .second);
        const Tensor y = pipeline::stack_rows(rows);

        // generator step
        Adam::zero_all(store);
        Tensor y_hat_value;
        double recon_v, adv_v, perc_v, kl_v, total_v;
        {
            Graph g;
            auto yn = g.constant(y);
            auto [mean, logvar] = model.encode(g, yn);
            const Tensor eps = Tensor::randn(mean->val.shape(), eps_rng);
            auto z = nn::reparameterize(g, mean, logvar, eps);
            auto y_hat = model.decode(g, z, nullptr);
            auto recon = nn::mse_loss(g, y_hat, yn);
            auto d_fake = disc.mean_logit(g, y_hat);
            // non-saturating: -log sigmoid(d) = softplus(-d);
            // literal form: log(1 - sigmoid(d)) = -softplus(d)
            auto adv = weights.adv_nonsaturating
                           ? nn::softplus(g, nn::scale(g, d_fake, -1.0f))
                           : nn::scale(g, nn::softplus(g, d_fake), -1.0f);
            auto percd = perc.distance(g, yn, y_hat);
            auto kl = nn::kl_loss(g, mean, logvar);
            auto total = nn::weighted_sum(
                g, {recon, adv, percd, kl},
                {static_cast<float>(weights.recon), static_cast<float>(weights.adv),
                 static_cast<float>(weights.perc), static_cast<float>(weights.kl)});
            g.backward(total);
            recon_v = recon->val.data()[0];
            adv_v = adv->val.data()[0];
            perc_v = percd->val.data()[0];
            kl_v = kl->val.data()[0];
            total_v = total->val.data()[0];
            y_hat_value = y_hat->val.clone();
        }
        opt_g.step(g_params);

        // discriminator step on the detached reconstruction
        Adam::zero_all(store);
        double disc_v;
        {
            Graph g;
            auto d_real = disc.mean_logit(g, g.constant(y));
            auto d_fake = disc.mean_logit(g, g.constant(y_hat_value));
            auto loss = nn::weighted_sum(
                g,
                {nn::softplus(g, nn::scale(g, d_real, -1.0f)), nn::softplus(g, d_fake)},
                {1.0f, 1.0f});
            g.backward(loss);
            disc_v = loss->val.data()[0];
        }
        opt_d.step(d_params);

        if (!std::isfinite(total_v) || !std::isfinite(disc_v))
            throw NumericalError("vae training: non-finite loss at step " +
                                 std::to_string(step));
        csv.log(step, recon_v, adv_v, perc_v, kl_v, total_v, disc_v);
        if (step == 1) stats.first_loss = recon_v;
        stats.last_loss = recon_v;
    }

    stats.heldout_last = heldout.empty()
                             ? 0.0
                             : detail::heldout_recon(model, heldout, {}, false, run_seed);
    save_checkpoint(stats.checkpoint_path, store, cfg, steps);
    return stats;
}

// GCE phase: backbone and discriminator frozen, only the gated conditional
// encoder and the fusion projections receive updates; the KL term is dropped.
inline TrainStats train_gce(const pipeline::LoadedDataset& data, const fs::path& backbone_ckpt,
                            const Config& cfg, const fs::path& out_dir, uint64_t run_seed) {
    if (!fs::exists(backbone_ckpt))
        throw IoError("train_gce: missing backbone checkpoint " + backbone_ckpt.string());
    nn::set_compute_threads(static_cast<int>(cfg.get_int("run", "threads")));

    const nn::CheckpointMeta meta = nn::peek_checkpoint(backbone_ckpt);
    ParamStore store(Rng::mix(run_seed, 0x6CE0A11));
    VaeModel model(store, detail::arch_from_config(meta.config));
    PatchDiscriminator disc(store, 1, 16, 8);
    PerceptualNet perc(store, 1, 8);
    nn::load_checkpoint(backbone_ckpt, store);

    store.set_trainable_all(false);
    store.set_trainable_prefix("gce.", true);
    store.set_trainable_prefix("fusion.", true);

    const int steps = static_cast<int>(cfg.get_int("vae", "gce_steps"));
    const int batch = static_cast<int>(cfg.get_int("vae", "gce_batch"));
    const VaeLossWeights weights{cfg.get_real("vae", "w_recon"), cfg.get_real("vae", "w_adv"),
                                 cfg.get_real("vae", "w_perc"), 0.0,
                                 cfg.get_bool("vae", "adv_nonsaturating")};
    Adam opt(cfg.get_real("vae", "gce_lr"), cfg.get_real("vae", "adam_beta1"),
             cfg.get_real("vae", "adam_beta2"));
    const auto params = detail::params_with_prefixes(store, {"gce.", "fusion."});

    const std::string phase = cfg.get_str("vae", "gce_phase");
    const auto pool = detail::phase_pool(data.train, phase);
    std::vector<const Tensor*> heldout_y, heldout_x;
    const auto& heldout_src = data.test.empty() ? data.train : data.test;
    for (size_t i = 0; i < std::min<size_t>(8, heldout_src.size()); ++i) {
        heldout_y.push_back(phase == "early" ? &heldout_src[i].early : &heldout_src[i].late);
        heldout_x.push_back(&heldout_src[i].condition);
    }

    fs::create_directories(out_dir / "logs");
    fs::create_directories(out_dir / "checkpoints");
    TrainStats stats;
    stats.steps = steps;
    stats.loss_log_path = out_dir / "logs" / "gce_loss.csv";
    stats.checkpoint_path = out_dir / "checkpoints" / "gce.ckpt";
    detail::LossCsv csv(stats.loss_log_path);

    stats.heldout_first =
        heldout_y.empty()
            ? 0.0
            : detail::heldout_recon(model, heldout_y, heldout_x, true, run_seed);

    Rng batch_rng(Rng::mix(run_seed, 0xBA7C5));
    Rng eps_rng(Rng::mix(run_seed, 0xE9512));

    for (int step = 1; step <= steps; ++step) {
        std::vector<const Tensor*> yrows, xrows;
        for (int i = 0; i < batch; ++i) {
            const auto& pick =
                pool[batch_rng.uniform_int(0, static_cast<int>(pool.size()) - 1)];
            xrows.push_back(pick.first);
            yrows.push_back(pick.second);
        }
        const Tensor y = pipeline::stack_rows(yrows);
        const Tensor x = pipeline::stack_rows(xrows);

        Adam::zero_all(store);
        double recon_v, adv_v, perc_v, total_v;
        {
            Graph g;
            auto yn = g.constant(y);
            auto [mean, logvar] = model.encode(g, yn);
            const Tensor eps = Tensor::randn(mean->val.shape(), eps_rng);
            auto z = nn::reparameterize(g, mean, logvar, eps);
            auto pyr = model.gce_forward(g, g.constant(x));
            auto y_hat = model.decode(g, z, &pyr);
            auto recon = nn::mse_loss(g, y_hat, yn);
            auto d_fake = disc.mean_logit(g, y_hat);
            auto adv = weights.adv_nonsaturating
                           ? nn::softplus(g, nn::scale(g, d_fake, -1.0f))
                           : nn::scale(g, nn::softplus(g, d_fake), -1.0f);
            auto percd = perc.distance(g, yn, y_hat);
            auto total = nn::weighted_sum(
                g, {recon, adv, percd},
                {static_cast<float>(weights.recon), static_cast<float>(weights.adv),
                 static_cast<float>(weights.perc)});
            g.backward(total);
            recon_v = recon->val.data()[0];
            adv_v = adv->val.data()[0];
            perc_v = percd->val.data()[0];
            total_v = total->val.data()[0];
        }
        opt.step(params);

        if (!std::isfinite(total_v))
            throw NumericalError("gce training: non-finite loss at step " +
                                 std::to_string(step));
        csv.log(step, recon_v, adv_v, perc_v, 0.0, total_v, 0.0);
        if (step == 1) stats.first_loss = recon_v;
        stats.last_loss = recon_v;
    }

    if (!heldout_y.empty()) {
        stats.heldout_last = detail::heldout_recon(model, heldout_y, heldout_x, true, run_seed);
        stats.heldout_uncond =
            detail::heldout_recon(model, heldout_y, {}, false, run_seed);
    }
    save_checkpoint(stats.checkpoint_path, store, cfg, steps);
    return stats;
}

}  // namespace angiodiff::vae
