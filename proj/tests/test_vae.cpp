#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "angiodiff/nn/checkpoint.hpp"
#include "angiodiff/synth/dataset.hpp"
#include "angiodiff/vae/api.hpp"
#include "angiodiff/vae/train.hpp"

using namespace angiodiff;
using namespace angiodiff::vae;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    ParamStore store;
    VaeModel model;
    explicit Fixture(uint64_t seed, VaeArch arch = {}) : store(seed), model(store, arch) {}
};

Tensor random_image(Shape4 s, uint64_t seed) {
    Rng rng(seed);
    Tensor t(s);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<float>(rng.uniform());
    return t;
}

}  // namespace

TEST_CASE("encode maps H x W to latent H/8 x W/8") {
    Fixture f(1);
    const LatentDistribution d = vae_encode(f.model, random_image({1, 1, 64, 64}, 2));
    REQUIRE(d.mean.shape() == Shape4{1, 4, 8, 8});
    REQUIRE(d.logvar.shape() == Shape4{1, 4, 8, 8});

    const LatentDistribution d2 = vae_encode(f.model, random_image({1, 1, 64, 64}, 2));
    REQUIRE(d.mean.vec() == d2.mean.vec());  // deterministic
    REQUIRE(d.logvar.vec() == d2.logvar.vec());

    REQUIRE_THROWS_AS(vae_encode(f.model, random_image({1, 1, 60, 64}, 3)), InvalidArgument);
}

TEST_CASE("encode handles the paper-scale resolution") {
    Fixture f(4);
    const LatentDistribution d = vae_encode(f.model, random_image({1, 1, 512, 512}, 5));
    REQUIRE(d.mean.shape() == Shape4{1, 4, 64, 64});
}

TEST_CASE("sample_latent follows the reparameterized distribution") {
    LatentDistribution d;
    d.mean = Tensor({1, 2, 2, 2});
    d.logvar = Tensor({1, 2, 2, 2});
    Rng rng(6);
    for (int64_t i = 0; i < d.mean.numel(); ++i) d.mean.data()[i] = rng.normalf();

    // zero-variance limit
    d.logvar.fill(-40.0f);
    const LatentGrid z = sample_latent(d, 7);
    for (int64_t i = 0; i < z.values.numel(); ++i)
        REQUIRE(std::abs(z.values.data()[i] - d.mean.data()[i]) < 1e-8f);

    // same seed twice
    REQUIRE(sample_latent(d, 8).values.vec() == sample_latent(d, 8).values.vec());

    // unit-variance Monte Carlo
    d.mean.fill(0.0f);
    d.logvar.fill(0.0f);
    const int draws = 10000;
    std::vector<double> sum(d.mean.numel(), 0.0), sumsq(d.mean.numel(), 0.0);
    for (int k = 0; k < draws; ++k) {
        const LatentGrid s = sample_latent(d, 1000 + k);
        for (int64_t i = 0; i < s.values.numel(); ++i) {
            sum[i] += s.values.data()[i];
            sumsq[i] += static_cast<double>(s.values.data()[i]) * s.values.data()[i];
        }
    }
    for (size_t i = 0; i < sum.size(); ++i) {
        const double var = sumsq[i] / draws - (sum[i] / draws) * (sum[i] / draws);
        REQUIRE(var > 0.9);
        REQUIRE(var < 1.1);
    }
}

TEST_CASE("gate module with zero weights passes exactly half the features") {
    Fixture gated(11);
    VaeArch plain_arch;
    plain_arch.use_gate_module = false;
    Fixture plain(11, plain_arch);  // same seed, same creation order: identical weights

    for (const char* name : {"gce.b0.gate.w", "gce.b0.gate.b", "gce.b1.gate.w",
                             "gce.b1.gate.b", "gce.b2.gate.w", "gce.b2.gate.b"})
        gated.store.find(name)->value.fill(0.0f);

    const Tensor x = random_image({1, 3, 64, 64}, 12);
    const FeaturePyramid pg = vae_gce_forward(gated.model, x);
    const FeaturePyramid pp = vae_gce_forward(plain.model, x);

    // zero gate weights only affect the first level exactly (downstream
    // levels see the halved input), so compare level 0
    REQUIRE(pg.levels[0].shape() == Shape4{1, 16, 32, 32});
    for (int64_t i = 0; i < pg.levels[0].numel(); ++i)
        REQUIRE(pg.levels[0].data()[i] == 0.5f * pp.levels[0].data()[i]);
}

TEST_CASE("gating keeps features within the pre-gate magnitude") {
    Fixture gated(13);
    VaeArch plain_arch;
    plain_arch.use_gate_module = false;
    Fixture plain(13, plain_arch);

    const Tensor x = random_image({1, 3, 64, 64}, 14);
    // compare level by level with matching inputs: feed the gated level
    // outputs through the plain blocks is not meaningful, so check level 0
    // (same input) and rely on sigmoid range for deeper levels
    const FeaturePyramid pg = vae_gce_forward(gated.model, x);
    const FeaturePyramid pp = vae_gce_forward(plain.model, x);
    for (int64_t i = 0; i < pg.levels[0].numel(); ++i)
        REQUIRE(std::abs(pg.levels[0].data()[i]) <= std::abs(pp.levels[0].data()[i]));

    // pyramid geometry
    REQUIRE(pg.levels[0].shape() == Shape4{1, 16, 32, 32});
    REQUIRE(pg.levels[1].shape() == Shape4{1, 32, 16, 16});
    REQUIRE(pg.levels[2].shape() == Shape4{1, 64, 8, 8});
}

TEST_CASE("double_activation wraps the gated product in a second sigmoid") {
    VaeArch arch;
    arch.double_activation = true;
    Fixture twice(15, arch);
    Fixture once(15);
    const Tensor x = random_image({1, 3, 32, 32}, 16);
    const FeaturePyramid a = vae_gce_forward(twice.model, x);
    const FeaturePyramid b = vae_gce_forward(once.model, x);
    for (int64_t i = 0; i < a.levels[0].numel(); ++i) {
        const float expect = 1.0f / (1.0f + std::exp(-b.levels[0].data()[i]));
        REQUIRE(std::abs(a.levels[0].data()[i] - expect) < 1e-6f);
    }
}

TEST_CASE("zero pyramid with zero-initialized fusion reproduces the plain decoder") {
    Fixture f(17);
    Rng rng(18);
    const LatentGrid z{Tensor::randn({1, 4, 8, 8}, rng)};

    FeaturePyramid zero_pyr;
    zero_pyr.levels = {Tensor({1, 16, 32, 32}, 0.0f), Tensor({1, 32, 16, 16}, 0.0f),
                       Tensor({1, 64, 8, 8}, 0.0f)};

    const Tensor with_none = vae_decode(f.model, z, nullptr);
    const Tensor with_zero = vae_decode(f.model, z, &zero_pyr);
    REQUIRE(with_none.shape() == Shape4{1, 1, 64, 64});
    REQUIRE(with_none.vec() == with_zero.vec());
}

TEST_CASE("decode rejects mismatched pyramid shapes") {
    Fixture f(19);
    Rng rng(20);
    const LatentGrid z{Tensor::randn({1, 4, 8, 8}, rng)};
    FeaturePyramid bad;
    bad.levels = {Tensor({1, 16, 16, 16}, 0.0f), Tensor({1, 32, 16, 16}, 0.0f),
                  Tensor({1, 64, 8, 8}, 0.0f)};
    REQUIRE_THROWS_AS(vae_decode(f.model, z, &bad), InvalidArgument);
}

TEST_CASE("fusion responds to the pyramid after one training step") {
    Fixture f(21);
    Rng rng(22);
    const Tensor z = Tensor::randn({1, 4, 8, 8}, rng);
    const Tensor x = random_image({1, 3, 64, 64}, 23);

    // one update: gradients flow into the zero-initialized fusion projections
    {
        Graph g;
        auto pyr = f.model.gce_forward(g, g.constant(x));
        auto y = f.model.decode(g, g.constant(z), &pyr);
        auto loss = nn::mse_loss(g, y, g.constant(Tensor(y->val.shape(), 0.25f)));
        nn::Adam::zero_all(f.store);
        g.backward(loss);
        nn::Adam opt(1e-2);
        std::vector<std::shared_ptr<nn::Param>> fusion;
        for (const auto& p : f.store.all())
            if (p->name.rfind("fusion.", 0) == 0) fusion.push_back(p);
        opt.step(fusion);
    }

    // finite difference on one pyramid element must now move the output
    FeaturePyramid pyr = vae_gce_forward(f.model, x);
    const Tensor base = vae_decode(f.model, LatentGrid{z}, &pyr);
    pyr.levels[2].data()[5] += 0.5f;
    const Tensor moved = vae_decode(f.model, LatentGrid{z}, &pyr);
    double diff = 0;
    for (int64_t i = 0; i < base.numel(); ++i)
        diff += std::abs(static_cast<double>(base.data()[i]) - moved.data()[i]);
    REQUIRE(diff > 0.0);
}

TEST_CASE("encode-sample-decode round-trips the spatial shape") {
    Fixture f(24);
    for (const auto& [h, w] : std::vector<std::pair<int, int>>{{64, 64}, {24, 40}}) {
        const Tensor y = random_image({1, 1, h, w}, 25);
        const LatentDistribution d = vae_encode(f.model, y);
        REQUIRE(d.mean.shape() == Shape4{1, 4, h / 8, w / 8});
        const Tensor out = vae_decode(f.model, sample_latent(d, 26), nullptr);
        REQUIRE(out.shape() == Shape4{1, 1, h, w});
    }
}

TEST_CASE("vae_loss matches its closed forms") {
    LatentDistribution d;
    d.mean = Tensor({1, 4, 2, 2}, 0.0f);
    d.logvar = Tensor({1, 4, 2, 2}, 0.0f);
    const Tensor y = random_image({1, 1, 16, 16}, 27);
    VaeLossWeights w;

    const VaeLossBreakdown same = vae_loss(y, y, 0.0, d, w);
    REQUIRE(same.recon_l2 == 0.0);
    REQUIRE(same.kl == 0.0);

    d.mean.fill(1.0f);
    const VaeLossBreakdown klb = vae_loss(y, y, 0.0, d, w);
    REQUIRE(std::abs(klb.kl - 0.5) < 1e-7);

    const Tensor zeros({1, 1, 8, 8}, 0.0f), ones({1, 1, 8, 8}, 1.0f);
    d.mean.fill(0.0f);
    const VaeLossBreakdown rec = vae_loss(zeros, ones, 0.0, d, w);
    REQUIRE(std::abs(rec.recon_l2 - 1.0) < 1e-7);

    // total is the weighted sum of the parts
    const VaeLossBreakdown any = vae_loss(zeros, ones, 0.3, d, w);
    REQUIRE(std::abs(any.total - (w.recon * any.recon_l2 + w.adv * any.adversarial +
                                  w.perc * any.perceptual + w.kl * any.kl)) < 1e-12);
}

TEST_CASE("kl term is nonnegative and zero only at the standard normal") {
    Rng rng(28);
    VaeLossWeights w;
    const Tensor y({1, 1, 8, 8}, 0.0f);
    for (int trial = 0; trial < 50; ++trial) {
        LatentDistribution d;
        d.mean = Tensor::randn({1, 2, 2, 2}, rng);
        d.logvar = Tensor::randn({1, 2, 2, 2}, rng, 0.5f);
        const VaeLossBreakdown b = vae_loss(y, y, 0.0, d, w);
        REQUIRE(b.kl >= 0.0);
    }
    LatentDistribution d;
    d.mean = Tensor({1, 2, 2, 2}, 0.0f);
    d.logvar = Tensor({1, 2, 2, 2}, 0.0f);
    REQUIRE(vae_loss(y, y, 0.0, d, w).kl == 0.0);
}

TEST_CASE("discriminator_loss follows the printed form on logits") {
    const double at_zero = discriminator_loss(0.0, 0.0);
    REQUIRE(std::abs(at_zero - 2.0 * std::log(0.5)) < 1e-12);

    // perfect-discriminator limit walks toward the infimum
    REQUIRE(discriminator_loss(5.0, -5.0) < at_zero);
    REQUIRE(discriminator_loss(20.0, -20.0) < discriminator_loss(5.0, -5.0));

    // swapping real/fake logits mirrors the two terms
    const double a = discriminator_loss(2.0, -3.0);
    const double b = discriminator_loss(-3.0, 2.0);
    REQUIRE(std::abs(a - (log_sigmoid(-2.0) + log_sigmoid(-3.0))) < 1e-12);
    REQUIRE(std::abs(b - (log_sigmoid(3.0) + log_sigmoid(2.0))) < 1e-12);
}

namespace {

fs::path make_toy_dataset(const std::string& tag, int n_train, int n_test, int res) {
    const fs::path root = fs::temp_directory_path() / ("angiodiff_vae_" + tag);
    fs::remove_all(root);
    synth::build_dataset(n_train, n_test, 5, root, res, 0.0, 0.5, 2);
    return root;
}

Config toy_config(int res) {
    Config cfg = Config::defaults();
    cfg.set_num("run", "resolution", res);
    cfg.set("vae", "base_channels", "8");
    cfg.set("vae", "steps", "30");
    cfg.set("vae", "gce_steps", "20");
    cfg.set("vae", "batch", "2");
    cfg.set("vae", "gce_batch", "2");
    return cfg;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("vae smoke training decreases the loss deterministically") {
    const fs::path root = make_toy_dataset("smoke", 8, 4, 32);
    const auto data = pipeline::load_dataset(root, false, false);
    const Config cfg = toy_config(32);

    const fs::path run_a = fs::temp_directory_path() / "angiodiff_vae_run_a";
    const fs::path run_b = fs::temp_directory_path() / "angiodiff_vae_run_b";
    fs::remove_all(run_a);
    fs::remove_all(run_b);

    const TrainStats a = train_vae_backbone(data, cfg, run_a, 11);
    const TrainStats b = train_vae_backbone(data, cfg, run_b, 11);

    REQUIRE(a.last_loss < a.first_loss);
    REQUIRE(std::isfinite(a.last_loss));
    // bitwise-reproducible loss curve and checkpoint
    REQUIRE(file_bytes(a.loss_log_path) == file_bytes(b.loss_log_path));
    REQUIRE(file_bytes(a.checkpoint_path) == file_bytes(b.checkpoint_path));

    fs::remove_all(root);
    fs::remove_all(run_a);
    fs::remove_all(run_b);
}

TEST_CASE("zero-step training checkpoints the initialization") {
    const fs::path root = make_toy_dataset("zerostep", 4, 2, 32);
    const auto data = pipeline::load_dataset(root, false, false);
    Config cfg = toy_config(32);
    cfg.set("vae", "steps", "0");

    const fs::path run = fs::temp_directory_path() / "angiodiff_vae_zerostep";
    fs::remove_all(run);
    const TrainStats st = train_vae_backbone(data, cfg, run, 33);

    // reconstruct the exact initialization and compare content hashes
    ParamStore fresh(Rng::mix(33, 0x7AE0A11));
    VaeModel model(fresh, detail::arch_from_config(cfg));
    PatchDiscriminator disc(fresh, 1, 16, 8);
    PerceptualNet perc(fresh, 1, 8);
    detail::reseed_prefix(fresh, "perc.",
                          static_cast<uint64_t>(cfg.get_int("vae", "perceptual_seed")));

    ParamStore loaded(0);
    VaeModel model2(loaded, detail::arch_from_config(cfg));
    PatchDiscriminator disc2(loaded, 1, 16, 8);
    PerceptualNet perc2(loaded, 1, 8);
    nn::load_checkpoint(st.checkpoint_path, loaded);
    REQUIRE(loaded.content_hash() == fresh.content_hash());

    fs::remove_all(root);
    fs::remove_all(run);
}

TEST_CASE("gce training freezes the backbone and drops the KL term") {
    const fs::path root = make_toy_dataset("gce", 8, 4, 32);
    const auto data = pipeline::load_dataset(root, false, false);
    const Config cfg = toy_config(32);

    const fs::path run = fs::temp_directory_path() / "angiodiff_vae_gce";
    fs::remove_all(run);
    const TrainStats backbone = train_vae_backbone(data, cfg, run, 44);

    // hash of backbone weights before GCE training
    ParamStore before(0);
    VaeModel m1(before, detail::arch_from_config(cfg));
    PatchDiscriminator d1(before, 1, 16, 8);
    PerceptualNet p1(before, 1, 8);
    nn::load_checkpoint(backbone.checkpoint_path, before);
    const uint64_t enc_dec_before =
        before.content_hash("enc.") ^ before.content_hash("dec.") ^
        before.content_hash("disc.");
    const uint64_t gce_before = before.content_hash("gce.") ^ before.content_hash("fusion.");

    const TrainStats gce = train_gce(data, backbone.checkpoint_path, cfg, run, 44);

    ParamStore after(0);
    VaeModel m2(after, detail::arch_from_config(cfg));
    PatchDiscriminator d2(after, 1, 16, 8);
    PerceptualNet p2(after, 1, 8);
    nn::load_checkpoint(gce.checkpoint_path, after);
    REQUIRE((after.content_hash("enc.") ^ after.content_hash("dec.") ^
             after.content_hash("disc.")) == enc_dec_before);
    REQUIRE((after.content_hash("gce.") ^ after.content_hash("fusion.")) != gce_before);

    // KL column is written as zero
    std::ifstream log(gce.loss_log_path);
    std::string line;
    std::getline(log, line);  // header
    REQUIRE(line == "step,recon_l2,adversarial,perceptual,kl,total,disc_loss");
    while (std::getline(log, line)) {
        std::istringstream ss(line);
        std::string field;
        for (int i = 0; i < 5; ++i) std::getline(ss, field, ',');
        REQUIRE(std::stod(field) == 0.0);
    }

    // missing checkpoint is an io error
    REQUIRE_THROWS_AS(train_gce(data, run / "nope.ckpt", cfg, run, 44), IoError);

    fs::remove_all(root);
    fs::remove_all(run);
}
