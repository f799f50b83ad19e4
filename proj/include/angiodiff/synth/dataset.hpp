#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "angiodiff/core/config.hpp"
#include "angiodiff/core/png_io.hpp"
#include "angiodiff/synth/augment.hpp"
#include "angiodiff/synth/triplet.hpp"
#include "angiodiff/synth/vessel_tree.hpp"

namespace angiodiff::synth {

namespace fs = std::filesystem;

struct ManifestEntry {
    std::string id;
    std::string split;  // "train" | "test"
    uint64_t seed = 0;
    bool has_lesions = false;
};

struct DatasetManifest {
    int resolution = 0;
    int n_train = 0, n_test = 0;
    uint64_t root_seed = 0;
    std::vector<ManifestEntry> entries;
};

inline std::string sample_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", index);
    return std::string(buf);
}

inline void write_triplet(const fs::path& dir, const PairedTriplet& t) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("build_dataset: cannot create " + dir.string());
    write_png(dir / "slo.png", t.slo);
    write_png(dir / "early.png", t.early_fa);
    write_png(dir / "late.png", t.late_fa);
    if (!t.lesion_mask.empty()) write_png(dir / "lesion_mask.png", t.lesion_mask);

    nlohmann::json meta;
    meta["seed"] = t.seed;
    meta["homography"] = t.misalignment.m;  // row-major, exact round-trip decimals
    std::ofstream out(dir / "meta.json");
    if (!out) throw IoError("build_dataset: cannot write " + (dir / "meta.json").string());
    out << meta.dump(2) << "\n";
}

// Writes n_train + n_test deterministic triplets under
// <root>/{train,test}/<id>/ with a manifest. Per-sample seeds are derived
// from root_seed with disjoint index tags, so the two splits never share one.
inline DatasetManifest build_dataset(int n_train, int n_test, uint64_t root_seed,
                                     const fs::path& out_dir, int resolution = 64,
                                     double misalign_px = 2.5, double lesion_prob = 0.7,
                                     int max_lesions = 3) {
    if (n_train < 0 || n_test < 0) throw InvalidArgument("build_dataset: negative counts");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
        throw IoError("build_dataset: cannot create output dir " + out_dir.string());

    DatasetManifest man;
    man.resolution = resolution;
    man.n_train = n_train;
    man.n_test = n_test;
    man.root_seed = root_seed;

    std::set<uint64_t> seen;
    for (int k = 0; k < n_train + n_test; ++k) {
        const bool is_train = k < n_train;
        const uint64_t seed = Rng::mix(root_seed, static_cast<uint64_t>(k) + 1);
        if (!seen.insert(seed).second)
            throw NumericalError("build_dataset: per-sample seed collision");

        const VesselMap vm = generate_vessel_tree(seed, resolution, resolution);
        Rng lrng = Rng(seed).fork(0xB10B);
        const LesionSpec lesions =
            random_lesions(lrng, resolution, resolution, lesion_prob, max_lesions);
        const PairedTriplet t = render_triplet(vm, lesions, misalign_px, seed);

        ManifestEntry e;
        e.id = sample_id(k);
        e.split = is_train ? "train" : "test";
        e.seed = seed;
        e.has_lesions = !lesions.blobs.empty();
        write_triplet(out_dir / e.split / e.id, t);
        man.entries.push_back(e);
    }

    nlohmann::json j;
    j["resolution"] = man.resolution;
    j["n_train"] = man.n_train;
    j["n_test"] = man.n_test;
    j["root_seed"] = man.root_seed;
    for (const auto& e : man.entries)
        j["entries"].push_back({{"id", e.id}, {"split", e.split}, {"seed", e.seed},
                                {"has_lesions", e.has_lesions}});
    std::ofstream out(out_dir / "manifest.json");
    if (!out) throw IoError("build_dataset: cannot write manifest under " + out_dir.string());
    out << j.dump(2) << "\n";
    return man;
}

inline DatasetManifest load_manifest(const fs::path& root) {
    std::ifstream in(root / "manifest.json");
    if (!in) throw IoError("dataset: missing manifest at " + (root / "manifest.json").string());
    nlohmann::json j;
    in >> j;
    DatasetManifest man;
    man.resolution = j.at("resolution").get<int>();
    man.n_train = j.at("n_train").get<int>();
    man.n_test = j.at("n_test").get<int>();
    man.root_seed = j.at("root_seed").get<uint64_t>();
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.id = je.at("id").get<std::string>();
        e.split = je.at("split").get<std::string>();
        e.seed = je.at("seed").get<uint64_t>();
        e.has_lesions = je.value("has_lesions", false);
        man.entries.push_back(e);
    }
    return man;
}

inline fs::path sample_dir(const fs::path& root, const ManifestEntry& e) {
    return root / e.split / e.id;
}

}  // namespace angiodiff::synth
