#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "angiodiff/core/png_io.hpp"
#include "angiodiff/nn/tensor.hpp"
#include "angiodiff/synth/dataset.hpp"

namespace angiodiff::pipeline {

namespace fs = std::filesystem;
using nn::Shape4;
using nn::Tensor;

inline Tensor image_to_tensor(const Image& img) {
    Tensor t({1, img.channels(), img.height(), img.width()});
    std::copy(img.data().begin(), img.data().end(), t.data());
    return t;
}

inline Image tensor_to_image(const Tensor& t, int n = 0) {
    const Shape4 s = t.shape();
    Image img(s.h, s.w, s.c);
    std::copy_n(t.sample(n), t.sample_size(), img.data().data());
    return img;
}

// (1,C,H,W) rows -> (N,C,H,W)
inline Tensor stack_rows(const std::vector<const Tensor*>& rows) {
    if (rows.empty()) throw InvalidArgument("stack_rows: empty batch");
    const Shape4 s = rows[0]->shape();
    Tensor out({static_cast<int>(rows.size()), s.c, s.h, s.w});
    for (size_t i = 0; i < rows.size(); ++i) {
        if (!(rows[i]->shape() == s)) throw InvalidArgument("stack_rows: shape mismatch");
        std::copy_n(rows[i]->data(), rows[i]->numel(), out.sample(static_cast<int>(i)));
    }
    return out;
}

struct TrainSample {
    std::string id;
    uint64_t seed = 0;
    bool has_lesions = false;
    Tensor condition;  // (1,3,H,W): sharpened SLO when enabled
    Tensor early;      // (1,1,H,W)
    Tensor late;       // (1,1,H,W): registered when enabled
    Image lesion_mask;  // empty when absent
};

struct LoadedDataset {
    int resolution = 0;
    std::vector<TrainSample> train, test;
};

// Loads the dataset as the training stages consume it. With the sharpening /
// registration switches on, the preprocessed files must exist; a missing one
// names the offending sample.
inline LoadedDataset load_dataset(const fs::path& root, bool use_sharpened,
                                  bool use_registered) {
    const synth::DatasetManifest man = synth::load_manifest(root);
    LoadedDataset out;
    out.resolution = man.resolution;
    for (const auto& e : man.entries) {
        const fs::path dir = synth::sample_dir(root, e);
        TrainSample s;
        s.id = e.id;
        s.seed = e.seed;
        s.has_lesions = e.has_lesions;

        fs::path slo = dir / "slo.png";
        if (use_sharpened) {
            slo = dir / "slo_sharpened.png";
            if (!fs::exists(slo))
                throw InvalidArgument("dataset: missing sharpened SLO for sample " + e.id +
                                      " (run the preprocess step)");
        }
        fs::path late = dir / "late.png";
        if (use_registered) {
            late = dir / "late_registered.png";
            if (!fs::exists(late))
                throw InvalidArgument("dataset: missing registration output for sample " +
                                      e.id + " (run the preprocess step)");
        }
        s.condition = image_to_tensor(read_png(slo));
        s.early = image_to_tensor(read_png(dir / "early.png"));
        s.late = image_to_tensor(read_png(late));
        if (fs::exists(dir / "lesion_mask.png")) s.lesion_mask = read_png(dir / "lesion_mask.png");
        (e.split == "train" ? out.train : out.test).push_back(std::move(s));
    }
    return out;
}

}  // namespace angiodiff::pipeline
