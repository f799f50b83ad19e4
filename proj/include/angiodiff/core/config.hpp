#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "angiodiff/core/errors.hpp"

namespace angiodiff {

// Run configuration: INI-style sections of key=value pairs. The full config
// is snapshotted into every checkpoint and report so a result is reproducible
// from its artifact alone. Each ablation switch is one boolean/enum key:
//   vae.use_gate_module, vae.use_gce, diffusion.use_ctrd,
//   diffusion.ctrd_alpha_mode, diffusion.use_lfen,
//   preprocess.use_image_sharpening, preprocess.use_registration.
class Config {
public:
    static Config defaults() {
        Config c;
        auto& run = c.sections_["run"];
        run["resolution"] = "64";
        run["threads"] = "2";
        run["seed"] = "1";

        auto& data = c.sections_["data"];
        data["n_train"] = "256";
        data["n_test"] = "64";
        data["misalign_px"] = "2.5";
        data["lesion_prob"] = "0.7";
        data["max_lesions"] = "3";

        auto& pre = c.sections_["preprocess"];
        pre["use_image_sharpening"] = "true";
        pre["use_registration"] = "true";
        pre["sector_radii"] = "3,5,9";
        pre["sector_count"] = "8";
        pre["sector_alpha"] = "0.5";
        pre["prefilter"] = "true";
        pre["ratio_test"] = "0.75";
        pre["ransac_threshold_px"] = "3.0";
        pre["ransac_iters"] = "2000";
        pre["min_inliers"] = "4";

        auto& vae = c.sections_["vae"];
        vae["base_channels"] = "16";
        vae["latent_channels"] = "4";
        vae["groups"] = "8";
        vae["batch"] = "2";
        vae["steps"] = "200";
        vae["lr"] = "1e-3";
        vae["adam_beta1"] = "0.9";
        vae["adam_beta2"] = "0.999";
        vae["w_recon"] = "1.0";
        vae["w_adv"] = "0.05";
        vae["w_perc"] = "0.1";
        vae["w_kl"] = "1e-6";
        vae["adv_nonsaturating"] = "true";
        vae["double_activation"] = "false";
        vae["use_gate_module"] = "true";
        vae["use_gce"] = "true";
        vae["train_phases"] = "both";  // early | late | both
        vae["gce_phase"] = "late";
        vae["gce_steps"] = "200";
        vae["gce_batch"] = "2";
        vae["gce_lr"] = "2e-3";
        vae["perceptual_seed"] = "901";

        auto& diff = c.sections_["diffusion"];
        diff["stage"] = "early";  // set per training run
        diff["T"] = "200";
        diff["beta_min"] = "1e-4";
        diff["beta_max"] = "0.02";
        diff["base_channels"] = "64";
        diff["batch"] = "4";
        diff["steps"] = "200";
        diff["lr"] = "1e-3";
        diff["adam_beta1"] = "0.9";
        diff["adam_beta2"] = "0.999";
        diff["use_ctrd"] = "true";
        diff["ctrd_alpha_mode"] = "ramp";  // ramp | fixed_0.25 | fixed_1.0
        diff["alpha_start"] = "0.25";
        diff["alpha_end"] = "1.0";
        diff["ramp_fraction"] = "0.5";
        diff["use_lfen"] = "true";
        diff["lfen_beta_std"] = "0.70710678118654752";  // sqrt(0.5)
        diff["predict_total_noise"] = "true";
        diff["lfen_init_at_sampling"] = "true";

        auto& met = c.sections_["metrics"];
        met["embedder_seed"] = "1234";
        met["embedder_dim"] = "64";
        met["classifier_classes"] = "10";
        met["msssim_scales"] = "auto";
        return c;
    }

    static Config parse(const std::string& text) {
        Config c;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#' || t[0] == ';') continue;
            if (t.front() == '[' && t.back() == ']') {
                section = trim(t.substr(1, t.size() - 2));
                c.sections_[section];
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw InvalidArgument("config: malformed line " + std::to_string(lineno) + ": " + t);
            c.sections_[section][trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
        }
        return c;
    }

    static Config load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("config: cannot open " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }

    // Canonical form: sections and keys in sorted order (std::map iteration).
    std::string serialize() const {
        std::ostringstream out;
        for (const auto& [sec, kv] : sections_) {
            out << "[" << sec << "]\n";
            for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
            out << "\n";
        }
        return out.str();
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("config: cannot write " + path.string());
        out << serialize();
    }

    bool has(const std::string& sec, const std::string& key) const {
        const auto s = sections_.find(sec);
        return s != sections_.end() && s->second.count(key) > 0;
    }

    std::string get_str(const std::string& sec, const std::string& key) const {
        const auto s = sections_.find(sec);
        if (s == sections_.end() || !s->second.count(key))
            throw InvalidArgument("config: missing key [" + sec + "] " + key);
        return s->second.at(key);
    }

    double get_real(const std::string& sec, const std::string& key) const {
        return std::stod(get_str(sec, key));
    }

    int64_t get_int(const std::string& sec, const std::string& key) const {
        return std::stoll(get_str(sec, key));
    }

    bool get_bool(const std::string& sec, const std::string& key) const {
        const std::string v = get_str(sec, key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw InvalidArgument("config: non-boolean value for [" + sec + "] " + key + ": " + v);
    }

    std::vector<int> get_int_list(const std::string& sec, const std::string& key) const {
        std::vector<int> out;
        std::istringstream ss(get_str(sec, key));
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(std::stoi(trim(item)));
        return out;
    }

    void set(const std::string& sec, const std::string& key, const std::string& value) {
        sections_[sec][key] = value;
    }

    template <typename T>
    void set_num(const std::string& sec, const std::string& key, T value) {
        std::ostringstream ss;
        ss.precision(17);
        ss << value;
        sections_[sec][key] = ss.str();
    }

    // FNV-1a over the canonical serialization.
    uint64_t hash() const {
        uint64_t h = 0xCBF29CE484222325ULL;
        for (const char c : serialize()) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ULL;
        }
        return h;
    }

    std::string hash_hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
        return std::string(buf);
    }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace angiodiff
