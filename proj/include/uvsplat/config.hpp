#pragma once

#include <cstdint>
#include <string>

#include "uvsplat/fit.hpp"
#include "uvsplat/fuse.hpp"

namespace uvsplat {

/// Flat `key = value` configuration covering the fit, the loss weights, the
/// sampling grid and the fusion stack. Defaults follow the reference setup
/// where one is stated.
struct Config {
    std::string mesh; // empty: procedural head
    int K = 256;
    int dense_w = 256, dense_h = 256;
    int hair_w = 1024, hair_h = 128;
    bool include_vertices = true;
    int resolution = 128;

    int window = 7;
    int scales = 4;
    int layers = 2;
    int fusion_channels = 8;
    double theta_occ = 0.5;
    double visibility_tau = 0.02;
    std::uint64_t fusion_seed = 7;

    LossWeights weights;

    int iterations = 300;
    double lr = 1e-2;
    double lr_shape = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double init_scale = 0.7;
    double init_opacity = 0.6;
    double init_noise = 0.01;
    std::uint64_t seed = 1;
    int threads = 0;

    void validate() const;
    FitConfig fit_config() const;
    FusionConfig fusion_config() const;
    GridSpec grid() const;
};

/// Throws ValidationError naming the key and line on unknown keys or
/// malformed values.
Config parse_config(const std::string& text);
Config load_config(const std::string& path);
std::string serialize_config(const Config& c);

} // namespace uvsplat
