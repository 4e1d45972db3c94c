#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lsvis/array.hpp"

namespace lsvis::data {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Provenance : uint8_t { Manual, Pseudo, Unlabeled };

// Images plus per-image label and label-provenance flag. Label -1 is the
// sentinel for unlabeled entries.
struct LabeledImageSet {
    nd::Array images;  // [N,1,H,W]
    std::vector<int> labels;
    std::vector<Provenance> provenance;
    int class_count = 0;

    int64_t count() const { return images.shape.empty() ? 0 : images.shape[0]; }
    int64_t height() const { return images.shape[2]; }
    int64_t width() const { return images.shape[3]; }
    int64_t pixels_per_image() const { return images.shape[1] * images.shape[2] * images.shape[3]; }
    const float* image(int64_t i) const { return images.ptr() + i * pixels_per_image(); }
    float* image(int64_t i) { return images.ptr() + i * pixels_per_image(); }

    LabeledImageSet subset(const std::vector<int64_t>& idx) const;
    void validate() const;
};

struct SplitSpec {
    double train_fraction = 0.8;
    uint64_t seed = 0;
};

struct NormStats {
    double mean = 0.0;
    double stddev = 1.0;
};

// Deterministic synthetic stand-in for the soil-channel ensemble:
// 5 classes of 50x50 monochrome channel structures.
LabeledImageSet generate_channels(int64_t n, uint64_t seed);

// Deterministic synthetic stand-in for the droplet-impact ensemble:
// 7 classes of 80x112 monochrome images with bottom-region features.
LabeledImageSet generate_splash(int64_t n, uint64_t seed);

// Deterministic rendered handwritten-style digits, 10 classes of 28x28.
// Fills the MNIST role when the real IDX files are not on disk.
LabeledImageSet generate_digits(int64_t n, uint64_t seed);

LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const LabeledImageSet& set, const std::string& images_path,
               const std::string& labels_path);

// Global scalar zero-mean/unit-std normalization; returns the statistics so
// reconstructions can be mapped back for rendering.
std::pair<LabeledImageSet, NormStats> normalize(const LabeledImageSet& set);
void denormalize_inplace(nd::Array& images, const NormStats& stats);

// Seeded stratified split; single-member classes go to train with a warning.
std::pair<LabeledImageSet, LabeledImageSet> split(const LabeledImageSet& set,
                                                  const SplitSpec& spec);

}  // namespace lsvis::data
