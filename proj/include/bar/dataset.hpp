#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bar/rng.hpp"
#include "bar/tensor.hpp"

namespace bar {

/// Labeled u8 image set, pixels stored [n][h][w][c].
struct Dataset {
    int count = 0;
    int h = 0, w = 0, c = 0;
    std::vector<std::uint8_t> images;
    std::vector<std::uint8_t> labels;

    [[nodiscard]] std::size_t image_bytes() const {
        return static_cast<std::size_t>(h) * w * c;
    }
    [[nodiscard]] int max_label() const {
        int m = -1;
        for (auto l : labels) m = std::max(m, static_cast<int>(l));
        return m;
    }
};

struct GenSpec {
    int count = 2000;
    int height = 16;
    int width = 16;
    int channels = 3;
    int classes = 4;
    double amplitude = 0.5;  // grating contrast, relative to half range
    double noise = 0.5;      // additive gaussian sigma, relative to half range
};

/// Synthetic oriented-grating classification set. Class k's images contain a
/// sinusoidal patch at orientation k*180/classes degrees under a gaussian
/// envelope, with per-sample random phase, frequency jitter, patch position,
/// and pixel noise. Labels cycle round-robin so the histogram is exactly
/// uniform. Deterministic given the rng state.
Dataset generate_dataset(const GenSpec& spec, Rng& rng);

/// IDX-style container with big-endian header words (matching the classic
/// format) and a fourth channel dimension appended to the image header.
void write_images_file(const std::string& path, const Dataset& ds);
void write_labels_file(const std::string& path, const Dataset& ds);

/// Reads both files of a dataset pair; throws IntegrityError on bad magic,
/// truncation, or a count mismatch between the two files.
Dataset load_dataset(const std::string& images_path, const std::string& labels_path);

/// Converts selected samples to a normalized [n, c, h, w] float batch in
/// [-1, 1] and the matching label vector.
void make_batch(const Dataset& ds, const std::vector<int>& indices, Tensor& x,
                std::vector<int>& y);

}  // namespace bar
