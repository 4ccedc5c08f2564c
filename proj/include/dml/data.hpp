#pragma once

#include <string>
#include <vector>

#include "dml/rng.hpp"
#include "dml/tensor.hpp"

namespace dml {

struct Image {
    int h = 0, w = 0;
    std::vector<float> rgb;  // h*w*3, row-major, [0,1]

    float at(int y, int x, int c) const { return rgb[size_t((y * w + x) * 3 + c)]; }
    float& at(int y, int x, int c) { return rgb[size_t((y * w + x) * 3 + c)]; }
};

struct DataItem {
    Image image;
    int label = 0;
};

struct Dataset {
    std::vector<DataItem> items;
    int num_classes = 0;
};

struct SyntheticSpec {
    int num_classes = 16;
    int per_class = 8;
    int image_size = 8;
    float cluster_separation = 3.0f;
    float noise_std = 0.05f;
};

// class templates are seeded random images pairwise >= cluster_separation
// apart in L2; samples add clipped Gaussian noise
Dataset generate_synthetic(const SyntheticSpec& spec, uint64_t seed);

// root/<class_name>/<image>.ppm, labels in lexicographic directory order
Dataset load_image_folder(const std::string& root);

Image decode_ppm(const std::vector<unsigned char>& bytes, const std::string& origin);

// class-disjoint split: classes [0, train_classes) -> train, rest -> eval,
// labels densely re-indexed per split
std::pair<Dataset, Dataset> split_by_classes(const Dataset& d, int train_classes);

// Catmull-Rom bicubic (a = -0.5), pixel-center mapping, edge clamp
Image resize_bicubic(const Image& src, int out_h, int out_w);

struct AugmentConfig {
    bool enabled = true;
    float min_scale = 0.08f;
    float max_scale = 1.0f;
    float min_aspect = 0.75f;
    float max_aspect = 4.0f / 3.0f;
    bool flip = true;
};

// training-path augmentation; output is image_size x image_size x 3 in [0,1]
Tensor augment(const Image& img, int image_size, const AugmentConfig& cfg, Rng& rng);
// deterministic eval path: center crop + bicubic resize
Tensor eval_transform(const Image& img, int image_size);

Tensor image_to_tensor(const Image& img);

// Every batch holds exactly batch_size/per_class distinct classes with
// per_class samples each; classes cycle without replacement across batches.
class BalancedSampler {
public:
    BalancedSampler(const Dataset& dataset, int batch_size, int per_class, uint64_t seed);

    std::vector<int> next_batch();  // item indices into the dataset
    int classes_per_batch() const { return batch_size_ / per_class_; }

private:
    void refill();

    const Dataset* dataset_;
    int batch_size_, per_class_;
    Rng rng_;
    std::vector<std::vector<int>> by_class_;  // eligible classes -> item indices
    std::vector<int> eligible_;
    std::vector<int> queue_;  // upcoming classes, drawn without replacement
};

}  // namespace dml
