#include "dml/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace dml {

namespace {

double template_distance(const Image& a, const Image& b) {
    double ss = 0.0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        double d = double(a.rgb[i]) - double(b.rgb[i]);
        ss += d * d;
    }
    return std::sqrt(ss);
}

Image random_image(int size, Rng& rng) {
    Image im;
    im.h = im.w = size;
    im.rgb.resize(size_t(size) * size * 3);
    for (float& v : im.rgb) v = float(rng.uniform());
    return im;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec, uint64_t seed) {
    if (spec.num_classes < 1 || spec.per_class < 1 || spec.image_size < 1)
        throw std::runtime_error("synthetic: spec dimensions must be positive");
    Rng rng(seed, 0xDA7A);
    std::vector<Image> templates;
    for (int c = 0; c < spec.num_classes; ++c) {
        Image cand;
        bool ok = false;
        for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
            cand = random_image(spec.image_size, rng);
            ok = true;
            for (const Image& t : templates)
                if (template_distance(cand, t) < spec.cluster_separation) {
                    ok = false;
                    break;
                }
        }
        if (!ok)
            throw std::runtime_error("synthetic: cannot place " + std::to_string(spec.num_classes) +
                                     " templates with separation " + std::to_string(spec.cluster_separation) +
                                     " at image size " + std::to_string(spec.image_size));
        templates.push_back(std::move(cand));
    }
    Dataset d;
    d.num_classes = spec.num_classes;
    for (int c = 0; c < spec.num_classes; ++c) {
        for (int i = 0; i < spec.per_class; ++i) {
            DataItem item;
            item.label = c;
            item.image = templates[size_t(c)];
            if (spec.noise_std > 0.0f) {
                for (float& v : item.image.rgb)
                    v = std::clamp(v + float(rng.normal(0.0, spec.noise_std)), 0.0f, 1.0f);
            }
            d.items.push_back(std::move(item));
        }
    }
    return d;
}

Image decode_ppm(const std::vector<unsigned char>& bytes, const std::string& origin) {
    size_t pos = 0;
    auto skip_ws = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> int {
        skip_ws();
        int v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            ++pos;
            any = true;
        }
        if (!any) throw std::runtime_error("ppm: malformed header in " + origin);
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw std::runtime_error("ppm: not a P6 file: " + origin);
    pos = 2;
    int w = read_int();
    int h = read_int();
    int maxval = read_int();
    if (maxval != 255) throw std::runtime_error("ppm: only maxval 255 supported: " + origin);
    ++pos;  // single whitespace after maxval
    size_t need = size_t(w) * h * 3;
    if (bytes.size() - pos < need) throw std::runtime_error("ppm: truncated pixel data: " + origin);
    Image im;
    im.w = w;
    im.h = h;
    im.rgb.resize(need);
    for (size_t i = 0; i < need; ++i) im.rgb[i] = float(bytes[pos + i]) / 255.0f;
    return im;
}

Dataset load_image_folder(const std::string& root) {
    if (!fs::is_directory(root)) throw std::runtime_error("dataset: not a directory: " + root);
    std::vector<std::string> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw std::runtime_error("dataset: no class directories under " + root);
    Dataset d;
    d.num_classes = int(class_dirs.size());
    for (size_t c = 0; c < class_dirs.size(); ++c) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(fs::path(root) / class_dirs[c]))
            if (e.is_regular_file()) files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        int loaded = 0;
        for (const std::string& f : files) {
            std::ifstream in(f, std::ios::binary);
            std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                             std::istreambuf_iterator<char>());
            try {
                DataItem item;
                item.image = decode_ppm(bytes, f);
                item.label = int(c);
                d.items.push_back(std::move(item));
                ++loaded;
            } catch (const std::exception& ex) {
                std::cerr << "warning: skipping " << f << ": " << ex.what() << "\n";
            }
        }
        if (loaded == 0)
            throw std::runtime_error("dataset: class '" + class_dirs[c] + "' has no readable images");
    }
    return d;
}

std::pair<Dataset, Dataset> split_by_classes(const Dataset& d, int train_classes) {
    if (train_classes < 1 || train_classes >= d.num_classes)
        throw std::runtime_error("split: train_classes must be in [1, C)");
    Dataset train, eval;
    train.num_classes = train_classes;
    eval.num_classes = d.num_classes - train_classes;
    for (const DataItem& it : d.items) {
        DataItem copy = it;
        if (it.label < train_classes) {
            train.items.push_back(std::move(copy));
        } else {
            copy.label = it.label - train_classes;
            eval.items.push_back(std::move(copy));
        }
    }
    return {std::move(train), std::move(eval)};
}

namespace {

// Catmull-Rom cubic convolution weight, a = -0.5
double cubic_weight(double x) {
    constexpr double a = -0.5;
    x = std::fabs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

}  // namespace

Image resize_bicubic(const Image& src, int out_h, int out_w) {
    if (src.h < 1 || src.w < 1) throw std::runtime_error("resize: empty source image");
    // horizontal pass then vertical pass, pixel-center coordinate mapping
    double sx = double(src.w) / out_w;
    double sy = double(src.h) / out_h;
    Image mid;
    mid.h = src.h;
    mid.w = out_w;
    mid.rgb.assign(size_t(mid.h) * mid.w * 3, 0.0f);
    for (int x = 0; x < out_w; ++x) {
        double cx = (x + 0.5) * sx - 0.5;
        int ix = int(std::floor(cx));
        double wts[4];
        for (int t = 0; t < 4; ++t) wts[t] = cubic_weight(cx - double(ix - 1 + t));
        for (int y = 0; y < src.h; ++y)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int t = 0; t < 4; ++t) {
                    int xx = std::clamp(ix - 1 + t, 0, src.w - 1);
                    acc += wts[t] * double(src.at(y, xx, c));
                }
                mid.at(y, x, c) = float(acc);
            }
    }
    Image out;
    out.h = out_h;
    out.w = out_w;
    out.rgb.assign(size_t(out_h) * out_w * 3, 0.0f);
    for (int y = 0; y < out_h; ++y) {
        double cy = (y + 0.5) * sy - 0.5;
        int iy = int(std::floor(cy));
        double wts[4];
        for (int t = 0; t < 4; ++t) wts[t] = cubic_weight(cy - double(iy - 1 + t));
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int t = 0; t < 4; ++t) {
                    int yy = std::clamp(iy - 1 + t, 0, src.h - 1);
                    acc += wts[t] * double(mid.at(yy, x, c));
                }
                out.at(y, x, c) = float(acc);
            }
    }
    return out;
}

Tensor image_to_tensor(const Image& img) {
    return Tensor::from({img.h, img.w, 3}, img.rgb);
}

namespace {

Image crop(const Image& src, int y0, int x0, int h, int w) {
    Image out;
    out.h = h;
    out.w = w;
    out.rgb.resize(size_t(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(y0 + y, x0 + x, c);
    return out;
}

Image hflip(const Image& src) {
    Image out = src;
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(y, src.w - 1 - x, c);
    return out;
}

void clip01(Image& im) {
    for (float& v : im.rgb) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

Tensor augment(const Image& img, int image_size, const AugmentConfig& cfg, Rng& rng) {
    if (!cfg.enabled) return eval_transform(img, image_size);
    Image work = img;
    if (cfg.flip && rng.uniform() < 0.5) work = hflip(work);

    Image region;
    bool picked = false;
    // one resample on a degenerate region, then full-image fallback
    for (int attempt = 0; attempt < 2 && !picked; ++attempt) {
        double area = double(work.h) * work.w * rng.uniform(cfg.min_scale, cfg.max_scale);
        double aspect = rng.uniform(cfg.min_aspect, cfg.max_aspect);
        int cw = int(std::lround(std::sqrt(area * aspect)));
        int ch = int(std::lround(std::sqrt(area / aspect)));
        if (cw < 1 || ch < 1 || cw > work.w || ch > work.h) continue;
        int x0 = int(rng.below(uint64_t(work.w - cw + 1)));
        int y0 = int(rng.below(uint64_t(work.h - ch + 1)));
        region = crop(work, y0, x0, ch, cw);
        picked = true;
    }
    if (!picked) region = work;

    Image out = (region.h == image_size && region.w == image_size)
                    ? region
                    : resize_bicubic(region, image_size, image_size);
    clip01(out);
    return image_to_tensor(out);
}

Tensor eval_transform(const Image& img, int image_size) {
    int side = std::min(img.h, img.w);
    Image sq = crop(img, (img.h - side) / 2, (img.w - side) / 2, side, side);
    Image out = (side == image_size) ? sq : resize_bicubic(sq, image_size, image_size);
    clip01(out);
    return image_to_tensor(out);
}

BalancedSampler::BalancedSampler(const Dataset& dataset, int batch_size, int per_class, uint64_t seed)
    : dataset_(&dataset), batch_size_(batch_size), per_class_(per_class), rng_(seed, 0x5A3B) {
    if (per_class < 1 || batch_size < 1 || batch_size % per_class != 0)
        throw std::runtime_error("sampler: batch_size must be a positive multiple of per_class");
    std::vector<std::vector<int>> all(size_t(dataset.num_classes));
    for (size_t i = 0; i < dataset.items.size(); ++i)
        all[size_t(dataset.items[i].label)].push_back(int(i));
    for (int c = 0; c < dataset.num_classes; ++c) {
        if (int(all[size_t(c)].size()) >= per_class) {
            eligible_.push_back(int(by_class_.size()));
            by_class_.push_back(all[size_t(c)]);
        }
    }
    if (int(by_class_.size()) < classes_per_batch())
        throw std::runtime_error("sampler: fewer than " + std::to_string(classes_per_batch()) +
                                 " classes with >= " + std::to_string(per_class) + " samples");
}

void BalancedSampler::refill() {
    std::vector<int> epoch(by_class_.size());
    for (size_t i = 0; i < epoch.size(); ++i) epoch[i] = int(i);
    rng_.shuffle(epoch);
    queue_.insert(queue_.end(), epoch.begin(), epoch.end());
}

std::vector<int> BalancedSampler::next_batch() {
    int need = classes_per_batch();
    std::vector<int> classes;
    std::vector<int> skipped;
    while (int(classes.size()) < need) {
        if (queue_.empty()) refill();
        int c = queue_.front();
        queue_.erase(queue_.begin());
        if (std::find(classes.begin(), classes.end(), c) != classes.end()) {
            skipped.push_back(c);  // refill duplicated a class already in this batch
            continue;
        }
        classes.push_back(c);
    }
    queue_.insert(queue_.begin(), skipped.begin(), skipped.end());

    std::vector<int> batch;
    batch.reserve(size_t(batch_size_));
    for (int c : classes) {
        std::vector<int> pool = by_class_[size_t(c)];
        rng_.shuffle(pool);
        for (int i = 0; i < per_class_; ++i) batch.push_back(pool[size_t(i)]);
    }
    return batch;
}

}  // namespace dml
