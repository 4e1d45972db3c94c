#include "lsvis/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "lsvis/rng.hpp"

namespace lsvis::data {

void LabeledImageSet::validate() const {
    if (images.shape.size() != 4 || images.shape[1] != 1)
        throw DataError("image set must have shape [N,1,H,W]");
    int64_t n = count();
    if (n <= 0) throw DataError("image set must be non-empty");
    if (static_cast<int64_t>(labels.size()) != n ||
        static_cast<int64_t>(provenance.size()) != n)
        throw DataError("labels/provenance length does not match image count");
    for (int64_t i = 0; i < n; ++i) {
        int lab = labels[static_cast<size_t>(i)];
        bool unl = provenance[static_cast<size_t>(i)] == Provenance::Unlabeled;
        if (unl != (lab == -1))
            throw DataError("label -1 must appear exactly on unlabeled entries");
        if (!unl && (lab < 0 || lab >= class_count))
            throw DataError("label out of range [0, class_count)");
    }
}

LabeledImageSet LabeledImageSet::subset(const std::vector<int64_t>& idx) const {
    LabeledImageSet out;
    int64_t ppi = pixels_per_image();
    out.images = nd::Array({static_cast<int64_t>(idx.size()), 1, height(), width()});
    out.class_count = class_count;
    for (size_t k = 0; k < idx.size(); ++k) {
        std::copy(image(idx[k]), image(idx[k]) + ppi, out.images.ptr() + k * ppi);
        out.labels.push_back(labels[static_cast<size_t>(idx[k])]);
        out.provenance.push_back(provenance[static_cast<size_t>(idx[k])]);
    }
    return out;
}

namespace {

struct Canvas {
    int64_t h, w;
    float* p;
    void set(int64_t y, int64_t x, float v) {
        if (y >= 0 && y < h && x >= 0 && x < w) p[y * w + x] = std::max(p[y * w + x], v);
    }
    void fill_rect(int64_t y0, int64_t y1, int64_t x0, int64_t x1, float v) {
        for (int64_t y = y0; y < y1; ++y)
            for (int64_t x = x0; x < x1; ++x) set(y, x, v);
    }
    void disc(double cy, double cx, double r, float v) {
        for (int64_t y = static_cast<int64_t>(cy - r) - 1; y <= cy + r + 1; ++y)
            for (int64_t x = static_cast<int64_t>(cx - r) - 1; x <= cx + r + 1; ++x) {
                double dy = y - cy, dx = x - cx;
                if (dy * dy + dx * dx <= r * r) set(y, x, v);
            }
    }
    void ring(double cy, double cx, double r, double thick, float v) {
        for (int64_t y = static_cast<int64_t>(cy - r) - 1; y <= cy + r + 1; ++y)
            for (int64_t x = static_cast<int64_t>(cx - r) - 1; x <= cx + r + 1; ++x) {
                double d = std::sqrt(static_cast<double>((y - cy) * (y - cy)) +
                                     static_cast<double>((x - cx) * (x - cx)));
                if (std::abs(d - r) <= thick) set(y, x, v);
            }
    }
};

void add_noise(nd::Array& images, int64_t i, int64_t ppi, Rng& rng, float bg, float amp) {
    float* p = images.ptr() + i * ppi;
    for (int64_t k = 0; k < ppi; ++k) {
        float v = p[k] + bg + amp * rng.uniformf(-1.0f, 1.0f);
        p[k] = std::clamp(v, 0.0f, 1.0f);
    }
}

}  // namespace

LabeledImageSet generate_channels(int64_t n, uint64_t seed) {
    if (n < 5) throw DataError("generate_channels: need n >= 5 to cover all classes");
    const int64_t H = 50, W = 50;
    LabeledImageSet set;
    set.class_count = 5;
    set.images = nd::Array({n, 1, H, W});
    Rng root(seed);
    for (int64_t i = 0; i < n; ++i) {
        Rng rng = root.stream(static_cast<uint64_t>(i));
        int label = static_cast<int>(i % 5);
        Canvas c{H, W, set.images.ptr() + i * H * W};
        switch (label) {
            case 0: {  // one wide vertical channel
                int64_t x0 = 14 + rng.below(14);
                int64_t w = 9 + rng.below(4);
                c.fill_rect(0, H, x0, x0 + w, 0.85f);
                break;
            }
            case 1: {  // three narrow vertical channels
                for (int64_t cx : {8, 24, 40}) {
                    int64_t x0 = cx + rng.below(5) - 2;
                    c.fill_rect(0, H, x0, x0 + 2 + rng.below(2), 0.85f);
                }
                break;
            }
            case 2: {  // one horizontal channel
                int64_t y0 = 14 + rng.below(14);
                c.fill_rect(y0, y0 + 7 + rng.below(4), 0, W, 0.85f);
                break;
            }
            case 3: {  // diagonal channel
                int64_t off = rng.below(13) - 6;
                int64_t w = 5 + rng.below(3);
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t dx = 0; dx < w; ++dx) c.set(y, y + off + dx, 0.85f);
                break;
            }
            case 4: {  // crossing channels
                int64_t x0 = 18 + rng.below(8), y0 = 18 + rng.below(8);
                c.fill_rect(0, H, x0, x0 + 5, 0.8f);
                c.fill_rect(y0, y0 + 5, 0, W, 0.8f);
                break;
            }
        }
        add_noise(set.images, i, H * W, rng, 0.08f, 0.05f);
        set.labels.push_back(label);
        set.provenance.push_back(Provenance::Manual);
    }
    return set;
}

LabeledImageSet generate_splash(int64_t n, uint64_t seed) {
    if (n < 7) throw DataError("generate_splash: need n >= 7 to cover all classes");
    const int64_t H = 80, W = 112;
    LabeledImageSet set;
    set.class_count = 7;
    set.images = nd::Array({n, 1, H, W});
    Rng root(seed);
    for (int64_t i = 0; i < n; ++i) {
        Rng rng = root.stream(static_cast<uint64_t>(i));
        int label = static_cast<int>(i % 7);
        Canvas c{H, W, set.images.ptr() + i * H * W};
        int64_t film = 62 + rng.below(5);  // liquid film near the bottom
        c.fill_rect(film, H, 0, W, 0.55f);
        double cx = 40.0 + rng.uniform(0.0, 32.0);
        auto scatter = [&](int count, double ymin, double ymax) {
            for (int k = 0; k < count; ++k)
                c.disc(ymin + rng.uniform(0.0, ymax - ymin), cx + rng.uniform(-26.0, 26.0),
                       1.2 + rng.uniform(0.0, 1.1), 0.9f);
        };
        switch (label) {
            case 0:  // bubble: ring resting on the film
                c.ring(film - 2.0, cx, 7.0 + rng.uniform(0.0, 4.0), 1.2, 0.9f);
                break;
            case 1:  // bubble-splash
                c.ring(film - 2.0, cx, 7.0 + rng.uniform(0.0, 4.0), 1.2, 0.9f);
                scatter(7, film - 28.0, film - 12.0);
                break;
            case 2: {  // column rising from the film
                int64_t w = 4 + rng.below(3);
                int64_t top = film - 28 - rng.below(8);
                c.fill_rect(top, film, static_cast<int64_t>(cx) - w / 2,
                            static_cast<int64_t>(cx) + (w + 1) / 2, 0.9f);
                c.disc(static_cast<double>(top), cx, 3.0, 0.9f);
                break;
            }
            case 3: {  // crown: open arc with rim spikes
                double r = 10.0 + rng.uniform(0.0, 5.0);
                for (double a = 0.25; a <= M_PI - 0.25; a += 0.02)
                    c.set(static_cast<int64_t>(film - 1 - r * std::sin(a)),
                          static_cast<int64_t>(cx + r * std::cos(a)), 0.9f);
                for (int k = -2; k <= 2; ++k)
                    c.fill_rect(film - static_cast<int64_t>(r) - 6, film - static_cast<int64_t>(r),
                                static_cast<int64_t>(cx) + k * 5, static_cast<int64_t>(cx) + k * 5 + 2,
                                0.9f);
                break;
            }
            case 4: {  // crown-splash
                double r = 10.0 + rng.uniform(0.0, 5.0);
                for (double a = 0.25; a <= M_PI - 0.25; a += 0.02)
                    c.set(static_cast<int64_t>(film - 1 - r * std::sin(a)),
                          static_cast<int64_t>(cx + r * std::cos(a)), 0.9f);
                scatter(9, film - 34.0, film - 16.0);
                break;
            }
            case 5:  // splash: droplets above the film only
                scatter(12, film - 26.0, film - 4.0);
                break;
            case 6:  // drop: single droplet still falling
                c.disc(14.0 + rng.uniform(0.0, 16.0), cx, 3.5 + rng.uniform(0.0, 1.5), 0.95f);
                break;
        }
        add_noise(set.images, i, H * W, rng, 0.06f, 0.04f);
        set.labels.push_back(label);
        set.provenance.push_back(Provenance::Manual);
    }
    return set;
}

namespace {

// classic 5x7 digit bitmaps, one row per scanline, LSB = leftmost column
const uint8_t kDigitFont[10][7] = {
    {0x0e, 0x11, 0x19, 0x15, 0x13, 0x11, 0x0e},  // 0
    {0x04, 0x06, 0x04, 0x04, 0x04, 0x04, 0x0e},  // 1
    {0x0e, 0x11, 0x10, 0x08, 0x04, 0x02, 0x1f},  // 2
    {0x1f, 0x08, 0x04, 0x08, 0x10, 0x11, 0x0e},  // 3
    {0x08, 0x0c, 0x0a, 0x09, 0x1f, 0x08, 0x08},  // 4
    {0x1f, 0x01, 0x0f, 0x10, 0x10, 0x11, 0x0e},  // 5
    {0x0c, 0x02, 0x01, 0x0f, 0x11, 0x11, 0x0e},  // 6
    {0x1f, 0x10, 0x08, 0x04, 0x02, 0x02, 0x02},  // 7
    {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e},  // 8
    {0x0e, 0x11, 0x11, 0x1e, 0x10, 0x08, 0x06},  // 9
};

double font_sample(int digit, double fy, double fx) {
    // bilinear sample of the 5x7 bitmap at continuous coordinates
    if (fy < -1 || fy > 7 || fx < -1 || fx > 5) return 0.0;
    auto bit = [&](int y, int x) -> double {
        if (y < 0 || y >= 7 || x < 0 || x >= 5) return 0.0;
        return (kDigitFont[digit][y] >> x) & 1 ? 1.0 : 0.0;
    };
    int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
    double ty = fy - y0, tx = fx - x0;
    return (1 - ty) * ((1 - tx) * bit(y0, x0) + tx * bit(y0, x0 + 1)) +
           ty * ((1 - tx) * bit(y0 + 1, x0) + tx * bit(y0 + 1, x0 + 1));
}

}  // namespace

LabeledImageSet generate_digits(int64_t n, uint64_t seed) {
    if (n < 10) throw DataError("generate_digits: need n >= 10 to cover all classes");
    const int64_t H = 28, W = 28;
    LabeledImageSet set;
    set.class_count = 10;
    set.images = nd::Array({n, 1, H, W});
    Rng root(seed);
    for (int64_t i = 0; i < n; ++i) {
        Rng rng = root.stream(static_cast<uint64_t>(i));
        int label = static_cast<int>(i % 10);
        double scale = rng.uniform(2.3, 3.1);
        double angle = rng.uniform(-0.18, 0.18);
        double shear = rng.uniform(-0.15, 0.15);
        double oy = 14.0 + rng.uniform(-2.0, 2.0), ox = 14.0 + rng.uniform(-2.0, 2.0);
        double ca = std::cos(angle), sa = std::sin(angle);
        float* p = set.images.ptr() + i * H * W;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double dy = y - oy, dx = x - ox;
                double ry = ca * dy - sa * dx;
                double rx = sa * dy + ca * dx + shear * ry;
                double v = font_sample(label, ry / scale + 3.0, rx / scale + 2.0);
                p[y * W + x] = static_cast<float>(v);
            }
        add_noise(set.images, i, H * W, rng, 0.02f, 0.04f);
        set.labels.push_back(label);
        set.provenance.push_back(Provenance::Manual);
    }
    return set;
}

std::pair<LabeledImageSet, NormStats> normalize(const LabeledImageSet& set) {
    double sum = 0.0, sumsq = 0.0;
    int64_t n = set.images.size();
    for (int64_t i = 0; i < n; ++i) {
        double v = set.images[i];
        sum += v;
        sumsq += v * v;
    }
    double mean = sum / static_cast<double>(n);
    double var = sumsq / static_cast<double>(n) - mean * mean;
    if (var <= 0.0) throw DataError("normalize: dataset is constant (zero variance)");
    double sd = std::sqrt(var);
    LabeledImageSet out = set;
    for (int64_t i = 0; i < n; ++i)
        out.images[i] = static_cast<float>((set.images[i] - mean) / sd);
    return {std::move(out), NormStats{mean, sd}};
}

void denormalize_inplace(nd::Array& images, const NormStats& stats) {
    for (int64_t i = 0; i < images.size(); ++i)
        images[i] = static_cast<float>(images[i] * stats.stddev + stats.mean);
}

std::pair<LabeledImageSet, LabeledImageSet> split(const LabeledImageSet& set,
                                                  const SplitSpec& spec) {
    set.validate();
    int64_t n = set.count();
    if (n < 2) throw DataError("split: need at least 2 samples");
    std::map<int, std::vector<int64_t>> by_class;
    for (int64_t i = 0; i < n; ++i) by_class[set.labels[static_cast<size_t>(i)]].push_back(i);

    Rng rng(spec.seed);
    int64_t train_total = static_cast<int64_t>(std::llround(spec.train_fraction * n));
    // largest-remainder allocation per class, keeping both sides non-empty
    struct Alloc {
        int cls;
        int64_t take;
        double frac;
        int64_t size;
    };
    std::vector<Alloc> allocs;
    int64_t assigned = 0;
    for (auto& [cls, idx] : by_class) {
        double want = spec.train_fraction * static_cast<double>(idx.size());
        int64_t take = static_cast<int64_t>(std::floor(want));
        if (idx.size() == 1) {
            std::fprintf(stderr,
                         "warning: class %d has a single member; assigning it to train\n", cls);
            take = 1;
        } else {
            take = std::clamp<int64_t>(take, 1, static_cast<int64_t>(idx.size()) - 1);
        }
        allocs.push_back({cls, take, want - std::floor(want), static_cast<int64_t>(idx.size())});
        assigned += take;
    }
    std::sort(allocs.begin(), allocs.end(), [](const Alloc& a, const Alloc& b) {
        return a.frac != b.frac ? a.frac > b.frac : a.cls < b.cls;
    });
    for (auto& a : allocs) {
        if (assigned >= train_total) break;
        if (a.take < a.size - 1 || (a.size == 1 && a.take == 1)) {
            if (a.take < a.size - 1) {
                ++a.take;
                ++assigned;
            }
        }
    }

    std::vector<int64_t> train_idx, val_idx;
    for (auto& a : allocs) {
        auto idx = by_class[a.cls];
        rng.shuffle(idx);
        for (size_t k = 0; k < idx.size(); ++k)
            (static_cast<int64_t>(k) < a.take ? train_idx : val_idx).push_back(idx[k]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    return {set.subset(train_idx), set.subset(val_idx)};
}

}  // namespace lsvis::data
