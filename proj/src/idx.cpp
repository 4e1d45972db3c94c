#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <vector>

#include "lsvis/datasets.hpp"

namespace lsvis::data {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

uint32_t read_u32_be(std::ifstream& f, const std::string& path, int64_t& offset) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f)
        throw DataError("idx: truncated header in " + path + " at byte offset " +
                        std::to_string(offset));
    offset += 4;
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

void write_u32_be(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw DataError("idx: cannot open " + images_path);
    int64_t off = 0;
    uint32_t magic = read_u32_be(fi, images_path, off);
    if (magic != kImageMagic)
        throw DataError("idx: bad image magic 0x" + std::to_string(magic) + " in " + images_path +
                        " at byte offset 0 (expected 0x00000803)");
    int64_t n = read_u32_be(fi, images_path, off);
    int64_t h = read_u32_be(fi, images_path, off);
    int64_t w = read_u32_be(fi, images_path, off);
    std::vector<unsigned char> pixels(static_cast<size_t>(n * h * w));
    fi.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (fi.gcount() != static_cast<std::streamsize>(pixels.size()))
        throw DataError("idx: truncated image payload in " + images_path + " at byte offset " +
                        std::to_string(off + fi.gcount()));

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw DataError("idx: cannot open " + labels_path);
    int64_t loff = 0;
    uint32_t lmagic = read_u32_be(fl, labels_path, loff);
    if (lmagic != kLabelMagic)
        throw DataError("idx: bad label magic in " + labels_path +
                        " at byte offset 0 (expected 0x00000801)");
    int64_t ln = read_u32_be(fl, labels_path, loff);
    if (ln != n)
        throw DataError("idx: image count " + std::to_string(n) + " does not match label count " +
                        std::to_string(ln));
    std::vector<unsigned char> raw_labels(static_cast<size_t>(ln));
    fl.read(reinterpret_cast<char*>(raw_labels.data()), ln);
    if (fl.gcount() != ln)
        throw DataError("idx: truncated label payload in " + labels_path + " at byte offset " +
                        std::to_string(loff + fl.gcount()));

    LabeledImageSet set;
    set.images = nd::Array({n, 1, h, w});
    for (size_t i = 0; i < pixels.size(); ++i)
        set.images[static_cast<int64_t>(i)] = static_cast<float>(pixels[i]) / 255.0f;
    int max_label = 0;
    for (auto l : raw_labels) max_label = std::max(max_label, static_cast<int>(l));
    set.class_count = max_label + 1;
    for (auto l : raw_labels) {
        set.labels.push_back(static_cast<int>(l));
        set.provenance.push_back(Provenance::Manual);
    }
    set.validate();
    return set;
}

void write_idx(const LabeledImageSet& set, const std::string& images_path,
               const std::string& labels_path) {
    std::ofstream fi(images_path, std::ios::binary);
    if (!fi) throw DataError("idx: cannot write " + images_path);
    write_u32_be(fi, kImageMagic);
    write_u32_be(fi, static_cast<uint32_t>(set.count()));
    write_u32_be(fi, static_cast<uint32_t>(set.height()));
    write_u32_be(fi, static_cast<uint32_t>(set.width()));
    for (int64_t i = 0; i < set.images.size(); ++i) {
        float v = std::clamp(set.images[i], 0.0f, 1.0f);
        unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0f));
        fi.write(reinterpret_cast<char*>(&b), 1);
    }

    std::ofstream fl(labels_path, std::ios::binary);
    if (!fl) throw DataError("idx: cannot write " + labels_path);
    write_u32_be(fl, kLabelMagic);
    write_u32_be(fl, static_cast<uint32_t>(set.count()));
    for (int lab : set.labels) {
        unsigned char b = static_cast<unsigned char>(lab < 0 ? 0 : lab);
        fl.write(reinterpret_cast<char*>(&b), 1);
    }
}

}  // namespace lsvis::data
