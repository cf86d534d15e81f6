#include "prunekit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "prunekit/errors.hpp"
#include "prunekit/rng.hpp"

namespace prunekit {

Tensor Dataset::batch(size_t begin, size_t count) const {
    if (begin + count > size()) throw UsageError("dataset batch out of range");
    const size_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const size_t per = c * h * w;
    Tensor out({count, c, h, w});
    std::copy(images.data.begin() + static_cast<long>(begin * per),
              images.data.begin() + static_cast<long>((begin + count) * per), out.data.begin());
    return out;
}

Tensor Dataset::batch_indices(const std::vector<size_t>& idx, size_t begin, size_t count) const {
    if (begin + count > idx.size()) throw UsageError("dataset batch out of range");
    const size_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const size_t per = c * h * w;
    Tensor out({count, c, h, w});
    for (size_t i = 0; i < count; ++i) {
        const size_t src = idx[begin + i] * per;
        std::copy(images.data.begin() + static_cast<long>(src),
                  images.data.begin() + static_cast<long>(src + per),
                  out.data.begin() + static_cast<long>(i * per));
    }
    return out;
}

std::vector<int> Dataset::label_slice(size_t begin, size_t count) const {
    if (begin + count > size()) throw UsageError("dataset batch out of range");
    return std::vector<int>(labels.begin() + static_cast<long>(begin),
                            labels.begin() + static_cast<long>(begin + count));
}

std::vector<int> Dataset::label_indices(const std::vector<size_t>& idx, size_t begin,
                                        size_t count) const {
    if (begin + count > idx.size()) throw UsageError("dataset batch out of range");
    std::vector<int> out(count);
    for (size_t i = 0; i < count; ++i) out[i] = labels[idx[begin + i]];
    return out;
}

namespace {

uint32_t read_be32(std::istream& is, const std::string& what, size_t offset) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw DataError(what + ": truncated at offset " + std::to_string(offset));
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw DataError("cannot open IDX image file: " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw DataError("cannot open IDX label file: " + labels_path);

    const uint32_t img_magic = read_be32(img, images_path, 0);
    if (img_magic != 0x00000803u)
        throw DataError(images_path + ": bad IDX image magic at offset 0 (expected 0x00000803)");
    const uint32_t n_img = read_be32(img, images_path, 4);
    const uint32_t rows = read_be32(img, images_path, 8);
    const uint32_t cols = read_be32(img, images_path, 12);

    const uint32_t lab_magic = read_be32(lab, labels_path, 0);
    if (lab_magic != 0x00000801u)
        throw DataError(labels_path + ": bad IDX label magic at offset 0 (expected 0x00000801)");
    const uint32_t n_lab = read_be32(lab, labels_path, 4);

    if (n_img != n_lab)
        throw DataError("IDX image/label count mismatch: " + std::to_string(n_img) +
                        " images vs " + std::to_string(n_lab) + " labels");

    Dataset ds;
    ds.images = Tensor({n_img, 1, rows, cols});
    const size_t n_pixels = static_cast<size_t>(n_img) * rows * cols;
    std::vector<unsigned char> buf(n_pixels);
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n_pixels)))
        throw DataError(images_path + ": truncated pixel payload");
    for (size_t i = 0; i < n_pixels; ++i)
        ds.images[i] = static_cast<double>(buf[i]) / 255.0;

    std::vector<unsigned char> lbuf(n_lab);
    if (!lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(n_lab)))
        throw DataError(labels_path + ": truncated label payload");
    ds.labels.resize(n_lab);
    int max_label = 0;
    for (size_t i = 0; i < n_lab; ++i) {
        ds.labels[i] = static_cast<int>(lbuf[i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.class_count = max_label + 1;
    ds.split = "train";
    return ds;
}

Dataset synth_dataset(int classes, int per_class, int hw, uint64_t seed) {
    if (hw < 8) throw ConfigError("synth_dataset: hw must be >= 8");
    if (classes < 1 || per_class < 1)
        throw ConfigError("synth_dataset: classes and per_class must be >= 1");

    Rng rng = Rng::stream(seed, "synth");
    const size_t n = static_cast<size_t>(classes) * static_cast<size_t>(per_class);
    Dataset ds;
    ds.class_count = classes;
    ds.images = Tensor({n, 1, static_cast<size_t>(hw), static_cast<size_t>(hw)});
    ds.labels.resize(n);
    ds.split = "train";

    const double half_len = 0.42 * hw;
    const double thickness = 1.2;
    const double pi = 3.14159265358979323846;

    for (size_t i = 0; i < n; ++i) {
        const int cls = static_cast<int>(i) % classes;
        ds.labels[i] = cls;
        const double angle = pi * static_cast<double>(cls) / static_cast<double>(classes);
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double jitter = hw / 8.0;
        const double cx = hw / 2.0 + rng.uniform(-jitter, jitter);
        const double cy = hw / 2.0 + rng.uniform(-jitter, jitter);
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double along = dx * ca + dy * sa;
                const double perp = -dx * sa + dy * ca;
                double v = 0.1;
                if (std::abs(along) <= half_len && std::abs(perp) <= thickness) v = 0.9;
                v += 0.1 * rng.normal();
                ds.images.at(i, 0, static_cast<size_t>(y), static_cast<size_t>(x)) =
                    std::clamp(v, 0.0, 1.0);
            }
    }
    return ds;
}

} // namespace prunekit
