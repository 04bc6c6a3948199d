#include "bar/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "bar/errors.hpp"

namespace bar {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

void put_u32_be(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_be(std::istream& is, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IntegrityError(path + ": truncated header");
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error(path + ": cannot open for writing");
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IntegrityError(path + ": cannot open");
    return is;
}

}  // namespace

Dataset generate_dataset(const GenSpec& spec, Rng& rng) {
    if (spec.count < 1 || spec.height < 1 || spec.width < 1 || spec.channels < 1)
        throw std::invalid_argument("generate_dataset: counts and dims must be positive");
    if (spec.classes < 2) throw std::invalid_argument("generate_dataset: need at least 2 classes");
    if (!(spec.amplitude > 0.0) || !(spec.noise >= 0.0))
        throw std::invalid_argument("generate_dataset: amplitude must be > 0 and noise >= 0");
    if (spec.count % spec.classes != 0)
        throw std::invalid_argument("generate_dataset: sample count " +
                                    std::to_string(spec.count) + " not divisible by " +
                                    std::to_string(spec.classes) + " classes");
    Dataset ds;
    ds.count = spec.count;
    ds.h = spec.height;
    ds.w = spec.width;
    ds.c = spec.channels;
    ds.images.resize(static_cast<std::size_t>(spec.count) * ds.image_bytes());
    ds.labels.resize(static_cast<std::size_t>(spec.count));

    const double pi = std::acos(-1.0);
    const double sigma = 0.35 * std::min(spec.height, spec.width);
    const double base_freq = 2.0 * pi * 0.22;  // radians per pixel along the grating normal
    for (int i = 0; i < spec.count; ++i) {
        const int label = i % spec.classes;
        ds.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(label);
        const double theta = pi * label / spec.classes;
        const double phase = rng.uniform(0.0, 2.0 * pi);
        const double freq = base_freq * (1.0 + rng.uniform(-0.15, 0.15));
        const double cx = rng.uniform(0.3, 0.7) * (spec.width - 1);
        const double cy = rng.uniform(0.3, 0.7) * (spec.height - 1);
        const double ct = std::cos(theta), st = std::sin(theta);
        std::uint8_t* img = &ds.images[static_cast<std::size_t>(i) * ds.image_bytes()];
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double envelope = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                const double wave = std::sin(freq * (dx * ct + dy * st) + phase);
                const double signal = spec.amplitude * envelope * wave;
                for (int ch = 0; ch < spec.channels; ++ch) {
                    const double gain =
                        spec.channels > 1 ? 0.8 + 0.4 * ch / (spec.channels - 1) : 1.0;
                    const double v = 127.5 + 127.5 * (gain * signal + spec.noise * rng.normal());
                    const double clamped = std::min(255.0, std::max(0.0, std::round(v)));
                    img[(static_cast<std::size_t>(y) * spec.width + x) * spec.channels + ch] =
                        static_cast<std::uint8_t>(clamped);
                }
            }
    }
    return ds;
}

void write_images_file(const std::string& path, const Dataset& ds) {
    auto os = open_out(path);
    put_u32_be(os, kImagesMagic);
    put_u32_be(os, static_cast<std::uint32_t>(ds.count));
    put_u32_be(os, static_cast<std::uint32_t>(ds.h));
    put_u32_be(os, static_cast<std::uint32_t>(ds.w));
    put_u32_be(os, static_cast<std::uint32_t>(ds.c));
    os.write(reinterpret_cast<const char*>(ds.images.data()),
             static_cast<std::streamsize>(ds.images.size()));
    if (!os) throw std::runtime_error(path + ": write failed");
}

void write_labels_file(const std::string& path, const Dataset& ds) {
    auto os = open_out(path);
    put_u32_be(os, kLabelsMagic);
    put_u32_be(os, static_cast<std::uint32_t>(ds.count));
    os.write(reinterpret_cast<const char*>(ds.labels.data()),
             static_cast<std::streamsize>(ds.labels.size()));
    if (!os) throw std::runtime_error(path + ": write failed");
}

Dataset load_dataset(const std::string& images_path, const std::string& labels_path) {
    Dataset ds;
    {
        auto is = open_in(images_path);
        const std::uint32_t magic = get_u32_be(is, images_path);
        if (magic != kImagesMagic) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "bad magic 0x%08x", magic);
            throw IntegrityError(images_path + ": " + buf + " (expected an images file)");
        }
        ds.count = static_cast<int>(get_u32_be(is, images_path));
        ds.h = static_cast<int>(get_u32_be(is, images_path));
        ds.w = static_cast<int>(get_u32_be(is, images_path));
        ds.c = static_cast<int>(get_u32_be(is, images_path));
        if (ds.count < 0 || ds.h < 1 || ds.w < 1 || ds.c < 1)
            throw IntegrityError(images_path + ": implausible header dims");
        ds.images.resize(static_cast<std::size_t>(ds.count) * ds.image_bytes());
        is.read(reinterpret_cast<char*>(ds.images.data()),
                static_cast<std::streamsize>(ds.images.size()));
        if (is.gcount() != static_cast<std::streamsize>(ds.images.size()))
            throw IntegrityError(images_path + ": truncated pixel data");
        if (is.peek() != std::ifstream::traits_type::eof())
            throw IntegrityError(images_path + ": trailing bytes after pixel data");
    }
    {
        auto is = open_in(labels_path);
        const std::uint32_t magic = get_u32_be(is, labels_path);
        if (magic != kLabelsMagic) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "bad magic 0x%08x", magic);
            throw IntegrityError(labels_path + ": " + buf + " (expected a labels file)");
        }
        const int n = static_cast<int>(get_u32_be(is, labels_path));
        if (n != ds.count)
            throw IntegrityError(labels_path + ": " + std::to_string(n) + " labels for " +
                                 std::to_string(ds.count) + " images in " + images_path);
        ds.labels.resize(static_cast<std::size_t>(n));
        is.read(reinterpret_cast<char*>(ds.labels.data()),
                static_cast<std::streamsize>(ds.labels.size()));
        if (is.gcount() != static_cast<std::streamsize>(ds.labels.size()))
            throw IntegrityError(labels_path + ": truncated label data");
    }
    return ds;
}

void make_batch(const Dataset& ds, const std::vector<int>& indices, Tensor& x,
                std::vector<int>& y) {
    const int n = static_cast<int>(indices.size());
    x = Tensor({n, ds.c, ds.h, ds.w});
    y.resize(indices.size());
    for (int bi = 0; bi < n; ++bi) {
        const int i = indices[static_cast<std::size_t>(bi)];
        if (i < 0 || i >= ds.count)
            throw std::invalid_argument("make_batch: sample index " + std::to_string(i) +
                                        " out of range");
        y[static_cast<std::size_t>(bi)] = ds.labels[static_cast<std::size_t>(i)];
        const std::uint8_t* img = &ds.images[static_cast<std::size_t>(i) * ds.image_bytes()];
        for (int ch = 0; ch < ds.c; ++ch)
            for (int r = 0; r < ds.h; ++r)
                for (int cl = 0; cl < ds.w; ++cl)
                    x.at4(bi, ch, r, cl) =
                        static_cast<float>(img[(static_cast<std::size_t>(r) * ds.w + cl) * ds.c +
                                               ch]) /
                            127.5f -
                        1.0f;
    }
    return;
}

}  // namespace bar
