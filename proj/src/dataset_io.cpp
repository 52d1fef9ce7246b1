#include "tkil/dataset_io.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tkil/errors.hpp"
#include "tkil/rng.hpp"

namespace fs = std::filesystem;

namespace tkil {

namespace {

void write_u32_be(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32_be(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("truncated idx header");
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return f;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    return f;
}

std::pair<std::vector<double>, std::vector<int>> read_idx_pair(const std::string& images_path,
                                                               const std::string& labels_path,
                                                               int& rows, int& cols) {
    auto fi = open_in(images_path);
    if (read_u32_be(fi) != 0x00000803u) throw IoError(images_path + ": not an idx3 image file");
    const uint32_t n = read_u32_be(fi);
    rows = static_cast<int>(read_u32_be(fi));
    cols = static_cast<int>(read_u32_be(fi));
    std::vector<unsigned char> raw(static_cast<size_t>(n) * rows * cols);
    fi.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!fi) throw IoError(images_path + ": truncated pixel data");

    auto fl = open_in(labels_path);
    if (read_u32_be(fl) != 0x00000801u) throw IoError(labels_path + ": not an idx1 label file");
    const uint32_t nl = read_u32_be(fl);
    if (nl != n) throw IoError("image/label count mismatch in idx pair");
    std::vector<unsigned char> lab(n);
    fl.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
    if (!fl) throw IoError(labels_path + ": truncated label data");

    std::vector<double> vals(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) vals[i] = raw[i] / 255.0;
    std::vector<int> labels(lab.begin(), lab.end());
    return {std::move(vals), std::move(labels)};
}

} // namespace

void normalize_like(DatasetHandle& target, const DatasetHandle& stats_source) {
    const int64_t numel = stats_source.sample_numel();
    if (numel == 0 || stats_source.size() == 0) throw EmptySource("cannot normalize from empty data");
    const int64_t groups = stats_source.input_shape.size() == 3
                               ? stats_source.input_shape[0]
                               : numel;
    const int64_t per_group = numel / groups;
    std::vector<double> mean(static_cast<size_t>(groups), 0.0),
        var(static_cast<size_t>(groups), 0.0);
    const int64_t count = stats_source.size() * per_group;
    for (size_t i = 0; i < stats_source.inputs.size(); ++i)
        mean[static_cast<size_t>((static_cast<int64_t>(i) % numel) / per_group)] +=
            stats_source.inputs[i];
    for (auto& m : mean) m /= static_cast<double>(count);
    for (size_t i = 0; i < stats_source.inputs.size(); ++i) {
        const size_t g = static_cast<size_t>((static_cast<int64_t>(i) % numel) / per_group);
        const double d = stats_source.inputs[i] - mean[g];
        var[g] += d * d;
    }
    std::vector<double> stddev(static_cast<size_t>(groups));
    for (size_t g = 0; g < stddev.size(); ++g) {
        stddev[g] = std::sqrt(var[g] / static_cast<double>(count));
        if (stddev[g] < 1e-12) stddev[g] = 1.0;
    }
    if (target.sample_numel() != numel) throw ShapeMismatch("normalize: shape mismatch");
    for (size_t i = 0; i < target.inputs.size(); ++i) {
        const size_t g = static_cast<size_t>((static_cast<int64_t>(i) % numel) / per_group);
        target.inputs[i] = (target.inputs[i] - mean[g]) / stddev[g];
    }
}

void normalize_pair(DatasetHandle& train, DatasetHandle& test) {
    DatasetHandle stats = train; // statistics from the untouched train split
    normalize_like(train, stats);
    normalize_like(test, stats);
}

std::pair<DatasetHandle, DatasetHandle> load_idx_dir(const std::string& dir) {
    auto load_split = [&](const std::string& prefix, const std::string& split) {
        int rows = 0, cols = 0;
        auto [vals, labels] = read_idx_pair(dir + "/" + prefix + "-images-idx3-ubyte",
                                            dir + "/" + prefix + "-labels-idx1-ubyte", rows, cols);
        DatasetHandle ds;
        ds.name = fs::path(dir).filename().string();
        ds.split = split;
        ds.input_shape = {1, rows, cols};
        ds.inputs = std::move(vals);
        ds.labels = std::move(labels);
        for (int l : ds.labels) ds.num_classes = std::max(ds.num_classes, l + 1);
        return ds;
    };
    DatasetHandle train = load_split("train", "train");
    DatasetHandle test = load_split("t10k", "test");
    test.num_classes = train.num_classes = std::max(train.num_classes, test.num_classes);
    normalize_pair(train, test);
    return {std::move(train), std::move(test)};
}

void write_idx_images(const std::string& path, const DatasetHandle& ds) {
    if (ds.input_shape.size() != 3 || ds.input_shape[0] != 1)
        throw ShapeMismatch("idx images must be single-channel [1,H,W]");
    auto f = open_out(path);
    write_u32_be(f, 0x00000803u);
    write_u32_be(f, static_cast<uint32_t>(ds.size()));
    write_u32_be(f, static_cast<uint32_t>(ds.input_shape[1]));
    write_u32_be(f, static_cast<uint32_t>(ds.input_shape[2]));
    std::vector<unsigned char> raw(ds.inputs.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, ds.inputs[i]));
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw IoError("failed writing " + path);
}

void write_idx_labels(const std::string& path, const DatasetHandle& ds) {
    auto f = open_out(path);
    write_u32_be(f, 0x00000801u);
    write_u32_be(f, static_cast<uint32_t>(ds.size()));
    std::vector<unsigned char> raw(ds.labels.size());
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<unsigned char>(ds.labels[i]);
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw IoError("failed writing " + path);
}

void write_idx_dir(const std::string& dir, const DatasetHandle& train, const DatasetHandle& test) {
    fs::create_directories(dir);
    write_idx_images(dir + "/train-images-idx3-ubyte", train);
    write_idx_labels(dir + "/train-labels-idx1-ubyte", train);
    write_idx_images(dir + "/t10k-images-idx3-ubyte", test);
    write_idx_labels(dir + "/t10k-labels-idx1-ubyte", test);
}

std::pair<DatasetHandle, DatasetHandle> load_array_dir(const std::string& dir) {
    std::ifstream meta(dir + "/meta.txt");
    if (!meta) throw IoError("cannot open " + dir + "/meta.txt");
    int classes = 0;
    std::vector<int> shape;
    std::string dtype = "f64";
    std::string line;
    while (std::getline(meta, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "classes") classes = std::stoi(val);
        else if (key == "dtype") dtype = val;
        else if (key == "shape") {
            std::stringstream ss(val);
            std::string tok;
            while (std::getline(ss, tok, ',')) shape.push_back(std::stoi(tok));
        }
    }
    if (classes <= 0 || shape.empty()) throw IoError(dir + "/meta.txt: missing classes or shape");
    if (dtype != "f64") throw IoError("unsupported dtype " + dtype);

    auto load_split = [&](const std::string& split) {
        DatasetHandle ds;
        ds.name = fs::path(dir).filename().string();
        ds.split = split;
        ds.input_shape = shape;
        ds.num_classes = classes;
        {
            auto f = open_in(dir + "/" + split + "-inputs.f64");
            f.seekg(0, std::ios::end);
            const auto bytes = static_cast<size_t>(f.tellg());
            f.seekg(0);
            ds.inputs.resize(bytes / sizeof(double));
            f.read(reinterpret_cast<char*>(ds.inputs.data()), static_cast<std::streamsize>(bytes));
            if (!f) throw IoError("truncated " + split + "-inputs.f64");
        }
        {
            auto f = open_in(dir + "/" + split + "-labels.i32");
            f.seekg(0, std::ios::end);
            const auto bytes = static_cast<size_t>(f.tellg());
            f.seekg(0);
            std::vector<int32_t> raw(bytes / sizeof(int32_t));
            f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
            if (!f) throw IoError("truncated " + split + "-labels.i32");
            ds.labels.assign(raw.begin(), raw.end());
        }
        if (ds.inputs.size() != ds.labels.size() * static_cast<size_t>(ds.sample_numel()))
            throw IoError(split + ": inputs/labels size mismatch");
        return ds;
    };
    // f64 array dirs hold already-prepared values; no renormalization, so a
    // write/load round trip is exact.
    return {load_split("train"), load_split("test")};
}

void write_array_dir(const std::string& dir, const DatasetHandle& train,
                     const DatasetHandle& test) {
    fs::create_directories(dir);
    {
        std::ofstream meta(dir + "/meta.txt");
        meta << "classes=" << train.num_classes << "\n";
        meta << "shape=";
        for (size_t i = 0; i < train.input_shape.size(); ++i)
            meta << (i ? "," : "") << train.input_shape[i];
        meta << "\ndtype=f64\n";
        if (!meta) throw IoError("failed writing " + dir + "/meta.txt");
    }
    auto dump_split = [&](const DatasetHandle& ds, const std::string& split) {
        auto fi = open_out(dir + "/" + split + "-inputs.f64");
        fi.write(reinterpret_cast<const char*>(ds.inputs.data()),
                 static_cast<std::streamsize>(ds.inputs.size() * sizeof(double)));
        std::vector<int32_t> raw(ds.labels.begin(), ds.labels.end());
        auto fl = open_out(dir + "/" + split + "-labels.i32");
        fl.write(reinterpret_cast<const char*>(raw.data()),
                 static_cast<std::streamsize>(raw.size() * sizeof(int32_t)));
        if (!fi || !fl) throw IoError("failed writing split " + split);
    };
    dump_split(train, "train");
    dump_split(test, "test");
}

namespace {

// 5x7 glyphs, row-major, '1' = ink; three typefaces per digit so one class
// spans several shape modes
using GlyphSet = std::array<std::array<const char*, 7>, 10>;
const std::array<GlyphSet, 3> kGlyphFonts = {{
    {{
        {"01110", "10001", "10011", "10101", "11001", "10001", "01110"}, // 0
        {"00100", "01100", "00100", "00100", "00100", "00100", "01110"}, // 1
        {"01110", "10001", "00001", "00010", "00100", "01000", "11111"}, // 2
        {"11111", "00010", "00100", "00010", "00001", "10001", "01110"}, // 3
        {"00010", "00110", "01010", "10010", "11111", "00010", "00010"}, // 4
        {"11111", "10000", "11110", "00001", "00001", "10001", "01110"}, // 5
        {"00110", "01000", "10000", "11110", "10001", "10001", "01110"}, // 6
        {"11111", "00001", "00010", "00100", "01000", "01000", "01000"}, // 7
        {"01110", "10001", "10001", "01110", "10001", "10001", "01110"}, // 8
        {"01110", "10001", "10001", "01111", "00001", "00010", "01100"}, // 9
    }},
    {{
        {"11111", "10001", "10001", "10001", "10001", "10001", "11111"}, // 0
        {"00100", "00100", "00100", "00100", "00100", "00100", "00100"}, // 1
        {"11111", "00001", "00001", "11111", "10000", "10000", "11111"}, // 2
        {"11111", "00001", "00001", "01111", "00001", "00001", "11111"}, // 3
        {"10001", "10001", "10001", "11111", "00001", "00001", "00001"}, // 4
        {"11111", "10000", "10000", "11111", "00001", "00001", "11110"}, // 5
        {"01111", "10000", "10000", "11111", "10001", "10001", "11111"}, // 6
        {"11111", "00001", "00010", "00100", "01000", "10000", "10000"}, // 7
        {"11111", "10001", "10001", "11111", "10001", "10001", "11111"}, // 8
        {"11111", "10001", "10001", "11111", "00001", "00001", "00001"}, // 9
    }},
    {{
        {"01110", "10001", "10001", "10001", "10001", "10001", "01110"}, // 0
        {"01100", "00100", "00100", "00100", "00100", "00100", "11111"}, // 1
        {"01110", "10001", "00010", "00100", "01000", "10000", "11111"}, // 2
        {"01110", "10001", "00110", "00001", "00001", "10001", "01110"}, // 3
        {"00011", "00101", "01001", "10001", "11111", "00001", "00001"}, // 4
        {"11110", "10000", "11110", "00001", "00001", "10001", "01110"}, // 5
        {"00111", "01000", "10000", "10110", "11001", "10001", "01110"}, // 6
        {"11111", "00010", "00010", "00100", "00100", "01000", "01000"}, // 7
        {"01110", "10001", "10001", "01110", "10001", "10001", "01110"}, // 8
        {"01110", "10001", "10011", "01101", "00001", "00010", "01100"}, // 9
    }},
}};

} // namespace

DatasetHandle make_synthetic_digits(int per_class, int image_size, uint64_t seed,
                                    const std::string& split) {
    if (per_class <= 0) throw ConfigInvalid("per_class must be positive");
    if (image_size < 16) throw ConfigInvalid("digit canvas must be at least 16 pixels");
    const int S = image_size;
    DatasetHandle ds;
    ds.name = "digits";
    ds.split = split;
    ds.input_shape = {1, S, S};
    ds.num_classes = 10;
    ds.inputs.reserve(static_cast<size_t>(10) * per_class * S * S);
    const uint64_t split_tag = split == "train" ? 0x747261696eull : 0x74657374ull;
    std::vector<double> img(static_cast<size_t>(S) * S);
    // glyph cells are 2 canvas pixels at S=16 and scale with the canvas
    const double cell = 2.0 * S / 16.0;
    for (int digit = 0; digit < 10; ++digit) {
        auto rng = make_rng(mix_seed(seed, split_tag, static_cast<uint64_t>(digit)));
        for (int k = 0; k < per_class; ++k) {
            const auto& glyph =
                kGlyphFonts[rand_index(rng, 3)][static_cast<size_t>(digit)];
            const double angle = rand_uniform(rng, -0.45, 0.45);
            const double scale = rand_uniform(rng, 0.75, 1.15);
            const double shear = rand_uniform(rng, -0.3, 0.3);
            const double cx = S * 0.5 - 0.5 + rand_uniform(rng, -2.0, 2.0);
            const double cy = S * 0.5 - 0.5 + rand_uniform(rng, -2.0, 2.0);
            const double intensity = rand_uniform(rng, 0.55, 1.0);
            // inverse of canvas = R(angle) * Shear(shear) * (scale*cell) * glyph
            const double ca = std::cos(angle), sa = std::sin(angle);
            const double inv = 1.0 / (scale * cell);
            for (int y = 0; y < S; ++y) {
                for (int x = 0; x < S; ++x) {
                    double hit = 0.0;
                    for (int sub = 0; sub < 4; ++sub) {
                        const double px = x - cx + 0.25 * (sub % 2 ? 1 : -1);
                        const double py = y - cy + 0.25 * (sub / 2 ? 1 : -1);
                        const double rx = ca * px + sa * py;
                        const double ry = -sa * px + ca * py;
                        const double u = (rx - shear * ry) * inv + 2.5;
                        const double v = ry * inv + 3.5;
                        const int gc = static_cast<int>(std::floor(u));
                        const int gr = static_cast<int>(std::floor(v));
                        if (gr >= 0 && gr < 7 && gc >= 0 && gc < 5 &&
                            glyph[static_cast<size_t>(gr)][static_cast<size_t>(gc)] == '1')
                            hit += 0.25;
                    }
                    img[static_cast<size_t>(y) * S + x] = intensity * hit;
                }
            }
            // an occluding stroke through a random chord, matching no class
            if (rand_uniform(rng, 0.0, 1.0) < 0.5) {
                const double sx = rand_uniform(rng, 0.0, S - 1.0);
                const double sy = rand_uniform(rng, 0.0, S - 1.0);
                const double dir = rand_uniform(rng, 0.0, 6.2831853);
                const double ink = rand_uniform(rng, 0.3, 0.9);
                const double dx = std::cos(dir), dy = std::sin(dir);
                for (double t = -S; t <= S; t += 0.5) {
                    const int x = static_cast<int>(std::lround(sx + t * dx));
                    const int y = static_cast<int>(std::lround(sy + t * dy));
                    if (x >= 0 && x < S && y >= 0 && y < S)
                        img[static_cast<size_t>(y) * S + x] =
                            std::max(img[static_cast<size_t>(y) * S + x], ink);
                }
            }
            for (auto& v : img) {
                v += rand_gauss(rng, 0.0, 0.15);
                v = std::min(1.0, std::max(0.0, v));
            }
            ds.push_sample(img.data(), digit);
        }
    }
    return ds;
}

std::pair<DatasetHandle, DatasetHandle> make_digit_benchmark(int per_class_train,
                                                             int per_class_test, int image_size,
                                                             uint64_t seed) {
    DatasetHandle train = make_synthetic_digits(per_class_train, image_size, seed, "train");
    DatasetHandle test = make_synthetic_digits(per_class_test, image_size, seed, "test");
    normalize_pair(train, test);
    return {std::move(train), std::move(test)};
}

} // namespace tkil
