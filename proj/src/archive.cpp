#include "tkil/archive.hpp"

#include <cstring>
#include <fstream>

#include "tkil/errors.hpp"

namespace tkil {

namespace {

constexpr char kMagic[8] = {'T', 'K', 'A', 'R', '0', '0', '0', '1'};
enum EntryKind : uint8_t { kArray = 0, kString = 1, kInt = 2 };

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("truncated archive");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
    const uint64_t n = get_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw IoError("truncated archive string");
    return s;
}

} // namespace

const Tensor& Archive::array(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw IoError("archive missing array " + name);
    return it->second;
}

const std::string& Archive::str(const std::string& name) const {
    auto it = strings.find(name);
    if (it == strings.end()) throw IoError("archive missing string " + name);
    return it->second;
}

int64_t Archive::integer(const std::string& name) const {
    auto it = ints.find(name);
    if (it == ints.end()) throw IoError("archive missing integer " + name);
    return it->second;
}

void save_archive(const std::string& path, const Archive& a) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(kMagic, 8);
    put_u64(f, a.arrays.size() + a.strings.size() + a.ints.size());
    for (const auto& [name, t] : a.arrays) {
        f.put(static_cast<char>(kArray));
        put_string(f, name);
        put_u64(f, t.shape.size());
        for (int d : t.shape) put_u64(f, static_cast<uint64_t>(d));
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    for (const auto& [name, s] : a.strings) {
        f.put(static_cast<char>(kString));
        put_string(f, name);
        put_string(f, s);
    }
    for (const auto& [name, v] : a.ints) {
        f.put(static_cast<char>(kInt));
        put_string(f, name);
        put_u64(f, static_cast<uint64_t>(v));
    }
    if (!f) throw IoError("failed writing " + path);
}

Archive load_archive(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path + ": not an archive");
    Archive a;
    const uint64_t n = get_u64(f);
    for (uint64_t i = 0; i < n; ++i) {
        const int kind = f.get();
        if (kind == EOF) throw IoError("truncated archive entry");
        const std::string name = get_string(f);
        if (kind == kArray) {
            const uint64_t ndim = get_u64(f);
            std::vector<int> shape(ndim);
            for (auto& d : shape) d = static_cast<int>(get_u64(f));
            Tensor t = Tensor::zeros(shape);
            f.read(reinterpret_cast<char*>(t.data.data()),
                   static_cast<std::streamsize>(t.data.size() * sizeof(double)));
            if (!f) throw IoError("truncated array " + name);
            a.arrays.emplace(name, std::move(t));
        } else if (kind == kString) {
            a.strings.emplace(name, get_string(f));
        } else if (kind == kInt) {
            a.ints.emplace(name, static_cast<int64_t>(get_u64(f)));
        } else {
            throw IoError("unknown archive entry kind");
        }
    }
    return a;
}

} // namespace tkil
