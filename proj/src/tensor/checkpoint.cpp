#include "aasn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace aasn {

namespace {

constexpr char kMagic[4] = {'A', 'A', 'S', 'N'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw LoadError(std::string("archive truncated while reading ") + what);
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::string encode_archive(const TensorArchive& archive) {
    std::string out(kMagic, 4);
    put_u32(out, kArchiveVersion);
    put_u32(out, static_cast<std::uint32_t>(archive.header.size()));
    out += archive.header;
    put_u32(out, static_cast<std::uint32_t>(archive.entries.size()));
    for (const auto& [name, t] : archive.entries) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        const Shape s = t.shape();
        put_u32(out, static_cast<std::uint32_t>(s.n));
        put_u32(out, static_cast<std::uint32_t>(s.c));
        put_u32(out, static_cast<std::uint32_t>(s.h));
        put_u32(out, static_cast<std::uint32_t>(s.w));
        for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

TensorArchive decode_archive(const std::string& bytes) {
    Reader r(bytes);
    if (r.str(4, "magic") != std::string(kMagic, 4)) {
        throw LoadError("not an AASN archive (bad magic)");
    }
    const std::uint32_t version = r.u32("version");
    if (version != kArchiveVersion) {
        throw LoadError("archive format version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kArchiveVersion) + ")");
    }
    TensorArchive archive;
    archive.header = r.str(r.u32("header length"), "header");
    const std::uint32_t count = r.u32("entry count");
    std::set<std::string> seen;
    for (std::uint32_t e = 0; e < count; ++e) {
        std::string name = r.str(r.u32("name length"), "entry name");
        if (!seen.insert(name).second) {
            throw LoadError("archive lists tensor '" + name + "' twice");
        }
        Shape s;
        s.n = static_cast<int>(r.u32("dims"));
        s.c = static_cast<int>(r.u32("dims"));
        s.h = static_cast<int>(r.u32("dims"));
        s.w = static_cast<int>(r.u32("dims"));
        if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0) {
            throw LoadError("tensor '" + name + "' has invalid shape " + s.str());
        }
        std::vector<float> values(s.numel());
        for (float& v : values) v = std::bit_cast<float>(r.u32("payload"));
        archive.entries.emplace_back(std::move(name), Tensor(s, std::move(values)));
    }
    if (!r.done()) {
        throw LoadError("archive has trailing bytes after the last entry");
    }
    return archive;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
    const std::string bytes = encode_archive(archive);
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

TensorArchive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_archive(bytes);
}

} // namespace aasn
