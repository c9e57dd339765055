#include "bal/binio.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace bal {

namespace {

template <typename T>
void put_le(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    buf.append(raw, sizeof(T));
}

class Cursor {
public:
    Cursor(std::string_view data, std::size_t limit) : data_(data), limit_(limit) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        char raw[sizeof(T)];
        std::memcpy(raw, data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, raw, sizeof(T));
        return v;
    }

    std::string_view take(std::size_t n, const char* what) {
        need(n, what);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == limit_; }

private:
    void need(std::size_t n, const char* what) {
        if (n > limit_ - pos_)
            throw FormatError(FormatErrorCode::truncated, std::string(what) + " runs past end of data at byte " +
                                                              std::to_string(pos_));
    }

    std::string_view data_;
    std::size_t limit_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(FormatErrorCode code) {
    switch (code) {
        case FormatErrorCode::io: return "io error";
        case FormatErrorCode::bad_magic: return "bad magic";
        case FormatErrorCode::version_mismatch: return "version mismatch";
        case FormatErrorCode::checksum_mismatch: return "checksum mismatch";
        case FormatErrorCode::truncated: return "truncated";
        case FormatErrorCode::malformed: return "malformed";
    }
    return "unknown";
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

BinaryWriter::BinaryWriter(std::string_view magic, std::uint32_t version, std::string_view header) {
    buf_.append(magic);
    u32(version);
    prefixed(header);
}

void BinaryWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void BinaryWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void BinaryWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }

void BinaryWriter::prefixed(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
}

void BinaryWriter::tensor(std::string_view name, const Tensor& t) {
    prefixed(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) u32(static_cast<std::uint32_t>(d));
    buf_.reserve(buf_.size() + 4 * t.size());
    for (double v : t.data()) f32(static_cast<float>(v));
}

std::string BinaryWriter::finish() && {
    u64(fnv1a64(buf_));
    return std::move(buf_);
}

Container Container::parse(std::string_view bytes, std::string_view magic, std::uint32_t expected_version) {
    if (bytes.size() < magic.size())
        throw FormatError(FormatErrorCode::truncated, "file shorter than its magic");
    if (bytes.substr(0, magic.size()) != magic)
        throw FormatError(FormatErrorCode::bad_magic, "expected '" + std::string(magic) + "'");
    if (bytes.size() < magic.size() + 4 + 8) throw FormatError(FormatErrorCode::truncated, "missing header");

    Container c;
    const std::size_t body_end = bytes.size() - 8;
    Cursor cur(bytes, body_end);
    cur.take(magic.size(), "magic");
    c.version = cur.get<std::uint32_t>("version");
    if (c.version != expected_version)
        throw FormatError(FormatErrorCode::version_mismatch, "file version " + std::to_string(c.version) +
                                                                 ", expected " + std::to_string(expected_version));
    const auto header_len = cur.get<std::uint32_t>("header length");
    c.header = std::string(cur.take(header_len, "header"));
    while (!cur.done()) {
        TensorRecord rec;
        const auto name_len = cur.get<std::uint32_t>("record name length");
        rec.name = std::string(cur.take(name_len, "record name"));
        const auto rank = cur.get<std::uint32_t>("record rank");
        if (rank == 0 || rank > 8)
            throw FormatError(FormatErrorCode::malformed, "record '" + rec.name + "' has rank " + std::to_string(rank));
        Shape shape(rank);
        std::size_t count = 1;
        for (auto& d : shape) {
            d = cur.get<std::uint32_t>("record extent");
            if (d == 0) throw FormatError(FormatErrorCode::malformed, "record '" + rec.name + "' has a zero extent");
            count *= d;
        }
        if (count > (body_end - cur.pos()) / 4)
            throw FormatError(FormatErrorCode::truncated, "payload of '" + rec.name + "' runs past end of data");
        std::vector<double> values(count);
        for (auto& v : values) v = std::bit_cast<float>(cur.get<std::uint32_t>("payload"));
        rec.tensor = Tensor(std::move(shape), std::move(values));
        c.tensors.push_back(std::move(rec));
    }
    Cursor tail(bytes.substr(body_end), 8);
    const auto stored = tail.get<std::uint64_t>("checksum");
    const auto actual = fnv1a64(bytes.substr(0, body_end));
    if (stored != actual) throw FormatError(FormatErrorCode::checksum_mismatch, "stored and computed checksums differ");
    return c;
}

const Tensor* Container::find(std::string_view name) const {
    for (const auto& r : tensors)
        if (r.name == name) return &r.tensor;
    return nullptr;
}

const Tensor& Container::get(std::string_view name) const {
    if (const Tensor* t = find(name)) return *t;
    throw FormatError(FormatErrorCode::malformed, "missing tensor record '" + std::string(name) + "'");
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrorCode::io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrorCode::io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatErrorCode::io, "short write to " + path.string());
}

}  // namespace bal
