#include "boubakiki/npz.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <regex>

#include <zlib.h>

#include "boubakiki/types.hpp"
#include "boubakiki/util.hpp"

namespace bk::npz {

namespace {

static_assert(std::endian::native == std::endian::little, "npz writer assumes a little-endian host");

void put16(std::string& s, std::uint16_t v) { s.append(reinterpret_cast<const char*>(&v), 2); }
void put32(std::string& s, std::uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); }

std::uint16_t get16(const std::string& s, std::size_t at) {
    std::uint16_t v;
    std::memcpy(&v, s.data() + at, 2);
    return v;
}
std::uint32_t get32(const std::string& s, std::size_t at) {
    std::uint32_t v;
    std::memcpy(&v, s.data() + at, 4);
    return v;
}

std::string deflate_raw(const std::string& in) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, -15, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        throw std::runtime_error("deflateInit2 failed");
    std::string out(deflateBound(&zs, static_cast<uLong>(in.size())), '\0');
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw std::runtime_error("deflate failed");
    out.resize(zs.total_out);
    return out;
}

std::string inflate_raw(const std::string& in, std::size_t expected) {
    z_stream zs{};
    if (inflateInit2(&zs, -15) != Z_OK) throw std::runtime_error("inflateInit2 failed");
    std::string out(expected, '\0');
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END) throw InputError("corrupt npz member");
    return out;
}

}  // namespace

std::string npy_bytes(const Array& a) {
    const std::size_t n = std::accumulate(a.shape.begin(), a.shape.end(), std::size_t{1}, std::multiplies<>());
    if (n != a.data.size()) throw InputError("npy shape does not match data size");
    std::string shape = "(";
    for (std::size_t i = 0; i < a.shape.size(); ++i) {
        shape += std::to_string(a.shape[i]);
        if (a.shape.size() == 1) shape += ",";
        else if (i + 1 < a.shape.size()) shape += ", ";
    }
    shape += ")";
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape + ", }";
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header.push_back('\n');
    std::string out("\x93NUMPY\x01\x00", 8);
    put16(out, static_cast<std::uint16_t>(header.size()));
    out += header;
    for (double v : a.data) {
        const float f = static_cast<float>(v);
        out.append(reinterpret_cast<const char*>(&f), 4);
    }
    return out;
}

Array parse_npy(const std::string& bytes) {
    if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0) throw InputError("not an npy array");
    const std::size_t hlen = get16(bytes, 8);
    const std::string header = bytes.substr(10, hlen);
    if (header.find("'<f4'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos)
        throw InputError("unsupported npy layout: " + header);
    Array a;
    std::smatch m;
    if (!std::regex_search(header, m, std::regex(R"('shape': \(([0-9, ]*)\))")))
        throw InputError("npy header lacks a shape");
    const std::string dims = m[1];
    static const std::regex number("[0-9]+");
    for (std::sregex_iterator it(dims.begin(), dims.end(), number), end; it != end; ++it)
        a.shape.push_back(std::stoull(it->str()));
    const std::size_t n = std::accumulate(a.shape.begin(), a.shape.end(), std::size_t{1}, std::multiplies<>());
    if (bytes.size() != 10 + hlen + 4 * n) throw InputError("npy payload size mismatch");
    a.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, bytes.data() + 10 + hlen + 4 * i, 4);
        a.data[i] = f;
    }
    return a;
}

void write(const std::filesystem::path& path, const std::map<std::string, Array>& arrays, bool compress) {
    std::string zip, central;
    std::uint16_t count = 0;
    for (const auto& [name, array] : arrays) {
        const std::string file = name + ".npy";
        const std::string raw = npy_bytes(array);
        const std::string payload = compress ? deflate_raw(raw) : raw;
        const auto crc = static_cast<std::uint32_t>(
            crc32(0, reinterpret_cast<const Bytef*>(raw.data()), static_cast<uInt>(raw.size())));
        const auto offset = static_cast<std::uint32_t>(zip.size());
        const std::uint16_t method = compress ? 8 : 0;
        put32(zip, 0x04034b50);
        put16(zip, 20);
        put16(zip, 0);
        put16(zip, method);
        put16(zip, 0);
        put16(zip, 0x21);  // fixed DOS timestamp keeps archives byte-reproducible
        put32(zip, crc);
        put32(zip, static_cast<std::uint32_t>(payload.size()));
        put32(zip, static_cast<std::uint32_t>(raw.size()));
        put16(zip, static_cast<std::uint16_t>(file.size()));
        put16(zip, 0);
        zip += file;
        zip += payload;

        put32(central, 0x02014b50);
        put16(central, 20);
        put16(central, 20);
        put16(central, 0);
        put16(central, method);
        put16(central, 0);
        put16(central, 0x21);
        put32(central, crc);
        put32(central, static_cast<std::uint32_t>(payload.size()));
        put32(central, static_cast<std::uint32_t>(raw.size()));
        put16(central, static_cast<std::uint16_t>(file.size()));
        put16(central, 0);
        put16(central, 0);
        put16(central, 0);
        put16(central, 0);
        put32(central, 0);
        put32(central, offset);
        central += file;
        ++count;
    }
    const auto cd_offset = static_cast<std::uint32_t>(zip.size());
    zip += central;
    put32(zip, 0x06054b50);
    put16(zip, 0);
    put16(zip, 0);
    put16(zip, count);
    put16(zip, count);
    put32(zip, static_cast<std::uint32_t>(central.size()));
    put32(zip, cd_offset);
    put16(zip, 0);
    util::atomic_write(path, zip);
}

std::map<std::string, Array> read(const std::filesystem::path& path) {
    const std::string zip = util::read_file(path);
    if (zip.size() < 22) throw InputError("not an npz archive: " + path.string());
    const std::size_t eocd = zip.size() - 22;
    if (get32(zip, eocd) != 0x06054b50) throw InputError("npz archive has a trailing comment or is corrupt");
    const std::size_t count = get16(zip, eocd + 10);
    std::size_t at = get32(zip, eocd + 16);
    std::map<std::string, Array> out;
    for (std::size_t i = 0; i < count; ++i) {
        if (get32(zip, at) != 0x02014b50) throw InputError("corrupt npz central directory");
        const auto method = get16(zip, at + 10);
        const auto csize = get32(zip, at + 20);
        const auto usize = get32(zip, at + 24);
        const auto nlen = get16(zip, at + 28);
        const auto elen = get16(zip, at + 30);
        const auto clen = get16(zip, at + 32);
        const auto local = get32(zip, at + 42);
        std::string name = zip.substr(at + 46, nlen);
        at += 46 + nlen + elen + clen;
        const std::size_t data_at = local + 30 + get16(zip, local + 26) + get16(zip, local + 28);
        const std::string payload = zip.substr(data_at, csize);
        const std::string raw = method == 8 ? inflate_raw(payload, usize) : payload;
        if (name.size() > 4 && name.ends_with(".npy")) name.resize(name.size() - 4);
        out.emplace(std::move(name), parse_npy(raw));
    }
    return out;
}

}  // namespace bk::npz
