#include "boubakiki/clip/safetensors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "boubakiki/types.hpp"
#include "boubakiki/util.hpp"

namespace bk::clip {

using nlohmann::json;

std::int64_t HostTensor::numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

namespace {

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = (h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1f;
    std::uint32_t mant = h & 0x3ff;
    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            // Subnormal: renormalize.
            exp = 127 - 15 + 1;
            while ((mant & 0x400) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3ff;
            bits = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1f) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

float bf16_to_float(std::uint16_t h) { return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16); }

template <typename T>
T read_le(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    static_assert(std::endian::native == std::endian::little);
    return v;
}

}  // namespace

SafeTensors SafeTensors::load(const std::filesystem::path& path) {
    const std::string bytes = util::read_file(path);
    if (bytes.size() < 8) throw InputError(path.string() + ": not a safetensors file");
    const auto header_len = read_le<std::uint64_t>(bytes.data());
    if (header_len > bytes.size() - 8) throw InputError(path.string() + ": truncated header");
    json header;
    try {
        header = json::parse(bytes.substr(8, header_len));
    } catch (const json::parse_error& e) {
        throw InputError(path.string() + ": bad header: " + e.what());
    }
    const char* payload = bytes.data() + 8 + header_len;
    const std::size_t payload_len = bytes.size() - 8 - header_len;

    SafeTensors st;
    st.source_ = path.string();
    for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == "__metadata__") {
            for (auto m = it->begin(); m != it->end(); ++m) st.metadata_[m.key()] = m->get<std::string>();
            continue;
        }
        const auto& info = it.value();
        HostTensor t;
        t.shape = info.at("shape").get<std::vector<std::int64_t>>();
        const auto dtype = info.at("dtype").get<std::string>();
        const auto offsets = info.at("data_offsets").get<std::vector<std::size_t>>();
        if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > payload_len)
            throw InputError(path.string() + ": bad offsets for " + it.key());
        const char* src = payload + offsets[0];
        const std::size_t nbytes = offsets[1] - offsets[0];
        const auto n = static_cast<std::size_t>(t.numel());
        t.data.resize(n);
        std::size_t width = 0;
        if (dtype == "F32") width = 4;
        else if (dtype == "F16" || dtype == "BF16") width = 2;
        else if (dtype == "F64") width = 8;
        else throw InputError(path.string() + ": unsupported dtype " + dtype + " for " + it.key());
        if (nbytes != n * width) throw InputError(path.string() + ": size mismatch for " + it.key());
        for (std::size_t i = 0; i < n; ++i) {
            const char* p = src + i * width;
            if (dtype == "F32") t.data[i] = read_le<float>(p);
            else if (dtype == "F16") t.data[i] = half_to_float(read_le<std::uint16_t>(p));
            else if (dtype == "BF16") t.data[i] = bf16_to_float(read_le<std::uint16_t>(p));
            else t.data[i] = static_cast<float>(read_le<double>(p));
        }
        st.tensors_.emplace(it.key(), std::move(t));
    }
    return st;
}

const HostTensor& SafeTensors::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw InputError("tensor '" + name + "' missing from " + source_);
    return it->second;
}

std::vector<std::string> SafeTensors::names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : tensors_) out.push_back(k);
    return out;
}

void SafeTensors::save(const std::filesystem::path& path) const {
    json header = json::object();
    if (!metadata_.empty()) header["__metadata__"] = metadata_;
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors_) {
        const std::size_t nbytes = t.data.size() * sizeof(float);
        header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + nbytes}}};
        offset += nbytes;
    }
    std::string head = header.dump();
    while ((head.size() + 8) % 8 != 0) head.push_back(' ');
    std::string out(8, '\0');
    const std::uint64_t len = head.size();
    std::memcpy(out.data(), &len, 8);
    out += head;
    for (const auto& [name, t] : tensors_)
        out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
    util::atomic_write(path, out);
}

}  // namespace bk::clip
