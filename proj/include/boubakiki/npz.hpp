#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

// Minimal .npz (zip of .npy) writer/reader for saliency maps; arrays are stored as little-endian float32.
namespace bk::npz {

struct Array {
    std::vector<std::size_t> shape;
    std::vector<double> data;  // row-major
};

std::string npy_bytes(const Array& a);
Array parse_npy(const std::string& bytes);

void write(const std::filesystem::path& path, const std::map<std::string, Array>& arrays, bool compress = true);
std::map<std::string, Array> read(const std::filesystem::path& path);

}  // namespace bk::npz
