#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace bk::clip {

// Dense float32 tensor in row-major order; half-precision inputs are widened on load.
struct HostTensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    std::int64_t numel() const;
    std::int64_t dim(int i) const { return shape.at(i < 0 ? shape.size() + i : i); }
};

class SafeTensors {
public:
    static SafeTensors load(const std::filesystem::path& path);

    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const HostTensor& at(const std::string& name) const;
    std::vector<std::string> names() const;
    const std::map<std::string, std::string>& metadata() const { return metadata_; }

    void insert(std::string name, HostTensor t) { tensors_[std::move(name)] = std::move(t); }
    void set_metadata(std::string key, std::string value) { metadata_[std::move(key)] = std::move(value); }

    // Writes float32 tensors; used for test fixtures and converted checkpoints.
    void save(const std::filesystem::path& path) const;

private:
    std::map<std::string, HostTensor> tensors_;
    std::map<std::string, std::string> metadata_;
    std::string source_;
};

}  // namespace bk::clip
