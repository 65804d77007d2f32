#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

namespace bk::store {

using Json = nlohmann::json;

// Append-only JSON-lines store with unique-key enforcement.
//
// Every record carries a string field "key". Opening an existing file loads its keys;
// a torn final line (interrupted write) is dropped. Appends are thread-safe and flushed.
class JsonlStore {
public:
    explicit JsonlStore(std::filesystem::path path);

    bool contains(const std::string& key) const;
    // Returns false (and writes nothing) if the key is already present.
    bool append(const Json& record);
    std::size_t size() const;
    const std::filesystem::path& path() const { return path_; }

    // Rewrites the file sorted by key so interrupted-and-resumed runs end byte-identical.
    void canonicalize();

    static std::vector<Json> read_all(const std::filesystem::path& path);

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::unordered_set<std::string> keys_;
    std::ofstream out_;
};

// Stable hex key over the given parts (joined with a separator byte).
std::string make_key(const std::vector<std::string>& parts);

// Content hash of a store file (empty string hash when absent).
std::string file_hash(const std::filesystem::path& path);

}  // namespace bk::store
