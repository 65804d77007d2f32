#include "boubakiki/result_store.hpp"

#include <algorithm>
#include <sstream>

#include "boubakiki/types.hpp"
#include "boubakiki/util.hpp"

namespace bk::store {

namespace {

// Parses complete lines; the trailing fragment after the last newline is ignored.
std::vector<Json> parse_lines(const std::string& text, std::size_t* valid_bytes) {
    std::vector<Json> out;
    std::size_t start = 0;
    std::size_t good = 0;
    while (start < text.size()) {
        const auto nl = text.find('\n', start);
        if (nl == std::string::npos) break;
        const std::string line = text.substr(start, nl - start);
        if (!line.empty()) {
            try {
                out.push_back(Json::parse(line));
            } catch (const Json::parse_error& e) {
                throw InputError("malformed record in store at byte " + std::to_string(start) + ": " + e.what());
            }
        }
        start = nl + 1;
        good = start;
    }
    if (valid_bytes) *valid_bytes = good;
    return out;
}

}  // namespace

JsonlStore::JsonlStore(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    if (std::filesystem::exists(path_)) {
        const std::string text = util::read_file(path_);
        std::size_t valid = 0;
        for (const auto& r : parse_lines(text, &valid)) keys_.insert(r.at("key").get<std::string>());
        if (valid != text.size()) std::filesystem::resize_file(path_, valid);
    }
    out_.open(path_, std::ios::app | std::ios::binary);
    if (!out_) throw InputError("cannot open result store " + path_.string());
}

bool JsonlStore::contains(const std::string& key) const {
    std::lock_guard lock(mutex_);
    return keys_.count(key) != 0;
}

bool JsonlStore::append(const Json& record) {
    const auto& key = record.at("key").get_ref<const std::string&>();
    const std::string line = record.dump() + "\n";
    std::lock_guard lock(mutex_);
    if (!keys_.insert(key).second) return false;
    out_ << line;
    out_.flush();
    if (!out_) throw std::runtime_error("write to " + path_.string() + " failed");
    return true;
}

std::size_t JsonlStore::size() const {
    std::lock_guard lock(mutex_);
    return keys_.size();
}

void JsonlStore::canonicalize() {
    std::lock_guard lock(mutex_);
    out_.close();
    auto records = read_all(path_);
    std::sort(records.begin(), records.end(),
              [](const Json& a, const Json& b) { return a.at("key").get_ref<const std::string&>() < b.at("key").get_ref<const std::string&>(); });
    std::string text;
    for (const auto& r : records) text += r.dump() + "\n";
    util::atomic_write(path_, text);
    out_.open(path_, std::ios::app | std::ios::binary);
}

std::vector<Json> JsonlStore::read_all(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) return {};
    return parse_lines(util::read_file(path), nullptr);
}

std::string make_key(const std::vector<std::string>& parts) {
    std::string joined;
    for (const auto& p : parts) {
        joined += p;
        joined.push_back('\x1f');
    }
    return util::hex64(util::fnv1a64(joined));
}

std::string file_hash(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) return util::hex64(util::fnv1a64(std::string_view{}));
    return util::hash_file(path);
}

}  // namespace bk::store
