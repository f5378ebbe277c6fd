#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "patchnet/error.hpp"

namespace patchnet {

// Flat "key = value" config files. '#' starts a comment; blank lines are
// ignored. Every key must be consumed by a typed getter; finish() rejects
// leftovers so typos never pass silently.
class KvConfig {
public:
    static KvConfig parse_file(const std::string& path);
    static KvConfig parse_string(const std::string& text, const std::string& context = "<config>");

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& def) const;
    double get_double(const std::string& key, double def) const;
    int get_int(const std::string& key, int def) const;
    uint64_t get_u64(const std::string& key, uint64_t def) const;
    bool get_bool(const std::string& key, bool def) const;
    std::vector<int> get_int_list(const std::string& key, std::vector<int> def) const;

    // Throws ConfigError naming every key that no getter consumed.
    void finish() const;

private:
    std::string context_;
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

}  // namespace patchnet
