#include "patchnet/kv_config.hpp"

#include <fstream>
#include <sstream>

namespace patchnet {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path + ": cannot open config file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
}

KvConfig KvConfig::parse_string(const std::string& text, const std::string& context) {
    KvConfig cfg;
    cfg.context_ = context;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(context + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(context + ":" + std::to_string(line_no) + ": empty key");
        }
        if (cfg.values_.count(key)) {
            throw ConfigError(context + ":" + std::to_string(line_no) + ": duplicate key '" +
                              key + "'");
        }
        cfg.values_[key] = value;
    }
    return cfg;
}

std::string KvConfig::get_string(const std::string& key, const std::string& def) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
}

double KvConfig::get_double(const std::string& key, double def) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
        size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(context_ + ": key '" + key + "': '" + it->second + "' is not a number");
    }
}

int KvConfig::get_int(const std::string& key, int def) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
        size_t pos = 0;
        long v = std::stol(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return static_cast<int>(v);
    } catch (const std::exception&) {
        throw ConfigError(context_ + ": key '" + key + "': '" + it->second + "' is not an integer");
    }
}

uint64_t KvConfig::get_u64(const std::string& key, uint64_t def) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
        size_t pos = 0;
        uint64_t v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(context_ + ": key '" + key + "': '" + it->second + "' is not an integer");
    }
}

bool KvConfig::get_bool(const std::string& key, bool def) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError(context_ + ": key '" + key + "': '" + it->second +
                      "' is not a boolean (true|false|1|0)");
}

std::vector<int> KvConfig::get_int_list(const std::string& key, std::vector<int> def) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::vector<int> out;
    std::istringstream in(it->second);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            size_t pos = 0;
            out.push_back(static_cast<int>(std::stol(trim(item), &pos)));
        } catch (const std::exception&) {
            throw ConfigError(context_ + ": key '" + key + "': '" + item + "' is not an integer");
        }
    }
    if (out.empty()) {
        throw ConfigError(context_ + ": key '" + key + "': empty list");
    }
    return out;
}

void KvConfig::finish() const {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : values_) {
        if (!consumed_.count(key)) unknown.push_back(key);
    }
    if (!unknown.empty()) {
        std::string valid;
        for (const auto& key : consumed_) {
            if (!valid.empty()) valid += ", ";
            valid += key;
        }
        std::string msg = context_ + ": unknown key(s):";
        for (const auto& key : unknown) msg += " '" + key + "'";
        msg += "; valid keys: " + valid;
        throw ConfigError(msg);
    }
}

}  // namespace patchnet
