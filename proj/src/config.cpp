#include "cadenza/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cadenza {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

KvMap parse_kv_text(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

std::string kv_to_text(const KvMap& kv) {
    std::ostringstream out;
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
    return out.str();
}

KvMap load_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_kv_text(ss.str());
}

void save_kv_file(const KvMap& kv, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config file: " + path);
    out << kv_to_text(kv);
}

std::string kv_get(const KvMap& kv, const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
}

long kv_get_long(const KvMap& kv, const std::string& key, long fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : std::stol(it->second);
}

int kv_get_int(const KvMap& kv, const std::string& key, int fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : std::stoi(it->second);
}

double kv_get_double(const KvMap& kv, const std::string& key, double fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : std::stod(it->second);
}

bool kv_get_bool(const KvMap& kv, const std::string& key, bool fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("config key '" + key + "': expected boolean, got '" + v + "'");
}

std::vector<int> kv_get_int_list(const KvMap& kv, const std::string& key,
                                 const std::vector<int>& fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    std::vector<int> out;
    std::istringstream in(it->second);
    std::string item;
    while (std::getline(in, item, ','))
        if (!trim(item).empty()) out.push_back(std::stoi(trim(item)));
    return out;
}

std::string int_list_to_string(const std::vector<int>& v) {
    std::ostringstream out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out << ',';
        out << v[i];
    }
    return out.str();
}

} // namespace cadenza
