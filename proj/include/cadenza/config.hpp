#pragma once

#include <map>
#include <string>
#include <vector>

namespace cadenza {

// `key = value` lines; '#' starts a comment; blank lines ignored.
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_text(const std::string& text);
std::string kv_to_text(const KvMap& kv);
KvMap load_kv_file(const std::string& path);
void save_kv_file(const KvMap& kv, const std::string& path);

std::string kv_get(const KvMap& kv, const std::string& key, const std::string& fallback);
long kv_get_long(const KvMap& kv, const std::string& key, long fallback);
int kv_get_int(const KvMap& kv, const std::string& key, int fallback);
double kv_get_double(const KvMap& kv, const std::string& key, double fallback);
bool kv_get_bool(const KvMap& kv, const std::string& key, bool fallback);
std::vector<int> kv_get_int_list(const KvMap& kv, const std::string& key,
                                 const std::vector<int>& fallback);
std::string int_list_to_string(const std::vector<int>& v);

} // namespace cadenza
