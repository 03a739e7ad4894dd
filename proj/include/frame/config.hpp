#pragma once

#include <map>
#include <string>
#include <vector>

namespace frame {

// Plain key=value text, one pair per line, '#' comments.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> load_key_value_file(
    const std::string& path);
std::string render_key_values(const std::map<std::string, std::string>& kv);

// Flags win over config-file values; both override the defaults. Keys in the
// config file that are not known are rejected.
std::map<std::string, std::string> merge_config(
    const std::map<std::string, std::string>& defaults,
    const std::map<std::string, std::string>& config_file,
    const std::map<std::string, std::string>& flags);

std::vector<std::string> split_list(const std::string& csv);

}  // namespace frame
