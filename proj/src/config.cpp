#include "frame/config.hpp"

#include <fstream>
#include <sstream>

#include "frame/errors.hpp"

namespace frame {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(lineno) +
                        ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw FormatError("config line " + std::to_string(lineno) +
                        ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> load_key_value_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_key_values(buf.str());
}

std::string render_key_values(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::map<std::string, std::string> merge_config(
    const std::map<std::string, std::string>& defaults,
    const std::map<std::string, std::string>& config_file,
    const std::map<std::string, std::string>& flags) {
  std::map<std::string, std::string> merged = defaults;
  for (const auto& [k, v] : config_file) {
    if (!merged.count(k))
      throw InvalidArgument("unknown config key: " + k);
    merged[k] = v;
  }
  for (const auto& [k, v] : flags) {
    if (!merged.count(k))
      throw InvalidArgument("unknown flag key: " + k);
    merged[k] = v;
  }
  return merged;
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(csv);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace frame
