#include "gld/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace gld {

namespace {

constexpr char kMagic[8] = {'G', 'L', 'D', 'C', 'K', 'P', 'T', 1};
constexpr int kVersion = 1;

}  // namespace

void checkpoint_save(const std::string& path, const std::string& kind,
                     const nn::ParamStore& params, const std::string& meta_json) {
  nlohmann::json header;
  header["version"] = kVersion;
  header["kind"] = kind;
  header["meta"] = meta_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(meta_json);
  nlohmann::json plist = nlohmann::json::array();
  int64_t offset = 0;
  for (const std::string& name : params.names()) {
    const Tensor t = params.get(name);
    plist.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel() * int64_t(sizeof(float));
  }
  header["params"] = std::move(plist);
  const std::string htext = header.dump();

  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot open for writing: ", path);
  f.write(kMagic, 8);
  const uint32_t hlen = uint32_t(htext.size());
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(htext.data(), std::streamsize(htext.size()));
  for (const std::string& name : params.names()) {
    const Tensor t = params.get(name);
    f.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.numel() * sizeof(float)));
  }
  check(f.good(), "write failed: ", path);
}

namespace {

nlohmann::json read_header(std::ifstream& f, const std::string& path) {
  char magic[8];
  f.read(magic, 8);
  check(f.good() && std::memcmp(magic, kMagic, 8) == 0, "not a checkpoint file: ", path);
  uint32_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 4);
  check(f.good() && hlen > 0 && hlen < (64u << 20), "corrupt checkpoint header: ", path);
  std::string htext(hlen, '\0');
  f.read(htext.data(), std::streamsize(hlen));
  check(f.good(), "truncated checkpoint header: ", path);
  nlohmann::json header = nlohmann::json::parse(htext, nullptr, false);
  check(!header.is_discarded(), "unparsable checkpoint header: ", path);
  check(header.contains("version"), "checkpoint header missing version: ", path);
  check(header["version"].get<int>() == kVersion, "unsupported checkpoint version ",
        header["version"].get<int>(), " in ", path);
  return header;
}

CheckpointInfo info_from(const nlohmann::json& header) {
  CheckpointInfo info;
  info.version = header["version"].get<int>();
  info.kind = header.value("kind", "");
  info.meta_json = header.contains("meta") ? header["meta"].dump() : "{}";
  return info;
}

}  // namespace

CheckpointInfo checkpoint_peek(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open: ", path);
  return info_from(read_header(f, path));
}

CheckpointInfo checkpoint_load(const std::string& path, const std::string& expect_kind,
                               nn::ParamStore& params) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open: ", path);
  nlohmann::json header = read_header(f, path);
  CheckpointInfo info = info_from(header);
  if (!expect_kind.empty())
    check(info.kind == expect_kind, "checkpoint kind mismatch: want ", expect_kind, ", file has ",
          info.kind, " (", path, ")");
  const int64_t blob_start = int64_t(f.tellg());
  std::unordered_map<std::string, std::pair<std::vector<int>, int64_t>> entries;
  for (const auto& e : header["params"]) {
    entries[e["name"].get<std::string>()] = {e["shape"].get<std::vector<int>>(),
                                             e["offset"].get<int64_t>()};
  }
  for (const std::string& name : params.names()) {
    auto it = entries.find(name);
    check(it != entries.end(), "checkpoint missing param ", name, " (", path, ")");
    Tensor t = params.get(name);
    check(t.shape() == it->second.first, "checkpoint shape mismatch for ", name, ": store ",
          t.shape_str(), " (", path, ")");
    f.seekg(blob_start + it->second.second);
    f.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * sizeof(float)));
    check(f.good(), "truncated checkpoint blob for ", name, " (", path, ")");
  }
  return info;
}

}  // namespace gld
