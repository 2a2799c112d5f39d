#include "iscl/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace iscl {

namespace {

constexpr char kMagic[8] = {'I', 'S', 'C', 'L', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void ArchiveWriter::add(const std::string& name, const Tensor& t) {
  Entry e;
  e.name = name;
  e.shape = t.shape();
  e.data = t.vec();
  entries_.push_back(std::move(e));
}

void ArchiveWriter::write(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["meta"] = nlohmann::json::parse(meta_json_);
  nlohmann::json table = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& e : entries_) {
    nlohmann::json row;
    row["name"] = e.name;
    row["shape"] = e.shape;
    row["offset"] = offset;
    row["count"] = e.data.size();
    table.push_back(std::move(row));
    offset += e.data.size();
  }
  header["entries"] = std::move(table);
  std::string hs = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCategory::Io, "checkpoint: cannot write " + path.string());
  out.write(kMagic, 8);
  write_u64(out, hs.size());
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& e : entries_) {
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(e.data.data()),
              static_cast<std::streamsize>(e.data.size() * sizeof(float)));
  }
  require(out.good(), ErrorCategory::Io, "checkpoint: write failed " + path.string());
}

Archive Archive::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::Io, "checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kMagic, 8) == 0, ErrorCategory::Checkpoint,
          "checkpoint: bad magic in " + path.string());
  uint64_t hlen = read_u64(in);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  require(in.good(), ErrorCategory::Checkpoint, "checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const std::exception& e) {
    fail(ErrorCategory::Checkpoint, "checkpoint: invalid header JSON: " + std::string(e.what()));
  }

  Archive a;
  a.meta_json = header.at("meta").dump();
  for (const auto& row : header.at("entries")) {
    std::string name = row.at("name").get<std::string>();
    std::vector<int64_t> shape = row.at("shape").get<std::vector<int64_t>>();
    size_t count = row.at("count").get<size_t>();
    std::vector<float> data(count);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    require(in.good(), ErrorCategory::Checkpoint, "checkpoint: truncated payload at " + name);
    a.order.push_back(name);
    a.entries.emplace(name, Tensor::from(shape, std::move(data)));
  }
  return a;
}

const Tensor& Archive::get(const std::string& name) const {
  auto it = entries.find(name);
  require(it != entries.end(), ErrorCategory::Checkpoint, "checkpoint: missing entry " + name);
  return it->second;
}

}  // namespace iscl
