#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "iscl/tensor.hpp"

namespace iscl {

// Single-file tensor archive: 8-byte magic, little-endian u64 header length,
// UTF-8 JSON header (entry table plus caller metadata), then raw float32
// little-endian payload. Entries are flat names like "F/head/weight".
class ArchiveWriter {
 public:
  void add(const std::string& name, const Tensor& t);
  void set_meta(std::string meta_json) { meta_json_ = std::move(meta_json); }
  void write(const std::filesystem::path& path) const;

 private:
  struct Entry {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;
  };
  std::vector<Entry> entries_;
  std::string meta_json_ = "{}";
};

struct Archive {
  std::string meta_json;
  std::vector<std::string> order;  // entry names in file order
  std::map<std::string, Tensor> entries;

  static Archive read(const std::filesystem::path& path);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return entries.count(name) > 0; }
};

}  // namespace iscl
