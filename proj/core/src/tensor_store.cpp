// SPDX-License-Identifier: Apache-2.0
#include "deltaforge/tensor_store.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "deltaforge/rng.hpp"

#include <json.hpp>

namespace deltaforge {

namespace {

using nlohmann::json;

constexpr uint64_t kPrefixBytes = 8;
// Caps the header allocation when the length prefix is garbage.
constexpr uint64_t kMaxHeaderBytes = 100ull * 1024 * 1024;

uint64_t file_size_or_throw(const std::filesystem::path& path) {
  std::error_code ec;
  const uint64_t size = std::filesystem::file_size(path, ec);
  if (ec) raise(ErrorKind::IoFailure, "cannot stat " + path.string() + ": " + ec.message());
  return size;
}

std::string read_bytes(std::ifstream& in, uint64_t offset, uint64_t count,
                       const std::filesystem::path& path) {
  std::string buf(count, '\0');
  in.seekg(static_cast<std::streamoff>(offset));
  in.read(buf.data(), static_cast<std::streamsize>(count));
  if (!in) raise(ErrorKind::IoFailure, "short read from " + path.string());
  return buf;
}

uint64_t decode_prefix(const std::string& bytes) {
  uint64_t n = 0;
  std::memcpy(&n, bytes.data(), 8);
  return n;
}

struct ParsedHeader {
  std::map<std::string, TensorMeta> metas;
  std::map<std::string, std::string> metadata;
};

// Shared by open (throwing) and validate (collecting). `report` non-null
// switches to collecting mode.
bool parse_header_object(const json& root, uint64_t data_base, ParsedHeader& out,
                         FormatReport* report) {
  auto fail = [&](const std::string& msg, uint64_t offset) -> bool {
    if (report) {
      report->violations.push_back({offset, msg});
      return false;
    }
    raise(ErrorKind::MalformedHeader, msg);
  };

  if (!root.is_object()) return fail("header is not an object", kPrefixBytes);

  bool ok = true;
  for (const auto& [key, value] : root.items()) {
    if (key == "__metadata__") {
      if (!value.is_object()) {
        ok = fail("__metadata__ is not an object", kPrefixBytes);
        continue;
      }
      for (const auto& [mk, mv] : value.items()) {
        if (!mv.is_string()) {
          ok = fail("__metadata__ value for \"" + mk + "\" is not a string", kPrefixBytes);
          continue;
        }
        out.metadata[mk] = mv.get<std::string>();
      }
      continue;
    }

    if (key.empty()) {
      ok = fail("empty tensor name", kPrefixBytes);
      continue;
    }
    if (!value.is_object() || !value.contains("dtype") || !value.contains("shape") ||
        !value.contains("data_offsets")) {
      ok = fail("tensor \"" + key + "\" entry is missing dtype/shape/data_offsets",
                kPrefixBytes);
      continue;
    }

    TensorMeta meta;
    meta.name = key;

    const auto& jd = value["dtype"];
    if (!jd.is_string() || !dtype_from_name(jd.is_string() ? jd.get<std::string>() : "",
                                            meta.dtype)) {
      const std::string shown = jd.is_string() ? jd.get<std::string>() : jd.dump();
      if (report) {
        report->violations.push_back({kPrefixBytes, "unknown dtype \"" + shown +
                                                        "\" for tensor \"" + key + "\""});
        ok = false;
        continue;
      }
      raise(ErrorKind::UnsupportedDtype, "unknown dtype \"" + shown + "\" for tensor \"" +
                                             key + "\"");
    }

    const auto& js = value["shape"];
    bool shape_ok = js.is_array();
    if (shape_ok) {
      for (const auto& e : js) {
        if (!e.is_number_integer() || e.get<int64_t>() < 0) {
          shape_ok = false;
          break;
        }
        meta.shape.push_back(e.get<int64_t>());
      }
    }
    if (!shape_ok) {
      ok = fail("tensor \"" + key + "\" shape is not a list of non-negative integers",
                kPrefixBytes);
      continue;
    }

    const auto& jo = value["data_offsets"];
    if (!jo.is_array() || jo.size() != 2 || !jo[0].is_number_integer() ||
        !jo[1].is_number_integer() || jo[0].get<int64_t>() < 0 ||
        jo[1].get<int64_t>() < jo[0].get<int64_t>()) {
      ok = fail("tensor \"" + key + "\" data_offsets is not a valid [begin, end] pair",
                kPrefixBytes);
      continue;
    }
    meta.begin = static_cast<uint64_t>(jo[0].get<int64_t>());
    meta.end = static_cast<uint64_t>(jo[1].get<int64_t>());

    const uint64_t expected =
        static_cast<uint64_t>(meta.element_count()) * dtype_width(meta.dtype);
    if (meta.byte_size() != expected) {
      ok = fail("tensor \"" + key + "\" byte range [" + std::to_string(meta.begin) + ", " +
                    std::to_string(meta.end) + ") does not equal shape x dtype width (" +
                    std::to_string(expected) + " bytes)",
                data_base + meta.begin);
      continue;
    }

    out.metas.emplace(key, std::move(meta));
  }

  // Overlap check over ranges sorted by begin; zero-length ranges cannot overlap.
  std::vector<const TensorMeta*> ranged;
  ranged.reserve(out.metas.size());
  for (const auto& [_, m] : out.metas)
    if (m.byte_size() > 0) ranged.push_back(&m);
  std::sort(ranged.begin(), ranged.end(),
            [](const TensorMeta* a, const TensorMeta* b) { return a->begin < b->begin; });
  for (size_t i = 1; i < ranged.size(); ++i) {
    if (ranged[i]->begin < ranged[i - 1]->end) {
      const std::string msg = "data ranges of tensors \"" + ranged[i - 1]->name +
                              "\" and \"" + ranged[i]->name + "\" overlap";
      if (report) {
        report->violations.push_back({data_base + ranged[i]->begin, msg});
        ok = false;
      } else {
        raise(ErrorKind::MalformedHeader, msg);
      }
    }
  }
  return ok;
}

struct RawHeader {
  uint64_t header_len = 0;
  std::string text;
  uint64_t data_base = 0;  // 8 + header_len
  uint64_t file_size = 0;
};

RawHeader read_raw_header(const std::filesystem::path& path) {
  RawHeader raw;
  raw.file_size = file_size_or_throw(path);
  if (raw.file_size < kPrefixBytes)
    raise(ErrorKind::MalformedHeader,
          path.string() + " is shorter than the 8-byte header length prefix");

  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::IoFailure, "cannot open " + path.string());

  raw.header_len = decode_prefix(read_bytes(in, 0, kPrefixBytes, path));
  if (raw.header_len > kMaxHeaderBytes || kPrefixBytes + raw.header_len > raw.file_size)
    raise(ErrorKind::MalformedHeader, "header length prefix (" +
                                          std::to_string(raw.header_len) +
                                          ") overruns file " + path.string());
  raw.text = read_bytes(in, kPrefixBytes, raw.header_len, path);
  raw.data_base = kPrefixBytes + raw.header_len;
  return raw;
}

ParsedHeader parse_container_header(const std::filesystem::path& path, const RawHeader& raw) {
  json root;
  try {
    root = json::parse(raw.text);
  } catch (const json::parse_error& e) {
    raise(ErrorKind::MalformedHeader,
          "header of " + path.string() + " is not parsable: " + e.what());
  }
  ParsedHeader parsed;
  parse_header_object(root, raw.data_base, parsed, nullptr);
  return parsed;
}

// A shard index is plain header-notation text; a container starts with a
// binary length prefix. The first 8 bytes decide: container prefixes have
// zero high bytes (the header cap is far below 2^32), JSON text never
// contains NUL bytes. Only a detected index is then read in full.
bool looks_like_shard_index(const std::filesystem::path& path, json& root) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::IoFailure, "cannot open " + path.string());
  char prefix[8] = {0};
  in.read(prefix, 8);
  if (in.gcount() < 8) return false;
  const bool textual = prefix[0] == '{' || prefix[0] == ' ' || prefix[0] == '\n' ||
                       prefix[0] == '\t' || prefix[0] == '\r';
  const bool high_bytes_zero =
      prefix[4] == 0 && prefix[5] == 0 && prefix[6] == 0 && prefix[7] == 0;
  if (!textual || high_bytes_zero) return false;

  in.seekg(0);
  std::stringstream ss;
  ss << in.rdbuf();
  root = json::parse(ss.str(), nullptr, false);
  return root.is_object() && root.contains("weight_map");
}

std::string hex_token(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (int i = 0; i < 16; ++i) {
    s.push_back(digits[v & 0xf]);
    v >>= 4;
  }
  return s;
}

}  // namespace

std::vector<std::string> CheckpointSource::names() const {
  std::vector<std::string> out;
  out.reserve(metas().size());
  for (const auto& [name, _] : metas()) out.push_back(name);
  return out;
}

void Checkpoint::add(const std::string& name, Tensor tensor) {
  if (name.empty()) raise(ErrorKind::InvalidArgument, "tensor name is empty");
  if (tensors_.count(name))
    raise(ErrorKind::DuplicateName, "tensor \"" + name + "\" added twice");
  TensorMeta meta;
  meta.name = name;
  meta.dtype = tensor.dtype;
  meta.shape = tensor.shape;
  meta.begin = 0;
  meta.end = tensor.byte_size();
  metas_.emplace(name, std::move(meta));
  tensors_.emplace(name, std::move(tensor));
}

void Checkpoint::set_metadata(std::string key, std::string value) {
  metadata_[std::move(key)] = std::move(value);
}

const Tensor& Checkpoint::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    raise(ErrorKind::UnknownTensor, "no tensor \"" + name + "\" in " + id_);
  return it->second;
}

Tensor CheckpointHandle::load(const std::string& name) const {
  auto it = metas_.find(name);
  if (it == metas_.end())
    raise(ErrorKind::UnknownTensor, "no tensor \"" + name + "\" in " + source_.string());
  const TensorMeta& meta = it->second;

  const FilePart* part = &parts_.front();
  if (!shard_of_.empty()) part = &parts_[shard_of_.at(name)];

  Tensor t;
  t.dtype = meta.dtype;
  t.shape = meta.shape;
  t.data.resize(meta.byte_size());

  const uint64_t file_size = file_size_or_throw(part->path);
  if (part->data_begin + meta.end > file_size)
    raise(ErrorKind::TruncatedFile, "tensor \"" + name + "\" extends past the end of " +
                                        part->path.string());

  if (!t.data.empty()) {
    std::ifstream in(part->path, std::ios::binary);
    if (!in) raise(ErrorKind::IoFailure, "cannot open " + part->path.string());
    in.seekg(static_cast<std::streamoff>(part->data_begin + meta.begin));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size()));
    if (!in)
      raise(ErrorKind::TruncatedFile,
            "short read for tensor \"" + name + "\" from " + part->path.string());
  }
  return t;
}

CheckpointHandle open_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    raise(ErrorKind::IoFailure, path.string() + " does not exist");

  CheckpointHandle handle;
  handle.source_ = path;

  json index_root;
  if (looks_like_shard_index(path, index_root)) {
    const auto& wm = index_root["weight_map"];
    if (!wm.is_object())
      raise(ErrorKind::MalformedHeader, "weight_map in " + path.string() + " is not an object");

    ShardMap shard_map;
    shard_map.index_path = path;
    for (const auto& [tensor, shard] : wm.items()) {
      if (!shard.is_string())
        raise(ErrorKind::MalformedHeader,
              "weight_map entry for \"" + tensor + "\" is not a file name");
      shard_map.weight_map[tensor] = shard.get<std::string>();
    }

    const std::filesystem::path dir = path.parent_path();
    std::map<std::string, size_t> part_index;
    for (const auto& [tensor, shard] : shard_map.weight_map) {
      const std::filesystem::path shard_path = dir / shard;
      if (!std::filesystem::exists(shard_path))
        raise(ErrorKind::MissingShard, "shard " + shard_path.string() +
                                           " (for tensor \"" + tensor + "\") does not exist");
      auto [it, inserted] = part_index.emplace(shard, handle.parts_.size());
      if (inserted) {
        const RawHeader raw = read_raw_header(shard_path);
        ParsedHeader parsed = parse_container_header(shard_path, raw);
        handle.parts_.push_back({shard_path, raw.data_base});
        // Stash shard metas under reserved keys to merge below.
        for (auto& [name, meta] : parsed.metas) {
          if (shard_map.weight_map.count(name) &&
              shard_map.weight_map.at(name) == shard) {
            handle.metas_.emplace(name, std::move(meta));
            handle.shard_of_[name] = it->second;
          }
        }
        for (auto& [k, v] : parsed.metadata) handle.metadata_.emplace(k, v);
      }
      if (!handle.metas_.count(tensor))
        raise(ErrorKind::MalformedHeader, "tensor \"" + tensor +
                                              "\" listed in weight_map is absent from shard " +
                                              shard_path.string());
    }
    return handle;
  }

  const RawHeader raw = read_raw_header(path);
  ParsedHeader parsed = parse_container_header(path, raw);
  handle.parts_.push_back({path, raw.data_base});
  handle.metas_ = std::move(parsed.metas);
  handle.metadata_ = std::move(parsed.metadata);
  return handle;
}

void write_checkpoint(const std::vector<std::pair<std::string, Tensor>>& entries,
                      const std::filesystem::path& path,
                      const std::map<std::string, std::string>& user_metadata) {
  json header = json::object();
  uint64_t cursor = 0;
  for (const auto& [name, tensor] : entries) {
    if (name.empty()) raise(ErrorKind::InvalidArgument, "tensor name is empty");
    if (header.contains(name))
      raise(ErrorKind::DuplicateName, "two entries named \"" + name + "\"");
    const uint64_t expected =
        static_cast<uint64_t>(tensor.element_count()) * dtype_width(tensor.dtype);
    if (tensor.byte_size() != expected)
      raise(ErrorKind::InvalidArgument,
            "tensor \"" + name + "\" data length does not match dtype x shape");
    json entry;
    entry["dtype"] = dtype_name(tensor.dtype);
    entry["shape"] = tensor.shape;
    entry["data_offsets"] = {cursor, cursor + tensor.byte_size()};
    header[name] = std::move(entry);
    cursor += tensor.byte_size();
  }
  if (!user_metadata.empty()) header["__metadata__"] = user_metadata;

  const std::string header_text = header.dump();
  const uint64_t header_len = header_text.size();

  std::error_code ec;
  const auto parent = path.parent_path();
  if (!parent.empty()) {
    std::filesystem::create_directories(parent, ec);
    if (ec) raise(ErrorKind::IoFailure, "cannot create " + parent.string());
  }

  static std::atomic<uint64_t> counter{0};
  const std::filesystem::path tmp =
      path.string() + ".tmp-" + hex_token(splitmix64(counter.fetch_add(1) ^
                                                     std::random_device{}()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::IoFailure, "cannot create " + tmp.string());
    char prefix[8];
    std::memcpy(prefix, &header_len, 8);
    out.write(prefix, 8);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [_, tensor] : entries)
      out.write(reinterpret_cast<const char*>(tensor.data.data()),
                static_cast<std::streamsize>(tensor.data.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp, ec);
      raise(ErrorKind::IoFailure, "write to " + tmp.string() + " failed");
    }
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    raise(ErrorKind::IoFailure,
          "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& extra_metadata) {
  std::vector<std::pair<std::string, Tensor>> entries;
  entries.reserve(checkpoint.tensors().size());
  for (const auto& [name, tensor] : checkpoint.tensors()) entries.emplace_back(name, tensor);
  std::map<std::string, std::string> metadata = checkpoint.metadata();
  for (const auto& [k, v] : extra_metadata) metadata[k] = v;
  write_checkpoint(entries, path, metadata);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  const auto parent = path.parent_path();
  if (!parent.empty()) {
    std::filesystem::create_directories(parent, ec);
    if (ec) raise(ErrorKind::IoFailure, "cannot create " + parent.string());
  }
  static std::atomic<uint64_t> counter{0};
  const std::filesystem::path tmp =
      path.string() + ".tmp-" + hex_token(splitmix64(counter.fetch_add(1) ^
                                                     std::random_device{}()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::IoFailure, "cannot create " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp, ec);
      raise(ErrorKind::IoFailure, "write to " + tmp.string() + " failed");
    }
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    raise(ErrorKind::IoFailure, "cannot rename " + tmp.string() + " to " + path.string());
  }
}

std::string FormatReport::to_text() const {
  std::string out;
  for (const auto& v : violations) {
    out += "byte " + std::to_string(v.byte_offset) + ": " + v.message + "\n";
  }
  return out;
}

FormatReport validate_format(const std::filesystem::path& path) {
  FormatReport report;
  const uint64_t file_size = file_size_or_throw(path);
  if (file_size < kPrefixBytes) {
    report.violations.push_back({0, "file is shorter than the 8-byte header length prefix"});
    return report;
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::IoFailure, "cannot open " + path.string());

  const uint64_t header_len = decode_prefix(read_bytes(in, 0, kPrefixBytes, path));
  if (header_len > kMaxHeaderBytes || kPrefixBytes + header_len > file_size) {
    report.violations.push_back(
        {0, "header length prefix (" + std::to_string(header_len) + ") overruns file of " +
                std::to_string(file_size) + " bytes"});
    return report;
  }

  const std::string header_text = read_bytes(in, kPrefixBytes, header_len, path);
  const uint64_t data_base = kPrefixBytes + header_len;
  const uint64_t data_size = file_size - data_base;

  json root = json::parse(header_text, nullptr, false);
  if (root.is_discarded()) {
    report.violations.push_back({kPrefixBytes, "header is not parsable"});
    return report;
  }

  // Duplicate keys survive only in the token stream, not the parsed object.
  {
    std::vector<std::string> top_keys;
    int depth = 0;
    json::parser_callback_t cb = [&](int d, json::parse_event_t event, json& parsed) {
      if (event == json::parse_event_t::key && d == 1)
        top_keys.push_back(parsed.get<std::string>());
      (void)depth;
      return true;
    };
    const json scanned = json::parse(header_text, cb, false);
    (void)scanned;
    std::map<std::string, int> seen;
    for (const auto& k : top_keys) {
      if (++seen[k] == 2)
        report.violations.push_back({kPrefixBytes, "duplicate tensor name \"" + k + "\""});
    }
  }

  ParsedHeader parsed;
  parse_header_object(root, data_base, parsed, &report);

  for (const auto& [name, meta] : parsed.metas) {
    if (meta.end > data_size) {
      report.violations.push_back(
          {data_base + meta.begin, "tensor \"" + name + "\" byte range [" +
                                       std::to_string(meta.begin) + ", " +
                                       std::to_string(meta.end) +
                                       ") extends past the data section of " +
                                       std::to_string(data_size) + " bytes"});
    }
  }
  return report;
}

}  // namespace deltaforge
