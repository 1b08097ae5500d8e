// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "deltaforge/tensor.hpp"

namespace deltaforge {

// Per-tensor header record. Offsets are a half-open byte range into the
// file's data section (relative to the end of the header).
struct TensorMeta {
  std::string name;
  Dtype dtype{Dtype::F32};
  std::vector<int64_t> shape;
  uint64_t begin = 0;
  uint64_t end = 0;

  int64_t element_count() const {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
  }
  uint64_t byte_size() const { return end - begin; }
};

// Read surface shared by file-backed handles and in-memory checkpoints.
// Iteration is always in lexicographically sorted name order.
class CheckpointSource {
 public:
  virtual ~CheckpointSource() = default;

  virtual const std::map<std::string, TensorMeta>& metas() const = 0;
  virtual Tensor load(const std::string& name) const = 0;
  virtual const std::map<std::string, std::string>& metadata() const = 0;
  virtual std::string id() const = 0;

  bool has(const std::string& name) const { return metas().count(name) != 0; }
  size_t tensor_count() const { return metas().size(); }
  std::vector<std::string> names() const;
};

// In-memory checkpoint. The result type of all weight-space operations.
class Checkpoint final : public CheckpointSource {
 public:
  Checkpoint() = default;
  explicit Checkpoint(std::string id) : id_(std::move(id)) {}

  void add(const std::string& name, Tensor tensor);
  void set_metadata(std::string key, std::string value);
  void set_id(std::string id) { id_ = std::move(id); }

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  const Tensor& at(const std::string& name) const;

  const std::map<std::string, TensorMeta>& metas() const override { return metas_; }
  Tensor load(const std::string& name) const override { return at(name); }
  const std::map<std::string, std::string>& metadata() const override { return metadata_; }
  std::string id() const override { return id_; }

 private:
  std::map<std::string, Tensor> tensors_;
  std::map<std::string, TensorMeta> metas_;
  std::map<std::string, std::string> metadata_;
  std::string id_ = "<memory>";
};

// Auxiliary index for multi-file checkpoints: tensor name -> shard file,
// shards located beside the index.
struct ShardMap {
  std::filesystem::path index_path;
  std::map<std::string, std::string> weight_map;
};

// Lazily reading handle over a container file or shard set. Immutable after
// open; safe for concurrent load() calls from many workers.
class CheckpointHandle final : public CheckpointSource {
 public:
  const std::map<std::string, TensorMeta>& metas() const override { return metas_; }
  Tensor load(const std::string& name) const override;
  const std::map<std::string, std::string>& metadata() const override { return metadata_; }
  std::string id() const override { return source_.string(); }

  bool is_sharded() const { return !shard_of_.empty(); }

 private:
  friend CheckpointHandle open_checkpoint(const std::filesystem::path&);

  struct FilePart {
    std::filesystem::path path;
    uint64_t data_begin = 0;  // absolute offset of the data section
  };

  std::filesystem::path source_;
  std::vector<FilePart> parts_;
  std::map<std::string, size_t> shard_of_;  // tensor -> index into parts_ (sharded only)
  std::map<std::string, TensorMeta> metas_;
  std::map<std::string, std::string> metadata_;
};

// Opens a container file or a shard index. Reads only headers (8-byte length
// prefix + header text per file); tensor bytes are fetched lazily by load().
CheckpointHandle open_checkpoint(const std::filesystem::path& path);

// Writes entries back-to-back, in the given order, behind a minimal header.
// The write is atomic: a temporary file is renamed over `path` on success.
void write_checkpoint(const std::vector<std::pair<std::string, Tensor>>& entries,
                      const std::filesystem::path& path,
                      const std::map<std::string, std::string>& user_metadata = {});

// Convenience: writes an in-memory checkpoint in sorted-name order, merging
// its metadata with `extra_metadata`.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& extra_metadata = {});

// Writes text through a temporary file renamed over `path` on success, so
// failures never leave partial outputs behind.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

struct FormatViolation {
  uint64_t byte_offset = 0;
  std::string message;
};

struct FormatReport {
  std::vector<FormatViolation> violations;
  bool valid() const { return violations.empty(); }
  std::string to_text() const;
};

// Checks a container file byte-for-byte against the format rules. Format
// problems become report entries; only filesystem failures throw.
FormatReport validate_format(const std::filesystem::path& path);

}  // namespace deltaforge
