#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "synseg/networks.hpp"
#include "synseg/optim.hpp"

namespace synseg {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr uint32_t kCheckpointVersion = 1;

struct ArrayBlob {
  Shape shape;
  std::vector<float> data;
};

// In-memory image of an SSN1 file. Layout (all little-endian):
//   "SSN1" | u32 version | u64 config_hash | i32 epoch | u64 step
//   u32 n_meta  { str key, str value }       sorted by key
//   u32 n_array { str name, u32 rank, i64 dims[rank], f32 data[numel] }  sorted by name
// where str is u32 byte length followed by UTF-8 bytes.
struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  uint64_t config_hash = 0;
  int32_t epoch = 0;
  uint64_t step = 0;
  std::map<std::string, std::string> meta;
  std::map<std::string, ArrayBlob> arrays;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;  // atomic
  static Checkpoint load(const std::filesystem::path& path);

  bool has_network(const std::string& prefix) const;
};

// Parameters are stored as "<prefix>.<param name>".
void store_network(Checkpoint& ckpt, const std::string& prefix, const Network& net);
void load_network(const Checkpoint& ckpt, const std::string& prefix, Network& net);

// Moments as "adam.<prefix>.<param>.m|v", step count in meta.
void store_adam(Checkpoint& ckpt, const std::string& prefix, const AdamState& state);
void load_adam(const Checkpoint& ckpt, const std::string& prefix, AdamState& state);

}  // namespace synseg
