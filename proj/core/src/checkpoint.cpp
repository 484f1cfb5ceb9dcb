#include "synseg/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "synseg/dataset_io.hpp"

namespace synseg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'S', 'N', '1'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    out_.append(p, sizeof(T));
  }
  void put_str(const std::string& s) {
    put(static_cast<uint32_t>(s.size()));
    out_ += s;
  }
  void put_raw(const void* data, size_t n) { out_.append(static_cast<const char*>(data), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, need(sizeof(T)), sizeof(T));
    return v;
  }
  std::string get_str() {
    const auto n = get<uint32_t>();
    return {need(n), n};
  }
  void get_raw(void* dst, size_t n) { std::memcpy(dst, need(n), n); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const char* need(size_t n) {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  const std::string& bytes_;
  size_t pos_ = 0;
};

}  // namespace

std::string Checkpoint::serialize() const {
  Writer w;
  w.put_raw(kMagic, 4);
  w.put(version);
  w.put(config_hash);
  w.put(epoch);
  w.put(step);
  w.put(static_cast<uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.put_str(k);
    w.put_str(v);
  }
  w.put(static_cast<uint32_t>(arrays.size()));
  for (const auto& [name, blob] : arrays) {
    if (static_cast<int64_t>(blob.data.size()) != shape_numel(blob.shape)) {
      throw CheckpointError("array '" + name + "' does not match its shape");
    }
    w.put_str(name);
    w.put(static_cast<uint32_t>(blob.shape.size()));
    for (const int64_t d : blob.shape) w.put(d);
    w.put_raw(blob.data.data(), blob.data.size() * sizeof(float));
  }
  return w.take();
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  r.get_raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  Checkpoint c;
  c.version = r.get<uint32_t>();
  if (c.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version));
  }
  c.config_hash = r.get<uint64_t>();
  c.epoch = r.get<int32_t>();
  c.step = r.get<uint64_t>();
  const auto n_meta = r.get<uint32_t>();
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.get_str();
    c.meta[std::move(k)] = r.get_str();
  }
  const auto n_arrays = r.get<uint32_t>();
  for (uint32_t i = 0; i < n_arrays; ++i) {
    std::string name = r.get_str();
    ArrayBlob blob;
    const auto rank = r.get<uint32_t>();
    if (rank > 8) throw CheckpointError("array '" + name + "' has implausible rank");
    for (uint32_t d = 0; d < rank; ++d) {
      blob.shape.push_back(r.get<int64_t>());
      if (blob.shape.back() < 0) throw CheckpointError("array '" + name + "' has a negative dimension");
    }
    const int64_t numel = shape_numel(blob.shape);
    if (static_cast<uint64_t>(numel) * sizeof(float) > bytes.size()) throw CheckpointError("checkpoint is truncated");
    blob.data.resize(static_cast<size_t>(numel));
    r.get_raw(blob.data.data(), blob.data.size() * sizeof(float));
    c.arrays[std::move(name)] = std::move(blob);
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_text_file(path);
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
  return deserialize(bytes);
}

bool Checkpoint::has_network(const std::string& prefix) const {
  const auto it = arrays.lower_bound(prefix + ".");
  return it != arrays.end() && it->first.starts_with(prefix + ".");
}

void store_network(Checkpoint& ckpt, const std::string& prefix, const Network& net) {
  for (const auto& [name, t] : net.params()) {
    ckpt.arrays[prefix + "." + name] = {t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
  }
}

void load_network(const Checkpoint& ckpt, const std::string& prefix, Network& net) {
  for (const auto& [name, t] : net.params()) {
    const auto it = ckpt.arrays.find(prefix + "." + name);
    if (it == ckpt.arrays.end()) throw CheckpointError("checkpoint lacks parameter " + prefix + "." + name);
    if (it->second.shape != t.shape()) {
      throw CheckpointError("parameter " + prefix + "." + name + " has shape " + shape_str(it->second.shape) +
                            ", network expects " + shape_str(t.shape()));
    }
    Tensor param = t;
    auto dst = param.mutable_data();
    std::copy(it->second.data.begin(), it->second.data.end(), dst.begin());
  }
}

void store_adam(Checkpoint& ckpt, const std::string& prefix, const AdamState& state) {
  ckpt.meta["adam." + prefix + ".t"] = std::to_string(state.t());
  for (const auto& [name, mom] : state.moments()) {
    const Shape shape{static_cast<int64_t>(mom.m.size())};
    ckpt.arrays["adam." + prefix + "." + name + ".m"] = {shape, mom.m};
    ckpt.arrays["adam." + prefix + "." + name + ".v"] = {shape, mom.v};
  }
}

void load_adam(const Checkpoint& ckpt, const std::string& prefix, AdamState& state) {
  const auto t_it = ckpt.meta.find("adam." + prefix + ".t");
  if (t_it == ckpt.meta.end()) throw CheckpointError("checkpoint lacks optimizer state for " + prefix);
  std::map<std::string, AdamMoments> moments;
  for (const auto& [name, mom] : state.moments()) {
    const auto m = ckpt.arrays.find("adam." + prefix + "." + name + ".m");
    const auto v = ckpt.arrays.find("adam." + prefix + "." + name + ".v");
    if (m == ckpt.arrays.end() || v == ckpt.arrays.end() || m->second.data.size() != mom.m.size() ||
        v->second.data.size() != mom.v.size()) {
      throw CheckpointError("optimizer moments missing or mis-sized for " + prefix + "." + name);
    }
    moments[name] = {m->second.data, v->second.data};
  }
  state.restore(std::stoll(t_it->second), std::move(moments));
}

}  // namespace synseg
