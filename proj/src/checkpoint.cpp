#include "forgeloc/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "forgeloc/errors.hpp"

namespace forgeloc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'T', 'F', 'C', 'K'};
constexpr uint64_t kMaxLength = uint64_t{1} << 34;

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open " + path + " for writing");
  }
  template <class V>
  void pod(const V& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void str(const std::string& s) {
    pod(static_cast<uint64_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(const std::vector<float>& v) { bytes(v.data(), v.size() * sizeof(float)); }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("write failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open checkpoint " + path);
  }
  template <class V>
  V pod() {
    V v{};
    bytes(&v, sizeof v);
    return v;
  }
  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw IoError("truncated checkpoint " + path_);
  }
  uint64_t length() {
    const auto n = pod<uint64_t>();
    if (n > kMaxLength) throw IoError("corrupt length field in checkpoint " + path_);
    return n;
  }
  std::string str() {
    std::string s(length(), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  std::vector<float> floats(uint64_t n) {
    std::vector<float> v(n);
    bytes(v.data(), n * sizeof(float));
    return v;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::string path_;
  std::ifstream in_;
};

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

Checkpoint make_checkpoint(const ForgeryLocalizer<float>& model, const TrainConfig& config,
                           const AdamState<float>& optimizer, int64_t epoch, uint64_t rng_state) {
  Checkpoint ck;
  ck.config = config;
  ck.config.model = model.config();
  ck.digest = model.config().digest();
  ck.epoch = epoch;
  ck.rng_state = rng_state;
  for (const auto& e : model.parameters().entries()) {
    auto d = e.tensor.data();
    ck.entries.push_back({e.name, e.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  ck.optimizer = optimizer;
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.pod(Checkpoint::kVersion);
  w.pod(ck.digest);
  w.str(to_json(ck.config).dump());
  w.pod(ck.epoch);
  w.pod(ck.rng_state);
  w.pod(static_cast<uint64_t>(ck.entries.size()));
  for (const auto& e : ck.entries) {
    w.str(e.name);
    w.pod(static_cast<uint64_t>(e.shape.size()));
    for (int64_t d : e.shape) w.pod(d);
    w.floats(e.values);
  }
  w.pod(ck.optimizer.step);
  w.pod(static_cast<uint64_t>(ck.optimizer.slots.size()));
  for (const auto& s : ck.optimizer.slots) {
    w.str(s.name);
    w.pod(static_cast<uint64_t>(s.m.size()));
    w.floats(s.m);
    w.floats(s.v);
  }
  w.finish();
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw IoError(path + " is not a checkpoint (bad magic)");
  const auto version = r.pod<uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  Checkpoint ck;
  ck.digest = r.pod<uint64_t>();
  try {
    ck.config = train_config_from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt config block in " + path + ": " + e.what());
  }
  if (ck.config.model.digest() != ck.digest) {
    throw ConfigError("checkpoint " + path + ": stored digest does not match its model config");
  }
  ck.epoch = r.pod<int64_t>();
  ck.rng_state = r.pod<uint64_t>();
  const uint64_t n_entries = r.length();
  for (uint64_t i = 0; i < n_entries; ++i) {
    CheckpointEntry e;
    e.name = r.str();
    const uint64_t ndim = r.length();
    if (ndim > 8) throw IoError("corrupt tensor rank in " + path);
    for (uint64_t k = 0; k < ndim; ++k) e.shape.push_back(r.pod<int64_t>());
    const int64_t n = shape_numel(e.shape);
    if (n < 0 || static_cast<uint64_t>(n) > kMaxLength) throw IoError("corrupt tensor shape in " + path);
    e.values = r.floats(static_cast<uint64_t>(n));
    ck.entries.push_back(std::move(e));
  }
  ck.optimizer.step = r.pod<int64_t>();
  const uint64_t n_slots = r.length();
  for (uint64_t i = 0; i < n_slots; ++i) {
    AdamSlot<float> s;
    s.name = r.str();
    const uint64_t n = r.length();
    s.m = r.floats(n);
    s.v = r.floats(n);
    ck.optimizer.slots.push_back(std::move(s));
  }
  if (!r.at_end()) throw IoError("trailing bytes in checkpoint " + path);
  return ck;
}

void restore_model(const Checkpoint& ck, ForgeryLocalizer<float>& model) {
  if (model.config().digest() != ck.digest) {
    throw ConfigError("checkpoint was written for a different model config (digest mismatch)");
  }
  auto& entries = model.parameters().entries();
  if (entries.size() != ck.entries.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(ck.entries.size()) + " tensors, model has " +
                      std::to_string(entries.size()));
  }
  for (auto& e : entries) {
    const CheckpointEntry* src = ck.find(e.name);
    if (!src) throw ConfigError("checkpoint is missing tensor " + e.name);
    if (src->shape != e.tensor.shape()) {
      throw ConfigError("checkpoint tensor " + e.name + " has shape " + shape_str(src->shape) +
                        ", model expects " + shape_str(e.tensor.shape()));
    }
    auto dst = e.tensor.data_mut();
    std::copy(src->values.begin(), src->values.end(), dst.begin());
  }
}

std::unique_ptr<ForgeryLocalizer<float>> model_from_checkpoint(const Checkpoint& ck) {
  auto model = std::make_unique<ForgeryLocalizer<float>>(ck.config.model);
  restore_model(ck, *model);
  return model;
}

}  // namespace forgeloc
