#include "s2tl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "s2tl/errors.hpp"

namespace s2tl {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void Checkpoint::put(std::string name, const Tensor& t) {
  tensors.push_back({std::move(name), t.shape(), {t.data().begin(), t.data().end()}});
}

namespace {

class Writer {
 public:
  template <class T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  template <class T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > in_.size() - pos_) throw DataError("checkpoint truncated");
    const auto* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string str(std::size_t n) {
    const auto* p = take(n);
    return {reinterpret_cast<const char*>(p), n};
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.sections.size()));
  for (const auto& [name, text] : ck.sections) {
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.pod<std::uint64_t>(text.size());
    w.bytes(text.data(), text.size());
  }
  w.pod<std::uint64_t>(ck.tensors.size());
  for (const auto& t : ck.tensors) {
    if (numel(t.shape) != t.data.size()) {
      throw DimensionError("checkpoint tensor " + t.name + " data does not match its shape");
    }
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.pod<std::uint64_t>(d);
    w.bytes(t.data.data(), t.data.size() * sizeof(float));
  }
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof(kCheckpointMagic)), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto n_sections = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_sections; ++i) {
    std::string name = r.str(r.pod<std::uint32_t>());
    ck.sections[name] = r.str(r.pod<std::uint64_t>());
  }
  const auto n_tensors = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    CheckpointTensor t;
    t.name = r.str(r.pod<std::uint32_t>());
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw DataError("checkpoint tensor " + t.name + " has implausible rank");
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.pod<std::uint64_t>());
    t.data.resize(numel(t.shape));
    const auto* p = r.take(t.data.size() * sizeof(float));
    std::memcpy(t.data.data(), p, t.data.size() * sizeof(float));
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint payload");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Checkpoint capture_model(const Model& model) {
  Checkpoint ck;
  ck.sections["model_config"] = model.config().to_text();
  for (const auto& p : model.parameters()) ck.put(p.name, p.tensor);
  return ck;
}

Model restore_model(const Checkpoint& ck) {
  const auto it = ck.sections.find("model_config");
  if (it == ck.sections.end()) throw DataError("checkpoint has no model_config section");
  Model model(ModelConfig::from_text(it->second), 0);
  load_parameters(model, ck);
  return model;
}

std::vector<std::string> load_parameters(Model& model, const Checkpoint& ck,
                                         const std::string& prefix) {
  std::vector<std::string> problems, loaded;
  for (const auto& p : model.parameters()) {
    if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
    const auto* t = ck.find(p.name);
    if (!t) {
      problems.push_back(p.name + ": missing from checkpoint");
    } else if (t->shape != p.tensor.shape()) {
      problems.push_back(p.name + ": checkpoint " + shape_str(t->shape) + " vs model " +
                         shape_str(p.tensor.shape()));
    }
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint is incompatible with the model:";
    for (const auto& s : problems) msg += "\n  " + s;
    throw ConfigError(msg);
  }
  for (const auto& p : model.parameters()) {
    if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
    const auto* t = ck.find(p.name);
    Tensor handle = p.tensor;
    std::copy(t->data.begin(), t->data.end(), handle.mutable_data().begin());
    loaded.push_back(p.name);
  }
  return loaded;
}

}  // namespace s2tl
