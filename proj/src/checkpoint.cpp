#include "hpgan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hpgan::ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

enum DType : std::uint8_t { kF32 = 0, kF64 = 1 };

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    out_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <typename T>
  T pod() {
    T v;
    need(sizeof v);
    std::memcpy(&v, s_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, s_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw std::runtime_error("checkpoint truncated");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

template <typename Scalar>
void write_tensor(Writer& w, const Tensor<Scalar>& t) {
  w.pod(static_cast<std::uint8_t>(std::is_same_v<Scalar, float> ? kF32 : kF64));
  w.pod(static_cast<std::uint32_t>(t.shape.size()));
  for (Index d : t.shape) w.pod(static_cast<std::int64_t>(d));
  w.raw(t.ptr(), static_cast<std::size_t>(t.size()) * sizeof(Scalar));
}

template <typename Scalar>
Tensor<Scalar> read_data(Reader& r, Shape shape) {
  Tensor<Scalar> t(std::move(shape));
  r.raw(t.ptr(), static_cast<std::size_t>(t.size()) * sizeof(Scalar));
  return t;
}

}  // namespace

std::int64_t Checkpoint::counter(const std::string& name) const {
  for (const auto& [k, v] : counters)
    if (k == name) return v;
  throw std::runtime_error("checkpoint has no counter '" + name + "'");
}

const NamedTensor& Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw std::runtime_error("checkpoint has no tensor '" + name + "'");
}

template <typename Scalar>
void Checkpoint::restore(const std::string& name, Tensor<Scalar>& dst) const {
  const auto* t = std::get_if<Tensor<Scalar>>(&find(name).tensor);
  if (!t) throw std::runtime_error("checkpoint tensor '" + name + "' has the wrong dtype");
  if (t->shape != dst.shape) {
    throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + shape_string(t->shape) + ", expected " +
                             shape_string(dst.shape));
  }
  dst.data = t->data;
}

template void Checkpoint::restore(const std::string&, Tensor<float>&) const;
template void Checkpoint::restore(const std::string&, Tensor<double>&) const;

std::string to_bytes(const Checkpoint& c) {
  Writer w;
  w.raw(kMagic, 4);
  w.pod(kVersion);
  w.pod(c.digest);
  w.pod(c.seed);
  w.str(c.config);
  w.pod(static_cast<std::uint32_t>(c.counters.size()));
  for (const auto& [k, v] : c.counters) {
    w.str(k);
    w.pod(v);
  }
  w.pod(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.str(t.name);
    std::visit([&w](const auto& x) { write_tensor(w, x); }, t.tensor);
  }
  return w.take();
}

Checkpoint from_bytes(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not an HPG1 checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.digest = r.pod<std::uint64_t>();
  c.seed = r.pod<std::uint64_t>();
  c.config = r.str();
  const auto ncounters = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < ncounters; ++i) {
    std::string k = r.str();
    c.counters.emplace_back(std::move(k), r.pod<std::int64_t>());
  }
  const auto ntensors = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    NamedTensor t;
    t.name = r.str();
    const auto dtype = r.pod<std::uint8_t>();
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw std::runtime_error("checkpoint tensor '" + t.name + "' has implausible rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto n = r.pod<std::int64_t>();
      if (n < 0) throw std::runtime_error("checkpoint tensor '" + t.name + "' has a negative dimension");
      shape.push_back(n);
    }
    if (dtype == kF32) t.tensor = read_data<float>(r, std::move(shape));
    else if (dtype == kF64) t.tensor = read_data<double>(r, std::move(shape));
    else throw std::runtime_error("checkpoint tensor '" + t.name + "' has unknown dtype");
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes");
  return c;
}

void save(const std::string& path, const Checkpoint& c) {
  const std::string bytes = to_bytes(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "' (disk full?)");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_bytes(ss.str());
}

}  // namespace hpgan::ckpt
