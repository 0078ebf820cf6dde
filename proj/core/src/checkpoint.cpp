#include "oed/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "oed/error.hpp"

namespace oed {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class T>
  void pod(T v) {
    bytes(&v, sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    if (n > in_.size() - pos_) throw IoError("checkpoint truncated");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > in_.size() - pos_) throw IoError("checkpoint truncated");
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string line() {
    std::string s;
    while (pos_ < in_.size() && in_[pos_] != '\n' && s.size() < 64) s += static_cast<char>(in_[pos_++]);
    if (pos_ >= in_.size() || in_[pos_] != '\n') throw IoError("checkpoint header missing");
    ++pos_;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::store_params(const nn::ParamStore& params) {
  for (const nn::Parameter* p : params.all()) tensors[p->name] = p->value;
}

void Checkpoint::load_params(nn::ParamStore& params) const {
  if (params.size() != tensors.size()) {
    throw InvalidArgument("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  }
  for (nn::Parameter* p : params.all()) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) throw InvalidArgument("checkpoint lacks tensor '" + p->name + "'");
    if (it->second.shape() != p->value.shape()) {
      throw InvalidArgument("tensor '" + p->name + "' has shape " + nn::to_string(it->second.shape()) +
                            ", model expects " + nn::to_string(p->value.shape()));
    }
    p->value = it->second;
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(ckpt.header.data(), ckpt.header.size());
  w.pod<char>('\n');
  w.str(ckpt.config_json);
  w.str(ckpt.metadata_json);
  w.pod<std::uint64_t>(ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    w.str(name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.pod<std::int32_t>(d);
    w.bytes(t.data(), t.numel() * sizeof(double));
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  Checkpoint c;
  c.header = r.line();
  c.config_json = r.str();
  c.metadata_json = r.str();
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw IoError("checkpoint tensor '" + name + "' has implausible rank");
    nn::Shape shape(rank);
    for (auto& d : shape) {
      d = r.pod<std::int32_t>();
      if (d < 0) throw IoError("checkpoint tensor '" + name + "' has negative dimension");
    }
    std::vector<double> values(nn::numel(shape));
    r.bytes(values.data(), values.size() * sizeof(double));
    c.tensors.emplace(std::move(name), nn::Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint tensors");
  return c;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint c = decode_checkpoint(bytes);
  if (!expected_header.empty() && c.header != expected_header) {
    throw InvalidArgument(path.string() + ": checkpoint header '" + c.header + "', expected '" + expected_header + "'");
  }
  return c;
}

std::string peek_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  return line;
}

}  // namespace oed
