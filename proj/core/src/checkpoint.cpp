#include "scca/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace scca::train {
namespace {

constexpr char kMagic[5] = {'S', 'C', 'C', 'A', '1'};

class Writer {
 public:
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out.insert(out.end(), s.begin(), s.end());
  }
  void tensor(const nk::Tensor& t) {
    u64(t.rank());
    for (std::size_t d : t.shape()) u64(d);
    for (std::size_t i = 0; i < t.size(); ++i) f64(t[i]);
  }
  void tensors(const std::map<std::string, nk::Tensor>& m) {
    u64(m.size());
    for (const auto& [k, t] : m) {
      str(k);
      tensor(t);
    }
  }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes(b) {}

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw std::runtime_error("checkpoint: truncated data");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return s;
  }
  nk::Tensor tensor() {
    const std::uint64_t rank = u64();
    if (rank == 0 || rank > 8) throw std::runtime_error("checkpoint: bad tensor rank");
    nk::Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      d = u64();
      if (d == 0 || d > (std::uint64_t{1} << 32)) throw std::runtime_error("checkpoint: bad tensor dimension");
      total *= d;
    }
    need(total * 8);
    std::vector<double> data(total);
    for (auto& v : data) v = f64();
    return nk::Tensor(std::move(shape), std::move(data));
  }
  std::map<std::string, nk::Tensor> tensors() {
    std::map<std::string, nk::Tensor> m;
    const std::uint64_t n = u64();
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string k = str();
      m.emplace(std::move(k), tensor());
    }
    return m;
  }

  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
  w.str(ck.config);
  w.u64(ck.epoch);
  w.u64(ck.rng_state);
  w.u64(ck.landmarks);
  w.u64(ck.eyes.first);
  w.u64(ck.eyes.second);
  w.tensor(ck.adjacency);
  w.tensors(ck.params);
  w.tensors(ck.buffers);
  w.tensors(ck.velocity);
  return std::move(w.out);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("checkpoint: bad magic (not an SCCA1 file)");
  }
  Reader r(bytes);
  r.pos = sizeof kMagic;
  Checkpoint ck;
  ck.config = r.str();
  ck.epoch = r.u64();
  ck.rng_state = r.u64();
  ck.landmarks = r.u64();
  ck.eyes.first = r.u64();
  ck.eyes.second = r.u64();
  ck.adjacency = r.tensor();
  ck.params = r.tensors();
  ck.buffers = r.tensors();
  ck.velocity = r.tensors();
  if (r.pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
  if (ck.adjacency.rank() != 2 || ck.adjacency.dim(0) != ck.landmarks || ck.adjacency.dim(1) != ck.landmarks) {
    throw std::runtime_error("checkpoint: adjacency does not match the landmark count");
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace scca::train
