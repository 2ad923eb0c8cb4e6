#include "mvp/tensor/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <unordered_map>

#include "mvp/errors.hpp"

namespace mvp {

namespace {

constexpr char kMagic[8] = {'M', 'V', 'P', 'C', 'K', 'P', 'T', '\0'};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(std::span<const NamedTensor> params) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, params.size());
  for (const auto& [name, t] : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw ParseError("not a checkpoint (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.get<std::uint64_t>();
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name(in.take(name_len));
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = in.get<std::uint64_t>();
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(in.get<std::uint64_t>());
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  if (!in.done()) throw ParseError("trailing bytes after checkpoint payload");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> params) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void assign_parameters(std::span<const NamedTensor> dst, std::span<const NamedTensor> src) {
  std::unordered_map<std::string_view, const Tensor*> index;
  for (const auto& p : src) index.emplace(p.name, &p.tensor);
  for (const auto& [name, t] : dst) {
    auto it = index.find(name);
    if (it == index.end()) throw ParseError("checkpoint is missing parameter " + name);
    if (it->second->shape() != t.shape()) {
      throw DimensionError("parameter " + name + ": checkpoint shape " + shape_str(it->second->shape()) +
                           " vs model shape " + shape_str(t.shape()));
    }
    auto target = Tensor(t).mutable_data();
    std::copy(it->second->data().begin(), it->second->data().end(), target.begin());
  }
}

std::uint64_t parameter_checksum(std::span<const NamedTensor> params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : params) {
    for (char c : name) mix(static_cast<unsigned char>(c));
    for (auto e : t.shape()) mix(e);
    for (double v : t.data()) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

}  // namespace mvp
