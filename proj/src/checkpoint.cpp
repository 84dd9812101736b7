#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ecgxai/error.hpp"
#include "ecgxai/fcn.hpp"

namespace ecgxai::fcn {

namespace {

constexpr char kMagic[4] = {'F', 'C', 'N', 'W'};

class Writer {
 public:
  template <class U>
  void put(U value) {
    const auto bits = std::bit_cast<std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                    std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                    std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>>(value);
    for (std::size_t b = 0; b < sizeof(U); ++b) bytes_.push_back(static_cast<unsigned char>(bits >> (8 * b)));
  }
  void put_floats(std::span<const float> values) {
    for (float v : values) put(v);
  }
  void raw(const char* data, std::size_t n) { bytes_.insert(bytes_.end(), data, data + n); }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  template <class U>
  U get() {
    need(sizeof(U));
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                 std::conditional_t<sizeof(U) == 4, std::uint32_t,
                 std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
    Bits bits = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) bits |= static_cast<Bits>(Bits{bytes_[pos_ + b]} << (8 * b));
    pos_ += sizeof(U);
    return std::bit_cast<U>(bits);
  }
  void get_floats(std::span<float> out) {
    for (auto& v : out) v = get<float>();
  }
  void need(std::size_t n) const {
    if (pos_ + n > limit_) throw FormatError("checkpoint is truncated");
  }
  std::size_t position() const { return pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large models.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void write_checkpoint(const FcnModel& model, const std::filesystem::path& path) {
  validate(model);
  if (model.activation != Activation::Relu) {
    throw ValidationError("only ReLU models can be written to a checkpoint");
  }
  Writer w;
  w.raw(kMagic, 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(model.variant));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.class_count));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.blocks.size()));
  for (const auto& b : model.blocks) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(b.spec.filters));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(b.spec.kernel));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(b.spec.stride));
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.steps));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.leads));
  w.put<double>(model.bn_epsilon);
  w.put<double>(model.bn_momentum);
  for (const auto& b : model.blocks) {
    w.put_floats(b.weight);
    w.put_floats(b.bias);
    w.put_floats(b.gamma);
    w.put_floats(b.beta);
    w.put_floats(b.running_mean);
    w.put_floats(b.running_var);
  }
  w.put_floats(model.dense_weight);
  w.put_floats(model.dense_bias);
  w.put<std::uint32_t>(crc_of(w.bytes().data(), w.bytes().size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

FcnModel read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(path.string() + " is not a checkpoint (magic mismatch)");
  }
  const std::size_t body = bytes.size() - 4;
  Reader r(bytes, body);
  r.get<std::uint32_t>();  // magic
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto variant_id = r.get<std::uint8_t>();
  if (variant_id > static_cast<std::uint8_t>(Variant::Image2D)) {
    throw FormatError("unknown variant id " + std::to_string(variant_id));
  }
  const auto classes = r.get<std::uint32_t>();
  const auto depth = r.get<std::uint32_t>();
  if (depth == 0 || depth > 64) throw FormatError("implausible block count " + std::to_string(depth));
  std::vector<LayerSpec> layers(depth);
  for (auto& l : layers) {
    l.filters = static_cast<int>(r.get<std::uint32_t>());
    l.kernel = static_cast<int>(r.get<std::uint32_t>());
    l.stride = static_cast<int>(r.get<std::uint32_t>());
  }
  const auto steps = static_cast<int>(r.get<std::uint32_t>());
  const auto leads = static_cast<int>(r.get<std::uint32_t>());
  const double eps = r.get<double>();
  const double momentum = r.get<double>();

  FcnModel model;
  try {
    model = build_model<float>(static_cast<Variant>(variant_id), layers, static_cast<int>(classes),
                               steps, leads, 0);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint header is inconsistent: ") + e.what());
  }
  model.bn_epsilon = eps;
  model.bn_momentum = momentum;

  std::size_t floats = 0;
  for (const auto& b : model.blocks) floats += b.weight.size() + 5 * b.bias.size();
  floats += model.dense_weight.size() + model.dense_bias.size();
  if (r.position() + floats * 4 != body) {
    throw FormatError("checkpoint holds " + std::to_string(bytes.size()) +
                      " bytes but its header implies " + std::to_string(r.position() + floats * 4 + 4));
  }
  const std::uint32_t stored = static_cast<std::uint32_t>(bytes[body]) |
                               (static_cast<std::uint32_t>(bytes[body + 1]) << 8) |
                               (static_cast<std::uint32_t>(bytes[body + 2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[body + 3]) << 24);
  if (stored != crc_of(bytes.data(), body)) throw FormatError("checkpoint CRC32 mismatch");

  for (auto& b : model.blocks) {
    r.get_floats(b.weight);
    r.get_floats(b.bias);
    r.get_floats(b.gamma);
    r.get_floats(b.beta);
    r.get_floats(b.running_mean);
    r.get_floats(b.running_var);
  }
  r.get_floats(model.dense_weight);
  r.get_floats(model.dense_bias);
  try {
    validate(model);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint parameters are invalid: ") + e.what());
  }
  return model;
}

}  // namespace ecgxai::fcn
