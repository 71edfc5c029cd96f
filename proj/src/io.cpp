#include "bbe/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "bbe/config_json.hpp"
#include "bbe/error.hpp"

namespace bbe {

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s);
}

std::string_view ByteReader::bytes(std::size_t n) {
  if (n > remaining()) fail(ErrorKind::Format, "truncated " + what_);
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }

std::uint32_t ByteReader::u32() {
  auto b = bytes(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(b[i])} << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  auto b = bytes(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<std::uint8_t>(b[i])} << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  return std::string(bytes(n));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write to '" + path.string() + "' failed");
}

std::string encode_feat(const Tensor& frames) {
  if (frames.rank() != 2) fail(ErrorKind::Dimension, "FEAT frames must be [n_frames, dim]");
  ByteWriter w;
  w.bytes("FEAT");
  w.u32(static_cast<std::uint32_t>(frames.shape()[0]));
  w.u32(static_cast<std::uint32_t>(frames.shape()[1]));
  for (double v : frames.data()) w.f32(static_cast<float>(v));
  return w.buffer();
}

Tensor decode_feat(std::string_view bytes, const std::string& what) {
  ByteReader r(bytes, what);
  if (r.bytes(4) != "FEAT") fail(ErrorKind::Format, "bad magic in " + what);
  const std::size_t n = r.u32();
  const std::size_t dim = r.u32();
  if (r.remaining() != n * dim * 4) {
    fail(ErrorKind::Format, what + ": payload size does not match header");
  }
  Tensor t({n, dim});
  for (auto& v : t.data()) v = static_cast<double>(r.f32());
  return t;
}

void write_feat(const std::filesystem::path& path, const Tensor& frames) {
  write_file(path, encode_feat(frames));
}

Tensor read_feat(const std::filesystem::path& path) {
  return decode_feat(read_file(path), path.string());
}

namespace {

void write_tensor_data(ByteWriter& w, const Tensor& t) {
  for (double v : t.data()) w.f64(v);
}

Tensor read_tensor_data(ByteReader& r, const Shape& shape) {
  Tensor t(shape);
  for (auto& v : t.data()) v = r.f64();
  return t;
}

}  // namespace

std::string encode_checkpoint(const EncoderModel& model) {
  nlohmann::json meta;
  meta["encoder"] = model.config;
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : model.blocks) {
    blocks.push_back({{"id", b.id},
                      {"origin", to_string(b.origin)},
                      {"source", b.source},
                      {"trainable", b.trainable}});
  }
  meta["blocks"] = std::move(blocks);
  if (model.expansion) {
    meta["expansion"] = {{"multiplier", model.expansion->multiplier},
                         {"freeze_policy", to_string(model.expansion->freeze_policy)}};
  } else {
    meta["expansion"] = nullptr;
  }

  ByteWriter w;
  w.bytes("BBEX");
  w.u32(kCheckpointVersion);
  w.str(meta.dump());
  w.u32(static_cast<std::uint32_t>(model.store.size()));
  for (const auto& p : model.store) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t dim : p.value.shape()) w.u64(dim);
    write_tensor_data(w, p.value);
    w.u8(p.frozen ? 1 : 0);
    write_tensor_data(w, p.m);
    write_tensor_data(w, p.v);
    w.u64(p.step);
  }
  w.u64(model.rng_state);
  return w.buffer();
}

EncoderModel decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.bytes(4) != "BBEX") fail(ErrorKind::Format, "checkpoint magic mismatch");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("checkpoint config is not valid JSON: ") + e.what());
  }

  EncoderModel model;
  try {
    model.config = meta.at("encoder").get<EncoderConfig>();
    for (const auto& b : meta.at("blocks")) {
      model.blocks.push_back({b.at("id").get<std::string>(),
                              parse_block_origin(b.at("origin").get<std::string>()),
                              b.at("source").get<std::size_t>(), b.at("trainable").get<bool>()});
    }
    const auto& ex = meta.at("expansion");
    if (!ex.is_null()) {
      model.expansion = ExpansionInfo{ex.at("multiplier").get<std::size_t>(),
                                      parse_freeze_policy(ex.at("freeze_policy").get<std::string>())};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed checkpoint config: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::Format, std::string("malformed checkpoint config: ") + e.what());
  }

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) fail(ErrorKind::Format, "implausible tensor rank in checkpoint");
    Shape shape(rank);
    for (auto& dim : shape) dim = r.u64();
    if (shape_numel(shape) * 8 > r.remaining()) fail(ErrorKind::Format, "truncated checkpoint");
    Tensor value = read_tensor_data(r, shape);
    const bool frozen = r.u8() != 0;
    const bool decay = default_decay(name);
    Parameter& p = model.store.add(std::move(name), std::move(value), decay);
    p.frozen = frozen;
    p.m = read_tensor_data(r, shape);
    p.v = read_tensor_data(r, shape);
    p.step = r.u64();
  }
  model.rng_state = r.u64();
  if (!r.at_end()) fail(ErrorKind::Format, "trailing bytes after checkpoint");
  if (model.blocks.size() != model.config.n_blocks) {
    fail(ErrorKind::Format, "checkpoint block list does not match n_blocks");
  }
  return model;
}

void save_checkpoint(const EncoderModel& model, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(model));
}

EncoderModel load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

std::string git_blob_hash(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

}  // namespace bbe
