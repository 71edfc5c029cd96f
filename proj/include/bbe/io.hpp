#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bbe/encoder.hpp"
#include "bbe/tensor.hpp"

namespace bbe {

// Little-endian byte sink.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view s) { buf_.append(s); }
  void str(std::string_view s);  // u32 length + bytes

  const std::string& buffer() const noexcept { return buf_; }

 private:
  std::string buf_;
};

// Little-endian byte source; every read past the end is a format error.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data, std::string what = "file")
      : data_(data), what_(std::move(what)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string_view bytes(std::size_t n);
  std::string str();

  bool at_end() const noexcept { return pos_ == data_.size(); }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// FEAT feature container: "FEAT", u32 n_frames, u32 dim, n_frames*dim f32.
std::string encode_feat(const Tensor& frames);
Tensor decode_feat(std::string_view bytes, const std::string& what = "FEAT data");
void write_feat(const std::filesystem::path& path, const Tensor& frames);
Tensor read_feat(const std::filesystem::path& path);

// Checkpoint: "BBEX", u32 version, length-prefixed JSON config, u32 record
// count, per-parameter records, trailing u64 RNG state.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const EncoderModel& model);
EncoderModel decode_checkpoint(std::string_view bytes);
void save_checkpoint(const EncoderModel& model, const std::filesystem::path& path);
EncoderModel load_checkpoint(const std::filesystem::path& path);

// SHA-1 over "blob <size>\0<bytes>", as git hashes file contents.
std::string git_blob_hash(std::string_view bytes);

}  // namespace bbe
