// SPDX-License-Identifier: Apache-2.0
#include "metaxp/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "metaxp/checksum.hpp"
#include "metaxp/error.hpp"
#include "metaxp/json_io.hpp"

namespace metaxp::asr {

namespace {

constexpr char kMagic[8] = {'M', 'X', 'P', 'C', 'K', 'P', 'T', '1'};

template <class T>
void put_le(std::string& out, T value) {
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  out.append(reinterpret_cast<const char*>(bits.data()), bits.size());
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    std::array<unsigned char, sizeof(T)> bits;
    take(bits.data(), bits.size());
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    return std::bit_cast<T>(bits);
  }
  std::string_view take_view(std::size_t n) {
    need(n);
    auto v = bytes_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw ParseError(0, "checkpoint truncated");
  }
  void take(unsigned char* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void put_values(std::string& out, const Tensor& t) {
  for (double v : t.data()) put_le(out, v);
}

}  // namespace

std::string encode_checkpoint(const AsrModel& model) {
  nlohmann::json header;
  header["model_config"] = model.config;
  header["parameters"] = nlohmann::json::array();
  for (const auto& e : model.params.entries()) {
    header["parameters"].push_back({{"name", e.name}, {"shape", e.value.shape()}});
  }
  header["frozen"] = model.params.frozen_names();
  header["has_snapshot"] = model.params.has_snapshot();
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  for (const auto& e : model.params.entries()) put_values(out, e.value);
  if (model.params.has_snapshot()) {
    for (const auto& t : model.params.snapshot()) put_values(out, t);
  }
  Fnv1a64 sum;
  sum.update(out);
  put_le(out, sum.digest());
  return out;
}

AsrModel decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic + 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw ParseError(0, "not a checkpoint (bad magic or too short)");
  }
  Reader trailer(bytes.substr(bytes.size() - 8));
  const auto stored = trailer.get<std::uint64_t>();
  Fnv1a64 sum;
  sum.update(bytes.substr(0, bytes.size() - 8));
  if (sum.digest() != stored) throw IntegrityError("checkpoint checksum mismatch");

  Reader in(bytes.substr(0, bytes.size() - 8));
  in.take_view(sizeof kMagic);
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ParseError(0, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = in.get<std::uint32_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.take_view(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("checkpoint header: ") + e.what());
  }

  AsrModel model;
  try {
    model.config = header.at("model_config").get<ModelConfig>();
    for (const auto& p : header.at("parameters")) {
      Tensor t(p.at("shape").get<Shape>());
      for (auto& v : t.data()) v = in.get<double>();
      model.params.add(p.at("name").get<std::string>(), std::move(t));
    }
    model.params.set_frozen(header.at("frozen").get<std::set<std::string>>());
    if (header.at("has_snapshot").get<bool>()) {
      std::vector<Tensor> snap;
      for (const auto& e : model.params.entries()) {
        Tensor t(e.value.shape());
        for (auto& v : t.data()) v = in.get<double>();
        snap.push_back(std::move(t));
      }
      model.params.restore_snapshot(std::move(snap));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("checkpoint header: ") + e.what());
  }
  if (in.remaining() != 0) throw ParseError(0, "trailing bytes in checkpoint payload");
  model.config.validate();
  return model;
}

void save_checkpoint(const AsrModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  const std::string bytes = encode_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

AsrModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace metaxp::asr
