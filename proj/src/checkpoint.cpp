#include "bsf/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "bsf/errors.hpp"

namespace bsf {

namespace {

constexpr char kMagic[8] = {'B', 'S', 'F', 'C', 'K', 'P', 'T', '1'};

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
    return r;
  }
  return v;
}

}  // namespace

std::size_t TensorInfo::count() const {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return complex ? 2 * n : n;
}

void write_checkpoint(const std::filesystem::path& path, const std::string& kind,
                      const nlohmann::json& config, const std::vector<TensorInfo>& tensors,
                      const std::vector<double>& payload) {
  nlohmann::json header;
  header["kind"] = kind;
  header["version"] = 1;
  header["dtype"] = "float64";
  header["endianness"] = "little";
  header["config"] = config;
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    table.push_back({{"name", t.name}, {"shape", t.shape}, {"complex", t.complex},
                     {"offset", offset}, {"count", t.count()}});
    offset += t.count();
  }
  if (offset != payload.size()) {
    throw ShapeError("checkpoint payload size does not match its tensor table");
  }
  header["tensors"] = table;
  header["payload_count"] = payload.size();
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = to_little(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double v : payload) {
    std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
    out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
  }
  if (!out) throw ConfigError("write failed for checkpoint '" + path.string() + "'");
}

CheckpointData read_checkpoint(const std::filesystem::path& path, const std::string& kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint '" + path.string() + "'");
  const std::string where = path.string() + ": ";

  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(where + "not a checkpoint (bad magic)");
  }
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len))) {
    throw ParseError(where + "truncated header length");
  }
  len = to_little(len);
  if (len > (1u << 26)) throw ParseError(where + "implausible header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw ParseError(where + "truncated header");
  }

  CheckpointData data;
  try {
    data.header = nlohmann::json::parse(text);
    if (data.header.at("kind").get<std::string>() != kind) {
      throw ParseError(where + "expected a '" + kind + "' checkpoint, found '" +
                       data.header.at("kind").get<std::string>() + "'");
    }
    if (data.header.at("dtype").get<std::string>() != "float64" ||
        data.header.at("endianness").get<std::string>() != "little") {
      throw ParseError(where + "unsupported dtype or endianness");
    }
    std::size_t expected_offset = 0;
    for (const auto& t : data.header.at("tensors")) {
      TensorInfo info;
      info.name = t.at("name").get<std::string>();
      info.shape = t.at("shape").get<std::vector<int>>();
      info.complex = t.at("complex").get<bool>();
      if (t.at("offset").get<std::size_t>() != expected_offset ||
          t.at("count").get<std::size_t>() != info.count()) {
        throw ParseError(where + "tensor '" + info.name + "' has inconsistent offset/count");
      }
      expected_offset += info.count();
      data.tensors.push_back(std::move(info));
    }
    if (data.header.at("payload_count").get<std::size_t>() != expected_offset) {
      throw ParseError(where + "payload_count disagrees with the tensor table");
    }
  } catch (const nlohmann::json::exception& err) {
    throw ParseError(where + "malformed header: " + err.what());
  }

  const std::size_t n = data.header["payload_count"].get<std::size_t>();
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() != n * sizeof(double)) {
    std::ostringstream msg;
    msg << where << "payload holds " << raw.size() << " bytes, header expects "
        << n * sizeof(double);
    throw ParseError(msg.str());
  }
  data.payload.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, raw.data() + i * sizeof(bits), sizeof(bits));
    data.payload[i] = std::bit_cast<double>(to_little(bits));
  }
  return data;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace bsf
