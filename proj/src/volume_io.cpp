#include "seedgrow/volume_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace seedgrow {

using ordered_json = nlohmann::ordered_json;

void append_f32le(std::string& out, float value) {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

float load_f32le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kData, "cannot open " + path.string(), "path");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kData, "cannot write " + path.string(), "path");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kData, "short write to " + path.string(), "path");
}

std::string_view split_header(std::string_view bytes, std::string_view& payload) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) fail(ErrorKind::kData, "missing header terminator", "header");
  payload = bytes.substr(nl + 1);
  return bytes.substr(0, nl);
}

namespace {

struct SvfHeader {
  Dims dims;
  int channels = 0;
  Spacing spacing{};
  std::string dtype;
};

std::string header_line(const Dims& dims, int channels, const Spacing& spacing, const char* dtype) {
  ordered_json h;
  h["magic"] = "SVF1";
  h["dims"] = {dims.h, dims.w, dims.d};
  h["channels"] = channels;
  h["spacing_mm"] = {spacing[0], spacing[1], spacing[2]};
  h["dtype"] = dtype;
  return h.dump() + "\n";
}

SvfHeader parse_header(std::string_view text) {
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("header is not valid JSON: ") + e.what(), "header");
  }
  if (!h.is_object()) fail(ErrorKind::kData, "header must be a JSON object", "header");
  if (!h.contains("magic") || h["magic"] != "SVF1") fail(ErrorKind::kData, "bad or missing magic", "magic");

  SvfHeader out;
  try {
    const auto& dims = h.at("dims");
    if (!dims.is_array() || dims.size() != 3) fail(ErrorKind::kData, "dims must have three entries", "dims");
    out.dims = {dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>()};
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::kData, "dims missing or not integers", "dims");
  }
  if (!out.dims.valid()) fail(ErrorKind::kData, "dims must be positive", "dims");
  try {
    out.channels = h.at("channels").get<int>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::kData, "channels missing or not an integer", "channels");
  }
  if (out.channels <= 0) fail(ErrorKind::kData, "channels must be positive", "channels");
  try {
    const auto& sp = h.at("spacing_mm");
    if (!sp.is_array() || sp.size() != 3) fail(ErrorKind::kData, "spacing_mm must have three entries", "spacing_mm");
    out.spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::kData, "spacing_mm missing or not numeric", "spacing_mm");
  }
  try {
    out.dtype = h.at("dtype").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::kData, "dtype missing", "dtype");
  }
  return out;
}

}  // namespace

std::string encode_volume(const Volume& v) {
  std::string out = header_line(v.dims(), v.channels(), v.spacing(), "f32le");
  out.reserve(out.size() + 4 * static_cast<std::size_t>(v.data().size()));
  for (Eigen::Index i = 0; i < v.data().size(); ++i) append_f32le(out, v.data()[i]);
  return out;
}

Volume decode_volume(std::string_view bytes) {
  std::string_view payload;
  const SvfHeader h = parse_header(split_header(bytes, payload));
  if (h.dtype != "f32le") fail(ErrorKind::kData, "unsupported volume dtype '" + h.dtype + "'", "dtype");
  const std::size_t n = h.dims.size() * static_cast<std::size_t>(h.channels);
  if (payload.size() != 4 * n)
    fail(ErrorKind::kData,
         "payload has " + std::to_string(payload.size()) + " bytes, dims imply " + std::to_string(4 * n), "dims");
  Eigen::ArrayXf data(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) data[static_cast<Eigen::Index>(i)] = load_f32le(payload.data() + 4 * i);
  Volume v(h.dims, h.channels, h.spacing, std::move(data));
  v.validate();
  return v;
}

std::string encode_mask(const Mask& m, const Spacing& spacing) {
  std::string out = header_line(m.dims(), 1, spacing, "u8");
  out.append(reinterpret_cast<const char*>(m.array().data()), m.size());
  return out;
}

Mask decode_mask(std::string_view bytes) {
  std::string_view payload;
  const SvfHeader h = parse_header(split_header(bytes, payload));
  if (h.dtype != "u8") fail(ErrorKind::kData, "unsupported mask dtype '" + h.dtype + "'", "dtype");
  if (h.channels != 1) fail(ErrorKind::kData, "masks must have one channel", "channels");
  if (payload.size() != h.dims.size())
    fail(ErrorKind::kData,
         "payload has " + std::to_string(payload.size()) + " bytes, dims imply " + std::to_string(h.dims.size()),
         "dims");
  Mask m(h.dims);
  std::memcpy(m.array().data(), payload.data(), payload.size());
  if ((m.array() > 1).any()) fail(ErrorKind::kData, "mask values must be 0 or 1", "data");
  return m;
}

void write_volume(const std::filesystem::path& path, const Volume& v) { write_file(path, encode_volume(v)); }
Volume read_volume(const std::filesystem::path& path) { return decode_volume(read_file(path)); }

void write_mask(const std::filesystem::path& path, const Mask& m, const Spacing& spacing) {
  write_file(path, encode_mask(m, spacing));
}
Mask read_mask(const std::filesystem::path& path) { return decode_mask(read_file(path)); }

}  // namespace seedgrow
