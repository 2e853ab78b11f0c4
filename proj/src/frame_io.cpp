#include "ove6d/frame_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <memory>

#include "ove6d/error.hpp"

namespace ove6d {

namespace {

using json = nlohmann::json;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png16(const std::filesystem::path& path, int w, int h, const std::vector<std::uint16_t>& px) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw DataError("libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encode failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint16_t v = px[static_cast<std::size_t>(y) * w + x];
      row[2 * x] = static_cast<std::uint8_t>(v >> 8);  // PNG is big-endian
      row[2 * x + 1] = static_cast<std::uint8_t>(v & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint16_t> read_png16(const std::filesystem::path& path, int& w, int& h) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError(path.string() + " is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw DataError("libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG decode failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": expected a grayscale PNG");
  }
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const bool sixteen = depth == 16;
  std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
  std::vector<std::uint16_t> px(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      px[static_cast<std::size_t>(y) * w + x] =
          sixteen ? static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]) : row[x];
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return px;
}

json intrinsics_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"px", k.px}, {"py", k.py}, {"width", k.width}, {"height", k.height}};
}

CameraIntrinsics intrinsics_from_json(const json& j, const std::string& where) {
  try {
    CameraIntrinsics k;
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.px = j.at("px").get<double>();
    k.py = j.at("py").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    k.validate();
    return k;
  } catch (const json::exception& e) {
    throw FormatError(where + ": bad intrinsics: " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(where + ": " + e.what());
  }
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& image) {
  auto p = image;
  p += ".json";
  return p;
}

void save_depth_png(const DepthFrame& frame, const std::filesystem::path& path, double depth_scale) {
  if (!(depth_scale > 0)) throw InvalidArgument("depth_scale must be positive");
  std::vector<std::uint16_t> px(frame.depth.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = std::round(frame.depth[i] / depth_scale);
    px[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0, 65535.0));
  }
  write_png16(path, frame.width, frame.height, px);
  json side = {{"intrinsics", intrinsics_json(frame.intrinsics)}, {"depth_scale", depth_scale}, {"unit", "mm"}};
  std::ofstream out(sidecar_path(path));
  out << side.dump(2) << '\n';
  if (!out) throw DataError("cannot write sidecar for " + path.string());
}

DepthFrame load_depth_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto px = read_png16(path, w, h);
  const json side = read_json(sidecar_path(path));
  DepthFrame frame(intrinsics_from_json(side.value("intrinsics", json::object()), sidecar_path(path).string()));
  const double scale = side.value("depth_scale", 1.0);
  if (frame.width != w || frame.height != h) throw FormatError(path.string() + ": sidecar size does not match image");
  for (std::size_t i = 0; i < px.size(); ++i) frame.depth[i] = static_cast<float>(px[i] * scale);
  return frame;
}

void save_mask_png(const MaskFrame& mask, const std::filesystem::path& path) {
  std::vector<std::uint16_t> px(mask.bits.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.bits[i] ? 65535 : 0;
  write_png16(path, mask.width, mask.height, px);
}

MaskFrame load_mask_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto px = read_png16(path, w, h);
  MaskFrame m(w, h);
  for (std::size_t i = 0; i < px.size(); ++i) m.bits[i] = px[i] != 0;
  return m;
}

void save_depth_raw(const DepthFrame& frame, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::uint32_t wh[2] = {static_cast<std::uint32_t>(frame.width), static_cast<std::uint32_t>(frame.height)};
  out.write("OVDF", 4);
  out.write(reinterpret_cast<const char*>(wh), sizeof(wh));
  out.write(reinterpret_cast<const char*>(frame.depth.data()), static_cast<std::streamsize>(frame.depth.size() * 4));
  if (!out) throw DataError("write failed for " + path.string());
}

DepthFrame load_depth_raw(const std::filesystem::path& path, const CameraIntrinsics& intr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[4];
  std::uint32_t wh[2];
  if (!in.read(magic, 4) || std::memcmp(magic, "OVDF", 4) != 0) throw FormatError(path.string() + ": bad OVDF magic");
  if (!in.read(reinterpret_cast<char*>(wh), sizeof(wh))) throw TruncatedError(path.string() + ": truncated header");
  if (static_cast<int>(wh[0]) != intr.width || static_cast<int>(wh[1]) != intr.height)
    throw FormatError(path.string() + ": size does not match intrinsics");
  DepthFrame frame(intr);
  if (!in.read(reinterpret_cast<char*>(frame.depth.data()), static_cast<std::streamsize>(frame.depth.size() * 4)))
    throw TruncatedError(path.string() + ": truncated payload");
  return frame;
}

void save_intrinsics(const CameraIntrinsics& k, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << intrinsics_json(k).dump(2) << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

CameraIntrinsics load_intrinsics(const std::filesystem::path& path) {
  const json j = read_json(path);
  return intrinsics_from_json(j.contains("intrinsics") ? j.at("intrinsics") : j, path.string());
}

}  // namespace ove6d
