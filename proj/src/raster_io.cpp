#include "dualswin/raster_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dualswin/error.hpp"

#ifdef DUALSWIN_HAVE_TIFF
#include <tiffio.h>
#endif

namespace dualswin {
namespace {

constexpr std::array<char, 4> kMagic = {'M', 'M', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                 static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) fail(ErrorKind::IoError, "truncated MMT1 header");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

void to_little_endian(std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (float& v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = ((bits & 0xFF) << 24) | ((bits & 0xFF00) << 8) | ((bits >> 8) & 0xFF00) | (bits >> 24);
      v = std::bit_cast<float>(bits);
    }
  }
}

#ifdef DUALSWIN_HAVE_TIFF

struct TiffCloser {
  void operator()(TIFF* t) const { TIFFClose(t); }
};
using TiffHandle = std::unique_ptr<TIFF, TiffCloser>;

double sample_to_double(const unsigned char* p, std::uint16_t format, std::uint16_t bits) {
  switch (format) {
    case SAMPLEFORMAT_IEEEFP:
      if (bits == 32) { float v; std::memcpy(&v, p, 4); return v; }
      if (bits == 64) { double v; std::memcpy(&v, p, 8); return v; }
      break;
    case SAMPLEFORMAT_INT:
      if (bits == 8) { std::int8_t v; std::memcpy(&v, p, 1); return v; }
      if (bits == 16) { std::int16_t v; std::memcpy(&v, p, 2); return v; }
      if (bits == 32) { std::int32_t v; std::memcpy(&v, p, 4); return v; }
      break;
    default:
      if (bits == 8) return *p;
      if (bits == 16) { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
      if (bits == 32) { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
      break;
  }
  fail(ErrorKind::IoError, "unsupported TIFF sample type (format " + std::to_string(format) + ", " +
                               std::to_string(bits) + " bits)");
}

torch::Tensor read_geotiff(const std::filesystem::path& path) {
  TiffHandle tif(TIFFOpen(path.c_str(), "r"));
  if (!tif) fail(ErrorKind::IoError, "cannot open TIFF " + path.string());
  std::uint32_t width = 0, height = 0;
  std::uint16_t spp = 1, bits = 8, format = SAMPLEFORMAT_UINT, planar = PLANARCONFIG_CONTIG;
  TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &width);
  TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &height);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &spp);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_BITSPERSAMPLE, &bits);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLEFORMAT, &format);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_PLANARCONFIG, &planar);
  const std::size_t bytes = bits / 8;
  if (bytes == 0) fail(ErrorKind::IoError, "sub-byte TIFF samples are not supported");

  auto out = torch::empty({spp, static_cast<long>(height), static_cast<long>(width)}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  auto store = [&](std::uint32_t c, std::uint32_t y, std::uint32_t x, const unsigned char* p) {
    if (c < spp && y < height && x < width) acc[c][y][x] = static_cast<float>(sample_to_double(p, format, bits));
  };

  if (TIFFIsTiled(tif.get())) {
    std::uint32_t tw = 0, th = 0;
    TIFFGetField(tif.get(), TIFFTAG_TILEWIDTH, &tw);
    TIFFGetField(tif.get(), TIFFTAG_TILELENGTH, &th);
    std::vector<unsigned char> buf(TIFFTileSize(tif.get()));
    const std::uint16_t planes = planar == PLANARCONFIG_SEPARATE ? spp : 1;
    for (std::uint16_t plane = 0; plane < planes; ++plane)
      for (std::uint32_t ty = 0; ty < height; ty += th)
        for (std::uint32_t tx = 0; tx < width; tx += tw) {
          if (TIFFReadTile(tif.get(), buf.data(), tx, ty, 0, plane) < 0)
            fail(ErrorKind::IoError, "TIFF tile read failed in " + path.string());
          for (std::uint32_t y = 0; y < th; ++y)
            for (std::uint32_t x = 0; x < tw; ++x) {
              if (planar == PLANARCONFIG_SEPARATE) {
                store(plane, ty + y, tx + x, buf.data() + (std::size_t{y} * tw + x) * bytes);
              } else {
                for (std::uint16_t c = 0; c < spp; ++c)
                  store(c, ty + y, tx + x, buf.data() + ((std::size_t{y} * tw + x) * spp + c) * bytes);
              }
            }
        }
  } else {
    std::vector<unsigned char> line(TIFFScanlineSize(tif.get()));
    if (planar == PLANARCONFIG_SEPARATE) {
      for (std::uint16_t c = 0; c < spp; ++c)
        for (std::uint32_t y = 0; y < height; ++y) {
          if (TIFFReadScanline(tif.get(), line.data(), y, c) < 0)
            fail(ErrorKind::IoError, "TIFF scanline read failed in " + path.string());
          for (std::uint32_t x = 0; x < width; ++x) store(c, y, x, line.data() + std::size_t{x} * bytes);
        }
    } else {
      for (std::uint32_t y = 0; y < height; ++y) {
        if (TIFFReadScanline(tif.get(), line.data(), y, 0) < 0)
          fail(ErrorKind::IoError, "TIFF scanline read failed in " + path.string());
        for (std::uint32_t x = 0; x < width; ++x)
          for (std::uint16_t c = 0; c < spp; ++c)
            store(c, y, x, line.data() + (std::size_t{x} * spp + c) * bytes);
      }
    }
  }
  return out;
}

template <typename T>
void write_geotiff_planes(const std::filesystem::path& path, const torch::Tensor& chw, std::uint16_t format) {
  TiffHandle tif(TIFFOpen(path.c_str(), "w"));
  if (!tif) fail(ErrorKind::IoError, "cannot create TIFF " + path.string());
  const auto c = static_cast<std::uint16_t>(chw.size(0));
  const auto h = static_cast<std::uint32_t>(chw.size(1));
  const auto w = static_cast<std::uint32_t>(chw.size(2));
  TIFFSetField(tif.get(), TIFFTAG_IMAGEWIDTH, w);
  TIFFSetField(tif.get(), TIFFTAG_IMAGELENGTH, h);
  TIFFSetField(tif.get(), TIFFTAG_SAMPLESPERPIXEL, c);
  TIFFSetField(tif.get(), TIFFTAG_BITSPERSAMPLE, static_cast<std::uint16_t>(sizeof(T) * 8));
  TIFFSetField(tif.get(), TIFFTAG_SAMPLEFORMAT, format);
  TIFFSetField(tif.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_SEPARATE);
  TIFFSetField(tif.get(), TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
  if (c > 1) {
    std::vector<std::uint16_t> extra(c - 1, EXTRASAMPLE_UNSPECIFIED);
    TIFFSetField(tif.get(), TIFFTAG_EXTRASAMPLES, static_cast<std::uint16_t>(c - 1), extra.data());
  }
  TIFFSetField(tif.get(), TIFFTAG_COMPRESSION, COMPRESSION_NONE);
  TIFFSetField(tif.get(), TIFFTAG_ROWSPERSTRIP, 1u);
  auto data = chw.contiguous();
  const T* base = data.data_ptr<T>();
  std::vector<T> row(w);
  for (std::uint16_t ch = 0; ch < c; ++ch)
    for (std::uint32_t y = 0; y < h; ++y) {
      std::copy_n(base + (std::size_t{ch} * h + y) * w, w, row.begin());
      if (TIFFWriteScanline(tif.get(), row.data(), y, ch) < 0)
        fail(ErrorKind::IoError, "TIFF write failed for " + path.string());
    }
}

#endif  // DUALSWIN_HAVE_TIFF

torch::Tensor as_chw(const torch::Tensor& t) {
  if (t.dim() == 2) return t.unsqueeze(0);
  if (t.dim() != 3) fail(ErrorKind::ShapeMismatch, "raster tensors must be C x H x W");
  return t;
}

}  // namespace

void write_mmt1(std::ostream& out, const torch::Tensor& tensor) {
  auto chw = as_chw(tensor).to(torch::kFloat32).contiguous();
  out.write(kMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(chw.size(0)));
  put_u32(out, static_cast<std::uint32_t>(chw.size(1)));
  put_u32(out, static_cast<std::uint32_t>(chw.size(2)));
  std::vector<float> values(chw.data_ptr<float>(), chw.data_ptr<float>() + chw.numel());
  to_little_endian(values);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
  if (!out) fail(ErrorKind::IoError, "MMT1 write failed");
}

torch::Tensor read_mmt1(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kMagic) fail(ErrorKind::IoError, "not an MMT1 stream");
  const std::uint32_t c = get_u32(in), h = get_u32(in), w = get_u32(in);
  std::vector<float> values(std::size_t{c} * h * w);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
  if (!in) fail(ErrorKind::IoError, "truncated MMT1 payload");
  to_little_endian(values);
  return torch::from_blob(values.data(), {c, h, w}, torch::kFloat32).clone();
}

RasterFormat raster_format_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return (ext == ".tif" || ext == ".tiff") ? RasterFormat::GeoTiff : RasterFormat::Raw;
}

const char* raster_extension(RasterFormat format) { return format == RasterFormat::GeoTiff ? ".tif" : ".mmt"; }

bool geotiff_supported() {
#ifdef DUALSWIN_HAVE_TIFF
  return true;
#else
  return false;
#endif
}

torch::Tensor read_raster(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::IoError, "no such file: " + path.string());
  if (raster_format_for(path) == RasterFormat::GeoTiff) {
#ifdef DUALSWIN_HAVE_TIFF
    return read_geotiff(path);
#else
    fail(ErrorKind::IoError, "built without GeoTIFF support: " + path.string());
#endif
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  return read_mmt1(in);
}

void write_raster(const std::filesystem::path& path, const torch::Tensor& chw) {
  if (raster_format_for(path) == RasterFormat::GeoTiff) {
#ifdef DUALSWIN_HAVE_TIFF
    write_geotiff_planes<float>(path, as_chw(chw).to(torch::kFloat32), SAMPLEFORMAT_IEEEFP);
    return;
#else
    fail(ErrorKind::IoError, "built without GeoTIFF support: " + path.string());
#endif
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot create " + path.string());
  write_mmt1(out, chw);
}

void write_mask_raster(const std::filesystem::path& path, const torch::Tensor& hw) {
  if (raster_format_for(path) == RasterFormat::GeoTiff) {
#ifdef DUALSWIN_HAVE_TIFF
    write_geotiff_planes<std::uint8_t>(path, as_chw(hw).to(torch::kUInt8), SAMPLEFORMAT_UINT);
    return;
#else
    fail(ErrorKind::IoError, "built without GeoTIFF support: " + path.string());
#endif
  }
  write_raster(path, hw.to(torch::kFloat32));
}

}  // namespace dualswin
