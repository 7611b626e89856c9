#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <iosfwd>

namespace dualswin {

/// Raw raster container ("MMT1"): little-endian header {magic "MMT1", u32 C,
/// u32 H, u32 W} followed by C*H*W float32 values, channel-major, row-major.
void write_mmt1(std::ostream& out, const torch::Tensor& chw);
torch::Tensor read_mmt1(std::istream& in);

enum class RasterFormat { Raw, GeoTiff };

RasterFormat raster_format_for(const std::filesystem::path& path);
const char* raster_extension(RasterFormat format);
bool geotiff_supported();

/// Reads a C x H x W float32 tensor from either container (selected by file
/// extension: .tif/.tiff -> GeoTIFF, anything else -> MMT1).
torch::Tensor read_raster(const std::filesystem::path& path);
/// Writes a float raster. GeoTIFF output is planar float32.
void write_raster(const std::filesystem::path& path, const torch::Tensor& chw);
/// Writes a single-band binary mask: uint8 for GeoTIFF, float32 {0,1} for MMT1.
void write_mask_raster(const std::filesystem::path& path, const torch::Tensor& hw);

}  // namespace dualswin
