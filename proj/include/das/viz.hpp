#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "das/model.hpp"
#include "das/scan.hpp"

namespace das::viz {

/// 8-bit image, interleaved channels (1 or 3).
struct Image {
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> pixels;
};

/// Binary PGM (P5) or PPM (P6) with maxval 255; FormatError otherwise.
Image read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Image& image);

/// Model input scale: byte v <-> value 4 v / 255 - 2. Gray is replicated to
/// three channels.
Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const Tensor& chw);

/// Round half up per axis, clamped to the grid: (2.4, 3.6) -> (2, 4).
std::pair<std::size_t, std::size_t> nearest_patch(double x, double y, std::size_t width, std::size_t height);

struct PathPoint {
    double x = 0.0, y = 0.0;          // sampled position in patch units (post-clamp)
    std::size_t patch_x = 0, patch_y = 0;
    bool out_of_grid = false;         // pre-clamp prediction left the map
};

/// Sampled positions of one image in scan (raster) order.
struct ScanPath {
    std::size_t grid_width = 0, grid_height = 0;
    std::vector<PathPoint> points;
};

/// From a DAS result (batch item 0); without one, the fixed raster path.
ScanPath scan_path(const scan::DasResult* das, std::size_t grid_height, std::size_t grid_width);

/// Forward pass of a single image (1 x 3 x H x W) and the path of the last
/// block in `stage` (0-based).
ScanPath model_scan_path(const model::Model& m, const Tensor& image, std::size_t stage);

/// The image with the patch grid, one "pt" marker per point, N-1 "seg"
/// segments joining consecutive points, a star at the start and a circle at
/// the end. Out-of-grid points are drawn gray.
void write_svg(std::ostream& os, const Image& image, const ScanPath& path);

}  // namespace das::viz
