#pragma once

#include <filesystem>
#include <vector>

#include "d2gv/image.hpp"

namespace d2gv {

/// 8-bit sRGB PNG (gray, RGB or with alpha, which is dropped) -> linear floats.
ImageD load_png(const std::filesystem::path& path);

/// Linear floats -> clamped 8-bit sRGB RGB PNG.
void save_png(const std::filesystem::path& path, const ImageD& image);

/// 8-bit Y4M, C420 variants or C444. Limited-range BT.601 to sRGB, then
/// linearized. 4:2:0 chroma is replicated over its 2x2 block.
std::vector<ImageD> load_y4m(const std::filesystem::path& path);

/// All *.png in a directory in lexicographic filename order.
std::vector<ImageD> load_png_dir(const std::filesystem::path& dir);

/// Directory of PNGs or a .y4m file; every frame must share dimensions.
std::vector<ImageD> load_frames(const std::filesystem::path& input);

/// BT.601 limited-range YCbCr (8-bit codes) -> nonlinear sRGB in [0, 1].
void ycbcr_to_srgb(int y, int cb, int cr, double rgb[3]);

}  // namespace d2gv
