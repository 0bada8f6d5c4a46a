#include "d2gv/frame_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>

namespace d2gv {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  (void)png;
  throw std::runtime_error(msg);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

ImageD load_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  try {
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_channels(png, info) != 3) throw std::runtime_error("unexpected channel layout");
    std::vector<png_byte> data(static_cast<std::size_t>(w) * h * 3);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = data.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    ImageD img(w, h);
    for (std::size_t i = 0; i < data.size(); ++i) img.pixels[static_cast<Eigen::Index>(i)] = srgb_to_linear(data[i] / 255.0);
    return img;
  } catch (const std::exception& e) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void save_png(const std::filesystem::path& path, const ImageD& image) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  try {
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(image.width) * 3);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          row[static_cast<std::size_t>(3 * x + c)] = static_cast<png_byte>(encode_srgb8(image.at(x, y, c)));
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  } catch (const std::exception& e) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void ycbcr_to_srgb(int y, int cb, int cr, double rgb[3]) {
  const double yy = (y - 16) * (255.0 / 219.0);
  const double u = (cb - 128) * (255.0 / 224.0);
  const double v = (cr - 128) * (255.0 / 224.0);
  constexpr double kr = 0.299, kb = 0.114, kg = 1 - kr - kb;
  const double r = yy + 2 * (1 - kr) * v;
  const double b = yy + 2 * (1 - kb) * u;
  const double g = (yy - kr * r - kb * b) / kg;
  rgb[0] = std::clamp(r / 255.0, 0.0, 1.0);
  rgb[1] = std::clamp(g / 255.0, 0.0, 1.0);
  rgb[2] = std::clamp(b / 255.0, 0.0, 1.0);
}

std::vector<ImageD> load_y4m(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string token;
  hs >> token;
  if (token != "YUV4MPEG2") throw std::runtime_error(path.string() + ": not a YUV4MPEG2 stream");
  int w = 0, h = 0;
  std::string chroma = "420";
  while (hs >> token) {
    switch (token[0]) {
      case 'W': w = std::stoi(token.substr(1)); break;
      case 'H': h = std::stoi(token.substr(1)); break;
      case 'C': chroma = token.substr(1); break;
      default: break;
    }
  }
  if (w <= 0 || h <= 0) throw std::runtime_error(path.string() + ": missing frame size");
  const bool is444 = chroma == "444";
  if (!is444 && chroma.rfind("420", 0) != 0) {
    throw std::runtime_error(path.string() + ": unsupported chroma format C" + chroma + " (need C420 or C444)");
  }
  const int cw = is444 ? w : (w + 1) / 2;
  const int ch = is444 ? h : (h + 1) / 2;
  std::vector<unsigned char> yp(static_cast<std::size_t>(w) * h), up(static_cast<std::size_t>(cw) * ch),
      vp(up.size());
  std::vector<ImageD> frames;
  std::string line;
  while (std::getline(in, line)) {
    const int index = static_cast<int>(frames.size());
    if (line.rfind("FRAME", 0) != 0) {
      throw std::runtime_error(path.string() + ": frame " + std::to_string(index) + " has no FRAME marker");
    }
    auto read_plane = [&](std::vector<unsigned char>& p) {
      in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(p.size()));
      if (static_cast<std::size_t>(in.gcount()) != p.size()) {
        throw std::runtime_error(path.string() + ": frame " + std::to_string(index) + " is truncated");
      }
    };
    read_plane(yp);
    read_plane(up);
    read_plane(vp);
    ImageD img(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t ci = is444 ? static_cast<std::size_t>(y) * cw + x
                                     : static_cast<std::size_t>(y / 2) * cw + x / 2;
        double rgb[3];
        ycbcr_to_srgb(yp[static_cast<std::size_t>(y) * w + x], up[ci], vp[ci], rgb);
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = srgb_to_linear(rgb[c]);
      }
    }
    frames.push_back(std::move(img));
  }
  if (frames.empty()) throw std::runtime_error(path.string() + ": no frames");
  return frames;
}

std::vector<ImageD> load_png_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  if (files.empty()) throw std::runtime_error(dir.string() + ": no PNG frames");
  std::vector<ImageD> frames;
  for (const auto& f : files) frames.push_back(load_png(f));
  return frames;
}

std::vector<ImageD> load_frames(const std::filesystem::path& input) {
  std::vector<ImageD> frames =
      std::filesystem::is_directory(input) ? load_png_dir(input) : load_y4m(input);
  for (std::size_t k = 1; k < frames.size(); ++k) {
    if (!frames[k].same_shape(frames[0])) {
      throw std::runtime_error(input.string() + ": frame " + std::to_string(k) + " is " +
                               std::to_string(frames[k].width) + "x" + std::to_string(frames[k].height) +
                               ", expected " + std::to_string(frames[0].width) + "x" +
                               std::to_string(frames[0].height));
    }
  }
  return frames;
}

}  // namespace d2gv
