// Copyright 2026 The pfrpn Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "pfrpn/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pfrpn {

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_pnm(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) {
    throw ImageIoError("write_pnm: unsupported channel count " + std::to_string(image.channels));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError("write_pnm: cannot open " + path.string());
  out << (image.channels == 3 ? "P6" : "P5") << "\n"
      << image.width << " " << image.height << "\n255\n";
  std::string bytes(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    bytes[i] = static_cast<char>(to_byte(image.pixels[i]));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageIoError("write_pnm: write failed for " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("read_pnm: cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || (magic != "P6" && magic != "P5") || maxval != 255 || w == 0 || h == 0) {
    throw ImageIoError("read_pnm: malformed header in " + path.string());
  }
  in.get();  // single whitespace after maxval
  const std::size_t channels = magic == "P6" ? 3 : 1;
  Image image(w, h, channels);
  std::string bytes(image.pixels.size(), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw ImageIoError("read_pnm: truncated pixel data in " + path.string());
  }
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    image.pixels[i] = static_cast<double>(static_cast<unsigned char>(bytes[i])) / 255.0;
  }
  return image;
}

void write_pgm_normalized(const std::vector<double>& values, std::size_t width,
                          std::size_t height, const std::filesystem::path& path) {
  if (values.size() != width * height) {
    throw ImageIoError("write_pgm_normalized: size mismatch");
  }
  Image image(width, height, 1);
  if (!values.empty()) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double span = *hi - *lo;
    for (std::size_t i = 0; i < values.size(); ++i) {
      image.pixels[i] = span > 0.0 ? (values[i] - *lo) / span : 0.0;
    }
  }
  write_pnm(image, path);
}

}  // namespace pfrpn
