#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fuzzfuse {

/// Row-major 8-bit grayscale raster.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, std::vector<std::uint8_t> pixels);
  GrayImage(int width, int height, std::uint8_t fill);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::uint8_t at(int row, int col) const { return pixels_[index(row, col)]; }
  std::uint8_t& at(int row, int col) { return pixels_[index(row, col)]; }
  const std::vector<std::uint8_t>& pixels() const noexcept { return pixels_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool at(int row, int col) const {
    return bits_[static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
                 static_cast<std::size_t>(col)] != 0;
  }
  void set(int row, int col, bool value) {
    bits_[static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
          static_cast<std::size_t>(col)] = value ? 1 : 0;
  }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  double foreground_fraction() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Inclusive-exclusive pixel rectangle.
struct BoundingBox {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct OtsuResult {
  int threshold = 0;
  /// Set when the image has a single intensity; threshold is that intensity.
  bool degenerate = false;
};

std::array<std::uint64_t, 256> histogram(const GrayImage& img);

/// Level t maximizing the between-class variance of {<= t} vs {> t}. Ties go
/// to the lowest level.
OtsuResult otsu_threshold(const GrayImage& img);
OtsuResult otsu_threshold(const std::array<std::uint64_t, 256>& hist);

enum class Connectivity { kFour = 4, kEight = 8 };

/// Largest connected component of pixels strictly above `threshold`. Among
/// equally large components the one containing the smallest (row, col) pixel
/// wins. The mask is empty when no pixel exceeds the threshold.
BinaryMask largest_component_mask(const GrayImage& img, int threshold,
                                  Connectivity connectivity = Connectivity::kFour);

/// Tight bounding box of the mask's set bits; throws on an empty mask.
BoundingBox mask_bounds(const BinaryMask& mask);
GrayImage crop(const GrayImage& img, const BoundingBox& box);
GrayImage crop_to_mask(const GrayImage& img, const BinaryMask& mask);

bool is_informative(const BinaryMask& mask, double min_fraction = 0.05);

struct PreprocessOptions {
  double min_fraction = 0.05;
  Connectivity connectivity = Connectivity::kFour;
};

struct PreprocessResult {
  OtsuResult otsu;
  double foreground_fraction = 0.0;
  bool informative = false;
  std::optional<BoundingBox> box;
  std::optional<GrayImage> cropped;  // set for informative slices
};

/// Otsu threshold, largest component, informativeness test, crop.
PreprocessResult preprocess_slice(const GrayImage& img, const PreprocessOptions& options = {});

/// Binary PGM ("P5", maxval 255). Comments in the header are skipped.
GrayImage read_pgm(const std::filesystem::path& path);
GrayImage decode_pgm(const std::string& bytes);
std::string encode_pgm(const GrayImage& img);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

}  // namespace fuzzfuse
