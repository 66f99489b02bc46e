#include "fuzzfuse/imgprep.hpp"

#include <algorithm>
#include <cctype>
#include <limits>

#include "fuzzfuse/error.hpp"
#include "fuzzfuse/textio.hpp"

namespace fuzzfuse {

GrayImage::GrayImage(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width <= 0 || height <= 0) {
    fail(ErrorCode::kInvalidArgument, "image dimensions must be positive");
  }
  if (pixels_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    fail(ErrorCode::kInvalidArgument, "pixel count does not match image dimensions");
  }
}

GrayImage::GrayImage(int width, int height, std::uint8_t fill)
    : GrayImage(width, height,
                std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) *
                                              static_cast<std::size_t>(std::max(height, 0)),
                                          fill)) {}

BinaryMask::BinaryMask(int width, int height, bool fill)
    : width_(width), height_(height),
      bits_(static_cast<std::size_t>(std::max(width, 0)) *
                static_cast<std::size_t>(std::max(height, 0)),
            fill ? 1 : 0) {
  if (width <= 0 || height <= 0) {
    fail(ErrorCode::kInvalidArgument, "mask dimensions must be positive");
  }
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double BinaryMask::foreground_fraction() const {
  if (bits_.empty()) return 0.0;
  return static_cast<double>(count()) / static_cast<double>(bits_.size());
}

std::array<std::uint64_t, 256> histogram(const GrayImage& img) {
  std::array<std::uint64_t, 256> hist{};
  for (std::uint8_t p : img.pixels()) ++hist[p];
  return hist;
}

OtsuResult otsu_threshold(const std::array<std::uint64_t, 256>& hist) {
  double total = 0.0;
  double total_sum = 0.0;
  int occupied = 0;
  int only_level = 0;
  for (int level = 0; level < 256; ++level) {
    const double count = static_cast<double>(hist[static_cast<std::size_t>(level)]);
    total += count;
    total_sum += count * level;
    if (count > 0.0) {
      ++occupied;
      only_level = level;
    }
  }
  if (total == 0.0) fail(ErrorCode::kInvalidArgument, "otsu_threshold: empty image");
  if (occupied == 1) return {only_level, true};

  // Between-class variance times total^2: (S0*n1 - S1*n0)^2 / (n0*n1).
  double n0 = 0.0;
  double s0 = 0.0;
  double best = -1.0;
  int best_level = 0;
  for (int level = 0; level < 255; ++level) {
    const double count = static_cast<double>(hist[static_cast<std::size_t>(level)]);
    n0 += count;
    s0 += count * level;
    const double n1 = total - n0;
    if (n0 == 0.0 || n1 == 0.0) continue;
    const double s1 = total_sum - s0;
    const double diff = s0 * n1 - s1 * n0;
    const double score = diff * diff / (n0 * n1);
    if (score > best) {
      best = score;
      best_level = level;
    }
  }
  return {best_level, false};
}

OtsuResult otsu_threshold(const GrayImage& img) {
  if (img.pixels().empty()) fail(ErrorCode::kInvalidArgument, "otsu_threshold: empty image");
  return otsu_threshold(histogram(img));
}

BinaryMask largest_component_mask(const GrayImage& img, int threshold,
                                  Connectivity connectivity) {
  const int w = img.width();
  const int h = img.height();
  if (w <= 0 || h <= 0) fail(ErrorCode::kInvalidArgument, "largest_component_mask: empty image");
  std::vector<int> label(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), -1);
  auto at = [w](int r, int c) { return static_cast<std::size_t>(r) * static_cast<std::size_t>(w) + static_cast<std::size_t>(c); };

  std::vector<std::pair<int, int>> offsets{{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  if (connectivity == Connectivity::kEight) {
    offsets.insert(offsets.end(), {{-1, -1}, {-1, 1}, {1, -1}, {1, 1}});
  }

  int best_label = -1;
  std::size_t best_size = 0;
  int next_label = 0;
  std::vector<std::pair<int, int>> stack;
  // Raster order: the first component found with a given size holds the
  // smallest (row, col) pixel among equals.
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (img.at(r, c) <= threshold || label[at(r, c)] >= 0) continue;
      const int current = next_label++;
      std::size_t size = 0;
      label[at(r, c)] = current;
      stack.assign(1, {r, c});
      while (!stack.empty()) {
        const auto [pr, pc] = stack.back();
        stack.pop_back();
        ++size;
        for (const auto& [dr, dc] : offsets) {
          const int nr = pr + dr;
          const int nc = pc + dc;
          if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
          if (img.at(nr, nc) <= threshold || label[at(nr, nc)] >= 0) continue;
          label[at(nr, nc)] = current;
          stack.emplace_back(nr, nc);
        }
      }
      if (size > best_size) {
        best_size = size;
        best_label = current;
      }
    }
  }

  BinaryMask mask(w, h);
  if (best_label < 0) return mask;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (label[at(r, c)] == best_label) mask.set(r, c, true);
    }
  }
  return mask;
}

BoundingBox mask_bounds(const BinaryMask& mask) {
  int top = std::numeric_limits<int>::max();
  int left = std::numeric_limits<int>::max();
  int bottom = -1;
  int right = -1;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask.at(r, c)) continue;
      top = std::min(top, r);
      bottom = std::max(bottom, r);
      left = std::min(left, c);
      right = std::max(right, c);
    }
  }
  if (bottom < 0) fail(ErrorCode::kDegenerateInput, "mask is empty");
  return {top, left, bottom - top + 1, right - left + 1};
}

GrayImage crop(const GrayImage& img, const BoundingBox& box) {
  if (box.row < 0 || box.col < 0 || box.height <= 0 || box.width <= 0 ||
      box.row + box.height > img.height() || box.col + box.width > img.width()) {
    fail(ErrorCode::kInvalidArgument, "crop box outside image");
  }
  std::vector<std::uint8_t> pixels;
  pixels.reserve(static_cast<std::size_t>(box.width) * static_cast<std::size_t>(box.height));
  for (int r = box.row; r < box.row + box.height; ++r) {
    for (int c = box.col; c < box.col + box.width; ++c) pixels.push_back(img.at(r, c));
  }
  return GrayImage(box.width, box.height, std::move(pixels));
}

GrayImage crop_to_mask(const GrayImage& img, const BinaryMask& mask) {
  if (mask.width() != img.width() || mask.height() != img.height()) {
    fail(ErrorCode::kInvalidArgument, "mask dimensions do not match image");
  }
  return crop(img, mask_bounds(mask));
}

bool is_informative(const BinaryMask& mask, double min_fraction) {
  return mask.foreground_fraction() >= min_fraction;
}

PreprocessResult preprocess_slice(const GrayImage& img, const PreprocessOptions& options) {
  if (!(options.min_fraction > 0.0 && options.min_fraction < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "min_fraction must lie in (0,1)");
  }
  PreprocessResult result;
  result.otsu = otsu_threshold(img);
  const BinaryMask mask = largest_component_mask(img, result.otsu.threshold, options.connectivity);
  result.foreground_fraction = mask.foreground_fraction();
  result.informative = !mask.empty() && is_informative(mask, options.min_fraction);
  if (result.informative) {
    result.box = mask_bounds(mask);
    result.cropped = crop(img, *result.box);
  }
  return result;
}

namespace {

class PgmReader {
 public:
  explicit PgmReader(const std::string& bytes) : bytes_(bytes) {}

  std::string token() {
    skip_space_and_comments();
    std::string out;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      out += bytes_[pos_++];
    }
    if (out.empty()) fail(ErrorCode::kParse, "PGM header truncated");
    return out;
  }

  int number() {
    const std::string t = token();
    return static_cast<int>(textio::parse_int(t, "PGM header"));
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail(ErrorCode::kParse, "PGM header must end with whitespace");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

GrayImage decode_pgm(const std::string& bytes) {
  PgmReader reader(bytes);
  if (reader.token() != "P5") fail(ErrorCode::kParse, "not a binary PGM (P5)");
  const int width = reader.number();
  const int height = reader.number();
  const int maxval = reader.number();
  if (width <= 0 || height <= 0) fail(ErrorCode::kParse, "PGM dimensions must be positive");
  if (maxval != 255) fail(ErrorCode::kParse, "only maxval 255 PGM files are supported");
  const std::size_t start = reader.raster_start();
  const std::size_t expected = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() < start + expected) fail(ErrorCode::kParse, "PGM raster truncated");
  std::vector<std::uint8_t> pixels(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(start + expected));
  return GrayImage(width, height, std::move(pixels));
}

std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) +
                    "\n255\n";
  out.append(img.pixels().begin(), img.pixels().end());
  return out;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  try {
    return decode_pgm(textio::read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kIo) throw;
    fail(e.code(), path.string() + ": " + e.what());
  }
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  textio::write_file(path, encode_pgm(img));
}

}  // namespace fuzzfuse
