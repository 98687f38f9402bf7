#pragma once

#include <filesystem>

#include "blastlime/imgcore/image.hpp"

namespace blastlime::img {

/// Decodes a PNG or JPEG (detected from the file signature), replicates
/// grayscale to three channels, scales 8-bit values by 1/255 and resizes to
/// `target` with bilinear interpolation.
///
/// Throws IoError when the file cannot be read and FormatError when it is
/// neither PNG nor JPEG or fails to decode.
Image load_image(const std::filesystem::path& path, Size target);

/// Decodes without resizing.
Image load_image(const std::filesystem::path& path);

/// Single-channel binary mask: 1 where any channel of the source is nonzero.
Image load_mask(const std::filesystem::path& path);

/// Writes 8-bit PNG; values are clamped to [0, 1] and rounded to nearest.
/// One channel is written as gray, three as RGB.
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace blastlime::img
