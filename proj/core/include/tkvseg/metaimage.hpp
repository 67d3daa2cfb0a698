#pragma once

#include <filesystem>
#include <variant>

#include "tkvseg/volume.hpp"

namespace tkvseg {

// MetaImage subset: NDims = 3, ElementType MET_FLOAT or MET_UCHAR, uncompressed
// little-endian body. A ".mha" path embeds the body after the header
// (ElementDataFile = LOCAL); any other extension writes a text header plus a sibling
// ".raw" file.
using AnyVolume = std::variant<ImageVolume, LabelVolume>;

void write_volume(const ImageVolume& volume, const std::filesystem::path& path);
void write_volume(const LabelVolume& volume, const std::filesystem::path& path);

AnyVolume read_volume(const std::filesystem::path& path);

// Typed readers. read_image also accepts MET_UCHAR bodies and widens them.
ImageVolume read_image(const std::filesystem::path& path);
LabelVolume read_labels(const std::filesystem::path& path);

}  // namespace tkvseg
