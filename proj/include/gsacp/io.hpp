#pragma once

#include "gsacp/numgrid.hpp"

#include <filesystem>
#include <string>

namespace gsacp::io {

class IoError : public Error {
 public:
  using Error::Error;
};

/// Reads a binary graymap (P5) or pixmap (P6), 8- or 16-bit. Values scaled to [0,1].
Image read_pnm(const std::filesystem::path& path);

/// Writes P5 for one channel, P6 for three. bit_depth is 8 or 16.
void write_pnm(const std::filesystem::path& path, const Image& img, int bit_depth = 16);

BinaryMask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const BinaryMask& mask);

/// Comma-separated grid, one row per line, %.17g.
void write_csv_grid(const std::filesystem::path& path, const ScalarField& field);
ScalarField read_csv_grid(const std::filesystem::path& path);

PointSet read_points(const std::filesystem::path& path);
void write_points(const std::filesystem::path& path, const PointSet& points);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace gsacp::io
