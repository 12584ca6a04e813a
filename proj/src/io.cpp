#include "gsacp/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace gsacp::io {
namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

struct PnmHeader {
  int channels = 1;
  Eigen::Index width = 0;
  Eigen::Index height = 0;
  int maxval = 255;
};

PnmHeader read_header(std::istream& in, const std::filesystem::path& path) {
  PnmHeader h;
  const std::string magic = next_token(in);
  if (magic == "P5") {
    h.channels = 1;
  } else if (magic == "P6") {
    h.channels = 3;
  } else {
    throw IoError(path.string() + ": unsupported PNM magic '" + magic + "'");
  }
  try {
    h.width = std::stol(next_token(in));
    h.height = std::stol(next_token(in));
    h.maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PNM header");
  }
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
    throw IoError(path.string() + ": invalid PNM header values");
  }
  return h;
}

std::vector<unsigned> read_samples(std::istream& in, const PnmHeader& h, const std::filesystem::path& path) {
  const std::size_t count = static_cast<std::size_t>(h.width * h.height * h.channels);
  const int bytes = h.maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(count * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw IoError(path.string() + ": truncated PNM data");
  std::vector<unsigned> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    out[k] = bytes == 2 ? (static_cast<unsigned>(raw[2 * k]) << 8) | raw[2 * k + 1] : raw[k];
  }
  return out;
}

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const PnmHeader h = read_header(in, path);
  const auto samples = read_samples(in, h, path);
  Image img;
  img.channels.assign(h.channels, ScalarField(h.height, h.width));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < h.height; ++r) {
    for (Eigen::Index c = 0; c < h.width; ++c) {
      for (int ch = 0; ch < h.channels; ++ch) {
        img.channels[ch](r, c) = static_cast<double>(samples[k++]) / h.maxval;
      }
    }
  }
  return img;
}

void write_pnm(const std::filesystem::path& path, const Image& img, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw InvalidParameter("bit depth must be 8 or 16");
  img.validate();
  const int maxval = bit_depth == 16 ? 65535 : 255;
  auto out = open_out(path, true);
  out << (img.channels.size() == 1 ? "P5" : "P6") << "\n" << img.width() << " " << img.height() << "\n"
      << maxval << "\n";
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(img.height() * img.width()) * img.channels.size() * 2);
  for (Eigen::Index r = 0; r < img.height(); ++r) {
    for (Eigen::Index c = 0; c < img.width(); ++c) {
      for (const auto& ch : img.channels) {
        const auto v = static_cast<unsigned>(std::lround(ch(r, c) * maxval));
        if (bit_depth == 16) raw.push_back(static_cast<unsigned char>(v >> 8));
        raw.push_back(static_cast<unsigned char>(v & 0xFF));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

BinaryMask read_mask(const std::filesystem::path& path) {
  const Image img = read_pnm(path);
  return (img.channels.front() > 0.5).cast<std::uint8_t>();
}

void write_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  auto out = open_out(path, true);
  out << "P5\n" << mask.cols() << " " << mask.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.cols(); ++c) out.put(mask(r, c) ? static_cast<char>(255) : 0);
  }
}

void write_csv_grid(const std::filesystem::path& path, const ScalarField& field) {
  auto out = open_out(path, false);
  char buf[32];
  for (Eigen::Index r = 0; r < field.rows(); ++r) {
    for (Eigen::Index c = 0; c < field.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", field(r, c));
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

ScalarField read_csv_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size()) throw IoError(path.string() + ": ragged CSV grid");
    rows.push_back(std::move(row));
  }
  ScalarField out(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) out(r, c) = rows[r][c];
  }
  return out;
}

PointSet read_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  PointSet out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    Pixel p;
    if (!(ss >> p.row >> p.col)) throw IoError(path.string() + ": malformed point line '" + line + "'");
    out.push_back(p);
  }
  return out;
}

void write_points(const std::filesystem::path& path, const PointSet& points) {
  auto out = open_out(path, false);
  out << "# row col\n";
  for (const auto& p : points) out << p.row << ' ' << p.col << '\n';
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path, true);
  out << text;
}

}  // namespace gsacp::io
