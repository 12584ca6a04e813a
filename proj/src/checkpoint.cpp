#include "gsacp/checkpoint.hpp"

#include "gsacp/hash.hpp"
#include "gsacp/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <sstream>

namespace gsacp {
namespace {

constexpr const char* kMagic = "gsacp-checkpoint";
constexpr int kVersion = 1;

std::string hexfloat(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hexfloat(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw InvalidInput("checkpoint: bad number '" + s + "'");
  return v;
}

std::string shape_text(const std::vector<Eigen::Index>& shape) {
  std::string out;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (k) out += 'x';
    out += std::to_string(shape[k]);
  }
  return out;
}

std::vector<Eigen::Index> parse_shape(const std::string& s) {
  std::vector<Eigen::Index> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, 'x')) out.push_back(std::stoll(part));
  return out;
}

void require_token(const std::string& token) {
  if (token.empty() || token.find_first_of(" \t\r\n") != std::string::npos) {
    throw InvalidInput("checkpoint: identifiers must be non-empty and free of whitespace");
  }
}

std::string layout_text(const Checkpoint& ck) {
  std::ostringstream out;
  out << "arch " << ck.arch.input_channels;
  for (int w : ck.arch.widths) out << ' ' << w;
  out << ' ' << hexfloat(ck.arch.head_bias_init) << '\n';
  for (const auto& s : ck.segments) out << "segment " << s.name << ' ' << shape_text(s.shape) << ' ' << s.offset << ' ' << s.size << '\n';
  return out.str();
}

}  // namespace

std::string Checkpoint::content_hash() const {
  std::string bytes = layout_text(*this);
  const std::size_t start = bytes.size();
  bytes.resize(start + sizeof(double) * static_cast<std::size_t>(parameters.size()));
  if (parameters.size()) std::memcpy(bytes.data() + start, parameters.data(), sizeof(double) * parameters.size());
  return sha256_hex(bytes);
}

ToyDetector Checkpoint::detector() const {
  ToyDetector det(arch, 0);
  const auto& expected = det.segments();
  bool same = expected.size() == segments.size();
  for (std::size_t k = 0; same && k < segments.size(); ++k) {
    same = expected[k].name == segments[k].name && expected[k].shape == segments[k].shape &&
           expected[k].offset == segments[k].offset && expected[k].size == segments[k].size;
  }
  if (!same) throw ShapeMismatch("checkpoint segments do not match the recorded architecture");
  det.set_parameters(parameters);
  return det;
}

Checkpoint make_checkpoint(const ToyDetector& det, std::string run_id, int epoch, std::string dataset_hash) {
  Checkpoint ck;
  ck.arch = det.architecture();
  ck.segments = det.segments();
  ck.parameters = det.parameters();
  ck.run_id = std::move(run_id);
  ck.epoch = epoch;
  ck.dataset_hash = std::move(dataset_hash);
  return ck;
}

std::string checkpoint_to_text(const Checkpoint& ck) {
  require_token(ck.run_id);
  std::ostringstream out;
  out << kMagic << ' ' << kVersion << '\n';
  out << "run_id " << ck.run_id << '\n';
  out << "epoch " << ck.epoch << '\n';
  out << "dataset " << (ck.dataset_hash.empty() ? "-" : ck.dataset_hash) << '\n';
  out << layout_text(ck);
  out << "values " << ck.parameters.size() << '\n';
  for (Eigen::Index k = 0; k < ck.parameters.size(); ++k) out << hexfloat(ck.parameters[k]) << '\n';
  out << "hash " << ck.content_hash() << '\n';
  return out.str();
}

Checkpoint checkpoint_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != kMagic) throw InvalidInput("checkpoint: missing header");
  if (version != kVersion) throw InvalidInput("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  auto expect = [&](const char* key) {
    if (!(in >> word) || word != key) throw InvalidInput(std::string("checkpoint: expected '") + key + "'");
  };
  expect("run_id");
  in >> ck.run_id;
  expect("epoch");
  in >> ck.epoch;
  expect("dataset");
  in >> ck.dataset_hash;
  if (ck.dataset_hash == "-") ck.dataset_hash.clear();
  expect("arch");
  std::string line;
  std::getline(in, line);
  {
    std::istringstream arch(line);
    std::vector<std::string> parts;
    while (arch >> word) parts.push_back(word);
    if (parts.size() < 4) throw InvalidInput("checkpoint: malformed arch line");
    ck.arch.input_channels = std::stoi(parts.front());
    ck.arch.widths.clear();
    for (std::size_t k = 1; k + 1 < parts.size(); ++k) ck.arch.widths.push_back(std::stoi(parts[k]));
    ck.arch.head_bias_init = parse_hexfloat(parts.back());
  }
  while (in >> word && word == "segment") {
    Segment s;
    std::string shape;
    if (!(in >> s.name >> shape >> s.offset >> s.size)) throw InvalidInput("checkpoint: malformed segment line");
    s.shape = parse_shape(shape);
    ck.segments.push_back(std::move(s));
  }
  if (word != "values") throw InvalidInput("checkpoint: expected 'values'");
  Eigen::Index n = 0;
  if (!(in >> n) || n < 0) throw InvalidInput("checkpoint: bad value count");
  ck.parameters.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (!(in >> word)) throw InvalidInput("checkpoint: truncated values");
    ck.parameters[k] = parse_hexfloat(word);
  }
  expect("hash");
  std::string recorded;
  in >> recorded;
  if (recorded != ck.content_hash()) throw InvalidInput("checkpoint: content hash mismatch");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) { io::write_text(path, checkpoint_to_text(ck)); }

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_text(io::read_text(path));
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

}  // namespace gsacp
