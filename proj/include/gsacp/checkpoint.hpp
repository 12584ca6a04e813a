#pragma once

#include "gsacp/detector.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace gsacp {

/// Parameters of one detector snapshot with their segment layout and provenance.
struct Checkpoint {
  Architecture arch;
  std::vector<Segment> segments;
  Eigen::VectorXd parameters;
  std::string run_id;
  int epoch = 0;
  std::string dataset_hash;  // manifest hash of the data it was trained on

  /// sha256 over the layout and the raw parameter bytes. Provenance fields are not included.
  std::string content_hash() const;
  ToyDetector detector() const;
};

Checkpoint make_checkpoint(const ToyDetector& det, std::string run_id, int epoch, std::string dataset_hash);

/// Versioned text record; values are stored as hexfloats so a reload is bit-exact.
std::string checkpoint_to_text(const Checkpoint& ck);
/// Throws InvalidInput on a malformed record or a content hash that does not match.
Checkpoint checkpoint_from_text(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gsacp
