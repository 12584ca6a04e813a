#pragma once

#include "gsacp/config.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gsacp {

/// A run the ledger refuses: the one-change rule, a duplicate id or an unknown parent.
class LedgerRejection : public Error {
 public:
  using Error::Error;
};

struct RunRecord {
  std::string run_id;
  std::string kind = "train";  // train, soup
  std::string config_hash;
  std::string config;  // fully resolved config JSON
  std::string parent;  // empty for a baseline
  std::optional<ConfigChange> change;
  std::uint64_t seed = 0;
  std::map<std::string, double> metrics;
  std::map<std::string, std::string> artifacts;  // workspace-relative path -> sha256
  std::map<std::string, std::string> provenance;
  std::string timestamp;

  bool baseline() const { return parent.empty(); }
};

std::string record_to_json(const RunRecord& r);
RunRecord record_from_json(const std::string& line);

std::vector<RunRecord> read_ledger(const std::filesystem::path& path);

/// The declared change of a child against its parent, or LedgerRejection listing every changed
/// path when the count is not exactly one. A declared path must match the actual one.
ConfigChange one_change(const Config& parent, const Config& child, const std::optional<std::string>& declared = {});

/// Appends one record under an exclusive advisory lock, after checking id uniqueness and the
/// parent link against the current contents.
void append_record(const std::filesystem::path& path, const RunRecord& r);

std::string next_run_id(const std::filesystem::path& ledger, const std::string& prefix = "r");

struct VerifyReport {
  bool ok = true;
  std::vector<std::string> problems;
  std::size_t records = 0;
};

/// Re-checks every record: unique ids, parents recorded earlier, config hash, the one-change rule
/// for train records, and artifact hashes relative to the workspace root.
VerifyReport verify_ledger(const std::filesystem::path& ledger, const std::filesystem::path& root);

std::string utc_timestamp();

}  // namespace gsacp
