#include "gsacp/ledger.hpp"

#include "gsacp/hash.hpp"
#include "gsacp/io.hpp"

#include <json.hpp>

#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fcntl.h>
#include <fstream>
#include <set>
#include <sys/file.h>
#include <unistd.h>

namespace gsacp {
namespace {

using nlohmann::json;

class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_APPEND, 0644);
    if (fd_ < 0) throw io::IoError("cannot open ledger " + path.string() + ": " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw io::IoError("cannot lock ledger " + path.string());
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;
  int fd() const { return fd_; }

 private:
  int fd_ = -1;
};

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : ", ") + p;
  return out;
}

void check_link(const std::vector<RunRecord>& existing, const RunRecord& r) {
  for (const auto& e : existing) {
    if (e.run_id == r.run_id) throw LedgerRejection("run id '" + r.run_id + "' already recorded");
  }
  if (r.baseline()) return;
  for (const auto& e : existing) {
    if (e.run_id == r.parent) return;
  }
  throw LedgerRejection("parent run '" + r.parent + "' is not in the ledger");
}

}  // namespace

std::string record_to_json(const RunRecord& r) {
  json j;
  j["run_id"] = r.run_id;
  j["kind"] = r.kind;
  j["config_hash"] = r.config_hash;
  j["config"] = json::parse(r.config);
  j["parent"] = r.parent.empty() ? json(nullptr) : json(r.parent);
  if (r.change) {
    j["change"] = {{"path", r.change->path}, {"old", r.change->old_value}, {"new", r.change->new_value}};
  } else {
    j["change"] = nullptr;
  }
  j["seed"] = r.seed;
  json m = json::object();
  for (const auto& [k, v] : r.metrics) m[k] = std::isfinite(v) ? json(v) : json(nullptr);
  j["metrics"] = m;
  j["artifacts"] = r.artifacts;
  j["provenance"] = r.provenance;
  j["timestamp"] = r.timestamp;
  return j.dump();
}

RunRecord record_from_json(const std::string& line) {
  RunRecord r;
  try {
    const json j = json::parse(line);
    r.run_id = j.at("run_id").get<std::string>();
    r.kind = j.at("kind").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.config = j.at("config").dump();
    if (!j.at("parent").is_null()) r.parent = j.at("parent").get<std::string>();
    if (!j.at("change").is_null()) {
      const auto& c = j.at("change");
      r.change = ConfigChange{c.at("path").get<std::string>(), c.at("old").get<std::string>(), c.at("new").get<std::string>()};
    }
    r.seed = j.at("seed").get<std::uint64_t>();
    for (auto it = j.at("metrics").begin(); it != j.at("metrics").end(); ++it) {
      r.metrics[it.key()] = it->is_null() ? std::numeric_limits<double>::quiet_NaN() : it->get<double>();
    }
    r.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    r.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
    r.timestamp = j.at("timestamp").get<std::string>();
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed ledger record: ") + e.what());
  }
  return r;
}

std::vector<RunRecord> read_ledger(const std::filesystem::path& path) {
  std::vector<RunRecord> out;
  if (!std::filesystem::exists(path)) return out;
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(line));
    } catch (const InvalidInput& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

ConfigChange one_change(const Config& parent, const Config& child, const std::optional<std::string>& declared) {
  const auto diff = diff_configs(parent, child);
  if (diff.size() != 1) {
    std::vector<std::string> paths;
    for (const auto& d : diff) paths.push_back(d.path);
    throw LedgerRejection("one-change rule: " + std::to_string(diff.size()) + " fields differ from the parent" +
                          (paths.empty() ? std::string() : ": " + join(paths)));
  }
  if (declared && *declared != diff.front().path) {
    throw LedgerRejection("declared change '" + *declared + "' but the config changes '" + diff.front().path + "'");
  }
  return diff.front();
}

void append_record(const std::filesystem::path& path, const RunRecord& r) {
  FileLock lock(path);
  check_link(read_ledger(path), r);
  const std::string line = record_to_json(r) + "\n";
  if (::write(lock.fd(), line.data(), line.size()) != static_cast<ssize_t>(line.size())) {
    throw io::IoError("short write to ledger " + path.string());
  }
  ::fsync(lock.fd());
}

std::string next_run_id(const std::filesystem::path& ledger, const std::string& prefix) {
  const auto records = read_ledger(ledger);
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.run_id);
  for (std::size_t k = records.size();; ++k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%04zu", prefix.c_str(), k);
    if (!ids.count(buf)) return buf;
  }
}

VerifyReport verify_ledger(const std::filesystem::path& ledger, const std::filesystem::path& root) {
  VerifyReport rep;
  std::vector<RunRecord> records;
  try {
    records = read_ledger(ledger);
  } catch (const Error& e) {
    rep.ok = false;
    rep.problems.push_back(e.what());
    return rep;
  }
  rep.records = records.size();
  std::map<std::string, const RunRecord*> seen;
  for (const auto& r : records) {
    auto fail = [&](const std::string& what) {
      rep.ok = false;
      rep.problems.push_back(r.run_id + ": " + what);
    };
    if (seen.count(r.run_id)) fail("duplicate run id");
    Config cfg;
    bool parsed = true;
    try {
      cfg = config_from_json(r.config);
    } catch (const Error& e) {
      parsed = false;
      fail(std::string("stored config rejected: ") + e.what());
    }
    if (parsed && config_hash(cfg) != r.config_hash) fail("config hash does not match the stored config");
    if (!r.baseline()) {
      auto it = seen.find(r.parent);
      if (it == seen.end()) {
        fail("parent '" + r.parent + "' is not recorded before this run");
      } else if (parsed && r.kind == "train") {
        try {
          const Config parent = config_from_json(it->second->config);
          const ConfigChange c = one_change(parent, cfg, r.change ? std::optional<std::string>(r.change->path) : std::nullopt);
          if (!r.change || r.change->old_value != c.old_value || r.change->new_value != c.new_value) {
            fail("recorded change does not match the config diff");
          }
        } catch (const Error& e) {
          fail(e.what());
        }
      }
    } else if (r.change) {
      fail("baseline run declares a change");
    }
    for (const auto& [rel, hash] : r.artifacts) {
      const auto p = root / rel;
      if (!std::filesystem::exists(p)) {
        fail("missing artifact " + rel);
      } else if (sha256_file(p) != hash) {
        fail("artifact hash mismatch for " + rel);
      }
    }
    seen[r.run_id] = &r;
  }
  return rep;
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace gsacp
