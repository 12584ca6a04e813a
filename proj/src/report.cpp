#include "gsacp/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace gsacp {
namespace {

std::string cell(const RunRecord& r, const char* key, const char* fmt = "%.4f") {
  auto it = r.metrics.find(key);
  if (it == r.metrics.end() || !std::isfinite(it->second)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, fmt, it->second);
  return buf;
}

double metric(const RunRecord& r, const char* key) {
  auto it = r.metrics.find(key);
  return it == r.metrics.end() ? std::nan("") : it->second;
}

std::string row(const std::vector<std::string>& cells, const std::vector<int>& widths) {
  std::string out;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    char buf[96];
    std::snprintf(buf, sizeof buf, k == 0 ? "%-*s" : "  %*s", widths[k], cells[k].c_str());
    out += buf;
  }
  return out + "\n";
}

}  // namespace

std::string variant_label(const RunRecord& r) {
  if (r.kind == "soup") {
    auto it = r.provenance.find("rule");
    return "soup:" + (it == r.provenance.end() ? std::string("?") : it->second);
  }
  if (r.baseline()) return "baseline";
  if (r.change) return r.change->path + "=" + r.change->new_value;
  return r.run_id;
}

std::vector<std::string> failure_switches(const RunRecord& r) {
  std::vector<std::string> out;
  const auto j = nlohmann::json::parse(r.config);
  if (!j.contains("failure")) return out;
  for (auto it = j["failure"].begin(); it != j["failure"].end(); ++it) {
    if (it->is_boolean() && it->get<bool>()) out.push_back(it.key());
  }
  return out;
}

std::string main_table(const std::vector<RunRecord>& records) {
  const std::vector<int> widths{8, 32, 7, 7, 7, 9, 7};
  std::string out = row({"Run", "Variant", "mIoU", "nIoU", "Pd", "Fa(1e-6)", "Area"}, widths);
  for (const auto& r : records) {
    if (!failure_switches(r).empty()) continue;
    out += row({r.run_id, variant_label(r), cell(r, "miou"), cell(r, "niou"), cell(r, "pd"), cell(r, "fa", "%.2f"),
                cell(r, "area_ratio", "%.3f")},
               widths);
  }
  return out;
}

std::string failure_table(const std::vector<RunRecord>& records) {
  const std::vector<int> widths{8, 20, 7, 9, 9, 9, 9, 8};
  std::string body;
  for (const auto& r : records) {
    const auto sw = failure_switches(r);
    if (sw.empty()) continue;
    std::string name;
    for (const auto& s : sw) name += (name.empty() ? "" : "+") + s;
    body += row({r.run_id, name, cell(r, "miou"), cell(r, "fa", "%.2f"), cell(r, "val_prop"), cell(r, "support_radius", "%.2f"),
                 cell(r, "gate_max_fraction", "%.3f"), cell(r, "margin", "%.3f")},
                widths);
  }
  if (body.empty()) return "";
  return row({"Run", "Failure mode", "mIoU", "Fa(1e-6)", "L_prop", "Support", "MaxGate", "Margin"}, widths) + body;
}

std::vector<ParetoPoint> pareto_points(const std::vector<RunRecord>& records) {
  std::vector<ParetoPoint> pts;
  for (const auto& r : records) {
    const double m = metric(r, "miou"), f = metric(r, "fa");
    if (std::isfinite(m) && std::isfinite(f)) pts.push_back({r.run_id, variant_label(r), m, f, false});
  }
  for (auto& p : pts) {
    p.frontier = std::none_of(pts.begin(), pts.end(), [&](const ParetoPoint& q) {
      return q.miou >= p.miou && q.fa <= p.fa && (q.miou > p.miou || q.fa < p.fa);
    });
  }
  return pts;
}

std::string pareto_csv(const std::vector<ParetoPoint>& points) {
  std::ostringstream out;
  out << "run_id,label,miou,fa,frontier\n";
  char buf[64];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.6f,%.4f", p.miou, p.fa);
    out << p.run_id << ',' << p.label << ',' << buf << ',' << (p.frontier ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string pareto_svg(const std::vector<ParetoPoint>& points) {
  const double W = 480, H = 360, L = 60, B = 40, T = 20, R = 20;
  double fa_max = 1.0, m_lo = 1.0, m_hi = 0.0;
  for (const auto& p : points) {
    fa_max = std::max(fa_max, p.fa);
    m_lo = std::min(m_lo, p.miou);
    m_hi = std::max(m_hi, p.miou);
  }
  if (points.empty() || m_hi - m_lo < 1e-3) {
    m_lo = std::max(0.0, m_lo - 0.05);
    m_hi = std::min(1.0, m_hi + 0.05);
    if (m_hi <= m_lo) m_hi = m_lo + 0.1;
  }
  auto x = [&](double fa) { return L + (W - L - R) * fa / (fa_max * 1.05); };
  auto y = [&](double m) { return H - B - (H - B - T) * (m - m_lo) / (m_hi - m_lo); };
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\">\n", W, H);
  out << buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%.0f\" y1=\"%.0f\" x2=\"%.0f\" y2=\"%.0f\" stroke=\"black\"/>\n", L, H - B, W - R, H - B);
  out << buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%.0f\" y1=\"%.0f\" x2=\"%.0f\" y2=\"%.0f\" stroke=\"black\"/>\n", L, T, L, H - B);
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.0f\" y=\"%.0f\" font-size=\"12\">Fa (1e-6), max %.1f</text>\n", W / 2 - 40, H - 8, fa_max);
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"4\" y=\"%.0f\" font-size=\"12\">mIoU %.3f-%.3f</text>\n", T - 6 + 12, m_lo, m_hi);
  out << buf;
  std::vector<ParetoPoint> front;
  for (const auto& p : points) {
    if (p.frontier) front.push_back(p);
  }
  std::sort(front.begin(), front.end(), [](const ParetoPoint& a, const ParetoPoint& b) { return a.fa < b.fa; });
  if (front.size() > 1) {
    out << "<polyline fill=\"none\" stroke=\"steelblue\" points=\"";
    for (const auto& p : front) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", x(p.fa), y(p.miou));
      out << buf;
    }
    out << "\"/>\n";
  }
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"4\" fill=\"%s\"/><text x=\"%.1f\" y=\"%.1f\" font-size=\"10\">%s</text>\n",
                  x(p.fa), y(p.miou), p.frontier ? "steelblue" : "gray", x(p.fa) + 6, y(p.miou) - 4, p.run_id.c_str());
    out << buf;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace gsacp
