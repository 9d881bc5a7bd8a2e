#include "bison/report.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

namespace bison {

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw std::runtime_error("cannot format number");
  return std::string(buf.data(), end);
}

namespace {

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::vector<std::string>> read_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line != "\r") rows.push_back(split(line));
  }
  if (rows.empty()) throw std::runtime_error("empty CSV");
  return rows;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw std::runtime_error("bad number '" + s + "'");
  return v;
}

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_double(s);
}

std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

// Method names may contain anything the config allows; quote when needed.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::vector<std::string> split_quoted(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReportError(path, "cannot open for writing");
  out << content;
  out.flush();
  if (!out) throw ReportError(path, "write failed");
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fixed(double v, int digits = 1) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

struct Bucket {
  double lower;
  const char* label;
  const char* color;
};

// AA buckets, highest first.
constexpr std::array<Bucket, 5> kBuckets{{
    {0.8, "AA >= 80%", "#1a9850"},
    {0.6, "60-80%", "#91cf60"},
    {0.4, "40-60%", "#fee08b"},
    {0.2, "20-40%", "#fc8d59"},
    {-1.0, "AA < 20%", "#d73027"},
}};

const Bucket& bucket_for(double aa) {
  for (const auto& b : kBuckets)
    if (aa >= b.lower) return b;
  return kBuckets.back();
}

}  // namespace

std::string accuracy_csv(const AccuracyMatrix& a) {
  const std::size_t t = a.num_tasks();
  std::string out = "after_task";
  for (std::size_t j = 1; j <= t; ++j) out += ",task_" + std::to_string(j);
  out += "\n";
  for (std::size_t k = 1; k <= t; ++k) {
    out += std::to_string(k);
    for (std::size_t j = 1; j <= t; ++j) out += "," + opt_cell(a.at(k, j));
    out += "\n";
  }
  out += "upper_bound";
  const auto& ub = a.upper_bounds();
  for (std::size_t j = 0; j < t; ++j) out += "," + (j < ub.size() ? format_double(ub[j]) : std::string());
  out += "\n";
  return out;
}

AccuracyMatrix parse_accuracy_csv(const std::string& text) {
  const auto rows = read_rows(text);
  const std::size_t t = rows.front().size() - 1;
  if (rows.front().front() != "after_task") throw std::runtime_error("accuracy CSV: bad header");
  AccuracyMatrix a(t);
  std::vector<double> ub;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != t + 1) throw std::runtime_error("accuracy CSV: ragged row " + std::to_string(r));
    if (row.front() == "upper_bound") {
      for (std::size_t j = 1; j <= t; ++j)
        if (auto v = parse_opt(row[j])) ub.push_back(*v);
      continue;
    }
    const auto k = static_cast<std::size_t>(parse_double(row.front()));
    for (std::size_t j = 1; j <= t; ++j)
      if (auto v = parse_opt(row[j])) a.set(k, j, *v);
  }
  if (!ub.empty()) a.set_upper_bounds(std::move(ub));
  return a;
}

std::string confusion_csv(const ConfusionMatrix& m) {
  const auto n = m.num_classes();
  std::string out = "true_class";
  for (std::size_t d = 0; d < n; ++d) out += ",pred_" + std::to_string(d);
  out += "\n";
  for (std::size_t c = 0; c < n; ++c) {
    out += std::to_string(c);
    for (std::size_t d = 0; d < n; ++d)
      out += "," + std::to_string(m.count(static_cast<int>(c), static_cast<int>(d)));
    out += "\n";
  }
  return out;
}

ConfusionMatrix parse_confusion_csv(const std::string& text) {
  const auto rows = read_rows(text);
  if (rows.front().front() != "true_class") throw std::runtime_error("confusion CSV: bad header");
  const std::size_t n = rows.front().size() - 1;
  if (rows.size() != n + 1) throw std::runtime_error("confusion CSV: expected " + std::to_string(n) + " rows");
  ConfusionMatrix m(n);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != n + 1) throw std::runtime_error("confusion CSV: ragged row " + std::to_string(r));
    const int c = std::stoi(row.front());
    for (std::size_t d = 0; d < n; ++d) {
      const auto v = std::stoull(row[d + 1]);
      if (v) m.add(c, static_cast<int>(d), v);
    }
  }
  return m;
}

std::string summary_csv(const std::vector<Aggregate>& aggregates) {
  std::string out = "method,capacity,runs,aa_mean,aa_std,af_mean,af_std,ai_mean,ai_std\n";
  auto pair = [](const std::optional<MeanStd>& m) {
    if (!m) return std::string(",");
    return format_double(m->mean) + "," + opt_cell(m->std);
  };
  for (const auto& a : aggregates) {
    out += csv_field(a.method) + "," + std::to_string(a.capacity) + "," + std::to_string(a.runs) + "," +
           pair(a.aa) + "," + pair(a.af) + "," + pair(a.ai) + "\n";
  }
  return out;
}

std::vector<Aggregate> parse_summary_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (split_quoted(line).size() != 9) throw std::runtime_error("summary CSV: bad header");
  std::vector<Aggregate> out;
  auto pair = [](const std::string& mean, const std::string& sd) -> std::optional<MeanStd> {
    if (mean.empty()) return std::nullopt;
    return MeanStd{parse_double(mean), parse_opt(sd)};
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_quoted(line);
    if (f.size() != 9) throw std::runtime_error("summary CSV: expected 9 fields");
    Aggregate a;
    a.method = f[0];
    a.capacity = std::stoull(f[1]);
    a.runs = std::stoull(f[2]);
    a.aa = pair(f[3], f[4]).value_or(MeanStd{});
    a.af = pair(f[5], f[6]);
    a.ai = pair(f[7], f[8]);
    out.push_back(std::move(a));
  }
  return out;
}

std::string interplay_svg(const std::vector<Aggregate>& aggregates) {
  constexpr double width = 640, height = 480;
  constexpr double left = 70, right = 190, top = 40, bottom = 60;
  const double pw = width - left - right, ph = height - top - bottom;

  // Axes cover [0, max] in percent, rounded up to a multiple of 10.
  double max_ai = 10.0, max_af = 10.0;
  for (const auto& a : aggregates) {
    if (a.ai) max_ai = std::max(max_ai, a.ai->mean * 100.0);
    if (a.af) max_af = std::max(max_af, a.af->mean * 100.0);
  }
  double min_ai = 0.0;
  for (const auto& a : aggregates)
    if (a.ai) min_ai = std::min(min_ai, a.ai->mean * 100.0);
  min_ai = std::floor(min_ai / 10.0) * 10.0;
  max_ai = std::ceil(max_ai / 10.0) * 10.0;
  max_af = std::ceil(max_af / 10.0) * 10.0;

  auto sx = [&](double ai) { return left + (ai - min_ai) / (max_ai - min_ai) * pw; };
  auto sy = [&](double af) { return top + ph - af / max_af * ph; };

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << " " << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "  <text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << "Forgetting vs intransigence</text>\n";

  s << "  <g class=\"grid\" stroke=\"#e0e0e0\">\n";
  for (double v = min_ai; v <= max_ai + 1e-9; v += 10.0)
    s << "    <line x1=\"" << sx(v) << "\" y1=\"" << top << "\" x2=\"" << sx(v) << "\" y2=\"" << top + ph << "\"/>\n";
  for (double v = 0.0; v <= max_af + 1e-9; v += 10.0)
    s << "    <line x1=\"" << left << "\" y1=\"" << sy(v) << "\" x2=\"" << left + pw << "\" y2=\"" << sy(v) << "\"/>\n";
  s << "  </g>\n";

  s << "  <g class=\"axes\" stroke=\"black\">\n"
    << "    <line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\"/>\n"
    << "    <line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\"/>\n"
    << "  </g>\n";
  s << "  <g class=\"ticks\" fill=\"#333\">\n";
  for (double v = min_ai; v <= max_ai + 1e-9; v += 10.0)
    s << "    <text x=\"" << sx(v) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << fixed(v, 0)
      << "</text>\n";
  for (double v = 0.0; v <= max_af + 1e-9; v += 10.0)
    s << "    <text x=\"" << left - 6 << "\" y=\"" << sy(v) + 4 << "\" text-anchor=\"end\">" << fixed(v, 0)
      << "</text>\n";
  s << "  </g>\n"
    << "  <text x=\"" << left + pw / 2 << "\" y=\"" << height - 18
    << "\" text-anchor=\"middle\">Average intransigence (%)</text>\n"
    << "  <text transform=\"translate(20," << top + ph / 2
    << ") rotate(-90)\" text-anchor=\"middle\">Average forgetting (%)</text>\n";

  s << "  <g class=\"markers\">\n";
  for (const auto& a : aggregates) {
    const double ai = a.ai ? a.ai->mean * 100.0 : 0.0;
    const double af = a.af ? a.af->mean * 100.0 : 0.0;
    const auto& b = bucket_for(a.aa.mean);
    const auto label = a.method + " (M=" + std::to_string(a.capacity) + ")";
    s << "    <g>\n"
      << "      <circle class=\"marker\" cx=\"" << fixed(sx(ai), 2) << "\" cy=\"" << fixed(sy(af), 2)
      << "\" r=\"7\" fill=\"" << b.color << "\" stroke=\"black\" data-method=\"" << xml_escape(a.method)
      << "\" data-capacity=\"" << a.capacity << "\">\n"
      << "        <title>" << xml_escape(label) << ": AA " << fixed(a.aa.mean * 100.0) << "%, AF "
      << fixed(af) << "%, AI " << fixed(ai) << "%</title>\n"
      << "      </circle>\n"
      << "      <text x=\"" << fixed(sx(ai) + 10, 2) << "\" y=\"" << fixed(sy(af) - 8, 2) << "\">"
      << xml_escape(label) << "</text>\n"
      << "    </g>\n";
  }
  s << "  </g>\n";

  const double lx = left + pw + 24;
  s << "  <g class=\"legend\">\n"
    << "    <text x=\"" << lx << "\" y=\"" << top + 4 << "\" font-weight=\"bold\">Average accuracy</text>\n";
  for (std::size_t i = 0; i < kBuckets.size(); ++i) {
    const double y = top + 24 + 22.0 * static_cast<double>(i);
    s << "    <rect x=\"" << lx << "\" y=\"" << y - 10 << "\" width=\"14\" height=\"14\" fill=\"" << kBuckets[i].color
      << "\" stroke=\"black\"/>\n"
      << "    <text x=\"" << lx + 22 << "\" y=\"" << y + 2 << "\">" << xml_escape(kBuckets[i].label) << "</text>\n";
  }
  s << "  </g>\n</svg>\n";
  return s.str();
}

std::vector<std::filesystem::path> emit_report(const RunReport& report, const std::filesystem::path& outdir) {
  report.config.validate();
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw ReportError(outdir, "cannot create directory: " + ec.message());
  if (!std::filesystem::is_directory(outdir)) throw ReportError(outdir, "not a directory");

  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& content) {
    const auto path = outdir / name;
    write_file(path, content);
    written.push_back(path);
  };

  put("results.json", report_to_json(report).dump(2) + "\n");
  for (const auto& cell : report.cells) {
    if (!cell.ok()) continue;
    put("accuracy_matrix_" + cell.cell_name() + ".csv", accuracy_csv(cell.accuracy));
    if (!cell.confusion_by_task.empty())
      put("confusion_" + cell.cell_name() + ".csv", confusion_csv(cell.confusion_by_task.back()));
  }
  put("summary.csv", summary_csv(report.aggregates));
  put("interplay.svg", interplay_svg(report.aggregates));
  return written;
}

}  // namespace bison
