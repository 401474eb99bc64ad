#include "salbench/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace salbench {

using nlohmann::json;

namespace {

json stats_to_json(const AggregateStats& s) {
  return json{{"all", s.all},
              {"exp", s.expected},
              {"alt", s.alternative},
              {"occ_exp", s.occ_expected},
              {"occ_alt", s.occ_alternative},
              {"n", s.n},
              {"excluded", s.excluded}};
}

AggregateStats stats_from_json(const json& j) {
  AggregateStats s;
  s.all = j.at("all");
  s.expected = j.at("exp");
  s.alternative = j.at("alt");
  s.occ_expected = j.at("occ_exp");
  s.occ_alternative = j.at("occ_alt");
  s.n = j.at("n");
  s.excluded = j.at("excluded");
  return s;
}

std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("failed to format number");
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("table: bad numeric cell '" + s + "'");
  }
  return v;
}

std::string escape_html(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  json j = json::object();
  for (const auto& [dataset, methods] : report) {
    json jm = json::object();
    for (const auto& [method, comps] : methods) {
      json jc = json::object();
      for (const auto& [comp, stats] : comps) jc[comp] = stats_to_json(stats);
      jm[method] = jc;
    }
    j[dataset] = jm;
  }
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  EvalReport report;
  json j = json::parse(text);
  for (auto& [dataset, methods] : j.items()) {
    for (auto& [method, comps] : methods.items()) {
      for (auto& [comp, stats] : comps.items()) {
        report[dataset][method][comp] = stats_from_json(stats);
      }
    }
  }
  return report;
}

RenderedInterpretation render_interpretation(const TestInstance& instance, const SaliencyMap& map,
                                             const std::string& predicted_tag) {
  if (map.scores.size() != instance.tokens.size()) {
    throw std::invalid_argument("render: saliency map length " +
                                std::to_string(map.scores.size()) + " does not match " +
                                std::to_string(instance.tokens.size()) + " tokens");
  }
  RenderedInterpretation r;
  r.tokens = instance.tokens;
  r.predicted_tag = predicted_tag;
  size_t n = instance.tokens.size();
  r.intensities.resize(n, 0.0);
  r.cue_marks.assign(n, false);
  r.attractor_marks.assign(n, false);
  for (size_t i : instance.cues) r.cue_marks[i] = true;
  for (size_t i : instance.attractors) r.attractor_marks[i] = true;
  double max_abs = 0.0;
  for (double s : map.scores) max_abs = std::max(max_abs, std::abs(s));
  if (max_abs > 0.0) {
    for (size_t i = 0; i < n; ++i) r.intensities[i] = 100.0 * map.scores[i] / max_abs;
  }
  return r;
}

std::string render_html(const TestInstance& instance, const SaliencyMap& map, Scenario scenario,
                        bool pass, const std::string& predicted_tag) {
  RenderedInterpretation r = render_interpretation(instance, map, predicted_tag);
  std::ostringstream out;
  out << "<div class=\"interpretation\" data-method=\"" << escape_html(map.method) << "+"
      << escape_html(map.composition) << "\">";
  for (size_t i = 0; i < r.tokens.size(); ++i) {
    double intensity = r.intensities[i];
    double alpha = std::abs(intensity) / 100.0;
    const char* rgb = intensity > 0.0 ? "106,168,79" : "241,194,50";  // green / yellow
    std::string text = escape_html(r.tokens[i]);
    if (r.cue_marks[i]) text = "[" + text + "]";
    if (r.attractor_marks[i]) text = "(" + text + ")";
    out << "<span style=\"background-color: rgba(" << rgb << "," << format_double(alpha)
        << ")\">" << text << "</span> ";
  }
  out << "<b>| " << escape_html(predicted_tag) << "</b> <i>(" << scenario_name(scenario) << ", "
      << (pass ? "pass" : "fail") << ")</i></div>";
  return out.str();
}

std::string html_document(const std::string& title, const std::vector<std::string>& fragments) {
  std::ostringstream out;
  out << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>"
      << escape_html(title) << "</title>\n"
      << "<style>body{font-family:monospace;line-height:1.9;margin:2em}"
         ".interpretation{margin-bottom:0.6em}</style>\n</head>\n<body>\n<h1>"
      << escape_html(title) << "</h1>\n";
  for (const auto& f : fragments) out << f << "\n";
  out << "</body>\n</html>\n";
  return out.str();
}

std::string table_csv(const std::map<std::string, EvalReport>& reports_by_arch) {
  std::set<std::string> datasets;
  for (const auto& [arch, report] : reports_by_arch) {
    for (const auto& [dataset, methods] : report) datasets.insert(dataset);
  }

  std::ostringstream out;
  out << "label";
  for (const auto& d : datasets) out << ',' << d << "_all," << d << "_exp," << d << "_alt";
  out << '\n';

  for (const auto& [arch, report] : reports_by_arch) {
    // occurrence-fraction header row for this architecture
    out << arch;
    for (const auto& d : datasets) {
      auto it = report.find(d);
      if (it == report.end() || it->second.empty() || it->second.begin()->second.empty()) {
        out << ",,,";
        continue;
      }
      const AggregateStats& s = it->second.begin()->second.begin()->second;
      out << ",,(" << format_double(s.occ_expected) << "),(" << format_double(s.occ_alternative)
          << ")";
    }
    out << '\n';

    std::set<std::pair<std::string, std::string>> rows;
    for (const auto& [dataset, methods] : report) {
      for (const auto& [method, comps] : methods) {
        for (const auto& [comp, stats] : comps) rows.insert({method, comp});
      }
    }
    for (const auto& [method, comp] : rows) {
      out << arch << ' ' << method;
      if (comp != "none") out << '+' << comp;
      for (const auto& d : datasets) {
        auto dit = report.find(d);
        const AggregateStats* s = nullptr;
        if (dit != report.end()) {
          auto mit = dit->second.find(method);
          if (mit != dit->second.end()) {
            auto cit = mit->second.find(comp);
            if (cit != mit->second.end()) s = &cit->second;
          }
        }
        if (s) {
          out << ',' << format_double(s->all) << ',' << format_double(s->expected) << ','
              << format_double(s->alternative);
        } else {
          out << ",,,";
        }
      }
      out << '\n';
    }
  }
  return out.str();
}

std::map<std::string, EvalReport> table_csv_parse(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("table: empty CSV");

  std::vector<std::string> headers;
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) headers.push_back(cell);
  std::vector<std::string> datasets;
  for (size_t i = 1; i < headers.size(); i += 3) {
    const std::string& h = headers[i];
    if (h.size() < 4 || h.substr(h.size() - 4) != "_all") {
      throw std::runtime_error("table: unexpected header cell '" + h + "'");
    }
    datasets.push_back(h.substr(0, h.size() - 4));
  }

  std::map<std::string, EvalReport> out;
  std::map<std::string, std::vector<std::pair<double, double>>> occ_by_arch;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    cells.resize(headers.size());
    const std::string& label = cells[0];
    auto space = label.find(' ');
    if (space == std::string::npos) {
      // occurrence row
      auto& occ = occ_by_arch[label];
      for (size_t d = 0; d < datasets.size(); ++d) {
        std::string e = cells[2 + 3 * d];
        std::string a = cells[3 + 3 * d];
        if (e.size() >= 2 && e.front() == '(') e = e.substr(1, e.size() - 2);
        if (a.size() >= 2 && a.front() == '(') a = a.substr(1, a.size() - 2);
        occ.emplace_back(e.empty() ? 0.0 : parse_double(e), a.empty() ? 0.0 : parse_double(a));
      }
      continue;
    }
    std::string arch = label.substr(0, space);
    std::string method = label.substr(space + 1);
    std::string comp = "none";
    auto plus = method.find('+');
    if (plus != std::string::npos) {
      comp = method.substr(plus + 1);
      method = method.substr(0, plus);
    }
    for (size_t d = 0; d < datasets.size(); ++d) {
      const std::string& all = cells[1 + 3 * d];
      if (all.empty() && cells[2 + 3 * d].empty()) continue;
      AggregateStats s;
      s.all = parse_double(all);
      s.expected = parse_double(cells[2 + 3 * d]);
      s.alternative = parse_double(cells[3 + 3 * d]);
      auto oit = occ_by_arch.find(arch);
      if (oit != occ_by_arch.end() && d < oit->second.size()) {
        s.occ_expected = oit->second[d].first;
        s.occ_alternative = oit->second[d].second;
      }
      out[arch][datasets[d]][method][comp] = s;
    }
  }
  return out;
}

}  // namespace salbench
