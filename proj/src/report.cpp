// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <sstream>

#include "deeptrf/errors.hpp"

namespace deeptrf {

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

std::string printf_string(const char* format, ...) {
  va_list args;
  va_start(args, format);
  va_list copy;
  va_copy(copy, args);
  const int n = std::vsnprintf(nullptr, 0, format, copy);
  va_end(copy);
  std::string out(static_cast<std::size_t>(n), '\0');
  std::vsnprintf(out.data(), out.size() + 1, format, args);
  va_end(args);
  return out;
}

constexpr std::array<const char*, 6> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

CsvTable parse_numeric_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  CsvTable table;
  if (!std::getline(in, line)) throw InputError("csv is empty");
  table.columns = split_commas(line);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != table.columns.size()) {
      throw InputError("csv line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " fields, header has " + std::to_string(table.columns.size()));
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        std::size_t pos = 0;
        row.push_back(std::stod(c, &pos));
        if (pos != c.size()) throw std::invalid_argument(c);
      } catch (const std::logic_error&) {
        throw InputError("csv line " + std::to_string(line_no) + ": '" + c + "' is not a number");
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string loss_curve_svg(const CsvTable& table, const std::string& title) {
  const auto step_it = std::find(table.columns.begin(), table.columns.end(), "step");
  if (step_it == table.columns.end()) throw InputError("loss csv has no step column");
  const std::size_t step_col = static_cast<std::size_t>(step_it - table.columns.begin());
  std::vector<std::size_t> series;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (c != step_col && table.columns[c] != "grad_norm") series.push_back(c);
  }
  if (table.rows.empty() || series.empty()) throw InputError("loss csv has nothing to plot");

  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& r : table.rows) {
    x0 = std::min(x0, r[step_col]);
    x1 = std::max(x1, r[step_col]);
    for (auto c : series) {
      if (!std::isfinite(r[c])) continue;
      y0 = std::min(y0, r[c]);
      y1 = std::max(y1, r[c]);
    }
  }
  if (!std::isfinite(y0)) throw InputError("loss csv has no finite values");
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  y0 = std::min(y0, 0.0);

  constexpr double W = 720, H = 420, L = 70, R = 150, T = 40, B = 50;
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::string svg = printf_string(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" viewBox=\"0 0 %g %g\">\n"
      "<rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n"
      "<text x=\"%g\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">%s</text>\n",
      W, H, W, H, L, escape(title).c_str());
  const auto line = [](double xa, double ya, double xb, double yb, const char* color, double width) {
    return printf_string("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\" stroke-width=\"%g\"/>\n", xa,
                         ya, xb, yb, color, width);
  };
  const auto text = [](double x, double y, int size, const char* anchor, const std::string& body) {
    return printf_string(
        "<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"%d\" text-anchor=\"%s\">%s</text>\n", x, y,
        size, anchor, escape(body).c_str());
  };
  svg += line(L, H - B, W - R, H - B, "black", 1);
  svg += line(L, T, L, H - B, "black", 1);
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4, fy = y0 + (y1 - y0) * i / 4;
    svg += text(px(fx), H - B + 16, 11, "middle", printf_string("%.0f", fx));
    svg += text(L - 6, py(fy) + 4, 11, "end", printf_string("%.3g", fy));
  }
  svg += text((L + W - R) / 2, H - 12, 12, "middle", "step");
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % kColors.size()];
    std::string points;
    for (const auto& r : table.rows) {
      if (std::isfinite(r[series[s]])) points += printf_string("%.2f,%.2f ", px(r[step_col]), py(r[series[s]]));
    }
    svg += printf_string("<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"1.5\" points=\"%s\"/>\n", color,
                         points.c_str());
    const double ly = T + 18.0 * static_cast<double>(s);
    svg += line(W - R + 12, ly, W - R + 32, ly, color, 2);
    svg += text(W - R + 38, ly + 4, 12, "start", table.columns[series[s]]);
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace deeptrf
