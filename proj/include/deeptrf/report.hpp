// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace deeptrf {

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

// Numeric CSV with a header line. Throws InputError on ragged or non-numeric rows.
CsvTable parse_numeric_csv(const std::string& text);

// Line plot of every loss column of a loss.csv against its step column
// (grad_norm is left out). Standalone SVG document.
std::string loss_curve_svg(const CsvTable& table, const std::string& title = "training loss");

}  // namespace deeptrf
