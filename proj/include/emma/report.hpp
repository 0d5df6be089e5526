#pragma once

#include <string>
#include <vector>

#include "emma/analysis.hpp"

namespace emma {

// Standalone SVG 1.1 documents, 800x500, built with deterministic number
// formatting so repeated runs produce byte-identical files.
std::string render_attribution_figure(const std::vector<AttributionRow>& rows);
std::string render_mi_figure(const MiComparison& mi);
std::string render_distance_figure(const std::vector<PairDistance>& rows);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace emma
