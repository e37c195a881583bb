#pragma once

#include <string>
#include <vector>

#include "extruflow/system_id.hpp"

namespace extruflow::testing {

struct CorpusFile {
  std::string name;
  std::string text;
  bool has_corners = true;
};

/// Slicer-like programs: absolute and relative E, retractions, travel, M-codes and
/// layer comments, plus the two calibration patterns.
std::vector<CorpusFile> generated_corpus(const ModelFile& model);

/// Table 2 expansion-side model with the Fig. 14 corner parameters.
ModelFile reference_model();

}  // namespace extruflow::testing
