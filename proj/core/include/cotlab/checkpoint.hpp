#pragma once

#include <string>
#include <utility>

#include "cotlab/cot_flow.hpp"
#include "cotlab/picnn.hpp"

namespace cotlab {

// Versioned JSON weight files. Every tensor is stored as hexadecimal float
// strings, so a save/load cycle is exact to the bit. Readers check the model
// kind first and refuse a mismatched file instead of mis-reading it.

void save_checkpoint(const StrictPotentialParams& p, const std::string& path);
void save_checkpoint(const StrictPotentialParams& pot_x, const FicnnParams& pot_y,
                     const std::string& path);
void save_checkpoint(const PhiParams& p, const std::string& path);

// model kind stored in the file: "pcp", "pcp-joint", or "cot-flow"
std::string checkpoint_kind(const std::string& path);

StrictPotentialParams load_pcp_checkpoint(const std::string& path);
std::pair<StrictPotentialParams, FicnnParams> load_joint_checkpoint(const std::string& path);
PhiParams load_flow_checkpoint(const std::string& path);

}  // namespace cotlab
