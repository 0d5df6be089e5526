#pragma once

#include <string>
#include <utility>
#include <vector>

#include "emma/tensor.hpp"

namespace emma {

// Trained model state: the canonical run-config text it was produced under
// plus every named parameter tensor ("enc.*", "adapt.*", "readout.*").
struct Checkpoint {
    std::string config_text;
    std::vector<std::pair<std::string, TensorF>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies values from `src` into the equally named, equally shaped tensors in
// `dst`; throws ContractError on missing names or shape mismatches.
void assign_named_tensors(std::vector<std::pair<std::string, TensorF>> dst,
                          const std::vector<std::pair<std::string, TensorF>>& src,
                          const std::string& which);

}  // namespace emma
