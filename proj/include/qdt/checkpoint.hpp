#pragma once

#include <string>
#include <utility>
#include <vector>

#include "qdt/graph.hpp"

namespace qdt::nn {

// Checkpoint files hold a JSON metadata blob plus a flat list of named
// tensors, raw little-endian float64. Round-trips are bit-exact. Layout is
// documented in docs/MANUAL.md.
//
// Models composed of several ParameterStores (e.g. online + target nets)
// pass them all; tensor names must be unique across stores.

void save_checkpoint(const std::vector<const ParameterStore*>& stores,
                     const std::string& path, const std::string& metadata_json);

void save_checkpoint(const ParameterStore& params, const std::string& path,
                     const std::string& metadata_json);

struct LoadedCheckpoint {
  std::string metadata_json;
  std::vector<std::pair<std::string, Tensor>> tensors;

  // Copies values into stores built with the same names and shapes; every
  // checkpoint tensor must land somewhere. Any mismatch is a SchemaError.
  void restore_into(const std::vector<ParameterStore*>& stores) const;
  void restore_into(ParameterStore& params) const;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace qdt::nn
