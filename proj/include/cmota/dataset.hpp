#pragma once

#include <string>

#include "cmota/storyworld.hpp"

namespace cmota::world {

// Dataset bundle on disk: <dir>/index.json plus raw image blobs under
// <dir>/images/ (RIMG format). All writes are atomic (temp + rename) and the
// result is byte-identical for a given (config, seed).
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace cmota::world
