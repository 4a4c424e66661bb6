#pragma once

#include <map>
#include <string>

#include "mpn/data.hpp"
#include "mpn/model.hpp"
#include "mpn/train.hpp"

namespace mpn {

// Union of all tunables, loadable from a key=value file (# comments) and
// overridable by flags. Precedence: flag > file > default.
struct RunConfig {
  DatasetSpec dataset;
  ModelConfig model;
  TrainConfig train;

  // Set one key. Throws ValueError on unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  // Apply a config file, then re-sync derived fields.
  void load_file(const std::string& path);
  // Propagate dataset dims into the model config and validate everything.
  void finalize();
  // Effective configuration, one key=value per line, stable order.
  std::string echo() const;

  static RunConfig defaults();
};

}  // namespace mpn
