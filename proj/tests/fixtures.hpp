#pragma once

#include <json.hpp>

#include "xdistill/config.hpp"

namespace xdistill::fixtures {

// Three classes on a 16 m x 16 m grid with a handful of objects per scene.
inline ExperimentConfig small_config() {
  nlohmann::json j = {
      {"experiment", "small"},
      {"seeds", {3, 4}},
      {"train_scenes", 4},
      {"val_scenes", 2},
      {"grid", {{"x_range", {-8.0, 8.0}}, {"z_range", {4.0, 20.0}}}},
      {"optimizer", {{"epochs", 2}, {"batch", 2}}},
      {"output_dir", "unused"},
  };
  ExperimentConfig c = parse_config(j);
  c.classes[0].min_count = 1;
  c.classes[0].max_count = 2;
  c.classes[1].min_count = 1;
  c.classes[1].max_count = 2;
  c.classes[2].min_count = 0;
  c.classes[2].max_count = 1;
  for (std::size_t k = 0; k < c.classes.size(); ++k) {
    c.scene.min_count[k] = c.classes[k].min_count;
    c.scene.max_count[k] = c.classes[k].max_count;
  }
  return c;
}

}  // namespace xdistill::fixtures
