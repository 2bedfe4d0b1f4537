#pragma once

#include <string>

#include "masq/dataset.hpp"
#include "masq/rng.hpp"

namespace masq::testing {

inline dataset::FloatArray random_array(std::uint32_t rows, std::uint32_t cols, Rng& rng) {
  dataset::FloatArray a(rows, cols);
  for (auto& v : a.data) v = static_cast<float>(rng.normal());
  return a;
}

// Structurally valid bundle with random contents in every optional array.
inline dataset::ClipBundle random_bundle(const std::string& id, dataset::Source source, Rng& rng,
                                         int frames = 7, int horizon = 4) {
  dataset::ClipBundle b;
  b.clip_id = id;
  b.annotation = "move the pot " + id;
  b.source = source;
  b.task = static_cast<std::int32_t>(rng.below(3));
  b.scene_style = static_cast<std::int32_t>(rng.below(5));
  b.embodiment = static_cast<std::int32_t>(rng.below(2));
  b.seed = rng.next_u64();
  const auto t = static_cast<std::uint32_t>(frames);
  b.features = random_array(t, 16, rng);
  b.embedding = random_array(1, 8, rng);
  b.cameras = random_array(t, dataset::kCameraCols, rng);
  b.presence = random_array(t, 2, rng);
  b.hands = random_array(t, 2 * dataset::kHandCols, rng);
  b.plane = random_array(1, 4, rng);
  b.labels = random_array(t, 2 * (1 + 2 * (horizon + 1)), rng);
  b.keep = random_array(t, 1, rng);
  b.actions = random_array(t, 48, rng);
  b.truth_ee = random_array(t, dataset::kTruthCols, rng);
  return b;
}

}  // namespace masq::testing
