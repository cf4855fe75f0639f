#pragma once

// Small synthetic training sets for generator and metric tests.

#include "langgrasp/gen/generator.hpp"
#include "support/scenes.hpp"

namespace testing_support {

inline langgrasp::gen::ModelConfig small_model() {
  langgrasp::gen::ModelConfig c;
  c.encoder_points = 32;
  c.loss_points = 48;
  c.hand_points = 35;
  c.point_hidden = 16;
  c.object_width = 24;
  c.hand_width = 16;
  c.verb_width = 6;
  c.part_width = 4;
  c.time_width = 8;
  c.hidden = 48;
  c.layers = 2;
  c.diffusion_steps = 20;
  return c;
}

// Two balls; record i gets a distinct (verb, assignment) on object i % 2 and a
// pose whose palm faces the ball.
inline langgrasp::gen::TrainingSet ball_set(const HandModel& h, std::size_t records, std::uint64_t seed,
                                            const langgrasp::gen::ModelConfig& cfg) {
  using namespace langgrasp;
  gen::TrainingSet set;
  Rng rng(seed);
  set.objects.push_back(gen::object_inputs(ball(0.035), 11, 256, cfg));
  set.objects.push_back(gen::object_inputs(ball(0.045), 12, 256, cfg));
  const auto& verbs = dataset::verbs();
  const std::vector<std::string> parts{"", "body", "handle"};
  for (std::size_t i = 0; i < records; ++i) {
    gen::Condition c;
    c.object = i % 2;
    c.verb = verbs[i % verbs.size()];
    c.assignment.assign(h.finger_count(), "body");
    c.assignment[(i / verbs.size()) % h.finger_count()] = parts[(i / 2) % parts.size()];
    set.conditions.push_back(c);
    const double r = i % 2 ? 0.045 : 0.035;
    set.poses.push_back(pose_facing_origin(h, rng, r + 0.03).to_vector());
    set.record_ids.push_back(static_cast<std::uint32_t>(i));
  }
  return set;
}

}  // namespace testing_support
