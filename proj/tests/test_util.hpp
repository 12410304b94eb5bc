#pragma once

#include <filesystem>
#include <string>

#include "ecs/dataset.hpp"
#include "ecs/genome.hpp"
#include "ecs/network.hpp"

namespace ecs::fixtures {

// 8x8x1 -> conv3x3x1x4 -> bn -> relu -> pool2 -> conv3x3x4x6 -> bn -> relu
// -> conv1x1x6xK: three conv layers, 10 maskable bits.
inline NetworkSpec tiny_spec(int classes = 2) {
  NetworkSpec s;
  s.input = {8, 8, 1};
  s.class_count = classes;
  s.layers = {LayerSpec::conv(3, 3, 1, 4), LayerSpec::batchnorm(),
              LayerSpec::relu(),           LayerSpec::maxpool(2, 2),
              LayerSpec::conv(3, 3, 4, 6), LayerSpec::batchnorm(),
              LayerSpec::relu(),           LayerSpec::conv(1, 1, 6, classes),
              LayerSpec::softmax_loss()};
  return s;
}

// Two conv layers, no batchnorm.
inline NetworkSpec two_conv_spec() {
  NetworkSpec s;
  s.input = {8, 8, 1};
  s.class_count = 3;
  s.layers = {LayerSpec::conv(3, 3, 1, 4), LayerSpec::relu(),
              LayerSpec::maxpool(2, 2), LayerSpec::conv(3, 3, 4, 3),
              LayerSpec::softmax_loss()};
  return s;
}

inline LayoutPtr lenet_layout() {
  return std::make_shared<const MaskLayout>(MaskLayout::from_spec(lenet_spec()));
}

// The compressed LeNet counts 9/17/84 (last layer fixed at 10).
inline Individual reference_mask() {
  const int counts[] = {9, 17, 84};
  return Individual::keep_first(lenet_layout(), counts);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ecs_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ecs::fixtures
