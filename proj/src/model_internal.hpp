#pragma once

#include <span>
#include <vector>

#include "nbvlearn/models.hpp"

namespace nbvlearn::detail {

/// Batch-mean squared position (m) plus shortest-arc yaw error, plus squared
/// normalized gain error when with_gain. Writes the gradient of that mean
/// w.r.t. the raw network output to dout.
template <class T>
double pose_reconstruction(const nn::Matrix<T>& out, std::span<const PoseTarget> targets, double extent,
                           bool with_gain, double gain_scale, nn::Matrix<T>* dout, std::vector<double>* per_item);

/// Raw network row (x, y normalized; sin; cos; [gain pre-softplus]) to a
/// clamped local-frame target.
PoseTarget decode_pose(const float* row, double extent, bool with_gain, double gain_scale);

/// Head-input map features: pooled conditioning or CNN encoding.
void map_features(const GainModel& m, const LocalMap& local, std::vector<float>& out);

}  // namespace nbvlearn::detail
