#include "btseg/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace btseg {

void SamplerConfig::validate() const {
  if (!(error_floor > 0.0 && error_floor < 1.0)) {
    throw std::invalid_argument("error_floor must be in (0, 1)");
  }
  if (max_rejections < 1) throw std::invalid_argument("max_rejections must be >= 1");
  if (!(refresh_fraction > 0.0 && refresh_fraction <= 1.0)) {
    throw std::invalid_argument("refresh_fraction must be in (0, 1]");
  }
}

SamplerState init_sampler(std::span<const TrainingImage> images, const SamplerConfig& config) {
  config.validate();
  if (images.empty()) throw std::invalid_argument("init_sampler: empty training set");

  SamplerState state;
  state.config = config;
  state.error_maps.reserve(images.size());
  state.class_index.reserve(images.size());
  state.classes_present.reserve(images.size());

  for (const TrainingImage& img : images) {
    if (!(img.volume.dims() == img.labels.dims())) {
      throw std::invalid_argument("init_sampler: image/label dims mismatch");
    }
    state.error_maps.emplace_back(img.labels.dims(), 1.0f);

    std::vector<std::vector<std::uint32_t>> index(img.labels.num_classes());
    const auto labels = img.labels.data();
    for (std::uint32_t i = 0; i < labels.size(); ++i) {
      index[labels[i]].push_back(i);
    }
    std::vector<int> present;
    for (int k = 0; k < int(index.size()); ++k) {
      if (!index[k].empty()) present.push_back(k);
    }
    if (present.empty()) throw std::invalid_argument("init_sampler: image has no voxels");
    state.class_index.push_back(std::move(index));
    state.classes_present.push_back(std::move(present));
  }
  return state;
}

std::vector<BatchSample> sample_batch(SamplerState& state, std::span<const TrainingImage> images,
                                      int batch_size, const PatchRequest& request,
                                      const AugmentConfig* aug, RngStream& rng) {
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (images.size() != state.class_index.size()) {
    throw std::invalid_argument("sample_batch: training set does not match the sampler state");
  }

  const bool boosted = state.config.mode == SamplerMode::Boosted;
  const float floor = float(state.config.error_floor);

  std::vector<BatchSample> batch;
  batch.reserve(std::size_t(batch_size));

  for (int slot = 0; slot < batch_size; ++slot) {
    int rejections = 0;
    for (;;) {
      const std::size_t j = std::size_t(rng.uniform_int(images.size()));
      const std::vector<int>& present = state.classes_present[j];
      const int k = present[std::size_t(rng.uniform_int(present.size()))];
      const auto& centers = state.class_index[j][k];
      const std::uint32_t voxel = centers[std::size_t(rng.uniform_int(centers.size()))];
      const double u = rng.uniform();
      ++state.diagnostics.candidates;

      bool take = true;
      if (boosted) {
        take = std::max(state.error_maps[j][voxel], floor) > u;
        if (take) {
          ++state.diagnostics.accepted;
        } else if (++rejections >= state.config.max_rejections) {
          take = true;
          ++state.diagnostics.forced;
        }
      } else {
        ++state.diagnostics.accepted;
      }
      if (!take) continue;

      const Dims& d = images[j].labels.dims();
      const Vec3i center{int(voxel % std::uint32_t(d.nx)),
                         int((voxel / std::uint32_t(d.nx)) % std::uint32_t(d.ny)),
                         int(voxel / (std::uint32_t(d.nx) * std::uint32_t(d.ny)))};
      AugmentedSample s =
          aug ? augment(images[j].volume, images[j].labels, center, request, *aug, rng)
              : extract_sample(images[j].volume, images[j].labels, center, request);
      batch.push_back(BatchSample{std::move(s.native), std::move(s.low), std::move(s.targets)});
      break;
    }
  }
  return batch;
}

void update_error_maps(SamplerState& state, const VolumePredictor& predict,
                       std::span<const TrainingImage> images) {
  if (images.size() != state.class_index.size()) {
    throw std::invalid_argument("update_error_maps: training set does not match the state");
  }
  const std::int64_t n = std::int64_t(images.size());
  const std::int64_t count = std::int64_t(std::ceil(state.config.refresh_fraction * double(n)));

  for (std::int64_t r = 0; r < count; ++r) {
    const std::size_t i = std::size_t((state.refresh_cursor + r) % n);
    const std::vector<Volume> probs = predict(images[i].volume);
    if (int(probs.size()) != images[i].labels.num_classes()) {
      throw std::invalid_argument("predictor returned the wrong class count");
    }
    const auto labels = images[i].labels.data();
    std::vector<float> err(labels.size());
    for (std::size_t v = 0; v < labels.size(); ++v) {
      err[v] = std::clamp(1.0f - probs[labels[v]][std::int64_t(v)], 0.0f, 1.0f);
    }
    state.error_maps[i].set_data(std::move(err));
  }
  state.refresh_cursor = (state.refresh_cursor + count) % n;
}

}  // namespace btseg
