#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "semaug/tensor.hpp"

namespace semaug {

struct PcaModel {
  std::vector<Real> mean;
  std::array<std::vector<Real>, 2> components;  // orthonormal rows
  std::array<Real, 2> explained_variance{};     // sample variance (n - 1)
};

/// Top-2 principal directions of the centred data, by descending variance.
/// Each component's largest-magnitude entry is made positive. Throws
/// InvalidInput for fewer than 3 points or D < 2 and DegenerateSpectrum when
/// the data has rank < 2.
PcaModel pca_fit(const std::vector<std::vector<Real>>& data);

std::vector<std::array<Real, 2>> pca_project(const std::vector<std::vector<Real>>& data, const PcaModel& pca);

struct LabeledEmbedding {
  std::string domain;
  std::vector<Real> values;
};

struct ProjectedPoint {
  std::string domain;
  Real pc1 = 0;
  Real pc2 = 0;
};

struct ProjectionOutput {
  PcaModel pca;
  std::vector<ProjectedPoint> real;
  std::vector<ProjectedPoint> augmented;
};

/// Fits on `real` only, projects both sets with the same model and writes
/// `<out_dir>/real.csv`, `<out_dir>/augmented.csv` (header domain,pc1,pc2) and
/// `<out_dir>/projection.json`.
ProjectionOutput export_projection(const std::vector<LabeledEmbedding>& real,
                                   const std::vector<LabeledEmbedding>& augmented,
                                   const std::filesystem::path& out_dir);

/// CSV text for a list of projected points.
std::string projection_csv(const std::vector<ProjectedPoint>& points);

}  // namespace semaug
