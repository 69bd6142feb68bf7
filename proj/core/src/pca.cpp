#include "semaug/pca.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <set>

#include "json_io.hpp"
#include "semaug/archive.hpp"
#include "semaug/errors.hpp"

namespace semaug {

PcaModel pca_fit(const std::vector<std::vector<Real>>& data) {
  if (data.size() < 3) throw InvalidInput("pca_fit: need at least 3 points");
  const std::size_t D = data.front().size();
  if (D < 2) throw InvalidInput("pca_fit: need dimension >= 2");
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(D));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = data[static_cast<std::size_t>(i)];
    if (row.size() != D) throw InvalidInput("pca_fit: ragged input");
    for (std::size_t d = 0; d < D; ++d) X(i, static_cast<Eigen::Index>(d)) = row[d];
  }
  const Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<Real>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw DegenerateSpectrum("pca_fit: eigen-decomposition failed");
  // Eigenvalues come back ascending.
  const auto last = static_cast<Eigen::Index>(D) - 1;
  const Real l1 = eig.eigenvalues()(last), l2 = eig.eigenvalues()(last - 1);
  if (!(l1 > 0) || !(l2 > 1e-12 * l1)) throw DegenerateSpectrum("pca_fit: data has rank < 2");

  PcaModel m;
  m.mean.assign(mean.data(), mean.data() + D);
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(last - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    m.components[static_cast<std::size_t>(k)].assign(v.data(), v.data() + D);
    m.explained_variance[static_cast<std::size_t>(k)] = eig.eigenvalues()(last - k);
  }
  return m;
}

std::vector<std::array<Real, 2>> pca_project(const std::vector<std::vector<Real>>& data, const PcaModel& pca) {
  std::vector<std::array<Real, 2>> out;
  out.reserve(data.size());
  for (const auto& e : data) {
    if (e.size() != pca.mean.size()) throw InvalidInput("pca_project: dimension mismatch");
    std::array<Real, 2> p{0, 0};
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t d = 0; d < e.size(); ++d) p[k] += (e[d] - pca.mean[d]) * pca.components[k][d];
    out.push_back(p);
  }
  return out;
}

std::string projection_csv(const std::vector<ProjectedPoint>& points) {
  std::string out = "domain,pc1,pc2\n";
  char buf[64];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), ",%.10g,%.10g\n", p.pc1, p.pc2);
    out += p.domain + buf;
  }
  return out;
}

namespace {

std::vector<ProjectedPoint> project_labeled(const std::vector<LabeledEmbedding>& xs, const PcaModel& pca) {
  std::vector<std::vector<Real>> values;
  for (const auto& x : xs) values.push_back(x.values);
  const auto pts = pca_project(values, pca);
  std::vector<ProjectedPoint> out;
  for (std::size_t i = 0; i < xs.size(); ++i) out.push_back({xs[i].domain, pts[i][0], pts[i][1]});
  return out;
}

}  // namespace

ProjectionOutput export_projection(const std::vector<LabeledEmbedding>& real,
                                   const std::vector<LabeledEmbedding>& augmented,
                                   const std::filesystem::path& out_dir) {
  std::set<std::string> domains;
  for (const auto& r : real) domains.insert(r.domain);
  if (domains.size() < 2) throw InvalidInput("export_projection: real embeddings must cover >= 2 domains");
  std::vector<std::vector<Real>> fit;
  for (const auto& r : real) fit.push_back(r.values);

  ProjectionOutput out;
  out.pca = pca_fit(fit);
  out.real = project_labeled(real, out.pca);
  out.augmented = project_labeled(augmented, out.pca);

  write_file(out_dir / "real.csv", projection_csv(out.real));
  write_file(out_dir / "augmented.csv", projection_csv(out.augmented));
  nlohmann::json j;
  j["mean"] = out.pca.mean;
  j["components"] = {out.pca.components[0], out.pca.components[1]};
  j["explained_variance"] = out.pca.explained_variance;
  j["real_rows"] = out.real.size();
  j["augmented_rows"] = out.augmented.size();
  detail::write_json(out_dir / "projection.json", j);
  return out;
}

}  // namespace semaug
