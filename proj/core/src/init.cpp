#include "mattforge/init.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "mattforge/error.hpp"
#include "mattforge/rng.hpp"

namespace mattforge {
namespace {

void check_base(const MatrixF& base_emb, const VocabOverlap& overlap) {
  for (TokenId b : overlap.base_of) {
    if (b >= base_emb.rows()) throw Error("base embedding does not cover the overlap");
  }
}

MatrixF copy_shared(const MatrixF& base_emb, const VocabOverlap& overlap) {
  MatrixF out = MatrixF::Zero(static_cast<Eigen::Index>(overlap.base_of.size()), base_emb.cols());
  for (std::size_t id = 0; id < overlap.base_of.size(); ++id) {
    if (overlap.base_of[id] >= 0) out.row(static_cast<Eigen::Index>(id)) = base_emb.row(overlap.base_of[id]);
  }
  return out;
}

VectorF column_mean(const MatrixF& m) {
  VectorD sum = VectorD::Zero(m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) sum += m.row(r).cast<double>().transpose();
  if (m.rows() > 0) sum /= static_cast<double>(m.rows());
  return sum.cast<float>();
}

void normalize_rows(AuxEmbeddings& aux) {
  aux.coverage.assign(static_cast<std::size_t>(aux.matrix.rows()), false);
  for (Eigen::Index r = 0; r < aux.matrix.rows(); ++r) {
    const double norm = aux.matrix.row(r).norm();
    if (norm > 1e-12) {
      aux.matrix.row(r) /= norm;
      aux.coverage[static_cast<std::size_t>(r)] = true;
    } else {
      aux.matrix.row(r).setZero();
    }
  }
}

}  // namespace

AuxEmbeddings aux_embeddings(const Corpus& corpus, const Vocab& vocab, const AuxOptions& options) {
  if (corpus.empty()) throw Error("empty corpus");
  if (options.dim < 1) throw Error("aux dim must be positive");
  if (options.window < 1) throw Error("window must be positive");
  const auto v = static_cast<Eigen::Index>(vocab.size());

  MatrixD counts = MatrixD::Zero(v, v);
  for (const auto& doc : corpus) {
    const auto ids = encode(vocab, doc).ids;
    const std::size_t n = ids.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t hi = std::min(n, i + static_cast<std::size_t>(options.window) + 1);
      for (std::size_t j = i + 1; j < hi; ++j) {
        counts(ids[i], ids[j]) += 1.0;
        counts(ids[j], ids[i]) += 1.0;
      }
    }
  }

  const VectorD row_sum = counts.rowwise().sum();
  const double total = row_sum.sum();
  MatrixD ppmi = MatrixD::Zero(v, v);
  if (total > 0.0) {
    for (Eigen::Index a = 0; a < v; ++a) {
      for (Eigen::Index b = 0; b < v; ++b) {
        const double c = counts(a, b);
        if (c <= 0.0) continue;
        ppmi(a, b) = std::max(0.0, std::log(c * total / (row_sum(a) * row_sum(b))));
      }
    }
  }

  // Symmetric matrix: singular vectors are eigenvectors, singular values are
  // absolute eigenvalues.
  Eigen::SelfAdjointEigenSolver<MatrixD> solver(ppmi);
  if (solver.info() != Eigen::Success) throw Error("eigendecomposition failed");
  const VectorD& lambda = solver.eigenvalues();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(v));
  for (Eigen::Index i = 0; i < v; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return std::abs(lambda(a)) > std::abs(lambda(b)); });
  const double peak = v > 0 ? std::abs(lambda(order[0])) : 0.0;
  const double tol = std::max(1e-10, peak * 1e-9);
  int rank = 0;
  while (rank < v && std::abs(lambda(order[static_cast<std::size_t>(rank)])) > tol) ++rank;
  const int used = std::min(rank, options.dim);
  if (used < options.dim) {
    spdlog::warn("aux embeddings: PPMI rank {} below requested dim {}; padding with zeros", rank, options.dim);
  }

  AuxEmbeddings aux;
  aux.dim = options.dim;
  aux.matrix = MatrixD::Zero(v, options.dim);
  for (int c = 0; c < used; ++c) {
    const Eigen::Index e = order[static_cast<std::size_t>(c)];
    aux.matrix.col(c) = solver.eigenvectors().col(e) * std::sqrt(std::abs(lambda(e)));
  }
  normalize_rows(aux);
  return aux;
}

AuxEmbeddings load_aux_embeddings(const std::filesystem::path& path, std::size_t vocab_size) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  AuxEmbeddings aux;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    long long id = 0;
    int dim = 0;
    if (!(fields >> id >> dim) || dim < 1) throw Error(path.string() + ":" + std::to_string(line_no) + ": bad header");
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": id out of range");
    }
    if (aux.dim == 0) {
      aux.dim = dim;
      aux.matrix = MatrixD::Zero(static_cast<Eigen::Index>(vocab_size), dim);
    } else if (dim != aux.dim) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": inconsistent dim");
    }
    for (int c = 0; c < dim; ++c) {
      double value = 0.0;
      if (!(fields >> value) || !std::isfinite(value)) {
        throw Error(path.string() + ":" + std::to_string(line_no) + ": bad value");
      }
      aux.matrix(id, c) = value;
    }
  }
  if (aux.dim == 0) throw Error(path.string() + ": no vectors");
  normalize_rows(aux);
  return aux;
}

std::vector<NeighborWeight> focus_lite_weights(TokenId new_id, const VocabOverlap& overlap, const AuxEmbeddings& aux,
                                               const FocusOptions& options) {
  if (options.k < 1) throw Error("k must be positive");
  if (options.temperature <= 0.0) throw Error("temperature must be positive");
  if (aux.matrix.rows() != static_cast<Eigen::Index>(overlap.base_of.size())) {
    throw Error("aux embeddings do not match the extended vocabulary");
  }
  if (!aux.covers(new_id)) return {};

  struct Candidate {
    double sim;
    TokenId ext_id;
  };
  std::vector<Candidate> candidates;
  const auto target = aux.matrix.row(new_id);
  for (std::size_t id = 0; id < overlap.base_of.size(); ++id) {
    if (overlap.base_of[id] < 0 || !aux.coverage[id]) continue;
    const double sim = target.dot(aux.matrix.row(static_cast<Eigen::Index>(id)));
    if (sim > 0.0) candidates.push_back({sim, static_cast<TokenId>(id)});
  }
  if (candidates.empty()) return {};
  const std::size_t k = std::min(candidates.size(), static_cast<std::size_t>(options.k));
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(),
                    [](const Candidate& a, const Candidate& b) {
                      return a.sim != b.sim ? a.sim > b.sim : a.ext_id < b.ext_id;
                    });
  candidates.resize(k);

  const double top = candidates.front().sim / options.temperature;
  double z = 0.0;
  std::vector<NeighborWeight> out;
  for (const auto& c : candidates) {
    const double w = std::exp(c.sim / options.temperature - top);
    z += w;
    out.push_back({overlap.base_of[static_cast<std::size_t>(c.ext_id)], w});
  }
  for (auto& w : out) w.weight /= z;
  return out;
}

MatrixF focus_lite_init(const MatrixF& base_emb, const VocabOverlap& overlap, const AuxEmbeddings& aux,
                        const FocusOptions& options) {
  check_base(base_emb, overlap);
  MatrixF out = copy_shared(base_emb, overlap);
  const VectorF mean = column_mean(base_emb);
  std::size_t fallback = 0;
  for (TokenId id : overlap.new_ids) {
    const auto weights = focus_lite_weights(id, overlap, aux, options);
    if (weights.empty()) {
      out.row(id) = mean.transpose();
      ++fallback;
      continue;
    }
    VectorD acc = VectorD::Zero(base_emb.cols());
    for (const auto& w : weights) acc += w.weight * base_emb.row(w.base_id).cast<double>().transpose();
    out.row(id) = acc.cast<float>().transpose();
  }
  if (fallback > 0) spdlog::info("focus-lite: {} of {} new tokens fell back to the mean", fallback, overlap.new_ids.size());
  return out;
}

MatrixF mean_init(const MatrixF& base_emb, const VocabOverlap& overlap) {
  check_base(base_emb, overlap);
  MatrixF out = copy_shared(base_emb, overlap);
  const VectorF mean = column_mean(base_emb);
  for (TokenId id : overlap.new_ids) out.row(id) = mean.transpose();
  return out;
}

MatrixF copy_overlap_init(const MatrixF& base_emb, const VocabOverlap& overlap, std::uint64_t seed) {
  check_base(base_emb, overlap);
  MatrixF out = copy_shared(base_emb, overlap);
  Rng rng(seed);
  for (TokenId id : overlap.new_ids) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(id, c) = static_cast<float>(0.02 * rng.normal());
  }
  return out;
}

InitStrategy parse_init_strategy(std::string_view name) {
  if (name == "focus-lite") return InitStrategy::FocusLite;
  if (name == "mean") return InitStrategy::Mean;
  if (name == "random") return InitStrategy::Random;
  throw Error("unknown init strategy: " + std::string(name));
}

std::string_view to_string(InitStrategy strategy) {
  switch (strategy) {
    case InitStrategy::FocusLite: return "focus-lite";
    case InitStrategy::Mean: return "mean";
    case InitStrategy::Random: return "random";
  }
  return "?";
}

}  // namespace mattforge
