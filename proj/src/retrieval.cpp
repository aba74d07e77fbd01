// SPDX-License-Identifier: Apache-2.0
#include "scdnet/retrieval.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace scdnet {

Eigen::RowVectorXd pooled_unit_feature(const Mat& features) {
  if (features.rows() < 1) throw std::invalid_argument("pooled_unit_feature: no objects");
  Eigen::RowVectorXd v = features.colwise().mean();
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

SentencePool SentencePool::build(const std::vector<Source>& samples) {
  if (samples.empty()) throw std::invalid_argument("SentencePool::build: empty training set");
  SentencePool pool;
  std::vector<Eigen::RowVectorXd> rows;
  for (const auto& s : samples) {
    const Eigen::RowVectorXd f = pooled_unit_feature(*s.features);
    for (const auto& caption : *s.captions) {
      pool.entries_.push_back({s.sample_id, caption});
      rows.push_back(f);
    }
  }
  if (pool.entries_.empty()) throw std::invalid_argument("SentencePool::build: no captions");
  pool.features_.resize(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) pool.features_.row(static_cast<Eigen::Index>(i)) = rows[i];
  return pool;
}

std::size_t SentencePool::retrieve_index(const Mat& query, int exclude_sample_id) const {
  if (entries_.empty()) throw std::logic_error("SentencePool: empty pool");
  if (query.cols() != features_.cols()) {
    throw ShapeError("SentencePool::retrieve: query " + shape_str(query) + " vs pool width " +
                     std::to_string(features_.cols()));
  }
  const Eigen::RowVectorXd q = pooled_unit_feature(query);
  const Eigen::VectorXd scores = features_ * q.transpose();
  std::size_t best = entries_.size();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].sample_id == exclude_sample_id) continue;
    if (best == entries_.size() || scores(static_cast<Eigen::Index>(i)) > scores(static_cast<Eigen::Index>(best))) best = i;
  }
  if (best == entries_.size()) throw std::runtime_error("SentencePool::retrieve: every entry excluded");
  return best;
}

const Sentence& SentencePool::retrieve(const Mat& query, int exclude_sample_id) const {
  return entries_[retrieve_index(query, exclude_sample_id)].sentence;
}

void SentencePool::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  char buf[64];
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    f << entries_[i].sample_id << '\t';
    for (Eigen::Index j = 0; j < features_.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%a", features_(static_cast<Eigen::Index>(i), j));
      f << (j ? " " : "") << buf;
    }
    f << '\t';
    for (std::size_t k = 0; k < entries_[i].sentence.size(); ++k) f << (k ? " " : "") << entries_[i].sentence[k];
    f << '\n';
  }
}

SentencePool SentencePool::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  SentencePool pool;
  std::vector<std::vector<double>> rows;
  for (std::string line; std::getline(f, line);) {
    std::istringstream ls(line);
    std::string id, feats, toks;
    if (!std::getline(ls, id, '\t') || !std::getline(ls, feats, '\t')) {
      throw std::runtime_error(path.string() + ": malformed pool line");
    }
    std::getline(ls, toks);
    std::istringstream fs(feats), ts(toks);
    std::vector<double> row;
    for (std::string h; fs >> h;) row.push_back(std::strtod(h.c_str(), nullptr));
    Sentence s;
    for (int w; ts >> w;) s.push_back(w);
    pool.entries_.push_back({std::stoi(id), std::move(s)});
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path.string() + ": empty pool");
  pool.features_.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw std::runtime_error(path.string() + ": ragged feature rows");
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      pool.features_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return pool;
}

}  // namespace scdnet
