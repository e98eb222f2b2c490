// Copyright 2026 The pass-reid Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pass/tensor.hpp"

namespace pass {

/// Query and gallery embeddings with identity and camera labels.
struct RetrievalIndex {
  Tensor query;    // |Q| x D
  Tensor gallery;  // |G| x D
  std::vector<int> query_ids, query_cams;
  std::vector<int> gallery_ids, gallery_cams;
  std::vector<std::string> gallery_names;  // optional, for reports

  void validate() const {
    if (query.rank() != 2 || gallery.rank() != 2) throw ShapeError("retrieval: embeddings must be rank 2");
    if (query.cols() != gallery.cols()) throw shape_error("pairwise_dist", query.shape(), gallery.shape());
    if (query_ids.size() != query.rows() || query_cams.size() != query.rows())
      throw std::invalid_argument("retrieval: query label count does not match embeddings");
    if (gallery_ids.size() != gallery.rows() || gallery_cams.size() != gallery.rows())
      throw std::invalid_argument("retrieval: gallery label count does not match embeddings");
  }
};

/// Euclidean distances, |Q| x |G|.
inline Tensor pairwise_dist(const Tensor& q, const Tensor& g) {
  if (q.rank() != 2 || g.rank() != 2 || q.cols() != g.cols()) throw shape_error("pairwise_dist", q.shape(), g.shape());
  const std::size_t nq = q.rows(), ng = g.rows(), d = q.cols();
  Tensor out(Shape{nq, ng});
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < ng; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double t = q[i * d + k] - g[j * d + k];
        s += t * t;
      }
      out[i * ng + j] = std::sqrt(s);
    }
  return out;
}

struct RetrievalMetrics {
  double mAP = 0.0;
  std::vector<double> cmc;  // cmc[k-1] = Rank-k
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // queries with no valid positive

  double rank(std::size_t k) const {
    if (cmc.empty()) return 0.0;
    return cmc[std::min(k, cmc.size()) - 1];
  }
};

/// Gallery order for one query: valid entries (same id and same camera
/// removed) sorted by distance, ties by gallery index.
inline std::vector<std::size_t> ranked_gallery(const Tensor& dist, const RetrievalIndex& idx, std::size_t q) {
  const std::size_t ng = idx.gallery.rows();
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < ng; ++j)
    if (!(idx.gallery_ids[j] == idx.query_ids[q] && idx.gallery_cams[j] == idx.query_cams[q])) order.push_back(j);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[q * ng + a] < dist[q * ng + b]; });
  return order;
}

inline RetrievalMetrics evaluate_distances(const Tensor& dist, const RetrievalIndex& idx) {
  idx.validate();
  const std::size_t nq = idx.query.rows(), ng = idx.gallery.rows();
  if (dist.rank() != 2 || dist.rows() != nq || dist.cols() != ng)
    throw ShapeError("evaluate: distance matrix " + shape_str(dist.shape()) + " does not match index");
  RetrievalMetrics m;
  m.cmc.assign(std::max<std::size_t>(ng, 1), 0.0);
  double ap_sum = 0;
  for (std::size_t q = 0; q < nq; ++q) {
    const auto order = ranked_gallery(dist, idx, q);
    std::size_t hits = 0, first = 0;
    double ap = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (idx.gallery_ids[order[r]] != idx.query_ids[q]) continue;
      if (hits == 0) first = r;
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    if (hits == 0) {
      ++m.skipped;
      continue;
    }
    ap_sum += ap / static_cast<double>(hits);
    for (std::size_t k = first; k < m.cmc.size(); ++k) m.cmc[k] += 1.0;
    ++m.evaluated;
  }
  if (m.evaluated > 0) {
    m.mAP = ap_sum / static_cast<double>(m.evaluated);
    for (double& c : m.cmc) c /= static_cast<double>(m.evaluated);
  }
  return m;
}

inline RetrievalMetrics evaluate(const RetrievalIndex& idx) {
  idx.validate();
  return evaluate_distances(pairwise_dist(idx.query, idx.gallery), idx);
}

struct RankedEntry {
  std::size_t gallery_index = 0;
  std::string name;
  int identity = 0;
  int camera = 0;
  double distance = 0.0;
  bool match = false;
};

inline std::vector<RankedEntry> ranking_list(const RetrievalIndex& idx, std::size_t query, std::size_t top_k) {
  idx.validate();
  if (query >= idx.query.rows())
    throw std::out_of_range("ranking_list: query " + std::to_string(query) + " out of range");
  const std::size_t d = idx.query.cols();
  Tensor one(Shape{1, d});
  std::copy_n(idx.query.data().begin() + static_cast<std::ptrdiff_t>(query * d), d, one.data().begin());
  RetrievalIndex single = idx;
  single.query = one;
  single.query_ids = {idx.query_ids[query]};
  single.query_cams = {idx.query_cams[query]};
  const Tensor dist = pairwise_dist(one, idx.gallery);
  const auto order = ranked_gallery(dist, single, 0);
  std::vector<RankedEntry> out;
  for (std::size_t r = 0; r < std::min(top_k, order.size()); ++r) {
    const std::size_t j = order[r];
    RankedEntry e;
    e.gallery_index = j;
    e.name = j < idx.gallery_names.size() ? idx.gallery_names[j] : std::to_string(j);
    e.identity = idx.gallery_ids[j];
    e.camera = idx.gallery_cams[j];
    e.distance = dist[j];
    e.match = e.identity == idx.query_ids[query];
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string ranking_text(const std::vector<RankedEntry>& list) {
  std::ostringstream os;
  char buf[128];
  os << "rank\tgallery\tidentity\tcamera\tdistance\tmatch\n";
  for (std::size_t r = 0; r < list.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%zu\t%s\t%d\t%d\t%.6f\t%s\n", r + 1, list[r].name.c_str(), list[r].identity,
                  list[r].camera, list[r].distance, list[r].match ? "yes" : "no");
    os << buf;
  }
  return os.str();
}

inline std::string ranking_html(const std::string& query_name, const std::vector<RankedEntry>& list) {
  std::ostringstream os;
  os << "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>ranking " << query_name
     << "</title><style>td{padding:2px 8px}.ok{background:#cfc}.bad{background:#fcc}</style></head><body>\n"
     << "<h3>query " << query_name << "</h3>\n<table>\n"
     << "<tr><th>rank</th><th>gallery</th><th>identity</th><th>camera</th><th>distance</th></tr>\n";
  char buf[64];
  for (std::size_t r = 0; r < list.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%.6f", list[r].distance);
    os << "<tr class=\"" << (list[r].match ? "ok" : "bad") << "\"><td>" << r + 1 << "</td><td>" << list[r].name
       << "</td><td>" << list[r].identity << "</td><td>" << list[r].camera << "</td><td>" << buf << "</td></tr>\n";
  }
  os << "</table></body></html>\n";
  return os.str();
}

/// Structured metrics text: "key value" lines, %.17g.
inline std::string metrics_text(const RetrievalMetrics& m) {
  std::ostringstream os;
  char buf[64];
  auto put = [&](const std::string& k, double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << k << ' ' << buf << '\n';
  };
  put("mAP", m.mAP);
  for (std::size_t k : {1, 5, 10})
    if (!m.cmc.empty()) put("rank" + std::to_string(k), m.rank(k));
  os << "evaluated " << m.evaluated << '\n' << "skipped " << m.skipped << '\n';
  os << "cmc";
  for (double c : m.cmc) {
    std::snprintf(buf, sizeof buf, " %.17g", c);
    os << buf;
  }
  os << '\n';
  return os.str();
}

}  // namespace pass
