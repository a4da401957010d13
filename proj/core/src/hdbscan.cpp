#include "toxtraj/hdbscan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "toxtraj/error.hpp"
#include "toxtraj/kdtree.hpp"
#include "toxtraj/parallel.hpp"

namespace toxtraj::hdbscan {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double distance(const Matrix& pts, std::size_t a, std::size_t b) {
  return std::sqrt(squared_distance(pts.row(a), pts.row(b)));
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  std::size_t unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return a;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

bool use_dense(std::size_t n, const Options& o) {
  switch (o.mst) {
    case MstAlgorithm::prim: return true;
    case MstAlgorithm::boruvka: return false;
    case MstAlgorithm::automatic: break;
  }
  return n < o.dense_threshold;
}

std::vector<Edge> dense_prim(const Matrix& pts, std::span<const double> cores) {
  const std::size_t n = pts.rows;
  std::vector<Edge> edges;
  if (n < 2) return edges;
  edges.reserve(n - 1);
  std::vector<bool> in_tree(n, false);
  std::vector<Edge> best(n, Edge{0, 0, kInf});
  std::vector<bool> has_best(n, false);
  std::size_t u = 0;
  in_tree[0] = true;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t pick = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      const double w = mutual_reachability(distance(pts, u, v), cores[u], cores[v]);
      const Edge cand{static_cast<std::uint32_t>(std::min(u, v)), static_cast<std::uint32_t>(std::max(u, v)), w};
      if (!has_best[v] || edge_less(cand, best[v])) {
        best[v] = cand;
        has_best[v] = true;
      }
      if (pick == n || edge_less(best[v], best[pick])) pick = v;
    }
    in_tree[pick] = true;
    edges.push_back(best[pick]);
    u = pick;
  }
  std::sort(edges.begin(), edges.end(), edge_less);
  return edges;
}

std::vector<Edge> boruvka(const Matrix& pts, std::span<const double> cores, unsigned workers) {
  const std::size_t n = pts.rows;
  std::vector<Edge> edges;
  if (n < 2) return edges;
  edges.reserve(n - 1);
  const KdTree tree(pts);
  const auto& nodes = tree.nodes();
  const auto& order = tree.order();

  // Per-node bounds that do not change between rounds. Children always have
  // larger ids than their parent, so a reverse sweep is bottom-up.
  std::vector<double> node_min_core(nodes.size(), kInf);
  std::vector<std::uint32_t> node_min_index(nodes.size(), std::numeric_limits<std::uint32_t>::max());
  for (std::size_t id = nodes.size(); id-- > 0;) {
    const auto& nd = nodes[id];
    if (nd.leaf()) {
      for (std::size_t i = nd.begin; i < nd.end; ++i) {
        node_min_core[id] = std::min(node_min_core[id], cores[order[i]]);
        node_min_index[id] = std::min(node_min_index[id], order[i]);
      }
    } else {
      const auto l = static_cast<std::size_t>(nd.left), r = static_cast<std::size_t>(nd.right);
      node_min_core[id] = std::min(node_min_core[l], node_min_core[r]);
      node_min_index[id] = std::min(node_min_index[l], node_min_index[r]);
    }
  }

  UnionFind uf(n);
  std::vector<std::size_t> comp(n);
  std::vector<std::int64_t> node_comp(nodes.size());
  constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::vector<double> point_best_w(n);
  std::vector<std::uint32_t> point_best_q(n);
  std::size_t n_components = n;

  while (n_components > 1) {
    for (std::size_t i = 0; i < n; ++i) comp[i] = uf.find(i);
    for (std::size_t id = nodes.size(); id-- > 0;) {
      const auto& nd = nodes[id];
      if (nd.leaf()) {
        std::int64_t c = static_cast<std::int64_t>(comp[order[nd.begin]]);
        for (std::size_t i = nd.begin + 1; i < nd.end && c >= 0; ++i)
          if (static_cast<std::int64_t>(comp[order[i]]) != c) c = -1;
        node_comp[id] = c;
      } else {
        const auto cl = node_comp[static_cast<std::size_t>(nd.left)];
        const auto cr = node_comp[static_cast<std::size_t>(nd.right)];
        node_comp[id] = (cl >= 0 && cl == cr) ? cl : -1;
      }
    }

    parallel_for(n, workers, [&](std::size_t p) {
      const auto cp = static_cast<std::int64_t>(comp[p]);
      const auto qp = pts.row(p);
      double best_w = kInf;
      std::uint32_t best_q = kNone;
      std::vector<std::int32_t> stack{0};
      while (!stack.empty()) {
        const auto id = static_cast<std::size_t>(stack.back());
        stack.pop_back();
        if (node_comp[id] == cp) continue;
        const double box = std::sqrt(tree.box_squared_distance(id, qp)) * (1.0 - 1e-12);
        const double lb = std::max({cores[p], node_min_core[id], box});
        if (lb > best_w || (lb == best_w && node_min_index[id] >= best_q)) continue;
        const auto& nd = nodes[id];
        if (nd.leaf()) {
          for (std::size_t i = nd.begin; i < nd.end; ++i) {
            const std::uint32_t q = order[i];
            if (static_cast<std::int64_t>(comp[q]) == cp) continue;
            const double w = mutual_reachability(distance(pts, p, q), cores[p], cores[q]);
            if (w < best_w || (w == best_w && q < best_q)) {
              best_w = w;
              best_q = q;
            }
          }
          continue;
        }
        const double dl = tree.box_squared_distance(static_cast<std::size_t>(nd.left), qp);
        const double dr = tree.box_squared_distance(static_cast<std::size_t>(nd.right), qp);
        if (dl <= dr) {
          stack.push_back(nd.right);
          stack.push_back(nd.left);
        } else {
          stack.push_back(nd.left);
          stack.push_back(nd.right);
        }
      }
      point_best_w[p] = best_w;
      point_best_q[p] = best_q;
    });

    // Cheapest outgoing edge per component, then add them all.
    std::vector<Edge> comp_best(n);
    std::vector<bool> comp_has(n, false);
    for (std::size_t p = 0; p < n; ++p) {
      if (point_best_q[p] == kNone) continue;
      const Edge e{static_cast<std::uint32_t>(std::min<std::size_t>(p, point_best_q[p])),
                   static_cast<std::uint32_t>(std::max<std::size_t>(p, point_best_q[p])), point_best_w[p]};
      const std::size_t c = comp[p];
      if (!comp_has[c] || edge_less(e, comp_best[c])) {
        comp_best[c] = e;
        comp_has[c] = true;
      }
    }
    std::vector<Edge> round;
    for (std::size_t c = 0; c < n; ++c)
      if (comp_has[c]) round.push_back(comp_best[c]);
    std::sort(round.begin(), round.end(), edge_less);
    round.erase(std::unique(round.begin(), round.end()), round.end());
    if (round.empty()) throw Error("Boruvka: no outgoing edge found");
    for (const Edge& e : round) {
      if (uf.find(e.a) == uf.find(e.b)) continue;
      uf.unite(e.a, e.b);
      edges.push_back(e);
      --n_components;
    }
  }
  std::sort(edges.begin(), edges.end(), edge_less);
  return edges;
}

}  // namespace

void Params::validate(std::size_t n) const {
  if (min_cluster_size < 2) throw InvalidArgument("hdbscan: min_cluster_size must be at least 2");
  if (min_samples < 1) throw InvalidArgument("hdbscan: min_samples must be at least 1");
  if (min_samples > n) throw InvalidArgument("hdbscan: min_samples exceeds the number of points");
}

std::vector<double> core_distances(const Matrix& points, std::size_t min_samples, const Options& options) {
  const std::size_t n = points.rows;
  if (min_samples < 1) throw InvalidArgument("core_distances: min_samples must be at least 1");
  if (n < min_samples) throw InvalidArgument("core_distances: fewer points than min_samples");
  for (double v : points.values)
    if (!std::isfinite(v)) throw InvalidArgument("core_distances: non-finite coordinate");
  std::vector<double> cores(n, 0.0);
  if (min_samples == 1) return cores;
  if (use_dense(n, options)) {
    parallel_for(n, options.workers, [&](std::size_t p) {
      std::vector<double> d(n);
      for (std::size_t q = 0; q < n; ++q) d[q] = squared_distance(points.row(p), points.row(q));
      std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(min_samples - 1), d.end());
      cores[p] = std::sqrt(d[min_samples - 1]);
    });
  } else {
    const KdTree tree(points);
    parallel_for(n, options.workers,
                 [&](std::size_t p) { cores[p] = tree.kth_neighbor_distance(points.row(p), min_samples); });
  }
  return cores;
}

std::vector<Edge> mutual_reachability_mst(const Matrix& points, std::span<const double> cores, const Options& options) {
  if (cores.size() != points.rows) throw InvalidArgument("mutual_reachability_mst: core count differs from rows");
  if (points.rows > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("mutual_reachability_mst: too many points");
  for (double v : points.values)
    if (!std::isfinite(v)) throw InvalidArgument("mutual_reachability_mst: non-finite coordinate");
  for (double c : cores)
    if (!std::isfinite(c)) throw InvalidArgument("mutual_reachability_mst: non-finite core distance");
  return use_dense(points.rows, options) ? dense_prim(points, cores) : boruvka(points, cores, options.workers);
}

CondensedTree condense(std::span<const Edge> mst, std::size_t min_cluster_size, std::size_t n) {
  if (n == 0) throw InvalidArgument("condense: no points");
  if (mst.size() + 1 != n) throw InvalidArgument("condense: MST must have n - 1 edges");

  // Single-linkage dendrogram: nodes [0, n) are points, n + i is merge i.
  std::vector<Edge> sorted(mst.begin(), mst.end());
  std::sort(sorted.begin(), sorted.end(), edge_less);
  const std::size_t n_nodes = 2 * n - 1;
  std::vector<std::size_t> left(n_nodes, 0), right(n_nodes, 0), size(n_nodes, 1);
  std::vector<double> height(n_nodes, 0.0);
  {
    UnionFind uf(n);
    std::vector<std::size_t> top(n);
    std::iota(top.begin(), top.end(), 0);
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const Edge& e = sorted[i];
      if (e.a >= n || e.b >= n) throw InvalidArgument("condense: edge endpoint out of range");
      const std::size_t ra = uf.find(e.a), rb = uf.find(e.b);
      if (ra == rb) throw InvalidArgument("condense: edges contain a cycle");
      const std::size_t node = n + i;
      left[node] = top[ra];
      right[node] = top[rb];
      size[node] = size[left[node]] + size[right[node]];
      height[node] = e.weight;
      top[uf.unite(ra, rb)] = node;
    }
  }

  CondensedTree out;
  out.point_cluster.assign(n, 0);
  out.point_lambda.assign(n, 0.0);
  out.clusters.push_back({-1, 0.0, n, 0.0, {}});

  std::vector<std::size_t> scratch;
  auto fall_out = [&](std::size_t node, std::int32_t cluster, double lambda) {
    scratch.assign(1, node);
    while (!scratch.empty()) {
      const std::size_t x = scratch.back();
      scratch.pop_back();
      if (x < n) {
        out.point_cluster[x] = cluster;
        out.point_lambda[x] = lambda;
      } else {
        scratch.push_back(left[x]);
        scratch.push_back(right[x]);
      }
    }
  };

  std::vector<std::pair<std::size_t, std::int32_t>> work{{n_nodes - 1, 0}};
  while (!work.empty()) {
    auto [node, cluster] = work.back();
    work.pop_back();
    while (true) {
      if (node < n) {  // a lone point reached (only when n == 1)
        fall_out(node, cluster, kInf);
        break;
      }
      const double h = height[node];
      if (h == 0.0) {
        fall_out(node, cluster, kInf);
        break;
      }
      const double lambda = 1.0 / h;
      const std::size_t l = left[node], r = right[node];
      const bool big_l = size[l] >= min_cluster_size, big_r = size[r] >= min_cluster_size;
      if (big_l && big_r) {
        for (std::size_t child : {l, r}) {
          const auto id = static_cast<std::int32_t>(out.clusters.size());
          out.clusters.push_back({cluster, lambda, size[child], 0.0, {}});
          out.clusters[static_cast<std::size_t>(cluster)].children.push_back(id);
          work.emplace_back(child, id);
        }
        break;
      }
      if (!big_l && !big_r) {
        fall_out(l, cluster, lambda);
        fall_out(r, cluster, lambda);
        break;
      }
      if (!big_l) {
        fall_out(l, cluster, lambda);
        node = r;
      } else {
        fall_out(r, cluster, lambda);
        node = l;
      }
    }
  }

  for (std::size_t p = 0; p < n; ++p) {
    auto& c = out.clusters[static_cast<std::size_t>(out.point_cluster[p])];
    c.stability += out.point_lambda[p] - c.birth_lambda;
  }
  for (std::size_t id = 1; id < out.clusters.size(); ++id) {
    const auto& c = out.clusters[id];
    auto& parent = out.clusters[static_cast<std::size_t>(c.parent)];
    parent.stability += (c.birth_lambda - parent.birth_lambda) * static_cast<double>(c.size);
  }
  return out;
}

std::vector<bool> select_eom(const CondensedTree& tree) {
  const std::size_t m = tree.clusters.size();
  std::vector<bool> chosen(m, false);
  std::vector<double> best(m, 0.0);
  for (std::size_t id = m; id-- > 1;) {
    const auto& c = tree.clusters[id];
    double below = 0.0;
    for (auto child : c.children) below += best[static_cast<std::size_t>(child)];
    if (!c.children.empty() && below > c.stability) {
      best[id] = below;
    } else {
      best[id] = c.stability;
      chosen[id] = true;
    }
  }
  // Keep the topmost chosen cluster on every root-to-leaf path.
  std::vector<bool> selected(m, false);
  std::vector<std::int32_t> stack(tree.clusters[0].children.rbegin(), tree.clusters[0].children.rend());
  while (!stack.empty()) {
    const auto id = static_cast<std::size_t>(stack.back());
    stack.pop_back();
    if (chosen[id]) {
      selected[id] = true;
      continue;
    }
    const auto& ch = tree.clusters[id].children;
    stack.insert(stack.end(), ch.rbegin(), ch.rend());
  }
  return selected;
}

std::size_t Labeling::n_outliers() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), -1));
}

Labeling label(const CondensedTree& tree, const std::vector<bool>& selected) {
  const std::size_t m = tree.clusters.size();
  if (selected.size() != m) throw InvalidArgument("label: selection size differs from cluster count");
  // owner[c]: the selected cluster at or above c, or -1.
  std::vector<std::int32_t> owner(m, -1);
  for (std::size_t id = 1; id < m; ++id) {
    const auto parent = static_cast<std::size_t>(tree.clusters[id].parent);
    owner[id] = selected[id] ? static_cast<std::int32_t>(id) : owner[parent];
  }
  const std::size_t n = tree.point_cluster.size();
  std::vector<std::size_t> first_member(m, std::numeric_limits<std::size_t>::max());
  for (std::size_t p = 0; p < n; ++p) {
    const auto o = owner[static_cast<std::size_t>(tree.point_cluster[p])];
    if (o >= 0) first_member[static_cast<std::size_t>(o)] = std::min(first_member[static_cast<std::size_t>(o)], p);
  }
  std::vector<std::size_t> ids;
  for (std::size_t id = 1; id < m; ++id)
    if (selected[id]) ids.push_back(id);
  std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return first_member[a] < first_member[b]; });
  std::vector<int> canonical(m, -1);
  Labeling out;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    canonical[ids[k]] = static_cast<int>(k);
    out.stabilities.push_back(tree.clusters[ids[k]].stability);
  }
  out.labels.assign(n, -1);
  for (std::size_t p = 0; p < n; ++p) {
    const auto o = owner[static_cast<std::size_t>(tree.point_cluster[p])];
    if (o >= 0) out.labels[p] = canonical[static_cast<std::size_t>(o)];
  }
  return out;
}

Labeling condense_and_extract(std::span<const Edge> mst, std::size_t min_cluster_size, std::size_t n) {
  const CondensedTree tree = condense(mst, min_cluster_size, n);
  return label(tree, select_eom(tree));
}

Labeling run_hdbscan(const Matrix& points, const Params& params, const Options& options) {
  params.validate(points.rows);
  const auto cores = core_distances(points, params.min_samples, options);
  const auto mst = mutual_reachability_mst(points, cores, options);
  return condense_and_extract(mst, params.min_cluster_size, points.rows);
}

// ---------------------------------------------------------------------------

Matrix select_rows(const Matrix& points, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), points.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= points.rows) throw InvalidArgument("select_rows: row out of range");
    std::copy_n(points.row(rows[i]).begin(), points.cols, out.row(i).begin());
  }
  return out;
}

std::vector<int> ClusterTree::roots() const {
  std::vector<int> r;
  for (const auto& nd : nodes)
    if (!nd.parent) r.push_back(nd.node_id);
  return r;
}

int ClusterTree::depth() const {
  int d = 0;
  for (const auto& nd : nodes) d = std::max(d, nd.level);
  return d;
}

std::vector<std::size_t> ClusterTree::level1_outliers() const {
  std::vector<bool> covered(n_points, false);
  for (const auto& nd : nodes)
    if (nd.level == 1)
      for (auto r : nd.member_rows) covered[r] = true;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n_points; ++i)
    if (!covered[i]) out.push_back(i);
  return out;
}

namespace {

struct PassResult {
  std::vector<std::vector<std::size_t>> clusters;  // original rows, ascending; canonical order
  std::vector<double> stabilities;
};

PassResult cluster_rows(const Matrix& points, std::span<const std::size_t> rows, const Params& params,
                        const Options& options) {
  PassResult out;
  if (rows.size() < params.min_samples || rows.size() < 2) return out;
  const Matrix sub = select_rows(points, rows);
  const Labeling lab = run_hdbscan(sub, params, options);
  out.clusters.resize(lab.n_clusters());
  out.stabilities = lab.stabilities;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (lab.labels[i] >= 0) out.clusters[static_cast<std::size_t>(lab.labels[i])].push_back(rows[i]);
  return out;
}

}  // namespace

ClusterTree recursive_cluster(const Matrix& points, const Params& params, int max_depth, const Options& options) {
  if (max_depth < 1) throw InvalidArgument("recursive_cluster: max_depth must be at least 1");
  params.validate(points.rows);

  struct Tmp {
    int level;
    int parent;
    std::vector<std::size_t> rows;
    double stability;
    std::vector<int> children;
  };
  std::vector<Tmp> tmp;
  std::vector<std::size_t> all(points.rows);
  std::iota(all.begin(), all.end(), 0);
  {
    const PassResult first = cluster_rows(points, all, params, options);
    for (std::size_t k = 0; k < first.clusters.size(); ++k)
      tmp.push_back({1, -1, first.clusters[k], first.stabilities[k], {}});
  }
  std::vector<int> frontier(tmp.size());
  std::iota(frontier.begin(), frontier.end(), 0);
  for (int level = 1; level < max_depth && !frontier.empty(); ++level) {
    std::vector<int> todo;
    for (int id : frontier)
      if (tmp[static_cast<std::size_t>(id)].rows.size() > params.min_cluster_size) todo.push_back(id);
    std::vector<PassResult> results(todo.size());
    Options inner = options;
    const bool across = todo.size() > 1 && options.workers > 1;
    if (across) inner.workers = 1;
    parallel_for(todo.size(), across ? options.workers : 1u, [&](std::size_t i) {
      results[i] = cluster_rows(points, tmp[static_cast<std::size_t>(todo[i])].rows, params, inner);
    });
    std::vector<int> next;
    for (std::size_t i = 0; i < todo.size(); ++i) {
      for (std::size_t k = 0; k < results[i].clusters.size(); ++k) {
        const int id = static_cast<int>(tmp.size());
        tmp.push_back({level + 1, todo[i], std::move(results[i].clusters[k]), results[i].stabilities[k], {}});
        tmp[static_cast<std::size_t>(todo[i])].children.push_back(id);
        next.push_back(id);
      }
    }
    frontier = std::move(next);
  }

  // Renumber in pre-order; sibling order is already by smallest member row.
  ClusterTree tree;
  tree.n_points = points.rows;
  tree.params = params;
  tree.max_depth = max_depth;
  std::vector<int> new_id(tmp.size(), -1);
  std::vector<std::pair<int, int>> stack;  // (tmp id, new parent id)
  for (std::size_t k = tmp.size(); k-- > 0;)
    if (tmp[k].parent < 0) stack.emplace_back(static_cast<int>(k), -1);
  while (!stack.empty()) {
    auto [t, parent] = stack.back();
    stack.pop_back();
    const int id = static_cast<int>(tree.nodes.size());
    new_id[static_cast<std::size_t>(t)] = id;
    Tmp& src = tmp[static_cast<std::size_t>(t)];
    ClusterTreeNode node;
    node.node_id = id;
    node.level = src.level;
    if (parent >= 0) {
      node.parent = parent;
      tree.nodes[static_cast<std::size_t>(parent)].children.push_back(id);
    }
    node.member_rows = std::move(src.rows);
    node.params_used = params;
    node.stability = src.stability;
    tree.nodes.push_back(std::move(node));
    for (auto it = src.children.rbegin(); it != src.children.rend(); ++it) stack.emplace_back(*it, id);
  }
  return tree;
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json params_json(const Params& p) {
  return {{"min_cluster_size", p.min_cluster_size}, {"min_samples", p.min_samples}, {"metric", "euclidean"}};
}

Params params_from(const json& j) {
  Params p;
  p.min_cluster_size = j.at("min_cluster_size").get<std::size_t>();
  p.min_samples = j.at("min_samples").get<std::size_t>();
  if (j.contains("metric") && j.at("metric") != "euclidean") throw FormatError("tree: only the euclidean metric is supported");
  return p;
}

}  // namespace

void write_tree(const std::filesystem::path& path, const ClusterTree& tree) {
  json nodes = json::array();
  for (const auto& nd : tree.nodes) {
    json j = {{"node_id", nd.node_id},
              {"level", nd.level},
              {"parent", nd.parent ? json(*nd.parent) : json(nullptr)},
              {"member_count", nd.member_rows.size()},
              {"member_rows", nd.member_rows},
              {"children", nd.children},
              {"params", params_json(nd.params_used)},
              {"stability", std::isfinite(nd.stability) ? json(nd.stability) : json(nullptr)}};
    nodes.push_back(std::move(j));
  }
  const json doc = {{"n_points", tree.n_points},
                    {"max_depth", tree.max_depth},
                    {"params", params_json(tree.params)},
                    {"nodes", std::move(nodes)}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

ClusterTree read_tree(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  ClusterTree tree;
  try {
    const json doc = json::parse(in);
    tree.n_points = doc.at("n_points").get<std::size_t>();
    tree.max_depth = doc.at("max_depth").get<int>();
    tree.params = params_from(doc.at("params"));
    for (const auto& j : doc.at("nodes")) {
      ClusterTreeNode nd;
      nd.node_id = j.at("node_id").get<int>();
      nd.level = j.at("level").get<int>();
      if (!j.at("parent").is_null()) nd.parent = j.at("parent").get<int>();
      nd.member_rows = j.at("member_rows").get<std::vector<std::size_t>>();
      nd.children = j.at("children").get<std::vector<int>>();
      nd.params_used = params_from(j.at("params"));
      nd.stability = j.at("stability").is_null() ? kInf : j.at("stability").get<double>();
      if (j.at("member_count").get<std::size_t>() != nd.member_rows.size())
        throw FormatError("member_count disagrees with member_rows");
      tree.nodes.push_back(std::move(nd));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& nd = tree.nodes[i];
    if (nd.node_id != static_cast<int>(i)) throw FormatError(path.string() + ": node ids must be 0..N-1 in order");
    if (nd.parent && (*nd.parent < 0 || *nd.parent >= nd.node_id))
      throw FormatError(path.string() + ": node parent must precede the node");
    for (auto r : nd.member_rows)
      if (r >= tree.n_points) throw FormatError(path.string() + ": member row out of range");
  }
  return tree;
}

}  // namespace toxtraj::hdbscan
