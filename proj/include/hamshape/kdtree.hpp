#pragma once

#include "hamshape/common.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>
#include <utility>

namespace hamshape {

/// Static 3-d tree over a point array for exact nearest / k-nearest queries.
/// Ties in distance resolve to the smaller point index.
class KdTree {
public:
    struct Hit {
        int index = -1;
        double dist2 = std::numeric_limits<double>::infinity();
    };

    explicit KdTree(const Points& pts) : pts_(pts)
    {
        idx_.resize(static_cast<std::size_t>(pts.rows()));
        std::iota(idx_.begin(), idx_.end(), 0);
        if (!idx_.empty()) {
            nodes_.reserve(2 * idx_.size() / kLeaf + 2);
            build(0, static_cast<int>(idx_.size()));
        }
    }

    int size() const { return static_cast<int>(idx_.size()); }

    Hit nearest(const Vec3& q) const
    {
        Hit best;
        if (!nodes_.empty()) {
            search_nearest(0, q, best);
        }
        return best;
    }

    /// k nearest points sorted by (distance, index). `exclude` is skipped.
    std::vector<Hit> knn(const Vec3& q, int k, int exclude = -1) const
    {
        std::vector<Hit> heap;
        heap.reserve(static_cast<std::size_t>(k) + 1);
        if (!nodes_.empty() && k > 0) {
            search_knn(0, q, k, exclude, heap);
        }
        std::sort(heap.begin(), heap.end(), less);
        return heap;
    }

private:
    static constexpr int kLeaf = 12;

    struct Node {
        int begin, end;
        int axis = -1;
        double split = 0.0;
        int left = -1, right = -1;
    };

    static bool less(const Hit& a, const Hit& b)
    {
        return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
    }

    int build(int begin, int end)
    {
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{begin, end});
        if (end - begin <= kLeaf) {
            return id;
        }
        Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
        Vec3 hi = -lo;
        for (int i = begin; i < end; ++i) {
            const Vec3 p = pts_.row(idx_[i]).transpose();
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        int axis = 0;
        (hi - lo).maxCoeff(&axis);
        const int mid = (begin + end) / 2;
        std::nth_element(idx_.begin() + begin, idx_.begin() + mid, idx_.begin() + end,
                         [&](int a, int b) {
                             const double va = pts_(a, axis), vb = pts_(b, axis);
                             return va < vb || (va == vb && a < b);
                         });
        const double split = pts_(idx_[mid], axis);
        const int l = build(begin, mid);
        const int r = build(mid, end);
        nodes_[id].axis = axis;
        nodes_[id].split = split;
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    double dist2(int i, const Vec3& q) const
    {
        return (pts_.row(i).transpose() - q).squaredNorm();
    }

    void search_nearest(int node, const Vec3& q, Hit& best) const
    {
        const Node& nd = nodes_[node];
        if (nd.axis < 0) {
            for (int i = nd.begin; i < nd.end; ++i) {
                const Hit h{idx_[i], dist2(idx_[i], q)};
                if (less(h, best)) {
                    best = h;
                }
            }
            return;
        }
        const double diff = q[nd.axis] - nd.split;
        const int first = diff < 0 ? nd.left : nd.right;
        const int second = diff < 0 ? nd.right : nd.left;
        search_nearest(first, q, best);
        if (diff * diff <= best.dist2) {
            search_nearest(second, q, best);
        }
    }

    void search_knn(int node, const Vec3& q, int k, int exclude, std::vector<Hit>& heap) const
    {
        const Node& nd = nodes_[node];
        if (nd.axis < 0) {
            for (int i = nd.begin; i < nd.end; ++i) {
                const int id = idx_[i];
                if (id == exclude) {
                    continue;
                }
                const Hit h{id, dist2(id, q)};
                if (static_cast<int>(heap.size()) < k) {
                    heap.push_back(h);
                    std::push_heap(heap.begin(), heap.end(), less);
                } else if (less(h, heap.front())) {
                    std::pop_heap(heap.begin(), heap.end(), less);
                    heap.back() = h;
                    std::push_heap(heap.begin(), heap.end(), less);
                }
            }
            return;
        }
        const double diff = q[nd.axis] - nd.split;
        const int first = diff < 0 ? nd.left : nd.right;
        const int second = diff < 0 ? nd.right : nd.left;
        search_knn(first, q, k, exclude, heap);
        if (static_cast<int>(heap.size()) < k || diff * diff <= heap.front().dist2) {
            search_knn(second, q, k, exclude, heap);
        }
    }

    Points pts_;
    std::vector<int> idx_;
    std::vector<Node> nodes_;
};

} // namespace hamshape
