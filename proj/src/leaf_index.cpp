#include "defer/leaf_index.hpp"

#include <algorithm>

#include "defer/error.hpp"

namespace defer {
namespace {

// Max-heap order: larger y first, then smaller node id.
struct EntryLess {
  bool operator()(const LeafIndex::Entry& a, const LeafIndex::Entry& b) const {
    if (a.y != b.y) return a.y < b.y;
    return a.node > b.node;
  }
};

}  // namespace

KeyId KeyTable::intern(std::span<const Depth> depths) {
  scratch_.assign(depths.begin(), depths.end());
  std::sort(scratch_.begin(), scratch_.end());
  auto [it, inserted] = ids_.try_emplace(scratch_, static_cast<KeyId>(abscissa_.size()));
  if (inserted) {
    const VolumeDiameter vd = volume_diameter(depths);
    volume_.push_back(vd.volume);
    volume_lo_.push_back(vd.volume_lo);
    diameter_.push_back(vd.diameter);
    abscissa_.push_back(vd.volume * vd.diameter / 2.0);
  }
  return it->second;
}

void LeafIndex::insert(NodeId node, KeyId key, double y) {
  if (node >= live_.size()) {
    live_.resize(std::size_t{node} + 1, 0);
    node_key_.resize(std::size_t{node} + 1, 0);
    node_y_.resize(std::size_t{node} + 1, 0.0);
  }
  if (live_[node]) throw InvariantError("leaf inserted into the index twice");
  if (key >= buckets_.size()) buckets_.resize(std::size_t{key} + 1);
  Bucket& b = buckets_[key];
  b.heap.push_back(Entry{y, node});
  std::push_heap(b.heap.begin(), b.heap.end(), EntryLess{});
  if (b.live++ == 0) ++live_keys_;
  live_[node] = 1;
  node_key_[node] = key;
  node_y_[node] = y;
  ++live_count_;
}

void LeafIndex::remove(NodeId node) {
  if (!contains(node)) throw InvariantError("removing a leaf that is not indexed");
  live_[node] = 0;
  Bucket& b = buckets_[node_key_[node]];
  if (--b.live == 0) {
    --live_keys_;
    b.heap.clear();
  }
  --live_count_;
}

void LeafIndex::purge(KeyId key) {
  Bucket& bucket = buckets_[key];
  // An entry is stale once its node was removed; a re-inserted node also
  // leaves its old entry behind, recognisable by the outdated ordinate.
  auto stale = [&](const Entry& e) {
    return !live_[e.node] || node_key_[e.node] != key || node_y_[e.node] != e.y;
  };
  while (!bucket.heap.empty() && stale(bucket.heap.front())) {
    std::pop_heap(bucket.heap.begin(), bucket.heap.end(), EntryLess{});
    bucket.heap.pop_back();
  }
}

std::optional<LeafIndex::Entry> LeafIndex::peek(KeyId key) {
  if (key >= buckets_.size()) return std::nullopt;
  Bucket& b = buckets_[key];
  if (b.live == 0) return std::nullopt;
  purge(key);
  return b.heap.front();
}

std::vector<HullPoint> LeafIndex::hull_candidates(const KeyTable& keys) {
  std::vector<HullPoint> out;
  out.reserve(live_keys_);
  for (KeyId key = 0; key < buckets_.size(); ++key) {
    Bucket& b = buckets_[key];
    if (b.live == 0) continue;
    purge(key);
    const Entry& top = b.heap.front();
    out.push_back(HullPoint{top.node, keys.abscissa(key), top.y, key});
  }
  std::sort(out.begin(), out.end(), [](const HullPoint& a, const HullPoint& b) {
    if (a.x != b.x) return a.x < b.x;
    return a.key < b.key;
  });
  return out;
}

void LeafIndex::clear() {
  buckets_.clear();
  node_key_.clear();
  node_y_.clear();
  live_.clear();
  live_keys_ = 0;
  live_count_ = 0;
}

}  // namespace defer
