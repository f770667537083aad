#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wgkv/gating.hpp"
#include "wgkv/numerics.hpp"

namespace wgkv {

enum class Region : uint8_t { local, global };

struct PageOwner {
    int layer = -1;
    int head = -1;
    Region region = Region::local;
};

struct CacheStats {
    long resident_entries = 0;
    double admitted_fraction = 0.0;  // global entries / tokens seen
    long pages_allocated = 0;
};

enum class PromotionEvent : uint8_t { none, promoted, dropped };

// Unified physical arena of fixed-size KV pages. Every page holds
// page_size slots of {k, v, gate, position} and belongs to exactly one
// (layer, head, region) while allocated.
class KvPool {
public:
    KvPool(int page_size, int head_dim, long capacity_pages);

    int alloc_page(PageOwner owner);  // throws "out of pages" with stats attached
    void free_page(int page);

    int page_size() const { return page_size_; }
    int head_dim() const { return head_dim_; }
    long capacity() const { return static_cast<long>(pages_.size()); }
    long free_pages() const { return static_cast<long>(free_.size()); }
    long allocated_pages() const { return capacity() - free_pages(); }
    bool in_use(int page) const { return pages_[static_cast<size_t>(page)].in_use; }
    const PageOwner& owner(int page) const { return pages_[static_cast<size_t>(page)].owner; }

    std::span<double> k_slot(int page, int slot);
    std::span<const double> k_slot(int page, int slot) const;
    std::span<double> v_slot(int page, int slot);
    std::span<const double> v_slot(int page, int slot) const;
    double& gate(int page, int slot);
    double gate(int page, int slot) const;
    long& position(int page, int slot);
    long position(int page, int slot) const;

private:
    struct Page {
        std::vector<double> k, v;     // page_size * head_dim each
        std::vector<double> gates;    // page_size
        std::vector<long> positions;  // page_size
        PageOwner owner;
        bool in_use = false;
    };

    void check_slot(int page, int slot) const;

    int page_size_;
    int head_dim_;
    std::vector<Page> pages_;
    std::vector<int> free_;  // LIFO
};

// Logical page lists of one head, mapping dense logical pages to
// non-contiguous physical pages.
struct PageTable {
    std::vector<int> local_pages;
    std::vector<int> global_pages;
};

// Position-ordered materialization of one head's cache.
struct GatheredKv {
    Matrix global_k, global_v;
    std::vector<long> global_pos;
    std::vector<double> global_gate;
    Matrix local_k, local_v;
    std::vector<long> local_pos;
    std::vector<double> local_gate;
};

// Dual logical cache of one (layer, head): a fixed ring buffer of the most
// recent `window` tokens plus an append-only global region of admitted
// tokens. Gate scores ride along in local slots so lazy promotion can
// inspect the victim at overwrite time.
class HeadCache {
public:
    HeadCache(int layer, int head, long window);

    // Ring write. Before the buffer fills: plain append (event none). Once
    // full: the slot under local_ptr holds the oldest token; it is promoted
    // to global iff its stored gate >= tau, else dropped, and the new token
    // overwrites the slot.
    PromotionEvent local_write(KvPool& pool, std::span<const double> k, std::span<const double> v,
                               double gate, Threshold threshold, long position);

    // Bulk prefill of an empty cache: tokens before the final window go to
    // global iff admitted; the final min(T, window) tokens fill the ring in
    // order with their gates retained.
    CacheStats prefill_populate(KvPool& pool, const Matrix& keys, const Matrix& values,
                                std::span<const double> gates, Threshold threshold, long first_position = 0);

    GatheredKv gather(const KvPool& pool) const;

    void release(KvPool& pool);  // returns every page to the pool

    int layer() const { return layer_; }
    int head() const { return head_; }
    long window() const { return window_; }
    long local_len() const { return local_len_; }
    long local_ptr() const { return local_ptr_; }
    long global_len() const { return global_len_; }
    long tokens_seen() const { return tokens_seen_; }
    const PageTable& table() const { return table_; }

private:
    struct SlotRef {
        int page;
        int slot;
    };
    SlotRef local_slot(KvPool& pool, long ring_index);        // allocates the backing page on first touch
    SlotRef global_append_slot(KvPool& pool);                 // allocates a new page when the last one is full
    SlotRef local_slot_ref(const KvPool& pool, long ring_index) const;

    void promote(KvPool& pool, const SlotRef& victim);

    int layer_;
    int head_;
    long window_;
    long local_len_ = 0;
    long local_ptr_ = 0;
    long global_len_ = 0;
    long tokens_seen_ = 0;
    PageTable table_;
};

CacheStats cache_stats(std::span<const HeadCache> caches, const KvPool& pool);

// One line per resident token: "layer head region position gate", heads in
// (layer, head) order, global region first, position order within regions.
std::string cache_snapshot(std::span<const HeadCache> caches, const KvPool& pool);

}  // namespace wgkv
