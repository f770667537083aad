#include "wgkv/kvstore.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace wgkv {

KvPool::KvPool(int page_size, int head_dim, long capacity_pages) : page_size_(page_size), head_dim_(head_dim) {
    if (page_size < 1 || head_dim < 1 || capacity_pages < 0)
        throw std::invalid_argument("KvPool: invalid geometry");
    pages_.resize(static_cast<size_t>(capacity_pages));
    for (auto& p : pages_) {
        p.k.assign(static_cast<size_t>(page_size) * head_dim, 0.0);
        p.v.assign(static_cast<size_t>(page_size) * head_dim, 0.0);
        p.gates.assign(static_cast<size_t>(page_size), 0.0);
        p.positions.assign(static_cast<size_t>(page_size), -1);
    }
    free_.reserve(static_cast<size_t>(capacity_pages));
    for (long i = capacity_pages - 1; i >= 0; --i) free_.push_back(static_cast<int>(i));
}

int KvPool::alloc_page(PageOwner owner) {
    if (free_.empty()) {
        char msg[160];
        std::snprintf(msg, sizeof(msg),
                      "out of pages: capacity=%ld allocated=%ld (layer=%d head=%d region=%s)", capacity(),
                      allocated_pages(), owner.layer, owner.head,
                      owner.region == Region::global ? "global" : "local");
        throw std::runtime_error(msg);
    }
    const int page = free_.back();
    free_.pop_back();
    pages_[static_cast<size_t>(page)].owner = owner;
    pages_[static_cast<size_t>(page)].in_use = true;
    return page;
}

void KvPool::free_page(int page) {
    auto& p = pages_.at(static_cast<size_t>(page));
    if (!p.in_use) throw std::logic_error("KvPool::free_page: double free");
    p.in_use = false;
    p.owner = PageOwner{};
    std::fill(p.positions.begin(), p.positions.end(), -1);
    free_.push_back(page);
}

void KvPool::check_slot(int page, int slot) const {
    if (page < 0 || page >= capacity() || slot < 0 || slot >= page_size_)
        throw std::out_of_range("KvPool: bad page/slot");
    if (!pages_[static_cast<size_t>(page)].in_use) throw std::logic_error("KvPool: access to free page");
}

std::span<double> KvPool::k_slot(int page, int slot) {
    check_slot(page, slot);
    return {pages_[static_cast<size_t>(page)].k.data() + static_cast<size_t>(slot) * head_dim_,
            static_cast<size_t>(head_dim_)};
}

std::span<const double> KvPool::k_slot(int page, int slot) const {
    check_slot(page, slot);
    return {pages_[static_cast<size_t>(page)].k.data() + static_cast<size_t>(slot) * head_dim_,
            static_cast<size_t>(head_dim_)};
}

std::span<double> KvPool::v_slot(int page, int slot) {
    check_slot(page, slot);
    return {pages_[static_cast<size_t>(page)].v.data() + static_cast<size_t>(slot) * head_dim_,
            static_cast<size_t>(head_dim_)};
}

std::span<const double> KvPool::v_slot(int page, int slot) const {
    check_slot(page, slot);
    return {pages_[static_cast<size_t>(page)].v.data() + static_cast<size_t>(slot) * head_dim_,
            static_cast<size_t>(head_dim_)};
}

double& KvPool::gate(int page, int slot) {
    check_slot(page, slot);
    return pages_[static_cast<size_t>(page)].gates[static_cast<size_t>(slot)];
}

double KvPool::gate(int page, int slot) const {
    check_slot(page, slot);
    return pages_[static_cast<size_t>(page)].gates[static_cast<size_t>(slot)];
}

long& KvPool::position(int page, int slot) {
    check_slot(page, slot);
    return pages_[static_cast<size_t>(page)].positions[static_cast<size_t>(slot)];
}

long KvPool::position(int page, int slot) const {
    check_slot(page, slot);
    return pages_[static_cast<size_t>(page)].positions[static_cast<size_t>(slot)];
}

HeadCache::HeadCache(int layer, int head, long window) : layer_(layer), head_(head), window_(window) {
    if (window < 1) throw std::invalid_argument("HeadCache: window must be >= 1");
}

HeadCache::SlotRef HeadCache::local_slot(KvPool& pool, long ring_index) {
    const long page_idx = ring_index / pool.page_size();
    while (static_cast<long>(table_.local_pages.size()) <= page_idx)
        table_.local_pages.push_back(pool.alloc_page({layer_, head_, Region::local}));
    return {table_.local_pages[static_cast<size_t>(page_idx)], static_cast<int>(ring_index % pool.page_size())};
}

HeadCache::SlotRef HeadCache::local_slot_ref(const KvPool& pool, long ring_index) const {
    const long page_idx = ring_index / pool.page_size();
    return {table_.local_pages.at(static_cast<size_t>(page_idx)),
            static_cast<int>(ring_index % pool.page_size())};
}

HeadCache::SlotRef HeadCache::global_append_slot(KvPool& pool) {
    const long page_idx = global_len_ / pool.page_size();
    if (static_cast<long>(table_.global_pages.size()) <= page_idx)
        table_.global_pages.push_back(pool.alloc_page({layer_, head_, Region::global}));
    return {table_.global_pages[static_cast<size_t>(page_idx)], static_cast<int>(global_len_ % pool.page_size())};
}

void HeadCache::promote(KvPool& pool, const SlotRef& victim) {
    const SlotRef dst = global_append_slot(pool);
    const auto k_src = pool.k_slot(victim.page, victim.slot);
    const auto v_src = pool.v_slot(victim.page, victim.slot);
    auto k_dst = pool.k_slot(dst.page, dst.slot);
    auto v_dst = pool.v_slot(dst.page, dst.slot);
    std::copy(k_src.begin(), k_src.end(), k_dst.begin());
    std::copy(v_src.begin(), v_src.end(), v_dst.begin());
    pool.gate(dst.page, dst.slot) = pool.gate(victim.page, victim.slot);
    pool.position(dst.page, dst.slot) = pool.position(victim.page, victim.slot);
    ++global_len_;
}

PromotionEvent HeadCache::local_write(KvPool& pool, std::span<const double> k, std::span<const double> v,
                                      double gate, Threshold threshold, long position) {
    PromotionEvent event = PromotionEvent::none;
    SlotRef slot{};
    if (local_len_ < window_) {
        slot = local_slot(pool, local_ptr_);
        ++local_len_;
    } else {
        slot = local_slot(pool, local_ptr_);
        // inspection: the slot under the pointer is the oldest resident token
        event = pool.gate(slot.page, slot.slot) >= threshold.tau ? PromotionEvent::promoted
                                                                 : PromotionEvent::dropped;
        if (event == PromotionEvent::promoted) promote(pool, slot);
    }
    auto k_dst = pool.k_slot(slot.page, slot.slot);
    auto v_dst = pool.v_slot(slot.page, slot.slot);
    std::copy(k.begin(), k.end(), k_dst.begin());
    std::copy(v.begin(), v.end(), v_dst.begin());
    pool.gate(slot.page, slot.slot) = gate;
    pool.position(slot.page, slot.slot) = position;
    local_ptr_ = (local_ptr_ + 1) % window_;
    ++tokens_seen_;
    return event;
}

CacheStats HeadCache::prefill_populate(KvPool& pool, const Matrix& keys, const Matrix& values,
                                       std::span<const double> gates, Threshold threshold,
                                       long first_position) {
    if (local_len_ != 0 || global_len_ != 0 || tokens_seen_ != 0)
        throw std::logic_error("prefill_populate: cache not empty");
    const long t_total = keys.rows;
    if (values.rows != t_total || static_cast<long>(gates.size()) != t_total)
        throw std::invalid_argument("prefill_populate: keys/values/gates length mismatch");

    const long window_start = std::max<long>(0, t_total - window_);
    for (long j = 0; j < window_start; ++j) {
        if (gates[static_cast<size_t>(j)] < threshold.tau) continue;
        const SlotRef dst = global_append_slot(pool);
        auto k_dst = pool.k_slot(dst.page, dst.slot);
        auto v_dst = pool.v_slot(dst.page, dst.slot);
        const auto k_src = keys.row(j);
        const auto v_src = values.row(j);
        std::copy(k_src.begin(), k_src.end(), k_dst.begin());
        std::copy(v_src.begin(), v_src.end(), v_dst.begin());
        pool.gate(dst.page, dst.slot) = gates[static_cast<size_t>(j)];
        pool.position(dst.page, dst.slot) = first_position + j;
        ++global_len_;
    }
    for (long j = window_start; j < t_total; ++j) {
        const SlotRef slot = local_slot(pool, local_ptr_);
        auto k_dst = pool.k_slot(slot.page, slot.slot);
        auto v_dst = pool.v_slot(slot.page, slot.slot);
        const auto k_src = keys.row(j);
        const auto v_src = values.row(j);
        std::copy(k_src.begin(), k_src.end(), k_dst.begin());
        std::copy(v_src.begin(), v_src.end(), v_dst.begin());
        pool.gate(slot.page, slot.slot) = gates[static_cast<size_t>(j)];
        pool.position(slot.page, slot.slot) = first_position + j;
        ++local_len_;
        local_ptr_ = (local_ptr_ + 1) % window_;
    }
    tokens_seen_ = t_total;

    CacheStats stats;
    stats.resident_entries = local_len_ + global_len_;
    stats.admitted_fraction = tokens_seen_ > 0 ? static_cast<double>(global_len_) / tokens_seen_ : 0.0;
    stats.pages_allocated = static_cast<long>(table_.local_pages.size() + table_.global_pages.size());
    return stats;
}

GatheredKv HeadCache::gather(const KvPool& pool) const {
    GatheredKv out;
    const int dim = pool.head_dim();

    out.global_k = Matrix(global_len_, dim);
    out.global_v = Matrix(global_len_, dim);
    out.global_pos.resize(static_cast<size_t>(global_len_));
    out.global_gate.resize(static_cast<size_t>(global_len_));
    for (long g = 0; g < global_len_; ++g) {
        const int page = table_.global_pages.at(static_cast<size_t>(g / pool.page_size()));
        const int slot = static_cast<int>(g % pool.page_size());
        const auto k = pool.k_slot(page, slot);
        const auto v = pool.v_slot(page, slot);
        std::copy(k.begin(), k.end(), out.global_k.row(g).begin());
        std::copy(v.begin(), v.end(), out.global_v.row(g).begin());
        out.global_pos[static_cast<size_t>(g)] = pool.position(page, slot);
        out.global_gate[static_cast<size_t>(g)] = pool.gate(page, slot);
    }

    out.local_k = Matrix(local_len_, dim);
    out.local_v = Matrix(local_len_, dim);
    out.local_pos.resize(static_cast<size_t>(local_len_));
    out.local_gate.resize(static_cast<size_t>(local_len_));
    // unroll ring order to position order: oldest slot first
    const long start = local_len_ < window_ ? 0 : local_ptr_;
    for (long n = 0; n < local_len_; ++n) {
        const long ring = (start + n) % window_;
        const SlotRef ref = local_slot_ref(pool, ring);
        const auto k = pool.k_slot(ref.page, ref.slot);
        const auto v = pool.v_slot(ref.page, ref.slot);
        std::copy(k.begin(), k.end(), out.local_k.row(n).begin());
        std::copy(v.begin(), v.end(), out.local_v.row(n).begin());
        out.local_pos[static_cast<size_t>(n)] = pool.position(ref.page, ref.slot);
        out.local_gate[static_cast<size_t>(n)] = pool.gate(ref.page, ref.slot);
    }
    return out;
}

void HeadCache::release(KvPool& pool) {
    for (int page : table_.local_pages) pool.free_page(page);
    for (int page : table_.global_pages) pool.free_page(page);
    table_.local_pages.clear();
    table_.global_pages.clear();
    local_len_ = local_ptr_ = 0;
    global_len_ = 0;
    tokens_seen_ = 0;
}

CacheStats cache_stats(std::span<const HeadCache> caches, const KvPool& pool) {
    CacheStats stats;
    long tokens_seen = 0;
    long global_total = 0;
    for (const auto& cache : caches) {
        stats.resident_entries += cache.local_len() + cache.global_len();
        stats.pages_allocated +=
            static_cast<long>(cache.table().local_pages.size() + cache.table().global_pages.size());
        tokens_seen += cache.tokens_seen();
        global_total += cache.global_len();
    }
    stats.admitted_fraction = tokens_seen > 0 ? static_cast<double>(global_total) / tokens_seen : 0.0;
    (void)pool;
    return stats;
}

std::string cache_snapshot(std::span<const HeadCache> caches, const KvPool& pool) {
    std::string out;
    char line[128];
    for (const auto& cache : caches) {
        const auto kv = cache.gather(pool);
        for (long g = 0; g < kv.global_k.rows; ++g) {
            std::snprintf(line, sizeof(line), "%d %d global %ld %.17g\n", cache.layer(), cache.head(),
                          kv.global_pos[static_cast<size_t>(g)], kv.global_gate[static_cast<size_t>(g)]);
            out += line;
        }
        for (long n = 0; n < kv.local_k.rows; ++n) {
            std::snprintf(line, sizeof(line), "%d %d local %ld %.17g\n", cache.layer(), cache.head(),
                          kv.local_pos[static_cast<size_t>(n)], kv.local_gate[static_cast<size_t>(n)]);
            out += line;
        }
    }
    return out;
}

}  // namespace wgkv
