#include <atomic>
#include <cstdlib>
#include <string_view>

#include "ocbev/error.hpp"
#include "ocbev/kernels.hpp"

namespace ocbev::kernels {
namespace {

const KernelTable* detect() {
    if (const char* env = std::getenv("OCBEV_KERNELS"); env && std::string_view(env) == "scalar") {
        return &scalar_table();
    }
    if (cpu_supports(Isa::Avx2)) return avx2_table();
    return &scalar_table();
}

const KernelTable& table_for(Isa isa) {
    if (isa == Isa::Scalar) return scalar_table();
    if (!cpu_supports(isa)) throw Error("kernel ISA not supported on this CPU");
    return *avx2_table();
}

}  // namespace

namespace detail {

constinit std::atomic<const KernelTable*> active_table{nullptr};

const KernelTable& init_active() {
    const KernelTable* expected = nullptr;
    active_table.compare_exchange_strong(expected, detect(), std::memory_order_relaxed);
    return *active_table.load(std::memory_order_relaxed);
}

}  // namespace detail

bool cpu_supports(Isa isa) {
    switch (isa) {
        case Isa::Scalar:
            return true;
        case Isa::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return avx2_table() != nullptr && __builtin_cpu_supports("avx2") &&
                   __builtin_cpu_supports("fma");
#else
            return false;
#endif
    }
    return false;
}

void select(Isa isa) { detail::active_table.store(&table_for(isa), std::memory_order_relaxed); }

ScopedIsa::ScopedIsa(Isa isa) : previous_(&active()) { select(isa); }

ScopedIsa::~ScopedIsa() { detail::active_table.store(previous_, std::memory_order_relaxed); }

}  // namespace ocbev::kernels
