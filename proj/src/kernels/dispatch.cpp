#include <cstdlib>
#include <stdexcept>
#include <string>

#include "navkd/kernels.hpp"

namespace navkd::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* initial_table() {
    if (const char* env = std::getenv("NAVKD_SIMD")) {
        const std::string want(env);
        if (want == "scalar") return &scalar_table();
        if (want == "avx2" && supported(Isa::Avx2)) return avx2_table();
    }
    return supported(Isa::Avx2) ? avx2_table() : &scalar_table();
}

const KernelTable*& current() {
    static const KernelTable* t = initial_table();
    return t;
}

}  // namespace

bool supported(Isa isa) {
    if (isa == Isa::Scalar) return true;
    static const bool avx2 = avx2_table() != nullptr && cpu_has_avx2();
    return avx2;
}

const KernelTable& table(Isa isa) {
    if (!supported(isa)) throw std::invalid_argument("kernel ISA not supported: " + std::string(name(isa)));
    return isa == Isa::Scalar ? scalar_table() : *avx2_table();
}

const KernelTable& active() { return *current(); }

Isa active_isa() { return current()->isa; }

void select(Isa isa) { current() = &table(isa); }

std::string_view name(Isa isa) { return isa == Isa::Scalar ? "scalar" : "avx2"; }

}  // namespace navkd::kernels
