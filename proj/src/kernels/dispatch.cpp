#include <atomic>
#include <cstdlib>
#include <string>

#include "sae/kernels/kernels.hpp"

namespace sae::kernels {

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "scalar";
}

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
      return avx2_table() != nullptr && __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Isa::neon:
      // NEON is mandatory on AArch64.
      return neon_table() != nullptr;
  }
  return false;
}

namespace {

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::scalar: return &scalar_table();
    case Isa::avx2: return avx2_table();
    case Isa::neon: return neon_table();
  }
  return nullptr;
}

Isa detect() {
  if (const char* env = std::getenv("SAE_SIMD")) {
    std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && cpu_supports(Isa::avx2)) return Isa::avx2;
    if (v == "neon" && cpu_supports(Isa::neon)) return Isa::neon;
  }
  if (cpu_supports(Isa::avx2)) return Isa::avx2;
  if (cpu_supports(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

struct Selection {
  std::atomic<Isa> isa;
  std::atomic<const KernelTable*> table;
  Selection() {
    Isa chosen = detect();
    isa.store(chosen);
    table.store(table_for(chosen));
  }
};

Selection& selection() {
  static Selection s;
  return s;
}

}  // namespace

Isa active_isa() { return selection().isa.load(std::memory_order_relaxed); }

const KernelTable& active() {
  return *selection().table.load(std::memory_order_relaxed);
}

bool select(Isa isa) {
  if (!cpu_supports(isa)) return false;
  selection().isa.store(isa);
  selection().table.store(table_for(isa));
  return true;
}

}  // namespace sae::kernels
