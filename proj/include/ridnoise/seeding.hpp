#pragma once

#include <cstdint>
#include <string_view>

namespace ridnoise {

std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Independent, reproducible sub-seed for a named role.
std::uint64_t derive_seed(std::uint64_t master, std::string_view role) noexcept;

}  // namespace ridnoise
