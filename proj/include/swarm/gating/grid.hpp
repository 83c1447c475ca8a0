#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace swarm::gating {

/// An M^d grid of expert slots. `name` is the leading token of every UID string.
struct GridConfig {
    int d = 2;
    int M = 4;
    std::string name = "expert";

    void validate() const;
    long long capacity() const;
};

/// Coordinates of one expert (or of a prefix when shorter than d).
struct ExpertUid {
    std::vector<int> coords;

    /// "expert.u0.u1...". Used for both full UIDs and prefixes.
    std::string to_string(std::string_view name = "expert") const;
    ExpertUid prefix(std::size_t len) const;

    auto operator<=>(const ExpertUid&) const = default;
};

/// Parses `<name>(.<int>){1..d}` with decimal, unpadded coordinates in [0, M).
ExpertUid parse_uid(std::string_view s, const GridConfig& grid);

/// DHT keys announced for one expert: every proper prefix and the full UID (d keys).
std::vector<std::string> announce_keys(const ExpertUid& uid, const GridConfig& grid);

/// Every coordinate tuple of the grid, in lexicographic order.
std::vector<ExpertUid> enumerate_grid(const GridConfig& grid);

}  // namespace swarm::gating
