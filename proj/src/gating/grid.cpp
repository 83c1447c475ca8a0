#include "swarm/gating/grid.hpp"

#include "swarm/util/error.hpp"

namespace swarm::gating {

void GridConfig::validate() const {
    if (d < 1) throw ConfigError("grid d must be >= 1");
    if (M < 1) throw ConfigError("grid M must be >= 1");
    if (name.empty() || name.find('.') != std::string::npos) throw ConfigError("grid name must be non-empty without dots");
}

long long GridConfig::capacity() const {
    long long c = 1;
    for (int i = 0; i < d; ++i) c *= M;
    return c;
}

std::string ExpertUid::to_string(std::string_view name) const {
    std::string s(name);
    for (int c : coords) {
        s += '.';
        s += std::to_string(c);
    }
    return s;
}

ExpertUid ExpertUid::prefix(std::size_t len) const {
    if (len > coords.size()) throw IndexError("prefix longer than uid");
    return ExpertUid{std::vector<int>(coords.begin(), coords.begin() + static_cast<std::ptrdiff_t>(len))};
}

ExpertUid parse_uid(std::string_view s, const GridConfig& grid) {
    if (s.substr(0, grid.name.size()) != grid.name) throw ParseError("uid must start with " + grid.name, 0);
    std::size_t pos = grid.name.size();
    ExpertUid uid;
    while (pos < s.size()) {
        if (s[pos] != '.') throw ParseError("expected '.' in uid", pos);
        const std::size_t start = ++pos;
        long long v = 0;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
            v = v * 10 + (s[pos] - '0');
            if (v > 1'000'000'000) throw ParseError("uid coordinate too large", start);
            ++pos;
        }
        if (pos == start) throw ParseError("empty uid coordinate", start);
        if (pos - start > 1 && s[start] == '0') throw ParseError("zero-padded uid coordinate", start);
        if (v >= grid.M) throw ParseError("uid coordinate out of range", start);
        uid.coords.push_back(static_cast<int>(v));
    }
    if (uid.coords.empty() || static_cast<int>(uid.coords.size()) > grid.d) {
        throw ParseError("uid must have between 1 and d coordinates", s.size());
    }
    return uid;
}

std::vector<std::string> announce_keys(const ExpertUid& uid, const GridConfig& grid) {
    if (static_cast<int>(uid.coords.size()) != grid.d) throw DimensionError("announce_keys needs a full uid");
    std::vector<std::string> keys;
    for (std::size_t len = 1; len <= uid.coords.size(); ++len) keys.push_back(uid.prefix(len).to_string(grid.name));
    return keys;
}

std::vector<ExpertUid> enumerate_grid(const GridConfig& grid) {
    std::vector<ExpertUid> out;
    std::vector<int> c(static_cast<std::size_t>(grid.d), 0);
    for (long long n = 0; n < grid.capacity(); ++n) {
        out.push_back(ExpertUid{c});
        for (int i = grid.d - 1; i >= 0; --i) {
            if (++c[static_cast<std::size_t>(i)] < grid.M) break;
            c[static_cast<std::size_t>(i)] = 0;
        }
    }
    return out;
}

}  // namespace swarm::gating
