#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "glesens/error.hpp"

namespace glesens {

/// Which side of a finite difference a simulation belongs to.
enum class SystemTag : std::uint32_t { nominal = 0, perturbed = 1 };

/// Nominal and perturbed systems draw from disjoint streams.
struct Independent {};
/// Nominal and perturbed systems share one Wiener path per stream.
struct CommonPath {};
/// Both systems receive sin(angle) dW1 + cos(angle) dW2. Equal in law to a
/// single shared Wiener path for every angle in [0, 2 pi].
struct Eta {
    double angle = 0.0;
};

using Coupling = std::variant<Independent, CommonPath, Eta>;

inline std::string coupling_name(const Coupling& c) {
    if (std::holds_alternative<Independent>(c)) return "independent";
    if (std::holds_alternative<CommonPath>(c)) return "common";
    return "eta";
}

inline bool shares_noise(const Coupling& c) { return !std::holds_alternative<Independent>(c); }

struct NoisePlan {
    std::uint64_t master_seed = 0;
    Coupling coupling = CommonPath{};
    /// Independent Wiener components required by the model: N_k for the
    /// extended-variable GLE, 1 for OU and Langevin.
    std::size_t n_streams = 1;

    void validate() const {
        if (n_streams == 0) throw InvalidArgument("noise plan needs at least one stream");
        if (const auto* eta = std::get_if<Eta>(&coupling)) {
            if (!std::isfinite(eta->angle) || eta->angle < 0.0 ||
                eta->angle > 2.0 * std::numbers::pi) {
                throw InvalidArgument("eta coupling angle must lie in [0, 2 pi]");
            }
        }
    }
};

/// Gaussian increments laid out step-major: values[step * n_streams + stream].
struct IncrementBlock {
    double dt = 1.0;
    std::size_t n_steps = 0;
    std::size_t n_streams = 0;
    std::vector<double> values;

    double operator()(std::size_t step, std::size_t stream) const {
        return values[step * n_streams + stream];
    }
    std::span<const double> row(std::size_t step) const {
        return {values.data() + step * n_streams, n_streams};
    }
};

namespace noise {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key) {
        for (int round = 0; round < 10; ++round) {
            ctr = single_round(ctr, key);
            key[0] += kW0;
            key[1] += kW1;
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;

    static Counter single_round(const Counter& c, const Key& k) {
        const std::uint64_t p0 = std::uint64_t{kM0} * c[0];
        const std::uint64_t p1 = std::uint64_t{kM1} * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Stream identity inside a sample. `eta_first` is the auxiliary W1 path of
/// the eta coupling; W2 is the nominal stream.
enum class StreamTag : std::uint32_t { nominal = 0, perturbed = 1, eta_first = 2, bootstrap = 3 };

inline std::uint64_t stream_key(std::uint64_t master_seed, std::uint64_t sample_index,
                                std::uint64_t stream_index, StreamTag tag) {
    std::uint64_t h = splitmix64(master_seed);
    h = splitmix64(h ^ sample_index);
    h = splitmix64(h ^ ((stream_index << 8) | static_cast<std::uint64_t>(tag)));
    return h;
}

/// Uniform on the open interval (0, 1) from 64 random bits.
inline double to_unit_open(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

/// Fills `out[i * stride]` with the i-th standard normal of the keyed stream.
/// One Philox block yields two uniforms and, through Box-Muller, two normals;
/// normal i comes from block i / 2 so any prefix of a stream is stable.
inline void fill_standard_normals(std::uint64_t key, double* out, std::size_t count,
                                  std::size_t stride = 1) {
    const Philox4x32::Key k{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
    for (std::size_t block = 0; 2 * block < count; ++block) {
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block),
                                      static_cast<std::uint32_t>(std::uint64_t{block} >> 32), 0u, 0u};
        const auto r = Philox4x32::generate(ctr, k);
        const double u1 = to_unit_open(r[0], r[1]);
        const double u2 = to_unit_open(r[2], r[3]);
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double phase = 2.0 * std::numbers::pi * u2;
        out[2 * block * stride] = radius * std::cos(phase);
        if (2 * block + 1 < count) out[(2 * block + 1) * stride] = radius * std::sin(phase);
    }
}

/// Uniforms in (0, 1) from a keyed stream; used for bootstrap resampling.
inline void fill_uniforms(std::uint64_t key, std::span<double> out) {
    const Philox4x32::Key k{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
    for (std::size_t block = 0; 2 * block < out.size(); ++block) {
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block),
                                      static_cast<std::uint32_t>(std::uint64_t{block} >> 32), 1u, 0u};
        const auto r = Philox4x32::generate(ctr, k);
        out[2 * block] = to_unit_open(r[0], r[1]);
        if (2 * block + 1 < out.size()) out[2 * block + 1] = to_unit_open(r[2], r[3]);
    }
}

/// Raw Wiener increments (variance dt) of one keyed stream, independent of
/// any coupling. Exposed so couplings can be checked against their parts.
inline std::vector<double> wiener_stream(std::uint64_t master_seed, std::uint64_t sample_index,
                                         std::uint64_t stream_index, StreamTag tag,
                                         std::size_t n_steps, double dt) {
    std::vector<double> out(n_steps);
    fill_standard_normals(stream_key(master_seed, sample_index, stream_index, tag), out.data(),
                          n_steps);
    const double scale = std::sqrt(dt);
    for (double& v : out) v *= scale;
    return out;
}

// sin/cos of the eta angle with round-off residue at multiples of pi/2
// snapped to zero, so Eta(pi/2) and Eta(0) reproduce a single stream.
inline std::array<double, 2> eta_weights(double angle) {
    double s = std::sin(angle);
    double c = std::cos(angle);
    constexpr double snap = 1e-15;
    if (std::abs(s) < snap) s = 0.0;
    if (std::abs(c) < snap) c = 0.0;
    return {s, c};
}

}  // namespace noise

/// Unit-variance normals driving one sample of one system under `plan`.
/// These are the per-step xi of the integrators; increments() rescales them.
inline IncrementBlock standard_normals(const NoisePlan& plan, std::size_t sample_index,
                                       SystemTag system, std::size_t n_steps) {
    plan.validate();
    if (n_steps == 0) throw InvalidArgument("n_steps must be at least 1");
    IncrementBlock block;
    block.dt = 1.0;
    block.n_steps = n_steps;
    block.n_streams = plan.n_streams;
    block.values.assign(n_steps * plan.n_streams, 0.0);

    const bool independent = std::holds_alternative<Independent>(plan.coupling);
    const auto tag = (independent && system == SystemTag::perturbed) ? noise::StreamTag::perturbed
                                                                     : noise::StreamTag::nominal;
    for (std::size_t s = 0; s < plan.n_streams; ++s) {
        noise::fill_standard_normals(noise::stream_key(plan.master_seed, sample_index, s, tag),
                                     block.values.data() + s, n_steps, plan.n_streams);
    }
    if (const auto* eta = std::get_if<Eta>(&plan.coupling)) {
        const auto [ws, wc] = noise::eta_weights(eta->angle);
        std::vector<double> first(n_steps);
        for (std::size_t s = 0; s < plan.n_streams; ++s) {
            noise::fill_standard_normals(
                noise::stream_key(plan.master_seed, sample_index, s, noise::StreamTag::eta_first),
                first.data(), n_steps);
            for (std::size_t i = 0; i < n_steps; ++i) {
                double& v = block.values[i * plan.n_streams + s];
                v = ws * first[i] + wc * v;
            }
        }
    }
    return block;
}

/// Wiener increments with variance dt for one sample of one system.
inline IncrementBlock increments(const NoisePlan& plan, std::size_t sample_index, SystemTag system,
                                 std::size_t n_steps, double dt) {
    if (!std::isfinite(dt) || dt <= 0.0) throw InvalidArgument("dt must be finite and positive");
    IncrementBlock block = standard_normals(plan, sample_index, system, n_steps);
    const double scale = std::sqrt(dt);
    for (double& v : block.values) v *= scale;
    block.dt = dt;
    return block;
}

}  // namespace glesens
