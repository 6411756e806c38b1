#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace cmkn {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad parameters, bad configuration, violated preconditions. CLI exit code 2.
struct config_error : error {
    using error::error;
};

// Malformed or inconsistent input data (FASTA, HIVdb tables, model files). CLI exit code 3.
struct data_error : error {
    using error::error;
};

// Numerical failure at runtime (divergence, non-symmetric matrix, ...). CLI exit code 4.
struct numeric_error : error {
    using error::error;
};

inline std::string strf(const char* fmt, ...) {
    char buf[512];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return std::string(buf);
}

// Round-trip exact decimal formatting for CSV output.
inline std::string fmt_double(double v) {
    return strf("%.17g", v);
}

/// Splittable counter-style pseudo random generator built on the splitmix64
/// finisher. A single 64-bit seed drives every stream; split() derives an
/// independent child stream so parallel components stay reproducible. The
/// uniform/normal conversions are hand-rolled so that outputs do not depend
/// on the standard library's distribution implementations.
class SplitRng {
  public:
    explicit SplitRng(std::uint64_t seed) : state_(seed) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t next_below(std::uint64_t n) {
        // Rejection-free multiply-shift; bias is < 2^-64 * n, irrelevant here.
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Integer in [lo, hi] inclusive.
    long long next_int(long long lo, long long hi) {
        return lo + static_cast<long long>(
                        next_below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    /// Standard normal via Box-Muller.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// Deterministically derive an independent child stream.
    SplitRng split(std::uint64_t stream) const {
        return SplitRng(mix(state_ ^ mix(stream)));
    }

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// FNV-1a over raw bytes; used for content digests in model files.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    return strf("%016llx", static_cast<unsigned long long>(v));
}

enum class LogLevel { debug = 0, info = 1, warn = 2, err = 3, off = 4 };

inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* env = std::getenv("CMKN_LOG");
        if (!env) return LogLevel::warn;
        std::string s(env);
        if (s == "debug") return LogLevel::debug;
        if (s == "info") return LogLevel::info;
        if (s == "warn") return LogLevel::warn;
        if (s == "error") return LogLevel::err;
        if (s == "off") return LogLevel::off;
        return LogLevel::warn;
    }();
    return lvl;
}

inline void log_msg(LogLevel lvl, const std::string& msg) {
    static const char* names[] = {"debug", "info", "warn", "error"};
    if (lvl >= log_level() && lvl != LogLevel::off)
        std::fprintf(stderr, "[cmkn %s] %s\n", names[static_cast<int>(lvl)],
                     msg.c_str());
}

}  // namespace cmkn
