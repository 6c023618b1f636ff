#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef FLEX_USE_BLAS
#include <cblas.h>
#endif

namespace flex {

// Error taxonomy maps onto CLI exit codes: ConfigError -> 2, everything else -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

template <typename... Args>
[[noreturn]] inline void fail_shape(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    throw ShapeError(os.str());
}

template <typename... Args>
[[noreturn]] inline void fail_config(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    throw ConfigError(os.str());
}

// ---------------------------------------------------------------------------
// Deterministic RNG utilities. All randomness in the repo flows through these
// so that a (seed, config) pair fully determines every artifact.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from a base seed and a stream index.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    return splitmix64(base ^ (0x517cc1b727220a95ULL * (stream + 1)));
}

// Counter-based generator with platform-independent float output.
// std::uniform_real_distribution is implementation-defined, so we do not use it.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

    // Uniform in [0, 1).
    float next_float() { return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f); }

    double next_double() { return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    double uniform_d(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return n ? next_u64() % n : 0; }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

private:
    uint64_t state_;
};

// Hash of integer lattice coordinates, used for seeded procedural noise.
inline float lattice_hash01(int64_t ix, int64_t iy, uint64_t seed) {
    uint64_t h = splitmix64(static_cast<uint64_t>(ix) * 0x8da6b343ULL ^
                            static_cast<uint64_t>(iy) * 0xd8163841ULL ^ seed);
    return static_cast<float>(h >> 40) * (1.0f / 16777216.0f);
}

// Smoothly interpolated value noise over a 2-D lattice, output in [0, 1).
inline float value_noise(float x, float y, uint64_t seed) {
    const float fx = std::floor(x), fy = std::floor(y);
    const auto ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy);
    float tx = x - fx, ty = y - fy;
    tx = tx * tx * (3.0f - 2.0f * tx);
    ty = ty * ty * (3.0f - 2.0f * ty);
    const float v00 = lattice_hash01(ix, iy, seed);
    const float v10 = lattice_hash01(ix + 1, iy, seed);
    const float v01 = lattice_hash01(ix, iy + 1, seed);
    const float v11 = lattice_hash01(ix + 1, iy + 1, seed);
    const float a = v00 + (v10 - v00) * tx;
    const float b = v01 + (v11 - v01) * tx;
    return a + (b - a) * ty;
}

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// SHA-1, used for git-style content hashes in run manifests.
// ---------------------------------------------------------------------------

class Sha1 {
public:
    Sha1() { reset(); }

    void reset() {
        h_[0] = 0x67452301u; h_[1] = 0xEFCDAB89u; h_[2] = 0x98BADCFEu;
        h_[3] = 0x10325476u; h_[4] = 0xC3D2E1F0u;
        buf_len_ = 0;
        total_ = 0;
    }

    void update(const void* data, size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        total_ += len;
        while (len > 0) {
            const size_t take = std::min<size_t>(64 - buf_len_, len);
            std::memcpy(buf_ + buf_len_, p, take);
            buf_len_ += take;
            p += take;
            len -= take;
            if (buf_len_ == 64) {
                process_block(buf_);
                buf_len_ = 0;
            }
        }
    }

    std::string hex_digest() {
        const uint64_t bits = total_ * 8;
        unsigned char pad = 0x80;
        update(&pad, 1);
        const unsigned char zero = 0;
        while (buf_len_ != 56) update(&zero, 1);
        unsigned char len_be[8];
        for (int i = 0; i < 8; ++i) len_be[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
        update(len_be, 8);
        static const char* hexd = "0123456789abcdef";
        std::string out(40, '0');
        for (int i = 0; i < 5; ++i) {
            for (int b = 0; b < 4; ++b) {
                const unsigned byte = (h_[i] >> (24 - 8 * b)) & 0xffu;
                out[i * 8 + b * 2] = hexd[byte >> 4];
                out[i * 8 + b * 2 + 1] = hexd[byte & 0xf];
            }
        }
        return out;
    }

private:
    static uint32_t rol(uint32_t v, int n) { return (v << n) | (v >> (32 - n)); }

    void process_block(const unsigned char* p) {
        uint32_t w[80];
        for (int i = 0; i < 16; ++i) {
            w[i] = (uint32_t(p[i * 4]) << 24) | (uint32_t(p[i * 4 + 1]) << 16) |
                   (uint32_t(p[i * 4 + 2]) << 8) | uint32_t(p[i * 4 + 3]);
        }
        for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
        uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
        for (int i = 0; i < 80; ++i) {
            uint32_t f, k;
            if (i < 20)      { f = (b & c) | (~b & d);          k = 0x5A827999u; }
            else if (i < 40) { f = b ^ c ^ d;                   k = 0x6ED9EBA1u; }
            else if (i < 60) { f = (b & c) | (b & d) | (c & d); k = 0x8F1BBCDCu; }
            else             { f = b ^ c ^ d;                   k = 0xCA62C1D6u; }
            const uint32_t t = rol(a, 5) + f + e + k + w[i];
            e = d; d = c; c = rol(b, 30); b = a; a = t;
        }
        h_[0] += a; h_[1] += b; h_[2] += c; h_[3] += d; h_[4] += e;
    }

    uint32_t h_[5];
    unsigned char buf_[64];
    size_t buf_len_ = 0;
    uint64_t total_ = 0;
};

// git blob-style content hash: sha1("blob <len>\0" + content).
inline std::string git_blob_sha1(const std::string& content) {
    Sha1 sha;
    const std::string head = "blob " + std::to_string(content.size());
    sha.update(head.data(), head.size() + 1);  // include the trailing NUL
    sha.update(content.data(), content.size());
    return sha.hex_digest();
}

// ---------------------------------------------------------------------------
// sgemm kernel. Row-major C[m,n] = alpha * op(A) * op(B) + beta * C.
// ---------------------------------------------------------------------------

inline void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                  const float* a, int lda, const float* b, int ldb, float beta,
                  float* c, int ldc) {
#ifdef FLEX_USE_BLAS
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
#else
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                const float av = trans_a ? a[p * lda + i] : a[i * lda + p];
                const float bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
                acc += double(av) * double(bv);
            }
            c[i * ldc + j] = alpha * static_cast<float>(acc) + beta * c[i * ldc + j];
        }
    }
#endif
}

// Dense boolean matrix used for attention masks.
struct BoolMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> v;

    BoolMatrix() = default;
    BoolMatrix(int r, int c, bool fill = false) : rows(r), cols(c), v(size_t(r) * c, fill ? 1 : 0) {}

    uint8_t& at(int r, int c) { return v[size_t(r) * cols + c]; }
    uint8_t at(int r, int c) const { return v[size_t(r) * cols + c]; }
    const uint8_t* row(int r) const { return v.data() + size_t(r) * cols; }
};

}  // namespace flex
