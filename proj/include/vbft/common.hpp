#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

namespace vbft {

using NodeId = uint32_t;
using ClientId = uint32_t;
using ViewNum = uint64_t;
using SeqNum = uint64_t;
using Tick = int64_t;

using Bytes = std::vector<uint8_t>;
using BytesView = std::span<const uint8_t>;

/// 256-bit digest; the zero digest marks "no parent" / "no block".
struct Digest {
    std::array<uint8_t, 32> v{};

    auto operator<=>(const Digest&) const = default;

    bool is_zero() const {
        for (auto b : v)
            if (b != 0) return false;
        return true;
    }

    std::string hex() const {
        static const char* d = "0123456789abcdef";
        std::string out;
        out.reserve(64);
        for (auto b : v) {
            out.push_back(d[b >> 4]);
            out.push_back(d[b & 0xf]);
        }
        return out;
    }

    static std::optional<Digest> from_hex(const std::string& s) {
        if (s.size() != 64) return std::nullopt;
        Digest out;
        for (size_t i = 0; i < 32; ++i) {
            auto nib = [](char c) -> int {
                if (c >= '0' && c <= '9') return c - '0';
                if (c >= 'a' && c <= 'f') return c - 'a' + 10;
                return -1;
            };
            int hi = nib(s[2 * i]), lo = nib(s[2 * i + 1]);
            if (hi < 0 || lo < 0) return std::nullopt;
            out.v[i] = static_cast<uint8_t>((hi << 4) | lo);
        }
        return out;
    }
};

inline Digest sha256(BytesView data) {
    Digest out;
    unsigned int len = 32;
    EVP_Digest(data.data(), data.size(), out.v.data(), &len, EVP_sha256(), nullptr);
    return out;
}

inline Digest sha256(const std::string& s) {
    return sha256(BytesView{reinterpret_cast<const uint8_t*>(s.data()), s.size()});
}

/// Injective byte encoding: every field is u32-length-prefixed and appended
/// in declaration order, with a 1-byte kind tag up front. Integers encode as
/// 8 little-endian bytes so the layout is identical on every platform.
class Encoder {
  public:
    explicit Encoder(uint8_t kind_tag) { buf_.push_back(kind_tag); }

    Encoder& u64(uint64_t x) {
        put_len(8);
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(x >> (8 * i)));
        return *this;
    }
    Encoder& u64(int64_t x) { return u64(static_cast<uint64_t>(x)); }
    Encoder& u64(uint32_t x) { return u64(static_cast<uint64_t>(x)); }

    Encoder& bytes(BytesView b) {
        put_len(static_cast<uint32_t>(b.size()));
        buf_.insert(buf_.end(), b.begin(), b.end());
        return *this;
    }
    Encoder& bytes(const Bytes& b) { return bytes(BytesView{b.data(), b.size()}); }

    Encoder& digest(const Digest& d) { return bytes(BytesView{d.v.data(), d.v.size()}); }

    Encoder& opt(bool present) {
        put_len(1);
        buf_.push_back(present ? 1 : 0);
        return *this;
    }

    Encoder& count(size_t n) { return u64(static_cast<uint64_t>(n)); }

    const Bytes& data() const { return buf_; }
    Bytes take() { return std::move(buf_); }

  private:
    void put_len(uint32_t n) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(n >> (8 * i)));
    }
    Bytes buf_;
};

enum class Error {
    TooFew,
    DuplicateSigner,
    DuplicateVoter,
    DuplicateSender,
    BadComponentSignature,
    MixedVotes,
    MixedView,
    Mixed,
    MalformedAggQC,
    QCInvalid,
    CannotRevoke,
    InvalidProof,
    ParseError,
    InvalidScenario,
    MalformedTrace,
    StopNeverReached,
};

inline const char* to_string(Error e) {
    switch (e) {
        case Error::TooFew: return "TooFew";
        case Error::DuplicateSigner: return "DuplicateSigner";
        case Error::DuplicateVoter: return "DuplicateVoter";
        case Error::DuplicateSender: return "DuplicateSender";
        case Error::BadComponentSignature: return "BadComponentSignature";
        case Error::MixedVotes: return "MixedVotes";
        case Error::MixedView: return "MixedView";
        case Error::Mixed: return "Mixed";
        case Error::MalformedAggQC: return "MalformedAggQC";
        case Error::QCInvalid: return "QCInvalid";
        case Error::CannotRevoke: return "CannotRevoke";
        case Error::InvalidProof: return "InvalidProof";
        case Error::ParseError: return "ParseError";
        case Error::InvalidScenario: return "InvalidScenario";
        case Error::MalformedTrace: return "MalformedTrace";
        case Error::StopNeverReached: return "StopNeverReached";
    }
    return "Unknown";
}

/// Minimal expected-like result for builder operations with typed errors.
template <typename T>
class Expected {
  public:
    Expected(T value) : val_(std::move(value)) {}
    Expected(Error e) : err_(e) {}

    bool ok() const { return val_.has_value(); }
    explicit operator bool() const { return ok(); }

    const T& operator*() const& { return *val_; }
    T& operator*() & { return *val_; }
    const T* operator->() const { return &*val_; }

    Error error() const {
        if (ok()) throw std::logic_error("Expected: no error");
        return err_;
    }

    T value() && {
        if (!ok()) throw std::runtime_error(std::string("Expected: ") + to_string(err_));
        return std::move(*val_);
    }

  private:
    std::optional<T> val_;
    Error err_ = Error::TooFew;
};

/// Replication parameters. n = 3f+1 and quorum = 2f+1, checked at build.
struct Config {
    uint32_t n = 4;
    uint32_t f = 1;
    uint32_t quorum = 3;
    Tick gst = 0;
    Tick timeout_initial = 100;
    uint32_t timeout_multiplier = 2;

    static Expected<Config> make(uint32_t n, uint32_t f, Tick gst, Tick timeout_initial,
                                 uint32_t timeout_multiplier = 2) {
        if (n != 3 * f + 1 || f == 0) return Error::InvalidScenario;
        if (timeout_multiplier < 1) return Error::InvalidScenario;
        if (timeout_initial <= 0) return Error::InvalidScenario;
        Config c;
        c.n = n;
        c.f = f;
        c.quorum = 2 * f + 1;
        c.gst = gst;
        c.timeout_initial = timeout_initial;
        c.timeout_multiplier = timeout_multiplier;
        return c;
    }
};

}  // namespace vbft
