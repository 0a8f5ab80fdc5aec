#pragma once

// Classical key distillation: basis sifting, sampled QBER estimation,
// Cascade reconciliation and Toeplitz-hash privacy amplification. Every bit
// crossing the public channel is metered by PublicChannel.

#include <qkdsim/csv.hpp>
#include <qkdsim/errors.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qkdsim::keys {

using Bits = std::vector<std::uint8_t>;  // one 0/1 value per element

enum class KeyStage { Raw, Sifted, Corrected, Final };

inline std::string to_string(KeyStage s) {
  switch (s) {
    case KeyStage::Raw: return "raw";
    case KeyStage::Sifted: return "sifted";
    case KeyStage::Corrected: return "corrected";
    case KeyStage::Final: return "final";
  }
  return "unknown";
}

inline KeyStage stage_from_string(const std::string& s) {
  if (s == "raw") return KeyStage::Raw;
  if (s == "sifted") return KeyStage::Sifted;
  if (s == "corrected") return KeyStage::Corrected;
  if (s == "final") return KeyStage::Final;
  throw InputError("unknown key stage '" + s + "'");
}

struct KeyMaterial {
  KeyStage stage = KeyStage::Raw;
  Bits bits;
  double qber_estimate = 0.0;

  std::size_t length() const { return bits.size(); }
};

struct LeakageLedger {
  std::uint64_t parity_bits_disclosed = 0;
  std::uint64_t qber_sample_bits_disclosed = 0;
  std::uint64_t total_classical_bits_exchanged = 0;

  friend bool operator==(const LeakageLedger&, const LeakageLedger&) = default;
};

enum class MessageKind { Parity, Sample, Control };

/// Simulated authenticated public channel. Each send is logged to the ledger;
/// an optional tap observes the raw traffic.
class PublicChannel {
 public:
  using Tap = std::function<void(MessageKind, std::uint64_t bits)>;

  PublicChannel() = default;
  explicit PublicChannel(Tap tap) : tap_(std::move(tap)) {}

  /// One key-dependent parity bit.
  void send_parity(std::uint8_t) { record(MessageKind::Parity, 1); }
  /// Raw key bits revealed for error estimation.
  void send_sample(std::uint64_t bits) { record(MessageKind::Sample, bits); }
  /// Key-independent traffic (positions, acknowledgements, seeds).
  void send_control(std::uint64_t bits) { record(MessageKind::Control, bits); }

  const LeakageLedger& ledger() const { return ledger_; }

 private:
  void record(MessageKind kind, std::uint64_t bits) {
    if (kind == MessageKind::Parity) ledger_.parity_bits_disclosed += bits;
    if (kind == MessageKind::Sample) ledger_.qber_sample_bits_disclosed += bits;
    ledger_.total_classical_bits_exchanged += bits;
    if (tap_) tap_(kind, bits);
  }

  LeakageLedger ledger_;
  Tap tap_;
};

struct RawKeyRecord {
  std::uint8_t basis = 0;
  std::uint8_t outcome = 0;
};

/// Which coincidences survive sifting. Without a key basis, positions whose
/// tags agree are kept; with one, only positions where both sides used it.
struct SiftRule {
  std::optional<std::uint8_t> key_basis;
};

inline std::pair<KeyMaterial, KeyMaterial> sift(const std::vector<RawKeyRecord>& a,
                                                const std::vector<RawKeyRecord>& b,
                                                SiftRule rule = {}) {
  if (a.size() != b.size()) throw UsageError("sift: record lists differ in length");
  KeyMaterial ka{KeyStage::Sifted, {}, 0.0};
  KeyMaterial kb{KeyStage::Sifted, {}, 0.0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool keep = rule.key_basis ? (a[i].basis == *rule.key_basis && b[i].basis == *rule.key_basis)
                                     : a[i].basis == b[i].basis;
    if (!keep) continue;
    ka.bits.push_back(a[i].outcome);
    kb.bits.push_back(b[i].outcome);
  }
  return {std::move(ka), std::move(kb)};
}

inline double mismatch_fraction(const Bits& a, const Bits& b) {
  if (a.size() != b.size()) throw UsageError("mismatch_fraction: lengths differ");
  if (a.empty()) return 0.0;
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

struct QberEstimate {
  double qber = 0.0;
  std::size_t sample_size = 0;
  Bits remaining_a;
  Bits remaining_b;
};

/// Publicly compares a random subset of `sample_fraction` of the positions
/// and discards them from both keys.
inline QberEstimate estimate_qber(const Bits& a, const Bits& b, double sample_fraction,
                                  std::uint64_t seed, PublicChannel& channel) {
  if (a.size() != b.size()) throw UsageError("estimate_qber: key lengths differ");
  if (!(sample_fraction > 0.0 && sample_fraction < 1.0)) {
    throw UsageError("estimate_qber: sample fraction must lie in (0, 1)");
  }
  const auto k = static_cast<std::size_t>(std::llround(sample_fraction * static_cast<double>(a.size())));
  if (k == 0 || k > a.size()) throw UsageError("estimate_qber: sample larger than key or empty");

  std::vector<std::size_t> idx(a.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<std::uint8_t> sampled(a.size(), 0);
  std::size_t errors = 0;
  for (std::size_t i = 0; i < k; ++i) {
    sampled[idx[i]] = 1;
    errors += a[idx[i]] != b[idx[i]];
  }
  // Alice announces positions (control) and both sides reveal the bits.
  channel.send_control(64);
  channel.send_sample(k);
  channel.send_control(k);

  QberEstimate out;
  out.sample_size = k;
  out.qber = static_cast<double>(errors) / static_cast<double>(k);
  out.remaining_a.reserve(a.size() - k);
  out.remaining_b.reserve(a.size() - k);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (sampled[i]) continue;
    out.remaining_a.push_back(a[i]);
    out.remaining_b.push_back(b[i]);
  }
  return out;
}

/// Shannon binary entropy in bits.
inline double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

struct CascadeParams {
  int passes = 4;
  double block_factor = 0.73;  ///< first block size = ceil(block_factor / qber)
  std::size_t min_block = 8;
  int verification_parities = 32;
  std::uint64_t shuffle_seed = 0xca5cade;
};

struct PassStats {
  std::size_t block_size = 0;
  std::size_t block_parities = 0;
  std::size_t search_parities = 0;
  std::size_t corrections = 0;
};

struct CascadeResult {
  Bits corrected;  ///< Bob's key after reconciliation
  std::vector<PassStats> passes;
  std::size_t corrections = 0;
  LeakageLedger ledger_delta;
};

inline std::size_t first_block_size(std::size_t n, double qber, const CascadeParams& p) {
  const std::size_t upper = std::max<std::size_t>(n / 2, 1);
  double k = qber > 0.0 ? std::ceil(p.block_factor / qber) : static_cast<double>(upper);
  k = std::min(k, static_cast<double>(upper));
  const auto ks = static_cast<std::size_t>(k);
  return std::min(std::max(ks, p.min_block), upper);
}

namespace detail {

/// Reconciliation state for one Cascade session. Alice's key is consulted only
/// through `alice_parity`, which meters every disclosure.
class CascadeSession {
 public:
  CascadeSession(const Bits& alice, Bits bob, PublicChannel& ch)
      : alice_(alice), bob_(std::move(bob)), ch_(ch) {}

  CascadeResult run(double qber, const CascadeParams& params) {
    const std::size_t n = alice_.size();
    CascadeResult res;
    std::mt19937_64 rng(params.shuffle_seed);
    ch_.send_control(64);  // public shuffle seed
    std::size_t block = first_block_size(n, qber, params);
    for (int p = 0; p < params.passes && n > 0; ++p) {
      PassView view;
      view.order.resize(n);
      std::iota(view.order.begin(), view.order.end(), 0);
      if (p > 0) std::shuffle(view.order.begin(), view.order.end(), rng);
      view.block = std::min(block, n);
      view.where.resize(n);
      for (std::size_t i = 0; i < n; ++i) view.where[view.order[i]] = i;
      const std::size_t nblocks = (n + view.block - 1) / view.block;
      view.alice.resize(nblocks);
      view.bob.resize(nblocks);
      passes_.push_back(std::move(view));
      res.passes.push_back(PassStats{passes_.back().block, nblocks, 0, 0});
      current_ = &res.passes;

      auto& v = passes_.back();
      for (std::size_t b = 0; b < nblocks; ++b) {
        auto [lo, hi] = v.range(b, n);
        v.alice[b] = alice_parity(v, lo, hi, p, /*top_level=*/true);
        v.bob[b] = bob_parity(v, lo, hi);
        ch_.send_control(1);  // Bob's match / mismatch flag
        if (v.alice[b] != v.bob[b]) queue_.emplace_back(passes_.size() - 1, b);
      }
      drain(n);
      block *= 2;
    }
    verify(params);
    res.corrected = std::move(bob_);
    for (const auto& s : res.passes) res.corrections += s.corrections;
    return res;
  }

 private:
  struct PassView {
    std::vector<std::size_t> order;  // permuted position -> key index
    std::vector<std::size_t> where;  // key index -> permuted position
    std::size_t block = 1;
    std::vector<std::uint8_t> alice;
    std::vector<std::uint8_t> bob;

    std::pair<std::size_t, std::size_t> range(std::size_t b, std::size_t n) const {
      return {b * block, std::min((b + 1) * block, n)};
    }
  };

  std::uint8_t alice_parity(const PassView& v, std::size_t lo, std::size_t hi, int pass,
                            bool top_level) {
    std::uint8_t par = 0;
    for (std::size_t i = lo; i < hi; ++i) par ^= alice_[v.order[i]];
    ch_.send_parity(par);
    if (!top_level) (*current_)[static_cast<std::size_t>(pass)].search_parities++;
    return par;
  }

  std::uint8_t bob_parity(const PassView& v, std::size_t lo, std::size_t hi) const {
    std::uint8_t par = 0;
    for (std::size_t i = lo; i < hi; ++i) par ^= bob_[v.order[i]];
    return par;
  }

  // Binary search inside a block with odd parity difference; returns the key
  // index of the erroneous bit.
  std::size_t binary_search(std::size_t pass, std::size_t b, std::size_t n) {
    const PassView& v = passes_[pass];
    auto [lo, hi] = v.range(b, n);
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      const auto a = alice_parity(v, lo, mid, static_cast<int>(passes_.size() - 1), false);
      const auto o = bob_parity(v, lo, mid);
      ch_.send_control(1);
      if (a != o) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    return v.order[lo];
  }

  void drain(std::size_t n) {
    while (!queue_.empty()) {
      // Smallest blocks (earliest passes) first.
      auto it = std::min_element(queue_.begin(), queue_.end());
      const auto [pass, b] = *it;
      queue_.erase(it);
      PassView& v = passes_[pass];
      if (v.alice[b] == v.bob[b]) continue;
      const std::size_t pos = binary_search(pass, b, n);
      bob_[pos] ^= 1;
      (*current_)[passes_.size() - 1].corrections++;
      for (std::size_t q = 0; q < passes_.size(); ++q) {
        PassView& w = passes_[q];
        const std::size_t blk = w.where[pos] / w.block;
        w.bob[blk] ^= 1;
        if (w.bob[blk] != w.alice[blk]) queue_.emplace_back(q, blk);
      }
    }
  }

  void verify(const CascadeParams& params) {
    const std::size_t n = alice_.size();
    if (n == 0) return;
    std::mt19937_64 rng(params.shuffle_seed ^ 0x76657269667931ULL);
    std::bernoulli_distribution coin(0.5);
    bool ok = true;
    for (int r = 0; r < params.verification_parities; ++r) {
      std::uint8_t pa = 0;
      std::uint8_t pb = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (coin(rng)) {
          pa ^= alice_[i];
          pb ^= bob_[i];
        }
      }
      ch_.send_parity(pa);
      ch_.send_control(1);
      ok = ok && pa == pb;
    }
    if (!ok) throw ReconciliationError("cascade: keys still differ after final pass");
  }

  const Bits& alice_;
  Bits bob_;
  PublicChannel& ch_;
  std::vector<PassView> passes_;
  std::deque<std::pair<std::size_t, std::size_t>> queue_;
  std::vector<PassStats>* current_ = nullptr;
};

}  // namespace detail

/// Cascade: block parities over successively doubled, reshuffled blocks with
/// binary search on every odd block, back-tracking into earlier passes when a
/// correction flips their parity. Bob's key converges to Alice's. The ledger
/// delta covers this session's traffic only.
inline CascadeResult cascade_correct(const Bits& alice, const Bits& bob, double qber,
                                     const CascadeParams& params, PublicChannel& channel) {
  if (alice.size() != bob.size()) throw UsageError("cascade_correct: key lengths differ");
  if (!(qber >= 0.0 && qber <= 1.0)) throw DomainError("cascade_correct: qber outside [0, 1]");
  const LeakageLedger before = channel.ledger();
  detail::CascadeSession s(alice, bob, channel);
  auto res = s.run(qber, params);
  const LeakageLedger& after = channel.ledger();
  res.ledger_delta.parity_bits_disclosed = after.parity_bits_disclosed - before.parity_bits_disclosed;
  res.ledger_delta.qber_sample_bits_disclosed =
      after.qber_sample_bits_disclosed - before.qber_sample_bits_disclosed;
  res.ledger_delta.total_classical_bits_exchanged =
      after.total_classical_bits_exchanged - before.total_classical_bits_exchanged;
  return res;
}

namespace detail {

inline std::vector<std::uint64_t> pack_words(const Bits& bits, std::size_t extra_words = 0) {
  std::vector<std::uint64_t> w((bits.size() + 63) / 64 + extra_words, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) w[i >> 6] |= std::uint64_t{1} << (i & 63);
  }
  return w;
}

}  // namespace detail

/// Multiplies the key by an out_len x n Toeplitz matrix over GF(2). The
/// matrix is fixed by its n + out_len - 1 diagonal bits, which are drawn from
/// a public seed.
inline Bits toeplitz_hash(const Bits& key, std::size_t out_len, std::uint64_t seed) {
  const std::size_t n = key.size();
  if (n == 0 || out_len == 0) return Bits(out_len, 0);
  std::mt19937_64 rng(seed);
  const std::size_t diag_len = n + out_len - 1;
  const std::size_t diag_words = (diag_len + 63) / 64;
  std::vector<std::uint64_t> diag(diag_words + 2, 0);
  for (std::size_t i = 0; i < diag_words; ++i) diag[i] = rng();
  if (diag_len % 64 != 0) diag[diag_words - 1] &= (std::uint64_t{1} << (diag_len % 64)) - 1;

  // T[i][j] = diag[i - j + n - 1]; with the key reversed, row i becomes the
  // contiguous window diag[i .. i + n - 1].
  Bits reversed(key.rbegin(), key.rend());
  const auto x = detail::pack_words(reversed);
  const std::size_t words = x.size();
  const std::uint64_t tail_mask =
      n % 64 == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << (n % 64)) - 1;

  Bits out(out_len, 0);
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t base = i >> 6;
    const unsigned shift = static_cast<unsigned>(i & 63);
    std::uint64_t acc = 0;
    for (std::size_t t = 0; t < words; ++t) {
      std::uint64_t win = diag[base + t] >> shift;
      if (shift != 0) win |= diag[base + t + 1] << (64 - shift);
      if (t + 1 == words) win &= tail_mask;
      acc ^= win & x[t];
    }
    out[i] = static_cast<std::uint8_t>(std::popcount(acc) & 1);
  }
  return out;
}

/// Final length = key length - disclosed parities - disclosed sample bits - margin.
inline std::size_t amplified_length(std::size_t key_length, const LeakageLedger& ledger,
                                    std::uint64_t security_margin) {
  const auto spent = static_cast<long double>(ledger.parity_bits_disclosed) +
                     static_cast<long double>(ledger.qber_sample_bits_disclosed) +
                     static_cast<long double>(security_margin);
  const long double left = static_cast<long double>(key_length) - spent;
  if (left <= 0) throw KeyExhaustedError("privacy_amplify: leakage exhausts the key");
  return static_cast<std::size_t>(left);
}

inline Bits privacy_amplify(const Bits& key, const LeakageLedger& ledger,
                            std::uint64_t security_margin, std::uint64_t hash_seed) {
  return toeplitz_hash(key, amplified_length(key.size(), ledger, security_margin), hash_seed);
}

// Key files: header line, one value line, then the bits as lowercase hex
// (MSB-first per nibble, zero padded).
inline constexpr std::string_view kKeyHeader = "stage,length,qber";

inline std::string to_hex(const Bits& bits) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve((bits.size() + 3) / 4);
  for (std::size_t i = 0; i < bits.size(); i += 4) {
    unsigned nib = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      nib <<= 1;
      if (i + k < bits.size()) nib |= bits[i + k] & 1u;
    }
    s.push_back(digits[nib]);
  }
  return s;
}

inline Bits from_hex(std::string_view hex, std::size_t length) {
  if (hex.size() != (length + 3) / 4) throw InputError("hex key length does not match header");
  Bits bits;
  bits.reserve(length);
  for (char c : hex) {
    unsigned nib = 0;
    if (c >= '0' && c <= '9') {
      nib = static_cast<unsigned>(c - '0');
    } else if (c >= 'a' && c <= 'f') {
      nib = static_cast<unsigned>(c - 'a' + 10);
    } else {
      throw InputError("invalid hex digit in key");
    }
    for (int k = 3; k >= 0 && bits.size() < length; --k) bits.push_back((nib >> k) & 1u);
  }
  return bits;
}

inline void write_key(std::ostream& out, const KeyMaterial& k) {
  out << kKeyHeader << '\n'
      << to_string(k.stage) << ',' << k.length() << ',' << csv::format_double(k.qber_estimate)
      << '\n'
      << to_hex(k.bits) << '\n';
}

inline KeyMaterial read_key(std::istream& in) {
  std::string header, values, hex;
  if (!std::getline(in, header) || header != kKeyHeader) {
    throw InputError("key file: expected header 'stage,length,qber'", 1);
  }
  if (!std::getline(in, values)) throw InputError("key file: missing value line", 2);
  const auto f = csv::split(values);
  if (f.size() != 3) throw InputError("key file: expected 3 fields", 2);
  KeyMaterial k;
  k.stage = stage_from_string(std::string(f[0]));
  const auto len = csv::parse_number<std::size_t>(f[1], 2);
  k.qber_estimate = csv::parse_number<double>(f[2], 2);
  std::getline(in, hex);
  k.bits = from_hex(hex, len);
  return k;
}

}  // namespace qkdsim::keys
