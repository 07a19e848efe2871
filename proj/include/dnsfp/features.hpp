#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <compare>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dnsfp/error.hpp"
#include "dnsfp/trace.hpp"

namespace dnsfp {

// ---------------------------------------------------------------------------
// DNS sequences

struct Token {
  enum class Kind : std::uint8_t { Msg, Gap };
  Kind kind = Kind::Msg;
  std::int64_t value = 0;  // signed record size for Msg, log2 bin for Gap

  static constexpr Token msg(std::int64_t size) noexcept { return {Kind::Msg, size}; }
  static constexpr Token gap(std::int64_t bin) noexcept { return {Kind::Gap, bin}; }

  bool is_msg() const noexcept { return kind == Kind::Msg; }
  bool is_gap() const noexcept { return kind == Kind::Gap; }

  friend constexpr auto operator<=>(const Token&, const Token&) = default;
};

inline std::string to_string(const Token& t) {
  return (t.is_msg() ? "Msg(" : "Gap(") + std::to_string(t.value) + ")";
}

struct DnsSequence {
  std::vector<Token> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
  friend bool operator==(const DnsSequence&, const DnsSequence&) = default;
};

inline std::string to_string(const DnsSequence& s) {
  std::string out;
  for (const auto& t : s.tokens) {
    if (!out.empty()) out += ' ';
    out += to_string(t);
  }
  return out;
}

/// Which messages enter a DNS sequence and which gaps between them are kept.
///  - Segram: every record; a gap t is kept iff floor(log2(1 + t)) >= threshold_bin.
///  - BnR: responses only; a gap t is kept iff t > 0.
struct GapPolicy {
  enum class Kind : std::uint8_t { Segram, BnR };
  Kind kind = Kind::Segram;
  int threshold_bin = 5;

  static constexpr GapPolicy segram(int threshold = 5) noexcept { return {Kind::Segram, threshold}; }
  static constexpr GapPolicy bnr() noexcept { return {Kind::BnR, 0}; }

  bool includes_gap(std::int64_t t_ms) const noexcept {
    if (kind == Kind::BnR) return t_ms > 0;
    if (t_ms < 0) return false;
    const int bin = static_cast<int>(std::bit_width(static_cast<std::uint64_t>(t_ms) + 1)) - 1;
    return bin >= threshold_bin;
  }

  bool keeps(const DnsEvent& e) const noexcept {
    return kind == Kind::Segram || e.direction == Direction::ResolverToClient;
  }

  friend bool operator==(const GapPolicy&, const GapPolicy&) = default;
};

/// floor(log2(t_ms)). A zero gap has no bin.
inline std::int64_t gap_bin(std::int64_t t_ms) {
  if (t_ms <= 0) throw ZeroGap("gap of " + std::to_string(t_ms) + " ms has no log2 bin");
  return static_cast<std::int64_t>(std::bit_width(static_cast<std::uint64_t>(t_ms))) - 1;
}

inline DnsSequence build_dns_sequence(const Trace& t, const GapPolicy& policy) {
  DnsSequence seq;
  seq.tokens.reserve(t.events.size() * 2);
  const DnsEvent* prev = nullptr;
  for (const auto& e : t.events) {
    if (!policy.keeps(e)) continue;
    if (prev) {
      const std::int64_t dt = e.t_ms - prev->t_ms;
      if (policy.includes_gap(dt)) seq.tokens.push_back(Token::gap(gap_bin(dt)));
    }
    seq.tokens.push_back(Token::msg(e.signed_size()));
    prev = &e;
  }
  if (seq.tokens.empty()) throw EmptySequence("trace '" + t.trace_id + "' has no message for this policy");
  return seq;
}

/// Sums maximal runs of same-sign values.
inline std::vector<std::int64_t> burst_transform(std::span<const std::int64_t> sizes) {
  std::vector<std::int64_t> out;
  for (auto s : sizes) {
    if (!out.empty() && ((out.back() < 0) == (s < 0)))
      out.back() += s;
    else
      out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature keys and vocabularies

enum class FeatureAttack : std::uint8_t { FreqDist, NGrams, Segram };

inline std::string_view to_string(FeatureAttack a) noexcept {
  switch (a) {
    case FeatureAttack::FreqDist: return "freq";
    case FeatureAttack::NGrams: return "ngrams";
    case FeatureAttack::Segram: return "segram";
  }
  return "?";
}

/// Sub-feature family. Equal grams from different families are distinct keys.
enum class Family : std::uint8_t {
  Size = 0,        // FreqDist record size
  RecordUni = 1,
  RecordBi = 2,
  BurstUni = 3,
  BurstBi = 4,
  SeqUni = 5,
  SeqBi = 6,
  SeqTri = 7,
};

inline std::string_view family_name(Family f) noexcept {
  constexpr std::array<std::string_view, 8> names{"size", "rec1", "rec2", "burst1",
                                                  "burst2", "seq1", "seq2", "seq3"};
  return names[static_cast<std::size_t>(f)];
}

struct FeatureKey {
  Family family = Family::Size;
  std::uint8_t n = 0;
  std::array<Token, 3> items{};

  std::span<const Token> grams() const noexcept { return {items.data(), n}; }

  friend constexpr auto operator<=>(const FeatureKey&, const FeatureKey&) = default;
};

inline std::string to_string(const FeatureKey& k) {
  std::string out(family_name(k.family));
  out += ':';
  for (std::size_t i = 0; i < k.n; ++i) {
    if (i) out += '|';
    const auto& t = k.items[i];
    if (k.family >= Family::SeqUni)
      out += (t.is_msg() ? "M" : "G") + std::to_string(t.value);
    else
      out += std::to_string(t.value);
  }
  return out;
}

struct FeatureKeyHash {
  std::size_t operator()(const FeatureKey& k) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull ^ (static_cast<std::uint64_t>(k.family) << 8 | k.n);
    for (std::size_t i = 0; i < k.n; ++i) {
      h = (h ^ static_cast<std::uint64_t>(k.items[i].kind)) * 0x100000001b3ull;
      h = (h ^ static_cast<std::uint64_t>(k.items[i].value)) * 0x100000001b3ull;
      h ^= h >> 29;
    }
    return static_cast<std::size_t>(h);
  }
};

using KeyCounts = std::unordered_map<FeatureKey, std::uint32_t, FeatureKeyHash>;

namespace detail {

template <std::size_t N>
void add_ngrams(KeyCounts& counts, Family family, std::span<const Token> seq) {
  if (seq.size() < N) return;
  FeatureKey key;
  key.family = family;
  key.n = static_cast<std::uint8_t>(N);
  for (std::size_t i = 0; i + N <= seq.size(); ++i) {
    for (std::size_t j = 0; j < N; ++j) key.items[j] = seq[i + j];
    ++counts[key];
  }
}

inline std::vector<Token> as_msg_tokens(std::span<const std::int64_t> values) {
  std::vector<Token> out;
  out.reserve(values.size());
  for (auto v : values) out.push_back(Token::msg(v));
  return out;
}

} // namespace detail

/// Occurrence counts of every key the attack's representation of `t` contains.
inline KeyCounts count_keys(const Trace& t, FeatureAttack attack,
                            const GapPolicy& policy = GapPolicy::segram()) {
  KeyCounts counts;
  switch (attack) {
    case FeatureAttack::FreqDist: {
      const auto sizes = detail::as_msg_tokens(signed_sizes(t));
      detail::add_ngrams<1>(counts, Family::Size, sizes);
      break;
    }
    case FeatureAttack::NGrams: {
      const auto raw = signed_sizes(t);
      const auto records = detail::as_msg_tokens(raw);
      const auto bursts = detail::as_msg_tokens(burst_transform(raw));
      detail::add_ngrams<1>(counts, Family::RecordUni, records);
      detail::add_ngrams<2>(counts, Family::RecordBi, records);
      detail::add_ngrams<1>(counts, Family::BurstUni, bursts);
      detail::add_ngrams<2>(counts, Family::BurstBi, bursts);
      break;
    }
    case FeatureAttack::Segram: {
      const auto seq = build_dns_sequence(t, policy);
      detail::add_ngrams<1>(counts, Family::SeqUni, seq.tokens);
      detail::add_ngrams<2>(counts, Family::SeqBi, seq.tokens);
      detail::add_ngrams<3>(counts, Family::SeqTri, seq.tokens);
      break;
    }
  }
  return counts;
}

/// Ordered feature index built from training traces.
class Vocabulary {
public:
  Vocabulary() = default;

  Vocabulary(FeatureAttack attack, GapPolicy policy, std::vector<FeatureKey> sorted_keys)
      : attack_(attack), policy_(policy), keys_(std::move(sorted_keys)) {
    index_.reserve(keys_.size());
    std::uint64_t h = 0x84222325cbf29ce4ull ^ static_cast<std::uint64_t>(attack_);
    h = (h ^ static_cast<std::uint64_t>(policy_.threshold_bin)) * 0x100000001b3ull;
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      index_.emplace(keys_[i], static_cast<std::uint32_t>(i));
      h = (h ^ FeatureKeyHash{}(keys_[i])) * 0x100000001b3ull;
    }
    id_ = h;
  }

  FeatureAttack attack() const noexcept { return attack_; }
  const GapPolicy& policy() const noexcept { return policy_; }
  const std::vector<FeatureKey>& keys() const noexcept { return keys_; }
  std::size_t size() const noexcept { return keys_.size(); }
  std::uint64_t id() const noexcept { return id_; }

  std::optional<std::uint32_t> position(const FeatureKey& k) const {
    auto it = index_.find(k);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

private:
  FeatureAttack attack_ = FeatureAttack::FreqDist;
  GapPolicy policy_ = GapPolicy::segram();
  std::vector<FeatureKey> keys_;
  std::unordered_map<FeatureKey, std::uint32_t, FeatureKeyHash> index_;
  std::uint64_t id_ = 0;
};

/// Sparse count vector aligned to one vocabulary.
struct FeatureVector {
  std::uint64_t vocab_id = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> counts;  // (position, count), positions ascending

  std::uint32_t at(std::uint32_t pos) const noexcept {
    auto it = std::lower_bound(counts.begin(), counts.end(), pos,
                               [](const auto& e, std::uint32_t p) { return e.first < p; });
    return (it != counts.end() && it->first == pos) ? it->second : 0;
  }

  std::uint64_t total() const noexcept {
    std::uint64_t s = 0;
    for (const auto& [_, c] : counts) s += c;
    return s;
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

inline Vocabulary build_vocabulary(std::span<const Trace* const> train, FeatureAttack attack,
                                   const GapPolicy& policy = GapPolicy::segram()) {
  if (train.empty()) throw EmptyTraining("cannot build a vocabulary from zero traces");
  std::vector<FeatureKey> keys;
  {
    std::unordered_map<FeatureKey, char, FeatureKeyHash> seen;
    for (const Trace* t : train)
      for (const auto& [k, _] : count_keys(*t, attack, policy)) seen.emplace(k, 0);
    keys.reserve(seen.size());
    for (const auto& [k, _] : seen) keys.push_back(k);
  }
  std::sort(keys.begin(), keys.end());
  return Vocabulary(attack, policy, std::move(keys));
}

inline Vocabulary build_vocabulary(const Dataset& train, FeatureAttack attack,
                                   const GapPolicy& policy = GapPolicy::segram()) {
  std::vector<const Trace*> refs;
  refs.reserve(train.size());
  for (const auto& t : train.traces()) refs.push_back(&t);
  return build_vocabulary(refs, attack, policy);
}

/// Keys unseen at training time are dropped.
inline FeatureVector extract(const Trace& t, const Vocabulary& vocab) {
  FeatureVector fv;
  fv.vocab_id = vocab.id();
  for (const auto& [k, c] : count_keys(t, vocab.attack(), vocab.policy()))
    if (auto pos = vocab.position(k)) fv.counts.emplace_back(*pos, c);
  std::sort(fv.counts.begin(), fv.counts.end());
  return fv;
}

/// Dense CSV export: header row of stringified keys, then one row per vector.
inline void write_feature_csv(std::ostream& out, const Vocabulary& vocab,
                              std::span<const FeatureVector> rows,
                              std::span<const std::string> labels = {}) {
  const bool with_labels = !labels.empty();
  if (with_labels) out << "label";
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (i || with_labels) out << ',';
    out << '"' << to_string(vocab.keys()[i]) << '"';
  }
  out << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (with_labels) out << labels[r];
    std::size_t next = 0;
    for (std::uint32_t i = 0; i < vocab.size(); ++i) {
      if (i || with_labels) out << ',';
      const auto& c = rows[r].counts;
      if (next < c.size() && c[next].first == i)
        out << c[next++].second;
      else
        out << '0';
    }
    out << '\n';
  }
}

} // namespace dnsfp
