#include <gtest/gtest.h>

#include "dnsfp/synth.hpp"

using namespace dnsfp;

TEST(Synth, ProfilesAreDeterministicAndOverlapShapesSharing) {
  const auto a = generate_profiles(10, 5, 0.2), b = generate_profiles(10, 5, 0.2);
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].app_label, "A" + std::to_string(i + 1));
    ASSERT_EQ(a[i].queries.size(), b[i].queries.size());
    for (std::size_t q = 0; q < a[i].queries.size(); ++q) EXPECT_EQ(a[i].queries[q].domain_id, b[i].queries[q].domain_id);
  }
  for (const auto& p : generate_profiles(6, 5, 0.0))
    for (const auto& q : p.queries) EXPECT_FALSE(q.shared);
  for (const auto& p : generate_profiles(6, 5, 1.0))
    for (const auto& q : p.queries) EXPECT_TRUE(q.shared);
  EXPECT_THROW(generate_profiles(0, 1, 0.2), Error);
  EXPECT_THROW(generate_profiles(3, 1, 1.5), Error);
}

TEST(Synth, TracesAreValidAndPaddingAligns) {
  const auto profiles = generate_profiles(5, 1, 0.2);
  const auto plain = generate_dataset(profiles, 6, PaddingMode::none(), CacheMode::cold(), 2);
  const auto padded = generate_dataset(profiles, 6, PaddingMode::edns(), CacheMode::cold(), 2);
  ASSERT_EQ(plain.size(), 30u);
  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_TRUE(validate_trace(plain[i]).ok());
    EXPECT_EQ(plain[i].trace_id, padded[i].trace_id);
    ASSERT_EQ(plain[i].events.size(), padded[i].events.size());
    for (std::size_t e = 0; e < plain[i].events.size(); ++e) {
      const auto& p = padded[i].events[e];
      EXPECT_EQ(p.size_bytes % (p.direction == Direction::ClientToResolver ? 128 : 468), 0);
      EXPECT_GE(p.size_bytes, plain[i].events[e].size_bytes);
      EXPECT_EQ(p.t_ms, plain[i].events[e].t_ms);
    }
  }
  EXPECT_EQ(generate_dataset(profiles, 6, PaddingMode::none(), CacheMode::cold(), 2), plain);
}

TEST(Synth, WarmCacheOnlyDropsSharedQueries) {
  auto profiles = generate_profiles(4, 8, 0.5);
  const auto cold = generate_dataset(profiles, 5, PaddingMode::none(), CacheMode::cold(), 4);
  const auto all_hits = generate_dataset(profiles, 5, PaddingMode::none(), CacheMode::warm(1.0), 4);
  const auto no_hits = generate_dataset(profiles, 5, PaddingMode::none(), CacheMode::warm(0.0), 4);
  EXPECT_EQ(no_hits, cold);
  for (std::size_t i = 0; i < cold.size(); ++i) {
    const auto& p = profiles[i / 5];
    const auto unique = std::count_if(p.queries.begin(), p.queries.end(), [](const QuerySlot& q) { return !q.shared; });
    EXPECT_EQ(all_hits[i].events.size(), 2u * static_cast<std::size_t>(unique));
  }
}

TEST(Synth, ModeParsing) {
  EXPECT_EQ(parse_padding("edns").block_resp, 468);
  EXPECT_EQ(parse_padding("custom:64,256").block_req, 64);
  EXPECT_THROW(parse_padding("custom:0,1"), Error);
  EXPECT_THROW(parse_padding("bogus"), Error);
  EXPECT_DOUBLE_EQ(parse_cache("warm:0.3").hit_probability, 0.3);
  EXPECT_THROW(parse_cache("warm:2"), Error);
  EXPECT_EQ(PaddingMode::edns().apply(129, Direction::ClientToResolver), 256);
  EXPECT_EQ(PaddingMode::edns().apply(468, Direction::ResolverToClient), 468);
}
