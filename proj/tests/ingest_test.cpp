#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "dnsfp/ingest.hpp"
#include "support/pcap_writer.hpp"

using namespace dnsfp;
using testsupport::Bytes;
using testsupport::CaptureWriter;
using testsupport::Conversation;
using testsupport::Format;
using testsupport::tls_record;

namespace {

constexpr std::int64_t kMs = 1'000'000;
constexpr std::int64_t kT0 = 1'588'068'000LL * 1'000'000'000LL;  // 2020-04-28T10:00:00Z

ResolverSpec google() { return {"google", {"8.8.8.8"}, 853, Protocol::DoT}; }

Bytes handshake_records() {
  auto b = tls_record(22, 300);
  const auto ccs = tls_record(20, 1);
  b.insert(b.end(), ccs.begin(), ccs.end());
  return b;
}

Bytes concat(std::initializer_list<Bytes> parts) {
  Bytes out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<pcap::Packet> packets_of(const CaptureWriter& w, Format f = Format::PcapMicro) {
  const auto b = w.bytes(f);
  return pcap::read_capture(b);
}

// Handshake, then two application-data records: a 154-byte query and, 274 ms
// later, a 204-byte answer.
CaptureWriter simple_capture() {
  CaptureWriter w;
  Conversation c(w, "10.0.0.2", 50000, "8.8.8.8", 853);
  c.handshake(kT0);
  c.send(kT0 + 1 * kMs, true, handshake_records());
  c.send(kT0 + 2 * kMs, false, handshake_records());
  c.send(kT0 + 10 * kMs + 400'000, true, tls_record(23, 154));
  c.send(kT0 + 284 * kMs + 999'999, false, tls_record(23, 204));
  return w;
}

} // namespace

TEST(Ingest, HandshakeExcludedAndTimesRebased) {
  const auto t = filter_packets(packets_of(simple_capture()), google(), "telegram", "1");
  ASSERT_EQ(t.events.size(), 2u);
  EXPECT_EQ(t.events[0], (DnsEvent{0, Direction::ClientToResolver, 154}));
  EXPECT_EQ(t.events[1], (DnsEvent{274, Direction::ResolverToClient, 204}));
  EXPECT_EQ(t.collected_at, "2020-04-28T10:00:00Z");
  EXPECT_EQ(t.app_label, "telegram");
  EXPECT_EQ(t.resolver_id, "google");
  EXPECT_TRUE(validate_trace(t).ok());
}

TEST(Ingest, RecordSpanningSegmentsIsOneEvent) {
  CaptureWriter w;
  Conversation c(w, "10.0.0.2", 50000, "8.8.8.8", 853);
  c.handshake(kT0);
  const auto rec = tls_record(23, 600);
  c.send(kT0 + 5 * kMs, false, Bytes(rec.begin(), rec.begin() + 3));  // header split too
  c.send(kT0 + 9 * kMs, false, Bytes(rec.begin() + 3, rec.begin() + 400));
  c.send(kT0 + 12 * kMs, false, Bytes(rec.begin() + 400, rec.end()));
  const auto t = filter_packets(packets_of(w), google(), "a", "1");
  ASSERT_EQ(t.events.size(), 1u);
  EXPECT_EQ(t.events[0].size_bytes, 600);
}

TEST(Ingest, SeveralRecordsInOneSegment) {
  CaptureWriter w;
  Conversation c(w, "10.0.0.2", 50000, "8.8.8.8", 853);
  c.handshake(kT0);
  c.send(kT0, true, concat({tls_record(23, 90), tls_record(21, 2), tls_record(23, 91)}));
  const auto t = filter_packets(packets_of(w), google(), "a", "1");
  ASSERT_EQ(t.events.size(), 2u);
  EXPECT_EQ(t.events[0].size_bytes, 90);
  EXPECT_EQ(t.events[1].size_bytes, 91);
}

TEST(Ingest, NonMatchingTrafficOnly) {
  CaptureWriter w;
  Conversation c(w, "10.0.0.2", 50000, "1.1.1.1", 853);
  c.handshake(kT0);
  c.send(kT0, true, tls_record(23, 100));
  EXPECT_THROW(filter_packets(packets_of(w), google(), "a", "1"), NoMatchingTraffic);
  // Right IP, wrong port.
  CaptureWriter w2;
  Conversation c2(w2, "10.0.0.2", 50000, "8.8.8.8", 443);
  c2.handshake(kT0);
  c2.send(kT0, true, tls_record(23, 100));
  EXPECT_THROW(filter_packets(packets_of(w2), google(), "a", "1"), NoMatchingTraffic);
}

TEST(Ingest, DuplicateSegmentsAreDropped) {
  CaptureWriter w;
  Conversation c(w, "10.0.0.2", 50000, "8.8.8.8", 853);
  c.handshake(kT0);
  const auto rec = tls_record(23, 120);
  c.send(kT0, true, rec);
  c.send_at(kT0 + kMs, true, rec, -static_cast<std::int32_t>(rec.size()));  // full retransmission
  c.send(kT0 + 2 * kMs, true, tls_record(23, 121));
  const auto t = filter_packets(packets_of(w), google(), "a", "1");
  ASSERT_EQ(t.events.size(), 2u);
  EXPECT_EQ(t.events[1].size_bytes, 121);
}

TEST(Ingest, GapsOverlapsAndGarbageAreMalformed) {
  {
    CaptureWriter w;
    Conversation c(w, "10.0.0.2", 50000, "8.8.8.8", 853);
    c.handshake(kT0);
    c.send_at(kT0, true, tls_record(23, 10), 5);
    EXPECT_THROW(filter_packets(packets_of(w), google(), "a", "1"), MalformedTls);
  }
  {
    CaptureWriter w;
    Conversation c(w, "10.0.0.2", 50000, "8.8.8.8", 853);
    c.handshake(kT0);
    const auto rec = tls_record(23, 10);
    c.send(kT0, true, rec);
    c.send_at(kT0, true, tls_record(23, 10), -3);
    EXPECT_THROW(filter_packets(packets_of(w), google(), "a", "1"), MalformedTls);
  }
  {
    CaptureWriter w;
    Conversation c(w, "10.0.0.2", 50000, "8.8.8.8", 853);
    c.handshake(kT0);
    c.send(kT0, true, Bytes{'G', 'E', 'T', ' ', '/'});
    EXPECT_THROW(filter_packets(packets_of(w), google(), "a", "1"), MalformedTls);
  }
}

TEST(Ingest, FormatsAndAddressFamilies) {
  const auto reference = filter_packets(packets_of(simple_capture()), google(), "a", "1");
  for (auto f : {Format::PcapNano, Format::PcapMicroSwapped, Format::PcapNg})
    EXPECT_EQ(filter_packets(packets_of(simple_capture(), f), google(), "a", "1"), reference);

  CaptureWriter raw(pcap::kLinkRaw);
  Conversation c(raw, "2001:db8::2", 40000, "2001:4860:4860::8888", 853);
  c.handshake(kT0);
  c.send(kT0 + kMs, true, tls_record(23, 77));
  c.send(kT0 + 3 * kMs, false, tls_record(23, 468));
  // Non-canonical spelling of the resolver address.
  const ResolverSpec v6{"google", {"2001:4860:4860:0:0:0:0:8888"}, 853, Protocol::DoH};
  const auto t = filter_packets(packets_of(raw), v6, "a", "1");
  ASSERT_EQ(t.events.size(), 2u);
  EXPECT_EQ(t.events[1], (DnsEvent{2, Direction::ResolverToClient, 468}));
  EXPECT_EQ(t.protocol, Protocol::DoH);

  CaptureWriter vlan;
  testsupport::Segment s{"10.0.0.2", "8.8.8.8", 50000, 853, 7, false, false, tls_record(23, 33)};
  vlan.add(kT0, testsupport::ethernet_frame(s, true));
  EXPECT_EQ(filter_packets(packets_of(vlan), google(), "a", "1").events.at(0).size_bytes, 33);
}

TEST(Ingest, SizesSumToApplicationPayloadAndRefilteringIsStable) {
  CaptureWriter w;
  Conversation c(w, "10.0.0.2", 50000, "8.8.8.8", 853);
  c.handshake(kT0);
  std::int64_t up = 0, down = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t n = 50 + static_cast<std::size_t>(i) * 37;
    c.send(kT0 + i * 10 * kMs, i % 3 != 0, tls_record(23, n));
    (i % 3 != 0 ? up : down) += static_cast<std::int64_t>(n);
  }
  const auto dir = std::filesystem::temp_directory_path() / "dnsfp_ingest_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "capture.pcapng";
  w.write(path, Format::PcapNg);
  const auto t = filter_capture(path, google(), "a", "1");
  std::int64_t got_up = 0, got_down = 0;
  for (const auto& e : t.events) (e.direction == Direction::ClientToResolver ? got_up : got_down) += e.size_bytes;
  EXPECT_EQ(got_up, up);
  EXPECT_EQ(got_down, down);
  EXPECT_EQ(filter_capture(path, google(), "a", "1"), t);
  std::filesystem::remove_all(dir);
}

TEST(Ingest, UnreadableInput) {
  const Bytes junk{1, 2, 3, 4, 5, 6, 7, 8};
  EXPECT_THROW(pcap::read_capture(junk), UnreadableCapture);
  EXPECT_THROW(pcap::read_capture(std::filesystem::path("/nonexistent/capture.pcap")), UnreadableCapture);
  auto truncated = simple_capture().bytes(Format::PcapMicro);
  truncated.resize(truncated.size() - 10);
  EXPECT_THROW(pcap::read_capture(truncated), UnreadableCapture);
}

TEST(Ingest, ResolverSpecValidation) {
  EXPECT_THROW((ResolverSpec{"x", {}, 853}).validate(), Error);
  EXPECT_THROW((ResolverSpec{"x", {"8.8.8.888"}, 853}).validate(), Error);
  EXPECT_THROW((ResolverSpec{"x", {"8.8.8.8"}, 0}).validate(), Error);
}
