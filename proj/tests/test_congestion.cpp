#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pcstream/congestion.hpp"
#include "pcstream/error.hpp"

using namespace pcstream;

namespace {

ControlParams wide() {
  ControlParams p;
  p.r_min = 1.0;
  p.r_max = 1e12;
  return p;
}

FeedbackReport report(uint64_t acked, uint64_t ce, uint32_t lost, double recv, double echo, uint32_t seq = 0) {
  FeedbackReport r;
  r.highest_acked_seq = seq;
  r.cumulative_acked_bytes = acked;
  r.cumulative_ce_marked_bytes = ce;
  r.cumulative_lost_packets = lost;
  r.receiver_timestamp = recv;
  r.echo_timestamp = echo;
  return r;
}

}  // namespace

TEST(TargetBitrate, ExactFromWindowAndRtt) {
  ControlParams p = wide();
  CongestionState s = make_congestion_state(p);
  s.w_ref = 62500;
  s.srtt = 0.05;
  EXPECT_EQ(target_bitrate(s, p), 10000000.0);
}

TEST(TargetBitrate, ClampsAtBothEnds) {
  ControlParams p;
  p.r_min = 3e6;
  p.r_max = 10e6;
  CongestionState s = make_congestion_state(p);
  s.srtt = 0.05;
  s.w_ref = 12500;
  EXPECT_EQ(target_bitrate(s, p), 3000000.0);
  s.w_ref = 125000;
  EXPECT_EQ(target_bitrate(s, p), 10000000.0);
  s.w_ref = 62500;
  EXPECT_EQ(target_bitrate(s, p), 10000000.0);
}

TEST(TargetBitrate, RMaxBeforeFirstSample) {
  ControlParams p;
  EXPECT_EQ(target_bitrate(make_congestion_state(p), p), p.r_max);
}

TEST(Srtt, FirstSampleInitializes) {
  ControlParams p;
  CongestionState s = make_congestion_state(p);
  update_srtt(s, p, 0.05);
  EXPECT_EQ(s.srtt, 0.05);
}

TEST(Srtt, GeometricConvergence) {
  ControlParams p;
  const int k = static_cast<int>(std::ceil(std::log(0.01) / std::log(1.0 - p.srtt_alpha)));
  ASSERT_EQ(k, 44);
  CongestionState s = make_congestion_state(p);
  const double r = 0.04;
  update_srtt(s, p, 2 * r);  // start 100% off
  for (int i = 0; i < k - 1; ++i) update_srtt(s, p, r);
  EXPECT_GT(std::fabs(s.srtt - r), 0.01 * r);
  update_srtt(s, p, r);
  EXPECT_LE(std::fabs(s.srtt - r), 0.01 * r);
}

TEST(Srtt, AlternatingStaysInside) {
  ControlParams p;
  CongestionState s = make_congestion_state(p);
  for (int i = 0; i < 500; ++i) {
    update_srtt(s, p, i % 2 ? 0.06 : 0.04);
    if (i == 0) continue;
    EXPECT_GT(s.srtt, 0.04);
    EXPECT_LT(s.srtt, 0.06);
  }
}

TEST(Srtt, RejectsNonPositive) {
  ControlParams p;
  CongestionState s = make_congestion_state(p);
  EXPECT_THROW(update_srtt(s, p, 0.0), ProtocolError);
  EXPECT_THROW(update_srtt(s, p, -1.0), ProtocolError);
}

TEST(CanSend, EmptyPipe) {
  ControlParams p;
  CongestionState s = make_congestion_state(p);
  s.bytes_in_flight = 0;
  EXPECT_TRUE(can_send(s, p, s.w_ref, false));
  EXPECT_TRUE(can_send(s, p, 1200, false));
  EXPECT_FALSE(can_send(s, p, s.w_ref + 1, false));
}

TEST(CanSend, OvershootMidFrame) {
  ControlParams p;
  CongestionState s = make_congestion_state(p);
  s.w_ref = 12000;
  s.bytes_in_flight = s.w_ref;
  EXPECT_FALSE(can_send(s, p, 1200, false));
  for (double bif = s.w_ref; bif + 1200 <= 5 * s.w_ref; bif += 1200) {
    s.bytes_in_flight = bif;
    EXPECT_TRUE(can_send(s, p, 1200, true)) << bif;
  }
  s.bytes_in_flight = 5 * s.w_ref - 1199;
  EXPECT_FALSE(can_send(s, p, 1200, true));
}

TEST(CanSend, HardCap) {
  ControlParams p;
  CongestionState s = make_congestion_state(p);
  s.bytes_in_flight = 5 * s.w_ref;
  EXPECT_FALSE(can_send(s, p, 1, true));
}

TEST(OnFeedback, CleanReportGrows) {
  ControlParams p = wide();
  CongestionState s = make_congestion_state(p);
  s.bytes_in_flight = s.w_ref / 2;
  const double w0 = s.w_ref;
  on_feedback(s, p, report(1200, 0, 0, 0.03, 0.01), 0.05);
  EXPECT_GT(s.w_ref, w0);
  EXPECT_EQ(s.w_ref, w0 + 1200);  // slow start adds the acked bytes
  EXPECT_EQ(s.bytes_in_flight, w0 / 2 - 1200);
  EXPECT_DOUBLE_EQ(s.srtt, 0.04);
}

TEST(OnFeedback, AdditiveIncreaseAfterSlowStart) {
  ControlParams p = wide();
  CongestionState s = make_congestion_state(p);
  s.slow_start = false;
  s.w_ref = 24000;
  s.bytes_in_flight = 20000;
  on_feedback(s, p, report(6000, 0, 0, 0.03, 0.01), 0.05);
  EXPECT_DOUBLE_EQ(s.w_ref, 24000 + 6000.0 * 1200 / 24000);
}

TEST(OnFeedback, ApplicationLimitedDoesNotGrow) {
  ControlParams p = wide();
  CongestionState s = make_congestion_state(p);
  s.bytes_in_flight = s.w_ref / 4 - 1;
  const double w0 = s.w_ref;
  on_feedback(s, p, report(1200, 0, 0, 0.03, 0.01), 0.05);
  EXPECT_EQ(s.w_ref, w0);
}

TEST(OnFeedback, CeFractionScalesDecrease) {
  ControlParams p = wide();
  CongestionState s = make_congestion_state(p);
  s.w_ref = 50000;
  // Baseline one-way delay 20 ms, then a report whose delay is 20 ms higher:
  // est_queue_delay equals the target, so ce_beta is applied unscaled.
  on_feedback(s, p, report(1200, 0, 0, 1.02, 1.00, 0), 1.04);
  ASSERT_EQ(s.w_ref, 50000);
  s.bytes_in_flight = 40000;
  const double f = 1200.0 / 4800.0;
  on_feedback(s, p, report(6000, 1200, 0, 1.10, 1.06, 4), 1.12);
  EXPECT_NEAR(s.est_queue_delay, 0.02, 1e-12);
  EXPECT_DOUBLE_EQ(s.last_ce_fraction, f);
  EXPECT_NEAR(s.w_ref, 50000 * (1.0 - p.ce_beta * f), 1e-6);
  EXPECT_EQ(s.last_signal, CongestionSignal::kCe);
  EXPECT_FALSE(s.slow_start);
}

TEST(OnFeedback, CeOncePerSrtt) {
  ControlParams p = wide();
  CongestionState s = make_congestion_state(p);
  s.w_ref = 50000;
  on_feedback(s, p, report(1200, 1200, 0, 0.02, 0.0), 0.04);
  const double after_first = s.w_ref;
  ASSERT_LT(after_first, 50000);
  ASSERT_DOUBLE_EQ(s.srtt, 0.04);
  on_feedback(s, p, report(2400, 2400, 0, 0.03, 0.01, 1), 0.05);
  EXPECT_EQ(s.w_ref, after_first);
  on_feedback(s, p, report(3600, 3600, 0, 0.07, 0.05, 2), 0.09);
  EXPECT_LT(s.w_ref, after_first);
  EXPECT_EQ(s.decreases, 2u);
}

TEST(OnFeedback, LossHalvesWithFloor) {
  ControlParams p = wide();
  CongestionState s = make_congestion_state(p);
  s.w_ref = 40000;
  on_feedback(s, p, report(1200, 0, 1, 0.02, 0.0), 0.04);
  EXPECT_EQ(s.w_ref, 20000);
  EXPECT_EQ(s.last_signal, CongestionSignal::kLoss);
  CongestionState t = make_congestion_state(p);
  t.w_ref = 4000;
  on_feedback(t, p, report(1200, 0, 3, 0.02, 0.0), 0.04);
  EXPECT_EQ(t.w_ref, p.w_min);
}

TEST(OnFeedback, LossBeatsCe) {
  ControlParams p = wide();
  CongestionState s = make_congestion_state(p);
  s.w_ref = 40000;
  on_feedback(s, p, report(2400, 1200, 1, 0.02, 0.0), 0.04);
  EXPECT_EQ(s.w_ref, 20000);
  EXPECT_EQ(s.last_signal, CongestionSignal::kLoss);
}

TEST(OnFeedback, RegressedCountersRejected) {
  ControlParams p = wide();
  CongestionState s = make_congestion_state(p);
  on_feedback(s, p, report(5000, 1000, 2, 0.02, 0.0, 5), 0.04);
  const CongestionState before = s;
  EXPECT_THROW(on_feedback(s, p, report(4000, 1000, 2, 0.03, 0.01, 5), 0.05), ProtocolError);
  EXPECT_THROW(on_feedback(s, p, report(5000, 900, 2, 0.03, 0.01, 5), 0.05), ProtocolError);
  EXPECT_THROW(on_feedback(s, p, report(5000, 1000, 1, 0.03, 0.01, 5), 0.05), ProtocolError);
  EXPECT_THROW(on_feedback(s, p, report(5000, 1000, 2, 0.03, 0.01, 4), 0.05), ProtocolError);
  EXPECT_THROW(on_feedback(s, p, report(6000, 7000, 2, 0.03, 0.01, 6), 0.05), ProtocolError);
  EXPECT_EQ(s.w_ref, before.w_ref);
  EXPECT_EQ(s.srtt, before.srtt);
  EXPECT_EQ(s.last_report, before.last_report);
}

TEST(OnFeedback, KeepAliveChangesNothingButTime) {
  ControlParams p = wide();
  CongestionState s = make_congestion_state(p);
  on_feedback(s, p, report(1200, 0, 0, 0.02, 0.0), 0.04);
  const double w = s.w_ref, rtt = s.srtt;
  on_feedback(s, p, report(1200, 0, 0, 0.02, 0.0), 0.05);
  EXPECT_EQ(s.w_ref, w);
  EXPECT_EQ(s.srtt, rtt);
}

TEST(OnSenderLoss, ReleasesAndDecreases) {
  ControlParams p = wide();
  CongestionState s = make_congestion_state(p);
  s.w_ref = 30000;
  s.bytes_in_flight = 5000;
  on_sender_loss(s, p, 1200, 1.0);
  EXPECT_EQ(s.bytes_in_flight, 3800);
  EXPECT_EQ(s.w_ref, 15000);
}

TEST(ControlParamsTest, Validation) {
  auto bad = [](auto mutate) {
    ControlParams p;
    mutate(p);
    EXPECT_THROW(p.validate(), ConfigError);
  };
  bad([](ControlParams& p) { p.overshoot_factor = 0.5; });
  bad([](ControlParams& p) { p.loss_beta = 0.0; });
  bad([](ControlParams& p) { p.loss_beta = 1.0; });
  bad([](ControlParams& p) { p.ce_beta = 0.0; });
  bad([](ControlParams& p) { p.srtt_alpha = 0.0; });
  bad([](ControlParams& p) { p.srtt_alpha = 1.5; });
  bad([](ControlParams& p) { p.w_max = p.w_min / 2; });
  bad([](ControlParams& p) { p.r_max = p.r_min / 2; });
  EXPECT_NO_THROW(ControlParams{}.validate());
}

// Properties.

TEST(CongestionProperty, RandomFeedbackKeepsBoundsAndDamping) {
  ControlParams p;
  std::mt19937_64 rng(77);
  for (int run = 0; run < 20; ++run) {
    CongestionState s = make_congestion_state(p);
    uint64_t acked = 0, ce = 0;
    uint32_t lost = 0, seq = 0;
    double t = 0.0, last_dec = -INFINITY;
    uint64_t decs = 0;
    for (int k = 0; k < 2000; ++k) {
      const size_t pkts = rng() % 6;
      for (size_t i = 0; i < pkts; ++i) on_packet_sent(s, 1200);
      t += 0.001 + 0.02 * (rng() % 1000) / 1000.0;
      const uint64_t a = 1200 * (rng() % 5);
      acked += a;
      if (rng() % 4 == 0) ce += std::min<uint64_t>(a, 1200 * (rng() % 3));
      if (rng() % 50 == 0) ++lost;
      seq += static_cast<uint32_t>(a / 1200);
      const double owd = 0.02 + 0.03 * (rng() % 1000) / 1000.0;
      const double srtt_before = s.srtt;
      on_feedback(s, p, report(acked, ce, lost, t - 0.02, t - 0.02 - owd, seq), t);
      ASSERT_GE(s.w_ref, p.w_min);
      ASSERT_LE(s.w_ref, p.w_max);
      ASSERT_GE(s.r_trg, p.r_min);
      ASSERT_LE(s.r_trg, p.r_max);
      ASSERT_GE(s.bytes_in_flight, 0.0);
      if (s.decreases != decs) {
        ASSERT_EQ(s.decreases, decs + 1);
        // The gate uses the srtt after this report's sample.
        ASSERT_GE(t - last_dec, s.srtt) << "two decreases inside one srtt";
        last_dec = t;
        decs = s.decreases;
      }
      if (srtt_before > 0.0) ASSERT_GT(s.srtt, 0.0);
    }
  }
}

TEST(CongestionProperty, CongestionFreeStreamReachesWMax) {
  ControlParams p;
  p.w_max = 200000;
  CongestionState s = make_congestion_state(p);
  s.slow_start = false;  // additive increase only, the slow path
  uint64_t acked = 0;
  double t = 0.0;
  int rounds = 0;
  while (s.w_ref < p.w_max && rounds < 1000000) {
    s.bytes_in_flight = s.w_ref;
    acked += 1200;
    t += 0.001;
    on_feedback(s, p, report(acked, 0, 0, t - 0.02, t - 0.04), t);
    ++rounds;
  }
  EXPECT_EQ(s.w_ref, p.w_max);
}
