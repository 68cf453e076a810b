#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "vknow/review.hpp"

using namespace vknow;
using namespace vknow::review;

namespace {

Timestamp at(int seconds) { return Timestamp{} + std::chrono::seconds(seconds); }

ReviewDecision decide(std::string id, Status action, int t, std::string reviewer = "r1") {
  ReviewDecision d;
  d.item_id = std::move(id);
  d.action = action;
  d.reviewer = std::move(reviewer);
  d.timestamp = at(t);
  return d;
}

ReviewDecision edit(const corpus::QAItem& base, std::string new_question, int t) {
  auto d = decide(base.id, Status::edited, t);
  corpus::QAItem r = base;
  r.question = std::move(new_question);
  r.provenance.clear();
  d.replacement = r;
  return d;
}

std::vector<std::string> ids(const corpus::Manifest& m) {
  std::vector<std::string> out;
  for (const auto& it : m.items) out.push_back(it.id);
  return out;
}

}  // namespace

TEST(Queue, Build) {
  EXPECT_TRUE(build_queue(corpus::Manifest{}).empty());
  auto m = test::synthetic_manifest(3);
  std::swap(m.items[0], m.items[2]);
  const auto q = build_queue(m);
  ASSERT_EQ(q.size(), 3u);
  EXPECT_EQ(q[0].item.id, "q000");
  EXPECT_EQ(q[2].item.id, "q002");
  for (const auto& t : q) {
    EXPECT_EQ(t.status, Status::pending);
    EXPECT_EQ(t.video_url, "/video/" + t.item.id);
  }
  EXPECT_EQ(build_queue(m), q);
}

TEST(Decision, Validation) {
  const auto base = test::synthetic_manifest(1).items[0];
  EXPECT_NO_THROW(validate(decide("q000", Status::accepted, 1)));
  EXPECT_THROW(validate(decide("q000", Status::pending, 1)), ValidationError);
  EXPECT_THROW(validate(decide("", Status::accepted, 1)), ValidationError);
  auto no_replacement = decide("q000", Status::edited, 1);
  EXPECT_THROW(validate(no_replacement), ValidationError);
  auto stray = edit(base, "Q?", 1);
  stray.action = Status::rejected;
  EXPECT_THROW(validate(stray), ValidationError);
  auto bad = edit(base, "Q?", 1);
  bad.replacement->answer_index = 9;
  EXPECT_THROW(validate(bad), ValidationError);
  auto wrong_id = edit(base, "Q?", 1);
  wrong_id.replacement->id = "other";
  EXPECT_THROW(validate(wrong_id), ValidationError);
}

TEST(Decision, JsonRoundTrip) {
  const auto base = test::synthetic_manifest(1).items[0];
  auto d = edit(base, "Better question?", 90);
  d.note = "typo";
  const auto back = decision_from_json(nlohmann::json::parse(to_json(d).dump()));
  EXPECT_EQ(back, d);
  EXPECT_THROW(decision_from_json(nlohmann::json{{"item_id", "x"}, {"action", "accepted"}}), Error);
  const auto filled = decision_from_json(nlohmann::json{{"item_id", "x"}, {"action", "rejected"}}, at(5));
  EXPECT_EQ(filled.timestamp, at(5));
  EXPECT_THROW(decision_from_json(nlohmann::json{{"item_id", "x"}, {"action", "maybe"}}, at(5)), Error);
}

TEST(Log, AppendOnlyRoundTrip) {
  test::TempDir dir;
  DecisionLog log(dir / "d.log");
  EXPECT_TRUE(log.load().empty());
  log.append(decide("a", Status::accepted, 1));
  log.append(decide("b", Status::rejected, 2));
  const auto first = read_file(dir / "d.log");
  log.append(decide("a", Status::rejected, 3));
  const auto second = read_file(dir / "d.log");
  EXPECT_EQ(second.substr(0, first.size()), first);
  const auto all = log.load();
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[2].action, Status::rejected);
  EXPECT_THROW(log.append(decide("a", Status::pending, 4)), ValidationError);
  EXPECT_EQ(log.load().size(), 3u);
}

TEST(Log, CorruptLineReportsLineNumber) {
  test::TempDir dir;
  write_file_atomic(dir / "d.log", to_json(decide("a", Status::accepted, 1)).dump() + "\n{oops\n");
  try {
    load_decisions(dir / "d.log");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Apply, AllAcceptedIsIdentityPlusProvenance) {
  const auto m = test::synthetic_manifest(3);
  std::vector<ReviewDecision> ds;
  for (const auto& it : m.items) ds.push_back(decide(it.id, Status::accepted, 10));
  const auto r = apply_decisions(m, ds);
  ASSERT_EQ(r.final_manifest.items.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    auto item = r.final_manifest.items[i];
    ASSERT_EQ(item.provenance.size(), m.items[i].provenance.size() + 1);
    EXPECT_EQ(item.provenance.back().stage, corpus::Stage::human_review);
    EXPECT_EQ(item.provenance.back().timestamp, at(10));
    item.provenance.pop_back();
    EXPECT_EQ(item, m.items[i]);
  }
  EXPECT_TRUE(r.pending_ids.empty());
}

TEST(Apply, RejectEditAndPending) {
  const auto m = test::synthetic_manifest(4);
  const auto r = apply_decisions(m, {decide("q000", Status::accepted, 1), decide("q001", Status::rejected, 1),
                                     edit(m.items[2], "Rewritten?", 1)});
  EXPECT_EQ(ids(r.final_manifest), (std::vector<std::string>{"q000", "q002"}));
  EXPECT_EQ(ids(r.working_manifest), (std::vector<std::string>{"q000", "q002", "q003"}));
  EXPECT_EQ(r.pending_ids, std::vector<std::string>{"q003"});
  EXPECT_EQ(r.final_manifest.items[1].question, "Rewritten?");
  EXPECT_EQ(r.final_manifest.items[1].provenance.back().decision, corpus::Decision::modified);
}

TEST(Apply, LatestTimestampWinsAndConflictLogged) {
  const auto m = test::synthetic_manifest(1);
  const auto early = decide("q000", Status::rejected, 100, "alice");
  const auto late = decide("q000", Status::accepted, 200, "bob");
  for (const auto& order : {std::vector{early, late}, std::vector{late, early}}) {
    const auto r = apply_decisions(m, order);
    EXPECT_EQ(ids(r.final_manifest), std::vector<std::string>{"q000"});
    ASSERT_EQ(r.conflicts.size(), 1u);
    EXPECT_EQ(r.conflicts[0].winner.reviewer, "bob");
    EXPECT_EQ(r.conflicts[0].loser.reviewer, "alice");
  }
  // Equal timestamps: the later log entry wins.
  const auto tie = apply_decisions(m, {decide("q000", Status::accepted, 5), decide("q000", Status::rejected, 5)});
  EXPECT_TRUE(tie.final_manifest.items.empty());
  // Agreeing duplicates are not conflicts.
  EXPECT_TRUE(apply_decisions(m, {decide("q000", Status::accepted, 1), decide("q000", Status::accepted, 2)})
                  .conflicts.empty());
}

TEST(Apply, UnknownIdAndIdempotence) {
  const auto m = test::synthetic_manifest(2);
  EXPECT_THROW(apply_decisions(m, {decide("nope", Status::accepted, 1)}), UnknownItemId);
  const std::vector<ReviewDecision> ds{decide("q000", Status::accepted, 1), decide("q001", Status::accepted, 2)};
  const auto once = apply_decisions(m, ds);
  const auto twice = apply_decisions(once.final_manifest, ds);
  EXPECT_EQ(corpus::serialize_manifest(once.final_manifest), corpus::serialize_manifest(twice.final_manifest));
}

TEST(State, FoldsDecisionsOntoQueue) {
  const auto m = test::synthetic_manifest(3);
  const auto q = build_queue(m);
  auto ed = edit(m.items[1], "New?", 3);
  ed.note = "clarified";
  const auto s = current_state(q, {decide("q000", Status::rejected, 1), ed});
  EXPECT_EQ(s[0].status, Status::rejected);
  EXPECT_EQ(s[1].status, Status::edited);
  EXPECT_EQ(s[1].item.question, "New?");
  EXPECT_EQ(s[1].editor_note, "clarified");
  EXPECT_EQ(s[2].status, Status::pending);
}
