#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "vknow/media.hpp"

using namespace vknow;
using namespace vknow::media;
using vknow::test::TempDir;

namespace {

const char* kProbe10s25fps = R"({
  "streams": [
    {"codec_type": "audio", "sample_rate": "44100"},
    {"codec_type": "video", "width": 1280, "height": 720, "avg_frame_rate": "25/1", "r_frame_rate": "25/1"}
  ],
  "format": {"duration": "10.000000"}
})";

CommandRunner canned(std::string out, int code = 0, int* calls = nullptr) {
  return [=](const std::vector<std::string>&) {
    if (calls) ++*calls;
    return CommandResult{code, out};
  };
}

}  // namespace

TEST(Probe, MetadataPassthrough) {
  const auto a = probe_video("file:///v/clip.mp4", canned(kProbe10s25fps));
  EXPECT_DOUBLE_EQ(a.duration, 10.0);
  EXPECT_DOUBLE_EQ(a.fps, 25.0);
  EXPECT_EQ(a.width, 1280);
  EXPECT_EQ(a.height, 720);
}

TEST(Probe, PassesLocalPathToTool) {
  std::vector<std::string> seen;
  CommandRunner spy = [&](const std::vector<std::string>& argv) {
    seen = argv;
    return CommandResult{0, kProbe10s25fps};
  };
  probe_video("file:///v/my clip.mp4#sha256=ab", spy, "ffprobe");
  ASSERT_FALSE(seen.empty());
  EXPECT_EQ(seen.front(), "ffprobe");
  EXPECT_EQ(seen.back(), "/v/my clip.mp4");
}

TEST(Probe, NtscRateAndStreamDuration) {
  const auto a = parse_probe_json("x", R"({"streams":[{"codec_type":"video","avg_frame_rate":"30000/1001",
                                           "duration":"4.5"}]})");
  EXPECT_NEAR(a.fps, 29.97002997, 1e-6);
  EXPECT_DOUBLE_EQ(a.duration, 4.5);
}

TEST(Probe, AudioOnlyIsMissingStream) {
  try {
    parse_probe_json("a.m4a", R"({"streams":[{"codec_type":"audio"}],"format":{"duration":"3"}})");
    FAIL();
  } catch (const MissingStream& e) {
    EXPECT_EQ(e.stream(), "video");
  }
}

TEST(Probe, CorruptFileIsUnreadable) {
  EXPECT_THROW(probe_video("bad.mp4", canned("", 1)), MediaUnreadable);
  EXPECT_THROW(parse_probe_json("bad.mp4", "garbage"), MediaUnreadable);
  EXPECT_THROW(parse_probe_json("bad.mp4", R"({"streams":[{"codec_type":"video","avg_frame_rate":"0/0"}],
                                              "format":{"duration":"3"}})"),
               MediaUnreadable);
}

TEST(Catalog, MemoizesAndReplays) {
  TempDir dir;
  int calls = 0;
  {
    AssetCatalog cat(canned(kProbe10s25fps, 0, &calls), dir.path(), gateway::CacheMode::record);
    EXPECT_EQ(cat.get("v1.mp4").duration, 10.0);
    EXPECT_EQ(cat.get("v1.mp4").duration, 10.0);
  }
  EXPECT_EQ(calls, 1);
  AssetCatalog replay(canned("", 99, &calls), dir.path(), gateway::CacheMode::replay);
  EXPECT_EQ(replay.get("v1.mp4").fps, 25.0);
  EXPECT_EQ(calls, 1);
  EXPECT_THROW(replay.get("unseen.mp4"), gateway::ReplayMiss);
}

TEST(Catalog, LoadsSidecarFile) {
  TempDir dir;
  write_file_atomic(dir / "assets.jsonl",
                    R"({"video":"a.mp4","duration":12.5,"fps":24,"width":320,"height":240})"
                    "\n"
                    R"({"video":"b.mp4","duration":3,"fps":30})"
                    "\n");
  AssetCatalog cat(canned("", 1));
  cat.load_file(dir / "assets.jsonl");
  EXPECT_EQ(cat.get("a.mp4").duration, 12.5);
  EXPECT_EQ(cat.get("b.mp4").fps, 30.0);
  write_file_atomic(dir / "bad.jsonl", R"({"video":"c.mp4","duration":0,"fps":30})");
  EXPECT_THROW(cat.load_file(dir / "bad.jsonl"), MediaUnreadable);
}

TEST(Frames, Midpoint) {
  const VideoAsset a{"v", 10.0, 25.0, 0, 0};
  EXPECT_EQ(sample_frames(a, 1).timestamps, std::vector<double>{5.0});
  const VideoAsset b{"v", 8.0, 25.0, 0, 0};
  EXPECT_EQ(sample_frames(b, 4).timestamps, (std::vector<double>{1.0, 3.0, 5.0, 7.0}));
}

TEST(Frames, MatchesIndependentFormula) {
  const VideoAsset a{"v", 7.3, 30.0, 0, 0};
  const auto s = sample_frames(a, 5, "256x28x28");
  ASSERT_EQ(s.timestamps.size(), 5u);
  EXPECT_EQ(s.count, 5u);
  EXPECT_EQ(s.resolution_budget, "256x28x28");
  const double step = 7.3 / 5;
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(s.timestamps[k], step / 2 + k * step, 1e-9);
}

TEST(Frames, BoundsProperty) {
  for (double dur : {0.5, 1.0, 3.7, 60.0, 1234.5}) {
    const VideoAsset a{"v", dur, 24.0, 0, 0};
    const auto avail = static_cast<std::size_t>(std::floor(dur * 24.0));
    for (std::size_t n : {std::size_t{1}, std::size_t{2}, std::size_t{8}, std::size_t{32}, avail}) {
      if (n > avail) continue;
      const auto s = sample_frames(a, n);
      ASSERT_EQ(s.timestamps.size(), n);
      EXPECT_GE(s.timestamps.front(), dur / (2.0 * n) - 1e-9);
      EXPECT_LE(s.timestamps.back(), dur - dur / (2.0 * n) + 1e-9);
      for (std::size_t i = 1; i < n; ++i) EXPECT_LT(s.timestamps[i - 1], s.timestamps[i]);
    }
  }
}

TEST(Frames, TooManyFrames) {
  const VideoAsset a{"v", 1.0, 10.0, 0, 0};
  EXPECT_NO_THROW(sample_frames(a, 10));
  try {
    sample_frames(a, 11);
    FAIL();
  } catch (const TooManyFrames& e) {
    EXPECT_EQ(e.requested(), 11u);
    EXPECT_EQ(e.available(), 10u);
  }
  EXPECT_THROW(sample_frames(a, 0), Error);
}

TEST(Transcript, EmptyAudioIsEmptyTranscript) {
  const auto t = make_transcript({"", {}}, 5.0);
  EXPECT_TRUE(t.segments.empty());
  EXPECT_EQ(t.full_text, "");
}

TEST(Transcript, ConcatenatesSegments) {
  const auto t = make_transcript({"ignored", {{0.0, 1.5, "Hello"}, {1.5, 3.0, " world"}}}, 3.0);
  EXPECT_EQ(t.full_text, "Hello world");
  ASSERT_EQ(t.segments.size(), 2u);
}

TEST(Transcript, OverlapsAreClamped) {
  const auto t = make_transcript({"", {{0.0, 2.0, "a"}, {1.0, 3.0, "b"}}}, 3.0);
  EXPECT_DOUBLE_EQ(t.segments[1].start, 2.0);
  for (std::size_t i = 1; i < t.segments.size(); ++i) EXPECT_GE(t.segments[i].start, t.segments[i - 1].end);
}

TEST(Transcript, ReplayIsIdentical) {
  TempDir dir;
  test::MockModels m;
  m.transcribe = [](const std::string&, const std::string&) {
    return nlohmann::json{{"text", "x y"},
                          {"segments", {{{"start", 0.0}, {"end", 1.0}, {"text", "x"}}, {{"start", 1.0}, {"end", 2.0}, {"text", " y"}}}}};
  };
  const auto cfg = test::endpoint("whisper", gateway::EndpointKind::transcription);
  const VideoAsset asset{"clip.mp4", 2.0, 25.0, 0, 0};
  write_file_atomic(dir / "clip.wav", "pcm");
  const gateway::AudioSource src{"clip.mp4", [&] { return dir / "clip.wav"; }};
  Transcript first;
  {
    gateway::Gateway rec(test::scripted_options(std::make_shared<test::ScriptedTransport>(m), dir / "cache",
                                                gateway::CacheMode::record));
    first = transcribe(asset, rec, cfg, src);
  }
  gateway::Gateway rep(test::scripted_options(std::make_shared<test::ForbiddenTransport>(), dir / "cache",
                                              gateway::CacheMode::replay));
  // The extractor must not run under replay.
  const gateway::AudioSource never{"clip.mp4", []() -> std::filesystem::path { throw Error("extract called"); }};
  EXPECT_EQ(transcribe(asset, rep, cfg, never), first);
  EXPECT_EQ(first.full_text, "x y");
}

TEST(Ffmpeg, FrameResolverBuildsDataUrls) {
  TempDir dir;
  int calls = 0;
  CommandRunner fake = [&](const std::vector<std::string>& argv) {
    ++calls;
    write_file_atomic(argv.back(), "JPEG");
    return CommandResult{0, ""};
  };
  auto resolve = make_ffmpeg_frame_resolver(dir.path(), fake);
  const gateway::FrameAttachment att{"file:///v.mp4", {0.5, 1.5}, ""};
  const auto urls = resolve(att);
  ASSERT_EQ(urls.size(), 2u);
  EXPECT_EQ(urls[0], "data:image/jpeg;base64," + base64_encode("JPEG"));
  resolve(att);
  EXPECT_EQ(calls, 2);  // second call served from the frame cache
}

TEST(Ffmpeg, AudioExtractionFailure) {
  TempDir dir;
  EXPECT_THROW(extract_audio("v.mp4", dir.path(), canned("", 1)), MediaUnreadable);
}
