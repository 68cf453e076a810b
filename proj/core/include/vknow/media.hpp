#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "vknow/common.hpp"
#include "vknow/gateway.hpp"

namespace vknow::media {

class MediaUnreadable : public Error {
 public:
  using Error::Error;
};

class MissingStream : public Error {
 public:
  MissingStream(const std::string& ref, const std::string& stream)
      : Error(ref + ": no " + stream + " stream"), stream_(stream) {}
  const std::string& stream() const noexcept { return stream_; }

 private:
  std::string stream_;
};

class TooManyFrames : public Error {
 public:
  TooManyFrames(std::size_t requested, std::size_t available)
      : Error("requested " + std::to_string(requested) + " frames but only " + std::to_string(available) +
              " are available"),
        requested_(requested),
        available_(available) {}
  std::size_t requested() const noexcept { return requested_; }
  std::size_t available() const noexcept { return available_; }

 private:
  std::size_t requested_;
  std::size_t available_;
};

struct VideoAsset {
  std::string ref;
  double duration = 0;  // seconds, > 0
  double fps = 0;       // > 0
  int width = 0;
  int height = 0;

  bool operator==(const VideoAsset&) const = default;
};

struct FrameSample {
  std::vector<double> timestamps;  // strictly increasing, within [0, duration]
  std::size_t count = 0;
  std::string resolution_budget;  // opaque, forwarded to model requests

  gateway::FrameAttachment attachment(const std::string& video) const {
    return {video, timestamps, resolution_budget};
  }
};

using TranscriptSegment = gateway::TranscriptSegment;

struct Transcript {
  std::vector<TranscriptSegment> segments;  // ordered, non-overlapping
  std::string full_text;                    // concatenation of segment texts

  bool operator==(const Transcript&) const = default;
};

/// Builds a Transcript from a transcription response, enforcing ordering and
/// the concatenation contract. Overlapping segment starts are clamped to the
/// previous end.
Transcript make_transcript(const gateway::TranscriptionResult& r, double duration = 0);

// ---------------------------------------------------------------------------
// External media toolchain (ffprobe / ffmpeg command-line contract)
// ---------------------------------------------------------------------------

struct CommandResult {
  int exit_code = 0;
  std::string out;
};

using CommandRunner = std::function<CommandResult(const std::vector<std::string>& argv)>;

/// Runs argv through the shell with every argument single-quoted; stdout is
/// captured, stderr discarded.
CommandResult run_command(const std::vector<std::string>& argv);

/// Local filesystem path for a video reference (strips file:// and fragments).
std::filesystem::path local_path(std::string_view ref);

/// Decodes `ffprobe -print_format json -show_streams -show_format` output.
VideoAsset parse_probe_json(const std::string& ref, std::string_view probe_json);

VideoAsset probe_video(const std::string& ref, const CommandRunner& runner = run_command,
                       const std::string& ffprobe = "ffprobe");

/// Memoizing probe front-end. With a cache directory, probe results are kept
/// under <cache_dir>/_probe/ so replayed runs never touch the media files.
class AssetCatalog {
 public:
  AssetCatalog(CommandRunner runner = run_command, std::filesystem::path cache_dir = {},
               gateway::CacheMode mode = gateway::CacheMode::off, std::string ffprobe = "ffprobe");

  VideoAsset get(const std::string& ref);
  void put(const VideoAsset& asset);
  /// Line-delimited {"video", "duration", "fps", "width", "height"} records.
  void load_file(const std::filesystem::path& path);

 private:
  std::filesystem::path entry_path(const std::string& ref) const;

  CommandRunner runner_;
  std::filesystem::path cache_dir_;
  gateway::CacheMode mode_;
  std::string ffprobe_;
  std::mutex mu_;
  std::map<std::string, VideoAsset> known_;
};

/// Uniform midpoint sampling: t_k = (k + 0.5) / n * duration.
FrameSample sample_frames(const VideoAsset& asset, std::size_t n, std::string resolution_budget = {});

/// Extracts the mono 16 kHz audio track into `cache_dir` via ffmpeg.
std::filesystem::path extract_audio(const std::string& ref, const std::filesystem::path& cache_dir,
                                    const CommandRunner& runner = run_command,
                                    const std::string& ffmpeg = "ffmpeg");

gateway::AudioSource audio_source(const std::string& ref, const std::filesystem::path& cache_dir,
                                  CommandRunner runner = run_command, std::string ffmpeg = "ffmpeg");

Transcript transcribe(const VideoAsset& asset, gateway::Gateway& gw, const gateway::EndpointConfig& endpoint,
                      const gateway::AudioSource& audio);

/// Frame resolver that extracts JPEG stills by timestamp with ffmpeg and
/// returns them as base64 data URLs.
gateway::FrameResolver make_ffmpeg_frame_resolver(std::filesystem::path cache_dir,
                                                  CommandRunner runner = run_command,
                                                  std::string ffmpeg = "ffmpeg");

}  // namespace vknow::media
