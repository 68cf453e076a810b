#include "vknow/media.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

namespace vknow::media {

using json = nlohmann::json;

Transcript make_transcript(const gateway::TranscriptionResult& r, double duration) {
  Transcript t;
  if (r.segments.empty()) {
    if (!trim(r.text).empty()) {
      t.segments.push_back({0.0, duration, r.text});
      t.full_text = r.text;
    }
    return t;
  }
  double prev_end = 0;
  for (auto seg : r.segments) {
    if (seg.end < seg.start) std::swap(seg.start, seg.end);
    if (seg.start < prev_end) {
      spdlog::debug("transcript segment at {:.3f}s overlaps previous end {:.3f}s; clamping", seg.start, prev_end);
      seg.start = prev_end;
      seg.end = std::max(seg.end, seg.start);
    }
    prev_end = seg.end;
    t.full_text += seg.text;
    t.segments.push_back(std::move(seg));
  }
  return t;
}

namespace {

std::string shell_quote(const std::string& arg) {
  std::string out = "'";
  for (char c : arg) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out.push_back(c);
    }
  }
  out += "'";
  return out;
}

double parse_rate(const std::string& s) {
  const auto slash = s.find('/');
  try {
    if (slash == std::string::npos) return std::stod(s);
    const double num = std::stod(s.substr(0, slash));
    const double den = std::stod(s.substr(slash + 1));
    return den == 0 ? 0.0 : num / den;
  } catch (const std::exception&) {
    return 0.0;
  }
}

double number_field(const json& j, const char* key) {
  if (!j.contains(key)) return 0.0;
  const auto& v = j.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    try {
      return std::stod(v.get<std::string>());
    } catch (const std::exception&) {
      return 0.0;
    }
  }
  return 0.0;
}

json asset_to_json(const VideoAsset& a) {
  return {{"video", a.ref}, {"duration", a.duration}, {"fps", a.fps}, {"width", a.width}, {"height", a.height}};
}

VideoAsset asset_from_json(const json& j) {
  VideoAsset a{j.at("video").get<std::string>(), j.at("duration").get<double>(), j.at("fps").get<double>(),
               j.value("width", 0), j.value("height", 0)};
  if (!(a.duration > 0) || !(a.fps > 0)) throw MediaUnreadable(a.ref + ": duration and fps must be positive");
  return a;
}

}  // namespace

CommandResult run_command(const std::vector<std::string>& argv) {
  std::string cmd;
  for (const auto& a : argv) {
    if (!cmd.empty()) cmd.push_back(' ');
    cmd += shell_quote(a);
  }
  cmd += " 2>/dev/null";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw Error("cannot spawn: " + argv.front());
  CommandResult r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::filesystem::path local_path(std::string_view ref) {
  constexpr std::string_view kFile = "file://";
  if (ref.substr(0, kFile.size()) == kFile) ref.remove_prefix(kFile.size());
  if (auto hash = ref.find('#'); hash != std::string_view::npos) ref = ref.substr(0, hash);
  return std::filesystem::path(std::string(ref));
}

VideoAsset parse_probe_json(const std::string& ref, std::string_view probe_json) {
  json j;
  try {
    j = json::parse(probe_json);
  } catch (const json::parse_error& e) {
    throw MediaUnreadable(ref + ": unreadable probe output: " + e.what());
  }
  if (!j.is_object() || !j.contains("streams") || !j.at("streams").is_array()) {
    throw MediaUnreadable(ref + ": probe output has no stream list");
  }
  const json* video = nullptr;
  for (const auto& s : j.at("streams")) {
    if (s.value("codec_type", "") == "video") {
      video = &s;
      break;
    }
  }
  if (!video) throw MissingStream(ref, "video");

  VideoAsset a;
  a.ref = ref;
  a.width = video->value("width", 0);
  a.height = video->value("height", 0);
  a.fps = parse_rate(video->value("avg_frame_rate", ""));
  if (!(a.fps > 0)) a.fps = parse_rate(video->value("r_frame_rate", ""));
  a.duration = j.contains("format") ? number_field(j.at("format"), "duration") : 0.0;
  if (!(a.duration > 0)) a.duration = number_field(*video, "duration");
  if (!(a.duration > 0) || !std::isfinite(a.duration)) throw MediaUnreadable(ref + ": no positive duration");
  if (!(a.fps > 0) || !std::isfinite(a.fps)) throw MediaUnreadable(ref + ": no positive frame rate");
  return a;
}

VideoAsset probe_video(const std::string& ref, const CommandRunner& runner, const std::string& ffprobe) {
  const auto path = local_path(ref);
  const auto r = runner({ffprobe, "-v", "error", "-print_format", "json", "-show_streams", "-show_format",
                         path.string()});
  if (r.exit_code != 0) {
    throw MediaUnreadable(ref + ": ffprobe exited with status " + std::to_string(r.exit_code));
  }
  return parse_probe_json(ref, r.out);
}

AssetCatalog::AssetCatalog(CommandRunner runner, std::filesystem::path cache_dir, gateway::CacheMode mode,
                           std::string ffprobe)
    : runner_(std::move(runner)), cache_dir_(std::move(cache_dir)), mode_(mode), ffprobe_(std::move(ffprobe)) {}

std::filesystem::path AssetCatalog::entry_path(const std::string& ref) const {
  return cache_dir_ / "_probe" / (sha256_hex(ref) + ".json");
}

void AssetCatalog::put(const VideoAsset& asset) {
  std::lock_guard lock(mu_);
  known_[asset.ref] = asset;
}

void AssetCatalog::load_file(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      put(asset_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
}

VideoAsset AssetCatalog::get(const std::string& ref) {
  {
    std::lock_guard lock(mu_);
    if (auto it = known_.find(ref); it != known_.end()) return it->second;
  }
  const bool cached = mode_ != gateway::CacheMode::off && !cache_dir_.empty();
  if (cached && std::filesystem::exists(entry_path(ref))) {
    auto a = asset_from_json(json::parse(read_file(entry_path(ref))));
    put(a);
    return a;
  }
  if (mode_ == gateway::CacheMode::replay) throw gateway::ReplayMiss("probe:" + ref);
  auto a = probe_video(ref, runner_, ffprobe_);
  if (cached) write_file_atomic(entry_path(ref), asset_to_json(a).dump() + "\n");
  put(a);
  return a;
}

FrameSample sample_frames(const VideoAsset& asset, std::size_t n, std::string resolution_budget) {
  if (n < 1) throw Error("frame count must be >= 1");
  const auto available = static_cast<std::size_t>(std::floor(asset.duration * asset.fps));
  if (n > available) throw TooManyFrames(n, available);
  FrameSample s;
  s.count = n;
  s.resolution_budget = std::move(resolution_budget);
  s.timestamps.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    s.timestamps.push_back((static_cast<double>(k) + 0.5) / static_cast<double>(n) * asset.duration);
  }
  return s;
}

std::filesystem::path extract_audio(const std::string& ref, const std::filesystem::path& cache_dir,
                                    const CommandRunner& runner, const std::string& ffmpeg) {
  const auto out = cache_dir / "_audio" / (sha256_hex(ref) + ".wav");
  if (std::filesystem::exists(out)) return out;
  std::filesystem::create_directories(out.parent_path());
  const auto r = runner({ffmpeg, "-v", "error", "-y", "-i", local_path(ref).string(), "-vn", "-ac", "1", "-ar",
                         "16000", out.string()});
  if (r.exit_code != 0 || !std::filesystem::exists(out)) {
    throw MediaUnreadable(ref + ": audio extraction failed (ffmpeg status " + std::to_string(r.exit_code) + ")");
  }
  return out;
}

gateway::AudioSource audio_source(const std::string& ref, const std::filesystem::path& cache_dir,
                                  CommandRunner runner, std::string ffmpeg) {
  return {ref, [=] { return extract_audio(ref, cache_dir, runner, ffmpeg); }};
}

Transcript transcribe(const VideoAsset& asset, gateway::Gateway& gw, const gateway::EndpointConfig& endpoint,
                      const gateway::AudioSource& audio) {
  try {
    return make_transcript(gw.transcribe(endpoint, audio), asset.duration);
  } catch (const gateway::GatewayError& e) {
    throw gateway::GatewayError(e.kind(), e.http_status(), "transcribing " + asset.ref + ": " + e.what());
  }
}

gateway::FrameResolver make_ffmpeg_frame_resolver(std::filesystem::path cache_dir, CommandRunner runner,
                                                  std::string ffmpeg) {
  return [cache_dir = std::move(cache_dir), runner = std::move(runner),
          ffmpeg = std::move(ffmpeg)](const gateway::FrameAttachment& frames) {
    std::vector<std::string> urls;
    const auto dir = cache_dir / "_frames" / sha256_hex(frames.video);
    std::filesystem::create_directories(dir);
    for (double t : frames.timestamps) {
      char name[64];
      std::snprintf(name, sizeof name, "%012.6f.jpg", t);
      const auto out = dir / name;
      if (!std::filesystem::exists(out)) {
        char ts[32];
        std::snprintf(ts, sizeof ts, "%.6f", t);
        const auto r = runner({ffmpeg, "-v", "error", "-y", "-ss", ts, "-i", local_path(frames.video).string(),
                               "-frames:v", "1", "-q:v", "2", out.string()});
        if (r.exit_code != 0 || !std::filesystem::exists(out)) {
          throw MediaUnreadable(frames.video + ": frame extraction at " + ts + "s failed");
        }
      }
      urls.push_back("data:image/jpeg;base64," + base64_encode(read_file(out)));
    }
    return urls;
  };
}

}  // namespace vknow::media
