#include "vknow/rewards.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <regex>
#include <set>

namespace vknow::rewards {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// See-Think-Answer parsing
// ---------------------------------------------------------------------------

namespace {

struct Tags {
  std::string open[3];
  std::string close[3];
};

Tags make_tags(const StaTemplate& t) {
  Tags tags;
  const std::string* names[3] = {&t.see, &t.think, &t.answer};
  for (int i = 0; i < 3; ++i) {
    tags.open[i] = "<" + *names[i] + ">";
    tags.close[i] = "</" + *names[i] + ">";
  }
  return tags;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::size_t skip_space(std::string_view s, std::size_t pos) {
  while (pos < s.size() && is_space(s[pos])) ++pos;
  return pos;
}

bool contains_any_tag(std::string_view body, const Tags& tags) {
  for (int i = 0; i < 3; ++i) {
    if (body.find(tags.open[i]) != std::string_view::npos) return true;
    if (body.find(tags.close[i]) != std::string_view::npos) return true;
  }
  return false;
}

std::string best_effort_section(std::string_view raw, const std::string& open, const std::string& close) {
  const auto start = raw.find(open);
  if (start == std::string_view::npos) return {};
  const auto body = start + open.size();
  const auto end = raw.find(close, body);
  if (end == std::string_view::npos) return {};
  return std::string(raw.substr(body, end - body));
}

}  // namespace

StaResponse parse_sta(std::string_view raw, const StaTemplate& tmpl) {
  const Tags tags = make_tags(tmpl);
  StaResponse r;
  r.raw = std::string(raw);

  std::string sections[3];
  bool ok = true;
  std::size_t pos = 0;
  for (int i = 0; i < 3 && ok; ++i) {
    pos = skip_space(raw, pos);
    if (raw.compare(pos, tags.open[i].size(), tags.open[i]) != 0) {
      ok = false;
      break;
    }
    const std::size_t body = pos + tags.open[i].size();
    const std::size_t end = raw.find(tags.close[i], body);
    if (end == std::string_view::npos) {
      ok = false;
      break;
    }
    const std::string_view content = raw.substr(body, end - body);
    if (contains_any_tag(content, tags) || trim(content).empty()) ok = false;
    sections[i] = std::string(content);
    pos = end + tags.close[i].size();
  }
  if (ok && skip_space(raw, pos) != raw.size()) ok = false;

  if (ok) {
    r.see = std::move(sections[0]);
    r.think = std::move(sections[1]);
    r.answer = std::move(sections[2]);
    r.well_formed = true;
  } else {
    r.see = best_effort_section(raw, tags.open[0], tags.close[0]);
    r.think = best_effort_section(raw, tags.open[1], tags.close[1]);
    r.answer = best_effort_section(raw, tags.open[2], tags.close[2]);
  }
  return r;
}

std::string render_sta(const StaResponse& r, const StaTemplate& tmpl) {
  const Tags tags = make_tags(tmpl);
  return tags.open[0] + r.see + tags.close[0] + "\n" + tags.open[1] + r.think + tags.close[1] + "\n" +
         tags.open[2] + r.answer + tags.close[2];
}

int format_reward(const StaResponse& resp) { return resp.well_formed ? 1 : 0; }

// ---------------------------------------------------------------------------
// Choice extraction
// ---------------------------------------------------------------------------

char option_letter(std::size_t index) { return static_cast<char>('A' + index); }

std::string format_options(const std::vector<std::string>& options) {
  std::string out;
  for (std::size_t i = 0; i < options.size(); ++i) {
    out.push_back(option_letter(i));
    out += ". ";
    out += options[i];
    if (i + 1 < options.size()) out.push_back('\n');
  }
  return out;
}

namespace {

std::optional<std::size_t> letter_index(char c, std::size_t n_options) {
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up < 'A' || up >= static_cast<char>('A' + n_options)) return std::nullopt;
  return static_cast<std::size_t>(up - 'A');
}

std::set<std::size_t> regex_letters(const std::string& text, const std::regex& re, std::size_t n_options) {
  std::set<std::size_t> found;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it) {
    const std::string g = (*it)[1].str();
    if (g.size() == 1) {
      if (auto idx = letter_index(g[0], n_options)) found.insert(*idx);
    }
  }
  return found;
}

const std::regex& answer_is_re() {
  static const std::regex re(R"(answer\s*(?:is)?\s*:?\s*(?:option\s*)?[\(\[]?([a-f])(?![a-z0-9]))",
                             std::regex::icase | std::regex::ECMAScript);
  return re;
}
const std::regex& paren_re() {
  static const std::regex re(R"(\(([a-f])\))", std::regex::icase | std::regex::ECMAScript);
  return re;
}
const std::regex& line_start_re() {
  static const std::regex re(R"((?:^|\n)[ \t*]*([a-f])[\.\):](?![a-z0-9]))",
                             std::regex::icase | std::regex::ECMAScript);
  return re;
}
const std::regex& upper_token_re() {
  static const std::regex re(R"((?:^|[^A-Za-z0-9])([A-F])(?![A-Za-z0-9]))", std::regex::ECMAScript);
  return re;
}

}  // namespace

std::optional<std::size_t> extract_choice(std::string_view text_view, const std::vector<std::string>& options) {
  const std::size_t n = options.size();
  if (n == 0) return std::nullopt;
  const std::string text(text_view);

  // 1. Whole reply is a bare letter.
  {
    std::string_view s = text_view;
    const auto strip = [](char c) {
      return std::isspace(static_cast<unsigned char>(c)) || std::string_view("()[]{}.:*\"'`").find(c) != std::string_view::npos;
    };
    while (!s.empty() && strip(s.front())) s.remove_prefix(1);
    while (!s.empty() && strip(s.back())) s.remove_suffix(1);
    if (s.size() == 1) {
      if (auto idx = letter_index(s[0], n)) return idx;
    }
  }

  // 2-5. Pattern steps.
  for (const std::regex* re : {&answer_is_re(), &paren_re(), &line_start_re(), &upper_token_re()}) {
    const auto found = regex_letters(text, *re, n);
    if (found.size() == 1) return *found.begin();
  }

  // 6. Unique option text containment.
  const std::string lowered = to_lower_ascii(text);
  std::optional<std::size_t> hit;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string opt = to_lower_ascii(normalize_whitespace(options[i]));
    if (opt.empty() || lowered.find(opt) == std::string::npos) continue;
    if (hit) return std::nullopt;
    hit = i;
  }
  return hit;
}

int accuracy_reward(const StaResponse& resp, std::size_t gold_index, const std::vector<std::string>& options) {
  const auto choice = extract_choice(resp.answer, options);
  return choice && *choice == gold_index ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Composite reward and advantages
// ---------------------------------------------------------------------------

void RewardWeights::validate() const {
  if (!std::isfinite(lambda) || lambda < 0) throw Error("lambda must be finite and >= 0");
}

double total_reward(int r_f, int r_a, int r_v, const RewardWeights& w) {
  for (int r : {r_f, r_a, r_v}) {
    if (r != 0 && r != 1) throw Error("reward components must be 0 or 1");
  }
  w.validate();
  return static_cast<double>(r_f) + static_cast<double>(r_a) + w.lambda * static_cast<double>(r_v);
}

std::vector<double> group_advantages(const std::vector<double>& rewards) {
  const std::size_t g = rewards.size();
  if (g < 2) throw GroupTooSmall(g);
  for (double r : rewards) {
    if (!std::isfinite(r)) throw NonFinite("group contains a non-finite reward");
  }
  std::vector<double> adv(g, 0.0);
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo == *hi) return adv;

  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(g);
  double ss = 0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double std_pop = std::sqrt(ss / static_cast<double>(g));
  for (std::size_t i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / (std_pop + kAdvantageEpsilon);
  return adv;
}

// ---------------------------------------------------------------------------
// Visual knowledge reward
// ---------------------------------------------------------------------------

void VerifierConfig::validate() const {
  endpoint.validate();
  if (endpoint.kind != gateway::EndpointKind::chat) {
    throw gateway::ConfigError("the verifier must be a text-only chat endpoint");
  }
}

std::vector<gateway::Message> verifier_messages(const StaResponse& resp, const corpus::QAItem& item,
                                                const VerifierConfig& vcfg) {
  std::string prompt = vcfg.prompt_template;
  prompt = substitute(std::move(prompt), "description", trim(resp.see));
  prompt = substitute(std::move(prompt), "question", item.question);
  prompt = substitute(std::move(prompt), "options", vcfg.include_options ? format_options(item.options) : "");
  return {{"user", std::move(prompt), std::nullopt}};
}

int visual_knowledge_reward(const StaResponse& resp, const corpus::QAItem& item, const VerifierConfig& vcfg,
                            gateway::Gateway& gw) {
  if (trim(resp.see).empty()) return 0;
  std::string reply;
  try {
    reply = gw.chat(vcfg.endpoint, verifier_messages(resp, item, vcfg));
  } catch (const gateway::GatewayError& e) {
    if (!vcfg.lenient) throw;
    spdlog::warn("verifier failed for item {}; scoring r_v = 0: {}", item.id, e.what());
    return 0;
  }
  const auto choice = extract_choice(reply, item.options);
  return choice && *choice == item.answer_index ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Batch scoring
// ---------------------------------------------------------------------------

std::vector<RewardGroup> score_batch(const std::vector<Completion>& completions, const corpus::Manifest& manifest,
                                     const VerifierConfig& vcfg, gateway::Gateway& gw, const ScoringOptions& opts) {
  opts.weights.validate();
  std::map<std::string, const corpus::QAItem*> items;
  for (const auto& item : manifest.items) items.emplace(item.id, &item);

  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < completions.size(); ++i) {
    if (!items.contains(completions[i].item_id)) throw UnknownItem(completions[i].item_id);
    groups[completions[i].group_id].push_back(i);
  }
  for (const auto& [gid, members] : groups) {
    if (members.size() < 2) throw GroupTooSmall(members.size());
  }

  std::vector<RewardRecord> records(completions.size());
  parallel_for(completions.size(), opts.workers, [&](std::size_t i) {
    const auto& c = completions[i];
    const auto& item = *items.at(c.item_id);
    const StaResponse resp = parse_sta(c.raw, opts.tmpl);
    RewardRecord rec;
    rec.item_id = c.item_id;
    rec.r_f = format_reward(resp);
    rec.r_a = accuracy_reward(resp, item.answer_index, item.options);
    rec.r_v = visual_knowledge_reward(resp, item, vcfg, gw);
    rec.lambda = opts.weights.lambda;
    rec.total = total_reward(rec.r_f, rec.r_a, rec.r_v, opts.weights);
    records[i] = std::move(rec);
  });

  std::vector<RewardGroup> out;
  out.reserve(groups.size());
  for (const auto& [gid, members] : groups) {
    RewardGroup g;
    g.group_id = gid;
    std::vector<double> totals;
    for (std::size_t i : members) {
      g.records.push_back(records[i]);
      totals.push_back(records[i].total);
    }
    g.advantages = group_advantages(totals);
    out.push_back(std::move(g));
  }
  return out;
}

json to_json(const RewardRecord& r) {
  return {{"item_id", r.item_id}, {"r_f", r.r_f},       {"r_a", r.r_a},
          {"r_v", r.r_v},         {"lambda", r.lambda}, {"total", r.total}};
}

json to_json(const RewardGroup& g) {
  json records = json::array();
  for (const auto& r : g.records) records.push_back(to_json(r));
  return {{"group_id", g.group_id}, {"records", std::move(records)}, {"advantages", g.advantages}};
}

Completion completion_from_json(const json& j) {
  if (!j.is_object()) throw Error("completion must be a JSON object");
  Completion c;
  c.group_id = j.at("group_id").get<std::string>();
  c.item_id = j.at("item_id").get<std::string>();
  c.raw = j.contains("completion") ? j.at("completion").get<std::string>() : j.at("raw").get<std::string>();
  return c;
}

}  // namespace vknow::rewards
